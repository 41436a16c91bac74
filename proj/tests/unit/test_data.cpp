#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <limits>

#include "fairehr/data.hpp"
#include "fairehr/error.hpp"

namespace fairehr {
namespace {

namespace fs = std::filesystem;

const fs::path kFixtures = FAIREHR_FIXTURE_DIR;

fs::path scratch_dir(const std::string &name) {
  const fs::path dir = fs::temp_directory_path() / ("fairehr_test_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ErrorKind kind_of(const std::function<void()> &fn, std::string *message = nullptr) {
  try {
    fn();
  } catch (const Error &e) {
    if (message) {
      *message = e.what();
    }
    return e.kind();
  }
  ADD_FAILURE() << "no error raised";
  return ErrorKind::kContract;
}

/// One-feature-pair cohort where each record holds a single time step.
Cohort two_feature_cohort(const std::vector<std::pair<double, double>> &rows) {
  Cohort c;
  c.schema.features = {{"f1", ""}, {"f2", ""}};
  c.schema.vocabularies = {{"a"}, {"a"}, {"a"}, {"a"}};
  c.schema.time_steps = 1;
  c.schema.note_dim = 1;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    PatientRecord r;
    r.id = "R" + std::to_string(i);
    r.s.age = 60;
    r.longitudinal.resize(1, 2);
    r.longitudinal << rows[i].first, rows[i].second;
    r.observed = r.longitudinal.array().isFinite();
    r.note_embedding = Eigen::VectorXd::Zero(1);
    c.split[r.id] = Split::kTrain;
    c.records.push_back(std::move(r));
  }
  return c;
}

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

TEST(LoadCohort, ThreePatientFixture) {
  const Cohort c = load_cohort(CohortPaths::in_directory(kFixtures / "three_patients"));
  ASSERT_EQ(c.size(), 3u);
  EXPECT_EQ(c.schema.time_steps, 3);
  EXPECT_EQ(c.schema.feature_count(), 2);
  EXPECT_EQ(c.schema.note_dim, 3);
  const auto &a2 = c.find("A02");
  EXPECT_EQ(c.schema.vocabularies.race[a2.s.race], "Black");
  EXPECT_EQ(a2.s.age, 67);
  EXPECT_EQ(a2.label, 1);
  EXPECT_DOUBLE_EQ(a2.longitudinal(1, 0), 97.25);
  const auto &a1 = c.find("A01");
  EXPECT_FALSE(a1.observed(1, 1));
  EXPECT_TRUE(std::isnan(a1.longitudinal(1, 1)));
  EXPECT_TRUE(c.has_missing());
  EXPECT_EQ(c.indices(Split::kTrain).size(), 3u);
}

TEST(LoadCohort, MissingLabelNamesOrphan) {
  std::string msg;
  EXPECT_EQ(kind_of([] { load_cohort(CohortPaths::in_directory(kFixtures / "missing_label")); }, &msg),
            ErrorKind::kIngestion);
  EXPECT_NE(msg.find("A02"), std::string::npos) << msg;
}

TEST(LoadCohort, WrongNoteLengthCitesRow) {
  std::string msg;
  EXPECT_EQ(kind_of([] { load_cohort(CohortPaths::in_directory(kFixtures / "bad_note")); }, &msg),
            ErrorKind::kSchema);
  EXPECT_NE(msg.find("row 2"), std::string::npos) << msg;
}

TEST(LoadCohort, MalformedRowCitesLine) {
  const auto dir = scratch_dir("malformed");
  for (const auto &entry : fs::directory_iterator(kFixtures / "three_patients")) {
    fs::copy_file(entry.path(), dir / entry.path().filename());
  }
  write_text(dir / "demographics.csv",
             "id,gender,race,ethnicity,age,ses\nA01,female,White,Non-Hispanic,55,Private\n"
             "A02,male,Black,Hispanic,sixty,Medicaid\n");
  std::string msg;
  EXPECT_EQ(kind_of([&] { load_cohort(CohortPaths::in_directory(dir)); }, &msg), ErrorKind::kParse);
  EXPECT_NE(msg.find("line 3"), std::string::npos) << msg;
}

TEST(LoadCohort, SerializationRoundTripsByteIdentically) {
  const auto src = kFixtures / "three_patients";
  const Cohort c = load_cohort(CohortPaths::in_directory(src));
  const auto dir = scratch_dir("roundtrip");
  write_cohort_files(c, CohortPaths::in_directory(dir));
  for (const char *name : {"demographics.csv", "labels.csv", "longitudinal.jsonl", "notes.jsonl"}) {
    EXPECT_EQ(read_text(dir / name), read_text(src / name)) << name;
  }
}

TEST(CohortArchive, RoundTripsByteIdentically) {
  CohortSpec spec;
  spec.n = 40;
  spec.time_steps = 5;
  spec.note_dim = 6;
  spec.missing_rate = 0.1;
  const Cohort c = synthesize_cohort(spec, 17);
  const auto dir = scratch_dir("archive");
  save_cohort(c, dir / "a.json");
  const Cohort back = load_cohort_archive(dir / "a.json");
  save_cohort(back, dir / "b.json");
  EXPECT_EQ(read_text(dir / "a.json"), read_text(dir / "b.json"));
  ASSERT_EQ(back.size(), c.size());
  for (std::size_t i = 0; i < c.size(); ++i) {
    EXPECT_EQ(back.records[i].s, c.records[i].s);
    EXPECT_TRUE((back.records[i].observed == c.records[i].observed).all());
    EXPECT_EQ(back.split.at(c.records[i].id), c.split.at(c.records[i].id));
  }
}

TEST(Impute, NoMissingValuesIsIdentity) {
  const Cohort c = two_feature_cohort({{1, 2}, {3, 5}, {4, 4}});
  const Cohort out = impute(c);
  for (std::size_t i = 0; i < c.size(); ++i) {
    EXPECT_EQ(out.records[i].longitudinal, c.records[i].longitudinal);
  }
}

TEST(Impute, RecoversExactLinearRelation) {
  const Cohort c = two_feature_cohort({{1, 2}, {2, 4}, {3, kNaN}, {5, 10}, {-1, -2}});
  for (const int sweeps : {2, 5}) {
    const Cohort out = impute(c, sweeps);
    EXPECT_NEAR(out.records[2].longitudinal(0, 1), 6.0, 1e-6);
    EXPECT_FALSE(out.records[2].observed(0, 1)) << "mask keeps provenance";
    EXPECT_FALSE(out.has_missing());
  }
}

TEST(Impute, ZeroSweepsGivesColumnMean) {
  const Cohort c = two_feature_cohort({{1, 2}, {2, 7}, {3, kNaN}, {5, 10}});
  const Cohort out = impute(c, 0);
  EXPECT_DOUBLE_EQ(out.records[2].longitudinal(0, 1), (2.0 + 7.0 + 10.0) / 3.0);
}

TEST(Impute, FullyMissingFeatureNamed) {
  const Cohort c = two_feature_cohort({{1, kNaN}, {2, kNaN}});
  std::string msg;
  EXPECT_EQ(kind_of([&] { impute(c); }, &msg), ErrorKind::kImputation);
  EXPECT_NE(msg.find("f2"), std::string::npos) << msg;
}

TEST(Impute, ObservedValuesUntouchedProperty) {
  CohortSpec spec;
  spec.n = 200;
  spec.time_steps = 6;
  spec.missing_rate = 0.3;
  const Cohort c = synthesize_cohort(spec, 4);
  const Cohort out = impute(c);
  for (std::size_t i = 0; i < c.size(); ++i) {
    const auto &a = c.records[i];
    const auto &b = out.records[i];
    EXPECT_TRUE(b.longitudinal.allFinite());
    for (Eigen::Index t = 0; t < a.longitudinal.rows(); ++t) {
      for (Eigen::Index f = 0; f < a.longitudinal.cols(); ++f) {
        if (a.observed(t, f)) {
          // bit-exact, not approximate
          EXPECT_EQ(std::memcmp(&a.longitudinal(t, f), &b.longitudinal(t, f), sizeof(double)), 0);
        }
      }
    }
  }
}

TEST(Split, ProportionsAndDeterminism) {
  const Cohort ten = two_feature_cohort(std::vector<std::pair<double, double>>(10, {1, 1}));
  const Cohort s = split(ten, 0.8, 3);
  EXPECT_EQ(s.indices(Split::kTrain).size(), 8u);
  EXPECT_EQ(s.indices(Split::kTest).size(), 2u);
  EXPECT_EQ(split(ten, 0.8, 3).split, s.split);
  const Cohort two = two_feature_cohort({{1, 1}, {2, 2}});
  const Cohort h = split(two, 0.5, 9);
  EXPECT_EQ(h.indices(Split::kTrain).size(), 1u);
  EXPECT_EQ(h.indices(Split::kTest).size(), 1u);
}

TEST(Split, WithinOneRecordOfTarget) {
  for (int n = 1; n <= 40; n += 3) {
    const Cohort c = two_feature_cohort(std::vector<std::pair<double, double>>(n, {1, 1}));
    for (const double f : {0.1, 0.33, 0.8}) {
      const double train = static_cast<double>(split(c, f, 1).indices(Split::kTrain).size());
      EXPECT_LE(std::abs(train - f * n), 1.0);
    }
  }
}

double group_rate_gap(const Cohort &c, Attribute attribute) {
  double pos0 = 0, n0 = 0, pos1 = 0, n1 = 0;
  for (const auto &r : c.records) {
    if (r.s.category(attribute) == 0) {
      pos0 += r.label;
      n0 += 1;
    } else {
      pos1 += r.label;
      n1 += 1;
    }
  }
  return pos0 / n0 - pos1 / n1;
}

TEST(Synthesize, NoBiasGivesChanceLevelGap) {
  CohortSpec spec;
  spec.n = 5000;
  spec.time_steps = 4;
  spec.bias_strength = 0.0;
  spec.note_leakage = 0.0;
  for (const std::uint64_t seed : {1u, 2u, 3u}) {
    EXPECT_LT(std::abs(group_rate_gap(synthesize_cohort(spec, seed), Attribute::kRace)), 0.03);
  }
}

TEST(Synthesize, FullBiasRaisesDisadvantagedRate) {
  CohortSpec spec;
  spec.n = 5000;
  spec.time_steps = 4;
  spec.bias_strength = 1.0;
  for (const std::uint64_t seed : {1u, 2u, 3u}) {
    EXPECT_GT(group_rate_gap(synthesize_cohort(spec, seed), Attribute::kRace), 0.10);
  }
}

TEST(Synthesize, SameSeedIsByteIdentical) {
  CohortSpec spec;
  spec.n = 50;
  const auto a = canonical_json(cohort_to_json(synthesize_cohort(spec, 11)));
  const auto b = canonical_json(cohort_to_json(synthesize_cohort(spec, 11)));
  const auto c = canonical_json(cohort_to_json(synthesize_cohort(spec, 12)));
  EXPECT_EQ(a, b);
  EXPECT_NE(a, c);
}

TEST(Synthesize, SeverityCouplesToLongitudinalLevel) {
  CohortSpec spec;
  spec.n = 1000;
  spec.missing_rate = 0.0;
  const auto syn = synthesize(spec, 5);
  std::vector<double> level;
  for (const auto &r : syn.cohort.records) {
    double sum = 0.0;
    for (Eigen::Index f = 0; f < r.longitudinal.cols(); ++f) {
      sum += r.longitudinal.col(f).mean();
    }
    level.push_back(sum);
  }
  const Eigen::Map<const Eigen::VectorXd> h(syn.severity.data(), static_cast<Eigen::Index>(syn.severity.size()));
  const Eigen::Map<const Eigen::VectorXd> m(level.data(), static_cast<Eigen::Index>(level.size()));
  const Eigen::VectorXd hc = h.array() - h.mean();
  const Eigen::VectorXd mc = m.array() - m.mean();
  EXPECT_GT(hc.dot(mc) / (hc.norm() * mc.norm()), 0.5);
}

TEST(Synthesize, InvalidSpecIsConfigError) {
  CohortSpec spec;
  spec.bias_strength = 1.5;
  EXPECT_EQ(kind_of([&] { synthesize_cohort(spec, 1); }), ErrorKind::kConfig);
  spec = CohortSpec{};
  spec.note_leakage = -0.1;
  EXPECT_EQ(kind_of([&] { synthesize_cohort(spec, 1); }), ErrorKind::kConfig);
}

TEST(Synthesize, RespectsDeclaredAgeFloorAndVocabularies) {
  CohortSpec spec;
  spec.n = 300;
  const Cohort c = synthesize_cohort(spec, 2);
  ASSERT_TRUE(c.schema.min_age.has_value());
  for (const auto &r : c.records) {
    EXPECT_GE(r.s.age, 50);
    EXPECT_LE(r.s.age, 100);
  }
  EXPECT_EQ(c.schema.metadata["disadvantaged_group"]["category"], "Black");
}

TEST(AgeBinning, TenYearBinsWithTerminalBin) {
  const AgeBinning bins;
  EXPECT_EQ(bins.bin_of(50), 0);
  EXPECT_EQ(bins.bin_of(59), 0);
  EXPECT_EQ(bins.bin_of(60), 1);
  EXPECT_EQ(bins.bin_of(95), 4);
  EXPECT_EQ(bins.bin_of(120), 4);
  EXPECT_EQ(bins.range(4), std::make_pair(90, 100));
  EXPECT_EQ(kind_of([&] { bins.bin_of(49); }), ErrorKind::kDomain);
}

} // namespace
} // namespace fairehr
