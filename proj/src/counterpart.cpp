#include "fairehr/counterpart.hpp"

#include <algorithm>
#include <sstream>

#include "fairehr/error.hpp"

namespace fairehr {

using nlohmann::json;

CategoricalDraw resample_categorical(const std::string &value, const std::vector<std::string> &vocabulary,
                                     Rng &rng, const std::vector<std::string> &excluded) {
  require(!vocabulary.empty(), ErrorKind::kSchema, "resample_categorical: empty vocabulary");
  std::vector<const std::string *> candidates;
  for (const auto &v : vocabulary) {
    if (v != value && std::find(excluded.begin(), excluded.end(), v) == excluded.end()) {
      candidates.push_back(&v);
    }
  }
  if (candidates.empty()) {
    return {value, true};
  }
  return {*candidates[static_cast<std::size_t>(rng.uniform_int(candidates.size()))], false};
}

int resample_age(int age, const AgeBinning &bins, Rng &rng) {
  const int source = bins.bin_of(age);
  require(bins.bins >= 2, ErrorKind::kSchema, "resample_age: need at least two age bins");
  int target = static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(bins.bins - 1)));
  if (target >= source) {
    ++target;
  }
  const auto [lo, hi] = bins.range(target);
  return lo + static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(hi - lo + 1)));
}

Eigen::VectorXd counterpart_note(const Eigen::VectorXd &note, const NotePolicy &policy, Rng &rng) {
  if (policy.kind == NotePolicy::Kind::kIdentity) {
    return note;
  }
  require(policy.sigma >= 0, ErrorKind::kConfig, "jitter sigma must be >= 0");
  Eigen::VectorXd out = note;
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    out(i) += policy.sigma * rng.normal();
  }
  return out;
}

void CounterpartPolicies::validate() const {
  require(note.kind == NotePolicy::Kind::kIdentity || note.sigma >= 0, ErrorKind::kConfig,
          "jitter sigma must be >= 0");
  for (const auto &[name, values] : excluded) {
    require(parse_attribute(name) != Attribute::kAge, ErrorKind::kConfig,
            "age has no categories to exclude");
  }
}

json CounterpartPolicies::to_json() const {
  json j;
  j["note"] = note.kind == NotePolicy::Kind::kIdentity
                  ? json{{"policy", "identity"}}
                  : json{{"policy", "jitter"}, {"sigma", note.sigma}};
  j["excluded"] = excluded;
  j["resample_each_epoch"] = resample_each_epoch;
  return j;
}

CounterpartPolicies CounterpartPolicies::from_json(const json &doc) {
  CounterpartPolicies p;
  try {
    if (doc.contains("note")) {
      const auto kind = doc["note"].value("policy", "identity");
      if (kind == "jitter") {
        p.note = NotePolicy::jitter(doc["note"].value("sigma", 0.0));
      } else {
        require(kind == "identity", ErrorKind::kConfig, "unknown note policy '" + kind + "'");
      }
    }
    if (doc.contains("excluded")) {
      p.excluded = doc["excluded"].get<std::map<std::string, std::vector<std::string>>>();
    }
    p.resample_each_epoch = doc.value("resample_each_epoch", false);
  } catch (const json::exception &e) {
    fail(ErrorKind::kConfig, std::string("counterpart policies: ") + e.what());
  }
  p.validate();
  return p;
}

CounterpartSet build_counterparts(const Cohort &cohort, const TrainedGan *gan,
                                  const CounterpartPolicies &policies, std::uint64_t seed,
                                  const std::vector<std::string> &ids) {
  require(gan != nullptr, ErrorKind::kPipeline, "build_counterparts: no trained GAN; run train-gan first");
  require(gan->gate.passed, ErrorKind::kPipeline,
          "build_counterparts: GAN failed its MMD gate (" + std::to_string(gan->gate.mmd) + " > " +
              std::to_string(gan->gate.threshold) + ")");
  policies.validate();
  const auto &schema = cohort.schema;
  require(gan->params.time_steps == schema.time_steps && gan->params.features == schema.feature_count(),
          ErrorKind::kDimension, "build_counterparts: GAN shape does not match the cohort");

  std::vector<std::string> wanted = ids;
  if (wanted.empty()) {
    for (const std::size_t i : cohort.indices(Split::kTrain)) {
      wanted.push_back(cohort.records[i].id);
    }
  }
  CounterpartSet out;
  for (const auto &id : wanted) {
    require(cohort.split_of(id) == Split::kTrain, ErrorKind::kContract,
            "build_counterparts: '" + id + "' is a test record; counterparts exist only for training records");
    const PatientRecord &r = cohort.find(id);
    require(r.longitudinal.allFinite(), ErrorKind::kPipeline,
            "build_counterparts: record '" + id + "' has missing values; impute first");
    Rng rng(derive_seed(seed, id));
    CounterpartRecord c;
    c.source_id = id;
    c.s_syn = r.s;
    for (const Attribute a : kCategoricalAttributes) {
      const auto &vocab = schema.vocabularies.of(a);
      const auto name = std::string(attribute_name(a));
      const auto ex = policies.excluded.find(name);
      const auto draw = resample_categorical(vocab[static_cast<std::size_t>(r.s.category(a))], vocab, rng,
                                             ex == policies.excluded.end() ? std::vector<std::string>{} : ex->second);
      c.s_syn.set_category(a, schema.vocabularies.index_of(a, draw.value));
      c.flagged = c.flagged || draw.flagged;
    }
    c.s_syn.age = resample_age(r.s.age, schema.age_bins, rng);
    c.longitudinal_syn = gan_reconstruct(gan->params, r.longitudinal, rng);
    c.note_embedding_syn = counterpart_note(r.note_embedding, policies.note, rng);
    out.emplace(id, std::move(c));
  }
  return out;
}

std::vector<std::string> counterpart_violations(const Cohort &cohort, const CounterpartSet &counterparts) {
  std::vector<std::string> problems;
  const auto &schema = cohort.schema;
  for (const auto &[id, c] : counterparts) {
    if (c.source_id != id) {
      problems.push_back(id + ": keyed under a different source id '" + c.source_id + "'");
      continue;
    }
    if (cohort.split_of(id) != Split::kTrain) {
      problems.push_back(id + ": counterpart of a test record");
    }
    const PatientRecord &r = cohort.find(id);
    for (const Attribute a : kCategoricalAttributes) {
      if (schema.vocabularies.of(a).size() >= 2 && c.s_syn.category(a) == r.s.category(a)) {
        problems.push_back(id + ": " + std::string(attribute_name(a)) + " unchanged");
      }
    }
    if (schema.age_bins.bin_of(c.s_syn.age) == schema.age_bins.bin_of(r.s.age)) {
      problems.push_back(id + ": age bin unchanged");
    }
    if (c.longitudinal_syn.rows() != r.longitudinal.rows() || c.longitudinal_syn.cols() != r.longitudinal.cols()) {
      problems.push_back(id + ": longitudinal shape differs");
    }
    if (c.note_embedding_syn.size() != r.note_embedding.size()) {
      problems.push_back(id + ": note dimension differs");
    }
  }
  return problems;
}

void save_counterparts(const CounterpartSet &counterparts, const CohortSchema &schema,
                       const std::filesystem::path &path) {
  std::string text;
  for (const auto &[id, c] : counterparts) {
    json j;
    j["source_id"] = id;
    for (const Attribute a : kCategoricalAttributes) {
      j[std::string(attribute_name(a))] = schema.vocabularies.of(a)[static_cast<std::size_t>(c.s_syn.category(a))];
    }
    j["age"] = c.s_syn.age;
    json values = json::array();
    json mask = json::array();
    for (Eigen::Index t = 0; t < c.longitudinal_syn.rows(); ++t) {
      json row = json::array();
      json mrow = json::array();
      for (Eigen::Index f = 0; f < c.longitudinal_syn.cols(); ++f) {
        row.push_back(c.longitudinal_syn(t, f));
        mrow.push_back(true);
      }
      values.push_back(std::move(row));
      mask.push_back(std::move(mrow));
    }
    j["values"] = std::move(values);
    j["mask"] = std::move(mask);
    j["embedding"] = std::vector<double>(c.note_embedding_syn.data(),
                                         c.note_embedding_syn.data() + c.note_embedding_syn.size());
    j["flagged"] = c.flagged;
    text += j.dump() + "\n";
  }
  write_text(path, text);
}

CounterpartSet load_counterparts(const std::filesystem::path &path, const CohortSchema &schema) {
  std::istringstream in(read_text(path));
  std::string line;
  CounterpartSet out;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (line.empty()) {
      continue;
    }
    const std::string ctx = path.filename().string() + " line " + std::to_string(number);
    try {
      const json j = json::parse(line);
      CounterpartRecord c;
      c.source_id = j.at("source_id").get<std::string>();
      for (const Attribute a : kCategoricalAttributes) {
        c.s_syn.set_category(a, schema.vocabularies.index_of(a, j.at(std::string(attribute_name(a))).get<std::string>()));
      }
      c.s_syn.age = j.at("age").get<int>();
      const auto values = j.at("values").get<std::vector<std::vector<double>>>();
      require(static_cast<int>(values.size()) == schema.time_steps, ErrorKind::kSchema, ctx + ": wrong number of time steps");
      c.longitudinal_syn.resize(schema.time_steps, schema.feature_count());
      for (int t = 0; t < schema.time_steps; ++t) {
        require(static_cast<int>(values[static_cast<std::size_t>(t)].size()) == schema.feature_count(),
                ErrorKind::kSchema, ctx + ": wrong feature count");
        for (int f = 0; f < schema.feature_count(); ++f) {
          c.longitudinal_syn(t, f) = values[static_cast<std::size_t>(t)][static_cast<std::size_t>(f)];
        }
      }
      const auto emb = j.at("embedding").get<std::vector<double>>();
      require(static_cast<int>(emb.size()) == schema.note_dim, ErrorKind::kSchema, ctx + ": wrong note dimension");
      c.note_embedding_syn = Eigen::Map<const Eigen::VectorXd>(emb.data(), static_cast<Eigen::Index>(emb.size()));
      c.flagged = j.value("flagged", false);
      const std::string key = c.source_id;
      require(out.emplace(key, std::move(c)).second, ErrorKind::kIngestion, ctx + ": duplicate source id '" + key + "'");
    } catch (const json::exception &e) {
      fail(ErrorKind::kParse, ctx + ": " + e.what());
    }
  }
  return out;
}

} // namespace fairehr
