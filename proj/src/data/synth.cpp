#include <cmath>
#include <limits>

#include "fairehr/data.hpp"
#include "fairehr/error.hpp"
#include "fairehr/random.hpp"

namespace fairehr {

using nlohmann::json;

namespace {

struct FeatureTemplate {
  const char *name;
  const char *unit;
  double baseline;
  double scale;
};

// Postoperative vitals/labs used to give the default features plausible units.
constexpr FeatureTemplate kFeatureTemplates[] = {
    {"heart_rate", "bpm", 80.0, 10.0},
    {"systolic_bp", "mmHg", 120.0, 15.0},
    {"lactate", "mmol/L", 1.5, 0.5},
    {"creatinine", "mg/dL", 1.0, 0.3},
};

FeatureTemplate feature_template(int f) {
  if (f < static_cast<int>(std::size(kFeatureTemplates))) {
    return kFeatureTemplates[f];
  }
  return {nullptr, "", 0.0, 1.0};
}

double logistic(double x) { return 1.0 / (1.0 + std::exp(-x)); }

Eigen::VectorXd unit_vector(Eigen::Index dim, Rng &rng) {
  Eigen::VectorXd v(dim);
  for (Eigen::Index i = 0; i < dim; ++i) {
    v(i) = rng.normal();
  }
  return v / v.norm();
}

} // namespace

void CohortSpec::validate() const {
  auto check = [](bool ok, const std::string &what) { require(ok, ErrorKind::kConfig, what); };
  check(n >= 1, "cohort size n must be >= 1");
  check(time_steps >= 1, "time_steps must be >= 1");
  check(features >= 1, "features must be >= 1");
  check(note_dim >= 1, "note_dim must be >= 1");
  for (const Attribute a : kCategoricalAttributes) {
    check(!vocabularies.of(a).empty(),
          std::string(attribute_name(a)) + " vocabulary must not be empty");
  }
  check(bias_attribute != Attribute::kAge, "bias attribute must be categorical");
  check(min_age >= 0 && max_age >= min_age, "age range invalid");
  check(bias_strength >= 0.0 && bias_strength <= 1.0, "bias_strength must lie in [0, 1]");
  check(note_leakage >= 0.0 && note_leakage <= 1.0, "note_leakage must lie in [0, 1]");
  check(base_rate > 0.0 && base_rate < 1.0, "base_rate must lie in (0, 1)");
  check(ar_coefficient > -1.0 && ar_coefficient < 1.0, "ar_coefficient must lie in (-1, 1)");
  check(noise_sd >= 0.0 && note_noise_sd >= 0.0, "noise scales must be >= 0");
  check(missing_rate >= 0.0 && missing_rate < 1.0, "missing_rate must lie in [0, 1)");
  check(train_fraction > 0.0 && train_fraction < 1.0, "train_fraction must lie in (0, 1)");
}

json CohortSpec::to_json() const {
  json j;
  j["n"] = n;
  j["time_steps"] = time_steps;
  j["features"] = features;
  j["note_dim"] = note_dim;
  for (const Attribute a : kCategoricalAttributes) {
    j["vocabularies"][std::string(attribute_name(a))] = vocabularies.of(a);
  }
  j["min_age"] = min_age;
  j["max_age"] = max_age;
  j["bias_attribute"] = std::string(attribute_name(bias_attribute));
  j["bias_strength"] = bias_strength;
  j["note_leakage"] = note_leakage;
  j["base_rate"] = base_rate;
  j["severity_weight"] = severity_weight;
  j["ar_coefficient"] = ar_coefficient;
  j["coupling"] = coupling;
  j["noise_sd"] = noise_sd;
  j["note_noise_sd"] = note_noise_sd;
  j["missing_rate"] = missing_rate;
  j["train_fraction"] = train_fraction;
  return j;
}

CohortSpec CohortSpec::from_json(const json &doc) {
  CohortSpec spec;
  try {
    spec.n = doc.value("n", spec.n);
    spec.time_steps = doc.value("time_steps", spec.time_steps);
    spec.features = doc.value("features", spec.features);
    spec.note_dim = doc.value("note_dim", spec.note_dim);
    if (doc.contains("vocabularies")) {
      for (const Attribute a : kCategoricalAttributes) {
        const auto key = std::string(attribute_name(a));
        if (doc["vocabularies"].contains(key)) {
          spec.vocabularies.of(a) = doc["vocabularies"][key].get<std::vector<std::string>>();
        }
      }
    }
    spec.min_age = doc.value("min_age", spec.min_age);
    spec.max_age = doc.value("max_age", spec.max_age);
    if (doc.contains("bias_attribute")) {
      spec.bias_attribute = parse_attribute(doc["bias_attribute"].get<std::string>());
    }
    spec.bias_strength = doc.value("bias_strength", spec.bias_strength);
    spec.note_leakage = doc.value("note_leakage", spec.note_leakage);
    spec.base_rate = doc.value("base_rate", spec.base_rate);
    spec.severity_weight = doc.value("severity_weight", spec.severity_weight);
    spec.ar_coefficient = doc.value("ar_coefficient", spec.ar_coefficient);
    spec.coupling = doc.value("coupling", spec.coupling);
    spec.noise_sd = doc.value("noise_sd", spec.noise_sd);
    spec.note_noise_sd = doc.value("note_noise_sd", spec.note_noise_sd);
    spec.missing_rate = doc.value("missing_rate", spec.missing_rate);
    spec.train_fraction = doc.value("train_fraction", spec.train_fraction);
  } catch (const json::exception &e) {
    fail(ErrorKind::kConfig, std::string("cohort spec: ") + e.what());
  }
  spec.validate();
  return spec;
}

SyntheticCohort synthesize(const CohortSpec &spec, std::uint64_t seed) {
  spec.validate();
  // Draw order is part of the reproducibility contract: projections first,
  // then each patient in id order, then the split.
  Rng rng(derive_seed(seed, "cohort"));
  const int group_count = static_cast<int>(spec.vocabularies.of(spec.bias_attribute).size());
  const Eigen::VectorXd severity_direction = unit_vector(spec.note_dim, rng);
  Eigen::MatrixXd group_directions(spec.note_dim, group_count);
  for (int g = 0; g < group_count; ++g) {
    group_directions.col(g) = unit_vector(spec.note_dim, rng);
  }

  SyntheticCohort out;
  Cohort &cohort = out.cohort;
  auto &schema = cohort.schema;
  schema.vocabularies = spec.vocabularies;
  schema.time_steps = spec.time_steps;
  schema.note_dim = spec.note_dim;
  schema.min_age = spec.min_age;
  schema.age_bins.min_age = spec.min_age;
  schema.age_bins.bins = std::max(1, (90 - spec.min_age) / 10 + 1);
  schema.age_bins.cap = spec.max_age;
  for (int f = 0; f < spec.features; ++f) {
    const auto tmpl = feature_template(f);
    schema.features.push_back(
        {tmpl.name ? tmpl.name : "feature_" + std::to_string(f), tmpl.unit});
  }
  const auto &bias_vocab = spec.vocabularies.of(spec.bias_attribute);
  schema.metadata["generator"] = spec.to_json();
  schema.metadata["seed"] = seed;
  schema.metadata["disadvantaged_group"] = {
      {"attribute", std::string(attribute_name(spec.bias_attribute))},
      {"category", bias_vocab.front()}};

  const double intercept = std::log(spec.base_rate / (1.0 - spec.base_rate));
  const double rho = spec.ar_coefficient;
  const double stationary_sd = spec.noise_sd / std::sqrt(1.0 - rho * rho);
  const int width = std::max(4, static_cast<int>(std::to_string(spec.n).size()));

  for (int i = 0; i < spec.n; ++i) {
    PatientRecord r;
    std::string digits = std::to_string(i);
    r.id = "P" + std::string(static_cast<std::size_t>(width) - std::min<std::size_t>(digits.size(), width), '0') + digits;
    for (const Attribute a : kCategoricalAttributes) {
      r.s.set_category(a, static_cast<int>(rng.uniform_int(spec.vocabularies.of(a).size())));
    }
    r.s.age = spec.min_age +
              static_cast<int>(rng.uniform_int(static_cast<std::uint64_t>(spec.max_age - spec.min_age + 1)));
    const double h = rng.normal();
    out.severity.push_back(h);

    r.longitudinal.resize(spec.time_steps, spec.features);
    for (int f = 0; f < spec.features; ++f) {
      const auto tmpl = feature_template(f);
      const double drift = spec.coupling * h;
      double level = drift / (1.0 - rho) + stationary_sd * rng.normal();
      for (int t = 0; t < spec.time_steps; ++t) {
        if (t > 0) {
          level = rho * level + drift + spec.noise_sd * rng.normal();
        }
        r.longitudinal(t, f) = tmpl.baseline + tmpl.scale * level;
      }
    }

    const int group = r.s.category(spec.bias_attribute);
    const double shift = group == 0 ? spec.bias_strength : 0.0;
    r.label = rng.bernoulli(logistic(spec.severity_weight * h + intercept + shift)) ? 1 : 0;

    r.note_embedding = severity_direction * h + spec.note_leakage * group_directions.col(group);
    for (int k = 0; k < spec.note_dim; ++k) {
      r.note_embedding(k) += spec.note_noise_sd * rng.normal();
    }

    r.observed = BoolMatrix::Constant(spec.time_steps, spec.features, true);
    if (spec.missing_rate > 0.0) {
      for (int t = 0; t < spec.time_steps; ++t) {
        for (int f = 0; f < spec.features; ++f) {
          if (rng.bernoulli(spec.missing_rate)) {
            r.observed(t, f) = false;
            r.longitudinal(t, f) = std::numeric_limits<double>::quiet_NaN();
          }
        }
      }
    }
    cohort.split[r.id] = Split::kTrain;
    cohort.records.push_back(std::move(r));
  }
  cohort = split(cohort, spec.train_fraction, seed);
  validate(cohort);
  return out;
}

Cohort synthesize_cohort(const CohortSpec &spec, std::uint64_t seed) {
  return synthesize(spec, seed).cohort;
}

} // namespace fairehr
