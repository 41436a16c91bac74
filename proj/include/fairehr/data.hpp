#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "json.hpp"

namespace fairehr {

enum class Attribute { kGender, kRace, kEthnicity, kAge, kSes };

inline constexpr std::array<Attribute, 5> kAllAttributes = {
    Attribute::kGender, Attribute::kRace, Attribute::kEthnicity, Attribute::kAge,
    Attribute::kSes};
inline constexpr std::array<Attribute, 4> kCategoricalAttributes = {
    Attribute::kGender, Attribute::kRace, Attribute::kEthnicity, Attribute::kSes};

std::string_view attribute_name(Attribute attribute);
Attribute parse_attribute(std::string_view name);

/// Category ids index into the cohort vocabularies; age is in years.
struct SensitiveAttributes {
  int gender = 0;
  int race = 0;
  int ethnicity = 0;
  int age = 0;
  int ses = 0;

  /// Category id of a categorical attribute (age is rejected).
  int category(Attribute attribute) const;
  void set_category(Attribute attribute, int value);

  friend bool operator==(const SensitiveAttributes &, const SensitiveAttributes &) = default;
};

struct AttributeVocabularies {
  std::vector<std::string> gender;
  std::vector<std::string> race;
  std::vector<std::string> ethnicity;
  std::vector<std::string> ses;

  const std::vector<std::string> &of(Attribute attribute) const;
  std::vector<std::string> &of(Attribute attribute);
  /// Id of `value`, or a schema error.
  int index_of(Attribute attribute, std::string_view value) const;
};

/// Ten-year style age bins: [min, min+w), [min+w, min+2w), ..., with the last
/// bin open-ended and capped (ages above the cap still fall into it).
struct AgeBinning {
  int min_age = 50;
  int width = 10;
  int bins = 5;
  int cap = 100;

  int bin_of(int age) const;
  /// Inclusive integer age range of a bin.
  std::pair<int, int> range(int bin) const;
  std::string label(int bin) const;
};

struct FeatureInfo {
  std::string name;
  std::string unit;
};

struct CohortSchema {
  std::vector<FeatureInfo> features;
  AttributeVocabularies vocabularies;
  int time_steps = 0;
  int note_dim = 0;
  /// Inclusion floor on age, enforced when present.
  std::optional<int> min_age;
  AgeBinning age_bins;
  /// Free-form provenance, e.g. the synthesis spec and bias group.
  nlohmann::json metadata = nlohmann::json::object();

  int feature_count() const { return static_cast<int>(features.size()); }
};

using BoolMatrix = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic>;

struct PatientRecord {
  std::string id;
  SensitiveAttributes s;
  /// T x F; missing entries hold NaN until imputed.
  Eigen::MatrixXd longitudinal;
  /// T x F; true = observed.
  BoolMatrix observed;
  Eigen::VectorXd note_embedding;
  int label = 0;

  bool fully_observed() const { return observed.all(); }
};

enum class Split { kTrain, kTest };

struct Cohort {
  CohortSchema schema;
  std::vector<PatientRecord> records;
  std::map<std::string, Split> split;

  std::size_t size() const { return records.size(); }
  std::vector<std::size_t> indices(Split which) const;
  const PatientRecord &find(const std::string &id) const;
  Split split_of(const std::string &id) const;
  bool has_missing() const;
};

/// Throws on any broken record/cohort invariant.
void validate(const Cohort &cohort);

// ---------------------------------------------------------------------------
// File formats

struct CohortPaths {
  std::filesystem::path demographics; // CSV id,gender,race,ethnicity,age,ses
  std::filesystem::path longitudinal; // JSONL {"id","values","mask"}
  std::filesystem::path notes;        // JSONL {"id","embedding"}
  std::filesystem::path labels;       // CSV id,label

  static CohortPaths in_directory(const std::filesystem::path &dir);
};

/// Joins the four files. Vocabularies are taken in first-appearance order;
/// every record is assigned to the training split until split() is applied.
Cohort load_cohort(const CohortPaths &paths);
void write_cohort_files(const Cohort &cohort, const CohortPaths &paths);

nlohmann::json cohort_to_json(const Cohort &cohort);
Cohort cohort_from_json(const nlohmann::json &doc);
void save_cohort(const Cohort &cohort, const std::filesystem::path &path);
Cohort load_cohort_archive(const std::filesystem::path &path);

/// nlohmann dump with a trailing newline; the canonical byte form of every
/// JSON artifact.
std::string canonical_json(const nlohmann::json &doc);
void write_text(const std::filesystem::path &path, const std::string &text);
std::string read_text(const std::filesystem::path &path);

// ---------------------------------------------------------------------------
// Preprocessing

/// Chained linear-regression imputation over per-time-step feature vectors.
/// Missing entries start at their column mean; each sweep refits, for every
/// feature with missing entries, an intercept + least-squares regression on
/// the other features using rows where that feature is observed.
Cohort impute(const Cohort &cohort, int sweeps = 5);

/// Uniform random train/test assignment: round(n * train_fraction) records
/// go to train.
Cohort split(const Cohort &cohort, double train_fraction, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Synthetic biased cohort

struct CohortSpec {
  int n = 2000;
  int time_steps = 24;
  int features = 4;
  int note_dim = 64;
  AttributeVocabularies vocabularies{{"female", "male"},
                                     {"Black", "White", "Asian", "Other"},
                                     {"Hispanic", "Non-Hispanic"},
                                     {"Medicaid", "Medicare", "Private"}};
  int min_age = 50;
  int max_age = 100;
  /// Attribute whose first vocabulary entry receives the label shift.
  Attribute bias_attribute = Attribute::kRace;
  double bias_strength = 0.8;
  double note_leakage = 0.5;
  /// Positive rate of the reference population at h = 0; the label logit
  /// intercept is logit(base_rate).
  double base_rate = 0.5;
  double severity_weight = 1.5;
  double ar_coefficient = 0.7;
  double coupling = 0.5;
  double noise_sd = 1.0;
  double note_noise_sd = 0.3;
  double missing_rate = 0.02;
  double train_fraction = 0.8;

  void validate() const;
  nlohmann::json to_json() const;
  static CohortSpec from_json(const nlohmann::json &doc);
};

struct SyntheticCohort {
  Cohort cohort;
  /// Latent severity h per record, aligned with cohort.records.
  std::vector<double> severity;
};

/// Generative process per patient: h ~ N(0,1); per-feature AR(1)
/// x_t = rho x_{t-1} + c h + eps; label ~ Bernoulli(sigmoid(a h + b + beta 1[g]));
/// note = P_h h + lambda P_g onehot(g) + noise. Identical spec and seed give a
/// bit-identical cohort.
SyntheticCohort synthesize(const CohortSpec &spec, std::uint64_t seed);
Cohort synthesize_cohort(const CohortSpec &spec, std::uint64_t seed);

} // namespace fairehr
