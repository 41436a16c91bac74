#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fairehr/data.hpp"
#include "fairehr/gan.hpp"
#include "fairehr/random.hpp"
#include "json.hpp"

namespace fairehr {

struct CategoricalDraw {
  std::string value;
  /// Set when no other category was available and the value is unchanged.
  bool flagged = false;
};

/// Uniform over vocabulary minus {value} minus `excluded`.
CategoricalDraw resample_categorical(const std::string &value, const std::vector<std::string> &vocabulary,
                                     Rng &rng, const std::vector<std::string> &excluded = {});

/// Uniform integer age inside a uniformly chosen bin other than the source's.
int resample_age(int age, const AgeBinning &bins, Rng &rng);

struct NotePolicy {
  enum class Kind { kIdentity, kJitter };
  Kind kind = Kind::kIdentity;
  double sigma = 0.0;

  static NotePolicy identity() { return {}; }
  static NotePolicy jitter(double sigma) { return {Kind::kJitter, sigma}; }
};

Eigen::VectorXd counterpart_note(const Eigen::VectorXd &note, const NotePolicy &policy, Rng &rng);

struct CounterpartPolicies {
  NotePolicy note;
  /// Categories never assigned to a counterpart, per attribute name.
  std::map<std::string, std::vector<std::string>> excluded;
  /// Rebuild counterparts every epoch with an epoch-derived seed.
  bool resample_each_epoch = false;

  void validate() const;
  nlohmann::json to_json() const;
  static CounterpartPolicies from_json(const nlohmann::json &doc);
};

struct CounterpartRecord {
  std::string source_id;
  SensitiveAttributes s_syn;
  Eigen::MatrixXd longitudinal_syn;
  Eigen::VectorXd note_embedding_syn;
  /// Some categorical attribute could not be changed (single-entry vocabulary
  /// after exclusions).
  bool flagged = false;
};

using CounterpartSet = std::map<std::string, CounterpartRecord>;

/// One counterpart per requested training record (all training records when
/// `ids` is empty). Each record draws from derive_seed(seed, id), so the
/// result does not depend on order or threading. Throws a pipeline error when
/// the GAN is missing or failed its gate, and a contract error for test ids.
CounterpartSet build_counterparts(const Cohort &cohort, const TrainedGan *gan,
                                  const CounterpartPolicies &policies, std::uint64_t seed,
                                  const std::vector<std::string> &ids = {});

/// Human-readable descriptions of every broken counterpart invariant.
std::vector<std::string> counterpart_violations(const Cohort &cohort, const CounterpartSet &counterparts);

/// JSON lines: {"source_id", "gender", "race", "ethnicity", "age", "ses",
/// "values", "mask", "embedding", "flagged"}.
void save_counterparts(const CounterpartSet &counterparts, const CohortSchema &schema,
                       const std::filesystem::path &path);
CounterpartSet load_counterparts(const std::filesystem::path &path, const CohortSchema &schema);

} // namespace fairehr
