#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "fairehr/autodiff/params.hpp"
#include "fairehr/counterpart.hpp"
#include "fairehr/data.hpp"
#include "fairehr/gan.hpp"
#include "fairehr/losses.hpp"
#include "fairehr/metrics.hpp"
#include "fairehr/model.hpp"
#include "json.hpp"

namespace fairehr {

struct TrainConfig {
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  int epochs = 30;
  int batch_size = 64;
  /// Adam with beta1 0.9, beta2 0.999, eps 1e-8 unless overridden.
  ad::AdamConfig optimizer{1e-4, 0.9, 0.999, 1e-8};
  LossConfig loss;
  ModalityFlags modalities;
  bool use_cl = true;
  bool use_dr = true;
  CounterpartPolicies counterparts;
  GanConfig gan;
  ModelConfig model;
  /// Synthetic cohort used when no cohort file is supplied.
  CohortSpec cohort;
  int impute_sweeps = 5;
  double threshold = 0.5;
  std::string output_dir = "out";

  void validate() const;
  nlohmann::json to_json() const;
  /// Missing keys keep their defaults.
  static TrainConfig from_json(const nlohmann::json &doc);
};

struct EpochLoss {
  double total = 0.0;
  double contrastive = 0.0;
  double cross_entropy = 0.0;
};

struct RunResult {
  TrainConfig config;
  std::uint64_t seed = 0;
  std::vector<EpochLoss> epochs;
  FairnessReport report;
  /// Which split `report` was computed on ("test" or "validation").
  std::string evaluated_on = "test";
  /// Kept out of to_json() so results stay bit-reproducible.
  double wall_seconds = 0.0;

  nlohmann::json to_json() const;
};

struct TrainedModel {
  ModelParams params;
  RunResult result;
};

/// Which records a run trains on and evaluates on; both default to the
/// cohort's train and test splits.
struct RunData {
  std::vector<std::size_t> train_rows;
  std::vector<std::size_t> eval_rows;
  std::string eval_name = "test";

  static RunData from_split(const Cohort &cohort);
};

/// Imputed cohort plus the GAN and counterparts built from it for one seed.
struct Prepared {
  std::uint64_t seed = 0;
  Cohort cohort;
  std::optional<TrainedGan> gan;
  CounterpartSet counterparts;
};

/// Synthesize (when `cohort` is null), impute, train the GAN and build
/// counterparts, every stage seeded from `seed`.
Prepared prepare(const TrainConfig &config, std::uint64_t seed, const Cohort *cohort = nullptr);

/// Minibatch Adam on alpha * l_CF + (1 - alpha) * l_CE. Without CL the
/// objective is l_CE on real records plus their counterparts (labelled like
/// their sources) when counterparts are given. Reported metrics use real
/// evaluation records only.
TrainedModel train(const Cohort &cohort, const CounterpartSet *counterparts, const TrainConfig &config,
                   std::uint64_t seed, const TrainedGan *gan = nullptr, const RunData *data = nullptr);

/// P(y = 1) for each row, computed on real records only.
std::vector<double> predict_scores(const ModelParams &params, const Cohort &cohort,
                                   const std::vector<std::size_t> &rows, const ModalityFlags &flags, bool use_dr);
FairnessReport evaluate(const ModelParams &params, const Cohort &cohort, const std::vector<std::size_t> &rows,
                        const ModalityFlags &flags, bool use_dr, double threshold);

// ---------------------------------------------------------------------------
// Experiments

struct Stat {
  double median = 0.0;
  double sd = 0.0; // sample standard deviation, 0 for a single run
};
Stat summarize(std::vector<double> values);

struct CellResult {
  std::string name;
  TrainConfig config;
  std::vector<RunResult> runs; // one per seed, in seed order

  Stat f1() const;
  Stat auroc() const;
  Stat eo() const;
  Stat eddi() const;
  nlohmann::json to_json() const;
};

/// Runs `jobs` on up to `threads` workers; job i writes only slot i.
void run_parallel(std::size_t jobs, int threads, const std::function<void(std::size_t)> &job);

struct ExperimentOptions {
  int threads = 1;
  /// Called after every finished run (for progress output).
  std::function<void(const std::string &cell, const RunResult &)> on_run;
};

/// One prepared data set per seed; each cell trains once per entry.
std::vector<CellResult> run_cells(const std::vector<Prepared> &data,
                                  const std::vector<std::pair<std::string, TrainConfig>> &cells,
                                  const ExperimentOptions &options = {});

/// D, D+L, D+N, D+L+N.
std::vector<std::pair<std::string, TrainConfig>> modality_cells(const TrainConfig &base);
/// "Full w/o CL + DR", "Full w/o CL", "Full w/o DR", "Full".
std::vector<std::pair<std::string, TrainConfig>> component_cells(const TrainConfig &base);
/// One cell per grid value, named "alpha=<value>".
std::vector<std::pair<std::string, TrainConfig>> alpha_cells(const TrainConfig &base, const std::vector<double> &grid);

std::vector<CellResult> ablate_modalities(const std::vector<Prepared> &data, const TrainConfig &base,
                                          const ExperimentOptions &options = {});
std::vector<CellResult> ablate_components(const std::vector<Prepared> &data, const TrainConfig &base,
                                          const ExperimentOptions &options = {});
std::vector<CellResult> alpha_sweep(const std::vector<Prepared> &data, const TrainConfig &base,
                                    const std::vector<double> &grid, const ExperimentOptions &options = {});

/// Median/sd table with F1, AUROC, EO, EDDI in percent, one decimal.
std::string format_cells(const std::vector<CellResult> &cells);
/// alpha,f1_median,f1_sd,eo_median,eo_sd,eddi_median,eddi_sd
std::string alpha_curve_csv(const std::vector<double> &grid, const std::vector<CellResult> &cells);

/// Spearman rank correlation with average ranks for ties.
double spearman(const std::vector<double> &x, const std::vector<double> &y);

struct SearchSpace {
  std::vector<int> batch_sizes{16, 32, 64, 128, 256};
  std::vector<double> learning_rates{1e-5, 5e-5, 1e-6, 5e-6};
  std::vector<int> epochs{20, 30, 50};
  std::vector<double> taus{0.1, 0.3, 0.5, 0.7};
  std::vector<double> alphas{0.3, 0.4, 0.5, 0.6, 0.7};
  /// Empty unless the extended space is requested.
  std::vector<double> gammas;

  void validate() const;
  nlohmann::json to_json() const;
  static SearchSpace from_json(const nlohmann::json &doc);
  static SearchSpace extended();
};

struct SearchDraw {
  int batch_size = 0;
  double learning_rate = 0.0;
  int epochs = 0;
  double tau = 0.0;
  double alpha = 0.0;
  std::optional<double> gamma;

  TrainConfig apply(TrainConfig base) const;
  nlohmann::json to_json() const;
  friend bool operator==(const SearchDraw &, const SearchDraw &) = default;
};

/// Uniform independent draws per dimension.
std::vector<SearchDraw> draw_search(const SearchSpace &space, int trials, std::uint64_t seed);

struct SearchResult {
  std::vector<SearchDraw> draws;
  std::vector<RunResult> trials; // evaluated on the validation split
  std::size_t best = 0;
  nlohmann::json to_json() const;
};

/// Carves 10% of the training split off for validation; selects by
/// validation F1, ties broken by lower absolute EDDI.
SearchResult random_search(const Prepared &data, const TrainConfig &base, const SearchSpace &space, int trials,
                           std::uint64_t seed, const ExperimentOptions &options = {});

/// CSV: id, one column per sensitive attribute (subgroup id, age as bin),
/// then e_adj coordinates e0..e{d-1}.
void dump_embeddings(const ModelParams &params, const Cohort &cohort, const std::vector<std::size_t> &rows,
                     const ModalityFlags &flags, bool use_dr, const std::filesystem::path &path);

struct EmbeddingTable {
  std::vector<std::string> ids;
  std::vector<std::array<int, 5>> groups;
  Eigen::MatrixXd values;
};
EmbeddingTable load_embeddings(const std::filesystem::path &path);

/// Model checkpoint plus the run's resolved config.
void save_model(const TrainedModel &model, const std::filesystem::path &path);
TrainedModel load_model(const std::filesystem::path &path);

} // namespace fairehr
