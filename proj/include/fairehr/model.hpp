#pragma once

#include <Eigen/Dense>

#include <array>
#include <vector>

#include "fairehr/autodiff/layers.hpp"
#include "fairehr/autodiff/params.hpp"
#include "fairehr/counterpart.hpp"
#include "fairehr/data.hpp"
#include "json.hpp"

namespace fairehr {

struct ModelConfig {
  int embedding_dim = 32; // d_e
  int fused_dim = 64;     // d_fused
  int hidden = 64;        // demographic, fusion and classifier hidden width
  int conv_channels = 32;
  int conv_width = 3;
  int heads = 2;
  int ff_dim = 64;

  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json &doc);
};

struct ModalityFlags {
  bool demographics = true;
  bool longitudinal = true;
  bool notes = true;

  bool any() const { return demographics || longitudinal || notes; }
  /// "D", "D+L", "L+N", ...
  std::string label() const;
};

/// Trainable parameters plus the fixed input normalization they were fit
/// with. Longitudinal inputs are standardized per feature before the conv.
struct ModelParams {
  ModelConfig config;
  int time_steps = 0;
  int features = 0;
  int note_dim = 0;
  std::array<int, 4> vocab_sizes{}; // gender, race, ethnicity, ses
  Eigen::RowVectorXd feature_mean;
  Eigen::RowVectorXd feature_sd;
  ad::ParameterSet params;

  int demographic_width() const;

  static ModelParams initialize(const CohortSchema &schema, const ModelConfig &config,
                                const Eigen::RowVectorXd &feature_mean, const Eigen::RowVectorXd &feature_sd,
                                Rng &rng);

  nlohmann::json to_json() const;
  static ModelParams from_json(const nlohmann::json &doc);
};

/// One-hot (gender, race, ethnicity, ses) followed by age / 100.
Eigen::RowVectorXd demographic_features(const SensitiveAttributes &s, const AttributeVocabularies &vocabularies);

using Var = ad::Var<double>;
using BoundParams = ad::Bound<double>;

Var encode_demographics(const Var &x, const BoundParams &p);
/// (B*T) x F standardized sequences -> B x d_e.
Var encode_longitudinal(const Var &x, const BoundParams &p, const ModelParams &shape);
Var encode_notes(const Var &notes, const BoundParams &p, const ModelParams &shape);
/// MLP over [e_d, e_l, e_n] in that order.
Var fuse(const Var &e_d, const Var &e_l, const Var &e_n, const BoundParams &p, const ModelParams &shape);
/// sigmoid(w) * e, one gate per coordinate shared across rows.
Var dynamic_relevance(const Var &e, const Var &w);
/// B x 2 class probabilities.
Var classify(const Var &e_adj, const BoundParams &p);

/// Counts how often each modality's per-record arrays were read.
struct DataAccess {
  std::size_t demographics = 0;
  std::size_t longitudinal = 0;
  std::size_t notes = 0;
};

/// Dense model inputs for a batch. Matrices of disabled modalities stay
/// empty and the corresponding record fields are never touched.
struct ModelInputs {
  Eigen::Index batch = 0;
  Eigen::MatrixXd demographics; // B x demographic_width
  Eigen::MatrixXd longitudinal; // (B*T) x F, standardized
  Eigen::MatrixXd notes;        // B x d_n
};

ModelInputs record_inputs(const std::vector<const PatientRecord *> &records, const CohortSchema &schema,
                          const ModelParams &params, const ModalityFlags &flags, DataAccess *access = nullptr);
ModelInputs counterpart_inputs(const std::vector<const CounterpartRecord *> &counterparts,
                               const CohortSchema &schema, const ModelParams &params, const ModalityFlags &flags,
                               DataAccess *access = nullptr);
/// Counterpart records read by counterpart_inputs() in this process so far.
std::size_t counterpart_records_read();

/// Fused embedding e; disabled modalities contribute zero embeddings.
Var embed(const ModelInputs &inputs, const BoundParams &p, const ModelParams &shape, const ModalityFlags &flags);

struct EmbeddingBundle {
  Var e;
  Var e_syn;
  Var e_adj;
  Var e_adj_syn;
};

struct ForwardOutput {
  EmbeddingBundle bundle;
  Var probabilities; // from e_adj (real path) only
};

/// Real and synthetic batches through the same parameters. With `use_dr`
/// false the gate is skipped (e_adj = e).
ForwardOutput forward_batch(const ModelInputs &real, const ModelInputs &synthetic, const BoundParams &p,
                            const ModelParams &shape, const ModalityFlags &flags, bool use_dr);

/// Single pair; throws a contract error unless counterpart.source_id == record.id.
ForwardOutput forward_pair(const PatientRecord &record, const CounterpartRecord &counterpart,
                           const CohortSchema &schema, const BoundParams &p, const ModelParams &shape,
                           const ModalityFlags &flags, bool use_dr);

/// Real-path forward without counterparts: e_adj and class probabilities.
struct Prediction {
  Eigen::MatrixXd e_adj;
  Eigen::MatrixXd probabilities;
};
Prediction predict(const ModelInputs &real, const ModelParams &params, const ModalityFlags &flags, bool use_dr);

} // namespace fairehr
