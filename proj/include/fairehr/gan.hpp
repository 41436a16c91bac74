#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "fairehr/autodiff/layers.hpp"
#include "fairehr/autodiff/params.hpp"
#include "fairehr/data.hpp"
#include "json.hpp"

namespace fairehr {

struct GanLossWeights {
  double beta0 = 1.0; // l_dis
  double beta1 = 1.0; // l_adv
  double beta2 = 1.0; // l_fm

  void validate() const;
};

struct GanConfig {
  int latent_dim = 16;
  int noise_dim = 16;
  int encoder_hidden = 64;
  int decoder_hidden = 128;
  int disc_channels = 16;
  int disc_kernel = 3;
  int disc_hidden = 32;
  int epochs = 150;
  int batch_size = 32;
  double learning_rate = 1e-3;
  /// Adam beta1 for both players; 0.5 is the usual GAN setting.
  double beta1 = 0.5;
  GanLossWeights weights;
  double mmd_threshold = 0.68;
  /// Fraction of the training records kept out of GAN training for the gate.
  double holdout_fraction = 0.2;

  void validate() const;
  nlohmann::json to_json() const;
  static GanConfig from_json(const nlohmann::json &doc);
};

/// Networks operate on per-feature standardized values; `feature_mean` and
/// `feature_sd` map between raw and standardized space.
struct GanParams {
  int time_steps = 0;
  int features = 0;
  GanConfig config;
  ad::ParameterSet generator;     // "encoder.*" and "decoder.*"
  ad::ParameterSet discriminator; // "disc.*"
  Eigen::RowVectorXd feature_mean;
  Eigen::RowVectorXd feature_sd;

  static GanParams initialize(int time_steps, int features, const GanConfig &config,
                              const Eigen::RowVectorXd &mean, const Eigen::RowVectorXd &sd,
                              Rng &rng);

  /// (B*T) x F raw batch -> standardized.
  Eigen::MatrixXd standardize(const Eigen::MatrixXd &raw) const;
  Eigen::MatrixXd unstandardize(const Eigen::MatrixXd &standardized) const;
};

struct DiscriminatorOutput {
  ad::Var<double> probability; // B x 1, clamped to [eps, 1 - eps]
  ad::Var<double> features;    // B x disc_hidden, the f(.) layer
};

inline constexpr double kProbabilityEps = 1e-7;

/// Batches are stacked sequences: (B*T) x F in standardized space.
ad::Var<double> gan_encode(const ad::Var<double> &x, const ad::Bound<double> &gen,
                           const GanParams &shape);
ad::Var<double> gan_decode(const ad::Var<double> &z, const ad::Var<double> &v,
                           const ad::Bound<double> &gen, const GanParams &shape);
DiscriminatorOutput gan_discriminate(const ad::Var<double> &x, const ad::Bound<double> &disc,
                                     const GanParams &shape);

/// -(1/n) sum [y log D + (1-y) log(1-D)] over real (y=1) and synthetic (y=0).
ad::Var<double> loss_dis(const ad::Var<double> &d_real, const ad::Var<double> &d_synth);
/// -mean log D(synthetic).
ad::Var<double> loss_adv(const ad::Var<double> &d_synth);
/// Root of the mean squared elementwise gap between paired feature maps.
ad::Var<double> loss_fm(const ad::Var<double> &f_real, const ad::Var<double> &f_synth);
ad::Var<double> gan_total_loss(const GanLossWeights &w, const ad::Var<double> &l_dis,
                               const ad::Var<double> &l_adv, const ad::Var<double> &l_fm);

/// Flattened samples, one per row.
double median_pairwise_distance(const Eigen::MatrixXd &a, const Eigen::MatrixXd &b);
/// Unbiased MMD^2 under the mixture kernel k(x,y) = sum over sigma of
/// exp(-|x-y|^2 / (2 sigma^2)), clamped at 0, square-rooted.
double mmd(const Eigen::MatrixXd &a, const Eigen::MatrixXd &b,
           const std::vector<double> &bandwidths);
/// Bandwidths {0.5, 1, 2, 4, 8} x median pairwise distance of the pooled
/// samples.
double mmd(const Eigen::MatrixXd &a, const Eigen::MatrixXd &b);

/// Stacks records' longitudinal matrices into (B*T) x F (raw units).
Eigen::MatrixXd stack_longitudinal(const Cohort &cohort, const std::vector<std::size_t> &rows);
/// One flattened standardized sample per row, for MMD.
Eigen::MatrixXd flatten_samples(const Eigen::MatrixXd &stacked, int time_steps);

/// G_d(G_e(x), v) for a raw (B*T) x F batch, with v ~ N(0, 1) from `rng`;
/// result in raw units.
Eigen::MatrixXd gan_reconstruct(const GanParams &gan, const Eigen::MatrixXd &raw, Rng &rng);

/// Gradients of one adversarial step. The discriminator step detaches the
/// synthetic batch, so generator gradients come back as zeros; the generator
/// step binds the discriminator as constants and returns no discriminator
/// gradients at all.
struct GanStep {
  double loss = 0.0;
  ad::ParameterSet generator_grad;
  ad::ParameterSet discriminator_grad;
};

/// `x` is a standardized (B*T) x F batch and `v` the B x noise_dim noise.
GanStep discriminator_step(const GanParams &gan, const Eigen::MatrixXd &x, const Eigen::MatrixXd &v);
GanStep generator_step(const GanParams &gan, const Eigen::MatrixXd &x, const Eigen::MatrixXd &v);

struct GateReport {
  double mmd = 0.0;
  double threshold = 0.68;
  bool passed = false;
  int epochs = 0;
  std::size_t holdout_size = 0;
  std::vector<double> dis_loss;       // per epoch mean
  std::vector<double> generator_loss; // per epoch mean

  nlohmann::json to_json() const;
};

struct TrainedGan {
  GanParams params;
  GateReport gate;
};

/// Alternating 1:1 discriminator / generator Adam steps over the training
/// split of `cohort` (which must be fully imputed). The gate MMD compares
/// held-out records with their reconstructions G_d(G_e(x), v).
TrainedGan train_gan(const Cohort &cohort, const GanConfig &config, std::uint64_t seed);

nlohmann::json gan_to_json(const TrainedGan &gan);
TrainedGan gan_from_json(const nlohmann::json &doc);

} // namespace fairehr
