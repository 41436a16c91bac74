#include "fairehr/gan.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fairehr/error.hpp"
#include "fairehr/random.hpp"

namespace fairehr {

using nlohmann::json;
using Var = ad::Var<double>;
using Tape = ad::Tape<double>;

void GanLossWeights::validate() const {
  require(beta0 >= 0 && beta1 >= 0 && beta2 >= 0, ErrorKind::kConfig,
          "GAN loss weights must be non-negative");
  require(beta0 > 0 || beta1 > 0 || beta2 > 0, ErrorKind::kConfig,
          "at least one GAN loss weight must be positive");
}

void GanConfig::validate() const {
  auto check = [](bool ok, const std::string &what) { require(ok, ErrorKind::kConfig, "gan: " + what); };
  check(latent_dim >= 1 && noise_dim >= 0, "latent_dim >= 1 and noise_dim >= 0 required");
  check(encoder_hidden >= 1 && decoder_hidden >= 1 && disc_hidden >= 1 && disc_channels >= 1,
        "layer widths must be >= 1");
  check(disc_kernel >= 1, "disc_kernel must be >= 1");
  check(epochs >= 0, "epochs must be >= 0");
  check(batch_size >= 1, "batch_size must be >= 1");
  check(learning_rate > 0, "learning_rate must be positive");
  check(beta1 >= 0 && beta1 < 1, "beta1 must lie in [0, 1)");
  check(mmd_threshold > 0, "mmd_threshold must be positive");
  check(holdout_fraction > 0 && holdout_fraction < 1, "holdout_fraction must lie in (0, 1)");
  weights.validate();
}

json GanConfig::to_json() const {
  return {{"latent_dim", latent_dim},
          {"noise_dim", noise_dim},
          {"encoder_hidden", encoder_hidden},
          {"decoder_hidden", decoder_hidden},
          {"disc_channels", disc_channels},
          {"disc_kernel", disc_kernel},
          {"disc_hidden", disc_hidden},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"beta1", beta1},
          {"weights", {{"beta0", weights.beta0}, {"beta1", weights.beta1}, {"beta2", weights.beta2}}},
          {"mmd_threshold", mmd_threshold},
          {"holdout_fraction", holdout_fraction},
          {"schedule", "1:1 discriminator:generator"}};
}

GanConfig GanConfig::from_json(const json &doc) {
  GanConfig c;
  try {
    c.latent_dim = doc.value("latent_dim", c.latent_dim);
    c.noise_dim = doc.value("noise_dim", c.noise_dim);
    c.encoder_hidden = doc.value("encoder_hidden", c.encoder_hidden);
    c.decoder_hidden = doc.value("decoder_hidden", c.decoder_hidden);
    c.disc_channels = doc.value("disc_channels", c.disc_channels);
    c.disc_kernel = doc.value("disc_kernel", c.disc_kernel);
    c.disc_hidden = doc.value("disc_hidden", c.disc_hidden);
    c.epochs = doc.value("epochs", c.epochs);
    c.batch_size = doc.value("batch_size", c.batch_size);
    c.learning_rate = doc.value("learning_rate", c.learning_rate);
    c.beta1 = doc.value("beta1", c.beta1);
    if (doc.contains("weights")) {
      const auto &w = doc["weights"];
      c.weights.beta0 = w.value("beta0", c.weights.beta0);
      c.weights.beta1 = w.value("beta1", c.weights.beta1);
      c.weights.beta2 = w.value("beta2", c.weights.beta2);
    }
    c.mmd_threshold = doc.value("mmd_threshold", c.mmd_threshold);
    c.holdout_fraction = doc.value("holdout_fraction", c.holdout_fraction);
  } catch (const json::exception &e) {
    fail(ErrorKind::kConfig, std::string("gan config: ") + e.what());
  }
  c.validate();
  return c;
}

GanParams GanParams::initialize(int time_steps, int features, const GanConfig &config,
                                const Eigen::RowVectorXd &mean, const Eigen::RowVectorXd &sd,
                                Rng &rng) {
  config.validate();
  require(time_steps >= config.disc_kernel, ErrorKind::kDimension,
          "gan: sequence length " + std::to_string(time_steps) + " shorter than kernel width " +
              std::to_string(config.disc_kernel));
  require(mean.size() == features && sd.size() == features, ErrorKind::kDimension,
          "gan: normalization statistics do not match feature count");
  GanParams p;
  p.time_steps = time_steps;
  p.features = features;
  p.config = config;
  p.feature_mean = mean;
  p.feature_sd = sd;
  p.generator.add_linear("encoder.l1", features, config.encoder_hidden, rng);
  p.generator.add_linear("encoder.l2", config.encoder_hidden, config.latent_dim, rng);
  p.generator.add_linear("decoder.l1", config.latent_dim + config.noise_dim, config.decoder_hidden, rng);
  p.generator.add_linear("decoder.l2", config.decoder_hidden, time_steps * features, rng);
  const int conv_out = time_steps - config.disc_kernel + 1;
  // Conv kernels reuse the linear initializer: weight is (W*F) x K, stored K x (W*F).
  ad::ParameterSet conv;
  conv.add_linear("conv", config.disc_kernel * features, config.disc_channels, rng);
  p.discriminator.set("disc.conv.weight", conv.at("conv.weight").transpose());
  p.discriminator.set("disc.conv.bias", conv.at("conv.bias"));
  p.discriminator.add_linear("disc.hidden", conv_out * config.disc_channels, config.disc_hidden, rng);
  p.discriminator.add_linear("disc.out", config.disc_hidden, 1, rng);
  return p;
}

Eigen::MatrixXd GanParams::standardize(const Eigen::MatrixXd &raw) const {
  return (raw.rowwise() - feature_mean).array().rowwise() / feature_sd.array();
}

Eigen::MatrixXd GanParams::unstandardize(const Eigen::MatrixXd &standardized) const {
  return (standardized.array().rowwise() * feature_sd.array()).rowwise() + feature_mean.array();
}

Var gan_encode(const Var &x, const ad::Bound<double> &gen, const GanParams &shape) {
  require(x.cols() == shape.features && x.rows() % shape.time_steps == 0, ErrorKind::kDimension,
          "gan encoder: batch is not a stack of " + std::to_string(shape.time_steps) + "x" +
              std::to_string(shape.features) + " sequences");
  const Var pooled = ad::sequence_mean(x, shape.time_steps);
  return ad::linear(ad::relu(ad::linear(pooled, gen, "encoder.l1")), gen, "encoder.l2");
}

Var gan_decode(const Var &z, const Var &v, const ad::Bound<double> &gen, const GanParams &shape) {
  const Var input = shape.config.noise_dim > 0 ? ad::concat_cols<double>({z, v}) : z;
  const Var flat = ad::linear(ad::relu(ad::linear(input, gen, "decoder.l1")), gen, "decoder.l2");
  return ad::reshape(flat, flat.rows() * shape.time_steps, shape.features);
}

DiscriminatorOutput gan_discriminate(const Var &x, const ad::Bound<double> &disc,
                                     const GanParams &shape) {
  require(x.cols() == shape.features && x.rows() % shape.time_steps == 0, ErrorKind::kDimension,
          "discriminator: batch shape does not match the data shape");
  const Eigen::Index batch = x.rows() / shape.time_steps;
  const Var conv = ad::relu(ad::add_row(
      ad::conv1d(x, disc["disc.conv.weight"], shape.config.disc_kernel, 1, shape.time_steps),
      disc["disc.conv.bias"]));
  const Var flat = ad::reshape(conv, batch, conv.rows() / batch * conv.cols());
  const Var features = ad::relu(ad::linear(flat, disc, "disc.hidden"));
  const Var prob = ad::clamp(ad::sigmoid(ad::linear(features, disc, "disc.out")), kProbabilityEps,
                             1.0 - kProbabilityEps);
  return {prob, features};
}

Var loss_dis(const Var &d_real, const Var &d_synth) {
  require(d_real.rows() * d_real.cols() > 0 && d_synth.rows() * d_synth.cols() > 0,
          ErrorKind::kContract, "loss_dis: empty batch");
  const double n = static_cast<double>(d_real.value().size() + d_synth.value().size());
  const Var real_term = ad::sum(ad::log(d_real));
  const Var synth_term = ad::sum(ad::log(ad::add_scalar(ad::neg(d_synth), 1.0)));
  return ad::scale(ad::add(real_term, synth_term), -1.0 / n);
}

Var loss_adv(const Var &d_synth) {
  require(d_synth.rows() * d_synth.cols() > 0, ErrorKind::kContract, "loss_adv: empty batch");
  return ad::neg(ad::mean(ad::log(d_synth)));
}

Var loss_fm(const Var &f_real, const Var &f_synth) {
  require(f_real.rows() * f_real.cols() > 0 && f_synth.rows() * f_synth.cols() > 0,
          ErrorKind::kContract, "loss_fm: empty batch");
  return ad::sqrt(ad::mean(ad::square(ad::sub(f_real, f_synth))));
}

Var gan_total_loss(const GanLossWeights &w, const Var &l_dis, const Var &l_adv, const Var &l_fm) {
  w.validate();
  return ad::add(ad::add(ad::scale(l_dis, w.beta0), ad::scale(l_adv, w.beta1)),
                 ad::scale(l_fm, w.beta2));
}

namespace {

double squared_distance(const Eigen::MatrixXd &a, Eigen::Index i, const Eigen::MatrixXd &b,
                        Eigen::Index j) {
  return (a.row(i) - b.row(j)).squaredNorm();
}

/// Sum in ascending order so the result does not depend on argument order.
double ordered_sum(std::vector<double> &terms) {
  std::sort(terms.begin(), terms.end());
  return std::accumulate(terms.begin(), terms.end(), 0.0);
}

} // namespace

double median_pairwise_distance(const Eigen::MatrixXd &a, const Eigen::MatrixXd &b) {
  require(a.cols() == b.cols(), ErrorKind::kDimension, "median distance: sample widths differ");
  Eigen::MatrixXd pooled(a.rows() + b.rows(), a.cols());
  pooled << a, b;
  std::vector<double> d;
  d.reserve(static_cast<std::size_t>(pooled.rows() * (pooled.rows() - 1) / 2));
  for (Eigen::Index i = 0; i < pooled.rows(); ++i) {
    for (Eigen::Index j = i + 1; j < pooled.rows(); ++j) {
      d.push_back(std::sqrt(squared_distance(pooled, i, pooled, j)));
    }
  }
  require(!d.empty(), ErrorKind::kContract, "median distance: need at least two samples");
  std::sort(d.begin(), d.end());
  const std::size_t m = d.size() / 2;
  return d.size() % 2 == 1 ? d[m] : 0.5 * (d[m - 1] + d[m]);
}

double mmd(const Eigen::MatrixXd &a, const Eigen::MatrixXd &b, const std::vector<double> &bandwidths) {
  require(a.rows() >= 2 && b.rows() >= 2, ErrorKind::kContract, "mmd: each batch needs >= 2 samples");
  require(a.cols() == b.cols(), ErrorKind::kDimension, "mmd: sample widths differ");
  require(!bandwidths.empty(), ErrorKind::kContract, "mmd: no bandwidths");
  for (const double s : bandwidths) {
    require(s > 0 && std::isfinite(s), ErrorKind::kDomain, "mmd: bandwidths must be positive");
  }
  auto kernel = [&](double sq) {
    double k = 0.0;
    for (const double s : bandwidths) {
      k += std::exp(-sq / (2.0 * s * s));
    }
    return k;
  };
  auto within = [&](const Eigen::MatrixXd &x) {
    std::vector<double> terms;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      for (Eigen::Index j = i + 1; j < x.rows(); ++j) {
        terms.push_back(kernel(squared_distance(x, i, x, j)));
      }
    }
    const double n = static_cast<double>(x.rows());
    return 2.0 * ordered_sum(terms) / (n * (n - 1.0));
  };
  std::vector<double> cross;
  for (Eigen::Index i = 0; i < a.rows(); ++i) {
    for (Eigen::Index j = 0; j < b.rows(); ++j) {
      cross.push_back(kernel(squared_distance(a, i, b, j)));
    }
  }
  const double kab = ordered_sum(cross) / static_cast<double>(a.rows() * b.rows());
  const double mmd2 = within(a) + within(b) - 2.0 * kab;
  return std::sqrt(std::max(0.0, mmd2));
}

double mmd(const Eigen::MatrixXd &a, const Eigen::MatrixXd &b) {
  const double median = median_pairwise_distance(a, b);
  require(median > 0, ErrorKind::kDomain, "mmd: all samples coincide");
  std::vector<double> bandwidths;
  for (const double f : {0.5, 1.0, 2.0, 4.0, 8.0}) {
    bandwidths.push_back(f * median);
  }
  return mmd(a, b, bandwidths);
}

Eigen::MatrixXd stack_longitudinal(const Cohort &cohort, const std::vector<std::size_t> &rows) {
  const int t = cohort.schema.time_steps;
  Eigen::MatrixXd out(static_cast<Eigen::Index>(rows.size()) * t, cohort.schema.feature_count());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.middleRows(static_cast<Eigen::Index>(i) * t, t) = cohort.records[rows[i]].longitudinal;
  }
  return out;
}

Eigen::MatrixXd flatten_samples(const Eigen::MatrixXd &stacked, int time_steps) {
  require(time_steps >= 1 && stacked.rows() % time_steps == 0, ErrorKind::kDimension,
          "flatten_samples: rows are not a multiple of the sequence length");
  const Eigen::Index n = stacked.rows() / time_steps;
  Eigen::MatrixXd out(n, time_steps * stacked.cols());
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int t = 0; t < time_steps; ++t) {
      out.block(i, t * stacked.cols(), 1, stacked.cols()) = stacked.row(i * time_steps + t);
    }
  }
  return out;
}

namespace {

Eigen::MatrixXd noise(Eigen::Index rows, int dim, Rng &rng) {
  Eigen::MatrixXd v(rows, dim);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (int c = 0; c < dim; ++c) {
      v(r, c) = rng.normal();
    }
  }
  return v;
}

/// Standardized-space reconstruction without gradients.
Eigen::MatrixXd reconstruct_standardized(const GanParams &gan, const Eigen::MatrixXd &x, Rng &rng) {
  Tape tape;
  const ad::Bound<double> gen(tape, gan.generator, false);
  const Var xv = tape.constant(x);
  const Var z = gan_encode(xv, gen, gan);
  const Var v = tape.constant(noise(z.rows(), gan.config.noise_dim, rng));
  return gan_decode(z, v, gen, gan).value();
}

} // namespace

Eigen::MatrixXd gan_reconstruct(const GanParams &gan, const Eigen::MatrixXd &raw, Rng &rng) {
  return gan.unstandardize(reconstruct_standardized(gan, gan.standardize(raw), rng));
}

GanStep discriminator_step(const GanParams &gan, const Eigen::MatrixXd &x, const Eigen::MatrixXd &v) {
  Tape tape;
  const ad::Bound<double> gen(tape, gan.generator, true);
  const ad::Bound<double> disc(tape, gan.discriminator, true);
  const Var xv = tape.constant(x);
  const Var fake = gan_decode(gan_encode(xv, gen, gan), tape.constant(v), gen, gan);
  const Var detached = tape.constant(fake.value());
  const Var loss = ad::scale(loss_dis(gan_discriminate(xv, disc, gan).probability,
                                      gan_discriminate(detached, disc, gan).probability),
                             gan.config.weights.beta0);
  tape.backward(loss);
  return {loss.item(), gen.gradients(), disc.gradients()};
}

GanStep generator_step(const GanParams &gan, const Eigen::MatrixXd &x, const Eigen::MatrixXd &v) {
  Tape tape;
  const ad::Bound<double> gen(tape, gan.generator, true);
  const ad::Bound<double> disc(tape, gan.discriminator, false);
  const Var xv = tape.constant(x);
  const Var fake = gan_decode(gan_encode(xv, gen, gan), tape.constant(v), gen, gan);
  const auto d_fake = gan_discriminate(fake, disc, gan);
  const auto d_real = gan_discriminate(xv, disc, gan);
  const auto &w = gan.config.weights;
  const Var loss = ad::add(ad::scale(loss_adv(d_fake.probability), w.beta1),
                           ad::scale(loss_fm(d_real.features, d_fake.features), w.beta2));
  tape.backward(loss);
  return {loss.item(), gen.gradients(), {}};
}

json GateReport::to_json() const {
  return {{"mmd", mmd},
          {"threshold", threshold},
          {"passed", passed},
          {"epochs", epochs},
          {"holdout_size", holdout_size},
          {"dis_loss", dis_loss},
          {"generator_loss", generator_loss}};
}

TrainedGan train_gan(const Cohort &cohort, const GanConfig &config, std::uint64_t seed) {
  config.validate();
  const std::vector<std::size_t> train_rows = cohort.indices(Split::kTrain);
  for (const std::size_t i : train_rows) {
    require(cohort.records[i].longitudinal.allFinite(), ErrorKind::kPipeline,
            "train_gan: record '" + cohort.records[i].id + "' has missing values; impute first");
  }
  std::vector<std::size_t> order = train_rows;
  Rng split_rng(derive_seed(seed, "gan-holdout"));
  split_rng.shuffle(order);
  const auto holdout_n = static_cast<std::size_t>(
      std::llround(config.holdout_fraction * static_cast<double>(order.size())));
  require(holdout_n >= 2 && order.size() - holdout_n >= 2, ErrorKind::kConfig,
          "train_gan: need at least two training and two held-out records");
  const std::vector<std::size_t> holdout(order.begin(), order.begin() + static_cast<long>(holdout_n));
  std::vector<std::size_t> fit(order.begin() + static_cast<long>(holdout_n), order.end());
  std::sort(fit.begin(), fit.end());

  const int T = cohort.schema.time_steps;
  const Eigen::MatrixXd fit_raw = stack_longitudinal(cohort, fit);
  const Eigen::RowVectorXd mean = fit_raw.colwise().mean();
  Eigen::RowVectorXd sd =
      ((fit_raw.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(fit_raw.rows()))
          .sqrt();
  sd = sd.unaryExpr([](double s) { return s > 1e-12 ? s : 1.0; });

  Rng init_rng(derive_seed(seed, "gan-init"));
  TrainedGan out{GanParams::initialize(T, cohort.schema.feature_count(), config, mean, sd, init_rng), {}};
  GanParams &gan = out.params;
  const Eigen::MatrixXd fit_std = gan.standardize(fit_raw);

  ad::AdamConfig adam_config{config.learning_rate, config.beta1, 0.999, 1e-8};
  ad::Adam dis_opt(adam_config);
  ad::Adam gen_opt(adam_config);
  Rng rng(derive_seed(seed, "gan-train"));
  std::vector<std::size_t> batch_order(fit.size());
  std::iota(batch_order.begin(), batch_order.end(), std::size_t{0});

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    rng.shuffle(batch_order);
    double dis_sum = 0.0;
    double gen_sum = 0.0;
    int steps = 0;
    try {
      for (std::size_t start = 0; start < batch_order.size();
           start += static_cast<std::size_t>(config.batch_size)) {
        const std::size_t count =
            std::min(static_cast<std::size_t>(config.batch_size), batch_order.size() - start);
        Eigen::MatrixXd x(static_cast<Eigen::Index>(count) * T, gan.features);
        for (std::size_t i = 0; i < count; ++i) {
          x.middleRows(static_cast<Eigen::Index>(i) * T, T) =
              fit_std.middleRows(static_cast<Eigen::Index>(batch_order[start + i]) * T, T);
        }
        const Eigen::Index b = static_cast<Eigen::Index>(count);
        const GanStep d = discriminator_step(gan, x, noise(b, config.noise_dim, rng));
        dis_opt.step(gan.discriminator, d.discriminator_grad);
        dis_sum += d.loss;
        const GanStep g = generator_step(gan, x, noise(b, config.noise_dim, rng));
        gen_opt.step(gan.generator, g.generator_grad);
        gen_sum += g.loss;
        ++steps;
      }
    } catch (const Error &e) {
      if (e.kind() == ErrorKind::kDomain) {
        fail(ErrorKind::kTraining, "train_gan diverged at epoch " + std::to_string(epoch) + ": " + e.what());
      }
      throw;
    }
    out.gate.dis_loss.push_back(dis_sum / steps);
    out.gate.generator_loss.push_back(gen_sum / steps);
  }

  Rng gate_rng(derive_seed(seed, "gan-gate"));
  const Eigen::MatrixXd held_std = gan.standardize(stack_longitudinal(cohort, holdout));
  const Eigen::MatrixXd recon_std = reconstruct_standardized(gan, held_std, gate_rng);
  out.gate.mmd = mmd(flatten_samples(held_std, T), flatten_samples(recon_std, T));
  out.gate.threshold = config.mmd_threshold;
  out.gate.passed = out.gate.mmd <= config.mmd_threshold;
  out.gate.epochs = config.epochs;
  out.gate.holdout_size = holdout.size();
  return out;
}

json gan_to_json(const TrainedGan &gan) {
  const auto &p = gan.params;
  json doc;
  doc["format"] = "fairehr-gan";
  doc["version"] = 1;
  doc["time_steps"] = p.time_steps;
  doc["features"] = p.features;
  doc["config"] = p.config.to_json();
  doc["feature_mean"] = std::vector<double>(p.feature_mean.data(), p.feature_mean.data() + p.feature_mean.size());
  doc["feature_sd"] = std::vector<double>(p.feature_sd.data(), p.feature_sd.data() + p.feature_sd.size());
  doc["generator"] = ad::parameters_to_json(p.generator);
  doc["discriminator"] = ad::parameters_to_json(p.discriminator);
  doc["gate"] = gan.gate.to_json();
  return doc;
}

TrainedGan gan_from_json(const json &doc) {
  require(doc.is_object() && doc.value("format", "") == "fairehr-gan", ErrorKind::kSchema,
          "not a GAN checkpoint");
  TrainedGan out;
  auto &p = out.params;
  try {
    p.time_steps = doc.at("time_steps").get<int>();
    p.features = doc.at("features").get<int>();
    p.config = GanConfig::from_json(doc.at("config"));
    const auto mean = doc.at("feature_mean").get<std::vector<double>>();
    const auto sd = doc.at("feature_sd").get<std::vector<double>>();
    require(static_cast<int>(mean.size()) == p.features && static_cast<int>(sd.size()) == p.features,
            ErrorKind::kSchema, "GAN checkpoint: normalization size mismatch");
    p.feature_mean = Eigen::Map<const Eigen::RowVectorXd>(mean.data(), p.features);
    p.feature_sd = Eigen::Map<const Eigen::RowVectorXd>(sd.data(), p.features);
    p.generator = ad::parameters_from_json(doc.at("generator"));
    p.discriminator = ad::parameters_from_json(doc.at("discriminator"));
    const auto &g = doc.at("gate");
    out.gate.mmd = g.at("mmd").get<double>();
    out.gate.threshold = g.at("threshold").get<double>();
    out.gate.passed = g.at("passed").get<bool>();
    out.gate.epochs = g.at("epochs").get<int>();
    out.gate.holdout_size = g.at("holdout_size").get<std::size_t>();
    out.gate.dis_loss = g.at("dis_loss").get<std::vector<double>>();
    out.gate.generator_loss = g.at("generator_loss").get<std::vector<double>>();
  } catch (const json::exception &e) {
    fail(ErrorKind::kParse, std::string("GAN checkpoint: ") + e.what());
  }
  return out;
}

} // namespace fairehr
