#include <gtest/gtest.h>

#include <cmath>

#include "fairehr/gan.hpp"
#include "support/gradcheck.hpp"
#include "support/literal.hpp"

namespace fairehr {
namespace {

using Tape = ad::Tape<double>;
using Eigen::MatrixXd;

MatrixXd column(const std::vector<double> &v) {
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

std::vector<double> as_vector(const MatrixXd &m) { return {m.data(), m.data() + m.size()}; }

double dis(const std::vector<double> &real, const std::vector<double> &synth) {
  Tape t;
  return loss_dis(t.constant(column(real)), t.constant(column(synth))).item();
}

double adv(const std::vector<double> &synth) {
  Tape t;
  return loss_adv(t.constant(column(synth))).item();
}

double fm(const MatrixXd &a, const MatrixXd &b) {
  Tape t;
  return loss_fm(t.constant(a), t.constant(b)).item();
}

TEST(GanLosses, DiscriminatorAnchors) {
  const double eps = kProbabilityEps;
  EXPECT_NEAR(dis({1 - eps, 1 - eps}, {eps, eps}), 0.0, 2 * eps * std::abs(std::log(eps)));
  EXPECT_NEAR(dis({0.5, 0.5, 0.5}, {0.5, 0.5}), std::log(2.0), 1e-15);
  const double e1 = std::exp(-1.0);
  // one real at e^-1 and one synthetic at 1 - e^-1: each log term is -1, n = 2
  EXPECT_NEAR(dis({e1}, {1 - e1}), 1.0, 1e-15);
  // the real term alone contributes 1/2
  EXPECT_NEAR(dis({e1}, {eps}), 0.5, 1e-6);
}

TEST(GanLosses, AdversarialAnchors) {
  EXPECT_NEAR(adv({1 - kProbabilityEps, 1 - kProbabilityEps}), 0.0, 1e-6);
  EXPECT_NEAR(adv({std::exp(-1.0), std::exp(-1.0)}), 1.0, 1e-15);
}

TEST(GanLosses, FeatureMatchingAnchors) {
  const MatrixXd f = testing::random_matrix(4, 5, 3);
  EXPECT_EQ(fm(f, f), 0.0);
  EXPECT_NEAR(fm(f, f.array() - 0.7), 0.7, 1e-15);
  EXPECT_NEAR(fm(f.array() - 2.5, f), 2.5, 1e-15);
}

TEST(GanLosses, EmptyBatchIsContractError) {
  Tape t;
  const auto empty = t.constant(MatrixXd(0, 1));
  const auto one = t.constant(MatrixXd::Constant(1, 1, 0.5));
  EXPECT_THROW(loss_dis(empty, one), Error);
  EXPECT_THROW(loss_adv(empty), Error);
  EXPECT_THROW(loss_fm(t.constant(MatrixXd(0, 3)), t.constant(MatrixXd(0, 3))), Error);
}

TEST(GanLosses, MatchLiteralEvaluationOnRandomBatches) {
  Rng rng(21);
  for (int trial = 0; trial < 100; ++trial) {
    const auto nr = static_cast<Eigen::Index>(1 + rng.uniform_int(6));
    const auto ns = static_cast<Eigen::Index>(1 + rng.uniform_int(6));
    std::vector<double> real, synth;
    for (Eigen::Index i = 0; i < nr; ++i) real.push_back(rng.uniform(0.001, 0.999));
    for (Eigen::Index i = 0; i < ns; ++i) synth.push_back(rng.uniform(0.001, 0.999));
    EXPECT_NEAR(dis(real, synth), testing::literal::loss_dis(real, synth), 1e-9);
    EXPECT_NEAR(adv(synth), testing::literal::loss_adv(synth), 1e-9);
    const MatrixXd a = testing::random_matrix(nr, 4, 1000 + trial, -3, 3);
    const MatrixXd b = testing::random_matrix(nr, 4, 2000 + trial, -3, 3);
    EXPECT_NEAR(fm(a, b), testing::literal::loss_fm(a, b), 1e-9);
  }
}

GanConfig tiny_config() {
  GanConfig c;
  c.latent_dim = 3;
  c.noise_dim = 2;
  c.encoder_hidden = 5;
  c.decoder_hidden = 6;
  c.disc_channels = 2;
  c.disc_kernel = 2;
  c.disc_hidden = 3;
  return c;
}

GanParams tiny_gan(std::uint64_t seed) {
  Rng rng(seed);
  return GanParams::initialize(4, 2, tiny_config(), Eigen::RowVector2d(0, 0), Eigen::RowVector2d(1, 1), rng);
}

/// Discriminator evaluated with explicit loops over one 4x2 sample.
struct LoopDiscriminator {
  const GanParams &gan;

  std::pair<double, std::vector<double>> operator()(const MatrixXd &x) const {
    const auto &d = gan.discriminator;
    const MatrixXd &kern = d.at("disc.conv.weight");
    const int width = gan.config.disc_kernel;
    const int channels = gan.config.disc_channels;
    const int steps = gan.time_steps - width + 1;
    std::vector<double> flat;
    for (int t = 0; t < steps; ++t) {
      for (int k = 0; k < channels; ++k) {
        double acc = d.at("disc.conv.bias")(0, k);
        for (int w = 0; w < width; ++w) {
          for (int f = 0; f < gan.features; ++f) {
            acc += x(t + w, f) * kern(k, w * gan.features + f);
          }
        }
        flat.push_back(std::max(acc, 0.0));
      }
    }
    const MatrixXd &w1 = d.at("disc.hidden.weight");
    std::vector<double> hidden;
    for (Eigen::Index h = 0; h < w1.cols(); ++h) {
      double acc = d.at("disc.hidden.bias")(0, h);
      for (std::size_t i = 0; i < flat.size(); ++i) {
        acc += flat[i] * w1(static_cast<Eigen::Index>(i), h);
      }
      hidden.push_back(std::max(acc, 0.0));
    }
    double logit = d.at("disc.out.bias")(0, 0);
    for (std::size_t h = 0; h < hidden.size(); ++h) {
      logit += hidden[h] * d.at("disc.out.weight")(static_cast<Eigen::Index>(h), 0);
    }
    return {1.0 / (1.0 + std::exp(-logit)), hidden};
  }
};

TEST(GanNetworks, FeatureMatchingAgreesWithLoopEvaluation) {
  for (std::uint64_t trial = 0; trial < 20; ++trial) {
    const GanParams gan = tiny_gan(trial);
    const MatrixXd real = testing::random_matrix(16, 2, 50 + trial, -2, 2);
    const MatrixXd synth = testing::random_matrix(16, 2, 90 + trial, -2, 2);
    Tape t;
    const ad::Bound<double> disc(t, gan.discriminator, false);
    const auto dr = gan_discriminate(t.constant(real), disc, gan);
    const auto ds = gan_discriminate(t.constant(synth), disc, gan);
    const LoopDiscriminator loop{gan};
    MatrixXd fr(4, 3), fs(4, 3);
    std::vector<double> pr, ps;
    for (int b = 0; b < 4; ++b) {
      const auto [p1, h1] = loop(real.middleRows(b * 4, 4));
      const auto [p2, h2] = loop(synth.middleRows(b * 4, 4));
      pr.push_back(p1);
      ps.push_back(p2);
      for (int h = 0; h < 3; ++h) {
        fr(b, h) = h1[static_cast<std::size_t>(h)];
        fs(b, h) = h2[static_cast<std::size_t>(h)];
      }
    }
    EXPECT_NEAR(loss_fm(dr.features, ds.features).item(), testing::literal::loss_fm(fr, fs), 1e-9);
    EXPECT_NEAR(loss_dis(dr.probability, ds.probability).item(), testing::literal::loss_dis(pr, ps), 1e-9);
    EXPECT_NEAR(loss_adv(ds.probability).item(), testing::literal::loss_adv(ps), 1e-9);
  }
}

TEST(GanNetworks, DecoderOutputMatchesDataShape) {
  const GanParams gan = tiny_gan(1);
  Tape t;
  const ad::Bound<double> gen(t, gan.generator, false);
  const auto x = t.constant(testing::random_matrix(12, 2, 4));
  const auto z = gan_encode(x, gen, gan);
  EXPECT_EQ(z.rows(), 3);
  EXPECT_EQ(z.cols(), 3);
  const auto y = gan_decode(z, t.constant(testing::random_matrix(3, 2, 5)), gen, gan);
  EXPECT_EQ(y.rows(), 12);
  EXPECT_EQ(y.cols(), 2);
  const auto d = gan_discriminate(y, ad::Bound<double>(t, gan.discriminator, false), gan);
  EXPECT_TRUE((d.probability.value().array() > 0).all() && (d.probability.value().array() < 1).all());
}

TEST(GanNetworks, GeneratorStepGradientsMatchFiniteDifferences) {
  const GanParams gan = tiny_gan(7);
  const MatrixXd x = testing::random_matrix(8, 2, 8);
  const MatrixXd v = testing::random_matrix(2, 2, 9);
  const GanStep step = generator_step(gan, x, v);
  const double h = 1e-5;
  double worst = 0.0;
  for (const auto &[name, value] : gan.generator.entries()) {
    for (Eigen::Index i = 0; i < value.size(); ++i) {
      GanParams plus = gan, minus = gan;
      plus.generator.at(name)(i) += h;
      minus.generator.at(name)(i) -= h;
      const double fd = (generator_step(plus, x, v).loss - generator_step(minus, x, v).loss) / (2 * h);
      const double ad = step.generator_grad.at(name)(i);
      worst = std::max(worst, std::abs(ad - fd) / std::max(1e-8, std::abs(ad) + std::abs(fd)));
    }
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(GanSteps, DiscriminatorStepLeavesGeneratorUntouched) {
  const GanParams gan = tiny_gan(3);
  const GanStep step = discriminator_step(gan, testing::random_matrix(8, 2, 1), testing::random_matrix(2, 2, 2));
  for (const auto &[name, g] : step.generator_grad.entries()) {
    EXPECT_TRUE(g.isZero(0.0)) << name;
  }
  double norm = 0.0;
  for (const auto &[name, g] : step.discriminator_grad.entries()) norm += g.squaredNorm();
  EXPECT_GT(norm, 0.0);
}

TEST(GanSteps, GeneratorStepReachesDecoderNotDiscriminator) {
  const GanParams gan = tiny_gan(3);
  const GanStep step = generator_step(gan, testing::random_matrix(8, 2, 1), testing::random_matrix(2, 2, 2));
  EXPECT_TRUE(step.discriminator_grad.empty());
  EXPECT_GT(step.generator_grad.at("decoder.l2.weight").squaredNorm(), 0.0);
  EXPECT_GT(step.generator_grad.at("decoder.l1.weight").squaredNorm(), 0.0);
}

TEST(GanSteps, TotalLossWeights) {
  Tape t;
  const auto a = t.scalar(0.2), b = t.scalar(0.3), c = t.scalar(0.5);
  EXPECT_DOUBLE_EQ(gan_total_loss({1, 0, 0}, a, b, c).item(), 0.2);
  EXPECT_NEAR(gan_total_loss({1, 1, 1}, a, b, c).item(), 1.0, 1e-15);
  EXPECT_THROW(gan_total_loss({0, 0, 0}, a, b, c), Error);
  EXPECT_THROW(gan_total_loss({-1, 1, 1}, a, b, c), Error);
}

TEST(GanSteps, DoublingWeightsDoublesLossAndGradients) {
  GanParams gan = tiny_gan(5);
  const MatrixXd x = testing::random_matrix(8, 2, 1);
  const MatrixXd v = testing::random_matrix(2, 2, 2);
  const GanStep g1 = generator_step(gan, x, v);
  const GanStep d1 = discriminator_step(gan, x, v);
  gan.config.weights = {2, 2, 2};
  const GanStep g2 = generator_step(gan, x, v);
  const GanStep d2 = discriminator_step(gan, x, v);
  EXPECT_NEAR(g2.loss, 2 * g1.loss, 1e-12);
  EXPECT_NEAR(d2.loss, 2 * d1.loss, 1e-12);
  for (const auto &[name, g] : g1.generator_grad.entries()) {
    EXPECT_TRUE(g2.generator_grad.at(name).isApprox(2 * g, 1e-12)) << name;
  }
  for (const auto &[name, g] : d1.discriminator_grad.entries()) {
    EXPECT_TRUE(d2.discriminator_grad.at(name).isApprox(2 * g, 1e-12)) << name;
  }
}

MatrixXd cloud(Eigen::Index n, Eigen::Index d, double mean, std::uint64_t seed) {
  Rng rng(seed);
  MatrixXd m(n, d);
  for (Eigen::Index i = 0; i < m.size(); ++i) m(i) = rng.normal(mean, 1.0);
  return m;
}

TEST(Mmd, SelfComparisonIsZero) {
  const MatrixXd a = cloud(50, 6, 0.0, 1);
  EXPECT_LE(mmd(a, a), 1e-8);
  EXPECT_LE(mmd(a, a, {1.0}), 1e-8);
}

TEST(Mmd, SeparatedCloudsAreFarApart) {
  // one-dimensional clouds: at unit bandwidth the population value is
  // sqrt(2 / sqrt(3)) ~ 1.07
  const MatrixXd a = cloud(100, 1, -10.0, 2);
  const MatrixXd b = cloud(100, 1, 10.0, 3);
  EXPECT_GT(mmd(a, b, {1.0}), 0.9);
}

TEST(Mmd, SymmetricAndNonNegative) {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const MatrixXd a = cloud(10 + static_cast<Eigen::Index>(s), 5, 0.0, s);
    const MatrixXd b = cloud(12, 5, 0.1 * static_cast<double>(s % 4), 100 + s);
    EXPECT_EQ(mmd(a, b), mmd(b, a));
    EXPECT_GE(mmd(a, b), 0.0);
  }
}

// The mixture kernel is a sum, so MMD^2 adds up over bandwidths.
TEST(Mmd, SquaredDistanceAddsOverBandwidths) {
  const MatrixXd a = testing::random_matrix(7, 3, 31, -1, 1);
  const MatrixXd b = testing::random_matrix(9, 3, 32, -0.5, 1.5);
  const double joint = mmd(a, b, {0.5, 2.0});
  const double lo = mmd(a, b, {0.5});
  const double hi = mmd(a, b, {2.0});
  EXPECT_NEAR(joint * joint, lo * lo + hi * hi, 1e-12);
}

TEST(Mmd, NeedsTwoSamples) {
  try {
    mmd(cloud(1, 3, 0, 1), cloud(5, 3, 0, 2), {1.0});
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(e.kind(), ErrorKind::kContract);
  }
}

Cohort small_cohort(std::uint64_t seed) {
  CohortSpec spec;
  spec.n = 60;
  spec.time_steps = 6;
  spec.note_dim = 4;
  return impute(synthesize_cohort(spec, seed));
}

GanConfig quick_config(int epochs) {
  GanConfig c;
  c.epochs = epochs;
  c.batch_size = 16;
  c.decoder_hidden = 16;
  c.encoder_hidden = 8;
  return c;
}

TEST(TrainGan, SameSeedGivesIdenticalParameters) {
  const Cohort c = small_cohort(1);
  const TrainedGan a = train_gan(c, quick_config(3), 9);
  const TrainedGan b = train_gan(c, quick_config(3), 9);
  EXPECT_EQ(a.params.generator.entries(), b.params.generator.entries());
  EXPECT_EQ(a.params.discriminator.entries(), b.params.discriminator.entries());
  EXPECT_EQ(a.gate.mmd, b.gate.mmd);
  EXPECT_EQ(a.gate.dis_loss.size(), 3u);
  const TrainedGan other = train_gan(c, quick_config(3), 10);
  EXPECT_NE(a.params.generator.entries(), other.params.generator.entries());
}

TEST(TrainGan, ZeroEpochsReportsUntrainedGate) {
  const TrainedGan g = train_gan(small_cohort(2), quick_config(0), 1);
  EXPECT_EQ(g.gate.epochs, 0);
  EXPECT_GT(g.gate.mmd, 0.0);
  EXPECT_EQ(g.gate.passed, g.gate.mmd <= 0.68);
  EXPECT_TRUE(g.gate.dis_loss.empty());
}

TEST(TrainGan, CheckpointRoundTripsExactly) {
  const TrainedGan g = train_gan(small_cohort(3), quick_config(2), 4);
  const auto text = canonical_json(gan_to_json(g));
  const TrainedGan back = gan_from_json(nlohmann::json::parse(text));
  EXPECT_EQ(back.params.generator.entries(), g.params.generator.entries());
  EXPECT_EQ(back.params.discriminator.entries(), g.params.discriminator.entries());
  EXPECT_EQ(canonical_json(gan_to_json(back)), text);
}

TEST(TrainGan, DivergenceIsTrainingErrorWithEpoch) {
  GanConfig c = quick_config(3);
  c.learning_rate = 1e300;
  try {
    train_gan(small_cohort(4), c, 1);
    FAIL() << "expected divergence";
  } catch (const Error &e) {
    EXPECT_EQ(e.kind(), ErrorKind::kTraining);
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
  }
}

TEST(TrainGan, RequiresImputedCohort) {
  CohortSpec spec;
  spec.n = 60;
  spec.time_steps = 6;
  spec.missing_rate = 0.2;
  try {
    train_gan(synthesize_cohort(spec, 1), quick_config(1), 1);
    FAIL();
  } catch (const Error &e) {
    EXPECT_EQ(e.kind(), ErrorKind::kPipeline);
  }
}

} // namespace
} // namespace fairehr
