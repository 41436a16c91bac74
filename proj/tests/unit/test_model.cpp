#include <gtest/gtest.h>

#include <cmath>
#include <functional>

#include "fairehr/error.hpp"
#include "fairehr/losses.hpp"
#include "fairehr/model.hpp"
#include "support/gradcheck.hpp"
#include "support/model_check.hpp"

namespace fairehr {
namespace {

using Tape = ad::Tape<double>;
using Eigen::MatrixXd;
using namespace testing::model_check;

ErrorKind kind_of(const std::function<void()> &fn) {
  try {
    fn();
  } catch (const Error &e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::kIo;
}


TEST(ModelParams, ShapesAgree) {
  const Cohort cohort = small_cohort();
  const ModelParams m = small_model(cohort);
  const ModelConfig c = small_config();
  EXPECT_EQ(m.params.at("dr.w").rows(), 1);
  EXPECT_EQ(m.params.at("dr.w").cols(), c.fused_dim);
  EXPECT_TRUE(m.params.at("dr.w").isZero());
  EXPECT_EQ(m.params.at("demo.l2.weight").cols(), c.embedding_dim);
  EXPECT_EQ(m.params.at("long.proj.weight").cols(), c.embedding_dim);
  EXPECT_EQ(m.params.at("note.proj.weight").cols(), c.embedding_dim);
  EXPECT_EQ(m.params.at("fusion.l1.weight").rows(), 3 * c.embedding_dim);
  EXPECT_EQ(m.params.at("fusion.l2.weight").cols(), c.fused_dim);
  EXPECT_EQ(m.params.at("clf.l1.weight").rows(), c.fused_dim);
  EXPECT_EQ(m.params.at("clf.l2.weight").cols(), 2);
  EXPECT_EQ(m.params.at("long.conv.weight").cols(), c.conv_width * 4);
  EXPECT_EQ(m.demographic_width(), 2 + 4 + 2 + 3 + 1);
}

TEST(ModelParams, HeadsMustDivideChannels) {
  ModelConfig c = small_config();
  c.heads = 3;
  EXPECT_EQ(kind_of([&] { c.validate(); }), ErrorKind::kConfig);
}

TEST(ModelParams, CheckpointRoundTripIsExact) {
  const Cohort cohort = small_cohort();
  const ModelParams m = small_model(cohort);
  const ModelParams back = ModelParams::from_json(nlohmann::json::parse(m.to_json().dump()));
  EXPECT_EQ(back.to_json(), m.to_json());
  std::vector<const PatientRecord *> rows;
  for (const auto &r : cohort.records) rows.push_back(&r);
  const ModalityFlags all;
  const auto a = predict(record_inputs(rows, cohort.schema, m, all), m, all, true);
  const auto b = predict(record_inputs(rows, cohort.schema, back, all), back, all, true);
  EXPECT_EQ(a.probabilities, b.probabilities);
  EXPECT_EQ(kind_of([] { ModelParams::from_json({{"format", "other"}}); }), ErrorKind::kSchema);
}

TEST(Demographics, OneHotLayout) {
  AttributeVocabularies v{{"f", "m"}, {"a", "b", "c"}, {"h", "n"}, {"x", "y"}};
  SensitiveAttributes s{1, 2, 0, 65, 1};
  const Eigen::RowVectorXd x = demographic_features(s, v);
  Eigen::RowVectorXd expected(10);
  expected << 0, 1, 0, 0, 1, 1, 0, 0, 1, 0.65;
  EXPECT_EQ(x, expected);
  s.race = 3;
  EXPECT_EQ(kind_of([&] { demographic_features(s, v); }), ErrorKind::kSchema);
}

TEST(Demographics, DeterministicAndShaped) {
  const Cohort cohort = small_cohort();
  const ModelParams m = small_model(cohort);
  Tape t;
  const BoundParams p(t, m.params, false);
  PatientRecord twin = cohort.records[0];
  twin.id = "twin";
  const ModelInputs in = record_inputs({&cohort.records[0], &twin}, cohort.schema, m, ModalityFlags{});
  const auto e_d = encode_demographics(t.constant(in.demographics), p);
  EXPECT_EQ(e_d.cols(), small_config().embedding_dim);
  EXPECT_EQ(e_d.value().row(0), e_d.value().row(1));
}

TEST(Demographics, GradientThroughOneHot) {
  const Cohort cohort = small_cohort(4);
  const ModelParams m = small_model(cohort);
  std::vector<const PatientRecord *> rows;
  for (const auto &r : cohort.records) rows.push_back(&r);
  const ModelInputs in = record_inputs(rows, cohort.schema, m, ModalityFlags{});
  const double err = param_grad_error(
      m, [&](const BoundParams &p) { return probe_sum(encode_demographics(p["dr.w"].tape().constant(in.demographics), p), 3); },
      {"demo.l1.weight", "demo.l1.bias", "demo.l2.weight", "demo.l2.bias"});
  EXPECT_LT(err, 1e-4);
}

TEST(Longitudinal, ConstantSequenceIgnoresTimeOrder) {
  const Cohort cohort = small_cohort();
  const ModelParams m = small_model(cohort);
  Tape t;
  const BoundParams p(t, m.params, false);
  MatrixXd constant = testing::random_matrix(1, 4, 7).replicate(8, 1);
  MatrixXd reversed = constant.colwise().reverse();
  const auto a = encode_longitudinal(t.constant(constant), p, m);
  const auto b = encode_longitudinal(t.constant(reversed), p, m);
  EXPECT_EQ(a.value(), b.value());
  EXPECT_EQ(a.rows(), 1);
  EXPECT_EQ(a.cols(), small_config().embedding_dim);
}

TEST(Longitudinal, ShapeForAnyValidLength) {
  for (const int steps : {3, 4, 8, 13}) {
    CohortSpec spec;
    spec.n = 3;
    spec.time_steps = steps;
    spec.features = 4;
    spec.note_dim = 6;
    spec.missing_rate = 0.0;
    const Cohort cohort = synthesize_cohort(spec, 1);
    const ModelParams m = small_model(cohort);
    Tape t;
    const BoundParams p(t, m.params, false);
    const auto e = encode_longitudinal(t.constant(testing::random_matrix(2 * steps, 4, 9)), p, m);
    EXPECT_EQ(e.rows(), 2);
    EXPECT_EQ(e.cols(), small_config().embedding_dim);
  }
}

TEST(Longitudinal, ShorterThanKernelIsDimensionError) {
  CohortSpec spec;
  spec.n = 3;
  spec.time_steps = 2;
  spec.features = 4;
  spec.note_dim = 6;
  const Cohort cohort = synthesize_cohort(spec, 1);
  EXPECT_EQ(kind_of([&] { small_model(cohort); }), ErrorKind::kDimension);

  const Cohort ok = small_cohort();
  const ModelParams m = small_model(ok);
  Tape t;
  const BoundParams p(t, m.params, false);
  ModelParams short_shape = m;
  short_shape.time_steps = 2;
  EXPECT_EQ(kind_of([&] { encode_longitudinal(t.constant(testing::random_matrix(4, 4, 1)), p, short_shape); }),
            ErrorKind::kDimension);
}

TEST(Longitudinal, GradientOnRandomSequence) {
  const Cohort cohort = small_cohort();
  const ModelParams m = small_model(cohort);
  const auto result = testing::grad_check(
      [&](Tape &t, const std::vector<ad::Var<double>> &v) {
        const BoundParams p(t, m.params, false);
        return probe_sum(encode_longitudinal(v[0], p, m), 4);
      },
      {testing::random_matrix(8, 4, 17)});
  EXPECT_LT(result.max_relative_error, 1e-4);
  // The key bias adds the same score to every key of a query, which the
  // softmax cancels; its gradient is identically zero and is checked as such.
  std::vector<std::string> names;
  for (const auto &[name, value] : m.params.entries()) {
    if (name.rfind("long.", 0) == 0 && name != "long.block.attn.key.bias") names.push_back(name);
  }
  const MatrixXd x = testing::random_matrix(16, 4, 18);
  auto loss = [&](const BoundParams &p) { return probe_sum(encode_longitudinal(p["dr.w"].tape().constant(x), p, m), 5); };
  EXPECT_LT(param_grad_error(m, loss, names), 1e-4);
  Tape t;
  const BoundParams p(t, m.params, true);
  t.backward(loss(p));
  EXPECT_LT(p.gradients().at("long.block.attn.key.bias").cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Notes, ZeroInputAndAffineIdentity) {
  const Cohort cohort = small_cohort();
  ModelParams m = small_model(cohort);
  m.params.at("note.proj.bias") = testing::random_matrix(1, 4, 2);
  Tape t;
  const BoundParams p(t, m.params, false);
  const auto zero = encode_notes(t.constant(MatrixXd::Zero(1, 6)), p, m);
  EXPECT_EQ(zero.value(), m.params.at("note.proj.bias").cwiseMax(0.0));
  const MatrixXd u = testing::random_matrix(1, 6, 3);
  const MatrixXd v = testing::random_matrix(1, 6, 4);
  auto pre = [&](const MatrixXd &x) { return ad::linear(t.constant(x), p, "note.proj").value(); };
  EXPECT_LT((pre(u + v) - (pre(u) + pre(v) - m.params.at("note.proj.bias"))).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_EQ(kind_of([&] { encode_notes(t.constant(MatrixXd::Zero(1, 5)), p, m); }), ErrorKind::kSchema);
}

TEST(Notes, Gradient) {
  const Cohort cohort = small_cohort();
  const ModelParams m = small_model(cohort);
  const auto result = testing::grad_check(
      [&](Tape &t, const std::vector<ad::Var<double>> &v) {
        const BoundParams p(t, m.params, false);
        return probe_sum(encode_notes(v[0], p, m), 6);
      },
      {testing::random_matrix(3, 6, 19)});
  EXPECT_LT(result.max_relative_error, 1e-4);
}

TEST(Fusion, OrderMattersAndShape) {
  const Cohort cohort = small_cohort();
  const ModelParams m = small_model(cohort);
  Tape t;
  const BoundParams p(t, m.params, false);
  const auto a = t.constant(testing::random_matrix(2, 4, 1));
  const auto b = t.constant(testing::random_matrix(2, 4, 2));
  const auto c = t.constant(testing::random_matrix(2, 4, 3));
  const auto abc = fuse(a, b, c, p, m);
  const auto bca = fuse(b, c, a, p, m);
  EXPECT_EQ(abc.cols(), small_config().fused_dim);
  EXPECT_GT((abc.value() - bca.value()).cwiseAbs().maxCoeff(), 1e-6);
  const auto wrong = t.constant(testing::random_matrix(2, 3, 4));
  EXPECT_EQ(kind_of([&] { fuse(a, wrong, c, p, m); }), ErrorKind::kContract);
}

TEST(Fusion, Gradient) {
  const Cohort cohort = small_cohort();
  const ModelParams m = small_model(cohort);
  const auto result = testing::grad_check(
      [&](Tape &t, const std::vector<ad::Var<double>> &v) {
        const BoundParams p(t, m.params, false);
        return probe_sum(fuse(v[0], v[1], v[2], p, m), 8);
      },
      {testing::random_matrix(2, 4, 21), testing::random_matrix(2, 4, 22), testing::random_matrix(2, 4, 23)});
  EXPECT_LT(result.max_relative_error, 1e-4);
}

TEST(DynamicRelevance, Anchors) {
  Tape t;
  MatrixXd e(1, 2);
  e << 2, 4;
  const auto ev = t.constant(e);
  const auto w = t.leaf(MatrixXd::Zero(1, 2), true);
  const auto half = dynamic_relevance(ev, w);
  EXPECT_EQ(half.value(), (MatrixXd(1, 2) << 1, 2).finished());
  t.backward(ad::sum(half));
  EXPECT_NEAR(t.grad(w)(0, 0), 0.5, 1e-15);
  EXPECT_NEAR(t.grad(w)(0, 1), 1.0, 1e-15);
  const auto saturated = dynamic_relevance(ev, t.constant(MatrixXd::Constant(1, 2, 30.0)));
  EXPECT_LT((saturated.value() - e).cwiseAbs().maxCoeff(), 1e-9);
  EXPECT_EQ(kind_of([&] { dynamic_relevance(ev, t.constant(MatrixXd::Zero(1, 3))); }), ErrorKind::kContract);
}

TEST(DynamicRelevance, NeverAmplifies) {
  Tape t;
  for (std::uint64_t trial = 0; trial < 50; ++trial) {
    const MatrixXd e = testing::random_matrix(3, 5, derive_seed(1, trial), -5, 5);
    const MatrixXd w = testing::random_matrix(1, 5, derive_seed(2, trial), -20, 20);
    const MatrixXd out = dynamic_relevance(t.constant(e), t.constant(w)).value();
    EXPECT_TRUE((out.array().abs() <= e.array().abs()).all());
  }
}

TEST(Classifier, ZeroWeightsAreUniform) {
  const Cohort cohort = small_cohort();
  ModelParams m = small_model(cohort);
  for (const char *name : {"clf.l1.weight", "clf.l1.bias", "clf.l2.weight", "clf.l2.bias"}) {
    m.params.at(name).setZero();
  }
  Tape t;
  const BoundParams p(t, m.params, false);
  const auto probs = classify(t.constant(testing::random_matrix(3, 6, 5)), p);
  EXPECT_TRUE(probs.value().isApprox(MatrixXd::Constant(3, 2, 0.5)));
}

TEST(Classifier, ProbabilitiesAreValid) {
  const Cohort cohort = small_cohort();
  const ModelParams m = small_model(cohort);
  Tape t;
  const BoundParams p(t, m.params, false);
  const MatrixXd probs = classify(t.constant(testing::random_matrix(20, 6, 6, -10, 10)), p).value();
  EXPECT_TRUE((probs.array() > 0).all() && (probs.array() < 1).all());
  EXPECT_LT((probs.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
}

TEST(Classifier, CrossEntropyGradient) {
  const Cohort cohort = small_cohort();
  const ModelParams m = small_model(cohort);
  const auto result = testing::grad_check(
      [&](Tape &t, const std::vector<ad::Var<double>> &v) {
        const BoundParams p(t, m.params, false);
        return cross_entropy(classify(v[0], p), {0, 1, 1});
      },
      {testing::random_matrix(3, 6, 24)});
  EXPECT_LT(result.max_relative_error, 1e-4);
}

TEST(ForwardPair, IdenticalCounterpartTiesWeights) {
  const Cohort cohort = small_cohort();
  ModelParams m = small_model(cohort);
  m.params.at("dr.w") = testing::random_matrix(1, 6, 8);
  Tape t;
  const BoundParams p(t, m.params, false);
  const auto &r = cohort.records[3];
  const auto out = forward_pair(r, mirror(r), cohort.schema, p, m, ModalityFlags{}, true);
  EXPECT_EQ(out.bundle.e_adj_syn.value(), out.bundle.e_adj.value());
  EXPECT_EQ(out.bundle.e_syn.value(), out.bundle.e.value());
  const MatrixXd gate = (1.0 / (1.0 + (-m.params.at("dr.w").array()).exp())).matrix();
  EXPECT_LT((out.bundle.e_adj.value() - out.bundle.e.value().cwiseProduct(gate)).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(ForwardPair, ClassifierSeesOnlyRealPath) {
  const Cohort cohort = small_cohort();
  const ModelParams m = small_model(cohort);
  Tape t;
  const BoundParams p(t, m.params, false);
  const auto &r = cohort.records[2];
  CounterpartRecord other = mirror(r);
  other.s_syn.race = (r.s.race + 1) % 4;
  other.s_syn.age = 88;
  other.longitudinal_syn.array() += 3.0;
  other.note_embedding_syn.array() *= -2.0;
  const auto a = forward_pair(r, mirror(r), cohort.schema, p, m, ModalityFlags{}, true);
  const auto b = forward_pair(r, other, cohort.schema, p, m, ModalityFlags{}, true);
  EXPECT_EQ(a.probabilities.value(), b.probabilities.value());
  EXPECT_NE(a.bundle.e_syn.value(), b.bundle.e_syn.value());
}

TEST(ForwardPair, MismatchedPairIsContractError) {
  const Cohort cohort = small_cohort();
  const ModelParams m = small_model(cohort);
  Tape t;
  const BoundParams p(t, m.params, false);
  EXPECT_EQ(kind_of([&] {
              forward_pair(cohort.records[0], mirror(cohort.records[1]), cohort.schema, p, m, ModalityFlags{}, true);
            }),
            ErrorKind::kContract);
}

TEST(ForwardPair, NoDynamicRelevanceMeansIdentity) {
  const Cohort cohort = small_cohort();
  ModelParams m = small_model(cohort);
  m.params.at("dr.w") = testing::random_matrix(1, 6, 9);
  Tape t;
  const BoundParams p(t, m.params, false);
  const auto out = forward_pair(cohort.records[0], mirror(cohort.records[0]), cohort.schema, p, m, ModalityFlags{}, false);
  EXPECT_EQ(out.bundle.e_adj.value(), out.bundle.e.value());
}

TEST(Modalities, DisabledModalityIsNeverRead) {
  const Cohort cohort = small_cohort();
  const ModelParams m = small_model(cohort);
  std::vector<const PatientRecord *> rows;
  for (const auto &r : cohort.records) rows.push_back(&r);
  const ModalityFlags only_long{false, true, false};
  DataAccess access;
  const ModelInputs in = record_inputs(rows, cohort.schema, m, only_long, &access);
  EXPECT_EQ(access.demographics, 0u);
  EXPECT_EQ(access.notes, 0u);
  EXPECT_EQ(access.longitudinal, rows.size());
  EXPECT_EQ(in.demographics.size(), 0);
  EXPECT_EQ(in.notes.size(), 0);

  // scrambling the unused fields changes nothing
  Cohort scrambled = cohort;
  for (auto &r : scrambled.records) {
    r.s.gender = 1 - r.s.gender;
    r.s.age = 99;
    r.note_embedding.setConstant(7.0);
  }
  std::vector<const PatientRecord *> rows2;
  for (const auto &r : scrambled.records) rows2.push_back(&r);
  const auto a = predict(in, m, only_long, true);
  const auto b = predict(record_inputs(rows2, scrambled.schema, m, only_long), m, only_long, true);
  EXPECT_EQ(a.probabilities, b.probabilities);
  EXPECT_EQ(only_long.label(), "L");
  EXPECT_EQ((ModalityFlags{true, false, true}).label(), "D+N");
}

TEST(Modalities, NoModalityIsConfigError) {
  const Cohort cohort = small_cohort();
  const ModelParams m = small_model(cohort);
  const ModalityFlags none{false, false, false};
  const ModelInputs in = record_inputs({&cohort.records[0]}, cohort.schema, m, none);
  EXPECT_EQ(kind_of([&] { predict(in, m, none, true); }), ErrorKind::kConfig);
}

TEST(Modalities, UnimputedLongitudinalIsPipelineError) {
  Cohort cohort = small_cohort();
  const ModelParams m = small_model(cohort);
  cohort.records[0].longitudinal(2, 1) = std::nan("");
  EXPECT_EQ(kind_of([&] { record_inputs({&cohort.records[0]}, cohort.schema, m, ModalityFlags{}); }),
            ErrorKind::kPipeline);
}

TEST(EndToEnd, TotalLossGradientOnFourPatients) { EXPECT_LT(end_to_end_grad_error(), 1e-4); }

TEST(EndToEnd, GradientsReachEveryParameterGroup) {
  const Cohort cohort = small_cohort();
  const ModelParams m = small_model(cohort);
  const Batch b = four_patients(m, cohort);
  const LossConfig lc;
  enum class Term { kTotal, kContrastive, kCrossEntropy };
  auto grads = [&](Term term) {
    Tape t;
    const BoundParams p(t, m.params, true);
    const auto out = forward_batch(b.real, b.synthetic, p, m, ModalityFlags{}, true);
    const auto l_cf = contrastive_fair_loss(out.bundle.e_adj, out.bundle.e_adj_syn, lc);
    const auto l_ce = cross_entropy(out.probabilities, b.labels);
    t.backward(term == Term::kTotal ? total_loss(l_cf, l_ce, lc.alpha) : term == Term::kContrastive ? l_cf : l_ce);
    return p.gradients();
  };
  auto group_norm = [](const ad::ParameterSet &g, const std::string &prefix) {
    double sq = 0.0;
    for (const auto &[name, value] : g.entries()) {
      if (name.rfind(prefix, 0) == 0) sq += value.squaredNorm();
    }
    return std::sqrt(sq);
  };
  const auto total = grads(Term::kTotal);
  for (const char *group : {"demo.", "long.", "note.", "fusion.", "dr.", "clf."}) {
    EXPECT_GT(group_norm(total, group), 0.0) << group;
  }
  const auto cf_only = grads(Term::kContrastive);
  const auto ce_only = grads(Term::kCrossEntropy);
  EXPECT_EQ(group_norm(cf_only, "clf."), 0.0);
  EXPECT_GT(group_norm(ce_only, "clf."), 0.0);
  EXPECT_GT(group_norm(cf_only, "dr."), 0.0);
  EXPECT_GT(group_norm(ce_only, "dr."), 0.0);
}

TEST(EndToEnd, FiniteOutputsOnFiniteInputs) {
  const Cohort cohort = small_cohort();
  const ModelParams m = small_model(cohort);
  const Batch b = four_patients(m, cohort);
  Tape t;
  const BoundParams p(t, m.params, false);
  const auto out = forward_batch(b.real, b.synthetic, p, m, ModalityFlags{}, true);
  EXPECT_TRUE(out.bundle.e_adj.value().allFinite());
  EXPECT_TRUE(out.bundle.e_adj_syn.value().allFinite());
  EXPECT_TRUE(out.probabilities.value().allFinite());
}

} // namespace
} // namespace fairehr
