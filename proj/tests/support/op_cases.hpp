#pragma once

// One finite-difference case per differentiable tensor op; shared by the unit
// suite and the acceptance gate.

#include <string>
#include <vector>

#include "fairehr/autodiff/layers.hpp"
#include "fairehr/autodiff/ops.hpp"
#include "support/gradcheck.hpp"

namespace fairehr::testing {

struct OpCase {
  std::string name;
  LossBuilder build;
  std::vector<Eigen::MatrixXd> inputs;
};

/// Weighted sum so every output coordinate gets a distinct upstream gradient.
inline ad::Var<double> weighted_sum(ad::Tape<double> &t, const ad::Var<double> &y,
                                    std::uint64_t seed) {
  const auto w = t.constant(random_matrix(y.rows(), y.cols(), seed, 0.5, 1.5));
  return ad::sum(ad::mul(y, w));
}

inline std::vector<OpCase> differentiable_op_cases() {
  using V = ad::Var<double>;
  using T = ad::Tape<double>;
  using Args = std::vector<V>;
  std::vector<OpCase> cases;
  auto add_case = [&](std::string name, LossBuilder build, std::vector<Eigen::MatrixXd> in) {
    cases.push_back({std::move(name), std::move(build), std::move(in)});
  };

  add_case("matmul",
           [](T &t, const Args &a) { return weighted_sum(t, ad::matmul(a[0], a[1]), 1); },
           {random_matrix(3, 4, 11), random_matrix(4, 2, 12)});
  add_case("transpose",
           [](T &t, const Args &a) { return weighted_sum(t, ad::transpose(a[0]), 2); },
           {random_matrix(3, 2, 13)});
  add_case("add", [](T &t, const Args &a) { return weighted_sum(t, ad::add(a[0], a[1]), 3); },
           {random_matrix(2, 3, 14), random_matrix(2, 3, 15)});
  add_case("add_scalar_broadcast",
           [](T &t, const Args &a) { return weighted_sum(t, ad::add(a[0], a[1]), 4); },
           {random_matrix(1, 1, 16), random_matrix(2, 3, 17)});
  add_case("sub", [](T &t, const Args &a) { return weighted_sum(t, ad::sub(a[0], a[1]), 5); },
           {random_matrix(2, 3, 18), random_matrix(2, 3, 19)});
  add_case("mul", [](T &t, const Args &a) { return weighted_sum(t, ad::mul(a[0], a[1]), 6); },
           {random_matrix(2, 3, 20), random_matrix(2, 3, 21)});
  add_case("mul_scalar_broadcast",
           [](T &t, const Args &a) { return weighted_sum(t, ad::mul(a[0], a[1]), 7); },
           {random_matrix(2, 3, 22), random_matrix(1, 1, 23)});
  add_case("scale", [](T &t, const Args &a) { return weighted_sum(t, ad::scale(a[0], -1.7), 8); },
           {random_matrix(2, 2, 24)});
  add_case("sigmoid", [](T &t, const Args &a) { return weighted_sum(t, ad::sigmoid(a[0]), 9); },
           {random_matrix(3, 3, 25, -3, 3)});
  add_case("relu", [](T &t, const Args &a) { return weighted_sum(t, ad::relu(a[0]), 10); },
           {random_matrix(3, 3, 26, 0.05, 1.0)});
  add_case("relu_negative",
           [](T &t, const Args &a) { return weighted_sum(t, ad::relu(a[0]), 10); },
           {random_matrix(2, 2, 26, -1.0, -0.05)});
  add_case("tanh", [](T &t, const Args &a) { return weighted_sum(t, ad::tanh(a[0]), 11); },
           {random_matrix(3, 3, 27, -2, 2)});
  add_case("exp", [](T &t, const Args &a) { return weighted_sum(t, ad::exp(a[0]), 12); },
           {random_matrix(3, 3, 28)});
  add_case("log", [](T &t, const Args &a) { return weighted_sum(t, ad::log(a[0]), 13); },
           {random_matrix(3, 3, 29, 0.2, 3.0)});
  add_case("square", [](T &t, const Args &a) { return weighted_sum(t, ad::square(a[0]), 14); },
           {random_matrix(2, 3, 30)});
  add_case("sqrt", [](T &t, const Args &a) { return weighted_sum(t, ad::sqrt(a[0]), 15); },
           {random_matrix(2, 3, 31, 0.2, 2.0)});
  add_case("clamp",
           [](T &t, const Args &a) { return weighted_sum(t, ad::clamp(a[0], -0.5, 0.5), 16); },
           {(Eigen::MatrixXd(1, 4) << -0.9, -0.2, 0.3, 0.8).finished()});
  add_case("sum_all", [](T &t, const Args &a) { return ad::sum(ad::square(a[0])); },
           {random_matrix(3, 2, 32)});
  add_case("sum_axis0", [](T &t, const Args &a) { return weighted_sum(t, ad::sum(a[0], 0), 17); },
           {random_matrix(3, 2, 33)});
  add_case("sum_axis1", [](T &t, const Args &a) { return weighted_sum(t, ad::sum(a[0], 1), 18); },
           {random_matrix(3, 2, 34)});
  add_case("mean_axis0",
           [](T &t, const Args &a) { return weighted_sum(t, ad::mean(a[0], 0), 19); },
           {random_matrix(3, 2, 35)});
  add_case("max_all", [](T &t, const Args &a) { return ad::scale(ad::max(a[0]), 2.0); },
           {(Eigen::MatrixXd(2, 2) << 0.1, 0.9, -0.4, 0.3).finished()});
  add_case("max_axis1", [](T &t, const Args &a) { return weighted_sum(t, ad::max(a[0], 1), 20); },
           {(Eigen::MatrixXd(2, 3) << 0.1, 0.9, -0.4, 0.3, -0.2, 0.5).finished()});
  add_case("softmax_rows",
           [](T &t, const Args &a) { return weighted_sum(t, ad::softmax(a[0], 1), 21); },
           {random_matrix(3, 4, 36, -2, 2)});
  add_case("softmax_cols",
           [](T &t, const Args &a) { return weighted_sum(t, ad::softmax(a[0], 0), 22); },
           {random_matrix(3, 4, 37, -2, 2)});
  add_case("logsumexp_rows",
           [](T &t, const Args &a) { return weighted_sum(t, ad::logsumexp_rows(a[0]), 23); },
           {random_matrix(3, 3, 38, -2, 2)});
  add_case("logsumexp_rows_offdiag",
           [](T &t, const Args &a) { return weighted_sum(t, ad::logsumexp_rows(a[0], true), 24); },
           {random_matrix(3, 3, 39, -2, 2)});
  add_case("add_row",
           [](T &t, const Args &a) { return weighted_sum(t, ad::add_row(a[0], a[1]), 25); },
           {random_matrix(3, 2, 40), random_matrix(1, 2, 41)});
  add_case("mul_row",
           [](T &t, const Args &a) { return weighted_sum(t, ad::mul_row(a[0], a[1]), 26); },
           {random_matrix(3, 2, 42), random_matrix(1, 2, 43)});
  add_case("concat_cols",
           [](T &t, const Args &a) { return weighted_sum(t, ad::concat_cols<double>({a[0], a[1]}), 27); },
           {random_matrix(2, 2, 44), random_matrix(2, 3, 45)});
  add_case("concat_rows",
           [](T &t, const Args &a) { return weighted_sum(t, ad::concat_rows<double>({a[0], a[1]}), 28); },
           {random_matrix(2, 2, 46), random_matrix(1, 2, 47)});
  add_case("slice_rows",
           [](T &t, const Args &a) { return weighted_sum(t, ad::slice_rows(a[0], 1, 2), 29); },
           {random_matrix(4, 2, 48)});
  add_case("reshape",
           [](T &t, const Args &a) { return weighted_sum(t, ad::reshape(a[0], 3, 2), 30); },
           {random_matrix(2, 3, 49)});
  add_case("pick",
           [](T &t, const Args &a) { return weighted_sum(t, ad::pick(a[0], {1, 0, 1}), 31); },
           {random_matrix(3, 2, 50)});
  add_case("diagonal",
           [](T &t, const Args &a) { return weighted_sum(t, ad::diagonal(a[0]), 32); },
           {random_matrix(3, 3, 51)});
  add_case("cosine_sim",
           [](T &t, const Args &a) { return ad::cosine_sim(a[0], a[1]); },
           {random_matrix(1, 5, 52), random_matrix(1, 5, 53)});
  add_case("cosine_sim_matrix",
           [](T &t, const Args &a) { return weighted_sum(t, ad::cosine_sim_matrix(a[0], a[1]), 33); },
           {random_matrix(3, 4, 54), random_matrix(3, 4, 55)});
  add_case("conv1d",
           [](T &t, const Args &a) { return weighted_sum(t, ad::conv1d(a[0], a[1], 3, 1, 6), 34); },
           {random_matrix(6, 2, 56), random_matrix(3, 6, 57)});
  add_case("conv1d_stride2_batch2",
           [](T &t, const Args &a) { return weighted_sum(t, ad::conv1d(a[0], a[1], 2, 2, 5), 35); },
           {random_matrix(10, 3, 58), random_matrix(2, 6, 59)});
  add_case("sequence_mean",
           [](T &t, const Args &a) { return weighted_sum(t, ad::sequence_mean(a[0], 3), 36); },
           {random_matrix(6, 2, 60)});
  add_case("layer_norm",
           [](T &t, const Args &a) { return weighted_sum(t, ad::layer_norm(a[0], a[1], a[2]), 37); },
           {random_matrix(3, 5, 61), random_matrix(1, 5, 62), random_matrix(1, 5, 63)});
  add_case("attention",
           [](T &t, const Args &a) {
             return weighted_sum(t, ad::attention(a[0], a[1], a[2], 2, 3), 38);
           },
           {random_matrix(6, 4, 64), random_matrix(6, 4, 65), random_matrix(6, 4, 66)});
  add_case("transformer_block_4x8_2heads",
           [](T &t, const Args &a) {
             ad::ParameterSet p;
             Rng rng(7);
             ad::add_transformer_block(p, "blk", 8, 16, rng);
             // Randomize norms/biases too so every path is exercised.
             for (auto &[name, value] : p.entries()) {
               value += random_matrix(value.rows(), value.cols(), derive_seed(0, name), -0.1, 0.1);
             }
             const ad::Bound<double> bound(t, p, false);
             return weighted_sum(t, ad::transformer_block(a[0], bound, "blk", 2, 4), 39);
           },
           {random_matrix(4, 8, 67)});
  return cases;
}

} // namespace fairehr::testing
