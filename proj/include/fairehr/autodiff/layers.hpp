#pragma once

#include <string>

#include "fairehr/autodiff/ops.hpp"
#include "fairehr/autodiff/params.hpp"

namespace fairehr::ad {

/// x * W + b using "<prefix>.weight" / "<prefix>.bias".
template <typename S>
Var<S> linear(const Var<S> &x, const Bound<S> &p, const std::string &prefix) {
  return add_row(matmul(x, p[prefix + ".weight"]), p[prefix + ".bias"]);
}

/// Parameters of one pre-norm transformer encoder block of width `dim`.
void add_transformer_block(ParameterSet &params, const std::string &prefix, Eigen::Index dim,
                           Eigen::Index ff_dim, Rng &rng);

/// Multi-head self-attention over each sequence: projections q/k/v, per-head
/// scaled dot-product attention, output projection.
template <typename S>
Var<S> multi_head_attention(const Var<S> &x, const Bound<S> &p, const std::string &prefix,
                            int heads, Eigen::Index seq_len) {
  const Var<S> q = linear(x, p, prefix + ".query");
  const Var<S> k = linear(x, p, prefix + ".key");
  const Var<S> v = linear(x, p, prefix + ".value");
  return linear(attention(q, k, v, heads, seq_len), p, prefix + ".output");
}

/// Pre-norm block without positional encoding:
///   h   = x + MHA(LN1(x))
///   out = h + FF(LN2(h)),  FF = Linear -> ReLU -> Linear
template <typename S>
Var<S> transformer_block(const Var<S> &x, const Bound<S> &p, const std::string &prefix,
                         int heads, Eigen::Index seq_len) {
  require(heads >= 1 && x.cols() % heads == 0, ErrorKind::kConfig,
          "transformer block: model dimension " + std::to_string(x.cols()) +
              " not divisible by " + std::to_string(heads) + " heads");
  const Var<S> n1 = layer_norm(x, p[prefix + ".ln1.gain"], p[prefix + ".ln1.bias"]);
  const Var<S> h = add(x, multi_head_attention(n1, p, prefix + ".attn", heads, seq_len));
  const Var<S> n2 = layer_norm(h, p[prefix + ".ln2.gain"], p[prefix + ".ln2.bias"]);
  const Var<S> ff = linear(relu(linear(n2, p, prefix + ".ff1")), p, prefix + ".ff2");
  return add(h, ff);
}

} // namespace fairehr::ad
