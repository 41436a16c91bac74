#include "fairehr/autodiff/layers.hpp"

namespace fairehr::ad {

void add_transformer_block(ParameterSet &params, const std::string &prefix, Eigen::Index dim,
                           Eigen::Index ff_dim, Rng &rng) {
  params.set(prefix + ".ln1.gain", Eigen::MatrixXd::Ones(1, dim));
  params.set(prefix + ".ln1.bias", Eigen::MatrixXd::Zero(1, dim));
  params.set(prefix + ".ln2.gain", Eigen::MatrixXd::Ones(1, dim));
  params.set(prefix + ".ln2.bias", Eigen::MatrixXd::Zero(1, dim));
  for (const char *name : {".attn.query", ".attn.key", ".attn.value", ".attn.output"}) {
    params.add_linear(prefix + name, dim, dim, rng);
  }
  params.add_linear(prefix + ".ff1", dim, ff_dim, rng);
  params.add_linear(prefix + ".ff2", ff_dim, dim, rng);
}

} // namespace fairehr::ad
