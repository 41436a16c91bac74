#pragma once

#include <vector>

#include "fairehr/autodiff/ops.hpp"
#include "json.hpp"

namespace fairehr {

enum class DenominatorPolicy { kIncludePositive, kNegativesOnly };

struct LossConfig {
  double tau = 0.5;
  double gamma = 0.1;
  double alpha = 0.6;
  DenominatorPolicy denominator = DenominatorPolicy::kIncludePositive;
  /// Also repel each real embedding from the other real embeddings.
  bool real_negatives = false;

  void validate() const;
  nlohmann::json to_json() const;
  static LossConfig from_json(const nlohmann::json &doc);
};

/// Batch-summed NT-Xent over cosine similarities between e_adj (row k) and
/// e_adj_syn (row j; row k is k's positive), plus gamma times the mean
/// squared distance of the synthetic rows from their batch mean.
ad::Var<double> contrastive_fair_loss(const ad::Var<double> &e_adj, const ad::Var<double> &e_adj_syn,
                                      const LossConfig &config);

/// -sum_k log p_k[y_k], probabilities clamped below at 1e-12.
ad::Var<double> cross_entropy(const ad::Var<double> &probabilities, const std::vector<int> &labels);

ad::Var<double> total_loss(const ad::Var<double> &l_cf, const ad::Var<double> &l_ce, double alpha);

} // namespace fairehr
