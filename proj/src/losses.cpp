#include "fairehr/losses.hpp"

#include <cmath>

#include "fairehr/error.hpp"

namespace fairehr {

using nlohmann::json;
using Var = ad::Var<double>;

void LossConfig::validate() const {
  require(tau > 0 && std::isfinite(tau), ErrorKind::kConfig, "loss: tau must be positive");
  require(gamma >= 0, ErrorKind::kConfig, "loss: gamma must be >= 0");
  require(alpha >= 0 && alpha <= 1, ErrorKind::kConfig, "loss: alpha must lie in [0, 1]");
}

json LossConfig::to_json() const {
  return {{"tau", tau},
          {"gamma", gamma},
          {"alpha", alpha},
          {"denominator_policy",
           denominator == DenominatorPolicy::kIncludePositive ? "include_positive" : "negatives_only"},
          {"real_negatives", real_negatives}};
}

LossConfig LossConfig::from_json(const json &doc) {
  LossConfig c;
  try {
    c.tau = doc.value("tau", c.tau);
    c.gamma = doc.value("gamma", c.gamma);
    c.alpha = doc.value("alpha", c.alpha);
    const auto policy = doc.value("denominator_policy", std::string("include_positive"));
    if (policy == "negatives_only") {
      c.denominator = DenominatorPolicy::kNegativesOnly;
    } else {
      require(policy == "include_positive", ErrorKind::kConfig, "unknown denominator_policy '" + policy + "'");
    }
    c.real_negatives = doc.value("real_negatives", c.real_negatives);
  } catch (const json::exception &e) {
    fail(ErrorKind::kConfig, std::string("loss config: ") + e.what());
  }
  c.validate();
  return c;
}

Var contrastive_fair_loss(const Var &e_adj, const Var &e_adj_syn, const LossConfig &config) {
  config.validate();
  const Eigen::Index n = e_adj.rows();
  require(n >= 1, ErrorKind::kContract, "contrastive loss: empty batch");
  require(e_adj_syn.rows() == n && e_adj_syn.cols() == e_adj.cols(), ErrorKind::kContract,
          "contrastive loss: real and synthetic batches must be paired");
  const bool negatives_only = config.denominator == DenominatorPolicy::kNegativesOnly;
  require(!negatives_only || n >= 2 || config.real_negatives, ErrorKind::kContract,
          "contrastive loss: negatives_only needs at least two pairs");
  auto &tape = e_adj.tape();
  const double inv_tau = 1.0 / config.tau;
  const Var logits = ad::scale(ad::cosine_sim_matrix(e_adj, e_adj_syn), inv_tau);
  Var denominator;
  if (!config.real_negatives) {
    denominator = ad::logsumexp_rows(logits, negatives_only);
  } else {
    // Excluded entries get a large negative offset, so exp() flushes them to 0.
    constexpr double kMasked = -1e4;
    Eigen::MatrixXd mask = Eigen::MatrixXd::Zero(n, 2 * n);
    for (Eigen::Index k = 0; k < n; ++k) {
      if (negatives_only) {
        mask(k, k) = kMasked;
      }
      mask(k, n + k) = kMasked;
    }
    const Var real_logits = ad::scale(ad::cosine_sim_matrix(e_adj, e_adj), inv_tau);
    denominator =
        ad::logsumexp_rows(ad::add(ad::concat_cols<double>({logits, real_logits}), tape.constant(mask)));
  }
  const Var nt_xent = ad::sum(ad::sub(denominator, ad::diagonal(logits)));
  if (config.gamma == 0.0) {
    return nt_xent;
  }
  const Var centered = ad::add_row(e_adj_syn, ad::neg(ad::mean(e_adj_syn, 0)));
  const Var spread = ad::scale(ad::sum(ad::square(centered)), config.gamma / static_cast<double>(n));
  return ad::add(nt_xent, spread);
}

Var cross_entropy(const Var &probabilities, const std::vector<int> &labels) {
  require(static_cast<Eigen::Index>(labels.size()) == probabilities.rows(), ErrorKind::kContract,
          "cross_entropy: one label per row required");
  require(probabilities.cols() == 2, ErrorKind::kDimension, "cross_entropy: expected two class columns");
  for (const int y : labels) {
    require(y == 0 || y == 1, ErrorKind::kContract, "cross_entropy: label must be 0 or 1");
  }
  return ad::neg(ad::sum(ad::log(ad::clamp(ad::pick(probabilities, labels), 1e-12, 1.0))));
}

Var total_loss(const Var &l_cf, const Var &l_ce, double alpha) {
  require(alpha >= 0 && alpha <= 1, ErrorKind::kConfig, "total_loss: alpha must lie in [0, 1]");
  return ad::add(ad::scale(l_cf, alpha), ad::scale(l_ce, 1.0 - alpha));
}

} // namespace fairehr
