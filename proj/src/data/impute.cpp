#include <cmath>
#include <vector>

#include "fairehr/data.hpp"
#include "fairehr/error.hpp"

namespace fairehr {

Cohort impute(const Cohort &cohort, int sweeps) {
  require(sweeps >= 0, ErrorKind::kConfig, "imputation sweeps must be >= 0");
  const Eigen::Index t_len = cohort.schema.time_steps;
  const Eigen::Index n_feat = cohort.schema.feature_count();
  const Eigen::Index rows = static_cast<Eigen::Index>(cohort.records.size()) * t_len;

  // Stack per-time-step vectors: row (record, t).
  Eigen::MatrixXd x(rows, n_feat);
  BoolMatrix seen(rows, n_feat);
  for (std::size_t i = 0; i < cohort.records.size(); ++i) {
    const auto &r = cohort.records[i];
    const Eigen::Index base = static_cast<Eigen::Index>(i) * t_len;
    x.middleRows(base, t_len) = r.longitudinal;
    // An entry counts as observed only if it also carries a finite value.
    seen.middleRows(base, t_len) = r.observed && r.longitudinal.array().isFinite();
  }

  std::vector<Eigen::Index> incomplete;
  for (Eigen::Index f = 0; f < n_feat; ++f) {
    const Eigen::Index observed = seen.col(f).count();
    require(observed > 0, ErrorKind::kImputation,
            "feature '" + cohort.schema.features[static_cast<std::size_t>(f)].name +
                "' has no observed values");
    if (observed == rows) {
      continue;
    }
    incomplete.push_back(f);
    double total = 0.0;
    for (Eigen::Index r = 0; r < rows; ++r) {
      if (seen(r, f)) {
        total += x(r, f);
      }
    }
    const double mean = total / static_cast<double>(observed);
    for (Eigen::Index r = 0; r < rows; ++r) {
      if (!seen(r, f)) {
        x(r, f) = mean;
      }
    }
  }

  for (int sweep = 0; sweep < sweeps && !incomplete.empty(); ++sweep) {
    for (const Eigen::Index f : incomplete) {
      // Design: intercept + every other feature.
      const Eigen::Index n_obs = seen.col(f).count();
      Eigen::MatrixXd design(n_obs, n_feat);
      Eigen::VectorXd target(n_obs);
      Eigen::Index k = 0;
      for (Eigen::Index r = 0; r < rows; ++r) {
        if (!seen(r, f)) {
          continue;
        }
        design(k, 0) = 1.0;
        for (Eigen::Index c = 0, j = 1; c < n_feat; ++c) {
          if (c != f) {
            design(k, j++) = x(r, c);
          }
        }
        target(k) = x(r, f);
        ++k;
      }
      const Eigen::VectorXd coef = design.completeOrthogonalDecomposition().solve(target);
      for (Eigen::Index r = 0; r < rows; ++r) {
        if (seen(r, f)) {
          continue;
        }
        double pred = coef(0);
        for (Eigen::Index c = 0, j = 1; c < n_feat; ++c) {
          if (c != f) {
            pred += coef(j++) * x(r, c);
          }
        }
        x(r, f) = pred;
      }
    }
  }

  Cohort out = cohort;
  for (std::size_t i = 0; i < out.records.size(); ++i) {
    auto &r = out.records[i];
    const Eigen::Index base = static_cast<Eigen::Index>(i) * t_len;
    for (Eigen::Index t = 0; t < t_len; ++t) {
      for (Eigen::Index f = 0; f < n_feat; ++f) {
        if (!seen(base + t, f)) {
          r.longitudinal(t, f) = x(base + t, f);
        }
      }
    }
  }
  return out;
}

} // namespace fairehr
