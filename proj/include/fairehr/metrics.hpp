#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fairehr/data.hpp"
#include "json.hpp"

namespace fairehr {

/// Subgroup assignment of every record for one sensitive attribute.
struct AttributeGroups {
  Attribute attribute = Attribute::kGender;
  std::vector<std::string> labels; // subgroup id -> display label
  std::vector<int> ids;            // per record
  /// Vocabulary entries with no record in the frame, when dropped.
  std::vector<std::string> omitted;

  int count() const { return static_cast<int>(labels.size()); }
};

struct EvalFrame {
  std::vector<int> y;
  std::vector<double> score; // P(y = 1)
  std::vector<int> yhat;
  double threshold = 0.5;
  std::vector<AttributeGroups> groups;

  std::size_t size() const { return y.size(); }
  /// Throws a metric error on any broken frame invariant.
  void validate() const;

  /// yhat = 1[score >= threshold]; subgroups from the cohort vocabularies,
  /// age grouped by its bins. With `drop_empty` subgroups absent from the
  /// selected records are removed (and listed in `omitted`).
  static EvalFrame from_cohort(const Cohort &cohort, const std::vector<std::size_t> &rows,
                               const std::vector<double> &scores, double threshold = 0.5, bool drop_empty = true);
};

struct Confusion {
  long tp = 0, fp = 0, tn = 0, fn = 0;
  long n() const { return tp + fp + tn + fn; }
  long errors() const { return fp + fn; }
};

Confusion confusion(const std::vector<int> &y, const std::vector<int> &yhat);

/// Positive-class F1; 0 when there are no true positives.
double f1(const std::vector<int> &y, const std::vector<int> &yhat);

/// Mann-Whitney estimate with midranks for ties. Metric error unless both
/// classes are present.
double auroc(const std::vector<int> &y, const std::vector<double> &score);

struct OddsResult {
  double eo_tpr = 0.0;
  double eo_fpr = 0.0;
  double eo = 0.0;
  /// Subgroup ids left out of the TPR (no positives) / FPR (no negatives) pairs.
  std::vector<int> tpr_excluded;
  std::vector<int> fpr_excluded;
};

/// Mean absolute pairwise TPR and FPR gaps over subgroups where the rate is
/// defined. Metric error when fewer than two subgroups define either rate.
OddsResult equalized_odds(const std::vector<int> &y, const std::vector<int> &yhat, const std::vector<int> &group,
                          int groups, const std::string &name = "attribute");

struct EddiResult {
  double absolute = 0.0;
  double signed_value = 0.0;
};

/// (1/|S|) sum_s (ER_s - OER) / max(OER, 1 - OER), plain and with |.|.
/// Metric error for an empty subgroup.
EddiResult eddi(const std::vector<int> &y, const std::vector<int> &yhat, const std::vector<int> &group, int groups,
                const std::string &name = "attribute");

struct SubgroupRow {
  std::string label;
  Confusion counts;
  double error_rate = 0.0;
  std::optional<double> tpr;
  std::optional<double> fpr;
};

struct AttributeReport {
  Attribute attribute = Attribute::kGender;
  OddsResult odds;
  EddiResult eddi;
  std::vector<SubgroupRow> subgroups;
  std::vector<std::string> omitted;
  std::vector<std::string> notes; // exclusions from the pairwise averages
};

struct FairnessReport {
  double threshold = 0.5;
  std::size_t n = 0;
  double f1 = 0.0;
  double auroc = 0.0;
  double oer = 0.0;
  std::vector<AttributeReport> attributes;
  double mean_eo = 0.0;
  double mean_eddi = 0.0; // absolute variant
  double mean_eddi_signed = 0.0;

  nlohmann::json to_json() const;
  /// Per-attribute breakdown, percentages to one decimal.
  std::string to_table() const;
};

FairnessReport fairness_report(const EvalFrame &frame);

/// One line per named result with F1, AUROC, EO and EDDI in percent.
std::string format_summary_table(const std::vector<std::pair<std::string, FairnessReport>> &rows);
std::string format_percent(double value);

} // namespace fairehr
