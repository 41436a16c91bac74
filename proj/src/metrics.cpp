#include "fairehr/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>

#include "fairehr/error.hpp"

namespace fairehr {

using nlohmann::json;

namespace {

void check_binary(const std::vector<int> &v, const char *what) {
  for (const int x : v) {
    require(x == 0 || x == 1, ErrorKind::kMetric, std::string(what) + " must be 0 or 1");
  }
}

std::vector<Confusion> per_group(const std::vector<int> &y, const std::vector<int> &yhat,
                                 const std::vector<int> &group, int groups) {
  require(y.size() == yhat.size() && y.size() == group.size(), ErrorKind::kMetric,
          "labels, predictions and subgroup ids must align");
  std::vector<Confusion> out(static_cast<std::size_t>(std::max(groups, 0)));
  for (std::size_t i = 0; i < y.size(); ++i) {
    require(group[i] >= 0 && group[i] < groups, ErrorKind::kMetric,
            "subgroup id " + std::to_string(group[i]) + " out of range");
    Confusion &c = out[static_cast<std::size_t>(group[i])];
    if (y[i] == 1) {
      (yhat[i] == 1 ? c.tp : c.fn) += 1;
    } else {
      (yhat[i] == 1 ? c.fp : c.tn) += 1;
    }
  }
  return out;
}

/// Mean |r_i - r_j| over defined pairs; nullopt with fewer than two rates.
std::optional<double> mean_pairwise_gap(const std::vector<std::optional<double>> &rates) {
  double sum = 0.0;
  long pairs = 0;
  for (std::size_t i = 0; i < rates.size(); ++i) {
    for (std::size_t j = i + 1; j < rates.size(); ++j) {
      if (rates[i] && rates[j]) {
        sum += std::abs(*rates[i] - *rates[j]);
        ++pairs;
      }
    }
  }
  if (pairs == 0) {
    return std::nullopt;
  }
  return sum / static_cast<double>(pairs);
}

std::optional<double> tpr_of(const Confusion &c) {
  if (c.tp + c.fn == 0) return std::nullopt;
  return static_cast<double>(c.tp) / static_cast<double>(c.tp + c.fn);
}

std::optional<double> fpr_of(const Confusion &c) {
  if (c.fp + c.tn == 0) return std::nullopt;
  return static_cast<double>(c.fp) / static_cast<double>(c.fp + c.tn);
}

} // namespace

void EvalFrame::validate() const {
  require(!y.empty(), ErrorKind::kMetric, "evaluation frame is empty");
  require(score.size() == y.size() && yhat.size() == y.size(), ErrorKind::kMetric,
          "evaluation frame columns differ in length");
  check_binary(y, "labels");
  check_binary(yhat, "predictions");
  for (std::size_t i = 0; i < y.size(); ++i) {
    require(std::isfinite(score[i]), ErrorKind::kMetric, "non-finite score");
    require(yhat[i] == (score[i] >= threshold ? 1 : 0), ErrorKind::kMetric,
            "prediction disagrees with the recorded threshold at record " + std::to_string(i));
  }
  for (const auto &g : groups) {
    require(g.ids.size() == y.size(), ErrorKind::kMetric,
            std::string(attribute_name(g.attribute)) + ": one subgroup per record required");
    for (const int id : g.ids) {
      require(id >= 0 && id < g.count(), ErrorKind::kMetric,
              std::string(attribute_name(g.attribute)) + ": subgroup id out of range");
    }
  }
}

EvalFrame EvalFrame::from_cohort(const Cohort &cohort, const std::vector<std::size_t> &rows,
                                 const std::vector<double> &scores, double threshold, bool drop_empty) {
  require(rows.size() == scores.size(), ErrorKind::kMetric, "one score per selected record required");
  EvalFrame frame;
  frame.threshold = threshold;
  for (std::size_t k = 0; k < rows.size(); ++k) {
    const PatientRecord &r = cohort.records.at(rows[k]);
    frame.y.push_back(r.label);
    frame.score.push_back(scores[k]);
    frame.yhat.push_back(scores[k] >= threshold ? 1 : 0);
  }
  const AgeBinning &bins = cohort.schema.age_bins;
  for (const Attribute a : kAllAttributes) {
    AttributeGroups g;
    g.attribute = a;
    if (a == Attribute::kAge) {
      for (int b = 0; b < bins.bins; ++b) g.labels.push_back(bins.label(b));
    } else {
      g.labels = cohort.schema.vocabularies.of(a);
    }
    for (const std::size_t row : rows) {
      const auto &s = cohort.records.at(row).s;
      g.ids.push_back(a == Attribute::kAge ? bins.bin_of(s.age) : s.category(a));
    }
    if (drop_empty) {
      std::vector<int> remap(g.labels.size(), -1);
      std::vector<char> present(g.labels.size(), 0);
      for (const int id : g.ids) present[static_cast<std::size_t>(id)] = 1;
      std::vector<std::string> kept;
      for (std::size_t s = 0; s < g.labels.size(); ++s) {
        if (present[s]) {
          remap[s] = static_cast<int>(kept.size());
          kept.push_back(g.labels[s]);
        } else {
          g.omitted.push_back(g.labels[s]);
        }
      }
      for (int &id : g.ids) id = remap[static_cast<std::size_t>(id)];
      g.labels = std::move(kept);
    }
    frame.groups.push_back(std::move(g));
  }
  frame.validate();
  return frame;
}

Confusion confusion(const std::vector<int> &y, const std::vector<int> &yhat) {
  return per_group(y, yhat, std::vector<int>(y.size(), 0), 1).front();
}

double f1(const std::vector<int> &y, const std::vector<int> &yhat) {
  const Confusion c = confusion(y, yhat);
  if (c.tp == 0) {
    return 0.0;
  }
  return 2.0 * static_cast<double>(c.tp) / static_cast<double>(2 * c.tp + c.fp + c.fn);
}

double auroc(const std::vector<int> &y, const std::vector<double> &score) {
  require(y.size() == score.size(), ErrorKind::kMetric, "auroc: labels and scores differ in length");
  const auto n = y.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return score[a] < score[b]; });
  std::vector<double> rank(n);
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j + 1 < n && score[order[j + 1]] == score[order[i]]) ++j;
    const double mid = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
    i = j + 1;
  }
  double positives = 0.0, rank_sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (y[i] == 1) {
      positives += 1.0;
      rank_sum += rank[i];
    }
  }
  const double negatives = static_cast<double>(n) - positives;
  require(positives > 0 && negatives > 0, ErrorKind::kMetric, "auroc: both classes must be present");
  return (rank_sum - positives * (positives + 1.0) / 2.0) / (positives * negatives);
}

OddsResult equalized_odds(const std::vector<int> &y, const std::vector<int> &yhat, const std::vector<int> &group,
                          int groups, const std::string &name) {
  require(groups >= 2, ErrorKind::kMetric, name + ": equalized odds needs at least two subgroups");
  const auto counts = per_group(y, yhat, group, groups);
  std::vector<std::optional<double>> tpr, fpr;
  OddsResult out;
  for (int s = 0; s < groups; ++s) {
    tpr.push_back(tpr_of(counts[static_cast<std::size_t>(s)]));
    fpr.push_back(fpr_of(counts[static_cast<std::size_t>(s)]));
    if (!tpr.back()) out.tpr_excluded.push_back(s);
    if (!fpr.back()) out.fpr_excluded.push_back(s);
  }
  const auto tpr_gap = mean_pairwise_gap(tpr);
  const auto fpr_gap = mean_pairwise_gap(fpr);
  require(tpr_gap.has_value(), ErrorKind::kMetric,
          name + ": fewer than two subgroups have positives, TPR gap undefined");
  require(fpr_gap.has_value(), ErrorKind::kMetric,
          name + ": fewer than two subgroups have negatives, FPR gap undefined");
  out.eo_tpr = *tpr_gap;
  out.eo_fpr = *fpr_gap;
  out.eo = (out.eo_tpr + out.eo_fpr) / 2.0;
  return out;
}

EddiResult eddi(const std::vector<int> &y, const std::vector<int> &yhat, const std::vector<int> &group, int groups,
                const std::string &name) {
  require(groups >= 1, ErrorKind::kMetric, name + ": EDDI needs at least one subgroup");
  require(!y.empty(), ErrorKind::kMetric, name + ": EDDI on an empty frame");
  const auto counts = per_group(y, yhat, group, groups);
  long errors = 0;
  for (const auto &c : counts) errors += c.errors();
  const double oer = static_cast<double>(errors) / static_cast<double>(y.size());
  const double denom = std::max(oer, 1.0 - oer);
  EddiResult out;
  for (int s = 0; s < groups; ++s) {
    const Confusion &c = counts[static_cast<std::size_t>(s)];
    require(c.n() > 0, ErrorKind::kMetric, name + ": subgroup " + std::to_string(s) + " is empty");
    const double dev = (static_cast<double>(c.errors()) / static_cast<double>(c.n()) - oer) / denom;
    out.signed_value += dev;
    out.absolute += std::abs(dev);
  }
  out.signed_value /= groups;
  out.absolute /= groups;
  return out;
}

FairnessReport fairness_report(const EvalFrame &frame) {
  frame.validate();
  require(!frame.groups.empty(), ErrorKind::kMetric, "fairness report needs at least one attribute");
  FairnessReport r;
  r.threshold = frame.threshold;
  r.n = frame.size();
  r.f1 = f1(frame.y, frame.yhat);
  r.auroc = auroc(frame.y, frame.score);
  r.oer = static_cast<double>(confusion(frame.y, frame.yhat).errors()) / static_cast<double>(frame.size());
  for (const auto &g : frame.groups) {
    const std::string label = "attribute " + std::string(attribute_name(g.attribute));
    AttributeReport a;
    a.attribute = g.attribute;
    a.omitted = g.omitted;
    a.odds = equalized_odds(frame.y, frame.yhat, g.ids, g.count(), label);
    a.eddi = eddi(frame.y, frame.yhat, g.ids, g.count(), label);
    const auto counts = per_group(frame.y, frame.yhat, g.ids, g.count());
    for (int s = 0; s < g.count(); ++s) {
      const Confusion &c = counts[static_cast<std::size_t>(s)];
      a.subgroups.push_back({g.labels[static_cast<std::size_t>(s)], c,
                             static_cast<double>(c.errors()) / static_cast<double>(c.n()), tpr_of(c), fpr_of(c)});
    }
    for (const int s : a.odds.tpr_excluded) {
      a.notes.push_back("subgroup " + g.labels[static_cast<std::size_t>(s)] + " has no positives; left out of TPR pairs");
    }
    for (const int s : a.odds.fpr_excluded) {
      a.notes.push_back("subgroup " + g.labels[static_cast<std::size_t>(s)] + " has no negatives; left out of FPR pairs");
    }
    r.mean_eo += a.odds.eo;
    r.mean_eddi += a.eddi.absolute;
    r.mean_eddi_signed += a.eddi.signed_value;
    r.attributes.push_back(std::move(a));
  }
  const auto k = static_cast<double>(r.attributes.size());
  r.mean_eo /= k;
  r.mean_eddi /= k;
  r.mean_eddi_signed /= k;
  return r;
}

json FairnessReport::to_json() const {
  json attrs = json::array();
  for (const auto &a : attributes) {
    json rows = json::array();
    for (const auto &s : a.subgroups) {
      rows.push_back({{"subgroup", s.label},
                      {"n", s.counts.n()},
                      {"tp", s.counts.tp},
                      {"fp", s.counts.fp},
                      {"tn", s.counts.tn},
                      {"fn", s.counts.fn},
                      {"error_rate", s.error_rate},
                      {"tpr", s.tpr ? json(*s.tpr) : json(nullptr)},
                      {"fpr", s.fpr ? json(*s.fpr) : json(nullptr)}});
    }
    attrs.push_back({{"attribute", std::string(attribute_name(a.attribute))},
                     {"eo_tpr", a.odds.eo_tpr},
                     {"eo_fpr", a.odds.eo_fpr},
                     {"eo", a.odds.eo},
                     {"eddi", a.eddi.absolute},
                     {"eddi_signed", a.eddi.signed_value},
                     {"subgroups", rows},
                     {"omitted_subgroups", a.omitted},
                     {"notes", a.notes}});
  }
  return {{"threshold", threshold}, {"n", n},
          {"f1", f1},               {"auroc", auroc},
          {"oer", oer},             {"mean_eo", mean_eo},
          {"mean_eddi", mean_eddi}, {"mean_eddi_signed", mean_eddi_signed},
          {"eddi_variant", "absolute"}, {"attributes", attrs}};
}

std::string format_percent(double value) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", 100.0 * value);
  return buf;
}

namespace {

std::string pad(const std::string &s, std::size_t width, bool right = false) {
  // Display width, counting each UTF-8 sequence once.
  std::size_t shown = 0;
  for (const unsigned char ch : s) shown += (ch & 0xC0) != 0x80 ? 1 : 0;
  const std::string fill(width > shown ? width - shown : 0, ' ');
  return right ? fill + s : s + fill;
}

} // namespace

std::string FairnessReport::to_table() const {
  std::ostringstream out;
  out << pad("Attribute", 12) << pad("EO ↓", 9, true) << pad("EO_TPR", 9, true) << pad("EO_FPR", 9, true)
      << pad("EDDI ↓", 9, true) << pad("EDDI±", 9, true) << "\n";
  for (const auto &a : attributes) {
    out << pad(std::string(attribute_name(a.attribute)), 12) << pad(format_percent(a.odds.eo), 9, true)
        << pad(format_percent(a.odds.eo_tpr), 9, true) << pad(format_percent(a.odds.eo_fpr), 9, true)
        << pad(format_percent(a.eddi.absolute), 9, true) << pad(format_percent(a.eddi.signed_value), 9, true)
        << "\n";
  }
  out << pad("Average", 12) << pad(format_percent(mean_eo), 9, true) << pad("", 18)
      << pad(format_percent(mean_eddi), 9, true) << pad(format_percent(mean_eddi_signed), 9, true) << "\n";
  out << "F1 ↑ " << format_percent(f1) << "  AUROC ↑ " << format_percent(auroc) << "  (n = " << n
      << ", threshold " << threshold << ", values in %)\n";
  return out.str();
}

std::string format_summary_table(const std::vector<std::pair<std::string, FairnessReport>> &rows) {
  std::size_t name_width = 6;
  for (const auto &[name, report] : rows) name_width = std::max(name_width, name.size() + 2);
  std::ostringstream out;
  out << pad("Model", name_width) << pad("F1 ↑", 9, true) << pad("AUROC ↑", 9, true) << pad("EO ↓", 9, true)
      << pad("EDDI ↓", 9, true) << "\n";
  for (const auto &[name, r] : rows) {
    out << pad(name, name_width) << pad(format_percent(r.f1), 9, true) << pad(format_percent(r.auroc), 9, true)
        << pad(format_percent(r.mean_eo), 9, true) << pad(format_percent(r.mean_eddi), 9, true) << "\n";
  }
  return out.str();
}

} // namespace fairehr
