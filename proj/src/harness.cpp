#include "fairehr/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include "fairehr/error.hpp"

namespace fairehr {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Config

void TrainConfig::validate() const {
  auto check = [](bool ok, const std::string &what) { require(ok, ErrorKind::kConfig, "train: " + what); };
  check(!seeds.empty(), "at least one seed required");
  check(epochs >= 0, "epochs must be >= 0");
  check(batch_size >= 1, "batch_size must be >= 1");
  check(optimizer.learning_rate > 0, "learning rate must be positive");
  check(optimizer.beta1 >= 0 && optimizer.beta1 < 1 && optimizer.beta2 >= 0 && optimizer.beta2 < 1,
        "Adam betas must lie in [0, 1)");
  check(optimizer.epsilon > 0, "Adam epsilon must be positive");
  check(modalities.any(), "at least one modality must be enabled");
  check(threshold > 0 && threshold < 1, "threshold must lie in (0, 1)");
  check(impute_sweeps >= 0, "impute_sweeps must be >= 0");
  loss.validate();
  model.validate();
  gan.validate();
  counterparts.validate();
}

json TrainConfig::to_json() const {
  return {{"seeds", seeds},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"optimizer",
           {{"name", "adam"},
            {"learning_rate", optimizer.learning_rate},
            {"beta1", optimizer.beta1},
            {"beta2", optimizer.beta2},
            {"epsilon", optimizer.epsilon}}},
          {"loss", loss.to_json()},
          {"modalities",
           {{"demographics", modalities.demographics},
            {"longitudinal", modalities.longitudinal},
            {"notes", modalities.notes}}},
          {"components", {{"use_cl", use_cl}, {"use_dr", use_dr}}},
          {"counterparts", counterparts.to_json()},
          {"gan", gan.to_json()},
          {"model", model.to_json()},
          {"cohort", cohort.to_json()},
          {"impute_sweeps", impute_sweeps},
          {"threshold", threshold},
          {"output_dir", output_dir}};
}

TrainConfig TrainConfig::from_json(const json &doc) {
  TrainConfig c;
  try {
    require(doc.is_object(), ErrorKind::kConfig, "train config must be a JSON object");
    c.seeds = doc.value("seeds", c.seeds);
    c.epochs = doc.value("epochs", c.epochs);
    c.batch_size = doc.value("batch_size", c.batch_size);
    if (doc.contains("optimizer")) {
      const auto &o = doc["optimizer"];
      c.optimizer.learning_rate = o.value("learning_rate", c.optimizer.learning_rate);
      c.optimizer.beta1 = o.value("beta1", c.optimizer.beta1);
      c.optimizer.beta2 = o.value("beta2", c.optimizer.beta2);
      c.optimizer.epsilon = o.value("epsilon", c.optimizer.epsilon);
    }
    if (doc.contains("loss")) {
      json merged = c.loss.to_json();
      merged.update(doc["loss"]);
      c.loss = LossConfig::from_json(merged);
    }
    if (doc.contains("modalities")) {
      const auto &m = doc["modalities"];
      c.modalities.demographics = m.value("demographics", c.modalities.demographics);
      c.modalities.longitudinal = m.value("longitudinal", c.modalities.longitudinal);
      c.modalities.notes = m.value("notes", c.modalities.notes);
    }
    if (doc.contains("components")) {
      c.use_cl = doc["components"].value("use_cl", c.use_cl);
      c.use_dr = doc["components"].value("use_dr", c.use_dr);
    }
    if (doc.contains("counterparts")) c.counterparts = CounterpartPolicies::from_json(doc["counterparts"]);
    if (doc.contains("gan")) c.gan = GanConfig::from_json(doc["gan"]);
    if (doc.contains("model")) c.model = ModelConfig::from_json(doc["model"]);
    if (doc.contains("cohort")) c.cohort = CohortSpec::from_json(doc["cohort"]);
    c.impute_sweeps = doc.value("impute_sweeps", c.impute_sweeps);
    c.threshold = doc.value("threshold", c.threshold);
    c.output_dir = doc.value("output_dir", c.output_dir);
  } catch (const json::exception &e) {
    fail(ErrorKind::kConfig, std::string("train config: ") + e.what());
  }
  c.validate();
  return c;
}

json RunResult::to_json() const {
  json losses = json::array();
  for (const auto &e : epochs) {
    losses.push_back({{"total", e.total}, {"contrastive", e.contrastive}, {"cross_entropy", e.cross_entropy}});
  }
  return {{"seed", seed},
          {"config", config.to_json()},
          {"epoch_losses", losses},
          {"evaluated_on", evaluated_on},
          {"report", report.to_json()}};
}

RunData RunData::from_split(const Cohort &cohort) {
  return {cohort.indices(Split::kTrain), cohort.indices(Split::kTest), "test"};
}

// ---------------------------------------------------------------------------
// Pipeline

Prepared prepare(const TrainConfig &config, std::uint64_t seed, const Cohort *cohort) {
  config.validate();
  Prepared p;
  p.seed = seed;
  p.cohort = impute(cohort ? *cohort : synthesize_cohort(config.cohort, seed), config.impute_sweeps);
  p.gan = train_gan(p.cohort, config.gan, seed);
  if (p.gan->gate.passed) {
    p.counterparts = build_counterparts(p.cohort, &*p.gan, config.counterparts, seed);
  }
  return p;
}

namespace {

std::vector<const PatientRecord *> records_at(const Cohort &cohort, const std::vector<std::size_t> &rows) {
  std::vector<const PatientRecord *> out;
  out.reserve(rows.size());
  for (const std::size_t r : rows) out.push_back(&cohort.records.at(r));
  return out;
}

void feature_stats(const Cohort &cohort, const std::vector<std::size_t> &rows, Eigen::RowVectorXd &mean,
                   Eigen::RowVectorXd &sd) {
  const int f = cohort.schema.feature_count();
  mean = Eigen::RowVectorXd::Zero(f);
  Eigen::RowVectorXd sq = Eigen::RowVectorXd::Zero(f);
  double count = 0.0;
  for (const std::size_t r : rows) {
    const auto &x = cohort.records[r].longitudinal;
    require(x.allFinite(), ErrorKind::kPipeline, "cohort must be imputed before training");
    mean += x.colwise().sum();
    sq += x.array().square().matrix().colwise().sum();
    count += static_cast<double>(x.rows());
  }
  require(count > 0, ErrorKind::kPipeline, "no training records");
  mean /= count;
  sd = (sq / count - mean.array().square().matrix()).cwiseMax(0.0).cwiseSqrt();
}

} // namespace

TrainedModel train(const Cohort &cohort, const CounterpartSet *counterparts, const TrainConfig &config,
                   std::uint64_t seed, const TrainedGan *gan, const RunData *data) {
  const auto started = std::chrono::steady_clock::now();
  config.validate();
  const RunData rows = data ? *data : RunData::from_split(cohort);
  require(!rows.train_rows.empty(), ErrorKind::kPipeline, "no training records");
  require(!rows.eval_rows.empty(), ErrorKind::kPipeline, "no evaluation records");
  if (config.use_cl) {
    require(counterparts != nullptr && !counterparts->empty(), ErrorKind::kConfig,
            "contrastive training needs synthetic counterparts");
  }
  if (counterparts) {
    for (const std::size_t r : rows.train_rows) {
      require(counterparts->count(cohort.records[r].id) != 0, ErrorKind::kConfig,
              "no counterpart for training record '" + cohort.records[r].id + "'");
    }
  }
  require(!config.counterparts.resample_each_epoch || gan != nullptr, ErrorKind::kConfig,
          "per-epoch counterpart resampling needs the trained GAN");

  Eigen::RowVectorXd mean, sd;
  feature_stats(cohort, rows.train_rows, mean, sd);
  Rng init(derive_seed(seed, "model-init"));
  TrainedModel out;
  out.params = ModelParams::initialize(cohort.schema, config.model, mean, sd, init);
  ModelParams &model = out.params;
  ad::Adam adam(config.optimizer);
  Rng order_rng(derive_seed(seed, "model-batches"));

  std::vector<std::size_t> order = rows.train_rows;
  CounterpartSet resampled;
  const CounterpartSet *current = counterparts;
  const auto n = order.size();
  const auto batch = static_cast<std::size_t>(config.batch_size);

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    if (epoch > 0 && config.counterparts.resample_each_epoch && counterparts) {
      std::vector<std::string> ids;
      for (const std::size_t r : rows.train_rows) ids.push_back(cohort.records[r].id);
      resampled = build_counterparts(cohort, gan, config.counterparts,
                                     derive_seed(seed, "counterparts-epoch-" + std::to_string(epoch)), ids);
      current = &resampled;
    }
    order_rng.shuffle(order);
    EpochLoss sum;
    int batches = 0;
    for (std::size_t start = 0; start < n; start += batch, ++batches) {
      const std::vector<std::size_t> slice(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(std::min(n, start + batch)));
      const auto real_records = records_at(cohort, slice);
      std::vector<int> labels;
      std::vector<const CounterpartRecord *> syn;
      for (const auto *r : real_records) {
        labels.push_back(r->label);
        if (current) syn.push_back(&current->at(r->id));
      }
      try {
        ad::Tape<double> tape;
        const BoundParams p(tape, model.params, true);
        const ModelInputs real = record_inputs(real_records, cohort.schema, model, config.modalities);
        const ModelInputs synthetic = current ? counterpart_inputs(syn, cohort.schema, model, config.modalities)
                                              : ModelInputs{};
        const ForwardOutput fwd = forward_batch(real, synthetic, p, model, config.modalities, config.use_dr);
        Var l_ce = cross_entropy(fwd.probabilities, labels);
        Var objective;
        double l_cf_value = 0.0;
        if (config.use_cl) {
          const Var l_cf = contrastive_fair_loss(fwd.bundle.e_adj, fwd.bundle.e_adj_syn, config.loss);
          l_cf_value = l_cf.item();
          objective = total_loss(l_cf, l_ce, config.loss.alpha);
        } else {
          if (current) {
            // counterparts as extra labelled examples
            l_ce = ad::add(l_ce, cross_entropy(classify(fwd.bundle.e_adj_syn, p), labels));
          }
          objective = l_ce;
        }
        const double value = objective.item();
        require(std::isfinite(value), ErrorKind::kDomain, "loss is not finite");
        tape.backward(objective);
        adam.step(model.params, p.gradients());
        sum.total += value;
        sum.contrastive += l_cf_value;
        sum.cross_entropy += l_ce.item();
      } catch (const Error &e) {
        if (e.kind() != ErrorKind::kDomain) throw;
        fail(ErrorKind::kTraining, "training diverged at epoch " + std::to_string(epoch) + ", batch " +
                                       std::to_string(batches) + ": " + e.what());
      }
    }
    for (const auto &[name, value] : model.params.entries()) {
      require(value.allFinite(), ErrorKind::kTraining,
              "training diverged at epoch " + std::to_string(epoch) + ": parameter " + name + " is not finite");
    }
    const double k = static_cast<double>(std::max(batches, 1));
    out.result.epochs.push_back({sum.total / k, sum.contrastive / k, sum.cross_entropy / k});
  }

  out.result.config = config;
  out.result.seed = seed;
  out.result.evaluated_on = rows.eval_name;
  out.result.report = evaluate(model, cohort, rows.eval_rows, config.modalities, config.use_dr, config.threshold);
  out.result.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return out;
}

std::vector<double> predict_scores(const ModelParams &params, const Cohort &cohort,
                                   const std::vector<std::size_t> &rows, const ModalityFlags &flags, bool use_dr) {
  constexpr std::size_t kChunk = 256;
  std::vector<double> scores;
  scores.reserve(rows.size());
  for (std::size_t start = 0; start < rows.size(); start += kChunk) {
    const std::vector<std::size_t> slice(rows.begin() + static_cast<std::ptrdiff_t>(start),
                                         rows.begin() + static_cast<std::ptrdiff_t>(std::min(rows.size(), start + kChunk)));
    const Prediction pred = predict(record_inputs(records_at(cohort, slice), cohort.schema, params, flags), params,
                                    flags, use_dr);
    for (Eigen::Index i = 0; i < pred.probabilities.rows(); ++i) scores.push_back(pred.probabilities(i, 1));
  }
  return scores;
}

FairnessReport evaluate(const ModelParams &params, const Cohort &cohort, const std::vector<std::size_t> &rows,
                        const ModalityFlags &flags, bool use_dr, double threshold) {
  const auto scores = predict_scores(params, cohort, rows, flags, use_dr);
  return fairness_report(EvalFrame::from_cohort(cohort, rows, scores, threshold));
}

// ---------------------------------------------------------------------------
// Experiments

Stat summarize(std::vector<double> values) {
  require(!values.empty(), ErrorKind::kContract, "summary of an empty sample");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  Stat s;
  s.median = n % 2 ? values[n / 2] : (values[n / 2 - 1] + values[n / 2]) / 2.0;
  if (n > 1) {
    const double mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
    double sq = 0.0;
    for (const double v : values) sq += (v - mean) * (v - mean);
    s.sd = std::sqrt(sq / static_cast<double>(n - 1));
  }
  return s;
}

namespace {

Stat collect(const std::vector<RunResult> &runs, double FairnessReport::*field) {
  std::vector<double> v;
  for (const auto &r : runs) v.push_back(r.report.*field);
  return summarize(v);
}

json stat_json(const Stat &s) { return {{"median", s.median}, {"sd", s.sd}}; }

} // namespace

Stat CellResult::f1() const { return collect(runs, &FairnessReport::f1); }
Stat CellResult::auroc() const { return collect(runs, &FairnessReport::auroc); }
Stat CellResult::eo() const { return collect(runs, &FairnessReport::mean_eo); }
Stat CellResult::eddi() const { return collect(runs, &FairnessReport::mean_eddi); }

json CellResult::to_json() const {
  json runs_json = json::array();
  for (const auto &r : runs) runs_json.push_back(r.to_json());
  return {{"name", name},
          {"summary",
           {{"f1", stat_json(f1())}, {"auroc", stat_json(auroc())}, {"eo", stat_json(eo())},
            {"eddi", stat_json(eddi())}}},
          {"runs", runs_json}};
}

void run_parallel(std::size_t jobs, int threads, const std::function<void(std::size_t)> &job) {
  const auto workers = static_cast<std::size_t>(std::max(1, threads));
  if (workers == 1 || jobs <= 1) {
    for (std::size_t i = 0; i < jobs; ++i) job(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(jobs);
  std::vector<std::thread> pool;
  for (std::size_t w = 0; w < std::min(workers, jobs); ++w) {
    pool.emplace_back([&] {
      for (std::size_t i = next++; i < jobs; i = next++) {
        try {
          job(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto &t : pool) t.join();
  for (const auto &e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::vector<CellResult> run_cells(const std::vector<Prepared> &data,
                                  const std::vector<std::pair<std::string, TrainConfig>> &cells,
                                  const ExperimentOptions &options) {
  require(!data.empty(), ErrorKind::kConfig, "no prepared data");
  std::vector<CellResult> out;
  for (const auto &[name, config] : cells) {
    config.validate();
    out.push_back({name, config, std::vector<RunResult>(data.size())});
  }
  std::mutex report_mutex;
  run_parallel(cells.size() * data.size(), options.threads, [&](std::size_t job) {
    const std::size_t cell = job / data.size();
    const Prepared &d = data[job % data.size()];
    const CounterpartSet *cps = d.counterparts.empty() ? nullptr : &d.counterparts;
    const TrainedGan *gan = d.gan ? &*d.gan : nullptr;
    RunResult result = train(d.cohort, cps, out[cell].config, d.seed, gan).result;
    if (options.on_run) {
      std::lock_guard<std::mutex> lock(report_mutex);
      options.on_run(out[cell].name, result);
    }
    out[cell].runs[job % data.size()] = std::move(result);
  });
  return out;
}

std::vector<std::pair<std::string, TrainConfig>> modality_cells(const TrainConfig &base) {
  std::vector<std::pair<std::string, TrainConfig>> cells;
  for (const auto &[l, n] : {std::pair{false, false}, {true, false}, {false, true}, {true, true}}) {
    TrainConfig c = base;
    c.modalities = {true, l, n};
    cells.emplace_back(c.modalities.label(), c);
  }
  return cells;
}

std::vector<std::pair<std::string, TrainConfig>> component_cells(const TrainConfig &base) {
  std::vector<std::pair<std::string, TrainConfig>> cells;
  const std::tuple<const char *, bool, bool> rows[] = {
      {"Full w/o CL + DR", false, false}, {"Full w/o CL", false, true}, {"Full w/o DR", true, false}, {"Full", true, true}};
  for (const auto &[name, cl, dr] : rows) {
    TrainConfig c = base;
    c.use_cl = cl;
    c.use_dr = dr;
    cells.emplace_back(name, c);
  }
  return cells;
}

std::vector<std::pair<std::string, TrainConfig>> alpha_cells(const TrainConfig &base, const std::vector<double> &grid) {
  require(grid.size() >= 3, ErrorKind::kConfig, "alpha grid needs at least three points");
  std::vector<std::pair<std::string, TrainConfig>> cells;
  for (const double a : grid) {
    require(a >= 0 && a <= 1, ErrorKind::kConfig, "alpha grid values must lie in [0, 1]");
    TrainConfig c = base;
    c.loss.alpha = a;
    char name[32];
    std::snprintf(name, sizeof name, "alpha=%g", a);
    cells.emplace_back(name, c);
  }
  return cells;
}

std::vector<CellResult> ablate_modalities(const std::vector<Prepared> &data, const TrainConfig &base,
                                          const ExperimentOptions &options) {
  return run_cells(data, modality_cells(base), options);
}

std::vector<CellResult> ablate_components(const std::vector<Prepared> &data, const TrainConfig &base,
                                          const ExperimentOptions &options) {
  return run_cells(data, component_cells(base), options);
}

std::vector<CellResult> alpha_sweep(const std::vector<Prepared> &data, const TrainConfig &base,
                                    const std::vector<double> &grid, const ExperimentOptions &options) {
  return run_cells(data, alpha_cells(base, grid), options);
}

namespace {

std::string pm(const Stat &s) { return format_percent(s.median) + " ± " + format_percent(s.sd); }

std::string pad_right(const std::string &s, std::size_t width) {
  std::size_t shown = 0;
  for (const unsigned char ch : s) shown += (ch & 0xC0) != 0x80 ? 1 : 0;
  return s + std::string(width > shown ? width - shown : 0, ' ');
}

} // namespace

std::string format_cells(const std::vector<CellResult> &cells) {
  std::size_t width = 8;
  for (const auto &c : cells) width = std::max(width, c.name.size() + 2);
  std::ostringstream out;
  out << pad_right("Model", width) << pad_right("F1 ↑", 15) << pad_right("AUROC ↑", 15) << pad_right("EO ↓", 15)
      << "EDDI ↓\n";
  for (const auto &c : cells) {
    out << pad_right(c.name, width) << pad_right(pm(c.f1()), 15) << pad_right(pm(c.auroc()), 15)
        << pad_right(pm(c.eo()), 15) << pm(c.eddi()) << "\n";
  }
  out << "(median ± sd over " << (cells.empty() ? 0 : cells.front().runs.size()) << " seeds, values in %)\n";
  return out.str();
}

std::string alpha_curve_csv(const std::vector<double> &grid, const std::vector<CellResult> &cells) {
  require(grid.size() == cells.size(), ErrorKind::kContract, "one cell per alpha value required");
  std::ostringstream out;
  out << "alpha,f1_median,f1_sd,eo_median,eo_sd,eddi_median,eddi_sd\n";
  char line[256];
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const Stat f = cells[i].f1(), eo = cells[i].eo(), ed = cells[i].eddi();
    std::snprintf(line, sizeof line, "%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", grid[i], f.median, f.sd,
                  eo.median, eo.sd, ed.median, ed.sd);
    out << line;
  }
  return out.str();
}

namespace {

std::vector<double> average_ranks(const std::vector<double> &v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> rank(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k) rank[order[k]] = (static_cast<double>(i + j) / 2.0) + 1.0;
    i = j + 1;
  }
  return rank;
}

} // namespace

double spearman(const std::vector<double> &x, const std::vector<double> &y) {
  require(x.size() == y.size() && x.size() >= 2, ErrorKind::kContract, "spearman needs two aligned samples");
  const auto rx = average_ranks(x);
  const auto ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  require(sxx > 0 && syy > 0, ErrorKind::kMetric, "spearman correlation undefined for a constant sample");
  return sxy / std::sqrt(sxx * syy);
}

// ---------------------------------------------------------------------------
// Random search

void SearchSpace::validate() const {
  auto check = [](bool ok, const char *what) {
    require(ok, ErrorKind::kConfig, std::string("search space: ") + what + " must not be empty");
  };
  check(!batch_sizes.empty(), "batch_sizes");
  check(!learning_rates.empty(), "learning_rates");
  check(!epochs.empty(), "epochs");
  check(!taus.empty(), "taus");
  check(!alphas.empty(), "alphas");
}

json SearchSpace::to_json() const {
  return {{"batch_sizes", batch_sizes}, {"learning_rates", learning_rates}, {"epochs", epochs},
          {"taus", taus},               {"alphas", alphas},                 {"gammas", gammas}};
}

SearchSpace SearchSpace::from_json(const json &doc) {
  SearchSpace s;
  try {
    s.batch_sizes = doc.value("batch_sizes", s.batch_sizes);
    s.learning_rates = doc.value("learning_rates", s.learning_rates);
    s.epochs = doc.value("epochs", s.epochs);
    s.taus = doc.value("taus", s.taus);
    s.alphas = doc.value("alphas", s.alphas);
    s.gammas = doc.value("gammas", s.gammas);
  } catch (const json::exception &e) {
    fail(ErrorKind::kConfig, std::string("search space: ") + e.what());
  }
  s.validate();
  return s;
}

SearchSpace SearchSpace::extended() {
  SearchSpace s;
  s.gammas = {0.0, 0.05, 0.1, 0.2, 0.5};
  return s;
}

TrainConfig SearchDraw::apply(TrainConfig base) const {
  base.batch_size = batch_size;
  base.optimizer.learning_rate = learning_rate;
  base.epochs = epochs;
  base.loss.tau = tau;
  base.loss.alpha = alpha;
  if (gamma) base.loss.gamma = *gamma;
  return base;
}

json SearchDraw::to_json() const {
  json j = {{"batch_size", batch_size}, {"learning_rate", learning_rate}, {"epochs", epochs},
            {"tau", tau},               {"alpha", alpha}};
  if (gamma) j["gamma"] = *gamma;
  return j;
}

std::vector<SearchDraw> draw_search(const SearchSpace &space, int trials, std::uint64_t seed) {
  space.validate();
  require(trials >= 1, ErrorKind::kConfig, "random search needs at least one trial");
  Rng rng(derive_seed(seed, "search"));
  auto pick = [&](const auto &values) { return values[static_cast<std::size_t>(rng.uniform_int(values.size()))]; };
  std::vector<SearchDraw> draws;
  for (int t = 0; t < trials; ++t) {
    SearchDraw d;
    d.batch_size = pick(space.batch_sizes);
    d.learning_rate = pick(space.learning_rates);
    d.epochs = pick(space.epochs);
    d.tau = pick(space.taus);
    d.alpha = pick(space.alphas);
    if (!space.gammas.empty()) d.gamma = pick(space.gammas);
    draws.push_back(d);
  }
  return draws;
}

json SearchResult::to_json() const {
  json t = json::array();
  for (std::size_t i = 0; i < trials.size(); ++i) {
    t.push_back({{"draw", draws[i].to_json()}, {"result", trials[i].to_json()}});
  }
  return {{"best", best}, {"best_draw", draws.at(best).to_json()}, {"trials", t}};
}

SearchResult random_search(const Prepared &data, const TrainConfig &base, const SearchSpace &space, int trials,
                           std::uint64_t seed, const ExperimentOptions &options) {
  SearchResult out;
  out.draws = draw_search(space, trials, seed);
  std::vector<std::size_t> train_rows = data.cohort.indices(Split::kTrain);
  Rng rng(derive_seed(seed, "validation"));
  rng.shuffle(train_rows);
  const auto n_val = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(0.1 * static_cast<double>(train_rows.size()))));
  require(train_rows.size() > n_val, ErrorKind::kPipeline, "training split too small to carve a validation set");
  RunData rows;
  rows.eval_rows.assign(train_rows.begin(), train_rows.begin() + static_cast<std::ptrdiff_t>(n_val));
  rows.train_rows.assign(train_rows.begin() + static_cast<std::ptrdiff_t>(n_val), train_rows.end());
  std::sort(rows.eval_rows.begin(), rows.eval_rows.end());
  std::sort(rows.train_rows.begin(), rows.train_rows.end());
  rows.eval_name = "validation";

  out.trials.resize(out.draws.size());
  std::mutex report_mutex;
  const CounterpartSet *cps = data.counterparts.empty() ? nullptr : &data.counterparts;
  const TrainedGan *gan = data.gan ? &*data.gan : nullptr;
  run_parallel(out.draws.size(), options.threads, [&](std::size_t i) {
    RunResult r = train(data.cohort, cps, out.draws[i].apply(base), data.seed, gan, &rows).result;
    if (options.on_run) {
      std::lock_guard<std::mutex> lock(report_mutex);
      options.on_run("trial " + std::to_string(i), r);
    }
    out.trials[i] = std::move(r);
  });
  for (std::size_t i = 1; i < out.trials.size(); ++i) {
    const auto &a = out.trials[i].report;
    const auto &b = out.trials[out.best].report;
    if (a.f1 > b.f1 || (a.f1 == b.f1 && a.mean_eddi < b.mean_eddi)) out.best = i;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Artifacts

void dump_embeddings(const ModelParams &params, const Cohort &cohort, const std::vector<std::size_t> &rows,
                     const ModalityFlags &flags, bool use_dr, const std::filesystem::path &path) {
  std::ostringstream out;
  out << "id,gender,race,ethnicity,age_bin,ses";
  for (int k = 0; k < params.config.fused_dim; ++k) out << ",e" << k;
  out << "\n";
  constexpr std::size_t kChunk = 256;
  char num[32];
  for (std::size_t start = 0; start < rows.size(); start += kChunk) {
    const std::vector<std::size_t> slice(rows.begin() + static_cast<std::ptrdiff_t>(start),
                                         rows.begin() + static_cast<std::ptrdiff_t>(std::min(rows.size(), start + kChunk)));
    const auto records = records_at(cohort, slice);
    const Prediction pred = predict(record_inputs(records, cohort.schema, params, flags), params, flags, use_dr);
    for (std::size_t i = 0; i < records.size(); ++i) {
      const auto &s = records[i]->s;
      out << records[i]->id << ',' << s.gender << ',' << s.race << ',' << s.ethnicity << ','
          << cohort.schema.age_bins.bin_of(s.age) << ',' << s.ses;
      for (Eigen::Index k = 0; k < pred.e_adj.cols(); ++k) {
        std::snprintf(num, sizeof num, "%.17g", pred.e_adj(static_cast<Eigen::Index>(i), k));
        out << ',' << num;
      }
      out << "\n";
    }
  }
  write_text(path, out.str());
}

EmbeddingTable load_embeddings(const std::filesystem::path &path) {
  std::istringstream in(read_text(path));
  std::string line;
  require(static_cast<bool>(std::getline(in, line)), ErrorKind::kParse, path.string() + ": empty embedding file");
  const auto header_cols = static_cast<std::size_t>(std::count(line.begin(), line.end(), ',')) + 1;
  require(line.rfind("id,gender,race,ethnicity,age_bin,ses", 0) == 0 && header_cols > 6, ErrorKind::kParse,
          path.string() + ": unexpected embedding header");
  const std::size_t dim = header_cols - 6;
  EmbeddingTable t;
  std::vector<std::vector<double>> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    require(cells.size() == header_cols, ErrorKind::kParse,
            path.string() + ": line " + std::to_string(line_no) + " has " + std::to_string(cells.size()) +
                " fields, expected " + std::to_string(header_cols));
    try {
      t.ids.push_back(cells[0]);
      std::array<int, 5> g{};
      for (std::size_t k = 0; k < 5; ++k) g[k] = std::stoi(cells[k + 1]);
      t.groups.push_back(g);
      std::vector<double> v;
      for (std::size_t k = 0; k < dim; ++k) v.push_back(std::stod(cells[k + 6]));
      rows.push_back(std::move(v));
    } catch (const std::exception &) {
      fail(ErrorKind::kParse, path.string() + ": line " + std::to_string(line_no) + " has a malformed number");
    }
  }
  t.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t k = 0; k < dim; ++k) t.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
  }
  return t;
}

void save_model(const TrainedModel &model, const std::filesystem::path &path) {
  write_text(path, canonical_json({{"format", "fairehr-trained-model"},
                                   {"seed", model.result.seed},
                                   {"config", model.result.config.to_json()},
                                   {"model", model.params.to_json()}}));
}

TrainedModel load_model(const std::filesystem::path &path) {
  json doc;
  try {
    doc = json::parse(read_text(path));
  } catch (const json::exception &e) {
    fail(ErrorKind::kParse, path.string() + ": " + e.what());
  }
  require(doc.value("format", std::string()) == "fairehr-trained-model", ErrorKind::kSchema,
          path.string() + ": not a trained model checkpoint");
  TrainedModel m;
  m.params = ModelParams::from_json(doc.at("model"));
  m.result.config = TrainConfig::from_json(doc.at("config"));
  m.result.seed = doc.at("seed").get<std::uint64_t>();
  return m;
}

} // namespace fairehr
