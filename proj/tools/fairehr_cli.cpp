// fairehr: command-line front end for cohort generation, GAN training,
// counterpart generation, stage-two training and the experiment tables.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "fairehr/counterpart.hpp"
#include "fairehr/data.hpp"
#include "fairehr/error.hpp"
#include "fairehr/gan.hpp"
#include "fairehr/harness.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace fairehr;

namespace {

struct Globals {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out;
  int threads = 1;
};

TrainConfig load_config(const Globals &g) {
  TrainConfig c;
  if (!g.config_path.empty()) {
    json doc;
    try {
      doc = json::parse(read_text(g.config_path));
    } catch (const json::exception &e) {
      fail(ErrorKind::kParse, g.config_path + ": " + e.what());
    }
    c = TrainConfig::from_json(doc);
  }
  if (g.seed) c.seeds = {*g.seed};
  if (!g.out.empty()) c.output_dir = g.out;
  return c;
}

/// A .json archive or a directory holding the four cohort files. Loaded
/// file sets are split with the config's train fraction when they carry no
/// test records yet.
Cohort read_cohort(const std::string &path, const TrainConfig &config, std::uint64_t seed) {
  if (fs::is_directory(path)) {
    Cohort c = load_cohort(CohortPaths::in_directory(path));
    if (c.indices(Split::kTest).empty()) c = split(c, config.cohort.train_fraction, seed);
    return c;
  }
  return load_cohort_archive(path);
}

TrainedGan read_gan(const std::string &path) {
  try {
    return gan_from_json(json::parse(read_text(path)));
  } catch (const json::exception &e) {
    fail(ErrorKind::kParse, path + ": " + e.what());
  }
}

fs::path out_dir(const TrainConfig &config) {
  fs::path dir(config.output_dir);
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, ErrorKind::kIo, "cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

void write_json(const fs::path &path, const json &doc) { write_text(path, canonical_json(doc)); }

class Stopwatch {
public:
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

private:
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

void progress(const std::string &cell, const RunResult &r) {
  std::fprintf(stderr, "[%s] seed %llu  F1 %s  EO %s  EDDI %s  (%.1fs)\n", cell.c_str(),
               static_cast<unsigned long long>(r.seed), format_percent(r.report.f1).c_str(),
               format_percent(r.report.mean_eo).c_str(), format_percent(r.report.mean_eddi).c_str(), r.wall_seconds);
}

/// One prepared data set per configured seed. With `cohort_path` the same
/// ingested cohort is reused and only the downstream stages vary by seed.
std::vector<Prepared> prepare_all(const TrainConfig &config, const std::string &cohort_path) {
  std::vector<Prepared> data;
  for (const std::uint64_t seed : config.seeds) {
    std::optional<Cohort> cohort;
    if (!cohort_path.empty()) cohort = read_cohort(cohort_path, config, seed);
    Stopwatch sw;
    data.push_back(prepare(config, seed, cohort ? &*cohort : nullptr));
    const auto &gate = data.back().gan->gate;
    std::fprintf(stderr, "[prepare] seed %llu  GAN gate MMD %.4f (%s)  %.1fs\n", static_cast<unsigned long long>(seed),
                 gate.mmd, gate.passed ? "passed" : "failed", sw.seconds());
  }
  return data;
}

json cells_json(const TrainConfig &config, const std::vector<CellResult> &cells) {
  json out = {{"config", config.to_json()}, {"cells", json::array()}};
  for (const auto &c : cells) out["cells"].push_back(c.to_json());
  return out;
}

json cells_timing(const std::vector<CellResult> &cells, double total) {
  json t = {{"total_seconds", total}, {"runs", json::array()}};
  for (const auto &c : cells) {
    for (const auto &r : c.runs) t["runs"].push_back({{"cell", c.name}, {"seed", r.seed}, {"seconds", r.wall_seconds}});
  }
  return t;
}

std::vector<double> parse_grid(const std::string &text) {
  std::vector<double> grid;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      std::size_t used = 0;
      grid.push_back(std::stod(item, &used));
      require(used == item.size(), ErrorKind::kParse, "bad alpha grid entry '" + item + "'");
    } catch (const std::logic_error &) {
      fail(ErrorKind::kParse, "bad alpha grid entry '" + item + "'");
    }
  }
  return grid;
}

int report_error(std::string_view kind, const std::string &message) {
  std::cerr << json{{"error", {{"kind", kind}, {"message", message}}}}.dump() << std::endl;
  return 1;
}

} // namespace

int main(int argc, char **argv) {
  CLI::App app{"Fairness-aware contrastive learning on multimodal EHR cohorts"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "JSON configuration file");
  app.add_option("--seed", g.seed, "Run a single seed (overrides the config's seed list)");
  app.add_option("--out", g.out, "Output directory (default: config output_dir)");
  app.add_option("--threads", g.threads, "Worker threads for independent runs")->check(CLI::PositiveNumber);

  std::string cohort_path, gan_path, counterparts_path, model_path, embeddings_path, grid_text = "0,0.2,0.4,0.6,0.8,1";
  int trials = 10;
  bool extended_space = false;

  auto *gen_cohort = app.add_subcommand("gen-cohort", "Synthesize a biased cohort (archive plus the four input files)");
  auto *impute_cmd = app.add_subcommand("impute", "Impute missing longitudinal values");
  impute_cmd->add_option("--cohort", cohort_path, "Cohort archive or input directory")->required();
  auto *train_gan_cmd = app.add_subcommand("train-gan", "Train the counterpart GAN and report its gate");
  train_gan_cmd->add_option("--cohort", cohort_path, "Imputed cohort archive or input directory")->required();
  auto *gen_cp = app.add_subcommand("gen-counterparts", "Build synthetic counterparts for the training split");
  gen_cp->add_option("--cohort", cohort_path, "Imputed cohort archive")->required();
  gen_cp->add_option("--gan", gan_path, "Trained GAN checkpoint")->required();
  auto *train_cmd = app.add_subcommand("train", "Train one model and evaluate it on the test split");
  train_cmd->add_option("--cohort", cohort_path, "Cohort archive or input directory (default: synthesize)");
  train_cmd->add_option("--gan", gan_path, "Trained GAN checkpoint");
  train_cmd->add_option("--counterparts", counterparts_path, "Counterpart JSONL (requires --cohort)");
  auto *evaluate_cmd = app.add_subcommand("evaluate", "Evaluate a trained model on a cohort's test split");
  evaluate_cmd->add_option("--model", model_path, "Trained model checkpoint")->required();
  evaluate_cmd->add_option("--cohort", cohort_path, "Cohort archive or input directory")->required();
  auto *ablate_mod = app.add_subcommand("ablate-modalities", "D, D+L, D+N, D+L+N over the configured seeds");
  ablate_mod->add_option("--cohort", cohort_path, "Cohort archive or input directory (default: synthesize per seed)");
  auto *ablate_comp = app.add_subcommand("ablate-components", "CL/DR component ablation over the configured seeds");
  ablate_comp->add_option("--cohort", cohort_path, "Cohort archive or input directory (default: synthesize per seed)");
  auto *sweep = app.add_subcommand("alpha-sweep", "Fairness-utility curve over alpha");
  sweep->add_option("--cohort", cohort_path, "Cohort archive or input directory (default: synthesize per seed)");
  sweep->add_option("--grid", grid_text, "Comma-separated alpha values");
  auto *search = app.add_subcommand("random-search", "Random hyperparameter search on a validation split");
  search->add_option("--cohort", cohort_path, "Cohort archive or input directory (default: synthesize)");
  search->add_option("--trials", trials, "Number of draws")->check(CLI::PositiveNumber);
  search->add_flag("--extended-space", extended_space, "Also search gamma");
  auto *dump = app.add_subcommand("dump-embeddings", "Export test-split e_adj vectors with subgroup ids");
  dump->add_option("--model", model_path, "Trained model checkpoint")->required();
  dump->add_option("--cohort", cohort_path, "Cohort archive or input directory")->required();
  auto *load_check = app.add_subcommand("load-check", "Validate and summarize an input file set or artifact");
  load_check->add_option("--cohort", cohort_path, "Cohort archive or input directory");
  load_check->add_option("--embeddings", embeddings_path, "Embedding CSV");
  load_check->add_option("--counterparts", counterparts_path, "Counterpart JSONL (requires --cohort)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp &e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp &e) {
    return app.exit(e);
  } catch (const CLI::ParseError &e) {
    return report_error("usage", e.what());
  }

  try {
    const TrainConfig config = load_config(g);
    const std::uint64_t seed = config.seeds.front();
    Stopwatch clock;

    if (gen_cohort->parsed()) {
      const fs::path dir = out_dir(config);
      const Cohort cohort = synthesize_cohort(config.cohort, seed);
      save_cohort(cohort, dir / "cohort.json");
      fs::create_directories(dir / "cohort");
      write_cohort_files(cohort, CohortPaths::in_directory(dir / "cohort"));
      std::cout << json{{"records", cohort.size()}, {"train", cohort.indices(Split::kTrain).size()},
                        {"test", cohort.indices(Split::kTest).size()}, {"archive", (dir / "cohort.json").string()}}
                       .dump()
                << "\n";
    } else if (impute_cmd->parsed()) {
      const fs::path dir = out_dir(config);
      const Cohort cohort = impute(read_cohort(cohort_path, config, seed), config.impute_sweeps);
      save_cohort(cohort, dir / "imputed.json");
      std::cout << json{{"records", cohort.size()}, {"archive", (dir / "imputed.json").string()}}.dump() << "\n";
    } else if (train_gan_cmd->parsed()) {
      const fs::path dir = out_dir(config);
      const TrainedGan gan = train_gan(read_cohort(cohort_path, config, seed), config.gan, seed);
      write_json(dir / "gan.json", gan_to_json(gan));
      write_json(dir / "gate.json", gan.gate.to_json());
      std::cout << gan.gate.to_json().dump() << "\n";
    } else if (gen_cp->parsed()) {
      const fs::path dir = out_dir(config);
      const Cohort cohort = read_cohort(cohort_path, config, seed);
      const TrainedGan gan = read_gan(gan_path);
      const CounterpartSet cps = build_counterparts(cohort, &gan, config.counterparts, seed);
      save_counterparts(cps, cohort.schema, dir / "counterparts.jsonl");
      std::cout << json{{"counterparts", cps.size()}, {"violations", counterpart_violations(cohort, cps).size()}}.dump()
                << "\n";
    } else if (train_cmd->parsed()) {
      const fs::path dir = out_dir(config);
      require(counterparts_path.empty() || !cohort_path.empty(), ErrorKind::kConfig,
              "--counterparts needs the --cohort they were built from");
      Prepared data;
      if (!counterparts_path.empty()) {
        data.seed = seed;
        data.cohort = impute(read_cohort(cohort_path, config, seed), config.impute_sweeps);
        data.counterparts = load_counterparts(counterparts_path, data.cohort.schema);
        if (!gan_path.empty()) data.gan = read_gan(gan_path);
      } else {
        std::optional<Cohort> cohort;
        if (!cohort_path.empty()) cohort = read_cohort(cohort_path, config, seed);
        data = prepare(config, seed, cohort ? &*cohort : nullptr);
      }
      const TrainedModel model = train(data.cohort, data.counterparts.empty() ? nullptr : &data.counterparts, config,
                                       seed, data.gan ? &*data.gan : nullptr);
      write_json(dir / "result.json", model.result.to_json());
      write_text(dir / "table.txt", model.result.report.to_table());
      save_model(model, dir / "model.json");
      write_json(dir / "timing.json", {{"train_seconds", model.result.wall_seconds}, {"total_seconds", clock.seconds()}});
      std::cout << model.result.report.to_table();
    } else if (evaluate_cmd->parsed()) {
      const fs::path dir = out_dir(config);
      const TrainedModel model = load_model(model_path);
      const TrainConfig &mc = model.result.config;
      const Cohort cohort = impute(read_cohort(cohort_path, mc, model.result.seed), mc.impute_sweeps);
      const FairnessReport report =
          evaluate(model.params, cohort, cohort.indices(Split::kTest), mc.modalities, mc.use_dr, mc.threshold);
      write_json(dir / "result.json", {{"evaluated_on", "test"}, {"report", report.to_json()}});
      write_text(dir / "table.txt", report.to_table());
      std::cout << report.to_table();
    } else if (ablate_mod->parsed() || ablate_comp->parsed() || sweep->parsed()) {
      const fs::path dir = out_dir(config);
      const auto data = prepare_all(config, cohort_path);
      ExperimentOptions options{g.threads, progress};
      std::vector<CellResult> cells;
      json result;
      if (sweep->parsed()) {
        const auto grid = parse_grid(grid_text);
        cells = alpha_sweep(data, config, grid, options);
        write_text(dir / "curve.csv", alpha_curve_csv(grid, cells));
        result = cells_json(config, cells);
        result["grid"] = grid;
      } else {
        cells = ablate_mod->parsed() ? ablate_modalities(data, config, options) : ablate_components(data, config, options);
        result = cells_json(config, cells);
      }
      write_json(dir / "result.json", result);
      write_text(dir / "table.txt", format_cells(cells));
      write_json(dir / "timing.json", cells_timing(cells, clock.seconds()));
      std::cout << format_cells(cells);
    } else if (search->parsed()) {
      const fs::path dir = out_dir(config);
      std::optional<Cohort> cohort;
      if (!cohort_path.empty()) cohort = read_cohort(cohort_path, config, seed);
      const Prepared data = prepare(config, seed, cohort ? &*cohort : nullptr);
      const SearchSpace space = extended_space ? SearchSpace::extended() : SearchSpace{};
      const SearchResult r = random_search(data, config, space, trials, seed, {g.threads, progress});
      json result = r.to_json();
      result["space"] = space.to_json();
      write_json(dir / "result.json", result);
      std::ostringstream table;
      table << "best trial " << r.best << ": " << r.draws[r.best].to_json().dump() << "\n"
            << format_summary_table({{"validation", r.trials[r.best].report}});
      write_text(dir / "table.txt", table.str());
      write_json(dir / "timing.json", {{"total_seconds", clock.seconds()}});
      std::cout << table.str();
    } else if (dump->parsed()) {
      const fs::path dir = out_dir(config);
      const TrainedModel model = load_model(model_path);
      const TrainConfig &mc = model.result.config;
      const Cohort cohort = impute(read_cohort(cohort_path, mc, model.result.seed), mc.impute_sweeps);
      const auto rows = cohort.indices(Split::kTest);
      dump_embeddings(model.params, cohort, rows, mc.modalities, mc.use_dr, dir / "embeddings.csv");
      std::cout << json{{"rows", rows.size()}, {"path", (dir / "embeddings.csv").string()}}.dump() << "\n";
    } else if (load_check->parsed()) {
      json summary = json::object();
      require(!cohort_path.empty() || !embeddings_path.empty(), ErrorKind::kConfig,
              "load-check needs --cohort and/or --embeddings");
      std::optional<Cohort> cohort;
      if (!cohort_path.empty()) {
        cohort = read_cohort(cohort_path, config, seed);
        summary["cohort"] = {{"records", cohort->size()},
                             {"time_steps", cohort->schema.time_steps},
                             {"features", cohort->schema.feature_count()},
                             {"note_dim", cohort->schema.note_dim},
                             {"has_missing", cohort->has_missing()}};
      }
      if (!counterparts_path.empty()) {
        require(cohort.has_value(), ErrorKind::kConfig, "--counterparts needs --cohort");
        const CounterpartSet cps = load_counterparts(counterparts_path, cohort->schema);
        summary["counterparts"] = {{"records", cps.size()}, {"violations", counterpart_violations(*cohort, cps)}};
      }
      if (!embeddings_path.empty()) {
        const EmbeddingTable t = load_embeddings(embeddings_path);
        summary["embeddings"] = {{"rows", t.ids.size()}, {"dim", t.values.cols()}};
      }
      std::cout << summary.dump() << "\n";
    }
  } catch (const Error &e) {
    return report_error(to_string(e.kind()), e.what());
  } catch (const std::exception &e) {
    return report_error("internal", e.what());
  }
  return 0;
}
