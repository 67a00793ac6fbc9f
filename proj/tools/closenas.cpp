#include <algorithm>
#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "closenas/compute/optim.hpp"
#include "closenas/report.hpp"

using namespace closenas;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Args {
  std::vector<std::string> configs;
  std::vector<std::string> sets;
  std::string variant;
  std::string grid;
  bool quiet = false;
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

ExperimentConfig resolve(const std::string& path, const Args& args) {
  auto base = path.rfind("preset:", 0) == 0 ? (path == "preset:acceptance" ? acceptance_preset()
                                                : path == "preset:default"  ? ExperimentConfig{}
                                                                            : throw UsageError("unknown preset " + path))
                                            : ExperimentConfig::load(path);
  auto doc = base.to_json();
  if (!args.variant.empty()) apply_override(doc, "train.variant=\"" + args.variant + "\"");
  for (const auto& s : args.sets) apply_override(doc, s);
  auto cfg = ExperimentConfig::from_json(doc);
  cfg.validate();
  return cfg;
}

LogFn logger(const Args& args) {
  if (args.quiet) return {};
  return [](const std::string& m) { std::cerr << m << std::endl; };
}

GroundTruthTable load_oracle(const ExperimentConfig& cfg, bool required) {
  const auto p = oracle_path(cfg);
  if (!fs::exists(p)) {
    if (required) throw ReportError("missing oracle table " + p.string() + "; run the oracle subcommand first");
    return {};
  }
  return GroundTruthTable::load(p);
}

int cmd_oracle(const ExperimentConfig& cfg, const Args& args) {
  const auto path = oracle_path(cfg);
  const auto archs = oracle_architectures(cfg);
  if (fs::exists(path)) {
    const auto t = GroundTruthTable::load(path);
    if (t.size() == archs.size()) {
      std::cout << path.string() << "\n";
      return 0;
    }
  }
  const auto task = make_task(cfg);
  OracleOptions opt;
  opt.workers = cfg.oracle.workers;
  const auto start = std::chrono::steady_clock::now();
  if (!args.quiet) {
    opt.progress = [start](int done, int total) {
      const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      std::cerr << "oracle " << done << "/" << total << " classes (" << static_cast<int>(s) << " s)" << std::endl;
    };
  }
  fs::create_directories(path.parent_path());
  GroundTruthTable table;
  try {
    table = build_oracle_table(cfg.spec(), archs, cfg.oracle.recipe, cfg.oracle.seed, task, cfg.data.id(), opt);
  } catch (const OracleError& e) {
    auto partial = e.partial();
    partial.meta["oracle_hash"] = cfg.oracle_hash();
    partial.save(path.string() + ".partial");
    throw;
  }
  table.meta["oracle_hash"] = cfg.oracle_hash();
  table.save(path);
  std::cout << path.string() << "\n";
  return 0;
}

int cmd_train(const ExperimentConfig& cfg, const Args& args) {
  const auto dir = run_directory(cfg);
  write_config_artifact(dir, cfg);
  const auto oracle = load_oracle(cfg, false);
  const auto task = make_task(cfg);
  TrainRunOptions opt;
  if (oracle.size() > 0) {
    opt.oracle = &oracle;
    opt.archs = oracle_architectures(cfg);
  }
  opt.checkpoint_dir = dir / "checkpoints";
  opt.log = logger(args);
  const auto outcome = train_and_rank(cfg, task, opt);
  write_train_artifacts(dir, cfg, outcome);
  if (!outcome.final_scores.empty()) write_scores(dir / "scores.csv", cfg.hash(), opt.archs, outcome.final_scores,
                 outcome.history.empty() ? 0 : outcome.history.back().epoch);
  std::cout << dir.string() << "\n";
  return 0;
}

int cmd_rank(const ExperimentConfig& cfg, const Args& args) {
  const auto dir = run_directory(cfg);
  const auto ckdir = dir / "checkpoints";
  if (!fs::is_directory(ckdir)) throw ReportError("no checkpoints under " + ckdir.string() + "; run train first");
  std::vector<fs::path> ckpts;
  for (const auto& e : fs::directory_iterator(ckdir)) {
    if (e.path().extension() == ".ckpt") ckpts.push_back(e.path());
  }
  std::sort(ckpts.begin(), ckpts.end());
  if (ckpts.empty()) throw ReportError("no checkpoints under " + ckdir.string());
  const auto oracle = load_oracle(cfg, true);
  const auto task = make_task(cfg);
  const auto archs = oracle_architectures(cfg);
  TrainerConfig tc = cfg.train;
  tc.supernet.spec = cfg.spec();
  tc.supernet.seed = tc.seed;
  std::vector<CurvePoint> curve;
  std::vector<double> last;
  for (const auto& p : ckpts) {
    const auto ck = compute::Checkpoint::load(p);
    if (!ck.meta.count("config_hash") || ck.meta.at("config_hash") != cfg.hash()) {
      throw ReportError(p.string() + " belongs to a different config; refusing mixed-hash inputs");
    }
    auto trainer = CloseTrainer::restore(tc, task.train, ck);
    auto r = rank_all(trainer.supernet(), archs, task.val, oracle, cfg.eval.batch, cfg.eval.k_percents);
    if (auto log = logger(args)) log(p.filename().string() + ": KD=" + std::to_string(r.report.kendalls_tau));
    curve.push_back({trainer.epoch(), trainer.supernet().num_blocks(), r.report});
    last = std::move(r.scores);
  }
  write_rank_artifact(dir, cfg, curve);
  write_scores(dir / "scores.csv", cfg.hash(), archs, last, curve.back().epoch);
  std::cout << (dir / "rank.json").string() << "\n";
  return 0;
}

int cmd_search(const ExperimentConfig& cfg, const Args&) {
  const auto dir = run_directory(cfg);
  write_config_artifact(dir, cfg);
  const auto oracle = load_oracle(cfg, false);
  const auto task = make_task(cfg);
  const auto result = run_cars_search(cfg.search(), task, oracle.size() > 0 ? &oracle : nullptr);
  const auto h = cfg.hash();
  std::ostringstream lines;
  for (const auto& g : result.history) {
    auto j = g.to_json();
    j["config_hash"] = h;
    lines << j.dump() << "\n";
  }
  std::ofstream(dir / "search.jsonl", std::ios::binary) << lines.str();
  json out{{"config_hash", h}, {"best_arch", result.best.to_string()}, {"fitness", result.fitness}};
  if (result.true_score) out["true_score"] = *result.true_score;
  if (result.true_percentile) out["true_percentile"] = *result.true_percentile;
  write_json_file(dir / "search.json", out);
  std::cout << out.dump() << "\n";
  return 0;
}

int cmd_ablate(const ExperimentConfig& cfg, const Args& args) {
  const auto dir = run_directory(cfg);
  write_config_artifact(dir, cfg);
  const auto oracle = load_oracle(cfg, true);
  const auto task = make_task(cfg);
  const auto rows = run_ablation(args.grid, cfg, task, oracle, logger(args));
  const auto h = cfg.hash();
  write_json_file(dir / ("ablate-" + args.grid + ".json"), {{"config_hash", h}, {"grid", args.grid}, {"rows", grid_to_json(rows)}});
  std::ostringstream csv;
  csv << "# config_hash=" << h << "\nlabel,mean_kendalls_tau,mean_p_at_top5\n";
  for (const auto& r : rows) csv << csv_quote(r.label) << "," << r.mean_kd() << "," << r.mean_p5() << "\n";
  std::ofstream(dir / ("ablate-" + args.grid + ".csv"), std::ios::binary) << csv.str();
  std::cout << csv.str();
  return 0;
}

int cmd_report(const Args& args) {
  std::vector<ExperimentConfig> cfgs;
  for (const auto& c : args.configs) cfgs.push_back(resolve(c, args));
  std::vector<fs::path> dirs;
  std::string joined;
  for (const auto& c : cfgs) {
    dirs.push_back(run_directory(c));
    joined += c.hash();
  }
  fs::path out = dirs.front() / "report";
  if (dirs.size() > 1) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(joined)));
    out = fs::path(cfgs.front().output_dir) / ("report-" + std::string(buf));
  }
  emit_report(dirs, out);
  std::cout << out.string() << "\n";
  return 0;
}

int cmd_print_config(const Args& args) {
  std::cout << resolve(args.configs.empty() ? "preset:default" : args.configs.front(), args).to_json().dump(2) << "\n";
  return 0;
}

void print_error(const std::string& sub, const std::string& type, const std::string& message, int code) {
  json rec{{"error", {{"subcommand", sub}, {"type", type}, {"message", message}, {"exit_code", code}}}};
  std::cerr << rec.dump() << std::endl;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Curriculum supernet training, ranking and search on cell search spaces"};
  app.require_subcommand(1);
  Args args;
  auto common = [&](CLI::App* s, bool multi) {
    auto* o = s->add_option("--config", args.configs, "JSON config file, or preset:acceptance / preset:default");
    if (!multi) o->expected(1);
    o->required(s->get_name() != "print-config");
    s->add_option("--set", args.sets, "override key=value (dotted keys, JSON values)");
    s->add_option("--variant", args.variant, "shorthand for --set train.variant=...")
        ->check(CLI::IsMember({"closenet", "close_s", "supernet1", "supernet2"}));
    s->add_flag("-q,--quiet", args.quiet, "suppress progress output");
  };
  auto* oracle = app.add_subcommand("oracle", "train every architecture stand-alone into the ground-truth table");
  auto* train = app.add_subcommand("train", "train a supernet variant; ranks against the oracle when present");
  auto* rank = app.add_subcommand("rank", "rank all architectures at every saved checkpoint");
  auto* search = app.add_subcommand("search", "evolutionary search on top of supernet training");
  auto* ablate = app.add_subcommand("ablate", "run an ablation grid over seeds");
  auto* report = app.add_subcommand("report", "emit summary JSON, CSV tables and SVG plots for finished runs");
  auto* print = app.add_subcommand("print-config", "print the fully resolved config");
  for (auto* s : {oracle, train, rank, search, ablate, print}) common(s, false);
  common(report, true);
  ablate->add_option("grid", args.grid, "grid name")->required()->check(CLI::IsMember(ablation_grid_names()));

  std::string sub = "closenas";
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error(sub, "usage", e.what(), 2);
    return 2;
  }
  sub = app.get_subcommands().front()->get_name();
  try {
    if (sub == "report") return cmd_report(args);
    if (sub == "print-config") return cmd_print_config(args);
    const auto cfg = resolve(args.configs.front(), args);
    if (sub == "oracle") return cmd_oracle(cfg, args);
    if (sub == "train") return cmd_train(cfg, args);
    if (sub == "rank") return cmd_rank(cfg, args);
    if (sub == "search") return cmd_search(cfg, args);
    if (sub == "ablate") return cmd_ablate(cfg, args);
  } catch (const UsageError& e) {
    print_error(sub, "usage", e.what(), 2);
    return 2;
  } catch (const std::invalid_argument& e) {
    print_error(sub, "validation", e.what(), 3);
    return 3;
  } catch (const ReportError& e) {
    print_error(sub, "missing_or_mismatched_input", e.what(), 4);
    return 4;
  } catch (const compute::DivergenceError& e) {
    print_error(sub, "divergence", e.what(), 5);
    return 5;
  } catch (const std::exception& e) {
    print_error(sub, "runtime", e.what(), 1);
    return 1;
  }
  return 1;
}
