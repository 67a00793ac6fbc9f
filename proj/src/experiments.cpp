#include "closenas/experiments.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "closenas/score.hpp"

namespace closenas {

using nlohmann::json;

double SwitchProbe::max_abs_change() const {
  double m = 0.0;
  for (std::size_t i = 0; i < std::min(before.size(), after.size()); ++i) m = std::max(m, std::abs(after[i] - before[i]));
  return m;
}

SyntheticTask make_task(const ExperimentConfig& config) { return make_synthetic_task(config.data); }

std::vector<CellArchitecture> oracle_architectures(const ExperimentConfig& config) {
  const auto spec = config.spec();
  auto all = enumerate_space(spec).cells;
  if (config.oracle.sample == 0 || config.oracle.sample >= static_cast<int>(all.size())) return all;
  std::mt19937_64 rng(config.oracle.seed ^ 0x6a09e667f3bcc909ULL);
  std::shuffle(all.begin(), all.end(), rng);
  all.resize(static_cast<std::size_t>(config.oracle.sample));
  std::sort(all.begin(), all.end());
  return all;
}

namespace {

std::string epoch_file(int epoch) {
  std::ostringstream s;
  s << "epoch_";
  s.width(4);
  s.fill('0');
  s << epoch << ".ckpt";
  return s.str();
}

std::vector<double> probe_scores(Supernet<float>& net, const std::vector<CellArchitecture>& probes, const Dataset& val,
                                 int batch) {
  std::vector<double> out;
  for (const auto& a : probes) out.push_back(estimate_score(net, a, val, batch));
  return out;
}

}  // namespace

TrainOutcome train_and_rank(const ExperimentConfig& config, const SyntheticTask& task, const TrainRunOptions& options) {
  TrainerConfig tc = config.train;
  tc.supernet.spec = config.spec();
  tc.supernet.seed = tc.seed;
  CloseTrainer trainer(tc, task.train);
  const auto& spec = tc.supernet.spec;
  const auto archs = options.archs.empty() ? enumerate_space(spec).cells : options.archs;

  std::vector<CellArchitecture> probes;
  std::mt19937_64 probe_rng(tc.seed ^ 0x3c6ef372fe94f82bULL);
  for (int i = 0; i < config.eval.probe_archs; ++i) probes.push_back(sample_uniform(spec, probe_rng));

  TrainOutcome outcome;
  SwitchProbe pending;
  trainer.set_switch_hook([&](int epoch, Supernet<float>& net, bool after) {
    if (!after) {
      pending = SwitchProbe{};
      pending.epoch = epoch;
      for (const auto& p : probes) pending.archs.push_back(p.to_string());
      pending.before = probe_scores(net, probes, task.val, config.eval.batch);
    } else {
      pending.after = probe_scores(net, probes, task.val, config.eval.batch);
      if (options.log) {
        options.log("switch at epoch " + std::to_string(epoch) + ": " + std::to_string(net.num_blocks()) +
                    " blocks, max probe score change " + std::to_string(pending.max_abs_change()));
      }
      outcome.switches.push_back(pending);
    }
  });

  const int total = tc.schedule.total_epochs;
  auto should_rank = [&](int epoch) {
    if (options.oracle == nullptr) return false;
    if (epoch == total) return true;
    if (config.eval.every > 0 && epoch % config.eval.every == 0) return true;
    return std::find(options.rank_epochs.begin(), options.rank_epochs.end(), epoch) != options.rank_epochs.end();
  };
  auto should_checkpoint = [&](int epoch) {
    if (!options.checkpoint_dir) return false;
    if (epoch == total) return true;
    return config.eval.checkpoint_every > 0 && epoch % config.eval.checkpoint_every == 0;
  };

  while (!trainer.done()) {
    const auto rec = trainer.run_epoch();
    if (options.log) {
      std::ostringstream s;
      s << "epoch " << rec.epoch << "/" << total << " K=" << rec.blocks << " lr=" << rec.lr << " loss=" << rec.loss
        << " acc=" << rec.accuracy;
      options.log(s.str());
    }
    if (should_rank(rec.epoch)) {
      auto ranked = rank_all(trainer.supernet(), archs, task.val, *options.oracle, config.eval.batch,
                             config.eval.k_percents);
      if (options.log) {
        options.log("  rank@" + std::to_string(rec.epoch) + ": KD=" + std::to_string(ranked.report.kendalls_tau));
      }
      outcome.curve.push_back({rec.epoch, rec.blocks, ranked.report});
      if (rec.epoch == total) outcome.final_scores = std::move(ranked.scores);
    }
    if (should_checkpoint(rec.epoch)) {
      std::filesystem::create_directories(*options.checkpoint_dir);
      auto ckpt = trainer.checkpoint();
      ckpt.meta["config_hash"] = config.hash();
      ckpt.save(*options.checkpoint_dir / epoch_file(rec.epoch));
    }
  }
  outcome.history = trainer.history();
  return outcome;
}

std::vector<std::string> ablation_grid_names() { return {"wit-srt", "gate", "fixed-k", "added-blocks", "variants"}; }

std::vector<GridRow> ablation_grid(const std::string& name, const ExperimentConfig& base) {
  std::vector<GridRow> rows;
  auto close = base;
  close.train.supernet.variant = SupernetVariant::closenet;
  if (name == "wit-srt") {
    for (bool wit : {true, false}) {
      for (bool srt : {true, false}) {
        auto c = close;
        c.train.wit = wit;
        c.train.srt = srt;
        rows.push_back({std::string(wit ? "+WIT" : "-WIT") + (srt ? " +SRT" : " -SRT"), c});
      }
    }
  } else if (name == "gate") {
    auto g = close;
    g.train.supernet.assignment = AssignmentPolicy::gate;
    rows.push_back({"GATE", g});
    auto r = close;
    r.train.supernet.assignment = AssignmentPolicy::random;
    rows.push_back({"random", r});
  } else if (name == "fixed-k") {
    for (int k : base.ablate.fixed_k) {
      auto c = close;
      c.train.supernet.initial_blocks = k;
      c.train.schedule.switch_epochs.clear();
      c.train.schedule.restart_epochs.clear();
      rows.push_back({"fixed K=" + std::to_string(k), c});
    }
    rows.push_back({"CLOSE", close});
  } else if (name == "added-blocks") {
    const auto& sw = base.train.schedule.switch_epochs;
    for (int n : base.ablate.added_blocks) {
      if (n < 0 || n > static_cast<int>(sw.size())) {
        throw std::invalid_argument("ablate.added_blocks entry " + std::to_string(n) + " exceeds the " +
                                    std::to_string(sw.size()) + " configured switch epochs");
      }
      auto c = close;
      c.train.supernet.initial_blocks = 1;
      c.train.schedule.switch_epochs.assign(sw.begin(), sw.begin() + n);
      c.train.schedule.restart_epochs = c.train.schedule.switch_epochs;
      rows.push_back({"added " + std::to_string(n), c});
    }
  } else if (name == "variants") {
    for (auto v : {SupernetVariant::closenet, SupernetVariant::supernet1, SupernetVariant::supernet2,
                   SupernetVariant::close_s}) {
      auto c = base;
      c.train.supernet.variant = v;
      rows.push_back({std::string(variant_name(v)), c});
    }
  } else {
    throw std::invalid_argument("unknown ablation grid '" + name + "'");
  }
  for (auto& r : rows) r.config.train.supernet.spec = r.config.spec();
  return rows;
}

double GridResult::mean_kd() const {
  return kendalls_tau.empty() ? 0.0 : std::accumulate(kendalls_tau.begin(), kendalls_tau.end(), 0.0) / kendalls_tau.size();
}

double GridResult::mean_p5() const {
  return p_at_top5.empty() ? 0.0 : std::accumulate(p_at_top5.begin(), p_at_top5.end(), 0.0) / p_at_top5.size();
}

std::vector<GridResult> run_ablation(const std::string& name, const ExperimentConfig& base, const SyntheticTask& task,
                                     const GroundTruthTable& oracle, const LogFn& log) {
  std::vector<GridResult> out;
  const auto archs = oracle_architectures(base);
  for (const auto& row : ablation_grid(name, base)) {
    GridResult r;
    r.label = row.label;
    for (auto seed : base.ablate.seeds) {
      auto c = row.config;
      c.train.seed = seed;
      TrainRunOptions opt;
      opt.oracle = &oracle;
      opt.archs = archs;
      auto res = train_and_rank(c, task, opt);
      const auto& rep = res.curve.back().report;
      r.seeds.push_back(seed);
      r.kendalls_tau.push_back(rep.kendalls_tau);
      r.p_at_top5.push_back(rep.p_at_topk.count(5) ? rep.p_at_topk.at(5) : 0.0);
      if (log) log(name + " | " + row.label + " | seed " + std::to_string(seed) + " | KD " + std::to_string(rep.kendalls_tau));
    }
    out.push_back(r);
  }
  return out;
}

json curve_to_json(const std::vector<CurvePoint>& curve) {
  json a = json::array();
  for (const auto& p : curve) {
    auto j = p.report.to_json();
    j["epoch"] = p.epoch;
    j["blocks"] = p.blocks;
    a.push_back(j);
  }
  return a;
}

json history_to_json(const std::vector<EpochRecord>& history) {
  json a = json::array();
  for (const auto& r : history) {
    a.push_back({{"epoch", r.epoch}, {"blocks", r.blocks}, {"lr", r.lr}, {"loss", r.loss}, {"accuracy", r.accuracy},
                 {"switched", r.switched}, {"restarted", r.restarted}, {"wit_parent", r.wit_parent}});
  }
  return a;
}

json switches_to_json(const std::vector<SwitchProbe>& switches) {
  json a = json::array();
  for (const auto& s : switches) {
    a.push_back({{"epoch", s.epoch}, {"archs", s.archs}, {"before", s.before}, {"after", s.after},
                 {"max_abs_change", s.max_abs_change()}});
  }
  return a;
}

json grid_to_json(const std::vector<GridResult>& rows) {
  json a = json::array();
  for (const auto& r : rows) {
    a.push_back({{"label", r.label}, {"seeds", r.seeds}, {"kendalls_tau", r.kendalls_tau}, {"p_at_top5", r.p_at_top5},
                 {"mean_kendalls_tau", r.mean_kd()}, {"mean_p_at_top5", r.mean_p5()}});
  }
  return a;
}

}  // namespace closenas
