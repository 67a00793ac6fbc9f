#include "closenas/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace closenas {

using nlohmann::json;

namespace {

std::string assignment_name(AssignmentPolicy p) { return p == AssignmentPolicy::gate ? "gate" : "random"; }

AssignmentPolicy assignment_from_name(const std::string& s) {
  if (s == "gate") return AssignmentPolicy::gate;
  if (s == "random") return AssignmentPolicy::random;
  throw std::invalid_argument("supernet.assignment must be 'gate' or 'random', got '" + s + "'");
}

// Every key of `given` must exist in `reference` (recursively for objects).
void check_known(const json& given, const json& reference, const std::string& prefix) {
  for (auto it = given.begin(); it != given.end(); ++it) {
    const auto key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!reference.contains(it.key())) throw std::invalid_argument("unknown config key '" + key + "'");
    if (it->is_object() && reference.at(it.key()).is_object()) check_known(*it, reference.at(it.key()), key);
  }
}

template <typename T>
T get(const json& j, const char* section, const char* key) {
  try {
    return j.at(section).at(key).get<T>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config key '") + section + "." + key + "': " + e.what());
  }
}

std::string hex16(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex;
  s.width(16);
  s.fill('0');
  s << v;
  return s.str();
}

}  // namespace

SearchSpaceSpec ExperimentConfig::spec() const {
  SearchSpaceSpec s;
  if (space == "micro") s = SearchSpaceSpec::micro();
  else if (space == "nb201") s = SearchSpaceSpec::nb201_like();
  else throw std::invalid_argument("space must be 'micro' or 'nb201', got '" + space + "'");
  s.stacking = stacking;
  return s;
}

SearchConfig ExperimentConfig::search() const {
  SearchConfig s;
  s.trainer = train;
  s.trainer.supernet.spec = spec();
  s.population = search_population;
  s.warmup_fraction = search_warmup_fraction;
  s.epochs_per_iteration = search_epochs_per_iteration;
  s.eval_batch = eval.batch;
  return s;
}

json ExperimentConfig::to_json() const {
  const auto& sn = train.supernet;
  return {
      {"output_dir", output_dir},
      {"space", space},
      {"stacking",
       {{"stages", stacking.stages},
        {"cells_per_stage", stacking.cells_per_stage},
        {"base_channels", stacking.base_channels},
        {"image_size", stacking.image_size},
        {"input_channels", stacking.input_channels},
        {"num_classes", stacking.num_classes}}},
      {"data",
       {{"train_size", data.train_size},
        {"val_size", data.val_size},
        {"teacher_width", data.teacher_width},
        {"seed", data.seed}}},
      {"supernet",
       {{"assignment", assignment_name(sn.assignment)},
        {"initial_blocks", sn.initial_blocks},
        {"dropout", sn.dropout},
        {"op_dim", sn.gate.embedder.op_dim},
        {"node_dim", sn.gate.embedder.node_dim},
        {"hidden", sn.gate.hidden},
        {"tau_final", train.tau_final}}},
      {"train",
       {{"variant", std::string(variant_name(sn.variant))},
        {"total_epochs", train.schedule.total_epochs},
        {"iterations_per_epoch", train.schedule.iterations_per_epoch},
        {"switch_epochs", train.schedule.switch_epochs},
        {"restart_epochs", train.schedule.restart_epochs},
        {"lr", train.sgd.lr},
        {"momentum", train.sgd.momentum},
        {"weight_decay", train.sgd.weight_decay},
        {"clip_norm", train.clip_norm},
        {"batch_size", train.batch_size},
        {"tau", sn.gate.tau},
        {"seed", train.seed},
        {"plateau_patience", train.plateau_patience},
        {"plateau_factor", train.plateau_factor},
        {"wit", train.wit},
        {"srt", train.srt},
        {"probe_size", train.probe_size}}},
      {"eval",
       {{"batch", eval.batch},
        {"every", eval.every},
        {"k_percents", eval.k_percents},
        {"probe_archs", eval.probe_archs},
        {"checkpoint_every", eval.checkpoint_every}}},
      {"oracle",
       {{"epochs", oracle.recipe.epochs},
        {"batch_size", oracle.recipe.batch_size},
        {"lr_max", oracle.recipe.lr_max},
        {"lr_min", oracle.recipe.lr_min},
        {"momentum", oracle.recipe.momentum},
        {"weight_decay", oracle.recipe.weight_decay},
        {"clip_norm", oracle.recipe.clip_norm},
        {"dropout", oracle.recipe.dropout},
        {"eval_batch", oracle.recipe.eval_batch},
        {"seed", oracle.seed},
        {"workers", oracle.workers},
        {"sample", oracle.sample}}},
      {"search",
       {{"population", search_population},
        {"warmup_fraction", search_warmup_fraction},
        {"epochs_per_iteration", search_epochs_per_iteration}}},
      {"ablate", {{"seeds", ablate.seeds}, {"fixed_k", ablate.fixed_k}, {"added_blocks", ablate.added_blocks}}},
  };
}

ExperimentConfig ExperimentConfig::from_json(const json& given) {
  if (!given.is_object()) throw std::invalid_argument("config must be a JSON object");
  const ExperimentConfig defaults;
  json j = defaults.to_json();
  check_known(given, j, "");
  j.merge_patch(given);

  ExperimentConfig c;
  try {
    c.output_dir = j.at("output_dir").get<std::string>();
    c.space = j.at("space").get<std::string>();
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  c.stacking.stages = get<int>(j, "stacking", "stages");
  c.stacking.cells_per_stage = get<int>(j, "stacking", "cells_per_stage");
  c.stacking.base_channels = get<int>(j, "stacking", "base_channels");
  c.stacking.image_size = get<int>(j, "stacking", "image_size");
  c.stacking.input_channels = get<int>(j, "stacking", "input_channels");
  c.stacking.num_classes = get<int>(j, "stacking", "num_classes");

  c.data.train_size = get<int>(j, "data", "train_size");
  c.data.val_size = get<int>(j, "data", "val_size");
  c.data.teacher_width = get<int>(j, "data", "teacher_width");
  c.data.seed = get<std::uint64_t>(j, "data", "seed");
  c.data.image_size = c.stacking.image_size;
  c.data.channels = c.stacking.input_channels;
  c.data.num_classes = c.stacking.num_classes;

  auto& sn = c.train.supernet;
  sn.assignment = assignment_from_name(get<std::string>(j, "supernet", "assignment"));
  sn.initial_blocks = get<int>(j, "supernet", "initial_blocks");
  sn.dropout = get<double>(j, "supernet", "dropout");
  sn.gate.embedder.op_dim = get<int>(j, "supernet", "op_dim");
  sn.gate.embedder.node_dim = get<int>(j, "supernet", "node_dim");
  sn.gate.hidden = get<std::vector<int>>(j, "supernet", "hidden");
  c.train.tau_final = get<double>(j, "supernet", "tau_final");

  sn.variant = variant_from_name(get<std::string>(j, "train", "variant"));
  c.train.schedule.total_epochs = get<int>(j, "train", "total_epochs");
  c.train.schedule.iterations_per_epoch = get<int>(j, "train", "iterations_per_epoch");
  c.train.schedule.switch_epochs = get<std::vector<int>>(j, "train", "switch_epochs");
  c.train.schedule.restart_epochs = get<std::vector<int>>(j, "train", "restart_epochs");
  c.train.sgd.lr = get<double>(j, "train", "lr");
  c.train.sgd.momentum = get<double>(j, "train", "momentum");
  c.train.sgd.weight_decay = get<double>(j, "train", "weight_decay");
  c.train.clip_norm = get<double>(j, "train", "clip_norm");
  c.train.batch_size = get<int>(j, "train", "batch_size");
  sn.gate.tau = get<double>(j, "train", "tau");
  c.train.seed = get<std::uint64_t>(j, "train", "seed");
  sn.seed = c.train.seed;
  c.train.plateau_patience = get<int>(j, "train", "plateau_patience");
  c.train.plateau_factor = get<double>(j, "train", "plateau_factor");
  c.train.wit = get<bool>(j, "train", "wit");
  c.train.srt = get<bool>(j, "train", "srt");
  c.train.probe_size = get<int>(j, "train", "probe_size");

  c.eval.batch = get<int>(j, "eval", "batch");
  c.eval.every = get<int>(j, "eval", "every");
  c.eval.k_percents = get<std::vector<int>>(j, "eval", "k_percents");
  c.eval.probe_archs = get<int>(j, "eval", "probe_archs");
  c.eval.checkpoint_every = get<int>(j, "eval", "checkpoint_every");

  c.oracle.recipe.epochs = get<int>(j, "oracle", "epochs");
  c.oracle.recipe.batch_size = get<int>(j, "oracle", "batch_size");
  c.oracle.recipe.lr_max = get<double>(j, "oracle", "lr_max");
  c.oracle.recipe.lr_min = get<double>(j, "oracle", "lr_min");
  c.oracle.recipe.momentum = get<double>(j, "oracle", "momentum");
  c.oracle.recipe.weight_decay = get<double>(j, "oracle", "weight_decay");
  c.oracle.recipe.clip_norm = get<double>(j, "oracle", "clip_norm");
  c.oracle.recipe.dropout = get<double>(j, "oracle", "dropout");
  c.oracle.recipe.eval_batch = get<int>(j, "oracle", "eval_batch");
  c.oracle.seed = get<std::uint64_t>(j, "oracle", "seed");
  c.oracle.workers = get<int>(j, "oracle", "workers");
  c.oracle.sample = get<int>(j, "oracle", "sample");

  c.search_population = get<int>(j, "search", "population");
  c.search_warmup_fraction = get<double>(j, "search", "warmup_fraction");
  c.search_epochs_per_iteration = get<int>(j, "search", "epochs_per_iteration");

  c.ablate.seeds = get<std::vector<std::uint64_t>>(j, "ablate", "seeds");
  c.ablate.fixed_k = get<std::vector<int>>(j, "ablate", "fixed_k");
  c.ablate.added_blocks = get<std::vector<int>>(j, "ablate", "added_blocks");

  sn.spec = c.spec();
  c.validate();
  return c;
}

void ExperimentConfig::validate() const {
  auto fail = [](const std::string& key, const std::string& why) {
    throw std::invalid_argument("config key '" + key + "': " + why);
  };
  if (stacking.stages < 1) fail("stacking.stages", "must be >= 1");
  if (stacking.cells_per_stage < 1) fail("stacking.cells_per_stage", "must be >= 1");
  if (stacking.base_channels < 1) fail("stacking.base_channels", "must be >= 1");
  if (stacking.image_size < 2 || stacking.image_size % (1 << (stacking.stages - 1)) != 0) {
    fail("stacking.image_size", "must be divisible by 2^(stages-1)");
  }
  if (data.train_size < 1) fail("data.train_size", "must be >= 1");
  if (data.val_size < 1) fail("data.val_size", "must be >= 1");
  if (train.supernet.initial_blocks < 1) fail("supernet.initial_blocks", "must be >= 1");
  if (train.supernet.dropout < 0.0 || train.supernet.dropout >= 1.0) fail("supernet.dropout", "must lie in [0, 1)");
  if (!(train.supernet.gate.tau > 0.0)) fail("train.tau", "must be positive");
  if (!(train.tau_final > 0.0)) fail("supernet.tau_final", "must be positive");
  if (!(train.sgd.lr > 0.0)) fail("train.lr", "must be positive");
  if (train.batch_size < 1) fail("train.batch_size", "must be >= 1");
  if (train.plateau_patience < 1) fail("train.plateau_patience", "must be >= 1");
  if (train.probe_size < 1) fail("train.probe_size", "must be >= 1");
  try {
    train.schedule.validate();
  } catch (const std::invalid_argument& e) {
    fail("train.switch_epochs/restart_epochs", e.what());
  }
  if (eval.batch < 1) fail("eval.batch", "must be >= 1");
  if (eval.every < 0) fail("eval.every", "must be >= 0");
  for (int k : eval.k_percents) {
    if (k < 1 || k > 100) fail("eval.k_percents", "entries must lie in [1, 100]");
  }
  if (eval.probe_archs < 1) fail("eval.probe_archs", "must be >= 1");
  if (oracle.recipe.epochs < 1) fail("oracle.epochs", "must be >= 1");
  if (oracle.workers < 1) fail("oracle.workers", "must be >= 1");
  if (oracle.sample < 0) fail("oracle.sample", "must be >= 0");
  if (search_population < 1) fail("search.population", "must be >= 1");
  if (search_warmup_fraction < 0.0 || search_warmup_fraction >= 1.0) fail("search.warmup_fraction", "must lie in [0, 1)");
  if (search_epochs_per_iteration < 1) fail("search.epochs_per_iteration", "must be >= 1");
  if (ablate.seeds.empty()) fail("ablate.seeds", "must not be empty");
  (void)spec();
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot read config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument(path.string() + ": " + e.what());
  }
  return from_json(j);
}

std::string ExperimentConfig::hash() const {
  auto j = to_json();
  j.erase("output_dir");
  j["oracle"].erase("workers");
  return hex16(fnv1a64(j.dump()));
}

std::string ExperimentConfig::oracle_hash() const {
  auto j = to_json();
  json subset{{"space", j["space"]}, {"stacking", j["stacking"]}, {"data", j["data"]}, {"oracle", j["oracle"]}};
  subset["oracle"].erase("workers");
  return hex16(fnv1a64(subset.dump()));
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw std::invalid_argument("override '" + assignment + "' is not of the form key=value");
  }
  const auto key = assignment.substr(0, eq);
  const auto text = assignment.substr(eq + 1);
  json* node = &doc;
  std::stringstream path(key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(path, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (!node->is_object() || !node->contains(parts[i])) {
      throw std::invalid_argument("unknown config key '" + key + "'");
    }
    node = &(*node)[parts[i]];
  }
  json value;
  try {
    value = json::parse(text);
  } catch (const json::parse_error&) {
    value = text;
  }
  *node = value;
}

ExperimentConfig acceptance_preset() {
  ExperimentConfig c;
  c.output_dir = "acceptance_runs";
  c.stacking.stages = 2;
  c.stacking.cells_per_stage = 1;
  c.stacking.base_channels = 8;
  c.stacking.image_size = 8;
  c.data.image_size = 8;
  c.data.train_size = 2560;
  c.data.val_size = 1024;
  c.train.schedule.total_epochs = 40;
  c.train.schedule.iterations_per_epoch = 25;
  // Same relative positions as 80/120/160/180 of 200.
  c.train.schedule.switch_epochs = {16, 24, 32, 36};
  c.train.schedule.restart_epochs = {16, 24, 32, 36};
  c.train.plateau_patience = 6;
  c.train.supernet.spec = c.spec();
  return c;
}

}  // namespace closenas
