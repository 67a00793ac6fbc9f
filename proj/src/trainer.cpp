#include "closenas/trainer.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace closenas {

using compute::Checkpoint;

namespace {

std::string exact(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

double parse_double(const std::string& s) {
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) throw std::invalid_argument("bad number in checkpoint: " + s);
  return v;
}

const std::string& meta_at(const Checkpoint& ckpt, const std::string& key) {
  auto it = ckpt.meta.find(key);
  if (it == ckpt.meta.end()) throw std::invalid_argument("checkpoint lacks '" + key + "'");
  return it->second;
}

bool contains(const std::vector<int>& v, int x) { return std::find(v.begin(), v.end(), x) != v.end(); }

void check_epochs(const std::vector<int>& epochs, int total, const char* what) {
  for (std::size_t i = 0; i < epochs.size(); ++i) {
    if (epochs[i] < 1 || epochs[i] > total) {
      throw std::invalid_argument(std::string(what) + " epoch " + std::to_string(epochs[i]) + " outside [1, " +
                                  std::to_string(total) + "]");
    }
    if (i > 0 && epochs[i] <= epochs[i - 1]) throw std::invalid_argument(std::string(what) + " epochs must increase");
  }
}

}  // namespace

void CurriculumSchedule::validate() const {
  if (total_epochs < 1) throw std::invalid_argument("total_epochs must be >= 1");
  if (iterations_per_epoch < 1) throw std::invalid_argument("iterations_per_epoch must be >= 1");
  check_epochs(switch_epochs, total_epochs, "switch");
  check_epochs(restart_epochs, total_epochs, "restart");
}

int CurriculumSchedule::blocks_at(int epoch, int initial) const {
  return initial + static_cast<int>(std::count_if(switch_epochs.begin(), switch_epochs.end(),
                                                  [epoch](int s) { return s <= epoch; }));
}

bool CurriculumSchedule::switches_at(int epoch) const { return contains(switch_epochs, epoch); }
bool CurriculumSchedule::restarts_at(int epoch) const { return contains(restart_epochs, epoch); }

void apply_srt(compute::PlateauSchedule& schedule, compute::Sgd<float>& optimizer) {
  schedule.restart();
  optimizer.set_lr(schedule.initial_lr());
}

int select_wit_parent(Supernet<float>& net, int probe_size, std::uint64_t seed) {
  if (probe_size < 1) throw std::invalid_argument("probe_size must be >= 1");
  const int k = net.num_blocks();
  if (k < 1) throw std::logic_error("this supernet has no GLOW blocks");
  if (k == 1) return 0;
  std::mt19937_64 rng(seed);
  std::vector<double> mass(static_cast<std::size_t>(k), 0.0);
  const auto& spec = net.config().spec;
  for (int p = 0; p < probe_size; ++p) {
    const auto arch = sample_uniform(spec, rng);
    if (auto* gate = net.gate()) {
      for (const auto& edge_probs : gate->probabilities(arch)) {
        for (int b = 0; b < k; ++b) mass[static_cast<std::size_t>(b)] += edge_probs[static_cast<std::size_t>(b)];
      }
    } else {
      for (int b : net.assignment(arch)) mass[static_cast<std::size_t>(b)] += 1.0;
    }
  }
  return argmax_lowest<double>(mass);
}

void widen_gate_buffers(compute::Sgd<float>& optimizer, int new_blocks) {
  auto& buffers = optimizer.buffers();
  if (auto it = buffers.find("gate/mlp_out/weight"); it != buffers.end()) {
    const auto& old = it->second;
    const int in = old.dim(0), k = old.dim(1);
    Tensor<float> w({in, new_blocks});
    for (int r = 0; r < in; ++r) {
      for (int c = 0; c < std::min(k, new_blocks); ++c) {
        w[static_cast<std::size_t>(r) * new_blocks + c] = old[static_cast<std::size_t>(r) * k + c];
      }
    }
    it->second = std::move(w);
  }
  if (auto it = buffers.find("gate/mlp_out/bias"); it != buffers.end()) {
    Tensor<float> b({new_blocks});
    for (int c = 0; c < std::min(it->second.dim(0), new_blocks); ++c) b[c] = it->second[c];
    it->second = std::move(b);
  }
}

CloseTrainer::CloseTrainer(TrainerConfig config, const Dataset& train)
    : config_(std::move(config)),
      train_(&train),
      net_(config_.supernet),
      optimizer_(config_.sgd),
      plateau_(config_.sgd.lr, config_.plateau_patience, config_.plateau_factor),
      rng_(config_.seed) {
  config_.schedule.validate();
  if (config_.batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (train.size() == 0) throw std::invalid_argument("empty training set");
  if (!(config_.tau_final > 0.0)) throw std::invalid_argument("tau_final must be positive");
  order_.resize(static_cast<std::size_t>(train.size()));
  refresh_parameters();
}

bool CloseTrainer::grows() const {
  return config_.supernet.variant == SupernetVariant::closenet || config_.supernet.variant == SupernetVariant::close_s;
}

void CloseTrainer::refresh_parameters() { params_ = net_.parameters(); }

double CloseTrainer::tau_for_epoch(int epoch) const {
  const double start = config_.supernet.gate.tau;
  const int total = config_.schedule.total_epochs;
  if (config_.tau_final == start || total <= 1) return start;
  const double frac = static_cast<double>(epoch - 1) / (total - 1);
  return start * std::pow(config_.tau_final / start, frac);
}

void CloseTrainer::curriculum_switch(int epoch, EpochRecord& record) {
  if (config_.supernet.variant == SupernetVariant::close_s) {
    // Two stages only: the first listed switch moves to per-edge blocks.
    if (net_.close_s_stage() != 1) return;
    if (switch_hook_) switch_hook_(epoch, net_, false);
    net_.enter_close_s_stage2(config_.wit, rng_);
    record.wit_parent = 0;
  } else {
    if (switch_hook_) switch_hook_(epoch, net_, false);
    const auto probe_seed = config_.seed ^ (0x5bd1e995ULL * static_cast<std::uint64_t>(epoch));
    const int parent = select_wit_parent(net_, config_.probe_size, probe_seed);
    net_.add_block(parent, config_.wit, rng_);
    widen_gate_buffers(optimizer_, net_.num_blocks());
    record.wit_parent = parent;
  }
  refresh_parameters();
  record.switched = true;
  if (switch_hook_) switch_hook_(epoch, net_, true);
}

EpochRecord CloseTrainer::run_epoch() {
  if (done()) throw std::logic_error("training already finished");
  const int epoch = epoch_ + 1;
  EpochRecord record;
  record.epoch = epoch;
  if (grows() && config_.schedule.switches_at(epoch)) curriculum_switch(epoch, record);
  if (grows() && config_.srt && config_.schedule.restarts_at(epoch)) {
    apply_srt(plateau_, optimizer_);
    record.restarted = true;
  }
  if (auto* gate = net_.gate()) gate->set_tau(tau_for_epoch(epoch));
  record.blocks = net_.num_blocks();
  record.lr = optimizer_.lr();

  // Each epoch's order depends only on the generator state, so a restored
  // trainer continues exactly where the original left off.
  std::iota(order_.begin(), order_.end(), 0);
  std::shuffle(order_.begin(), order_.end(), rng_);
  const int n = train_->size();
  const int b = config_.batch_size;
  std::vector<int> idx(static_cast<std::size_t>(b));
  double loss_sum = 0.0, acc_sum = 0.0;
  const auto& spec = config_.supernet.spec;
  for (int it = 0; it < config_.schedule.iterations_per_epoch; ++it) {
    for (int i = 0; i < b; ++i) {
      idx[static_cast<std::size_t>(i)] = order_[static_cast<std::size_t>((static_cast<long>(it) * b + i) % n)];
    }
    const auto arch = sample_uniform(spec, rng_);
    const auto x = train_->images(idx);
    const auto y = train_->labels(idx);
    Tape<float> tape;
    auto logits = net_.forward(tape, arch, x, Mode::train, &rng_);
    auto loss = compute::cross_entropy(logits, std::span<const int>(y));
    const double lv = loss.value()[0];
    if (!std::isfinite(lv)) {
      throw compute::DivergenceError("non-finite loss at epoch " + std::to_string(epoch) + ", iteration " +
                                     std::to_string(it + 1) + " (" + arch.to_string() + ")");
    }
    tape.backward(loss);
    compute::clip_grad_norm<float>(params_, config_.clip_norm);
    optimizer_.step(params_);
    for (auto* p : params_) p->zero_grad();
    loss_sum += lv;
    acc_sum += static_cast<double>(compute::count_correct(logits.value(), std::span<const int>(y))) / b;
  }
  record.loss = loss_sum / config_.schedule.iterations_per_epoch;
  record.accuracy = acc_sum / config_.schedule.iterations_per_epoch;
  optimizer_.set_lr(plateau_.observe(record.accuracy));
  epoch_ = epoch;
  history_.push_back(record);
  return record;
}

void CloseTrainer::run(const EpochHook& on_epoch) {
  while (!done()) {
    const auto record = run_epoch();
    if (on_epoch) on_epoch(record, *this);
  }
}

Checkpoint CloseTrainer::checkpoint() const {
  Checkpoint ckpt;
  auto& net = const_cast<Supernet<float>&>(net_);
  for (auto* p : net.parameters()) ckpt.arrays.emplace("param/" + p->name, p->value);
  for (const auto& [name, buf] : optimizer_.buffers()) ckpt.arrays.emplace("momentum/" + name, buf);
  std::ostringstream rng_state;
  rng_state << rng_;
  ckpt.meta["epoch"] = std::to_string(epoch_);
  ckpt.meta["blocks"] = std::to_string(net.num_blocks());
  ckpt.meta["close_s_stage"] = std::to_string(net.close_s_stage());
  ckpt.meta["variant"] = std::string(variant_name(config_.supernet.variant));
  ckpt.meta["lr"] = exact(optimizer_.lr());
  ckpt.meta["plateau_lr"] = exact(plateau_.lr());
  ckpt.meta["plateau_stall"] = std::to_string(plateau_.stall_count());
  ckpt.meta["plateau_has_best"] = plateau_.has_best() ? "1" : "0";
  ckpt.meta["plateau_best"] = exact(plateau_.best());
  ckpt.meta["rng"] = rng_state.str();
  nlohmann::json hist = nlohmann::json::array();
  for (const auto& r : history_) {
    hist.push_back({{"epoch", r.epoch}, {"blocks", r.blocks}, {"lr", r.lr}, {"loss", r.loss},
                    {"accuracy", r.accuracy}, {"switched", r.switched}, {"restarted", r.restarted},
                    {"wit_parent", r.wit_parent}});
  }
  ckpt.meta["history"] = hist.dump();
  return ckpt;
}

CloseTrainer CloseTrainer::restore(TrainerConfig config, const Dataset& train, const Checkpoint& ckpt) {
  CloseTrainer t(std::move(config), train);
  if (meta_at(ckpt, "variant") != variant_name(t.config_.supernet.variant)) {
    throw std::invalid_argument("checkpoint was written by a '" + meta_at(ckpt, "variant") + "' supernet");
  }
  const int blocks = std::stoi(meta_at(ckpt, "blocks"));
  std::mt19937_64 scratch(0);
  if (std::stoi(meta_at(ckpt, "close_s_stage")) == 2 && t.net_.close_s_stage() == 1) {
    t.net_.enter_close_s_stage2(true, scratch);
  }
  while (t.net_.num_blocks() < blocks) t.net_.add_block(0, true, scratch);
  if (t.net_.num_blocks() != blocks) throw std::invalid_argument("checkpoint block count does not fit the config");
  t.refresh_parameters();
  for (auto* p : t.params_) {
    auto it = ckpt.arrays.find("param/" + p->name);
    if (it == ckpt.arrays.end()) throw std::invalid_argument("checkpoint lacks parameter '" + p->name + "'");
    if (!it->second.same_shape(p->value)) throw std::invalid_argument("shape mismatch for '" + p->name + "'");
    p->value = it->second;
  }
  auto& buffers = t.optimizer_.buffers();
  buffers.clear();
  for (const auto& [key, value] : ckpt.arrays) {
    if (key.rfind("momentum/", 0) == 0) buffers.emplace(key.substr(9), value);
  }
  t.epoch_ = std::stoi(meta_at(ckpt, "epoch"));
  t.optimizer_.set_lr(parse_double(meta_at(ckpt, "lr")));
  t.plateau_.set_state(parse_double(meta_at(ckpt, "plateau_lr")), std::stoi(meta_at(ckpt, "plateau_stall")),
                       meta_at(ckpt, "plateau_has_best") == "1", parse_double(meta_at(ckpt, "plateau_best")));
  std::istringstream rng_state(meta_at(ckpt, "rng"));
  rng_state >> t.rng_;
  if (!rng_state) throw std::invalid_argument("corrupt random-generator state in checkpoint");
  for (const auto& r : nlohmann::json::parse(meta_at(ckpt, "history"))) {
    EpochRecord rec;
    rec.epoch = r.at("epoch");
    rec.blocks = r.at("blocks");
    rec.lr = r.at("lr");
    rec.loss = r.at("loss");
    rec.accuracy = r.at("accuracy");
    rec.switched = r.at("switched");
    rec.restarted = r.at("restarted");
    rec.wit_parent = r.at("wit_parent");
    t.history_.push_back(rec);
  }
  return t;
}

}  // namespace closenas
