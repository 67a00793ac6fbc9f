#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "closenas/closenet.hpp"
#include "closenas/compute/checkpoint.hpp"
#include "closenas/compute/optim.hpp"
#include "closenas/data.hpp"

namespace closenas {

/// Epochs are numbered 1..total_epochs. A switch or restart listed at epoch e
/// happens before the first iteration of epoch e.
struct CurriculumSchedule {
  int total_epochs = 200;
  int iterations_per_epoch = 100;
  std::vector<int> switch_epochs{80, 120, 160, 180};
  std::vector<int> restart_epochs{80, 120, 160, 180};

  /// Throws std::invalid_argument on out-of-range or unordered epochs.
  void validate() const;
  /// Number of blocks in use during `epoch` when training starts with `initial`.
  int blocks_at(int epoch, int initial = 1) const;
  bool switches_at(int epoch) const;
  bool restarts_at(int epoch) const;
};

struct TrainerConfig {
  SupernetConfig supernet;
  CurriculumSchedule schedule;
  compute::SgdConfig sgd;
  double clip_norm = 5.0;
  int batch_size = 128;
  int plateau_patience = 30;
  double plateau_factor = 0.5;
  bool wit = true;
  bool srt = true;
  /// Gumbel temperature at the last epoch; equal to the start value
  /// (supernet.gate.tau) means no annealing.
  double tau_final = 1.0;
  /// Architectures probed when choosing the WIT parent.
  int probe_size = 32;
  std::uint64_t seed = 0;
};

struct EpochRecord {
  int epoch = 0;
  int blocks = 0;
  double lr = 0.0;  // rate used during the epoch
  double loss = 0.0;
  double accuracy = 0.0;  // mean training accuracy of the sampled sub-networks
  bool switched = false;
  bool restarted = false;
  int wit_parent = -1;
};

/// Resets the rate to `initial_lr` and clears the plateau history.
void apply_srt(compute::PlateauSchedule& schedule, compute::Sgd<float>& optimizer);

/// Block with the largest mean noise-free assignment probability over
/// `probe_size` uniformly sampled architectures (lowest index on ties).
int select_wit_parent(Supernet<float>& net, int probe_size, std::uint64_t seed);

/// Zero-extends the momentum buffers of the gate's output layer after a new
/// output unit was added.
void widen_gate_buffers(compute::Sgd<float>& optimizer, int new_blocks);

/// The curriculum training loop. Each iteration samples one architecture
/// uniformly, trains it on one batch, clips the gradient and steps SGD.
class CloseTrainer {
 public:
  using SwitchHook = std::function<void(int epoch, Supernet<float>& net, bool after)>;
  using EpochHook = std::function<void(const EpochRecord& record, CloseTrainer& trainer)>;

  CloseTrainer(TrainerConfig config, const Dataset& train);

  /// Rebuilds a trainer from a checkpoint written by `checkpoint()`.
  static CloseTrainer restore(TrainerConfig config, const Dataset& train, const compute::Checkpoint& ckpt);

  /// Runs one epoch (including any switch/restart due at its start).
  EpochRecord run_epoch();
  /// Runs the remaining epochs.
  void run(const EpochHook& on_epoch = {});

  /// Called right before and right after every curriculum switch.
  void set_switch_hook(SwitchHook hook) { switch_hook_ = std::move(hook); }

  compute::Checkpoint checkpoint() const;

  int epoch() const noexcept { return epoch_; }
  bool done() const noexcept { return epoch_ >= config_.schedule.total_epochs; }
  const TrainerConfig& config() const noexcept { return config_; }
  Supernet<float>& supernet() noexcept { return net_; }
  const compute::Sgd<float>& optimizer() const noexcept { return optimizer_; }
  const compute::PlateauSchedule& plateau() const noexcept { return plateau_; }
  const std::vector<EpochRecord>& history() const noexcept { return history_; }

 private:
  bool grows() const;
  void curriculum_switch(int epoch, EpochRecord& record);
  void refresh_parameters();
  double tau_for_epoch(int epoch) const;

  TrainerConfig config_;
  const Dataset* train_;
  Supernet<float> net_;
  compute::Sgd<float> optimizer_;
  compute::PlateauSchedule plateau_;
  std::mt19937_64 rng_;
  std::vector<Parameter<float>*> params_;
  std::vector<EpochRecord> history_;
  std::vector<int> order_;
  SwitchHook switch_hook_;
  int epoch_ = 0;
};

}  // namespace closenas
