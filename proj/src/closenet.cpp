#include "closenas/closenet.hpp"

#include <array>
#include <stdexcept>

namespace closenas {

namespace ops = compute;

namespace {

constexpr std::array<std::string_view, 4> kVariantNames{"closenet", "supernet1", "supernet2", "close_s"};

}  // namespace

std::string_view variant_name(SupernetVariant v) { return kVariantNames.at(static_cast<std::size_t>(v)); }

SupernetVariant variant_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kVariantNames.size(); ++i) {
    if (kVariantNames[i] == name) return static_cast<SupernetVariant>(i);
  }
  throw std::invalid_argument("unknown supernet variant '" + std::string(name) + "'");
}

int close_s_assignment(int edge, int stage) {
  if (stage != 1 && stage != 2) throw std::invalid_argument("CLOSE-S has stages 1 and 2 only");
  return stage == 1 ? 0 : edge;
}

int random_block(const CellArchitecture& arch, int edge, int num_blocks, std::uint64_t seed) {
  const auto key = arch.to_string() + "#" + std::to_string(edge) + "#" + std::to_string(seed);
  return static_cast<int>(fnv1a64(key) % static_cast<std::uint64_t>(num_blocks));
}

template <typename T>
Supernet<T>::Supernet(SupernetConfig config) : config_(std::move(config)) {
  const auto& spec = config_.spec;
  if (spec.kind != SpaceKind::topological) throw std::invalid_argument("supernets need a topological space");
  std::mt19937_64 rng(config_.seed);
  backbone_ = Backbone<T>::make(spec.stacking, rng);
  const int edges = edge_count(spec.num_nodes);
  switch (config_.variant) {
    case SupernetVariant::closenet:
      bank_.emplace(spec, config_.initial_blocks, rng);
      if (config_.assignment == AssignmentPolicy::gate) gate_.emplace(spec, config_.gate, config_.initial_blocks, rng);
      break;
    case SupernetVariant::close_s:
      bank_.emplace(spec, 1, rng);
      break;
    case SupernetVariant::supernet1:
      for (int s = 0; s < spec.stacking.stages; ++s) {
        for (int c = 0; c < spec.stacking.cells_per_stage; ++c) {
          for (int e = 0; e < edges; ++e) {
            slots_.push_back(OpParamSet<T>::make(
                "s1/s" + std::to_string(s) + "/c" + std::to_string(c) + "/e" + std::to_string(e), spec.ops,
                spec.stacking.stage_channels(s), rng));
          }
        }
      }
      break;
    case SupernetVariant::supernet2:
      for (int s = 0; s < spec.stacking.stages; ++s) {
        for (int c = 0; c < spec.stacking.cells_per_stage; ++c) {
          slots_.push_back(OpParamSet<T>::make("s2/s" + std::to_string(s) + "/c" + std::to_string(c), spec.ops,
                                               spec.stacking.stage_channels(s), rng));
        }
      }
      break;
  }
}

template <typename T>
int Supernet<T>::vanilla_slot(int stage, int cell, int edge) const {
  const auto& st = config_.spec.stacking;
  const int base = stage * st.cells_per_stage + cell;
  if (config_.variant == SupernetVariant::supernet1) return base * edge_count(config_.spec.num_nodes) + edge;
  return base;
}

template <typename T>
int Supernet<T>::num_blocks() const {
  return bank_ ? bank_->size() : 0;
}

template <typename T>
ConvParams<T>* Supernet<T>::edge_params(int stage, int cell, int edge, OpKind op, int block) {
  if (!op_has_params(op)) return nullptr;
  ConvParams<T>* p = nullptr;
  if (bank_) {
    p = bank_->block(block).stages.at(static_cast<std::size_t>(stage)).find(op);
  } else {
    p = slots_.at(static_cast<std::size_t>(vanilla_slot(stage, cell, edge))).find(op);
  }
  if (p == nullptr) throw std::invalid_argument("no parameters for op '" + std::string(op_name(op)) + "'");
  return p;
}

template <typename T>
std::vector<int> Supernet<T>::assignment(const CellArchitecture& arch) {
  const int edges = arch.num_edges();
  std::vector<int> out(static_cast<std::size_t>(edges), -1);
  switch (config_.variant) {
    case SupernetVariant::supernet1:
    case SupernetVariant::supernet2:
      return out;
    case SupernetVariant::close_s:
      for (int e = 0; e < edges; ++e) out[static_cast<std::size_t>(e)] = close_s_assignment(e, close_s_stage_);
      return out;
    case SupernetVariant::closenet:
      break;
  }
  if (!gate_) {
    for (int e = 0; e < edges; ++e) out[static_cast<std::size_t>(e)] = random_block(arch, e, num_blocks(), config_.seed);
    return out;
  }
  const auto logits = gate_->logits(arch);
  for (int e = 0; e < edges; ++e) out[static_cast<std::size_t>(e)] = argmax_lowest<T>(logits[static_cast<std::size_t>(e)]);
  return out;
}

template <typename T>
Var<T> Supernet<T>::forward(Tape<T>& tape, const CellArchitecture& arch, const Tensor<T>& input, Mode mode,
                            std::mt19937_64* rng, GateGradient gradient) {
  validate(arch, config_.spec);
  const bool train = mode == Mode::train;
  if (train && rng == nullptr) throw std::invalid_argument("train-mode forward needs a random generator");
  ForwardOptions options{config_.dropout, train ? rng : nullptr};
  const int edges = arch.num_edges();

  if (!bank_) {
    EdgeFn<T> fn = [&](int s, int c, int e, OpKind op, Var<T> x) {
      return apply_edge_op(tape, op, x, edge_params(s, c, e, op, -1));
    };
    return network_forward(tape, backbone_, stacking(), arch, input, fn, options);
  }

  if (!gate_) {
    std::vector<int> blocks = assignment(arch);
    EdgeFn<T> fn = [&](int s, int c, int e, OpKind op, Var<T> x) {
      return apply_edge_op(tape, op, x, edge_params(s, c, e, op, blocks[static_cast<std::size_t>(e)]));
    };
    return network_forward(tape, backbone_, stacking(), arch, input, fn, options);
  }

  if (gate_->num_blocks() != bank_->size()) {
    throw std::logic_error("gate has " + std::to_string(gate_->num_blocks()) + " outputs but the bank holds " +
                           std::to_string(bank_->size()) + " blocks");
  }
  bool any_params = false;
  for (OpKind op : arch.ops()) any_params = any_params || op_has_params(op);
  std::vector<TapeAssignment<T>> assign(static_cast<std::size_t>(edges));
  if (any_params) {
    const auto logits = gate_->edge_logits(tape, arch);
    const int k = bank_->size();
    for (int e = 0; e < edges; ++e) {
      if (!op_has_params(arch.op(e))) continue;
      std::vector<T> noise(static_cast<std::size_t>(k), T(0));
      if (train) {
        const auto g = sample_gumbel(k, *rng);
        noise.assign(g.begin(), g.end());
      }
      assign[static_cast<std::size_t>(e)] = assign_on_tape<T>(logits[static_cast<std::size_t>(e)], noise, gate_->tau());
    }
  }
  EdgeFn<T> fn = [&](int s, int c, int e, OpKind op, Var<T> x) -> Var<T> {
    if (!op_has_params(op)) return apply_edge_op<T>(tape, op, x, nullptr);
    const auto& a = assign[static_cast<std::size_t>(e)];
    if (gradient == GateGradient::relaxed) {
      std::vector<Var<T>> terms;
      for (int k = 0; k < bank_->size(); ++k) {
        terms.push_back(ops::scale(apply_edge_op(tape, op, x, edge_params(s, c, e, op, k)), ops::select(a.relaxed, k)));
      }
      return ops::add_n(terms);
    }
    auto out = apply_edge_op(tape, op, x, edge_params(s, c, e, op, a.index));
    return train ? ops::scale(out, a.weight) : out;
  };
  return network_forward(tape, backbone_, stacking(), arch, input, fn, options);
}

template <typename T>
void Supernet<T>::add_block(int parent, bool wit, std::mt19937_64& rng) {
  if (config_.variant != SupernetVariant::closenet) throw std::logic_error("only CLOSENet grows its block count");
  if (parent < 0 || parent >= bank_->size()) {
    throw std::out_of_range("WIT parent " + std::to_string(parent) + " outside [0, " + std::to_string(bank_->size()) + ")");
  }
  if (wit) {
    bank_->add_block_wit(parent);
    if (gate_) gate_->add_output_unit_wit(parent);
  } else {
    bank_->add_block_random(rng);
    if (gate_) gate_->add_output_unit_random(rng);
  }
}

template <typename T>
void Supernet<T>::enter_close_s_stage2(bool wit, std::mt19937_64& rng) {
  if (config_.variant != SupernetVariant::close_s) throw std::logic_error("not a CLOSE-S supernet");
  if (close_s_stage_ != 1) throw std::logic_error("CLOSE-S is already in stage 2");
  const int edges = edge_count(config_.spec.num_nodes);
  for (int e = 1; e < edges; ++e) {
    if (wit) bank_->add_block_wit(0);
    else bank_->add_block_random(rng);
  }
  close_s_stage_ = 2;
}

template <typename T>
std::vector<Parameter<T>*> Supernet<T>::parameters() {
  std::vector<Parameter<T>*> out;
  backbone_.append_parameters(out);
  if (bank_) bank_->append_parameters(out);
  if (gate_) gate_->append_parameters(out);
  for (auto& s : slots_) s.append_parameters(out);
  return out;
}

template <typename T>
std::size_t Supernet<T>::parameter_count() {
  std::size_t n = 0;
  for (auto* p : parameters()) n += p->value.size();
  return n;
}

template <typename T>
StandaloneNet<T>::StandaloneNet(EmptyTag, const SearchSpaceSpec& spec, CellArchitecture arch, double dropout)
    : spec_(spec), arch_(std::move(arch)), dropout_(dropout) {
  validate(arch_, spec_);
  const auto& st = spec_.stacking;
  edges_.resize(static_cast<std::size_t>(st.stages * st.cells_per_stage * arch_.num_edges()));
}

template <typename T>
StandaloneNet<T>::StandaloneNet(const SearchSpaceSpec& spec, CellArchitecture arch, std::uint64_t seed, double dropout)
    : StandaloneNet(EmptyTag{}, spec, std::move(arch), dropout) {
  std::mt19937_64 rng(seed);
  backbone_ = Backbone<T>::make(spec_.stacking, rng);
  const auto& st = spec_.stacking;
  for (int s = 0; s < st.stages; ++s) {
    for (int c = 0; c < st.cells_per_stage; ++c) {
      for (int e = 0; e < arch_.num_edges(); ++e) {
        const OpKind op = arch_.op(e);
        if (!op_has_params(op)) continue;
        edges_[static_cast<std::size_t>(slot(s, c, e))] = ConvParams<T>::make(
            "cell/s" + std::to_string(s) + "/c" + std::to_string(c) + "/e" + std::to_string(e) + "/" +
                std::string(op_name(op)),
            st.stage_channels(s), st.stage_channels(s), op == OpKind::conv3x3 ? 3 : 1, rng);
      }
    }
  }
}

template <typename T>
StandaloneNet<T> StandaloneNet<T>::transplant(Supernet<T>& net, const CellArchitecture& arch,
                                              const std::vector<int>& blocks) {
  StandaloneNet out(EmptyTag{}, net.config().spec, arch, net.config().dropout);
  out.backbone_ = net.backbone();
  const auto& st = net.stacking();
  for (int s = 0; s < st.stages; ++s) {
    for (int c = 0; c < st.cells_per_stage; ++c) {
      for (int e = 0; e < arch.num_edges(); ++e) {
        const OpKind op = arch.op(e);
        if (!op_has_params(op)) continue;
        const ConvParams<T>* src = net.edge_params(s, c, e, op, blocks.at(static_cast<std::size_t>(e)));
        out.edges_[static_cast<std::size_t>(out.slot(s, c, e))] =
            src->renamed("cell/s" + std::to_string(s) + "/c" + std::to_string(c) + "/e" + std::to_string(e) + "/" +
                         std::string(op_name(op)));
      }
    }
  }
  return out;
}

template <typename T>
int StandaloneNet<T>::slot(int stage, int cell, int edge) const {
  return (stage * spec_.stacking.cells_per_stage + cell) * arch_.num_edges() + edge;
}

template <typename T>
Var<T> StandaloneNet<T>::forward(Tape<T>& tape, const Tensor<T>& input, Mode mode, std::mt19937_64* rng) {
  ForwardOptions options{dropout_, mode == Mode::train ? rng : nullptr};
  EdgeFn<T> fn = [&](int s, int c, int e, OpKind op, Var<T> x) {
    auto& slot_params = edges_[static_cast<std::size_t>(slot(s, c, e))];
    return apply_edge_op(tape, op, x, slot_params ? &*slot_params : nullptr);
  };
  return network_forward(tape, backbone_, spec_.stacking, arch_, input, fn, options);
}

template <typename T>
std::vector<Parameter<T>*> StandaloneNet<T>::parameters() {
  std::vector<Parameter<T>*> out;
  backbone_.append_parameters(out);
  for (auto& e : edges_) {
    if (!e) continue;
    out.push_back(&e->weight);
    out.push_back(&e->bias);
  }
  return out;
}

template <typename T>
std::size_t StandaloneNet<T>::cell_parameter_count() const {
  std::size_t n = 0;
  for (const auto& e : edges_) {
    if (e) n += e->weight.value.size() + e->bias.value.size();
  }
  return n;
}

template class Supernet<float>;
template class Supernet<double>;
template class StandaloneNet<float>;
template class StandaloneNet<double>;

}  // namespace closenas
