#include "closenas/score.hpp"

#include <algorithm>
#include <stdexcept>

namespace closenas {

namespace {

template <typename Forward>
double accuracy_over(const Dataset& data, int batch_size, Forward&& forward) {
  if (data.size() == 0) throw std::invalid_argument("cannot score on an empty validation set");
  if (batch_size < 1) throw std::invalid_argument("batch size must be positive");
  long correct = 0;
  for (int begin = 0; begin < data.size(); begin += batch_size) {
    const int count = std::min(batch_size, data.size() - begin);
    const auto labels = data.labels(begin, count);
    Tape<float> tape(false);
    const auto logits = forward(tape, data.images(begin, count));
    correct += compute::count_correct(logits.value(), std::span<const int>(labels));
  }
  return static_cast<double>(correct) / data.size();
}

}  // namespace

double estimate_score(Supernet<float>& net, const CellArchitecture& arch, const Dataset& data, int batch_size) {
  return accuracy_over(data, batch_size, [&](Tape<float>& tape, const Tensor<float>& x) {
    return net.forward(tape, arch, x, Mode::eval);
  });
}

double evaluate_accuracy(StandaloneNet<float>& net, const Dataset& data, int batch_size) {
  return accuracy_over(data, batch_size,
                       [&](Tape<float>& tape, const Tensor<float>& x) { return net.forward(tape, x, Mode::eval); });
}

}  // namespace closenas
