#pragma once

#include <string>

#include "closenas/closenet.hpp"
#include "closenas/data.hpp"

namespace closenas {

struct OneShotScore {
  std::string arch;  // flat serialization
  double score = 0.0;
  int epoch = 0;
};

/// Eval-mode accuracy of `arch` as a sub-network of `net` on `data`,
/// processed in index order in chunks of `batch_size`.
double estimate_score(Supernet<float>& net, const CellArchitecture& arch, const Dataset& data, int batch_size = 256);

/// Eval-mode accuracy of a stand-alone network, same batching rules.
double evaluate_accuracy(StandaloneNet<float>& net, const Dataset& data, int batch_size = 256);

}  // namespace closenas
