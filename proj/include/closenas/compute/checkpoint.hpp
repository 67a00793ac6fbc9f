#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "closenas/compute/tensor.hpp"

namespace closenas::compute {

/// Named float arrays plus string metadata, stored as one binary file.
/// Values are written as raw IEEE-754 bytes, so a save/load cycle is
/// bit-exact.
struct Checkpoint {
  std::map<std::string, Tensor<float>> arrays;
  std::map<std::string, std::string> meta;

  void save(const std::filesystem::path& path) const;
  static Checkpoint load(const std::filesystem::path& path);

  bool operator==(const Checkpoint&) const = default;
};

}  // namespace closenas::compute
