#pragma once

#include <string>
#include <utility>
#include <vector>

#include "ssvd/kernels.hpp"
#include "ssvd/tensor.hpp"

namespace ssvd {

/// Ordered collection of named tensors; the in-memory form of a WGTS
/// checkpoint.
class NamedTensors {
 public:
  void add(std::string name, Tensor t);
  void add_conv(const std::string& prefix, const ConvSpec& conv);

  bool contains(const std::string& name) const;
  /// Throws IoError naming the missing entry.
  const Tensor& get(const std::string& name) const;
  /// Copies weight/bias into `conv`, checking shapes against the existing
  /// geometry. Throws IoError naming the entry on mismatch.
  void read_conv(const std::string& prefix, ConvSpec& conv) const;

  const std::vector<std::pair<std::string, Tensor>>& entries() const {
    return entries_;
  }

 private:
  std::vector<std::pair<std::string, Tensor>> entries_;
};

// WGTS layout: "WGTS", u32 entry count, then per entry a u32 name length,
// the name bytes and a TNSR block.
void save_checkpoint(const std::string& path, const NamedTensors& tensors);
NamedTensors load_checkpoint(const std::string& path);

}  // namespace ssvd
