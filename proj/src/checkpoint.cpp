#include "ssvd/checkpoint.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>

#include "ssvd/binary_io.hpp"
#include "ssvd/errors.hpp"

namespace ssvd {

void NamedTensors::add(std::string name, Tensor t) {
  entries_.emplace_back(std::move(name), std::move(t));
}

void NamedTensors::add_conv(const std::string& prefix, const ConvSpec& conv) {
  add(prefix + ".weight", conv.weight);
  Tensor bias(1, conv.out_channels(), 1, 1);
  std::ranges::copy(conv.bias, bias.data().begin());
  add(prefix + ".bias", std::move(bias));
}

bool NamedTensors::contains(const std::string& name) const {
  return std::ranges::any_of(entries_,
                             [&](const auto& e) { return e.first == name; });
}

const Tensor& NamedTensors::get(const std::string& name) const {
  for (const auto& [key, value] : entries_) {
    if (key == name) return value;
  }
  throw IoError("checkpoint entry '" + name + "' is missing");
}

void NamedTensors::read_conv(const std::string& prefix, ConvSpec& conv) const {
  const Tensor& w = get(prefix + ".weight");
  if (w.shape() != conv.weight.shape()) {
    throw IoError("checkpoint entry '" + prefix + ".weight' has shape " +
                  to_string(w.shape()) + ", expected " +
                  to_string(conv.weight.shape()));
  }
  const Tensor& b = get(prefix + ".bias");
  if (b.size() != conv.bias.size()) {
    throw IoError("checkpoint entry '" + prefix + ".bias' has " +
                  std::to_string(b.size()) + " values, expected " +
                  std::to_string(conv.bias.size()));
  }
  conv.weight = w;
  std::ranges::copy(b.data(), conv.bias.begin());
}

void save_checkpoint(const std::string& path, const NamedTensors& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write("WGTS", 4);
  binary::write_u32(out, static_cast<std::uint32_t>(tensors.entries().size()));
  for (const auto& [name, t] : tensors.entries()) {
    binary::write_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(out, t);
  }
  if (!out) throw IoError("failed writing " + path);
}

NamedTensors load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "WGTS", 4) != 0) {
    throw IoError(path + ": bad checkpoint magic (expected WGTS)");
  }
  NamedTensors result;
  try {
    const std::uint32_t count = binary::read_u32(in);
    for (std::uint32_t i = 0; i < count; ++i) {
      const std::uint32_t len = binary::read_u32(in);
      if (len == 0 || len > 4096) throw IoError("implausible entry name length");
      std::string name(len, '\0');
      if (!in.read(name.data(), len)) throw IoError("truncated entry name");
      result.add(std::move(name), read_tensor(in));
    }
  } catch (const IoError& e) {
    throw IoError(path + ": " + e.what());
  }
  return result;
}

}  // namespace ssvd
