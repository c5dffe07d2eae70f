#include "ssvd/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "ssvd/binary_io.hpp"
#include "ssvd/errors.hpp"

namespace ssvd {

std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << "(" << s.n << ", " << s.c << ", " << s.h << ", " << s.w << ")";
  return os.str();
}

Tensor::Tensor(Shape shape, float fill) : shape_(shape) {
  if (shape.n < 1 || shape.c < 1 || shape.h < 1 || shape.w < 1) {
    throw DimensionError("tensor dims must be >= 1, got " + to_string(shape));
  }
  data_.assign(shape.numel(), fill);
}

std::span<float> Tensor::plane(int n, int c) {
  const std::size_t hw = static_cast<std::size_t>(shape_.h) * shape_.w;
  return std::span<float>(data_).subspan(index(n, c, 0, 0), hw);
}

std::span<const float> Tensor::plane(int n, int c) const {
  const std::size_t hw = static_cast<std::size_t>(shape_.h) * shape_.w;
  return std::span<const float>(data_).subspan(index(n, c, 0, 0), hw);
}

bool Tensor::all_finite() const {
  return std::all_of(data_.begin(), data_.end(),
                     [](float v) { return std::isfinite(v); });
}

bool Tensor::identical(const Tensor& other) const {
  if (shape_ != other.shape_) return false;
  if (data_.empty()) return true;
  return std::memcmp(data_.data(), other.data_.data(),
                     data_.size() * sizeof(float)) == 0;
}

float max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("max_abs_diff: shape " + to_string(a.shape()) +
                         " vs " + to_string(b.shape()));
  }
  float m = 0.0f;
  auto da = a.data();
  auto db = b.data();
  for (std::size_t i = 0; i < da.size(); ++i) {
    m = std::max(m, std::fabs(da[i] - db[i]));
  }
  return m;
}

void write_tensor(std::ostream& out, const Tensor& t) {
  out.write("TNSR", 4);
  const Shape& s = t.shape();
  binary::write_u32(out, static_cast<std::uint32_t>(s.n));
  binary::write_u32(out, static_cast<std::uint32_t>(s.c));
  binary::write_u32(out, static_cast<std::uint32_t>(s.h));
  binary::write_u32(out, static_cast<std::uint32_t>(s.w));
  for (float v : t.data()) binary::write_f32(out, v);
  if (!out) throw IoError("failed writing tensor");
}

Tensor read_tensor(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, "TNSR", 4) != 0) {
    throw IoError("bad tensor magic (expected TNSR)");
  }
  Shape s;
  s.n = static_cast<int>(binary::read_u32(in));
  s.c = static_cast<int>(binary::read_u32(in));
  s.h = static_cast<int>(binary::read_u32(in));
  s.w = static_cast<int>(binary::read_u32(in));
  constexpr std::size_t kMaxElements = std::size_t{1} << 31;
  if (s.n < 1 || s.c < 1 || s.h < 1 || s.w < 1 || s.numel() > kMaxElements) {
    throw IoError("implausible tensor dims " + to_string(s));
  }
  Tensor t(s);
  for (float& v : t.data()) v = binary::read_f32(in);
  return t;
}

void save_tensor(const std::string& path, const Tensor& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path + " for writing");
  write_tensor(out, t);
}

Tensor load_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  return read_tensor(in);
}

}  // namespace ssvd
