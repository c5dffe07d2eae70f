#pragma once

#include <cstddef>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

namespace ssvd {

/// Extent of a dense (batch, channel, height, width) array.
struct Shape {
  int n = 0;
  int c = 0;
  int h = 0;
  int w = 0;

  std::size_t numel() const {
    return static_cast<std::size_t>(n) * c * h * w;
  }
  bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& s);

/// Dense 4-D float32 array stored row-major in (n, c, y, x) order.
///
/// A default-constructed tensor is empty (all dims zero) and only serves as
/// a placeholder; every tensor built from a shape has all dims >= 1.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(int n, int c, int h, int w, float fill = 0.0f)
      : Tensor(Shape{n, c, h, w}, fill) {}

  const Shape& shape() const { return shape_; }
  int batch() const { return shape_.n; }
  int channels() const { return shape_.c; }
  int height() const { return shape_.h; }
  int width() const { return shape_.w; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  float& at(int n, int c, int y, int x) { return data_[index(n, c, y, x)]; }
  float at(int n, int c, int y, int x) const { return data_[index(n, c, y, x)]; }

  std::span<float> data() { return data_; }
  std::span<const float> data() const { return data_; }

  /// One (n, c) plane of height*width values.
  std::span<float> plane(int n, int c);
  std::span<const float> plane(int n, int c) const;

  /// True when no element is NaN or infinite.
  bool all_finite() const;

  /// Bitwise equality of shape and contents.
  bool identical(const Tensor& other) const;

 private:
  std::size_t index(int n, int c, int y, int x) const {
    return ((static_cast<std::size_t>(n) * shape_.c + c) * shape_.h + y) *
               shape_.w +
           x;
  }

  Shape shape_{};
  std::vector<float> data_;
};

/// Largest absolute elementwise difference; throws DimensionError on shape
/// mismatch.
float max_abs_diff(const Tensor& a, const Tensor& b);

// TNSR container: "TNSR", four little-endian u32 dims (n, c, h, w), then the
// raw little-endian float32 payload.
void write_tensor(std::ostream& out, const Tensor& t);
Tensor read_tensor(std::istream& in);
void save_tensor(const std::string& path, const Tensor& t);
Tensor load_tensor(const std::string& path);

}  // namespace ssvd
