#pragma once

#include <cassert>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

namespace fcis {

std::int64_t shape_numel(const std::vector<int>& shape);
std::string shape_str(const std::vector<int>& shape);
void check_shape_valid(const std::vector<int>& shape);

// Dense row-major tensor over float or double. Shape is fixed at
// construction; finished values are treated as read-only by the autodiff
// layer. A default-constructed tensor is the "absent" sentinel (numel 0);
// a rank-0 tensor holds exactly one scalar.
template <typename T>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int> shape);
  Tensor(std::vector<int> shape, std::vector<T> values);

  static Tensor full(std::vector<int> shape, T value);
  static Tensor scalar(T value) { return Tensor({}, {value}); }

  int rank() const { return static_cast<int>(shape_.size()); }
  const std::vector<int>& shape() const { return shape_; }
  int dim(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  bool absent() const { return data_.empty() && shape_.empty(); }
  bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

  T* data() { return data_.data(); }
  const T* data() const { return data_.data(); }
  std::vector<T>& values() { return data_; }
  const std::vector<T>& values() const { return data_; }

  T& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  T operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  T scalar_value() const;

  T& at(int i0) { return data_[idx1(i0)]; }
  T at(int i0) const { return data_[idx1(i0)]; }
  T& at(int i0, int i1) { return data_[idx2(i0, i1)]; }
  T at(int i0, int i1) const { return data_[idx2(i0, i1)]; }
  T& at(int i0, int i1, int i2) { return data_[idx3(i0, i1, i2)]; }
  T at(int i0, int i1, int i2) const { return data_[idx3(i0, i1, i2)]; }
  T& at(int i0, int i1, int i2, int i3) { return data_[idx4(i0, i1, i2, i3)]; }
  T at(int i0, int i1, int i2, int i3) const { return data_[idx4(i0, i1, i2, i3)]; }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return Tensor<U>(shape_, std::move(out));
  }

  bool all_finite() const {
    for (T v : data_) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }

 private:
  std::size_t idx1(int i0) const {
    assert(rank() == 1 && i0 >= 0 && i0 < shape_[0]);
    return static_cast<std::size_t>(i0);
  }
  std::size_t idx2(int i0, int i1) const {
    assert(rank() == 2 && i0 >= 0 && i0 < shape_[0] && i1 >= 0 && i1 < shape_[1]);
    return static_cast<std::size_t>(i0) * shape_[1] + i1;
  }
  std::size_t idx3(int i0, int i1, int i2) const {
    assert(rank() == 3 && i0 >= 0 && i0 < shape_[0] && i1 >= 0 && i1 < shape_[1] && i2 >= 0 &&
           i2 < shape_[2]);
    return (static_cast<std::size_t>(i0) * shape_[1] + i1) * shape_[2] + i2;
  }
  std::size_t idx4(int i0, int i1, int i2, int i3) const {
    assert(rank() == 4 && i0 >= 0 && i0 < shape_[0] && i1 >= 0 && i1 < shape_[1] && i2 >= 0 &&
           i2 < shape_[2] && i3 >= 0 && i3 < shape_[3]);
    return ((static_cast<std::size_t>(i0) * shape_[1] + i1) * shape_[2] + i2) * shape_[3] + i3;
  }

  std::vector<int> shape_;
  std::vector<T> data_;
};

template <typename T>
bool bitwise_equal(const Tensor<T>& a, const Tensor<T>& b) {
  if (!a.same_shape(b)) return false;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    if (!(a[i] == b[i])) return false;  // NaN never compares equal on purpose
  }
  return true;
}

// Binary tensor file: magic "FCT1", u8 rank, rank x u32 little-endian dims,
// then row-major IEEE-754 32-bit little-endian values.
void write_tensor(std::ostream& os, const Tensor<float>& t);
Tensor<float> read_tensor(std::istream& is, const std::string& what);
void write_tensor_file(const std::filesystem::path& path, const Tensor<float>& t);
Tensor<float> read_tensor_file(const std::filesystem::path& path);

}  // namespace fcis
