#include "fcis/tensor.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "fcis/errors.hpp"

namespace fcis {

std::int64_t shape_numel(const std::vector<int>& shape) {
  std::int64_t n = 1;
  for (int d : shape) n *= d;
  return n;
}

std::string shape_str(const std::vector<int>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

void check_shape_valid(const std::vector<int>& shape) {
  for (int d : shape) {
    if (d <= 0) {
      throw std::invalid_argument("tensor shape " + shape_str(shape) +
                                  " has a non-positive dimension");
    }
  }
  if (shape.size() > 8) throw std::invalid_argument("tensor rank > 8 is not supported");
}

template <typename T>
Tensor<T>::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
  check_shape_valid(shape_);
  data_.assign(static_cast<std::size_t>(shape_numel(shape_)), T(0));
}

template <typename T>
Tensor<T>::Tensor(std::vector<int> shape, std::vector<T> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  check_shape_valid(shape_);
  if (static_cast<std::int64_t>(data_.size()) != shape_numel(shape_)) {
    throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                " does not match shape " + shape_str(shape_));
  }
}

template <typename T>
Tensor<T> Tensor<T>::full(std::vector<int> shape, T value) {
  Tensor t(std::move(shape));
  for (auto& v : t.data_) v = value;
  return t;
}

template <typename T>
T Tensor<T>::scalar_value() const {
  if (numel() != 1) {
    throw std::invalid_argument("scalar_value() on tensor of shape " + shape_str(shape_));
  }
  return data_[0];
}

template class Tensor<float>;
template class Tensor<double>;

namespace {

constexpr char kMagic[4] = {'F', 'C', 'T', '1'};

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is, const std::string& what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    throw DataError(what + ": truncated while reading a 32-bit field");
  }
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_tensor(std::ostream& os, const Tensor<float>& t) {
  os.write(kMagic, 4);
  unsigned char rank = static_cast<unsigned char>(t.rank());
  os.write(reinterpret_cast<const char*>(&rank), 1);
  for (int d : t.shape()) put_u32(os, static_cast<std::uint32_t>(d));
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    put_u32(os, std::bit_cast<std::uint32_t>(t[i]));
  }
}

Tensor<float> read_tensor(std::istream& is, const std::string& what) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw DataError(what + ": missing FCT1 tensor magic");
  }
  unsigned char rank = 0;
  if (!is.read(reinterpret_cast<char*>(&rank), 1) || rank > 8) {
    throw DataError(what + ": bad tensor rank");
  }
  std::vector<int> shape(rank);
  for (auto& d : shape) {
    std::uint32_t v = get_u32(is, what);
    if (v == 0 || v > static_cast<std::uint32_t>(std::numeric_limits<int>::max())) {
      throw DataError(what + ": bad tensor dimension " + std::to_string(v));
    }
    d = static_cast<int>(v);
  }
  std::int64_t n = shape_numel(shape);
  std::vector<float> values(static_cast<std::size_t>(n));
  for (auto& v : values) v = std::bit_cast<float>(get_u32(is, what));
  return Tensor<float>(std::move(shape), std::move(values));
}

void write_tensor_file(const std::filesystem::path& path, const Tensor<float>& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open " + path.string() + " for writing");
  write_tensor(os, t);
  if (!os) throw DataError("failed writing tensor to " + path.string());
}

Tensor<float> read_tensor_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path.string());
  return read_tensor(is, path.string());
}

}  // namespace fcis
