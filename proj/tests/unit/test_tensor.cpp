#include <doctest.h>

#include <bit>
#include <cstdint>
#include <sstream>

#include "fcis/errors.hpp"
#include "fcis/tensor.hpp"

using fcis::Tensor;

TEST_CASE("tensor shape and data length stay consistent") {
  Tensor<double> t({2, 3, 4});
  CHECK(t.numel() == 24);
  CHECK(t.rank() == 3);
  CHECK_THROWS_AS(Tensor<double>({2, 3}, {1.0, 2.0, 3.0}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor<double>({0, 3}), std::invalid_argument);
  CHECK_THROWS_AS(Tensor<double>({-1}), std::invalid_argument);
}

TEST_CASE("rank-0 tensor is a scalar, default tensor is absent") {
  Tensor<float> s = Tensor<float>::scalar(2.5f);
  CHECK(s.rank() == 0);
  CHECK(s.numel() == 1);
  CHECK(s.scalar_value() == 2.5f);
  Tensor<float> none;
  CHECK(none.absent());
  CHECK_FALSE(s.absent());
  CHECK_THROWS_AS(Tensor<float>({2}, {1.f, 2.f}).scalar_value(), std::invalid_argument);
}

TEST_CASE("element accessors address row-major layout") {
  Tensor<double> t({2, 3});
  t.at(1, 2) = 7.0;
  CHECK(t[5] == 7.0);
  Tensor<double> u({2, 2, 2});
  u.at(1, 0, 1) = 3.0;
  CHECK(u[5] == 3.0);
}

TEST_CASE("cast converts between precisions") {
  Tensor<double> t({3}, {1.5, -2.25, 0.125});
  Tensor<float> f = t.cast<float>();
  Tensor<double> back = f.cast<double>();
  CHECK(bitwise_equal(t, back));  // all values exactly representable in f32
}

TEST_CASE("all_finite flags NaN and Inf") {
  Tensor<double> t({2}, {1.0, 2.0});
  CHECK(t.all_finite());
  t[1] = std::numeric_limits<double>::quiet_NaN();
  CHECK_FALSE(t.all_finite());
  t[1] = std::numeric_limits<double>::infinity();
  CHECK_FALSE(t.all_finite());
}

TEST_CASE("tensor file format writes the exact documented bytes") {
  Tensor<float> t({2, 3}, {0.f, 1.f, 2.f, 3.f, 4.f, 5.f});
  std::ostringstream os(std::ios::binary);
  fcis::write_tensor(os, t);
  const std::string bytes = os.str();

  std::string expected;
  expected += "FCT1";
  expected.push_back(char(2));  // rank
  auto push_u32 = [&expected](std::uint32_t v) {
    expected.push_back(char(v & 0xff));
    expected.push_back(char((v >> 8) & 0xff));
    expected.push_back(char((v >> 16) & 0xff));
    expected.push_back(char((v >> 24) & 0xff));
  };
  push_u32(2);
  push_u32(3);
  for (float v : t.values()) push_u32(std::bit_cast<std::uint32_t>(v));
  CHECK(bytes == expected);

  std::istringstream is(bytes, std::ios::binary);
  Tensor<float> r = fcis::read_tensor(is, "test");
  CHECK(bitwise_equal(t, r));
}

TEST_CASE("tensor reader rejects corrupt streams") {
  Tensor<float> t({4}, {1.f, 2.f, 3.f, 4.f});
  std::ostringstream os(std::ios::binary);
  fcis::write_tensor(os, t);
  std::string bytes = os.str();

  {
    std::istringstream is(bytes.substr(0, bytes.size() - 3), std::ios::binary);
    CHECK_THROWS_AS(fcis::read_tensor(is, "trunc"), fcis::DataError);
  }
  {
    std::string bad = bytes;
    bad[0] = 'X';
    std::istringstream is(bad, std::ios::binary);
    CHECK_THROWS_AS(fcis::read_tensor(is, "magic"), fcis::DataError);
  }
}

TEST_CASE("tensor file round trip through the filesystem") {
  Tensor<float> t({1, 2, 2}, {0.5f, -1.f, 3.25f, 1e-8f});
  auto path = std::filesystem::temp_directory_path() / "fcis_tensor_rt.bin";
  fcis::write_tensor_file(path, t);
  Tensor<float> r = fcis::read_tensor_file(path);
  CHECK(bitwise_equal(t, r));
  std::filesystem::remove(path);
}
