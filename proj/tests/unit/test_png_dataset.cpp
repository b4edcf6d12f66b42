#include <doctest.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>

#include "fcis/dataset.hpp"
#include "fcis/errors.hpp"
#include "fcis/png_io.hpp"
#include "fcis/rng.hpp"

#include "testutil.hpp"

using fcis::BinaryMask;
using fcis::DatasetConfig;
using fcis::Sample;
using fcis::Tensor;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("fcis_test_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

Tensor<float> quantized(const Tensor<float>& t) {
  Tensor<float> out = t;
  for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = fcis::quantize8(out[i]) / 255.0f;
  return out;
}

}  // namespace

TEST_CASE("rgb png round trip is exact on the 8-bit grid") {
  fcis::Rng rng = fcis::seeded_rng(41);
  Tensor<float> img = testutil::rand_tensor(rng, {3, 9, 13}, 0.0, 1.0).cast<float>();
  Tensor<float> q = quantized(img);
  const fs::path dir = fresh_dir("png_rgb");
  const std::string path = (dir / "t.png").string();
  fcis::write_png_rgb8(path, q);
  CHECK(bitwise_equal(fcis::read_png_rgb8(path), q));
}

TEST_CASE("gray png round trip is exact on bytes") {
  std::vector<std::uint8_t> pixels(7 * 5);
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = std::uint8_t(i * 11);
  const fs::path dir = fresh_dir("png_gray");
  const std::string path = (dir / "t.png").string();
  fcis::write_png_gray8(path, pixels, 7, 5);
  int h = 0, w = 0;
  CHECK(fcis::read_png_gray8(path, h, w) == pixels);
  CHECK(h == 7);
  CHECK(w == 5);
}

TEST_CASE("png reader rejects garbage with the file name in the message") {
  const fs::path dir = fresh_dir("png_bad");
  const std::string path = (dir / "junk.png").string();
  std::ofstream(path) << "this is not a png";
  CHECK_THROWS_WITH_AS(fcis::read_png_rgb8(path), doctest::Contains("junk.png"),
                       fcis::DataError);
}

TEST_CASE("rasterizers match their pixel-enumeration oracles") {
  const int W = 40, H = 30;
  fcis::BoxXYXY box{5.3, 7.1, 20.9, 14.4};
  BinaryMask rect = fcis::rasterize_rectangle(W, H, box);
  BinaryMask ell = fcis::rasterize_ellipse(W, H, 18.0, 15.0, 9.5, 6.25);
  BinaryMask tri = fcis::rasterize_triangle(W, H, 4.0, 25.0, 30.0, 22.0, 12.0, 5.0);
  auto edge = [](double x1, double y1, double x2, double y2, double px, double py) {
    return (x2 - x1) * (py - y1) - (y2 - y1) * (px - x1);
  };
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      CHECK(rect.get(x, y) ==
            (px >= box.x1 && px <= box.x2 && py >= box.y1 && py <= box.y2));
      const double dx = (px - 18.0) / 9.5, dy = (py - 15.0) / 6.25;
      CHECK(ell.get(x, y) == (dx * dx + dy * dy <= 1.0));
      // vertices listed clockwise in screen coords: inside = all edges <= 0
      const bool in_tri = edge(4, 25, 30, 22, px, py) <= 0 &&
                          edge(30, 22, 12, 5, px, py) <= 0 && edge(12, 5, 4, 25, px, py) <= 0;
      CHECK(tri.get(x, y) == in_tri);
    }
  }
  CHECK(rect.count() > 0);
  CHECK(ell.count() > 0);
  CHECK(tri.count() > 0);
}

TEST_CASE("scene generation is deterministic per seed") {
  DatasetConfig cfg;
  cfg.count = 3;
  auto a = fcis::generate_dataset(cfg);
  auto b = fcis::generate_dataset(cfg);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(bitwise_equal(a[i].image, b[i].image));
    REQUIRE(a[i].instances.size() == b[i].instances.size());
    for (std::size_t j = 0; j < a[i].instances.size(); ++j) {
      CHECK(a[i].instances[j].mask == b[i].instances[j].mask);
      CHECK(a[i].instances[j].category == b[i].instances[j].category);
    }
  }
}

TEST_CASE("instance range 0..0 gives a background-only sample") {
  DatasetConfig cfg;
  cfg.min_instances = cfg.max_instances = 0;
  fcis::Rng rng = fcis::stream_rng(cfg.seed, 0);
  Sample s = fcis::generate_scene(rng, cfg);
  CHECK(s.instances.empty());
  CHECK(s.image.shape() == std::vector<int>{3, 128, 128});
}

TEST_CASE("noise-free scenes decompose exactly into background plus flat instances") {
  // pixel-enumeration oracle for the occlusion composition: with zero noise,
  // a pixel differs from the background color iff exactly one visible mask
  // covers it, and each instance is one flat color
  DatasetConfig cfg;
  cfg.noise = 0.0;
  cfg.min_instances = 2;
  cfg.max_instances = 5;
  for (int scene = 0; scene < 8; ++scene) {
    fcis::Rng rng = fcis::stream_rng(99, scene);
    Sample s = fcis::generate_scene(rng, cfg);
    REQUIRE(!s.instances.empty());

    // majority pixel color = background (shapes cover less than half in expectation)
    const int H = s.image.dim(1), W = s.image.dim(2);
    for (const auto& inst : s.instances) CHECK(inst.mask.count() >= fcis::kMinVisiblePixels);
    for (std::size_t i = 0; i < s.instances.size(); ++i) {
      for (std::size_t j = i + 1; j < s.instances.size(); ++j) {
        CHECK(fcis::mask_intersection(s.instances[i].mask, s.instances[j].mask) == 0);
      }
    }

    // background color: any pixel covered by no instance
    std::array<float, 3> bg{};
    bool found_bg = false;
    for (int y = 0; y < H && !found_bg; ++y) {
      for (int x = 0; x < W && !found_bg; ++x) {
        bool covered = false;
        for (const auto& inst : s.instances) covered |= inst.mask.get(x, y);
        if (!covered) {
          bg = {s.image.at(0, y, x), s.image.at(1, y, x), s.image.at(2, y, x)};
          found_bg = true;
        }
      }
    }
    REQUIRE(found_bg);

    for (const auto& inst : s.instances) {
      std::array<float, 3> color{};
      bool first = true;
      for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
          std::array<float, 3> px = {s.image.at(0, y, x), s.image.at(1, y, x),
                                     s.image.at(2, y, x)};
          if (inst.mask.get(x, y)) {
            if (first) {
              color = px;
              first = false;
            } else {
              CHECK(px == color);  // flat fill
            }
          }
        }
      }
      CHECK(color != bg);
    }
    // uncovered pixels all share the background color
    for (int y = 0; y < H; ++y) {
      for (int x = 0; x < W; ++x) {
        bool covered = false;
        for (const auto& inst : s.instances) covered |= inst.mask.get(x, y);
        if (!covered) {
          CHECK(s.image.at(0, y, x) == bg[0]);
          CHECK(s.image.at(1, y, x) == bg[1]);
          CHECK(s.image.at(2, y, x) == bg[2]);
        }
      }
    }
  }
}

TEST_CASE("category frequencies are near-uniform over many instances") {
  DatasetConfig cfg;
  cfg.count = 400;
  cfg.seed = 2024;
  std::array<int, 4> freq{};
  int total = 0;
  for (const Sample& s : fcis::generate_dataset(cfg)) {
    for (const auto& inst : s.instances) {
      REQUIRE(inst.category >= 1);
      REQUIRE(inst.category <= 3);
      ++freq[inst.category];
      ++total;
    }
  }
  REQUIRE(total >= 1000);
  for (int c = 1; c <= 3; ++c) {
    const double f = double(freq[c]) / total;
    CHECK(f > 0.28);
    CHECK(f < 0.38);
  }
}

TEST_CASE("dataset write/read round trip preserves images, masks and labels") {
  DatasetConfig cfg;
  cfg.count = 4;
  cfg.seed = 11;
  auto samples = fcis::generate_dataset(cfg);
  const fs::path dir = fresh_dir("ds_roundtrip");
  fcis::write_dataset(dir.string(), samples);
  auto loaded = fcis::read_dataset(dir.string());
  REQUIRE(loaded.size() == samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    CHECK(bitwise_equal(loaded[i].image, samples[i].image));
    REQUIRE(loaded[i].instances.size() == samples[i].instances.size());
    for (std::size_t j = 0; j < samples[i].instances.size(); ++j) {
      CHECK(loaded[i].instances[j].mask == samples[i].instances[j].mask);
      CHECK(loaded[i].instances[j].category == samples[i].instances[j].category);
    }
  }
}

TEST_CASE("empty dataset round trips to zero samples") {
  const fs::path dir = fresh_dir("ds_empty");
  fcis::write_dataset(dir.string(), {});
  CHECK(fcis::read_dataset(dir.string()).empty());
  std::ifstream index(dir / "index.txt");
  std::string all((std::istreambuf_iterator<char>(index)), std::istreambuf_iterator<char>());
  CHECK(all.empty());
}

TEST_CASE("hand-crafted two-instance fixture parses with the right categories") {
  const fs::path dir = fresh_dir("ds_fixture");
  const int W = 16, H = 16;
  std::vector<std::uint8_t> inst(W * H, 0);
  for (int y = 2; y < 6; ++y) {
    for (int x = 2; x < 8; ++x) inst[y * W + x] = 1;
  }
  for (int y = 9; y < 14; ++y) {
    for (int x = 10; x < 15; ++x) inst[y * W + x] = 2;
  }
  fcis::write_png_gray8((dir / "00000.inst.png").string(), inst, H, W);
  fcis::write_png_rgb8((dir / "00000.img.png").string(), Tensor<float>::full({3, H, W}, 0.5f));
  std::ofstream(dir / "00000.labels.txt") << "1 2\n2 3\n";
  std::ofstream(dir / "index.txt") << "00000\n";

  auto loaded = fcis::read_dataset(dir.string());
  REQUIRE(loaded.size() == 1);
  REQUIRE(loaded[0].instances.size() == 2);
  CHECK(loaded[0].instances[0].category == 2);
  CHECK(loaded[0].instances[1].category == 3);
  CHECK(loaded[0].instances[0].mask.count() == 4 * 6);
  CHECK(loaded[0].instances[1].mask.count() == 5 * 5);
  CHECK(loaded[0].instances[0].mask.get(2, 2));
  CHECK(loaded[0].instances[1].mask.get(14, 13));
}

TEST_CASE("labels naming a pixel-less instance are rejected") {
  const fs::path dir = fresh_dir("ds_badlabel");
  const int W = 8, H = 8;
  std::vector<std::uint8_t> inst(W * H, 0);
  inst[9] = 1;
  fcis::write_png_gray8((dir / "00000.inst.png").string(), inst, H, W);
  fcis::write_png_rgb8((dir / "00000.img.png").string(), Tensor<float>::full({3, H, W}, 0.5f));
  std::ofstream(dir / "00000.labels.txt") << "1 1\n2 2\n";
  std::ofstream(dir / "index.txt") << "00000\n";
  CHECK_THROWS_WITH_AS(fcis::read_dataset(dir.string()), doctest::Contains("labels"),
                       fcis::DataError);
}

TEST_CASE("instance pixels missing from the labels are rejected") {
  const fs::path dir = fresh_dir("ds_orphan");
  const int W = 8, H = 8;
  std::vector<std::uint8_t> inst(W * H, 0);
  inst[9] = 1;
  inst[30] = 5;
  fcis::write_png_gray8((dir / "00000.inst.png").string(), inst, H, W);
  fcis::write_png_rgb8((dir / "00000.img.png").string(), Tensor<float>::full({3, H, W}, 0.5f));
  std::ofstream(dir / "00000.labels.txt") << "1 1\n";
  std::ofstream(dir / "index.txt") << "00000\n";
  CHECK_THROWS_WITH_AS(fcis::read_dataset(dir.string()), doctest::Contains("missing"),
                       fcis::DataError);
}
