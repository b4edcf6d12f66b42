#include "fcis/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "fcis/errors.hpp"
#include "fcis/kv.hpp"
#include "fcis/png_io.hpp"

namespace fcis {

namespace fs = std::filesystem;

void DatasetConfig::validate() const {
  if (count < 0) throw ConfigError("dataset count must be >= 0");
  if (height <= 0 || width <= 0) throw ConfigError("dataset image extent must be positive");
  if (min_instances < 0 || max_instances < min_instances) {
    throw ConfigError("instance count range is empty");
  }
  if (!(min_size > 0) || max_size < min_size) throw ConfigError("size range is empty");
  if (max_size > std::min(width, height)) {
    throw ConfigError("max_size exceeds the image extent");
  }
  if (palette.empty()) throw ConfigError("category palette is empty");
  for (int c : palette) {
    if (c < 1 || c > kCategoryCount) {
      throw ConfigError("palette category " + std::to_string(c) + " out of range");
    }
  }
  if (noise < 0) throw ConfigError("noise amplitude must be >= 0");
}

BinaryMask rasterize_rectangle(int img_w, int img_h, const BoxXYXY& box) {
  BinaryMask m(img_w, img_h);
  for (int y = 0; y < img_h; ++y) {
    const double py = y + 0.5;
    if (py < box.y1 || py > box.y2) continue;
    for (int x = 0; x < img_w; ++x) {
      const double px = x + 0.5;
      if (px >= box.x1 && px <= box.x2) m.set(x, y, true);
    }
  }
  return m;
}

BinaryMask rasterize_ellipse(int img_w, int img_h, double cx, double cy, double rx, double ry) {
  BinaryMask m(img_w, img_h);
  for (int y = 0; y < img_h; ++y) {
    const double dy = (y + 0.5 - cy) / ry;
    if (dy * dy > 1.0) continue;
    for (int x = 0; x < img_w; ++x) {
      const double dx = (x + 0.5 - cx) / rx;
      if (dx * dx + dy * dy <= 1.0) m.set(x, y, true);
    }
  }
  return m;
}

BinaryMask rasterize_triangle(int img_w, int img_h, double ax, double ay, double bx, double by,
                              double cx, double cy) {
  // orient counter-clockwise so all edge functions share a sign for interior points
  const double signed2 = (bx - ax) * (cy - ay) - (by - ay) * (cx - ax);
  if (signed2 < 0) {
    std::swap(bx, cx);
    std::swap(by, cy);
  }
  auto edge = [](double ex1, double ey1, double ex2, double ey2, double px, double py) {
    return (ex2 - ex1) * (py - ey1) - (ey2 - ey1) * (px - ex1);
  };
  BinaryMask m(img_w, img_h);
  for (int y = 0; y < img_h; ++y) {
    const double py = y + 0.5;
    for (int x = 0; x < img_w; ++x) {
      const double px = x + 0.5;
      if (edge(ax, ay, bx, by, px, py) >= 0 && edge(bx, by, cx, cy, px, py) >= 0 &&
          edge(cx, cy, ax, ay, px, py) >= 0) {
        m.set(x, y, true);
      }
    }
  }
  return m;
}

namespace {

using Color = std::array<double, 3>;

double color_dist2(const Color& a, const Color& b) {
  double s = 0;
  for (int i = 0; i < 3; ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

Color sample_color(Rng& rng, const Color& background, const std::vector<Color>& taken) {
  // keep shapes separable from the canvas and from each other; bounded
  // retries keep generation total
  for (int attempt = 0; attempt < 30; ++attempt) {
    Color c = {uniform_real(rng, 0, 1), uniform_real(rng, 0, 1), uniform_real(rng, 0, 1)};
    if (color_dist2(c, background) < 0.35 * 0.35) continue;
    bool clash = false;
    for (const Color& t : taken) {
      if (color_dist2(c, t) < 0.25 * 0.25) {
        clash = true;
        break;
      }
    }
    if (!clash) return c;
  }
  return {uniform_real(rng, 0, 1), uniform_real(rng, 0, 1), uniform_real(rng, 0, 1)};
}

struct ShapeDraw {
  BinaryMask mask;
  int category = 0;
  Color color{};
};

ShapeDraw sample_shape(Rng& rng, const DatasetConfig& cfg, const Color& background,
                       const std::vector<Color>& taken) {
  ShapeDraw s;
  s.category = cfg.palette[uniform_int(rng, 0, static_cast<int>(cfg.palette.size()) - 1)];
  s.color = sample_color(rng, background, taken);
  const double w = uniform_real(rng, cfg.min_size, cfg.max_size);
  const double h = uniform_real(rng, cfg.min_size, cfg.max_size);
  const double cx = uniform_real(rng, w / 2, cfg.width - w / 2);
  const double cy = uniform_real(rng, h / 2, cfg.height - h / 2);
  switch (s.category) {
    case kCategoryRectangle:
      s.mask = rasterize_rectangle(cfg.width, cfg.height,
                                   BoxXYXY{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2});
      break;
    case kCategoryEllipse:
      s.mask = rasterize_ellipse(cfg.width, cfg.height, cx, cy, w / 2, h / 2);
      break;
    case kCategoryTriangle: {
      const double x0 = cx - w / 2, y0 = cy - h / 2;
      double ax = 0, ay = 0, bx = 0, by = 0, tx = 0, ty = 0;
      for (int attempt = 0; attempt < 50; ++attempt) {
        ax = x0 + uniform_real(rng, 0, w);
        ay = y0 + uniform_real(rng, 0, h);
        bx = x0 + uniform_real(rng, 0, w);
        by = y0 + uniform_real(rng, 0, h);
        tx = x0 + uniform_real(rng, 0, w);
        ty = y0 + uniform_real(rng, 0, h);
        const double area2 = std::abs((bx - ax) * (ty - ay) - (by - ay) * (tx - ax));
        if (area2 >= 0.24 * w * h) break;  // no thin slivers
      }
      s.mask = rasterize_triangle(cfg.width, cfg.height, ax, ay, bx, by, tx, ty);
      break;
    }
    default:
      throw ConfigError("unknown category " + std::to_string(s.category));
  }
  return s;
}

}  // namespace

Sample generate_scene(Rng& rng, const DatasetConfig& cfg) {
  cfg.validate();
  const Color background = {uniform_real(rng, 0, 1), uniform_real(rng, 0, 1),
                            uniform_real(rng, 0, 1)};
  const int target = uniform_int(rng, cfg.min_instances, cfg.max_instances);

  std::vector<ShapeDraw> drawn;      // full shapes, draw order = occlusion order
  std::vector<BinaryMask> visible;   // drawn minus everything painted later
  std::vector<Color> taken;
  int budget = 40;  // candidate rejections allowed before settling for fewer instances
  while (static_cast<int>(drawn.size()) < target && budget > 0) {
    ShapeDraw cand = sample_shape(rng, cfg, background, taken);
    if (cand.mask.count() < kMinVisiblePixels) {
      --budget;
      continue;
    }
    bool starves = false;
    for (const BinaryMask& v : visible) {
      if (mask_difference(v, cand.mask).count() < kMinVisiblePixels) {
        starves = true;
        break;
      }
    }
    if (starves) {
      --budget;
      continue;
    }
    for (BinaryMask& v : visible) v = mask_difference(v, cand.mask);
    visible.push_back(cand.mask);
    taken.push_back(cand.color);
    drawn.push_back(std::move(cand));
  }

  Sample out;
  out.image = Tensor<float>({3, cfg.height, cfg.width});
  for (int c = 0; c < 3; ++c) {
    for (std::int64_t i = 0; i < std::int64_t(cfg.height) * cfg.width; ++i) {
      out.image[c * std::int64_t(cfg.height) * cfg.width + i] =
          static_cast<float>(background[c]);
    }
  }
  for (std::size_t s = 0; s < drawn.size(); ++s) {
    for (int y = 0; y < cfg.height; ++y) {
      for (int x = 0; x < cfg.width; ++x) {
        if (!drawn[s].mask.get(x, y)) continue;
        for (int c = 0; c < 3; ++c) {
          out.image.at(c, y, x) = static_cast<float>(drawn[s].color[c]);
        }
      }
    }
  }
  for (std::int64_t i = 0; i < out.image.numel(); ++i) {
    double v = out.image[i];
    if (cfg.noise > 0) v += normal(rng, 0.0, cfg.noise);
    out.image[i] = quantize8(static_cast<float>(v)) / 255.0f;
  }
  for (std::size_t s = 0; s < drawn.size(); ++s) {
    if (visible[s].count() < kMinVisiblePixels) continue;  // unreachable by construction
    out.instances.push_back(Instance{std::move(visible[s]), drawn[s].category});
  }
  return out;
}

std::vector<Sample> generate_dataset(const DatasetConfig& cfg) {
  cfg.validate();
  std::vector<Sample> out;
  out.reserve(cfg.count);
  for (int i = 0; i < cfg.count; ++i) {
    Rng rng = stream_rng(cfg.seed, static_cast<std::uint64_t>(i));
    out.push_back(generate_scene(rng, cfg));
  }
  return out;
}

std::string sample_id(int i) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%05d", i);
  return buf;
}

void write_dataset(const std::string& dir, const std::vector<Sample>& samples) {
  fs::create_directories(dir);
  std::ofstream index(fs::path(dir) / "index.txt");
  if (!index) throw DataError("cannot write " + dir + "/index.txt");
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const Sample& s = samples[i];
    const std::string id = sample_id(static_cast<int>(i));
    index << id << "\n";
    const int h = s.image.dim(1), w = s.image.dim(2);
    write_png_rgb8((fs::path(dir) / (id + ".img.png")).string(), s.image);

    if (s.instances.size() > 255) throw DataError("sample " + id + ": too many instances");
    std::vector<std::uint8_t> inst(static_cast<std::size_t>(h) * w, 0);
    for (std::size_t j = 0; j < s.instances.size(); ++j) {
      const BinaryMask& m = s.instances[j].mask;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          if (m.get(x, y)) inst[static_cast<std::size_t>(y) * w + x] = std::uint8_t(j + 1);
        }
      }
    }
    write_png_gray8((fs::path(dir) / (id + ".inst.png")).string(), inst, h, w);

    std::ofstream labels(fs::path(dir) / (id + ".labels.txt"));
    if (!labels) throw DataError("cannot write labels for sample " + id);
    for (std::size_t j = 0; j < s.instances.size(); ++j) {
      labels << (j + 1) << " " << s.instances[j].category << "\n";
    }
  }
}

std::vector<Sample> read_dataset(const std::string& dir) {
  const std::string index_path = (fs::path(dir) / "index.txt").string();
  std::ifstream index(index_path);
  if (!index) throw DataError("cannot open " + index_path);
  std::vector<std::string> ids;
  std::string line;
  while (std::getline(index, line)) {
    line.erase(line.find_last_not_of(" \t\r\n") + 1);
    if (!line.empty()) ids.push_back(line);
  }

  std::vector<Sample> out;
  out.reserve(ids.size());
  for (const std::string& id : ids) {
    Sample s;
    s.image = read_png_rgb8((fs::path(dir) / (id + ".img.png")).string());
    const int h = s.image.dim(1), w = s.image.dim(2);

    const std::string inst_path = (fs::path(dir) / (id + ".inst.png")).string();
    int ih = 0, iw = 0;
    std::vector<std::uint8_t> inst = read_png_gray8(inst_path, ih, iw);
    if (ih != h || iw != w) {
      throw DataError(inst_path + ": extent differs from the RGB image");
    }

    const std::string labels_path = (fs::path(dir) / (id + ".labels.txt")).string();
    std::ifstream labels(labels_path);
    if (!labels) throw DataError("cannot open " + labels_path);
    std::map<int, int> category_of;
    int lineno = 0;
    while (std::getline(labels, line)) {
      ++lineno;
      if (trim(line).empty()) continue;
      std::istringstream ls(line);
      int inst_id = 0, category = 0;
      if (!(ls >> inst_id >> category) || inst_id <= 0 || category < 1 ||
          category > kCategoryCount) {
        throw DataError(labels_path + " line " + std::to_string(lineno) + ": bad label line");
      }
      if (!category_of.emplace(inst_id, category).second) {
        throw DataError(labels_path + ": duplicate instance id " + std::to_string(inst_id));
      }
    }

    std::map<int, BinaryMask> masks;
    for (const auto& [inst_id, category] : category_of) {
      (void)category;
      masks.emplace(inst_id, BinaryMask(w, h));
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const int v = inst[static_cast<std::size_t>(y) * w + x];
        if (v == 0) continue;
        auto it = masks.find(v);
        if (it == masks.end()) {
          throw DataError(inst_path + ": pixel instance id " + std::to_string(v) +
                          " missing from labels");
        }
        it->second.set(x, y, true);
      }
    }
    for (const auto& [inst_id, mask] : masks) {
      if (mask.empty()) {
        throw DataError(labels_path + ": instance " + std::to_string(inst_id) +
                        " has no pixels");
      }
      s.instances.push_back(Instance{mask, category_of.at(inst_id)});
    }
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace fcis
