#include "fcis/model.hpp"

#include <atomic>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fcis/errors.hpp"
#include "fcis/kv.hpp"
#include "fcis/rng.hpp"

namespace fcis {

std::string to_string(HeadMode mode) {
  switch (mode) {
    case HeadMode::joint: return "joint";
    case HeadMode::separate: return "separate";
    case HeadMode::translation_invariant: return "translation_invariant";
  }
  throw std::logic_error("unreachable head mode");
}

HeadMode head_mode_from_string(const std::string& s) {
  if (s == "joint") return HeadMode::joint;
  if (s == "separate") return HeadMode::separate;
  if (s == "translation_invariant") return HeadMode::translation_invariant;
  throw ConfigError("unknown head_mode `" + s +
                    "` (expected joint, separate or translation_invariant)");
}

void ModelConfig::validate() const {
  if (k < 1) throw ConfigError("k must be >= 1");
  if (categories < 1) throw ConfigError("categories must be >= 1");
  if (trunk_widths.empty() || trunk_widths.size() != trunk_strides.size()) {
    throw ConfigError("trunk_widths and trunk_strides must be non-empty and equal length");
  }
  int product = 1;
  for (int s : trunk_strides) {
    if (s < 1) throw ConfigError("trunk stride must be >= 1");
    product *= s;
  }
  if (product != stride) {
    throw ConfigError("stride " + std::to_string(stride) +
                      " does not match the trunk stride product " + std::to_string(product));
  }
  if (final_dilation < 1) throw ConfigError("final_dilation must be >= 1");
  if (reduce_channels < 1 || rpn_channels < 1) throw ConfigError("head widths must be >= 1");
  if (anchor_scales.empty() || anchor_ratios.empty()) {
    throw ConfigError("anchor scales/ratios must be non-empty");
  }
}

std::string format_model_config(const ModelConfig& cfg) {
  std::ostringstream out;
  out << "k = " << cfg.k << "\n";
  out << "categories = " << cfg.categories << "\n";
  out << "stride = " << cfg.stride << "\n";
  out << "trunk_widths = " << format_int_list(cfg.trunk_widths) << "\n";
  out << "trunk_strides = " << format_int_list(cfg.trunk_strides) << "\n";
  out << "final_dilation = " << cfg.final_dilation << "\n";
  out << "reduce_channels = " << cfg.reduce_channels << "\n";
  out << "rpn_channels = " << cfg.rpn_channels << "\n";
  out << "anchor_scales = " << format_double_list(cfg.anchor_scales) << "\n";
  out << "anchor_ratios = " << format_double_list(cfg.anchor_ratios) << "\n";
  out << "head_mode = " << to_string(cfg.head_mode) << "\n";
  return out.str();
}

bool apply_model_key(ModelConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "k") {
    cfg.k = parse_int(value, key);
  } else if (key == "categories") {
    cfg.categories = parse_int(value, key);
  } else if (key == "stride") {
    cfg.stride = parse_int(value, key);
  } else if (key == "trunk_widths") {
    cfg.trunk_widths = parse_int_list(value, key);
  } else if (key == "trunk_strides") {
    cfg.trunk_strides = parse_int_list(value, key);
  } else if (key == "final_dilation") {
    cfg.final_dilation = parse_int(value, key);
  } else if (key == "reduce_channels") {
    cfg.reduce_channels = parse_int(value, key);
  } else if (key == "rpn_channels") {
    cfg.rpn_channels = parse_int(value, key);
  } else if (key == "anchor_scales") {
    cfg.anchor_scales = parse_double_list(value, key);
  } else if (key == "anchor_ratios") {
    cfg.anchor_ratios = parse_double_list(value, key);
  } else if (key == "head_mode") {
    cfg.head_mode = head_mode_from_string(value);
  } else {
    return false;
  }
  return true;
}

ModelConfig parse_model_config(const std::string& text) {
  ModelConfig cfg;
  for (const auto& [key, value] : parse_kv_lines(text)) {
    if (!apply_model_key(cfg, key, value)) {
      throw ConfigError("unknown model config key `" + key + "`");
    }
  }
  cfg.validate();
  return cfg;
}

template <typename T>
Tensor<T>& ParamSet<T>::at(const std::string& name) {
  for (auto& [n, t] : items) {
    if (n == name) return t;
  }
  throw std::invalid_argument("no parameter named " + name);
}

template <typename T>
const Tensor<T>& ParamSet<T>::at(const std::string& name) const {
  for (const auto& [n, t] : items) {
    if (n == name) return t;
  }
  throw std::invalid_argument("no parameter named " + name);
}

template <typename T>
bool ParamSet<T>::has(const std::string& name) const {
  for (const auto& [n, t] : items) {
    if (n == name) return true;
  }
  return false;
}

std::vector<std::pair<std::string, std::vector<int>>> expected_param_shapes(
    const ModelConfig& cfg) {
  cfg.validate();
  std::vector<std::pair<std::string, std::vector<int>>> out;
  auto conv = [&out](const std::string& name, int co, int ci, int kh, int kw) {
    out.emplace_back(name + ".w", std::vector<int>{co, ci, kh, kw});
    out.emplace_back(name + ".b", std::vector<int>{co});
  };
  int in_ch = 3;
  for (std::size_t i = 0; i < cfg.trunk_widths.size(); ++i) {
    conv("trunk." + std::to_string(i), cfg.trunk_widths[i], in_ch, 3, 3);
    in_ch = cfg.trunk_widths[i];
  }
  conv("reduce", cfg.reduce_channels, in_ch, 1, 1);
  conv("head.psmap", cfg.psmap_channels(), cfg.reduce_channels, 1, 1);
  conv("head.bbox", cfg.bbox_channels(), cfg.reduce_channels, 1, 1);
  const int penultimate =
      cfg.trunk_widths.size() >= 2 ? cfg.trunk_widths[cfg.trunk_widths.size() - 2] : 3;
  conv("rpn.conv", cfg.rpn_channels, penultimate, 3, 3);
  conv("rpn.obj", 2 * cfg.anchors(), cfg.rpn_channels, 1, 1);
  conv("rpn.delta", 4 * cfg.anchors(), cfg.rpn_channels, 1, 1);
  return out;
}

template <typename T>
ParamSet<T> init_params(const ModelConfig& cfg, std::uint64_t seed) {
  Rng rng = seeded_rng(seed);
  ParamSet<T> params;
  for (const auto& [name, shape] : expected_param_shapes(cfg)) {
    Tensor<T> t(shape);
    if (shape.size() == 4) {  // conv weight: He fan-in scaling
      const double fan_in = double(shape[1]) * shape[2] * shape[3];
      const double stddev = std::sqrt(2.0 / fan_in);
      for (std::int64_t i = 0; i < t.numel(); ++i) {
        t[i] = static_cast<T>(normal(rng, 0.0, stddev));
      }
    }  // biases stay zero
    params.items.emplace_back(name, std::move(t));
  }
  return params;
}

Var TapedParams::at(const std::string& name) const {
  for (const auto& [n, v] : items) {
    if (n == name) return v;
  }
  throw std::invalid_argument("no parameter named " + name);
}

template <typename T>
TapedParams lift_params(Tape<T>& tape, const ParamSet<T>& params, bool trainable) {
  TapedParams lifted;
  lifted.items.reserve(params.items.size());
  for (const auto& [name, tensor] : params.items) {
    lifted.items.emplace_back(name, trainable ? tape.leaf(tensor) : tape.constant(tensor));
  }
  return lifted;
}

namespace {
std::atomic<std::uint64_t> g_backbone_forwards{0};
}

std::uint64_t backbone_forward_count() { return g_backbone_forwards.load(); }

template <typename T>
ScoreMapVars forward_backbone(Tape<T>& tape, Var image, const TapedParams& params,
                              const ModelConfig& cfg) {
  g_backbone_forwards.fetch_add(1);
  cfg.validate();
  const Tensor<T>& img = tape.value(image);
  if (img.rank() != 3 || img.dim(0) != 3) {
    throw std::invalid_argument("forward_backbone wants a [3, H, W] image");
  }
  if (img.dim(1) % cfg.stride != 0 || img.dim(2) % cfg.stride != 0) {
    throw std::invalid_argument("image extent " + std::to_string(img.dim(1)) + "x" +
                                std::to_string(img.dim(2)) + " is not divisible by stride " +
                                std::to_string(cfg.stride));
  }

  const std::size_t stages = cfg.trunk_widths.size();
  Var x = image;
  Var penultimate = image;
  for (std::size_t i = 0; i < stages; ++i) {
    const int dilation = (i + 1 == stages) ? cfg.final_dilation : 1;
    const ConvSpec spec{cfg.trunk_strides[i], dilation, dilation};  // pad keeps 3x3 extent
    const std::string stage = "trunk." + std::to_string(i);
    x = relu(tape, conv2d(tape, x, params.at(stage + ".w"), params.at(stage + ".b"), spec));
    if (i + 2 == stages) penultimate = x;
  }

  Var reduced = relu(
      tape, conv2d(tape, x, params.at("reduce.w"), params.at("reduce.b"), ConvSpec{1, 1, 0}));

  ScoreMapVars maps;
  maps.psmaps = conv2d(tape, reduced, params.at("head.psmap.w"), params.at("head.psmap.b"),
                       ConvSpec{1, 1, 0});
  maps.bbox_maps = conv2d(tape, reduced, params.at("head.bbox.w"), params.at("head.bbox.b"),
                          ConvSpec{1, 1, 0});

  Var rpn_hidden = relu(tape, conv2d(tape, penultimate, params.at("rpn.conv.w"),
                                     params.at("rpn.conv.b"), ConvSpec{1, 1, 1}));
  maps.rpn_obj = conv2d(tape, rpn_hidden, params.at("rpn.obj.w"), params.at("rpn.obj.b"),
                        ConvSpec{1, 1, 0});
  maps.rpn_deltas = conv2d(tape, rpn_hidden, params.at("rpn.delta.w"),
                           params.at("rpn.delta.b"), ConvSpec{1, 1, 0});
  return maps;
}

namespace {

constexpr char kCheckpointMagic[4] = {'F', 'C', 'C', 'K'};
constexpr std::uint32_t kCheckpointVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16),
                              static_cast<unsigned char>(v >> 24)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u16(std::ostream& os, std::uint16_t v) {
  const unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  os.write(reinterpret_cast<const char*>(b), 2);
}

std::uint32_t get_u32(std::istream& is, const std::string& what) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) {
    throw DataError("truncated while reading " + what);
  }
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

std::uint16_t get_u16(std::istream& is, const std::string& what) {
  unsigned char b[2];
  if (!is.read(reinterpret_cast<char*>(b), 2)) {
    throw DataError("truncated while reading " + what);
  }
  return std::uint16_t(std::uint16_t(b[0]) | (std::uint16_t(b[1]) << 8));
}

}  // namespace

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot write " + path);
  os.write(kCheckpointMagic, 4);
  put_u32(os, kCheckpointVersion);
  put_u32(os, ckpt.iteration);
  const std::string cfg = format_model_config(ckpt.config);
  put_u32(os, static_cast<std::uint32_t>(cfg.size()));
  os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  for (const auto& [name, tensor] : ckpt.params.items) {
    put_u16(os, static_cast<std::uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor(os, tensor);
  }
  if (!os) throw DataError("write failure on " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kCheckpointMagic, 4) != 0) {
    throw DataError(path + ": missing FCCK checkpoint magic");
  }
  const std::uint32_t version = get_u32(is, "checkpoint version");
  if (version != kCheckpointVersion) {
    throw DataError(path + ": unsupported checkpoint version " + std::to_string(version));
  }
  Checkpoint ckpt;
  ckpt.iteration = get_u32(is, "checkpoint iteration");
  const std::uint32_t cfg_len = get_u32(is, "checkpoint config length");
  std::string cfg_text(cfg_len, '\0');
  if (!is.read(cfg_text.data(), cfg_len)) {
    throw DataError(path + ": truncated config block");
  }
  ckpt.config = parse_model_config(cfg_text);

  while (true) {
    if (is.peek() == std::char_traits<char>::eof()) break;
    const std::uint16_t name_len = get_u16(is, "parameter name length");
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) {
      throw DataError(path + ": truncated parameter name");
    }
    ckpt.params.items.emplace_back(name, read_tensor(is, "parameter " + name));
  }

  const auto expected = expected_param_shapes(ckpt.config);
  if (expected.size() != ckpt.params.items.size()) {
    throw DataError(path + ": expected " + std::to_string(expected.size()) +
                    " parameters, found " + std::to_string(ckpt.params.items.size()));
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& [name, shape] = expected[i];
    const auto& [got_name, tensor] = ckpt.params.items[i];
    if (name != got_name) {
      throw DataError(path + ": parameter " + std::to_string(i) + " is `" + got_name +
                      "`, expected `" + name + "`");
    }
    if (tensor.shape() != shape) {
      throw DataError(path + ": parameter " + name + " has the wrong shape for this config");
    }
  }
  return ckpt;
}

template struct ParamSet<float>;
template struct ParamSet<double>;
template ParamSet<float> init_params<float>(const ModelConfig&, std::uint64_t);
template ParamSet<double> init_params<double>(const ModelConfig&, std::uint64_t);
template TapedParams lift_params<float>(Tape<float>&, const ParamSet<float>&, bool);
template TapedParams lift_params<double>(Tape<double>&, const ParamSet<double>&, bool);
template ScoreMapVars forward_backbone<float>(Tape<float>&, Var, const TapedParams&,
                                              const ModelConfig&);
template ScoreMapVars forward_backbone<double>(Tape<double>&, Var, const TapedParams&,
                                               const ModelConfig&);

}  // namespace fcis
