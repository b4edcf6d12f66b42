#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "fcis/ops.hpp"
#include "fcis/tape.hpp"
#include "fcis/tensor.hpp"

namespace fcis {

enum class HeadMode { joint, separate, translation_invariant };
std::string to_string(HeadMode mode);
HeadMode head_mode_from_string(const std::string& s);  // ConfigError on unknown

struct ModelConfig {
  int k = 3;          // cell grid; forced to 1 by translation_invariant mode
  int categories = 3; // foreground categories; background is index 0
  int stride = 8;     // image-to-map ratio; must equal the product of trunk strides
  std::vector<int> trunk_widths = {16, 32, 32, 64, 64, 128};
  std::vector<int> trunk_strides = {2, 2, 2, 1, 1, 1};
  int final_dilation = 2;   // applied to the last trunk stage only
  int reduce_channels = 128;
  int rpn_channels = 64;
  std::vector<double> anchor_scales = {24, 40, 60};
  std::vector<double> anchor_ratios = {0.5, 1.0, 2.0};
  HeadMode head_mode = HeadMode::joint;

  int effective_k() const { return head_mode == HeadMode::translation_invariant ? 1 : k; }
  int anchors() const { return static_cast<int>(anchor_scales.size() * anchor_ratios.size()); }
  int psmap_channels() const {  // 2 k^2 (C+1)
    const int ek = effective_k();
    return 2 * ek * ek * (categories + 1);
  }
  int bbox_channels() const {  // 4 k^2
    const int ek = effective_k();
    return 4 * ek * ek;
  }
  void validate() const;  // throws ConfigError
};

// `key = value` block stored inside checkpoints (and reusable as a config
// file fragment). Unknown keys are rejected.
std::string format_model_config(const ModelConfig& cfg);
ModelConfig parse_model_config(const std::string& text);

// Single-key assignment shared with the flat run config; false means the key
// is not a model key (the value is untouched then).
bool apply_model_key(ModelConfig& cfg, const std::string& key, const std::string& value);

// Parameters in a fixed order: shapes, initialization, checkpoints and the
// optimizer all iterate the same list.
template <typename T>
struct ParamSet {
  std::vector<std::pair<std::string, Tensor<T>>> items;

  Tensor<T>& at(const std::string& name);
  const Tensor<T>& at(const std::string& name) const;
  bool has(const std::string& name) const;
};

std::vector<std::pair<std::string, std::vector<int>>> expected_param_shapes(
    const ModelConfig& cfg);

// He fan-in Gaussian for conv weights, zero biases. Deterministic per seed.
template <typename T>
ParamSet<T> init_params(const ModelConfig& cfg, std::uint64_t seed);

// The backbone output bundle, as tape handles.
struct ScoreMapVars {
  Var psmaps;      // [2 k^2 (C+1), H/s, W/s]
  Var bbox_maps;   // [4 k^2, H/s, W/s]
  Var rpn_obj;     // [2 A, H/s, W/s]
  Var rpn_deltas;  // [4 A, H/s, W/s]
};

// Parameters lifted onto a tape; trainable params are leaves (gradients
// accumulated), frozen ones constants (backward skips them entirely).
struct TapedParams {
  std::vector<std::pair<std::string, Var>> items;
  Var at(const std::string& name) const;
};

template <typename T>
TapedParams lift_params(Tape<T>& tape, const ParamSet<T>& params, bool trainable);

// Trunk stages are conv3x3 + relu; stage i uses trunk_strides[i], the last
// stage uses final_dilation (pad = dilation keeps the extent). The RPN hangs
// off the penultimate stage; psmap/bbox heads follow a 1x1 reduction conv.
template <typename T>
ScoreMapVars forward_backbone(Tape<T>& tape, Var image, const TapedParams& params,
                              const ModelConfig& cfg);

// Process-wide count of forward_backbone calls, so tests can pin how many
// full-image passes an operation spends.
std::uint64_t backbone_forward_count();

struct Checkpoint {
  ModelConfig config;
  std::uint32_t iteration = 0;
  ParamSet<float> params;
};

// File layout: "FCCK", u32 version, u32 iteration, u32 config-text length +
// bytes, then (u16 name length, name, FCT1 tensor) records until EOF.
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);  // validates shapes vs config

}  // namespace fcis
