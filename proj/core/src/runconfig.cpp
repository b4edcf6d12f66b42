#include "fcis/runconfig.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "fcis/errors.hpp"
#include "fcis/kv.hpp"

namespace fcis {

namespace {

std::uint64_t parse_u64(const std::string& value, const std::string& key) {
  std::uint64_t out = 0;
  const std::string v = trim(value);
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw ConfigError("key `" + key + "`: `" + value + "` is not an unsigned integer");
  }
  return out;
}

void apply_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  if (apply_model_key(cfg.model, key, value)) return;

  DatasetConfig& d = cfg.dataset;
  TrainConfig& t = cfg.train;
  InferConfig& f = cfg.infer;
  if (key == "seed") {
    const std::uint64_t s = parse_u64(value, key);
    d.seed = s;
    t.seed = s;
  } else if (key == "count") {
    d.count = parse_int(value, key);
  } else if (key == "height") {
    d.height = parse_int(value, key);
  } else if (key == "width") {
    d.width = parse_int(value, key);
  } else if (key == "min_instances") {
    d.min_instances = parse_int(value, key);
  } else if (key == "max_instances") {
    d.max_instances = parse_int(value, key);
  } else if (key == "min_size") {
    d.min_size = parse_double(value, key);
  } else if (key == "max_size") {
    d.max_size = parse_double(value, key);
  } else if (key == "palette") {
    d.palette = parse_int_list(value, key);
  } else if (key == "noise") {
    d.noise = parse_double(value, key);
  } else if (key == "iterations") {
    t.iterations = parse_int(value, key);
  } else if (key == "lr") {
    t.lr = parse_double(value, key);
  } else if (key == "momentum") {
    t.momentum = parse_double(value, key);
  } else if (key == "weight_decay") {
    t.weight_decay = parse_double(value, key);
  } else if (key == "ohem") {
    t.ohem = parse_bool(value, key);
  } else if (key == "batch") {
    t.batch = parse_int(value, key);
  } else if (key == "rois") {
    t.rois = parse_int(value, key);
  } else if (key == "jitter_frac") {
    t.jitter_frac = parse_double(value, key);
  } else if (key == "proposals") {
    f.proposals = parse_int(value, key);
  } else if (key == "score_thresh") {
    f.score_thresh = parse_double(value, key);
  } else if (key == "nms_thresh") {
    f.nms_thresh = parse_double(value, key);
  } else if (key == "mask_binarize") {
    f.mask_binarize = parse_double(value, key);
  } else if (key == "vote_iou") {
    f.vote_iou = parse_double(value, key);
  } else {
    throw ConfigError("unknown config key `" + key + "`");
  }
}

}  // namespace

void RunConfig::validate() const {
  model.validate();
  dataset.validate();
  train.validate();
  infer.validate();
  const int top = *std::max_element(dataset.palette.begin(), dataset.palette.end());
  if (model.categories < top) {
    throw ConfigError("model knows " + std::to_string(model.categories) +
                      " categories but the dataset palette uses id " + std::to_string(top));
  }
}

RunConfig make_run_config(const std::vector<std::pair<std::string, std::string>>& file_pairs,
                          const std::vector<std::pair<std::string, std::string>>& overrides) {
  RunConfig cfg;
  for (const auto& [k, v] : file_pairs) apply_key(cfg, k, v);
  for (const auto& [k, v] : overrides) apply_key(cfg, k, v);
  cfg.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path,
                          const std::vector<std::pair<std::string, std::string>>& overrides) {
  std::vector<std::pair<std::string, std::string>> pairs;
  if (!path.empty()) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file " + path);
    std::ostringstream ss;
    ss << is.rdbuf();
    pairs = parse_kv_lines(ss.str());
  }
  return make_run_config(pairs, overrides);
}

}  // namespace fcis
