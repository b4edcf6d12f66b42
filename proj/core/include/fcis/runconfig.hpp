#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fcis/dataset.hpp"
#include "fcis/infer.hpp"
#include "fcis/model.hpp"
#include "fcis/train.hpp"

namespace fcis {

// The flat `key = value` surface shared by the config file and --set
// overrides. Model keys keep their own names; the rest are prefixed by
// domain only where they would collide (they don't, so all stay bare).
// `seed` feeds both dataset synthesis and training.
struct RunConfig {
  ModelConfig model;
  DatasetConfig dataset;
  TrainConfig train;
  InferConfig infer;

  void validate() const;
};

// Applies file pairs first, then overrides (later entries win within each
// list). Unknown keys and malformed values raise ConfigError.
RunConfig make_run_config(const std::vector<std::pair<std::string, std::string>>& file_pairs,
                          const std::vector<std::pair<std::string, std::string>>& overrides);

// Convenience: read + parse the file (empty path = defaults), then overrides.
RunConfig load_run_config(const std::string& path,
                          const std::vector<std::pair<std::string, std::string>>& overrides);

}  // namespace fcis
