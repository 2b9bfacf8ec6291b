#pragma once

#include <cstddef>
#include <cstdint>

#include "json.hpp"

namespace ltm::model {

struct ModelConfig {
  std::size_t vocab_size = 2000;
  std::size_t d_model = 128;
  std::size_t n_layers = 4;
  std::size_t n_heads = 4;
  std::size_t d_ff = 512;
  std::size_t max_len = 128;
  std::size_t n_segments = 2;
  double dropout_rate = 0.1;
  double layernorm_eps = 1e-12;

  std::size_t head_dim() const { return d_model / n_heads; }
  /// Throws ConfigError.
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

nlohmann::json to_json(const ModelConfig& c);
ModelConfig model_config_from_json(const nlohmann::json& j);

}  // namespace ltm::model
