#include "ltm/model/config.hpp"

#include "json.hpp"

#include "ltm/error.hpp"

namespace ltm::model {

void ModelConfig::validate() const {
  if (vocab_size == 0 || d_model == 0 || n_layers == 0 || n_heads == 0 || d_ff == 0 || max_len == 0) {
    throw ConfigError("model dimensions must be positive");
  }
  if (d_model % n_heads != 0) throw ConfigError("d_model must be divisible by n_heads");
  if (n_segments != 2) throw ConfigError("n_segments must be 2");
  if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must be in [0, 1)");
  if (!(layernorm_eps > 0.0)) throw ConfigError("layernorm_eps must be positive");
}

nlohmann::json to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model},       {"n_layers", c.n_layers},
          {"n_heads", c.n_heads},       {"d_ff", c.d_ff},             {"max_len", c.max_len},
          {"n_segments", c.n_segments}, {"dropout_rate", c.dropout_rate}, {"layernorm_eps", c.layernorm_eps}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  try {
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.d_model = j.value("d_model", c.d_model);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.d_ff = j.value("d_ff", c.d_ff);
    c.max_len = j.value("max_len", c.max_len);
    c.n_segments = j.value("n_segments", c.n_segments);
    c.dropout_rate = j.value("dropout_rate", c.dropout_rate);
    c.layernorm_eps = j.value("layernorm_eps", c.layernorm_eps);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad model config: ") + e.what());
  }
  return c;
}

}  // namespace ltm::model
