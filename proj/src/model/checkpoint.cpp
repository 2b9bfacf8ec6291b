#include "ltm/model/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <map>

#include "json.hpp"

#include "ltm/error.hpp"
#include "ltm/io.hpp"

namespace ltm::model {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'L', 'T', 'M', 'C', 'K', 'P', 'T', '\0'};

template <typename U>
void put(std::string& out, U value) {
  char buf[sizeof(U)];
  std::memcpy(buf, &value, sizeof(U));
  out.append(buf, sizeof(U));
}

void put_array(std::string& out, const std::string& name, const Mat<float>& m) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
  out += name;
  put<std::uint32_t>(out, 2);
  put<std::uint64_t>(out, static_cast<std::uint64_t>(m.rows()));
  put<std::uint64_t>(out, static_cast<std::uint64_t>(m.cols()));
  out.append(reinterpret_cast<const char*>(m.data()), static_cast<std::size_t>(m.size()) * sizeof(float));
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  template <typename U>
  U get() {
    need(sizeof(U));
    U v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(U));
    pos_ += sizeof(U);
    return v;
  }
  std::string_view take(std::size_t n) {
    need(n);
    auto s = bytes_.substr(pos_, n);
    pos_ += n;
    return s;
  }
  bool done() const { return pos_ == bytes_.size(); }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw CheckpointError("truncated checkpoint");
  }
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

std::string serialize_checkpoint(const TrainState& state) {
  const auto& adam = state.optimizer.config();
  const nlohmann::json header{{"format", "ltm-checkpoint"},
                              {"config", to_json(state.config)},
                              {"step", state.optimizer.steps()},
                              {"seed", state.seed},
                              {"adam",
                               {{"beta1", adam.beta1},
                                {"beta2", adam.beta2},
                                {"eps", adam.eps},
                                {"weight_decay", adam.weight_decay}}}};
  const std::string text = header.dump();

  std::string out(kMagic, sizeof(kMagic));
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, text.size());
  out += text;

  std::vector<std::pair<std::string, const Mat<float>*>> arrays;
  state.params.for_each([&](const std::string& name, const Mat<float>& m) { arrays.emplace_back(name, &m); });
  const auto n_params = arrays.size();
  const auto& moments = state.optimizer.moments();
  for (std::size_t i = 0; i < n_params; ++i) {
    const auto it = moments.find(arrays[i].first);
    if (it == moments.end()) continue;
    arrays.emplace_back("adam.m/" + arrays[i].first, &it->second.first);
    arrays.emplace_back("adam.v/" + arrays[i].first, &it->second.second);
  }
  put<std::uint32_t>(out, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& [name, m] : arrays) put_array(out, name, *m);
  return out;
}

TrainState deserialize_checkpoint(std::string_view bytes, const ModelConfig* expected) {
  Reader in(bytes);
  if (in.take(sizeof(kMagic)) != std::string_view(kMagic, sizeof(kMagic))) throw CheckpointError("not a checkpoint file");
  const auto version = in.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
  }
  const auto header_len = in.get<std::uint64_t>();
  const auto header = nlohmann::json::parse(in.take(header_len), nullptr, false);
  if (header.is_discarded() || !header.contains("config")) throw CheckpointError("corrupt checkpoint header");

  TrainState state;
  try {
    state.config = model_config_from_json(header.at("config"));
    state.config.validate();
    const auto& a = header.at("adam");
    state.optimizer = AdamW(AdamWConfig{a.at("beta1").get<double>(), a.at("beta2").get<double>(),
                                        a.at("eps").get<double>(), a.at("weight_decay").get<double>()});
    state.optimizer.set_steps(header.at("step").get<std::int64_t>());
    state.seed = header.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(std::string("corrupt checkpoint header: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(std::string("invalid model config in checkpoint: ") + e.what());
  }
  // Shapes come from the expected config when given, so a mismatch reports
  // the offending array.
  state.params = Parameters<float>::zeros(expected ? *expected : state.config);

  std::map<std::string, Mat<float>*> slots;
  state.params.for_each([&](const std::string& name, Mat<float>& m) { slots.emplace(name, &m); });
  std::map<std::string, bool> seen;

  const auto count = in.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::string name(in.take(in.get<std::uint32_t>()));
    const auto rank = in.get<std::uint32_t>();
    if (rank != 2) throw CheckpointError("array '" + name + "' has rank " + std::to_string(rank));
    const auto rows = static_cast<Eigen::Index>(in.get<std::uint64_t>());
    const auto cols = static_cast<Eigen::Index>(in.get<std::uint64_t>());

    Mat<float>* target = nullptr;
    std::string param_name = name;
    bool is_first = false;
    if (name.starts_with("adam.m/") || name.starts_with("adam.v/")) {
      param_name = name.substr(7);
      is_first = name[5] == 'm';
    }
    const auto slot = slots.find(param_name);
    if (slot == slots.end()) throw CheckpointError("unknown array '" + name + "'");
    if (slot->second->rows() != rows || slot->second->cols() != cols) {
      throw CheckpointError("shape mismatch for '" + name + "': stored " + std::to_string(rows) + "x" +
                            std::to_string(cols) + ", config expects " + std::to_string(slot->second->rows()) + "x" +
                            std::to_string(slot->second->cols()));
    }
    if (param_name == name && !name.starts_with("adam.")) {
      target = slot->second;
    } else {
      auto& mo = state.optimizer.moments()[param_name];
      auto& m = is_first ? mo.first : mo.second;
      m.resize(rows, cols);
      target = &m;
    }
    const auto payload = in.take(static_cast<std::size_t>(rows * cols) * sizeof(float));
    std::memcpy(target->data(), payload.data(), payload.size());
    seen[name] = true;
  }
  for (const auto& [name, m] : slots) {
    if (!seen.count(name)) throw CheckpointError("checkpoint is missing array '" + name + "'");
  }
  if (!in.done()) throw CheckpointError("trailing bytes after checkpoint arrays");
  if (expected && !(state.config == *expected)) throw CheckpointError("checkpoint model config differs from expected");
  return state;
}

void save_checkpoint(const TrainState& state, const std::filesystem::path& path) {
  io::write_text(path, serialize_checkpoint(state));
}

TrainState load_checkpoint(const std::filesystem::path& path) { return load_checkpoint(path, nullptr); }

TrainState load_checkpoint(const std::filesystem::path& path, const ModelConfig* expected) {
  std::string bytes;
  try {
    bytes = io::read_text(path);
  } catch (const IoError& e) {
    throw CheckpointError(e.what());
  }
  return deserialize_checkpoint(bytes, expected);
}

}  // namespace ltm::model
