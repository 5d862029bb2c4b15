#include "bisvp/checkpoint.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include "config_json.hpp"

namespace bisvp::train {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

constexpr std::string_view kMagic = "BSVP1\n";

void append_records(const std::vector<TensorRecord>& records, ordered_json& manifest, std::string& payload) {
  for (const auto& r : records) {
    if (num::shape_numel(r.shape) != r.values.size()) {
      throw CheckpointInconsistent("record '" + r.name + "' shape does not match its value count");
    }
    manifest.push_back(ordered_json{{"name", r.name}, {"shape", r.shape}, {"offset", payload.size()}});
    for (float f : r.values) {
      const auto bits = std::bit_cast<std::uint32_t>(f);
      for (int b = 0; b < 4; ++b) payload.push_back(static_cast<char>((bits >> (8 * b)) & 0xFFu));
    }
  }
}

std::vector<TensorRecord> read_records(const json& list, const std::string& payload, std::size_t& cursor,
                                       const char* what) {
  if (!list.is_array()) throw CheckpointInconsistent(std::string("manifest '") + what + "' must be an array");
  std::vector<TensorRecord> out;
  for (const auto& item : list) {
    TensorRecord r;
    std::size_t offset = 0;
    try {
      r.name = item.at("name").get<std::string>();
      r.shape = item.at("shape").get<num::Shape>();
      offset = item.at("offset").get<std::size_t>();
    } catch (const json::exception& e) {
      throw CheckpointInconsistent(std::string("malformed record in '") + what + "': " + e.what());
    }
    if (offset != cursor) {
      throw CheckpointInconsistent("record '" + r.name + "' offset " + std::to_string(offset) + " is not contiguous (expected " +
                                   std::to_string(cursor) + ")");
    }
    const std::size_t n = num::shape_numel(r.shape);
    if (cursor + 4 * n > payload.size()) {
      throw CheckpointInconsistent("record '" + r.name + "' shape " + num::shape_str(r.shape) + " overruns the payload");
    }
    r.values.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) {
        bits |= static_cast<std::uint32_t>(static_cast<unsigned char>(payload[cursor + 4 * i + b])) << (8 * b);
      }
      r.values[i] = std::bit_cast<float>(bits);
    }
    cursor += 4 * n;
    out.push_back(std::move(r));
  }
  return out;
}

TensorRecord record_of(const std::string& name, const num::Shape& shape, std::span<const double> values) {
  TensorRecord r{name, shape, {}};
  r.values.reserve(values.size());
  for (double v : values) r.values.push_back(static_cast<float>(v));
  return r;
}

void load_params(num::ParamStore& store, const std::vector<TensorRecord>& records) {
  if (records.size() != store.size()) {
    throw CheckpointInconsistent("checkpoint has " + std::to_string(records.size()) + " parameters, model expects " +
                                 std::to_string(store.size()));
  }
  for (std::size_t i = 0; i < records.size(); ++i) {
    auto& e = store.entries()[i];
    const auto& r = records[i];
    if (r.name != e.name || r.shape != e.tensor.shape()) {
      throw CheckpointInconsistent("parameter " + std::to_string(i) + ": checkpoint has '" + r.name + "' " +
                                   num::shape_str(r.shape) + ", model expects '" + e.name + "' " +
                                   num::shape_str(e.tensor.shape()));
    }
    auto w = e.tensor.mutable_data();
    for (std::size_t k = 0; k < w.size(); ++k) w[k] = static_cast<double>(r.values[k]);
  }
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ckpt) {
  ordered_json params = ordered_json::array();
  ordered_json momentum = ordered_json::array();
  std::string payload;
  append_records(ckpt.params, params, payload);
  append_records(ckpt.momentum, momentum, payload);
  ordered_json manifest{{"format_version", kCheckpointVersion},
                        {"train_config", detail::train_config_json(ckpt.config)},
                        {"epoch", ckpt.epoch},
                        {"rng_state", ckpt.rng_state},
                        {"params", params},
                        {"momentum", momentum},
                        {"payload_bytes", payload.size()}};
  std::string out(kMagic);
  out += manifest.dump();
  out += '\n';
  out += payload;
  return out;
}

Checkpoint parse_checkpoint(const std::string& bytes) {
  if (bytes.compare(0, kMagic.size(), kMagic) != 0) throw BadMagic("not a checkpoint: bad magic");
  const std::size_t eol = bytes.find('\n', kMagic.size());
  if (eol == std::string::npos) throw CheckpointInconsistent("checkpoint manifest is not newline-terminated");
  json manifest;
  try {
    manifest = json::parse(bytes.substr(kMagic.size(), eol - kMagic.size()));
  } catch (const json::parse_error& e) {
    throw CheckpointInconsistent(std::string("checkpoint manifest: ") + e.what());
  }
  if (!manifest.is_object() || !manifest.contains("format_version")) {
    throw CheckpointInconsistent("checkpoint manifest lacks format_version");
  }
  const json& version = manifest["format_version"];
  if (!version.is_number_integer() || version.get<int>() != kCheckpointVersion) {
    throw VersionMismatch("checkpoint format version " + version.dump() + ", expected " +
                          std::to_string(kCheckpointVersion));
  }
  const std::string payload = bytes.substr(eol + 1);
  Checkpoint ckpt;
  try {
    ckpt.config = detail::train_config_from(manifest.at("train_config"));
    ckpt.epoch = manifest.at("epoch").get<int>();
    ckpt.rng_state = manifest.at("rng_state").get<std::string>();
  } catch (const json::exception& e) {
    throw CheckpointInconsistent(std::string("checkpoint manifest: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw CheckpointInconsistent(std::string("checkpoint manifest: ") + e.what());
  }
  std::size_t cursor = 0;
  ckpt.params = read_records(manifest.value("params", json()), payload, cursor, "params");
  ckpt.momentum = read_records(manifest.value("momentum", json::array()), payload, cursor, "momentum");
  if (cursor != payload.size() || manifest.value("payload_bytes", payload.size()) != payload.size()) {
    throw CheckpointInconsistent("checkpoint payload is " + std::to_string(payload.size()) + " bytes, records cover " +
                                 std::to_string(cursor));
  }
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  const std::string bytes = serialize_checkpoint(ckpt);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("failed writing '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open checkpoint '" + path.string() + "'");
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_checkpoint(ss.str());
}

Checkpoint make_checkpoint(const TrainState& state, const TrainConfig& cfg) {
  Checkpoint ckpt;
  ckpt.config = cfg;
  ckpt.epoch = state.epoch;
  ckpt.rng_state = state.shuffle_rng.state();
  for (const auto& e : state.model.params().entries()) {
    ckpt.params.push_back(record_of(e.name, e.tensor.shape(), e.tensor.data()));
  }
  for (const auto& [name, v] : state.sgd.velocity) {
    ckpt.momentum.push_back(record_of(name, {v.size()}, v));
  }
  return ckpt;
}

model::BisvpModel model_from_checkpoint(const Checkpoint& ckpt) {
  model::BisvpModel m(ckpt.config.model, ckpt.config.seed);
  load_params(m.params(), ckpt.params);
  return m;
}

TrainState state_from_checkpoint(const Checkpoint& ckpt) {
  TrainState state(ckpt.config);
  load_params(state.model.params(), ckpt.params);
  for (const auto& r : ckpt.momentum) {
    if (!state.model.params().contains(r.name)) {
      throw CheckpointInconsistent("momentum buffer for unknown parameter '" + r.name + "'");
    }
    state.sgd.velocity[r.name].assign(r.values.begin(), r.values.end());
  }
  state.epoch = ckpt.epoch;
  state.shuffle_rng.restore(ckpt.rng_state);
  return state;
}

}  // namespace bisvp::train
