#ifndef TPI_CHECKPOINT_HPP_
#define TPI_CHECKPOINT_HPP_

#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "tpi/trainer.hpp"

namespace tpi {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
/// File is unreadable, truncated, or fails its checksum.
class CheckpointIntegrityError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
/// File was written by a different checkpoint format version.
class CheckpointVersionError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};
class CheckpointIoError : public CheckpointError {
 public:
  using CheckpointError::CheckpointError;
};

inline constexpr const char* kCheckpointFormat = "tpi-checkpoint";
inline constexpr int kCheckpointVersion = 1;

using json = nlohmann::json;

namespace ckpt {

inline std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

// Doubles are stored as JSON numbers; the writer emits shortest round-trip
// representations, so values restore bit-exactly.
inline json to_json(const Vec& v) { return json(std::vector<double>(v.data(), v.data() + v.size())); }

inline Vec vec_from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Vec>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline json to_json(const Mat& m) {
  return {{"rows", m.rows()}, {"cols", m.cols()},
          {"data", std::vector<double>(m.data(), m.data() + m.size())}};
}

inline Mat mat_from_json(const json& j) {
  const auto rows = j.at("rows").get<Eigen::Index>();
  const auto cols = j.at("cols").get<Eigen::Index>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (static_cast<Eigen::Index>(data.size()) != rows * cols) {
    throw CheckpointIntegrityError("matrix payload size mismatch");
  }
  return Eigen::Map<const Mat>(data.data(), rows, cols);
}

inline json to_json(const ParamLayout& l) {
  json out = json::array();
  for (const auto& s : l.segments) out.push_back({{"name", s.name}, {"rows", s.rows}, {"cols", s.cols}});
  return out;
}

inline ParamLayout layout_from_json(const json& j) {
  ParamLayout l;
  for (const auto& s : j) {
    l.segments.push_back({s.at("name").get<std::string>(), s.at("rows").get<int>(),
                          s.at("cols").get<int>()});
  }
  return l;
}

inline json to_json(const ParamVector& p) {
  return {{"layout", to_json(p.layout)}, {"values", to_json(p.values)}};
}

inline ParamVector params_from_json(const json& j) {
  return ParamVector(layout_from_json(j.at("layout")), vec_from_json(j.at("values")));
}

inline json to_json(const AdamState& s) {
  return {{"m", to_json(s.m)}, {"v", to_json(s.v)}, {"t", s.t}};
}

inline AdamState adam_from_json(const json& j) {
  return {vec_from_json(j.at("m")), vec_from_json(j.at("v")), j.at("t").get<long>()};
}

}  // namespace ckpt

inline json params_to_json(const Snapshot& s) {
  return {{"value", ckpt::to_json(s.value)},
          {"control", ckpt::to_json(s.control)},
          {"disturbance", ckpt::to_json(s.disturbance)}};
}

inline Snapshot params_from_json(const json& j) {
  return {ckpt::params_from_json(j.at("value")), ckpt::params_from_json(j.at("control")),
          ckpt::params_from_json(j.at("disturbance"))};
}

inline json trainer_to_json(const Trainer& t) {
  const Trainer::Saved s = t.save();
  json pool = {{"states", ckpt::to_json(s.pool.states)},
               {"ages", s.pool.ages},
               {"rngs", s.pool.rngs},
               {"resets", s.pool.resets}};
  json replay = json::array();
  for (const auto& m : s.pool.replay) replay.push_back(ckpt::to_json(m));
  pool["replay"] = replay;
  json log = json::array();
  for (const auto& r : s.log.rows) {
    log.push_back({{"iter", r.iter}, {"loss_value", r.loss_value},
                   {"loss_control", r.loss_control}, {"theta", ckpt::to_json(r.theta)},
                   {"lr", {r.lr_omega, r.lr_theta, r.lr_eta}}, {"wall_ms", r.wall_ms}});
  }
  return {{"iteration", s.k},
          {"stopped_early", s.stopped_early},
          {"params", params_to_json(s.snap)},
          {"optimizer",
           {{"value", ckpt::to_json(s.opt_value)},
            {"control", ckpt::to_json(s.opt_control)},
            {"disturbance", ckpt::to_json(s.opt_disturbance)}}},
          {"pool", pool},
          {"batch_rng", s.batch_rng},
          {"log", log}};
}

inline void trainer_from_json(Trainer& t, const json& j) {
  Trainer::Saved s;
  s.k = j.at("iteration").get<long>();
  s.stopped_early = j.at("stopped_early").get<bool>();
  s.snap = params_from_json(j.at("params"));
  const auto& o = j.at("optimizer");
  s.opt_value = ckpt::adam_from_json(o.at("value"));
  s.opt_control = ckpt::adam_from_json(o.at("control"));
  s.opt_disturbance = ckpt::adam_from_json(o.at("disturbance"));
  const auto& p = j.at("pool");
  s.pool.states = ckpt::mat_from_json(p.at("states"));
  s.pool.ages = p.at("ages").get<std::vector<long>>();
  s.pool.rngs = p.at("rngs").get<std::vector<std::string>>();
  s.pool.resets = p.at("resets").get<long>();
  for (const auto& m : p.at("replay")) s.pool.replay.push_back(ckpt::mat_from_json(m));
  s.batch_rng = j.at("batch_rng").get<std::string>();
  for (const auto& r : j.at("log")) {
    TrainLogRow row;
    row.iter = r.at("iter").get<long>();
    row.loss_value = r.at("loss_value").get<double>();
    row.loss_control = r.at("loss_control").get<double>();
    row.theta = ckpt::vec_from_json(r.at("theta"));
    const auto lr = r.at("lr").get<std::vector<double>>();
    row.lr_omega = lr.at(0);
    row.lr_theta = lr.at(1);
    row.lr_eta = lr.at(2);
    row.wall_ms = r.at("wall_ms").get<double>();
    s.log.rows.push_back(std::move(row));
  }
  t.load(s);
}

/// Wraps a payload with format/version headers and a checksum.
inline std::string seal_checkpoint(const json& payload) {
  const std::string body = payload.dump();
  json doc = {{"format", kCheckpointFormat},
              {"version", kCheckpointVersion},
              {"checksum", ckpt::hex64(ckpt::fnv1a(body))},
              {"payload", payload}};
  return doc.dump(1);
}

/// Inverse of seal_checkpoint; throws on any integrity or version problem.
inline json open_checkpoint(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& e) {
    throw CheckpointIntegrityError(std::string("checkpoint is not valid JSON: ") + e.what());
  }
  if (!doc.is_object() || doc.value("format", "") != kCheckpointFormat) {
    throw CheckpointIntegrityError("not a tpi checkpoint");
  }
  if (!doc.contains("version") || !doc["version"].is_number_integer()) {
    throw CheckpointIntegrityError("checkpoint has no version");
  }
  const int version = doc["version"].get<int>();
  if (version != kCheckpointVersion) {
    throw CheckpointVersionError("checkpoint version " + std::to_string(version) +
                                 " is not supported (expected " +
                                 std::to_string(kCheckpointVersion) + ")");
  }
  if (!doc.contains("payload") || !doc.contains("checksum")) {
    throw CheckpointIntegrityError("checkpoint is missing payload or checksum");
  }
  const std::string expect = doc["checksum"].get<std::string>();
  if (ckpt::hex64(ckpt::fnv1a(doc["payload"].dump())) != expect) {
    throw CheckpointIntegrityError("checkpoint checksum mismatch");
  }
  return doc["payload"];
}

inline void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointIoError("cannot open '" + path + "' for writing");
  out << text;
  if (!out) throw CheckpointIoError("write to '" + path + "' failed");
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointIoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Persists the full trainer state; `config` is stored alongside so the run
/// can be rebuilt on restore.
inline void save_checkpoint(const std::string& path, const Trainer& t, const json& config) {
  json payload = {{"config", config}, {"trainer", trainer_to_json(t)}};
  write_text_file(path, seal_checkpoint(payload));
}

inline json load_checkpoint_payload(const std::string& path) {
  return open_checkpoint(read_text_file(path));
}

inline void restore_trainer(Trainer& t, const json& payload) {
  try {
    trainer_from_json(t, payload.at("trainer"));
  } catch (const json::exception& e) {
    throw CheckpointIntegrityError(std::string("malformed checkpoint payload: ") + e.what());
  } catch (const UsageError& e) {
    throw CheckpointIntegrityError(std::string("checkpoint does not fit this run: ") + e.what());
  }
}

}  // namespace tpi

#endif  // TPI_CHECKPOINT_HPP_
