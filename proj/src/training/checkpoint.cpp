#include "qcomp/training/checkpoint.hpp"

#include <fstream>
#include <json.hpp>
#include <sstream>

#include "qcomp/errors.hpp"

namespace qcomp::training {

using nlohmann::json;

namespace {

json metrics_object(const EpochMetrics& m) {
  json j = {{"epoch", m.epoch},
            {"loss_total", m.loss_total},
            {"loss_cls", m.loss_cls},
            {"loss_mask", m.loss_mask},
            {"loss_iou", m.loss_iou}};
  if (m.map50_val) j["map50_val"] = *m.map50_val;
  return j;
}

json tensor_object(const Tensor& t) {
  return {{"shape", t.shape()}, {"values", std::vector<double>(t.values().begin(), t.values().end())}};
}

Tensor tensor_from(const json& j, const Shape& expected, const std::string& what) {
  Shape shape = j.at("shape").get<Shape>();
  if (shape != expected) throw CheckpointError("checkpoint: shape mismatch for " + what);
  const auto values = j.at("values").get<std::vector<double>>();
  Tensor t(shape);
  if (values.size() != t.size()) throw CheckpointError("checkpoint: value count mismatch for " + what);
  std::copy(values.begin(), values.end(), t.values().begin());
  return t;
}

}  // namespace

std::string metrics_json(const EpochMetrics& m) { return metrics_object(m).dump(); }

void save_checkpoint(const TrainState& state, const std::string& config_hash, const std::filesystem::path& path) {
  const ParameterSet& p = state.model.params;
  json params = json::array();
  json moments = json::array();
  for (std::size_t i = 0; i < p.size(); ++i) {
    json entry = tensor_object(p.value(i));
    entry["name"] = p.name(i);
    params.push_back(std::move(entry));
    moments.push_back({{"m", tensor_object(state.adam.m[i])}, {"v", tensor_object(state.adam.v[i])}});
  }
  json log = json::array();
  for (const EpochMetrics& m : state.log) log.push_back(metrics_object(m));
  const json doc = {{"schema", "qcomp.checkpoint"},
                    {"version", kCheckpointVersion},
                    {"config_hash", config_hash},
                    {"epochs_done", state.epochs_done},
                    {"adam_step", state.adam.step},
                    {"params", std::move(params)},
                    {"moments", std::move(moments)},
                    {"log", std::move(log)}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint " + path.string());
  out << doc.dump() << '\n';
  if (!out) throw CheckpointError("failed writing checkpoint " + path.string());
}

TrainState load_checkpoint(const std::filesystem::path& path, decoder::Model model, const std::string& config_hash) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot read checkpoint " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  json doc;
  try {
    doc = json::parse(buf.str());
  } catch (const json::exception& e) {
    throw CheckpointError("checkpoint " + path.string() + " is not valid JSON: " + e.what());
  }
  try {
    if (doc.at("schema") != "qcomp.checkpoint") throw CheckpointError("checkpoint: unknown schema");
    if (doc.at("version") != kCheckpointVersion) {
      throw CheckpointError("checkpoint: unsupported version " + doc.at("version").dump());
    }
    const std::string stored = doc.at("config_hash").get<std::string>();
    if (stored != config_hash) {
      throw CheckpointError("checkpoint config hash " + stored + " does not match the run config hash " + config_hash);
    }
    TrainState state = initial_state(std::move(model));
    ParameterSet& p = state.model.params;
    const json& params = doc.at("params");
    const json& moments = doc.at("moments");
    if (params.size() != p.size() || moments.size() != p.size()) {
      throw CheckpointError("checkpoint: parameter count mismatch");
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      const std::string& name = p.name(i);
      if (params[i].at("name") != name) throw CheckpointError("checkpoint: expected parameter " + name);
      p.value(i) = tensor_from(params[i], p.value(i).shape(), name);
      state.adam.m[i] = tensor_from(moments[i].at("m"), p.value(i).shape(), name + " (m)");
      state.adam.v[i] = tensor_from(moments[i].at("v"), p.value(i).shape(), name + " (v)");
    }
    state.adam.step = doc.at("adam_step").get<std::uint64_t>();
    state.epochs_done = doc.at("epochs_done").get<std::size_t>();
    for (const json& m : doc.at("log")) {
      EpochMetrics e;
      e.epoch = m.at("epoch").get<std::size_t>();
      e.loss_total = m.at("loss_total").get<double>();
      e.loss_cls = m.at("loss_cls").get<double>();
      e.loss_mask = m.at("loss_mask").get<double>();
      e.loss_iou = m.at("loss_iou").get<double>();
      if (m.contains("map50_val")) e.map50_val = m.at("map50_val").get<double>();
      state.log.push_back(e);
    }
    return state;
  } catch (const json::exception& e) {
    throw CheckpointError("checkpoint " + path.string() + " is malformed: " + e.what());
  }
}

}  // namespace qcomp::training
