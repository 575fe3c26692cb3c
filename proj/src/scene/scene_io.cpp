#include "qcomp/scene/scene_io.hpp"

#include <algorithm>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "qcomp/errors.hpp"

namespace qcomp::scene {

using nlohmann::json;

std::string scene_to_json(const Scene& s) {
  std::ostringstream os;
  os << "{\n\"version\": " << kSceneFormatVersion << ",\n\"seed\": " << s.seed << ",\n\"points\": [\n";
  for (std::size_t i = 0; i < s.points.rows(); ++i) {
    json row = json::array();
    for (std::size_t k = 0; k < 6; ++k) row.push_back(s.points(i, k));
    os << row.dump() << (i + 1 < s.points.rows() ? ",\n" : "\n");
  }
  os << "],\n\"superpoint_id\": " << json(s.superpoint_id).dump() << ",\n\"instances\": [\n";
  for (std::size_t g = 0; g < s.gt_semantic.size(); ++g) {
    std::vector<std::size_t> pools;
    for (std::size_t p = 0; p < s.gt_masks.cols; ++p) {
      if (s.gt_masks(g, p)) pools.push_back(p);
    }
    json inst;
    inst["semantic"] = s.gt_semantic[g];
    inst["pool_mask"] = pools;
    os << inst.dump() << (g + 1 < s.gt_semantic.size() ? ",\n" : "\n");
  }
  os << "]\n}\n";
  return os.str();
}

namespace {

[[noreturn]] void field_error(const std::string& field, const std::string& why) {
  throw ParseError("scene field " + field + ": " + why);
}

const json& require(const json& obj, const char* key) {
  if (!obj.is_object()) field_error("<root>", "expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) field_error(key, "missing");
  return *it;
}

std::size_t as_index(const json& v, const std::string& field) {
  if (!v.is_number_integer() || v.get<long long>() < 0) field_error(field, "expected a non-negative integer");
  return v.get<std::size_t>();
}

}  // namespace

Scene scene_from_json(const std::string& text) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    const std::size_t upto = std::min<std::size_t>(e.byte, text.size());
    const std::size_t line = 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + upto, '\n'));
    throw ParseError("scene parse error at line " + std::to_string(line) + ": " + e.what());
  }

  const json& version = require(doc, "version");
  if (!version.is_number_integer()) field_error("version", "expected an integer");
  if (version.get<long long>() != kSceneFormatVersion) {
    throw VersionError("unsupported scene version " + version.dump() + " (supported: " +
                       std::to_string(kSceneFormatVersion) + ")");
  }

  Scene s;
  const json& seed = require(doc, "seed");
  if (!seed.is_number_unsigned() && !(seed.is_number_integer() && seed.get<long long>() >= 0)) {
    field_error("seed", "expected a non-negative integer");
  }
  s.seed = seed.get<std::uint64_t>();

  const json& points = require(doc, "points");
  if (!points.is_array() || points.empty()) field_error("points", "expected a non-empty array");
  const std::size_t n = points.size();
  std::vector<double> data;
  data.reserve(n * 6);
  for (std::size_t i = 0; i < n; ++i) {
    const json& row = points[i];
    const std::string where = "points[" + std::to_string(i) + "]";
    if (!row.is_array() || row.size() != 6) field_error(where, "expected [x,y,z,r,g,b]");
    for (std::size_t k = 0; k < 6; ++k) {
      if (!row[k].is_number()) field_error(where + "[" + std::to_string(k) + "]", "expected a number");
      data.push_back(row[k].get<double>());
    }
  }
  s.points = Tensor({n, 6}, std::move(data));

  const json& ids = require(doc, "superpoint_id");
  if (!ids.is_array() || ids.size() != n) field_error("superpoint_id", "expected one id per point");
  s.superpoint_id.reserve(n);
  std::size_t m = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t id = as_index(ids[i], "superpoint_id[" + std::to_string(i) + "]");
    s.superpoint_id.push_back(id);
    m = std::max(m, id + 1);
  }
  s.superpoint_count = m;
  std::vector<std::uint8_t> seen(m, 0);
  for (auto id : s.superpoint_id) seen[id] = 1;
  for (std::size_t p = 0; p < m; ++p) {
    if (!seen[p]) field_error("superpoint_id", "superpoint " + std::to_string(p) + " has no points");
  }

  const json& instances = require(doc, "instances");
  if (!instances.is_array() || instances.empty()) field_error("instances", "expected a non-empty array");
  s.gt_masks = BinaryMasks(instances.size(), m);
  for (std::size_t g = 0; g < instances.size(); ++g) {
    const std::string where = "instances[" + std::to_string(g) + "]";
    const json& inst = instances[g];
    if (!inst.is_object()) field_error(where, "expected an object");
    const json& sem = require(inst, "semantic");
    s.gt_semantic.push_back(static_cast<int>(as_index(sem, where + ".semantic")));
    const json& pools = require(inst, "pool_mask");
    if (!pools.is_array() || pools.empty()) field_error(where + ".pool_mask", "expected a non-empty array");
    for (std::size_t k = 0; k < pools.size(); ++k) {
      const std::size_t p = as_index(pools[k], where + ".pool_mask[" + std::to_string(k) + "]");
      if (p >= m) field_error(where + ".pool_mask[" + std::to_string(k) + "]", "pool id out of range");
      s.gt_masks.set(g, p, true);
    }
  }
  return s;
}

void save_scene(const Scene& s, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << scene_to_json(s);
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

Scene load_scene(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return scene_from_json(buf.str());
  } catch (const VersionError& e) {
    throw VersionError(path.string() + ": " + e.what());
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

}  // namespace qcomp::scene
