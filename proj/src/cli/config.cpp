#include "qcomp/cli/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>

#include "qcomp/errors.hpp"

namespace qcomp::cli {

namespace {

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const char* expected) {
  throw ConfigError(key + ": expected " + expected + ", got '" + value + "'");
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size() || v.empty()) bad_value(key, v, "a non-negative integer");
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  std::istringstream is(v);
  is.imbue(std::locale::classic());
  double out = 0.0;
  is >> out;
  if (!is || !is.eof()) bad_value(key, v, "a number");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "true or false");
}

std::string fmt(double v) {
  std::ostringstream os;
  os.imbue(std::locale::classic());
  os << std::setprecision(17) << v;
  return os.str();
}

std::string fmt(bool v) { return v ? "true" : "false"; }

template <typename T>
std::string fmt_int(T v) {
  return std::to_string(v);
}

#define QCOMP_SIZE(name, member)                                                                   \
  Field {                                                                                          \
    name, [](const RunConfig& c) { return fmt_int(c.member); },                                    \
        [](RunConfig& c, const std::string& v) { c.member = static_cast<std::size_t>(parse_u64(name, v)); } \
  }
#define QCOMP_U64(name, member)                                                 \
  Field {                                                                       \
    name, [](const RunConfig& c) { return fmt_int(c.member); },                 \
        [](RunConfig& c, const std::string& v) { c.member = parse_u64(name, v); } \
  }
#define QCOMP_REAL(name, member)                                                   \
  Field {                                                                          \
    name, [](const RunConfig& c) { return fmt(c.member); },                        \
        [](RunConfig& c, const std::string& v) { c.member = parse_double(name, v); } \
  }
#define QCOMP_BOOL(name, member)                                                 \
  Field {                                                                        \
    name, [](const RunConfig& c) { return fmt(c.member); },                      \
        [](RunConfig& c, const std::string& v) { c.member = parse_bool(name, v); } \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      QCOMP_SIZE("scene.instances_min", scene.instances_min),
      QCOMP_SIZE("scene.instances_max", scene.instances_max),
      QCOMP_SIZE("scene.points_min", scene.points_min),
      QCOMP_SIZE("scene.points_max", scene.points_max),
      QCOMP_REAL("scene.extent", scene.extent),
      QCOMP_REAL("scene.sigma", scene.sigma),
      QCOMP_REAL("scene.separation", scene.separation),
      QCOMP_REAL("scene.voxel_size", scene.voxel_size),
      QCOMP_SIZE("scene.classes", scene.classes),
      QCOMP_SIZE("scene.background_points", scene.background_points),
      QCOMP_REAL("scene.color_noise", scene.color_noise),
      QCOMP_SIZE("data.train_scenes", data.train_scenes),
      QCOMP_SIZE("data.val_scenes", data.val_scenes),
      QCOMP_U64("data.seed", data.seed),
      Field{"data.dir", [](const RunConfig& c) { return c.data.dir; },
            [](RunConfig& c, const std::string& v) { c.data.dir = v; }},
      QCOMP_SIZE("decoder.layers", decoder.layers),
      QCOMP_SIZE("decoder.queries", decoder.queries),
      QCOMP_SIZE("decoder.dim", decoder.dim),
      QCOMP_SIZE("decoder.heads", decoder.heads),
      QCOMP_SIZE("decoder.head_dim", decoder.head_dim),
      QCOMP_SIZE("decoder.point_dim", decoder.point_dim),
      QCOMP_SIZE("decoder.ffn_hidden", decoder.ffn_hidden),
      QCOMP_REAL("decoder.mask_threshold", decoder.mask_threshold),
      QCOMP_REAL("competition.quant_step", competition.quant_step),
      Field{"competition.table_size", [](const RunConfig& c) { return fmt_int(c.competition.table_size); },
            [](RunConfig& c, const std::string& v) {
              const std::uint64_t y = parse_u64("competition.table_size", v);
              if (y > 1u << 20) bad_value("competition.table_size", v, "a table size below 2^20");
              c.competition.table_size = static_cast<int>(y);
            }},
      Field{"competition.fusion",
            [](const RunConfig& c) {
              return std::string(c.competition.fusion == competition::FusionShape::kMlp ? "mlp" : "linear");
            },
            [](RunConfig& c, const std::string& v) {
              if (v == "mlp") {
                c.competition.fusion = competition::FusionShape::kMlp;
              } else if (v == "linear") {
                c.competition.fusion = competition::FusionShape::kLinear;
              } else {
                bad_value("competition.fusion", v, "mlp or linear");
              }
            }},
      QCOMP_SIZE("train.epochs", train.epochs),
      QCOMP_SIZE("train.batch_size", train.batch_size),
      QCOMP_REAL("train.lr", train.adam.lr),
      QCOMP_REAL("train.beta1", train.adam.beta1),
      QCOMP_REAL("train.beta2", train.adam.beta2),
      QCOMP_REAL("train.eps", train.adam.eps),
      QCOMP_REAL("train.weight_decay", train.adam.weight_decay),
      QCOMP_U64("train.seed", train.seed),
      QCOMP_BOOL("train.deep_supervision", train.deep_supervision),
      QCOMP_SIZE("train.eval_every", train.eval_every),
      QCOMP_BOOL("toggles.qcl", train.toggles.qcl),
      QCOMP_BOOL("toggles.rre", train.toggles.rre),
      QCOMP_BOOL("toggles.rca", train.toggles.rca),
      QCOMP_REAL("loss.cls", train.loss.cls),
      QCOMP_REAL("loss.bce", train.loss.bce),
      QCOMP_REAL("loss.dice", train.loss.dice),
      QCOMP_REAL("loss.iou", train.loss.iou),
      QCOMP_REAL("loss.no_object", train.loss.no_object),
  };
  return table;
}

#undef QCOMP_SIZE
#undef QCOMP_U64
#undef QCOMP_REAL
#undef QCOMP_BOOL

std::string serialize(const RunConfig& cfg, const std::function<bool(const std::string&)>& keep) {
  std::string out;
  for (const Field& f : fields()) {
    if (keep(f.key)) out += f.key + " = " + f.get(cfg) + "\n";
  }
  return out;
}

}  // namespace

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const Field& f : fields()) keys.push_back(f.key);
  keys.emplace_back("train.mode");
  return keys;
}

void validate(const RunConfig& cfg) {
  scene::validate(cfg.scene);
  decoder::validate(cfg.decoder);
  competition::validate(cfg.competition);
  training::validate(cfg.train);
  if (cfg.data.train_scenes < 1) throw ConfigError("data.train_scenes: must be positive");
  if (cfg.decoder.classes != cfg.scene.classes) {
    throw ConfigError("scene.classes: must equal the decoder class count");
  }
}

RunConfig parse_config(const std::string& text) {
  std::map<std::string, const Field*> by_key;
  for (const Field& f : fields()) by_key[f.key] = &f;
  std::map<std::string, std::pair<std::string, std::size_t>> given;
  std::istringstream in(text);
  std::string raw;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key != "train.mode" && !by_key.count(key)) {
      throw ConfigError(key + ": unknown key (line " + std::to_string(line_no) + ")");
    }
    if (!given.emplace(key, std::make_pair(value, line_no)).second) {
      throw ConfigError(key + ": given twice (line " + std::to_string(line_no) + ")");
    }
  }
  RunConfig cfg;
  if (const auto it = given.find("train.mode"); it != given.end()) {
    if (it->second.first == "baseline") {
      cfg.train.toggles = decoder::Toggles::baseline();
    } else if (it->second.first == "competitor") {
      cfg.train.toggles = decoder::Toggles::full();
    } else {
      bad_value("train.mode", it->second.first, "baseline or competitor");
    }
  }
  for (const auto& [key, entry] : given) {
    if (key != "train.mode") by_key.at(key)->set(cfg, entry.first);
  }
  cfg.decoder.classes = cfg.scene.classes;
  validate(cfg);
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string to_text(const RunConfig& cfg) {
  return serialize(cfg, [](const std::string&) { return true; });
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

std::string config_hash(const RunConfig& cfg) {
  return fnv1a_hex(serialize(cfg, [](const std::string& k) { return k != "data.dir" && k != "train.epochs"; }));
}

std::string data_hash(const RunConfig& cfg) {
  return fnv1a_hex(serialize(cfg, [](const std::string& k) {
    return (k.rfind("scene.", 0) == 0 || k.rfind("data.", 0) == 0) && k != "data.dir";
  }));
}

}  // namespace qcomp::cli
