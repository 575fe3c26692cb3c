#include "qcomp/cli/commands.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <sstream>

#include "qcomp/errors.hpp"
#include "qcomp/scene/scene_io.hpp"
#include "qcomp/training/checkpoint.hpp"

namespace qcomp::cli {

using nlohmann::ordered_json;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
  if (!out) throw std::runtime_error("failed writing " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string scene_file(bool val, std::size_t i) {
  std::ostringstream os;
  os << (val ? "val" : "train") << "/scene_" << std::setw(4) << std::setfill('0') << i << ".json";
  return os.str();
}

ordered_json optional_number(const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); }

ordered_json ap_json(const eval::APResult& r) {
  ordered_json per_class = ordered_json::array();
  for (std::size_t c = 0; c < r.ap.size(); ++c) {
    ordered_json ap = ordered_json::array();
    for (const auto& v : r.ap[c]) ap.push_back(optional_number(v));
    per_class.push_back({{"class", c},
                         {"mAP", optional_number(r.class_map[c])},
                         {"AP50", optional_number(r.ap[c][0])},
                         {"AP25", optional_number(r.ap25[c])},
                         {"ap_by_threshold", ap}});
  }
  return {{"mAP", r.map}, {"mAP50", r.map50}, {"mAP25", r.map25}, {"thresholds", r.thresholds},
          {"per_class", per_class}};
}

std::string metrics_lines(const training::TrainState& state, const std::string& hash) {
  std::string out;
  for (const training::EpochMetrics& m : state.log) {
    ordered_json j = {{"schema", kMetricsSchema},
                      {"config_hash", hash},
                      {"epoch", m.epoch},
                      {"loss_total", m.loss_total},
                      {"loss_cls", m.loss_cls},
                      {"loss_mask", m.loss_mask},
                      {"loss_iou", m.loss_iou}};
    if (m.map50_val) j["map50_val"] = *m.map50_val;
    out += j.dump() + "\n";
  }
  return out;
}

decoder::Model fresh_model(const RunConfig& cfg) {
  return decoder::init_model(cfg.decoder, cfg.competition, cfg.train.seed);
}

decoder::Model trained_model(const RunConfig& cfg, const fs::path& checkpoint) {
  return training::load_checkpoint(checkpoint, fresh_model(cfg), config_hash(cfg)).model;
}

}  // namespace

std::uint64_t scene_seed(const DataConfig& data, bool val, std::size_t index) {
  return data.seed * 1000003ull + (val ? 500000ull : 0ull) + index;
}

std::vector<std::string> cmd_gen_data(const RunConfig& cfg, const fs::path& dir) {
  validate(cfg);
  fs::create_directories(dir / "train");
  fs::create_directories(dir / "val");
  ordered_json splits = ordered_json::object();
  std::vector<std::string> files;
  for (const bool val : {false, true}) {
    const std::size_t count = val ? cfg.data.val_scenes : cfg.data.train_scenes;
    ordered_json entries = ordered_json::array();
    for (std::size_t i = 0; i < count; ++i) {
      const std::uint64_t seed = scene_seed(cfg.data, val, i);
      const scene::Scene s = scene::generate_scene(cfg.scene, seed).scene;
      const std::string name = scene_file(val, i);
      scene::save_scene(s, dir / name);
      files.push_back(name);
      entries.push_back({{"file", name},
                         {"seed", seed},
                         {"points", s.point_count()},
                         {"superpoints", s.superpoint_count},
                         {"instances", s.instance_count()}});
    }
    splits[val ? "val" : "train"] = entries;
  }
  const ordered_json manifest = {{"schema", kManifestSchema},
                                 {"config_hash", config_hash(cfg)},
                                 {"data_hash", data_hash(cfg)},
                                 {"splits", splits}};
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
  return files;
}

std::vector<scene::Scene> load_split(const RunConfig& cfg, const fs::path& dir, const std::string& split) {
  const fs::path manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) {
    throw std::runtime_error("no dataset at " + dir.string() + " (manifest.json missing; run gen-data first)");
  }
  const ordered_json manifest = ordered_json::parse(read_text(manifest_path));
  if (manifest.value("schema", "") != kManifestSchema) throw ParseError("manifest: unknown schema");
  if (manifest.at("data_hash") != data_hash(cfg)) {
    throw ConfigError("data.dir: dataset at " + dir.string() + " was generated from a different scene/data config");
  }
  std::vector<scene::Scene> scenes;
  for (const auto& entry : manifest.at("splits").at(split)) {
    scenes.push_back(scene::load_scene(dir / entry.at("file").get<std::string>()));
  }
  return scenes;
}

training::TrainState cmd_train(const RunConfig& cfg, const fs::path& data_dir, const fs::path& out,
                               const std::optional<fs::path>& resume) {
  validate(cfg);
  const std::vector<scene::Scene> train_set = load_split(cfg, data_dir, "train");
  const std::vector<scene::Scene> val_set = load_split(cfg, data_dir, "val");
  if (train_set.empty()) throw ContractError("the training split is empty");
  const std::string hash = config_hash(cfg);
  training::TrainState state =
      resume ? training::load_checkpoint(*resume, fresh_model(cfg), hash) : training::initial_state(fresh_model(cfg));
  fs::create_directories(out);
  const fs::path checkpoint = out / "checkpoint.json";
  const training::EvalHook eval_hook = [&](const decoder::Model& m, std::size_t) -> std::optional<double> {
    if (val_set.empty()) return std::nullopt;
    return eval::map_suite(eval::predict(m, val_set, cfg.train.toggles), cfg.decoder.classes).map50;
  };
  const training::EpochHook on_epoch = [&](const training::TrainState& s) {
    write_text(out / "metrics.jsonl", metrics_lines(s, hash));
    if (s.log.back().map50_val) training::save_checkpoint(s, hash, checkpoint);
    return true;
  };
  training::train(state, train_set, cfg.train, eval_hook, on_epoch);
  write_text(out / "metrics.jsonl", metrics_lines(state, hash));
  training::save_checkpoint(state, hash, checkpoint);
  return state;
}

EvalReport cmd_eval(const RunConfig& cfg, const fs::path& data_dir, const fs::path& checkpoint, const fs::path& out,
                    const std::string& split) {
  validate(cfg);
  const decoder::Model model = trained_model(cfg, checkpoint);
  const std::vector<scene::Scene> scenes = load_split(cfg, data_dir, split);
  EvalReport report;
  report.ap = eval::map_suite(eval::predict(model, scenes, cfg.train.toggles), cfg.decoder.classes);
  ordered_json doc = {{"schema", kEvalSchema}, {"config_hash", config_hash(cfg)}, {"split", split},
                      {"scenes", scenes.size()}};
  const ordered_json ap = ap_json(report.ap);
  for (const auto& [k, v] : ap.items()) doc[k] = v;
  report.json = doc.dump(2) + "\n";
  write_text(out / "eval.json", report.json);
  return report;
}

std::vector<double> analysis_taus() { return {0.1, 0.25, 0.5, 0.75}; }

AnalysisSummary cmd_analyze(const RunConfig& cfg, const fs::path& data_dir, const fs::path& checkpoint,
                            const fs::path& out, const std::string& split) {
  validate(cfg);
  const decoder::Model model = trained_model(cfg, checkpoint);
  const std::vector<eval::SceneLayers> layers =
      eval::layer_predictions(model, load_split(cfg, data_dir, split), cfg.train.toggles);
  const std::vector<double> taus = analysis_taus();
  const eval::CompetitionStats stats = eval::competing_query_stats(layers, taus, cfg.decoder.mask_threshold);
  const eval::ScorePopulations pop = eval::score_populations(layers);
  const std::string hash = config_hash(cfg);
  write_text(out / "competition_stats.csv", eval::competition_stats_csv(stats, taus, hash));
  std::vector<std::pair<std::string, eval::CdfSeries>> series;
  for (const auto& [name, values] : {std::pair{"matched_cls", &pop.matched_cls}, std::pair{"unmatched_cls", &pop.unmatched_cls},
                                     std::pair{"matched_iou", &pop.matched_iou}, std::pair{"unmatched_iou", &pop.unmatched_iou}}) {
    if (!values->empty()) series.emplace_back(name, eval::score_cdf(*values));
  }
  write_text(out / "score_cdf.csv", eval::cdf_csv(series, hash));
  AnalysisSummary s;
  s.competing_final_tau50 = stats.empty() ? 0.0 : stats.back()[2];
  s.matched_cls = eval::mean(pop.matched_cls);
  s.unmatched_cls = eval::mean(pop.unmatched_cls);
  s.matched_iou = eval::mean(pop.matched_iou);
  s.unmatched_iou = eval::mean(pop.unmatched_iou);
  const ordered_json doc = {{"schema", kAnalysisSchema},
                            {"config_hash", hash},
                            {"split", split},
                            {"competing_query_definition", "max(0, #{q : IoU(q, g) > tau} - 1), mean over gt"},
                            {"competing_final_tau50", s.competing_final_tau50},
                            {"mean_matched_cls", s.matched_cls},
                            {"mean_unmatched_cls", s.unmatched_cls},
                            {"mean_matched_iou", s.matched_iou},
                            {"mean_unmatched_iou", s.unmatched_iou},
                            {"matched_queries", pop.matched_cls.size()},
                            {"unmatched_queries", pop.unmatched_cls.size()}};
  write_text(out / "analysis.json", doc.dump(2) + "\n");
  return s;
}

std::vector<AblationCell> ablation_grid() {
  return {{"none", {false, false, false}},   {"qcl", {true, false, false}},    {"qcl+rre", {true, true, false}},
          {"qcl+rre+rca", {true, true, true}}, {"rre", {false, true, false}},    {"rca", {false, false, true}},
          {"rre+rca", {false, true, true}},  {"qcl+rca", {true, false, true}}};
}

std::vector<AblationRow> cmd_ablate(const RunConfig& base, const fs::path& data_dir, const fs::path& out) {
  validate(base);
  std::vector<AblationRow> rows;
  for (const AblationCell& cell : ablation_grid()) {
    RunConfig cfg = base;
    cfg.train.toggles = cell.toggles;
    const fs::path dir = out / cell.name;
    AblationRow row{cell, config_hash(cfg), {}, 0.0, true};
    try {
      const training::TrainState state = cmd_train(cfg, data_dir, dir);
      row.final_loss = state.log.empty() ? 0.0 : state.log.back().loss_total;
      row.ap = cmd_eval(cfg, data_dir, dir / "checkpoint.json", dir).ap;
    } catch (const DivergenceError&) {
      row.finite = false;
    }
    row.finite = row.finite && std::isfinite(row.final_loss);
    rows.push_back(row);
  }
  const eval::APResult& ref = rows.front().ap;
  std::ostringstream csv, md;
  csv << std::setprecision(17);
  md << std::fixed << std::setprecision(4);
  csv << "schema,config_hash,base_config_hash,cell,qcl,rre,rca,mAP,mAP50,mAP25,d_mAP,d_mAP50,d_mAP25,final_loss,finite\n";
  md << "| cell | qcl | rre | rca | mAP | mAP50 | mAP25 | Δ mAP | Δ mAP50 | Δ mAP25 |\n";
  md << "|---|---|---|---|---|---|---|---|---|---|\n";
  const std::string base_hash = config_hash(base);
  for (const AblationRow& r : rows) {
    const auto& t = r.cell.toggles;
    csv << kAblationSchema << ',' << r.config_hash << ',' << base_hash << ',' << r.cell.name << ',' << t.qcl << ','
        << t.rre << ',' << t.rca << ',' << r.ap.map << ',' << r.ap.map50 << ',' << r.ap.map25 << ','
        << r.ap.map - ref.map << ',' << r.ap.map50 - ref.map50 << ',' << r.ap.map25 - ref.map25 << ','
        << r.final_loss << ',' << (r.finite ? "true" : "false") << '\n';
    auto mark = [](bool b) { return b ? "✓" : ""; };
    md << "| " << r.cell.name << " | " << mark(t.qcl) << " | " << mark(t.rre) << " | " << mark(t.rca) << " | "
       << r.ap.map << " | " << r.ap.map50 << " | " << r.ap.map25 << " | " << std::showpos << r.ap.map - ref.map
       << " | " << r.ap.map50 - ref.map50 << " | " << r.ap.map25 - ref.map25 << std::noshowpos << " |\n";
  }
  md << "\nschema " << kAblationSchema << ", base config " << base_hash << "\n";
  write_text(out / "ablation.csv", csv.str());
  write_text(out / "ablation.md", md.str());
  return rows;
}

}  // namespace qcomp::cli
