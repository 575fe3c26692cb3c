#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "qcomp/cli/config.hpp"
#include "qcomp/eval/eval.hpp"
#include "qcomp/training/training.hpp"

namespace qcomp::cli {

namespace fs = std::filesystem;

inline constexpr const char* kManifestSchema = "qcomp.manifest.v1";
inline constexpr const char* kMetricsSchema = "qcomp.metrics.v1";
inline constexpr const char* kEvalSchema = "qcomp.eval.v1";
inline constexpr const char* kAnalysisSchema = "qcomp.analysis.v1";
inline constexpr const char* kAblationSchema = "qcomp.ablation.v1";

/// Scene seed of split entry `index`; train and val never collide.
std::uint64_t scene_seed(const DataConfig& data, bool val, std::size_t index);

/// Writes <dir>/train/*.json, <dir>/val/*.json and <dir>/manifest.json.
/// Returns the written scene files relative to `dir`, in manifest order.
std::vector<std::string> cmd_gen_data(const RunConfig& cfg, const fs::path& dir);

/// Reads one split listed by the manifest; throws ConfigError when the data
/// was generated from a different scene/data configuration.
std::vector<scene::Scene> load_split(const RunConfig& cfg, const fs::path& dir, const std::string& split);

/// Trains into <out>/checkpoint.json and <out>/metrics.jsonl, validating on the
/// val split every train.eval_every epochs. With `resume`, continues from that
/// checkpoint, which must carry this config's hash.
training::TrainState cmd_train(const RunConfig& cfg, const fs::path& data_dir, const fs::path& out,
                               const std::optional<fs::path>& resume = std::nullopt);

struct EvalReport {
  eval::APResult ap;
  std::string json;  // exactly what was written
};

/// Writes <out>/eval.json for `split` scored with the checkpoint's model.
EvalReport cmd_eval(const RunConfig& cfg, const fs::path& data_dir, const fs::path& checkpoint, const fs::path& out,
                    const std::string& split = "val");

struct AnalysisSummary {
  double competing_final_tau50 = 0.0;  // final layer, tau = 0.5
  double matched_cls = 0.0;            // mean class score of matched queries
  double unmatched_cls = 0.0;
  double matched_iou = 0.0;
  double unmatched_iou = 0.0;
};

/// Writes competition_stats.csv, score_cdf.csv and analysis.json under `out`.
AnalysisSummary cmd_analyze(const RunConfig& cfg, const fs::path& data_dir, const fs::path& checkpoint,
                            const fs::path& out, const std::string& split = "val");

struct AblationCell {
  std::string name;
  decoder::Toggles toggles;
};

/// none, +qcl, +qcl+rre, +qcl+rre+rca, each alone (rre, rca), and the remaining
/// leave-one-out pairs (rre+rca, qcl+rca).
std::vector<AblationCell> ablation_grid();

struct AblationRow {
  AblationCell cell;
  std::string config_hash;
  eval::APResult ap;
  double final_loss = 0.0;
  bool finite = true;
};

/// Trains and evaluates every cell into <out>/<cell>/; writes ablation.csv and
/// ablation.md with deltas against the `none` row.
std::vector<AblationRow> cmd_ablate(const RunConfig& base, const fs::path& data_dir, const fs::path& out);

/// Standard analysis thresholds of the competition statistics.
std::vector<double> analysis_taus();

}  // namespace qcomp::cli
