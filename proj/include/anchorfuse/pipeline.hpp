#ifndef ANCHORFUSE_PIPELINE_HPP_
#define ANCHORFUSE_PIPELINE_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "anchorfuse/aggregation.hpp"
#include "anchorfuse/data_io.hpp"
#include "anchorfuse/readout.hpp"
#include "anchorfuse/synthetic.hpp"

namespace anchorfuse {

// Reserved model tag for the fused pipeline readout.
inline constexpr const char* kFusedTag = "fused";

struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path run_manifest() const { return root / "run_manifest.json"; }
  std::filesystem::path manifest() const { return root / "manifest.jsonl"; }
  std::filesystem::path lock_file() const { return root / ".lock"; }
  std::filesystem::path embeddings_dir() const { return root / "embeddings"; }
  std::filesystem::path aligners_dir() const { return root / "aligners"; }
  std::filesystem::path fused_dir() const { return root / "fused"; }
  std::filesystem::path models_dir() const { return root / "models"; }
  std::filesystem::path predictions_dir() const { return root / "predictions"; }
  std::filesystem::path reports_dir() const { return root / "reports"; }

  std::filesystem::path embedding_store(const std::string& name) const {
    return embeddings_dir() / (name + ".embd");
  }
  std::filesystem::path aligner(const std::string& source) const {
    return aligners_dir() / (source + ".alnm");
  }
  std::filesystem::path fusion_model() const { return fused_dir() / "fusion.bin"; }
  std::filesystem::path target_fusion(const std::string& tag) const {
    return models_dir() / (tag + ".fusion");
  }
  std::filesystem::path readout(const std::string& tag) const {
    return models_dir() / (tag + ".rdot");
  }
  std::filesystem::path predictions(const std::string& tag, Split split) const {
    return predictions_dir() / (tag + "_" + split_name(split) + ".csv");
  }
  std::filesystem::path metrics_csv() const { return reports_dir() / "metrics.csv"; }
};

// executed == false means the stage was skipped as an up-to-date no-op.
struct StageOutcome {
  bool executed = true;
  std::string message;
};

struct IngestOptions {
  std::filesystem::path manifest_path;
  // name=path pairs in CLI order; the order is recorded and reused everywhere.
  std::vector<std::pair<std::string, std::filesystem::path>> embeddings;
  double delta = 0.5;
  std::array<double, 3> fractions{0.7, 0.1, 0.2};
};

StageOutcome stage_ingest(const std::filesystem::path& run_dir, const IngestOptions& options);

// Ingest-equivalent stage that materializes a generated dataset.
StageOutcome stage_synth(const std::filesystem::path& run_dir, const SyntheticSpec& spec);

struct FitAlignOptions {
  std::string anchor;
  double alpha = 10.0;
};

StageOutcome stage_fit_align(const std::filesystem::path& run_dir,
                             const FitAlignOptions& options);

StageOutcome stage_fuse(const std::filesystem::path& run_dir, FusionStrategy strategy);

struct TrainStageOptions {
  std::string target = kFusedTag;  // kFusedTag or an encoder name
  HeadKind head = HeadKind::binary_logit;
  TrainConfig train;
  bool select_threshold = true;  // binary head only
};

StageOutcome stage_train(const std::filesystem::path& run_dir,
                         const TrainStageOptions& options);

struct EvaluateOptions {
  std::string target = kFusedTag;
  Split split = Split::test;
};

StageOutcome stage_evaluate(const std::filesystem::path& run_dir,
                            const EvaluateOptions& options);

StageOutcome stage_diagnose(const std::filesystem::path& run_dir,
                            const std::string& against_tag);

StageOutcome stage_occlude(const std::filesystem::path& run_dir, const std::string& doc_id,
                           const std::filesystem::path& variants_dir, int up_class = 1);

struct PipelineConfig {
  std::string anchor;  // defaults to the first ingested encoder
  double alpha = 10.0;
  FusionStrategy strategy = FusionStrategy::aligned_mean;
  HeadKind head = HeadKind::binary_logit;
  std::uint64_t seed = 42;
  TrainConfig train;  // seed field is overridden by `seed`
  bool select_thresholds = true;
};

// Runs fit-align, fuse, train (anchor baseline and fused readout), evaluate
// on the test split, and diagnose against the anchor baseline, in order, on
// an already ingested run directory.
std::vector<StageOutcome> run_pipeline(const std::filesystem::path& run_dir,
                                       const PipelineConfig& config);

// One CSV row per (run, model, split) metric entry; every run must have
// completed its evaluate stage.
std::string compare_runs(const std::vector<std::filesystem::path>& run_dirs);

// FNV-1a 64 content hash, rendered as "fnv64:<hex>".
std::string hash_file(const std::filesystem::path& path);
std::string hash_bytes(const std::string& bytes);

}  // namespace anchorfuse

#endif  // ANCHORFUSE_PIPELINE_HPP_
