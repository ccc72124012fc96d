#ifndef ANCHORFUSE_AGGREGATION_HPP_
#define ANCHORFUSE_AGGREGATION_HPP_

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "anchorfuse/alignment.hpp"
#include "anchorfuse/numeric.hpp"

namespace anchorfuse {

enum class FusionStrategy { aligned_mean, aligned_concat, raw_concat };

std::string fusion_strategy_name(FusionStrategy s);
std::optional<FusionStrategy> parse_fusion_strategy(const std::string& name);

struct FusionConfig {
  FusionStrategy strategy = FusionStrategy::aligned_mean;
  std::string anchor_name;
  std::vector<std::string> source_order;  // non-anchor encoders, recorded order
};

// Combines the anchor view with the per-source views already prepared for the
// strategy (aligned into anchor coordinates, or per-source standardized for
// raw_concat). aligned_mean averages all M = 1 + |sources| terms;
// the concat strategies stack blocks [anchor | sources...] column-wise.
Matrix fuse(const Matrix& anchor_emb, const std::vector<Matrix>& aligned_embs,
            const FusionConfig& config);

// Final feature standardization, train rows only. Thin numeric_core wrappers.
StandardScaler fit_final_scaler(const Matrix& train_fused);
Matrix apply_final(const StandardScaler& scaler, const Matrix& fused);

// Frozen feature path from raw per-encoder views to readout-ready features:
// align (or standardize) -> fuse -> final scaler. Views are passed anchor
// first, then in config.source_order.
struct FusionModel {
  FusionConfig config;
  std::vector<AlignmentMap> maps;           // per source; empty for raw_concat
  StandardScaler anchor_scaler;             // aligned strategies
  std::vector<StandardScaler> raw_scalers;  // raw_concat: anchor, then sources
  StandardScaler final_scaler;

  // Fused features before final standardization.
  Matrix fuse_views(const std::vector<Matrix>& views) const;
  // Full frozen path including the final scaler.
  Matrix featurize(const std::vector<Matrix>& views) const;
};

// Serializes everything except the alignment maps, which live in their own
// files; reattach them after loading.
void save_fusion_model(const FusionModel& model, const std::filesystem::path& path);
FusionModel load_fusion_model(const std::filesystem::path& path);

// Anchor-only mean over a single encoder. Single-encoder baselines share this
// path so an M=1 fused run and the baseline readout see bit-identical
// features.
FusionModel fit_single_view_fusion(const std::string& encoder, const Matrix& train_rows);

struct FusedStore {
  Matrix matrix;  // N x d_fused, final-standardized
  std::vector<std::string> row_ids;
  StandardScaler final_scaler;
};

}  // namespace anchorfuse

#endif  // ANCHORFUSE_AGGREGATION_HPP_
