#ifndef ANCHORFUSE_ALIGNMENT_HPP_
#define ANCHORFUSE_ALIGNMENT_HPP_

#include <filesystem>
#include <string>
#include <vector>

#include "anchorfuse/numeric.hpp"

namespace anchorfuse {

// Fitted ridge map from one source embedding space into the anchor space.
// Aligned outputs live in *standardized* anchor coordinates; the anchor's
// own embedding must pass through anchor_scaler before aggregation so every
// term of the fused sum shares one frame.
struct AlignmentMap {
  std::string source_name;
  std::string anchor_name;
  Matrix W;  // d_source x d_anchor
  StandardScaler source_scaler;
  StandardScaler anchor_scaler;
  double alpha = 10.0;
  double train_r2 = 0.0;
};

// Standardizes both sides with freshly fitted scalers (train rows only),
// solves the ridge system, and records the train-set R^2 on standardized
// anchor targets.
AlignmentMap fit_alignment(const Matrix& source_train, const Matrix& anchor_train,
                           double alpha);

// apply_scaler(source_scaler, source) * W.
Matrix apply_alignment(const AlignmentMap& map, const Matrix& source);

struct AlignmentQualityRow {
  std::string source;
  std::string anchor;
  double train_r2;
};

// One row per fitted map, echoing the stored train R^2.
std::vector<AlignmentQualityRow> report_alignment_quality(
    const std::vector<AlignmentMap>& maps);

// Binary serialization, magic "ALNM".
void save_alignment_map(const AlignmentMap& map, const std::filesystem::path& path);
AlignmentMap load_alignment_map(const std::filesystem::path& path);

}  // namespace anchorfuse

#endif  // ANCHORFUSE_ALIGNMENT_HPP_
