#ifndef ANCHORFUSE_DIAGNOSTICS_HPP_
#define ANCHORFUSE_DIAGNOSTICS_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "anchorfuse/aggregation.hpp"
#include "anchorfuse/numeric.hpp"
#include "anchorfuse/readout.hpp"

namespace anchorfuse {

// --- basic metric primitives ----------------------------------------------

double accuracy_score(const std::vector<int>& y_true, const std::vector<int>& y_pred);

// F1 on the positive class; 0 when the denominator vanishes.
double binary_f1(const std::vector<int>& y_true, const std::vector<int>& y_pred);

// Unweighted mean of per-class one-vs-rest F1 over classes 0..K-1.
double macro_f1(const std::vector<int>& y_true, const std::vector<int>& y_pred,
                int num_classes);

// Mann-Whitney rank statistic with half credit for ties; nullopt when only
// one class is present.
std::optional<double> binary_roc_auc(const std::vector<int>& y_true,
                                     const std::vector<double>& scores);

// Macro-averaged one-vs-rest AUC over classes with both outcomes present.
std::optional<double> macro_roc_auc(const std::vector<int>& y_true,
                                    const Matrix& probabilities);

struct MetricsSummary {
  double accuracy = 0.0;
  double f1 = 0.0;
  std::optional<double> roc_auc;
  Index n = 0;
};

// Accuracy, F1 (positive-class or macro), and ROC-AUC for one prediction set.
MetricsSummary compute_metrics(const PredictionSet& preds);

// --- error overlap ---------------------------------------------------------

struct OverlapMatrix {
  std::vector<std::string> model_tags;
  Matrix entries;                 // entry (A,B) = P(B error | A error)
  std::vector<bool> row_defined;  // false when model A made no errors
};

OverlapMatrix error_overlap(const std::vector<PredictionSet>& pred_sets);

// --- decision transitions ---------------------------------------------------

enum class DecisionState : int { TP = 0, FP = 1, FN = 2, TN = 3 };

const char* decision_state_name(DecisionState s);
DecisionState decision_state(int y_true, int y_pred);

struct TransitionTable {
  // counts[from][to], both indexed in TP, FP, FN, TN order.
  std::array<std::array<std::int64_t, 4>, 4> counts{};

  std::int64_t total() const;
  std::array<std::int64_t, 4> row_sums() const;  // anchor model's confusion counts
  std::array<std::int64_t, 4> col_sums() const;  // fused model's confusion counts
};

TransitionTable decision_transitions(const PredictionSet& anchor_preds,
                                     const PredictionSet& fused_preds);

// --- confidence shift --------------------------------------------------------

enum class ShiftGroup { corrected, degraded, unchanged };

const char* shift_group_name(ShiftGroup g);

struct ConfidenceShiftRecord {
  std::string id;
  ShiftGroup group;
  double delta_p_true;  // p_fused(y_true) - p_anchor(y_true)
};

std::vector<ConfidenceShiftRecord> confidence_shift(const PredictionSet& anchor_preds,
                                                    const PredictionSet& fused_preds);

// --- occlusion attribution ----------------------------------------------------

struct OcclusionResult {
  std::string id;
  Index sentence_index;
  double delta_z;  // z_base - z_without_sentence, up-class logit
  bool direction_up;
};

struct SentenceVariant {
  Index sentence_index;
  // One row vector per encoder, anchor first then fusion source order.
  std::vector<Vector> views;
};

// Runs the frozen align -> fuse -> final-scale -> readout path on the base
// document and on each sentence-occluded variant. up_class selects the logit
// column for the softmax head; the binary head has a single logit.
std::vector<OcclusionResult> occlusion_attribution(
    const ReadoutModel& model, const FusionModel& pipeline, const std::string& doc_id,
    const std::vector<Vector>& base_views, const std::vector<SentenceVariant>& occluded,
    int up_class = 1);

// --- CSV emission ---------------------------------------------------------

// Floats rendered with six significant digits.
std::string format_csv_double(double value);

struct MetricsRow {
  std::string model_tag;
  std::string split;
  MetricsSummary metrics;
};

void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<MetricsRow>& rows);
void write_overlap_csv(const std::filesystem::path& path, const OverlapMatrix& overlap);
void write_transitions_csv(const std::filesystem::path& path, const TransitionTable& table);
void write_confidence_shift_csv(const std::filesystem::path& path,
                                const std::vector<ConfidenceShiftRecord>& records);
void write_occlusion_csv(const std::filesystem::path& path,
                         const std::vector<OcclusionResult>& results);

// Human-readable text rendering of the same tables.
std::string render_overlap_text(const OverlapMatrix& overlap);
std::string render_transitions_text(const TransitionTable& table);

}  // namespace anchorfuse

#endif  // ANCHORFUSE_DIAGNOSTICS_HPP_
