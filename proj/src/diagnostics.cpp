#include "anchorfuse/diagnostics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace anchorfuse {

namespace {

void check_pair_consistency(const PredictionSet& a, const PredictionSet& b,
                            const char* op) {
  if (a.ids.size() != b.ids.size())
    throw ConsistencyError(std::string(op) + ": prediction sets differ in size");
  for (std::size_t i = 0; i < a.ids.size(); ++i) {
    if (a.ids[i] != b.ids[i])
      throw ConsistencyError(std::string(op) + ": id mismatch at row " + std::to_string(i));
    if (a.true_labels[i] != b.true_labels[i])
      throw ConsistencyError(std::string(op) + ": true-label mismatch for id '" +
                             a.ids[i] + "'");
  }
}

double p_of_true_label(const PredictionSet& preds, Index i) {
  if (preds.probabilities.cols() == 1) {
    double p1 = preds.probabilities(i, 0);
    return preds.true_labels[i] == 1 ? p1 : 1.0 - p1;
  }
  return preds.probabilities(i, preds.true_labels[i]);
}

std::ofstream open_csv(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open CSV for writing: " + path.string());
  return out;
}

}  // namespace

double accuracy_score(const std::vector<int>& y_true, const std::vector<int>& y_pred) {
  if (y_true.empty()) throw EmptyInput("accuracy_score: no samples");
  if (y_true.size() != y_pred.size())
    throw DimensionError("accuracy_score: length mismatch");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < y_true.size(); ++i) correct += y_true[i] == y_pred[i];
  return static_cast<double>(correct) / static_cast<double>(y_true.size());
}

double binary_f1(const std::vector<int>& y_true, const std::vector<int>& y_pred) {
  if (y_true.size() != y_pred.size())
    throw DimensionError("binary_f1: length mismatch");
  long long tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < y_true.size(); ++i) {
    if (y_pred[i] == 1 && y_true[i] == 1) ++tp;
    if (y_pred[i] == 1 && y_true[i] != 1) ++fp;
    if (y_pred[i] != 1 && y_true[i] == 1) ++fn;
  }
  long long denom = 2 * tp + fp + fn;
  return denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
}

double macro_f1(const std::vector<int>& y_true, const std::vector<int>& y_pred,
                int num_classes) {
  if (y_true.empty()) throw EmptyInput("macro_f1: no samples");
  if (num_classes < 2) throw InvalidInput("macro_f1: need at least two classes");
  double total = 0.0;
  for (int c = 0; c < num_classes; ++c) {
    long long tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < y_true.size(); ++i) {
      if (y_pred[i] == c && y_true[i] == c) ++tp;
      if (y_pred[i] == c && y_true[i] != c) ++fp;
      if (y_pred[i] != c && y_true[i] == c) ++fn;
    }
    long long denom = 2 * tp + fp + fn;
    total += denom == 0 ? 0.0 : 2.0 * static_cast<double>(tp) / static_cast<double>(denom);
  }
  return total / static_cast<double>(num_classes);
}

std::optional<double> binary_roc_auc(const std::vector<int>& y_true,
                                     const std::vector<double>& scores) {
  if (y_true.size() != scores.size())
    throw DimensionError("binary_roc_auc: length mismatch");
  if (y_true.empty()) throw EmptyInput("binary_roc_auc: no samples");
  long long n_pos = 0, n_neg = 0;
  for (int y : y_true) (y == 1 ? n_pos : n_neg) += 1;
  if (n_pos == 0 || n_neg == 0) return std::nullopt;

  std::vector<std::size_t> order(y_true.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Average ranks over score ties: each tied observation gets the mean rank
  // of its group, which charges half credit for tied positive/negative pairs.
  double rank_sum_pos = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
    double avg_rank = 0.5 * static_cast<double>((i + 1) + (j + 1));
    for (std::size_t k = i; k <= j; ++k)
      if (y_true[order[k]] == 1) rank_sum_pos += avg_rank;
    i = j + 1;
  }
  double auc = (rank_sum_pos - 0.5 * static_cast<double>(n_pos) *
                                   static_cast<double>(n_pos + 1)) /
               (static_cast<double>(n_pos) * static_cast<double>(n_neg));
  return auc;
}

std::optional<double> macro_roc_auc(const std::vector<int>& y_true,
                                    const Matrix& probabilities) {
  if (probabilities.rows() != static_cast<Index>(y_true.size()))
    throw DimensionError("macro_roc_auc: length mismatch");
  double total = 0.0;
  int defined = 0;
  for (Index c = 0; c < probabilities.cols(); ++c) {
    std::vector<int> one_vs_rest(y_true.size());
    std::vector<double> scores(y_true.size());
    for (std::size_t i = 0; i < y_true.size(); ++i) {
      one_vs_rest[i] = y_true[i] == static_cast<int>(c) ? 1 : 0;
      scores[i] = probabilities(static_cast<Index>(i), c);
    }
    auto auc = binary_roc_auc(one_vs_rest, scores);
    if (auc) {
      total += *auc;
      ++defined;
    }
  }
  if (defined == 0) return std::nullopt;
  return total / defined;
}

MetricsSummary compute_metrics(const PredictionSet& preds) {
  if (preds.true_labels.empty()) throw EmptyInput("compute_metrics: empty prediction set");
  MetricsSummary summary;
  summary.n = static_cast<Index>(preds.true_labels.size());
  summary.accuracy = accuracy_score(preds.true_labels, preds.predicted_labels);
  if (preds.probabilities.cols() <= 1) {
    summary.f1 = binary_f1(preds.true_labels, preds.predicted_labels);
    std::vector<double> scores(preds.probabilities.data(),
                               preds.probabilities.data() + preds.probabilities.rows());
    summary.roc_auc = binary_roc_auc(preds.true_labels, scores);
  } else {
    summary.f1 = macro_f1(preds.true_labels, preds.predicted_labels,
                          static_cast<int>(preds.probabilities.cols()));
    summary.roc_auc = macro_roc_auc(preds.true_labels, preds.probabilities);
  }
  return summary;
}

OverlapMatrix error_overlap(const std::vector<PredictionSet>& pred_sets) {
  if (pred_sets.empty()) throw EmptyInput("error_overlap: no prediction sets");
  for (std::size_t m = 1; m < pred_sets.size(); ++m)
    check_pair_consistency(pred_sets[0], pred_sets[m], "error_overlap");

  const auto n_models = static_cast<Index>(pred_sets.size());
  std::vector<std::vector<bool>> is_error(pred_sets.size());
  std::vector<long long> error_counts(pred_sets.size(), 0);
  for (std::size_t m = 0; m < pred_sets.size(); ++m) {
    const auto& preds = pred_sets[m];
    is_error[m].resize(preds.true_labels.size());
    for (std::size_t i = 0; i < preds.true_labels.size(); ++i) {
      is_error[m][i] = preds.predicted_labels[i] != preds.true_labels[i];
      error_counts[m] += is_error[m][i];
    }
  }

  OverlapMatrix overlap;
  overlap.entries = Matrix::Zero(n_models, n_models);
  overlap.row_defined.resize(pred_sets.size());
  for (std::size_t a = 0; a < pred_sets.size(); ++a) {
    overlap.model_tags.push_back(pred_sets[a].model_tag);
    overlap.row_defined[a] = error_counts[a] > 0;
    if (!overlap.row_defined[a]) continue;
    for (std::size_t b = 0; b < pred_sets.size(); ++b) {
      long long both = 0;
      for (std::size_t i = 0; i < is_error[a].size(); ++i)
        both += is_error[a][i] && is_error[b][i];
      overlap.entries(static_cast<Index>(a), static_cast<Index>(b)) =
          static_cast<double>(both) / static_cast<double>(error_counts[a]);
    }
  }
  return overlap;
}

const char* decision_state_name(DecisionState s) {
  switch (s) {
    case DecisionState::TP: return "TP";
    case DecisionState::FP: return "FP";
    case DecisionState::FN: return "FN";
    case DecisionState::TN: return "TN";
  }
  return "TP";
}

DecisionState decision_state(int y_true, int y_pred) {
  if (y_pred == 1) return y_true == 1 ? DecisionState::TP : DecisionState::FP;
  return y_true == 1 ? DecisionState::FN : DecisionState::TN;
}

std::int64_t TransitionTable::total() const {
  std::int64_t sum = 0;
  for (const auto& row : counts)
    for (std::int64_t c : row) sum += c;
  return sum;
}

std::array<std::int64_t, 4> TransitionTable::row_sums() const {
  std::array<std::int64_t, 4> sums{};
  for (int from = 0; from < 4; ++from)
    for (int to = 0; to < 4; ++to) sums[from] += counts[from][to];
  return sums;
}

std::array<std::int64_t, 4> TransitionTable::col_sums() const {
  std::array<std::int64_t, 4> sums{};
  for (int from = 0; from < 4; ++from)
    for (int to = 0; to < 4; ++to) sums[to] += counts[from][to];
  return sums;
}

TransitionTable decision_transitions(const PredictionSet& anchor_preds,
                                     const PredictionSet& fused_preds) {
  check_pair_consistency(anchor_preds, fused_preds, "decision_transitions");
  for (std::size_t i = 0; i < anchor_preds.true_labels.size(); ++i) {
    if (anchor_preds.true_labels[i] < 0 || anchor_preds.true_labels[i] > 1 ||
        anchor_preds.predicted_labels[i] < 0 || anchor_preds.predicted_labels[i] > 1 ||
        fused_preds.predicted_labels[i] < 0 || fused_preds.predicted_labels[i] > 1)
      throw InvalidInput("decision_transitions: binary labels required");
  }

  TransitionTable table;
  for (std::size_t i = 0; i < anchor_preds.true_labels.size(); ++i) {
    auto from = decision_state(anchor_preds.true_labels[i], anchor_preds.predicted_labels[i]);
    auto to = decision_state(fused_preds.true_labels[i], fused_preds.predicted_labels[i]);
    ++table.counts[static_cast<int>(from)][static_cast<int>(to)];
  }
  return table;
}

const char* shift_group_name(ShiftGroup g) {
  switch (g) {
    case ShiftGroup::corrected: return "corrected";
    case ShiftGroup::degraded: return "degraded";
    case ShiftGroup::unchanged: return "unchanged";
  }
  return "unchanged";
}

std::vector<ConfidenceShiftRecord> confidence_shift(const PredictionSet& anchor_preds,
                                                    const PredictionSet& fused_preds) {
  check_pair_consistency(anchor_preds, fused_preds, "confidence_shift");
  if (anchor_preds.probabilities.rows() != static_cast<Index>(anchor_preds.ids.size()) ||
      fused_preds.probabilities.rows() != static_cast<Index>(fused_preds.ids.size()) ||
      anchor_preds.probabilities.cols() == 0 || fused_preds.probabilities.cols() == 0)
    throw InvalidInput("confidence_shift: probabilities are missing");
  if (anchor_preds.probabilities.cols() != fused_preds.probabilities.cols())
    throw ConsistencyError("confidence_shift: probability layouts differ");

  std::vector<ConfidenceShiftRecord> records;
  records.reserve(anchor_preds.ids.size());
  for (std::size_t i = 0; i < anchor_preds.ids.size(); ++i) {
    const Index row = static_cast<Index>(i);
    bool anchor_right = anchor_preds.predicted_labels[i] == anchor_preds.true_labels[i];
    bool fused_right = fused_preds.predicted_labels[i] == fused_preds.true_labels[i];
    ShiftGroup group = ShiftGroup::unchanged;
    if (!anchor_right && fused_right) group = ShiftGroup::corrected;
    if (anchor_right && !fused_right) group = ShiftGroup::degraded;
    records.push_back({anchor_preds.ids[i], group,
                       p_of_true_label(fused_preds, row) - p_of_true_label(anchor_preds, row)});
  }
  return records;
}

std::vector<OcclusionResult> occlusion_attribution(
    const ReadoutModel& model, const FusionModel& pipeline, const std::string& doc_id,
    const std::vector<Vector>& base_views, const std::vector<SentenceVariant>& occluded,
    int up_class) {
  const std::size_t expected_views = pipeline.config.source_order.size() + 1;
  if (base_views.size() != expected_views)
    throw ConsistencyError("occlusion_attribution: expected " +
                           std::to_string(expected_views) + " encoder views, got " +
                           std::to_string(base_views.size()));
  Index up_col = 0;
  if (model.head == HeadKind::softmax) {
    if (up_class < 0 || up_class >= model.output_dim())
      throw InvalidInput("occlusion_attribution: up_class out of range");
    up_col = up_class;
  }

  auto views_to_matrices = [](const std::vector<Vector>& views) {
    std::vector<Matrix> mats;
    mats.reserve(views.size());
    for (const auto& v : views) mats.push_back(v.transpose());
    return mats;
  };
  auto up_logit = [&](const std::vector<Vector>& views) {
    Matrix features = pipeline.featurize(views_to_matrices(views));
    return readout_logits(model, features)(0, up_col);
  };

  const double z_base = up_logit(base_views);
  std::vector<OcclusionResult> results;
  results.reserve(occluded.size());
  for (const auto& variant : occluded) {
    if (variant.views.size() != expected_views)
      throw ConsistencyError("occlusion_attribution: sentence " +
                             std::to_string(variant.sentence_index) +
                             " is missing an encoder view");
    double delta = z_base - up_logit(variant.views);
    results.push_back({doc_id, variant.sentence_index, delta, delta > 0.0});
  }
  return results;
}

std::string format_csv_double(double value) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.6g", value);
  return buf;
}

void write_metrics_csv(const std::filesystem::path& path,
                       const std::vector<MetricsRow>& rows) {
  auto out = open_csv(path);
  out << "model,split,n,accuracy,f1,roc_auc\n";
  for (const auto& row : rows) {
    out << row.model_tag << ',' << row.split << ',' << row.metrics.n << ','
        << format_csv_double(row.metrics.accuracy) << ','
        << format_csv_double(row.metrics.f1) << ',';
    if (row.metrics.roc_auc) out << format_csv_double(*row.metrics.roc_auc);
    out << "\n";
  }
}

void write_overlap_csv(const std::filesystem::path& path, const OverlapMatrix& overlap) {
  auto out = open_csv(path);
  out << "model";
  for (const auto& tag : overlap.model_tags) out << ',' << tag;
  out << "\n";
  for (std::size_t a = 0; a < overlap.model_tags.size(); ++a) {
    out << overlap.model_tags[a];
    for (std::size_t b = 0; b < overlap.model_tags.size(); ++b) {
      out << ',';
      if (overlap.row_defined[a])
        out << format_csv_double(
            overlap.entries(static_cast<Index>(a), static_cast<Index>(b)));
      else
        out << "undefined";
    }
    out << "\n";
  }
}

void write_transitions_csv(const std::filesystem::path& path, const TransitionTable& table) {
  auto out = open_csv(path);
  out << "from_state,to_state,count\n";
  for (int from = 0; from < 4; ++from)
    for (int to = 0; to < 4; ++to)
      out << decision_state_name(static_cast<DecisionState>(from)) << ','
          << decision_state_name(static_cast<DecisionState>(to)) << ','
          << table.counts[from][to] << "\n";
}

void write_confidence_shift_csv(const std::filesystem::path& path,
                                const std::vector<ConfidenceShiftRecord>& records) {
  auto out = open_csv(path);
  out << "id,group,delta_p_true\n";
  for (const auto& rec : records)
    out << rec.id << ',' << shift_group_name(rec.group) << ','
        << format_csv_double(rec.delta_p_true) << "\n";
}

void write_occlusion_csv(const std::filesystem::path& path,
                         const std::vector<OcclusionResult>& results) {
  auto out = open_csv(path);
  out << "sentence_index,delta_z,direction\n";
  for (const auto& res : results)
    out << res.sentence_index << ',' << format_csv_double(res.delta_z) << ','
        << (res.direction_up ? "up" : "down") << "\n";
}

std::string render_overlap_text(const OverlapMatrix& overlap) {
  std::ostringstream out;
  out << "Error overlap P(col error | row error)\n";
  std::size_t width = 10;
  for (const auto& tag : overlap.model_tags) width = std::max(width, tag.size() + 2);
  out << std::setw(static_cast<int>(width)) << "";
  for (const auto& tag : overlap.model_tags)
    out << std::setw(static_cast<int>(width)) << tag;
  out << "\n";
  for (std::size_t a = 0; a < overlap.model_tags.size(); ++a) {
    out << std::setw(static_cast<int>(width)) << overlap.model_tags[a];
    for (std::size_t b = 0; b < overlap.model_tags.size(); ++b) {
      if (overlap.row_defined[a])
        out << std::setw(static_cast<int>(width))
            << format_csv_double(
                   overlap.entries(static_cast<Index>(a), static_cast<Index>(b)));
      else
        out << std::setw(static_cast<int>(width)) << "undef";
    }
    out << "\n";
  }
  return out.str();
}

std::string render_transitions_text(const TransitionTable& table) {
  std::ostringstream out;
  out << "Decision transitions (rows: anchor, cols: fused)\n";
  out << std::setw(6) << "";
  for (int to = 0; to < 4; ++to)
    out << std::setw(8) << decision_state_name(static_cast<DecisionState>(to));
  out << "\n";
  for (int from = 0; from < 4; ++from) {
    out << std::setw(6) << decision_state_name(static_cast<DecisionState>(from));
    for (int to = 0; to < 4; ++to) out << std::setw(8) << table.counts[from][to];
    out << "\n";
  }
  return out.str();
}

}  // namespace anchorfuse
