#ifndef ANCHORFUSE_READOUT_HPP_
#define ANCHORFUSE_READOUT_HPP_

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "anchorfuse/numeric.hpp"

namespace anchorfuse {

enum class HeadKind : std::uint8_t { binary_logit = 0, softmax = 1 };

std::string head_kind_name(HeadKind head);
std::optional<HeadKind> parse_head_kind(const std::string& name);

// Feed-forward classifier: ReLU hidden layers with inverted dropout during
// training, then a single logit (binary) or K logits (softmax).
struct ReadoutModel {
  std::vector<Matrix> weights;  // weights[l] is in_l x out_l
  std::vector<Vector> biases;
  HeadKind head = HeadKind::binary_logit;
  double dropout_rate = 0.5;
  double threshold = 0.5;  // binary operating threshold
  std::uint64_t train_seed = 0;

  Index input_dim() const { return weights.empty() ? 0 : weights.front().rows(); }
  Index output_dim() const { return weights.empty() ? 0 : weights.back().cols(); }
};

struct TrainConfig {
  double learning_rate = 1e-3;
  Index batch_size = 64;
  Index max_epochs = 200;
  Index patience = 10;
  std::vector<Index> hidden_dims{256, 256, 256};
  double dropout_rate = 0.5;
  // Per-class loss weights. Defaults to uniform for the binary head and to
  // inverse class frequency (normalized to mean 1) for softmax.
  std::optional<Vector> class_weights;
  std::uint64_t seed = 42;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
};

struct PredictionSet {
  std::vector<std::string> ids;
  std::vector<int> true_labels;
  // N x 1 with P(y=1) for binary, N x K softmax probabilities otherwise.
  Matrix probabilities;
  std::vector<int> predicted_labels;
  std::string model_tag;
  double threshold = 0.5;
};

struct TrainResult {
  ReadoutModel model;
  std::vector<double> val_metric_history;  // one entry per trained epoch
  double best_val_metric = 0.0;
  Index best_epoch = 0;  // 1-based
};

// Mini-batch Adam training with per-epoch validation (binary F1 at threshold
// 0.5, macro-F1 for softmax) and patience-based early stopping; the returned
// model carries the best-epoch weights. num_classes == 0 infers K from the
// labels for the softmax head.
TrainResult train_readout_detailed(const Matrix& X_train, const std::vector<int>& y_train,
                                   const Matrix& X_val, const std::vector<int>& y_val,
                                   HeadKind head, Index num_classes,
                                   const TrainConfig& config);

ReadoutModel train_readout(const Matrix& X_train, const std::vector<int>& y_train,
                           const Matrix& X_val, const std::vector<int>& y_val,
                           HeadKind head, Index num_classes, const TrainConfig& config);

// Forward pass with dropout disabled.
Matrix readout_logits(const ReadoutModel& model, const Matrix& X);

// Probabilities plus hard decisions: binary positive iff p >= threshold,
// softmax argmax with ties resolved to the lowest class index. ids and
// true_labels are left for the caller to attach.
PredictionSet predict(const ReadoutModel& model, const Matrix& fused);

// Sweeps candidate thresholds (unique validation probabilities plus 0.5) and
// stores the smallest threshold maximizing validation F1 on the model.
double select_threshold(ReadoutModel& model, const Matrix& X_val,
                        const std::vector<int>& y_val);

// Full-batch loss and analytic parameter gradients with dropout disabled.
// class_weights of size 0 means uniform; otherwise one weight per class.
struct LossGradients {
  double loss = 0.0;
  std::vector<Matrix> weight_grads;
  std::vector<Vector> bias_grads;
};

LossGradients readout_loss_gradients(const ReadoutModel& model, const Matrix& X,
                                     const std::vector<int>& y,
                                     const Vector& class_weights);

// CSV persistence: id, true_label, predicted_label, threshold, probabilities.
void save_prediction_set(const PredictionSet& preds, const std::filesystem::path& path);
PredictionSet load_prediction_set(const std::filesystem::path& path,
                                  const std::string& model_tag = "");

// Binary serialization, magic "RDOT".
void save_readout_model(const ReadoutModel& model, const std::filesystem::path& path);
ReadoutModel load_readout_model(const std::filesystem::path& path);

}  // namespace anchorfuse

#endif  // ANCHORFUSE_READOUT_HPP_
