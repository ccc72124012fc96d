#include "anchorfuse/readout.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <set>

#include "anchorfuse/diagnostics.hpp"
#include "binary_io.hpp"

namespace anchorfuse {

namespace {

double softplus(double x) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0); }

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

struct Gradients {
  double loss = 0.0;
  std::vector<Matrix> weight_grads;
  std::vector<Vector> bias_grads;
};

// Forward + backward over one batch. When rng is non-null, inverted dropout
// masks are drawn for every hidden activation.
Gradients batch_gradients(const std::vector<Matrix>& weights,
                          const std::vector<Vector>& biases, HeadKind head,
                          const Matrix& X, const std::vector<int>& y,
                          const Vector& class_weights, double dropout_rate,
                          SeededRng* rng) {
  const auto n_layers = weights.size();
  const Index batch = X.rows();

  std::vector<Matrix> activations(n_layers + 1);
  std::vector<Matrix> pre_activations(n_layers);
  std::vector<Matrix> dropout_masks(n_layers);
  activations[0] = X;
  for (std::size_t l = 0; l < n_layers; ++l) {
    pre_activations[l] = activations[l] * weights[l];
    pre_activations[l].rowwise() += biases[l].transpose();
    if (l + 1 == n_layers) {
      activations[l + 1] = pre_activations[l];  // logits, no activation
    } else {
      Matrix h = pre_activations[l].cwiseMax(0.0);
      if (rng != nullptr && dropout_rate > 0.0) {
        const double keep = 1.0 - dropout_rate;
        Matrix mask(h.rows(), h.cols());
        for (Index k = 0; k < mask.size(); ++k)
          mask.data()[k] = rng->next_double() < keep ? 1.0 / keep : 0.0;
        dropout_masks[l] = std::move(mask);
        h = h.cwiseProduct(dropout_masks[l]);
      }
      activations[l + 1] = std::move(h);
    }
  }
  const Matrix& logits = activations[n_layers];

  // Per-sample weights, normalized by their batch sum so that uniform
  // weights reproduce the plain mean loss exactly.
  Vector sample_weights(batch);
  for (Index i = 0; i < batch; ++i) sample_weights[i] = class_weights[y[i]];
  const double weight_sum = sample_weights.sum();

  Gradients out;
  Matrix dlogits(logits.rows(), logits.cols());
  if (head == HeadKind::binary_logit) {
    Vector loss_terms(batch);
    for (Index i = 0; i < batch; ++i) {
      double s = logits(i, 0);
      loss_terms[i] = sample_weights[i] * (y[i] == 1 ? softplus(-s) : softplus(s));
      dlogits(i, 0) = sample_weights[i] * (sigmoid(s) - static_cast<double>(y[i])) / weight_sum;
    }
    out.loss = pairwise_sum(loss_terms) / weight_sum;
  } else {
    Vector loss_terms(batch);
    for (Index i = 0; i < batch; ++i) {
      double max_logit = logits.row(i).maxCoeff();
      double lse = max_logit + std::log((logits.row(i).array() - max_logit).exp().sum());
      loss_terms[i] = sample_weights[i] * (lse - logits(i, y[i]));
      for (Index k = 0; k < logits.cols(); ++k) {
        double p = std::exp(logits(i, k) - lse);
        double target = (k == y[i]) ? 1.0 : 0.0;
        dlogits(i, k) = sample_weights[i] * (p - target) / weight_sum;
      }
    }
    out.loss = pairwise_sum(loss_terms) / weight_sum;
  }

  out.weight_grads.resize(n_layers);
  out.bias_grads.resize(n_layers);
  Matrix delta = std::move(dlogits);
  for (std::size_t l = n_layers; l-- > 0;) {
    out.weight_grads[l] = activations[l].transpose() * delta;
    out.bias_grads[l] = delta.colwise().sum();
    if (l > 0) {
      delta = delta * weights[l].transpose();
      if (dropout_masks[l - 1].size() > 0) delta = delta.cwiseProduct(dropout_masks[l - 1]);
      delta = delta.cwiseProduct(
          (pre_activations[l - 1].array() > 0.0).cast<double>().matrix());
    }
  }
  return out;
}

Vector resolve_class_weights(HeadKind head, Index num_classes,
                             const std::vector<int>& y_train,
                             const std::optional<Vector>& requested) {
  const Index k = head == HeadKind::binary_logit ? 2 : num_classes;
  if (requested) {
    if (requested->size() != k)
      throw InvalidConfig("class_weights length must equal the class count");
    if ((requested->array() < 0.0).any())
      throw InvalidConfig("class_weights must be non-negative");
    return *requested;
  }
  if (head == HeadKind::binary_logit) return Vector::Ones(2);

  // Softmax default: inverse class frequency over observed classes,
  // normalized so the observed-class weights average to 1.
  Vector counts = Vector::Zero(k);
  for (int label : y_train) counts[label] += 1.0;
  Vector weights = Vector::Zero(k);
  Index observed = 0;
  double total = 0.0;
  for (Index c = 0; c < k; ++c) {
    if (counts[c] > 0.0) {
      weights[c] = static_cast<double>(y_train.size()) / counts[c];
      total += weights[c];
      ++observed;
    }
  }
  weights *= static_cast<double>(observed) / total;
  return weights;
}

void validate_labels(const std::vector<int>& y, Index num_classes, const char* which) {
  for (int label : y)
    if (label < 0 || label >= num_classes)
      throw InvalidInput(std::string("train_readout: ") + which + " label " +
                         std::to_string(label) + " out of range");
}

double validation_metric(const std::vector<Matrix>& weights,
                         const std::vector<Vector>& biases, HeadKind head,
                         const Matrix& X_val, const std::vector<int>& y_val,
                         Index num_classes) {
  Matrix a = X_val;
  for (std::size_t l = 0; l < weights.size(); ++l) {
    a = a * weights[l];
    a.rowwise() += biases[l].transpose();
    if (l + 1 < weights.size()) a = a.cwiseMax(0.0);
  }
  std::vector<int> pred(static_cast<std::size_t>(a.rows()));
  if (head == HeadKind::binary_logit) {
    // Training-time metric is F1 at the fixed 0.5 threshold; the operating
    // threshold is selected separately after training.
    for (Index i = 0; i < a.rows(); ++i) pred[i] = sigmoid(a(i, 0)) >= 0.5 ? 1 : 0;
    return binary_f1(y_val, pred);
  }
  for (Index i = 0; i < a.rows(); ++i) {
    Index best = 0;
    a.row(i).maxCoeff(&best);
    pred[i] = static_cast<int>(best);
  }
  return macro_f1(y_val, pred, static_cast<int>(num_classes));
}

}  // namespace

std::string head_kind_name(HeadKind head) {
  return head == HeadKind::binary_logit ? "binary" : "multiclass";
}

std::optional<HeadKind> parse_head_kind(const std::string& name) {
  if (name == "binary") return HeadKind::binary_logit;
  if (name == "multiclass") return HeadKind::softmax;
  return std::nullopt;
}

TrainResult train_readout_detailed(const Matrix& X_train, const std::vector<int>& y_train,
                                   const Matrix& X_val, const std::vector<int>& y_val,
                                   HeadKind head, Index num_classes,
                                   const TrainConfig& config) {
  if (X_train.rows() < 1 || X_val.rows() < 1)
    throw InvalidInput("train_readout: empty train or validation split");
  if (X_train.rows() != static_cast<Index>(y_train.size()) ||
      X_val.rows() != static_cast<Index>(y_val.size()))
    throw DimensionError("train_readout: label count does not match rows");
  if (X_train.cols() != X_val.cols())
    throw DimensionError("train_readout: train and validation dimensions differ");
  if (!(config.learning_rate > 0.0) || config.batch_size < 1 || config.max_epochs < 1 ||
      config.patience < 1 || config.patience > config.max_epochs)
    throw InvalidConfig("train_readout: invalid training configuration");
  if (config.dropout_rate < 0.0 || config.dropout_rate >= 1.0)
    throw InvalidConfig("train_readout: dropout_rate must be in [0, 1)");

  if (num_classes == 0) {
    int max_label = 0;
    for (int l : y_train) max_label = std::max(max_label, l);
    for (int l : y_val) max_label = std::max(max_label, l);
    num_classes = max_label + 1;
  }
  if (head == HeadKind::binary_logit) num_classes = 2;
  validate_labels(y_train, num_classes, "train");
  validate_labels(y_val, num_classes, "validation");
  if (std::set<int>(y_train.begin(), y_train.end()).size() < 2)
    throw DegenerateLabels("train_readout: training labels contain a single class");
  if (!X_train.allFinite() || !X_val.allFinite())
    throw InvalidInput("train_readout: non-finite features");

  const Index out_dim = head == HeadKind::binary_logit ? 1 : num_classes;
  std::vector<Index> dims;
  dims.push_back(X_train.cols());
  for (Index h : config.hidden_dims) {
    if (h < 1) throw InvalidConfig("train_readout: hidden dims must be >= 1");
    dims.push_back(h);
  }
  dims.push_back(out_dim);

  SeededRng rng(config.seed);
  std::vector<Matrix> weights(dims.size() - 1);
  std::vector<Vector> biases(dims.size() - 1);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const double limit = std::sqrt(1.0 / static_cast<double>(dims[l]));
    weights[l].resize(dims[l], dims[l + 1]);
    for (Index k = 0; k < weights[l].size(); ++k)
      weights[l].data()[k] = (2.0 * rng.next_double() - 1.0) * limit;
    biases[l] = Vector::Zero(dims[l + 1]);
  }

  Vector class_weights =
      resolve_class_weights(head, num_classes, y_train, config.class_weights);

  std::vector<Matrix> adam_m(weights.size()), adam_v(weights.size());
  std::vector<Vector> adam_mb(weights.size()), adam_vb(weights.size());
  for (std::size_t l = 0; l < weights.size(); ++l) {
    adam_m[l] = Matrix::Zero(weights[l].rows(), weights[l].cols());
    adam_v[l] = Matrix::Zero(weights[l].rows(), weights[l].cols());
    adam_mb[l] = Vector::Zero(biases[l].size());
    adam_vb[l] = Vector::Zero(biases[l].size());
  }
  long long adam_t = 0;

  TrainResult result;
  result.best_val_metric = -1.0;
  std::vector<Matrix> best_weights = weights;
  std::vector<Vector> best_biases = biases;
  Index epochs_since_best = 0;

  std::vector<Index> order(static_cast<std::size_t>(X_train.rows()));
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = static_cast<Index>(i);

  for (Index epoch = 1; epoch <= config.max_epochs; ++epoch) {
    rng.shuffle(order);
    for (Index start = 0; start < X_train.rows(); start += config.batch_size) {
      const Index size = std::min(config.batch_size, X_train.rows() - start);
      Matrix Xb(size, X_train.cols());
      std::vector<int> yb(static_cast<std::size_t>(size));
      for (Index r = 0; r < size; ++r) {
        Xb.row(r) = X_train.row(order[start + r]);
        yb[r] = y_train[order[start + r]];
      }
      Gradients grads = batch_gradients(weights, biases, head, Xb, yb, class_weights,
                                        config.dropout_rate, &rng);
      if (!std::isfinite(grads.loss))
        throw TrainingDiverged("train_readout: non-finite loss at epoch " +
                               std::to_string(epoch));

      ++adam_t;
      const double bc1 = 1.0 - std::pow(config.adam_beta1, adam_t);
      const double bc2 = 1.0 - std::pow(config.adam_beta2, adam_t);
      for (std::size_t l = 0; l < weights.size(); ++l) {
        adam_m[l] = config.adam_beta1 * adam_m[l] + (1.0 - config.adam_beta1) * grads.weight_grads[l];
        adam_v[l] = config.adam_beta2 * adam_v[l].array().matrix() +
                    (1.0 - config.adam_beta2) * grads.weight_grads[l].array().square().matrix();
        weights[l].array() -= config.learning_rate * (adam_m[l].array() / bc1) /
                              ((adam_v[l].array() / bc2).sqrt() + config.adam_epsilon);
        adam_mb[l] = config.adam_beta1 * adam_mb[l] + (1.0 - config.adam_beta1) * grads.bias_grads[l];
        adam_vb[l] = config.adam_beta2 * adam_vb[l].array().matrix() +
                     (1.0 - config.adam_beta2) * grads.bias_grads[l].array().square().matrix();
        biases[l].array() -= config.learning_rate * (adam_mb[l].array() / bc1) /
                             ((adam_vb[l].array() / bc2).sqrt() + config.adam_epsilon);
      }
    }

    double metric = validation_metric(weights, biases, head, X_val, y_val, num_classes);
    result.val_metric_history.push_back(metric);
    if (metric > result.best_val_metric) {
      result.best_val_metric = metric;
      result.best_epoch = epoch;
      best_weights = weights;
      best_biases = biases;
      epochs_since_best = 0;
    } else {
      ++epochs_since_best;
    }
    if (epochs_since_best >= config.patience) break;
  }

  result.model.weights = std::move(best_weights);
  result.model.biases = std::move(best_biases);
  result.model.head = head;
  result.model.dropout_rate = config.dropout_rate;
  result.model.threshold = 0.5;
  result.model.train_seed = config.seed;
  return result;
}

ReadoutModel train_readout(const Matrix& X_train, const std::vector<int>& y_train,
                           const Matrix& X_val, const std::vector<int>& y_val,
                           HeadKind head, Index num_classes, const TrainConfig& config) {
  return train_readout_detailed(X_train, y_train, X_val, y_val, head, num_classes, config)
      .model;
}

Matrix readout_logits(const ReadoutModel& model, const Matrix& X) {
  if (model.weights.empty())
    throw InvalidInput("readout_logits: model has no layers");
  if (X.cols() != model.input_dim())
    throw DimensionError("readout_logits: input has " + std::to_string(X.cols()) +
                         " columns, model expects " + std::to_string(model.input_dim()));
  Matrix a = X;
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    a = a * model.weights[l];
    a.rowwise() += model.biases[l].transpose();
    if (l + 1 < model.weights.size()) a = a.cwiseMax(0.0);
  }
  return a;
}

PredictionSet predict(const ReadoutModel& model, const Matrix& fused) {
  Matrix logits = readout_logits(model, fused);
  PredictionSet preds;
  preds.threshold = model.threshold;
  preds.predicted_labels.resize(static_cast<std::size_t>(logits.rows()));
  if (model.head == HeadKind::binary_logit) {
    preds.probabilities.resize(logits.rows(), 1);
    for (Index i = 0; i < logits.rows(); ++i) {
      double p = sigmoid(logits(i, 0));
      preds.probabilities(i, 0) = p;
      preds.predicted_labels[i] = p >= model.threshold ? 1 : 0;
    }
  } else {
    preds.probabilities.resize(logits.rows(), logits.cols());
    for (Index i = 0; i < logits.rows(); ++i) {
      double max_logit = logits.row(i).maxCoeff();
      Eigen::RowVectorXd shifted = (logits.row(i).array() - max_logit).exp();
      preds.probabilities.row(i) = shifted / shifted.sum();
      Index best = 0;
      preds.probabilities.row(i).maxCoeff(&best);
      preds.predicted_labels[i] = static_cast<int>(best);
    }
  }
  return preds;
}

double select_threshold(ReadoutModel& model, const Matrix& X_val,
                        const std::vector<int>& y_val) {
  if (model.head != HeadKind::binary_logit)
    throw InvalidInput("select_threshold: binary head required");
  if (X_val.rows() != static_cast<Index>(y_val.size()))
    throw DimensionError("select_threshold: label count does not match rows");
  bool has_pos = false, has_neg = false;
  for (int y : y_val) (y == 1 ? has_pos : has_neg) = true;
  if (!has_pos || !has_neg)
    throw DegenerateLabels("select_threshold: validation split has a single class");

  PredictionSet preds = predict(model, X_val);
  std::vector<double> candidates(preds.probabilities.data(),
                                 preds.probabilities.data() + preds.probabilities.rows());
  candidates.push_back(0.5);
  std::sort(candidates.begin(), candidates.end());
  candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

  double best_threshold = candidates.front();
  double best_f1 = -1.0;
  std::vector<int> pred(y_val.size());
  for (double t : candidates) {
    for (Index i = 0; i < preds.probabilities.rows(); ++i)
      pred[i] = preds.probabilities(i, 0) >= t ? 1 : 0;
    double f1 = binary_f1(y_val, pred);
    if (f1 > best_f1) {  // ascending sweep + strict improvement = smallest winner
      best_f1 = f1;
      best_threshold = t;
    }
  }
  model.threshold = best_threshold;
  return best_threshold;
}

LossGradients readout_loss_gradients(const ReadoutModel& model, const Matrix& X,
                                     const std::vector<int>& y,
                                     const Vector& class_weights) {
  if (model.weights.empty())
    throw InvalidInput("readout_loss_gradients: model has no layers");
  if (X.rows() != static_cast<Index>(y.size()))
    throw DimensionError("readout_loss_gradients: label count does not match rows");
  const Index k =
      model.head == HeadKind::binary_logit ? 2 : model.output_dim();
  Vector weights = class_weights;
  if (weights.size() == 0) weights = Vector::Ones(k);
  if (weights.size() != k)
    throw InvalidConfig("readout_loss_gradients: class_weights length must equal class count");
  validate_labels(y, k, "loss");

  Gradients grads = batch_gradients(model.weights, model.biases, model.head, X, y,
                                    weights, 0.0, nullptr);
  LossGradients out;
  out.loss = grads.loss;
  out.weight_grads = std::move(grads.weight_grads);
  out.bias_grads = std::move(grads.bias_grads);
  return out;
}

void save_prediction_set(const PredictionSet& preds, const std::filesystem::path& path) {
  const Index n = preds.probabilities.rows();
  if (n != static_cast<Index>(preds.ids.size()) ||
      n != static_cast<Index>(preds.true_labels.size()) ||
      n != static_cast<Index>(preds.predicted_labels.size()))
    throw ConsistencyError("save_prediction_set: field lengths disagree");

  std::ofstream out(path);
  if (!out) throw FormatError("cannot open predictions for writing: " + path.string());
  const Index k = preds.probabilities.cols();
  out << "id,true_label,predicted_label,threshold";
  if (k == 1) {
    out << ",p1";
  } else {
    for (Index c = 0; c < k; ++c) out << ",p" << c;
  }
  out << "\n";
  for (Index i = 0; i < n; ++i) {
    const std::string& id = preds.ids[i];
    if (id.find_first_of(",\"\n\r") != std::string::npos)
      throw InvalidInput("save_prediction_set: id contains CSV delimiter characters");
    out << id << ',' << preds.true_labels[i] << ',' << preds.predicted_labels[i] << ','
        << format_csv_double(preds.threshold);
    for (Index c = 0; c < k; ++c) out << ',' << format_csv_double(preds.probabilities(i, c));
    out << "\n";
  }
  if (!out) throw FormatError("failed writing predictions: " + path.string());
}

PredictionSet load_prediction_set(const std::filesystem::path& path,
                                  const std::string& model_tag) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open predictions: " + path.string());

  auto split_line = [](const std::string& line) {
    std::vector<std::string> fields;
    std::size_t start = 0;
    while (true) {
      std::size_t pos = line.find(',', start);
      if (pos == std::string::npos) {
        fields.push_back(line.substr(start));
        break;
      }
      fields.push_back(line.substr(start, pos - start));
      start = pos + 1;
    }
    if (!fields.empty() && !fields.back().empty() && fields.back().back() == '\r')
      fields.back().pop_back();
    return fields;
  };

  std::string line;
  if (!std::getline(in, line))
    throw FormatError("predictions file is empty: " + path.string());
  auto header = split_line(line);
  if (header.size() < 5 || header[0] != "id" || header[1] != "true_label" ||
      header[2] != "predicted_label" || header[3] != "threshold")
    throw FormatError("predictions file has an unexpected header: " + path.string());
  const std::size_t n_probs = header.size() - 4;

  PredictionSet preds;
  preds.model_tag = model_tag.empty() ? path.stem().string() : model_tag;
  std::vector<std::vector<double>> prob_rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto fields = split_line(line);
    if (fields.size() != header.size())
      throw FormatError("predictions row has wrong field count: " + path.string());
    preds.ids.push_back(fields[0]);
    preds.true_labels.push_back(std::stoi(fields[1]));
    preds.predicted_labels.push_back(std::stoi(fields[2]));
    preds.threshold = std::stod(fields[3]);
    std::vector<double> row(n_probs);
    for (std::size_t c = 0; c < n_probs; ++c) row[c] = std::stod(fields[4 + c]);
    prob_rows.push_back(std::move(row));
  }
  preds.probabilities.resize(static_cast<Index>(prob_rows.size()),
                             static_cast<Index>(n_probs));
  for (std::size_t i = 0; i < prob_rows.size(); ++i)
    for (std::size_t c = 0; c < n_probs; ++c)
      preds.probabilities(static_cast<Index>(i), static_cast<Index>(c)) = prob_rows[i][c];
  return preds;
}

void save_readout_model(const ReadoutModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open readout model for writing: " + path.string());
  io::put_bytes(out, "RDOT", 4);
  io::put_uint<std::uint32_t>(out, 1);
  io::put_uint<std::uint8_t>(out, static_cast<std::uint8_t>(model.head));
  io::put_f64(out, model.dropout_rate);
  io::put_f64(out, model.threshold);
  io::put_uint<std::uint64_t>(out, model.train_seed);
  io::put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(model.weights.size()));
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    io::put_matrix(out, model.weights[l]);
    io::put_vector(out, model.biases[l]);
  }
  if (!out) throw FormatError("failed writing readout model: " + path.string());
}

ReadoutModel load_readout_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open readout model: " + path.string());
  char magic[4];
  io::get_bytes(in, magic, 4, "magic");
  if (std::memcmp(magic, "RDOT", 4) != 0)
    throw FormatError("readout model: bad magic bytes");
  auto version = io::get_uint<std::uint32_t>(in, "version");
  if (version != 1)
    throw FormatError("readout model: unsupported version " + std::to_string(version));

  ReadoutModel model;
  auto head = io::get_uint<std::uint8_t>(in, "head kind");
  if (head > 1) throw FormatError("readout model: unknown head kind");
  model.head = static_cast<HeadKind>(head);
  model.dropout_rate = io::get_f64(in, "dropout rate");
  model.threshold = io::get_f64(in, "threshold");
  model.train_seed = io::get_uint<std::uint64_t>(in, "train seed");
  auto n_layers = io::get_uint<std::uint32_t>(in, "layer count");
  model.weights.resize(n_layers);
  model.biases.resize(n_layers);
  for (std::uint32_t l = 0; l < n_layers; ++l) {
    model.weights[l] = io::get_matrix(in, "weights");
    model.biases[l] = io::get_vector(in, "biases");
    if (!model.weights[l].allFinite() || !model.biases[l].allFinite())
      throw FormatError("readout model: non-finite parameters");
  }
  return model;
}

}  // namespace anchorfuse
