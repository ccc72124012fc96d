#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "anchorfuse/diagnostics.hpp"
#include "anchorfuse/readout.hpp"

using namespace anchorfuse;

namespace {

// Two well-separated 2-D blobs.
void make_blobs(SeededRng& rng, Index n, Matrix& X, std::vector<int>& y) {
  X.resize(n, 2);
  y.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    int label = static_cast<int>(rng.next_below(2));
    double cx = label == 1 ? 2.0 : -2.0;
    X(i, 0) = cx + 0.3 * rng.next_normal();
    X(i, 1) = 0.3 * rng.next_normal();
    y[i] = label;
  }
}

ReadoutModel linear_model(const Matrix& W, const Vector& b, HeadKind head) {
  ReadoutModel model;
  model.weights = {W};
  model.biases = {b};
  model.head = head;
  return model;
}

// Central finite differences against the analytic gradients.
double max_relative_gradient_error(ReadoutModel model, const Matrix& X,
                                   const std::vector<int>& y, const Vector& class_weights) {
  const double h = 1e-5;
  LossGradients analytic = readout_loss_gradients(model, X, y, class_weights);
  double worst = 0.0;
  auto probe = [&](double* value, double analytic_grad) {
    double original = *value;
    *value = original + h;
    double up = readout_loss_gradients(model, X, y, class_weights).loss;
    *value = original - h;
    double down = readout_loss_gradients(model, X, y, class_weights).loss;
    *value = original;
    double numeric = (up - down) / (2.0 * h);
    double rel = std::abs(numeric - analytic_grad) /
                 std::max({1.0, std::abs(numeric), std::abs(analytic_grad)});
    worst = std::max(worst, rel);
  };
  for (std::size_t l = 0; l < model.weights.size(); ++l) {
    for (Index k = 0; k < model.weights[l].size(); ++k)
      probe(model.weights[l].data() + k, analytic.weight_grads[l].data()[k]);
    for (Index k = 0; k < model.biases[l].size(); ++k)
      probe(model.biases[l].data() + k, analytic.bias_grads[l].data()[k]);
  }
  return worst;
}

Matrix random_matrix(SeededRng& rng, Index rows, Index cols) {
  Matrix m(rows, cols);
  for (Index k = 0; k < m.size(); ++k) m.data()[k] = rng.next_normal();
  return m;
}

}  // namespace

TEST_CASE("separable blobs are learned to validation accuracy 1") {
  SeededRng rng(99);
  Matrix X_train, X_val;
  std::vector<int> y_train, y_val;
  make_blobs(rng, 60, X_train, y_train);
  make_blobs(rng, 20, X_val, y_val);

  TrainConfig config;
  config.hidden_dims = {8};
  config.max_epochs = 50;
  config.patience = 50;
  config.batch_size = 16;
  config.dropout_rate = 0.0;
  config.seed = 7;
  ReadoutModel model =
      train_readout(X_train, y_train, X_val, y_val, HeadKind::binary_logit, 2, config);
  PredictionSet preds = predict(model, X_val);
  CHECK(accuracy_score(y_val, preds.predicted_labels) == 1.0);
}

TEST_CASE("zero output layer gives probability exactly 0.5 and predicts positive") {
  ReadoutModel model = linear_model(Matrix::Zero(3, 1), Vector::Zero(1),
                                    HeadKind::binary_logit);
  SeededRng rng(1);
  PredictionSet preds = predict(model, random_matrix(rng, 4, 3));
  for (Index i = 0; i < 4; ++i) {
    CHECK(preds.probabilities(i, 0) == 0.5);
    CHECK(preds.predicted_labels[i] == 1);  // p >= threshold rule
  }
}

TEST_CASE("equal softmax logits give uniform probabilities and class 0") {
  ReadoutModel model = linear_model(Matrix::Zero(2, 3), Vector::Zero(3), HeadKind::softmax);
  SeededRng rng(2);
  PredictionSet preds = predict(model, random_matrix(rng, 3, 2));
  for (Index i = 0; i < 3; ++i) {
    for (Index k = 0; k < 3; ++k)
      CHECK(preds.probabilities(i, k) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(preds.predicted_labels[i] == 0);  // lowest index wins ties
    CHECK(preds.probabilities.row(i).sum() == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("hand-computed one-hidden-unit forward pass") {
  ReadoutModel model;
  model.weights = {Matrix::Constant(1, 1, 0.8), Matrix::Constant(1, 1, -1.5)};
  model.biases = {Vector::Constant(1, 0.2), Vector::Constant(1, 0.4)};
  model.head = HeadKind::binary_logit;

  Matrix x(1, 1);
  x << 1.25;
  double hidden = std::max(0.8 * 1.25 + 0.2, 0.0);
  double logit = -1.5 * hidden + 0.4;
  double expected = 1.0 / (1.0 + std::exp(-logit));
  PredictionSet preds = predict(model, x);
  CHECK(preds.probabilities(0, 0) == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("training is deterministic for a fixed seed") {
  SeededRng rng(4242);
  Matrix X_train = random_matrix(rng, 50, 5);
  Matrix X_val = random_matrix(rng, 20, 5);
  std::vector<int> y_train, y_val;
  for (Index i = 0; i < 50; ++i) y_train.push_back(X_train(i, 0) > 0 ? 1 : 0);
  for (Index i = 0; i < 20; ++i) y_val.push_back(X_val(i, 0) > 0 ? 1 : 0);

  TrainConfig config;
  config.hidden_dims = {16, 16};
  config.max_epochs = 10;
  config.patience = 10;
  config.seed = 31;
  ReadoutModel a =
      train_readout(X_train, y_train, X_val, y_val, HeadKind::binary_logit, 2, config);
  ReadoutModel b =
      train_readout(X_train, y_train, X_val, y_val, HeadKind::binary_logit, 2, config);
  REQUIRE(a.weights.size() == b.weights.size());
  for (std::size_t l = 0; l < a.weights.size(); ++l) {
    CHECK(a.weights[l] == b.weights[l]);
    CHECK(a.biases[l] == b.biases[l]);
  }
}

TEST_CASE("training rejects degenerate inputs") {
  SeededRng rng(5);
  Matrix X = random_matrix(rng, 10, 3);
  std::vector<int> ones(10, 1);
  std::vector<int> mixed(10, 0);
  mixed[0] = 1;
  TrainConfig config;
  config.hidden_dims = {4};
  CHECK_THROWS_AS(
      train_readout(X, ones, X, ones, HeadKind::binary_logit, 2, config), DegenerateLabels);
  CHECK_THROWS_AS(train_readout(Matrix(0, 3), {}, X, mixed, HeadKind::binary_logit, 2, config),
                  InvalidInput);

  TrainConfig bad = config;
  bad.patience = 500;  // > max_epochs
  CHECK_THROWS_AS(train_readout(X, mixed, X, mixed, HeadKind::binary_logit, 2, bad),
                  InvalidConfig);
}

TEST_CASE("training diverges loudly on overflowing activations") {
  Matrix X(2, 1);
  X << 1e308, -1e308;
  std::vector<int> y{1, 0};
  TrainConfig config;
  config.hidden_dims = {4};
  config.max_epochs = 3;
  config.patience = 3;
  CHECK_THROWS_AS(train_readout(X, y, X, y, HeadKind::binary_logit, 2, config),
                  TrainingDiverged);
}

TEST_CASE("gradient check: binary head, 5 samples x 4 features") {
  SeededRng rng(6);
  Matrix X = random_matrix(rng, 5, 4);
  std::vector<int> y{1, 0, 1, 1, 0};
  TrainConfig config;
  config.hidden_dims = {6, 5};
  config.max_epochs = 1;
  config.patience = 1;
  config.dropout_rate = 0.0;
  ReadoutModel model =
      train_readout(X, y, X, y, HeadKind::binary_logit, 2, config);  // any weights work
  CHECK(max_relative_gradient_error(model, X, y, Vector()) < 1e-4);
  Vector weighted(2);
  weighted << 0.4, 1.6;
  CHECK(max_relative_gradient_error(model, X, y, weighted) < 1e-4);
}

TEST_CASE("gradient check: three-class head with class weights, 6 x 4") {
  SeededRng rng(8);
  Matrix X = random_matrix(rng, 6, 4);
  std::vector<int> y{0, 1, 2, 1, 0, 2};
  TrainConfig config;
  config.hidden_dims = {5};
  config.max_epochs = 1;
  config.patience = 1;
  config.dropout_rate = 0.0;
  ReadoutModel model = train_readout(X, y, X, y, HeadKind::softmax, 3, config);
  Vector weights(3);
  weights << 1.3, 0.7, 2.0;
  CHECK(max_relative_gradient_error(model, X, y, weights) < 1e-4);
}

TEST_CASE("uniform class weights reproduce the unweighted loss exactly") {
  SeededRng rng(10);
  Matrix X = random_matrix(rng, 8, 3);
  std::vector<int> y{0, 1, 2, 0, 1, 2, 0, 1};
  TrainConfig config;
  config.hidden_dims = {4};
  config.max_epochs = 1;
  config.patience = 1;
  ReadoutModel model = train_readout(X, y, X, y, HeadKind::softmax, 3, config);
  double unweighted = readout_loss_gradients(model, X, y, Vector()).loss;
  double uniform = readout_loss_gradients(model, X, y, Vector::Ones(3)).loss;
  CHECK(unweighted == uniform);
}

TEST_CASE("early stopping returns the best validation epoch") {
  SeededRng rng(12);
  Matrix X_train = random_matrix(rng, 80, 6);
  Matrix X_val = random_matrix(rng, 30, 6);
  std::vector<int> y_train, y_val;
  for (Index i = 0; i < 80; ++i)
    y_train.push_back(X_train(i, 0) + 0.5 * X_train(i, 1) > 0 ? 1 : 0);
  for (Index i = 0; i < 30; ++i)
    y_val.push_back(X_val(i, 0) + 0.5 * X_val(i, 1) > 0 ? 1 : 0);

  TrainConfig config;
  config.hidden_dims = {8};
  config.max_epochs = 30;
  config.patience = 5;
  config.seed = 77;
  TrainResult result = train_readout_detailed(X_train, y_train, X_val, y_val,
                                              HeadKind::binary_logit, 2, config);
  REQUIRE_FALSE(result.val_metric_history.empty());
  double best_seen = *std::max_element(result.val_metric_history.begin(),
                                       result.val_metric_history.end());
  CHECK(result.best_val_metric == best_seen);
  // The returned weights reproduce the best metric on the validation split.
  PredictionSet preds = predict(result.model, X_val);
  CHECK(binary_f1(y_val, preds.predicted_labels) == result.best_val_metric);
}

TEST_CASE("select_threshold prefers the smallest F1-optimal candidate") {
  // Linear single-logit model: p = sigmoid(x).
  ReadoutModel model =
      linear_model(Matrix::Constant(1, 1, 1.0), Vector::Zero(1), HeadKind::binary_logit);
  double x_neg = std::log(0.1 / 0.9);  // sigmoid -> 0.1
  double x_pos = std::log(0.9 / 0.1);  // sigmoid -> 0.9
  Matrix X(2, 1);
  X << x_neg, x_pos;
  std::vector<int> y{0, 1};
  CHECK(select_threshold(model, X, y) == 0.5);
  CHECK(model.threshold == 0.5);
}

TEST_CASE("select_threshold with one shared probability picks that value") {
  // Constant logit below zero: every probability equals sigmoid(-0.8) < 0.5,
  // so only the shared value predicts all-positive.
  ReadoutModel model =
      linear_model(Matrix::Zero(1, 1), Vector::Constant(1, -0.8), HeadKind::binary_logit);
  Matrix X(4, 1);
  X << 1, 2, 3, 4;
  std::vector<int> y{1, 0, 1, 1};
  double expected = 1.0 / (1.0 + std::exp(0.8));
  double chosen = select_threshold(model, X, y);
  CHECK(chosen == doctest::Approx(expected).epsilon(1e-12));
  PredictionSet preds = predict(model, X);
  CHECK(binary_f1(y, preds.predicted_labels) == binary_f1(y, {1, 1, 1, 1}));
}

TEST_CASE("select_threshold never loses to any candidate threshold") {
  SeededRng rng(14);
  ReadoutModel model = linear_model(random_matrix(rng, 3, 1), Vector::Zero(1),
                                    HeadKind::binary_logit);
  Matrix X = random_matrix(rng, 40, 3);
  std::vector<int> y;
  for (Index i = 0; i < 40; ++i) y.push_back(rng.next_below(2) == 1 ? 1 : 0);
  double chosen = select_threshold(model, X, y);

  PredictionSet preds = predict(model, X);
  std::vector<int> decisions(y.size());
  for (Index i = 0; i < preds.probabilities.rows(); ++i)
    decisions[i] = preds.probabilities(i, 0) >= chosen ? 1 : 0;
  double chosen_f1 = binary_f1(y, decisions);

  // Exhaustive sweep over every observed probability plus 0.5.
  std::vector<double> candidates(preds.probabilities.data(),
                                 preds.probabilities.data() + preds.probabilities.rows());
  candidates.push_back(0.5);
  for (double t : candidates) {
    for (Index i = 0; i < preds.probabilities.rows(); ++i)
      decisions[i] = preds.probabilities(i, 0) >= t ? 1 : 0;
    CHECK(chosen_f1 >= binary_f1(y, decisions));
  }
}

TEST_CASE("select_threshold error paths") {
  ReadoutModel softmax_model =
      linear_model(Matrix::Zero(2, 3), Vector::Zero(3), HeadKind::softmax);
  Matrix X = Matrix::Zero(2, 2);
  CHECK_THROWS_AS(select_threshold(softmax_model, X, {0, 1}), InvalidInput);

  ReadoutModel binary =
      linear_model(Matrix::Zero(2, 1), Vector::Zero(1), HeadKind::binary_logit);
  CHECK_THROWS_AS(select_threshold(binary, X, {1, 1}), DegenerateLabels);
}

TEST_CASE("predict validates dimensions") {
  ReadoutModel model = linear_model(Matrix::Zero(3, 1), Vector::Zero(1),
                                    HeadKind::binary_logit);
  CHECK_THROWS_AS(predict(model, Matrix::Zero(2, 4)), DimensionError);
}

TEST_CASE("readout model serialization round trips bit-exactly") {
  SeededRng rng(16);
  ReadoutModel model;
  model.weights = {random_matrix(rng, 4, 6), random_matrix(rng, 6, 2)};
  model.biases = {Vector::Ones(6) * 0.1, Vector::Zero(2)};
  model.head = HeadKind::softmax;
  model.dropout_rate = 0.5;
  model.threshold = 0.37;
  model.train_seed = 12345;

  auto dir = std::filesystem::path("readout_test_tmp");
  std::filesystem::create_directories(dir);
  auto path = dir / "model.rdot";
  save_readout_model(model, path);
  ReadoutModel loaded = load_readout_model(path);
  CHECK(loaded.head == model.head);
  CHECK(loaded.dropout_rate == model.dropout_rate);
  CHECK(loaded.threshold == model.threshold);
  CHECK(loaded.train_seed == model.train_seed);
  REQUIRE(loaded.weights.size() == 2);
  CHECK(loaded.weights[0] == model.weights[0]);
  CHECK(loaded.weights[1] == model.weights[1]);
  CHECK(loaded.biases[0] == model.biases[0]);
}

TEST_CASE("prediction set CSV round trips") {
  PredictionSet preds;
  preds.ids = {"a", "b", "c"};
  preds.true_labels = {1, 0, 1};
  preds.predicted_labels = {1, 1, 0};
  preds.probabilities.resize(3, 1);
  preds.probabilities << 0.9, 0.6, 0.2;
  preds.threshold = 0.55;
  preds.model_tag = "probe";

  auto dir = std::filesystem::path("readout_test_tmp");
  std::filesystem::create_directories(dir);
  auto path = dir / "preds.csv";
  save_prediction_set(preds, path);
  PredictionSet loaded = load_prediction_set(path, "probe");
  CHECK(loaded.ids == preds.ids);
  CHECK(loaded.true_labels == preds.true_labels);
  CHECK(loaded.predicted_labels == preds.predicted_labels);
  CHECK(loaded.threshold == doctest::Approx(0.55));
  CHECK(loaded.model_tag == "probe");
  for (Index i = 0; i < 3; ++i)
    CHECK(loaded.probabilities(i, 0) ==
          doctest::Approx(preds.probabilities(i, 0)).epsilon(1e-6));
}
