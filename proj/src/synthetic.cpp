#include "anchorfuse/synthetic.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <map>

#include <json.hpp>

#include "anchorfuse/aggregation.hpp"
#include "anchorfuse/alignment.hpp"

namespace anchorfuse {

namespace {

using nlohmann::json;

void validate_spec(const SyntheticSpec& spec) {
  if (spec.n_docs < 10) throw InvalidSpec("synthetic: n_docs must be >= 10");
  if (spec.latent_dim < 1) throw InvalidSpec("synthetic: latent_dim must be >= 1");
  if (spec.view_dims.empty()) throw InvalidSpec("synthetic: need at least one view");
  for (Index d : spec.view_dims)
    if (d < spec.latent_dim)
      throw InvalidSpec("synthetic: every view dim must be >= latent_dim");
  if (spec.noise_std.size() != spec.view_dims.size())
    throw InvalidSpec("synthetic: noise_std length must match view_dims");
  for (double s : spec.noise_std)
    if (!(s >= 0.0)) throw InvalidSpec("synthetic: noise_std must be non-negative");
  if (!spec.view_names.empty() && spec.view_names.size() != spec.view_dims.size())
    throw InvalidSpec("synthetic: view_names length must match view_dims");
  if (spec.label_noise < 0.0 || spec.label_noise >= 1.0)
    throw InvalidSpec("synthetic: label_noise must be in [0, 1)");
  if (spec.label_weights && static_cast<Index>(spec.label_weights->size()) != spec.latent_dim)
    throw InvalidSpec("synthetic: label_weights length must equal latent_dim");
  if (spec.timestamp_step < 1) throw InvalidSpec("synthetic: timestamp_step must be >= 1");
}

std::string view_name(const SyntheticSpec& spec, std::size_t m) {
  if (!spec.view_names.empty()) return spec.view_names[m];
  return "enc" + std::to_string(m);
}

Matrix slice_rows(const Matrix& data, const std::vector<Index>& rows) {
  Matrix out(static_cast<Index>(rows.size()), data.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Index>(i)) = data.row(rows[i]);
  return out;
}

}  // namespace

SyntheticDataset generate(const SyntheticSpec& spec) {
  validate_spec(spec);
  SeededRng rng(spec.seed);
  const Index n = spec.n_docs;
  const Index k = spec.latent_dim;
  const auto n_views = spec.view_dims.size();

  Vector w(k);
  if (spec.label_weights) {
    for (Index j = 0; j < k; ++j) w[j] = (*spec.label_weights)[j];
    if (w.norm() == 0.0) throw InvalidSpec("synthetic: label_weights must be non-zero");
  } else {
    for (Index j = 0; j < k; ++j) w[j] = rng.next_normal();
    w.normalize();
  }

  std::vector<Matrix> view_maps(n_views);
  for (std::size_t m = 0; m < n_views; ++m) {
    // Resample until full column rank; Gaussian draws essentially always pass.
    for (int attempt = 0;; ++attempt) {
      Matrix A(spec.view_dims[m], k);
      for (Index idx = 0; idx < A.size(); ++idx) A.data()[idx] = rng.next_normal();
      if (Eigen::ColPivHouseholderQR<Matrix>(A).rank() == k) {
        view_maps[m] = std::move(A);
        break;
      }
      if (attempt >= 100)
        throw InvalidSpec("synthetic: could not draw a full-rank view map");
    }
  }

  Matrix latent(n, k);
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < k; ++j) latent(i, j) = rng.next_normal();

  std::vector<int> labels(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    int label = latent.row(i).dot(w) >= 0.0 ? 1 : 0;
    if (spec.label_noise > 0.0 && rng.next_double() < spec.label_noise) label = 1 - label;
    labels[i] = label;
  }

  std::vector<std::string> ids(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    char buf[24];
    std::snprintf(buf, sizeof(buf), "doc%06lld", static_cast<long long>(i));
    ids[i] = buf;
  }

  SyntheticDataset dataset;
  dataset.manifest.records.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    DocumentRecord rec;
    rec.id = ids[i];
    rec.timestamp = spec.start_timestamp + i * spec.timestamp_step;
    rec.label = labels[i];
    dataset.manifest.records.push_back(std::move(rec));
  }

  dataset.stores.reserve(n_views);
  for (std::size_t m = 0; m < n_views; ++m) {
    EmbeddingStore store;
    store.encoder_name = view_name(spec, m);
    store.row_ids = ids;
    store.matrix = latent * view_maps[m].transpose();
    if (spec.noise_std[m] > 0.0) {
      for (Index i = 0; i < n; ++i)
        for (Index j = 0; j < spec.view_dims[m]; ++j)
          store.matrix(i, j) += spec.noise_std[m] * rng.next_normal();
    }
    dataset.stores.push_back(std::move(store));
  }
  dataset.latent = std::move(latent);
  dataset.view_maps = std::move(view_maps);
  dataset.label_weights = std::move(w);
  return dataset;
}

SyntheticSpec load_synthetic_spec(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open synthetic spec: " + path.string());
  json obj;
  try {
    in >> obj;
  } catch (const json::exception& e) {
    throw FormatError(std::string("synthetic spec: ") + e.what());
  }

  SyntheticSpec spec;
  try {
    if (obj.contains("n_docs")) spec.n_docs = obj.at("n_docs").get<Index>();
    if (obj.contains("latent_dim")) spec.latent_dim = obj.at("latent_dim").get<Index>();
    if (obj.contains("view_dims"))
      spec.view_dims = obj.at("view_dims").get<std::vector<Index>>();
    if (obj.contains("view_names"))
      spec.view_names = obj.at("view_names").get<std::vector<std::string>>();
    if (obj.contains("noise_std")) {
      if (obj.at("noise_std").is_number()) {
        spec.noise_std.assign(spec.view_dims.size(), obj.at("noise_std").get<double>());
      } else {
        spec.noise_std = obj.at("noise_std").get<std::vector<double>>();
      }
    } else if (spec.view_dims.size() != spec.noise_std.size()) {
      spec.noise_std.assign(spec.view_dims.size(), 0.8);
    }
    if (obj.contains("label_noise")) spec.label_noise = obj.at("label_noise").get<double>();
    if (obj.contains("label_weights"))
      spec.label_weights = obj.at("label_weights").get<std::vector<double>>();
    if (obj.contains("seed")) spec.seed = obj.at("seed").get<std::uint64_t>();
    if (obj.contains("fractions")) {
      auto f = obj.at("fractions").get<std::vector<double>>();
      if (f.size() != 3) throw InvalidSpec("synthetic spec: fractions needs 3 entries");
      spec.fractions = {f[0], f[1], f[2]};
    }
    if (obj.contains("start_timestamp"))
      spec.start_timestamp = parse_iso8601(obj.at("start_timestamp").get<std::string>());
    if (obj.contains("timestamp_step"))
      spec.timestamp_step = obj.at("timestamp_step").get<std::int64_t>();
  } catch (const json::exception& e) {
    throw FormatError(std::string("synthetic spec: ") + e.what());
  }
  validate_spec(spec);
  return spec;
}

std::vector<BenchmarkRow> benchmark(const SyntheticSpec& spec,
                                    const BenchmarkOptions& options) {
  SyntheticDataset dataset = generate(spec);
  SplitAssignment splits = time_split(dataset.manifest.records, spec.fractions);

  std::map<std::string, Index> row_of;
  for (std::size_t i = 0; i < dataset.stores.front().row_ids.size(); ++i)
    row_of[dataset.stores.front().row_ids[i]] = static_cast<Index>(i);
  std::map<std::string, int> label_of;
  for (const auto& rec : dataset.manifest.records) label_of[rec.id] = *rec.label;

  auto rows_for = [&](const std::vector<std::string>& ids) {
    std::vector<Index> rows;
    rows.reserve(ids.size());
    for (const auto& id : ids) rows.push_back(row_of.at(id));
    return rows;
  };
  auto labels_for = [&](const std::vector<std::string>& ids) {
    std::vector<int> labels;
    labels.reserve(ids.size());
    for (const auto& id : ids) labels.push_back(label_of.at(id));
    return labels;
  };

  const auto train_rows = rows_for(splits.train_ids);
  const auto val_rows = rows_for(splits.val_ids);
  const auto test_rows = rows_for(splits.test_ids);
  const auto y_train = labels_for(splits.train_ids);
  const auto y_val = labels_for(splits.val_ids);
  const auto y_test = labels_for(splits.test_ids);

  std::string anchor = options.anchor.empty() ? dataset.stores.front().encoder_name
                                              : options.anchor;
  Index anchor_idx = -1;
  for (std::size_t m = 0; m < dataset.stores.size(); ++m)
    if (dataset.stores[m].encoder_name == anchor) anchor_idx = static_cast<Index>(m);
  if (anchor_idx < 0)
    throw ConfigError("benchmark: anchor '" + anchor + "' is not one of the views");

  // Train a readout on already-standardized features and score the test rows.
  auto evaluate = [&](const Matrix& train_X, const Matrix& val_X,
                      const Matrix& test_X) {
    ReadoutModel model = train_readout(train_X, y_train, val_X, y_val,
                                       HeadKind::binary_logit, 2, options.train);
    if (options.select_thresholds) select_threshold(model, val_X, y_val);
    PredictionSet preds = predict(model, test_X);
    preds.true_labels = y_test;
    return compute_metrics(preds);
  };

  std::vector<BenchmarkRow> rows;

  for (const auto& store : dataset.stores) {
    FusionModel single =
        fit_single_view_fusion(store.encoder_name, slice_rows(store.matrix, train_rows));
    rows.push_back({"single:" + store.encoder_name,
                    evaluate(single.featurize({slice_rows(store.matrix, train_rows)}),
                             single.featurize({slice_rows(store.matrix, val_rows)}),
                             single.featurize({slice_rows(store.matrix, test_rows)}))});
  }

  // Views ordered anchor first, then the remaining encoders.
  std::vector<const EmbeddingStore*> ordered{&dataset.stores[anchor_idx]};
  std::vector<std::string> source_order;
  for (const auto& store : dataset.stores) {
    if (store.encoder_name == anchor) continue;
    ordered.push_back(&store);
    source_order.push_back(store.encoder_name);
  }
  auto views_at = [&](const std::vector<Index>& split_rows) {
    std::vector<Matrix> views;
    views.reserve(ordered.size());
    for (const auto* store : ordered) views.push_back(slice_rows(store->matrix, split_rows));
    return views;
  };
  const auto train_views = views_at(train_rows);
  const auto val_views = views_at(val_rows);
  const auto test_views = views_at(test_rows);

  auto run_strategy = [&](FusionStrategy strategy) {
    FusionModel fusion;
    fusion.config.strategy = strategy;
    fusion.config.anchor_name = anchor;
    fusion.config.source_order = source_order;
    if (strategy == FusionStrategy::raw_concat) {
      for (const auto& view : train_views) fusion.raw_scalers.push_back(fit_scaler(view));
    } else {
      fusion.anchor_scaler = fit_scaler(train_views[0]);
      for (std::size_t s = 0; s < source_order.size(); ++s) {
        AlignmentMap map = fit_alignment(train_views[s + 1], train_views[0], options.alpha);
        map.source_name = source_order[s];
        map.anchor_name = anchor;
        fusion.maps.push_back(std::move(map));
      }
    }
    fusion.final_scaler = fit_final_scaler(fusion.fuse_views(train_views));
    return evaluate(fusion.featurize(train_views), fusion.featurize(val_views),
                    fusion.featurize(test_views));
  };

  if (dataset.stores.size() > 1) {
    rows.push_back({"raw_concat", run_strategy(FusionStrategy::raw_concat)});
    if (options.include_aligned_concat)
      rows.push_back({"aligned_concat", run_strategy(FusionStrategy::aligned_concat)});
  }
  rows.push_back({"aligned_mean", run_strategy(FusionStrategy::aligned_mean)});

  if (options.csv_path) {
    std::vector<MetricsRow> csv_rows;
    for (const auto& row : rows) csv_rows.push_back({row.config_label, "test", row.metrics});
    write_metrics_csv(*options.csv_path, csv_rows);
  }
  return rows;
}

}  // namespace anchorfuse
