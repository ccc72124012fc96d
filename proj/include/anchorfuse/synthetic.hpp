#ifndef ANCHORFUSE_SYNTHETIC_HPP_
#define ANCHORFUSE_SYNTHETIC_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "anchorfuse/data_io.hpp"
#include "anchorfuse/diagnostics.hpp"
#include "anchorfuse/readout.hpp"

namespace anchorfuse {

// Latent factor model: z_i ~ N(0, I_k), per-encoder views A_m z_i + noise,
// labels from the sign of w.z_i with independent flip noise. Deterministic
// per (spec, seed).
struct SyntheticSpec {
  Index n_docs = 2000;
  Index latent_dim = 16;
  std::vector<Index> view_dims{48, 64, 56};
  std::vector<std::string> view_names;  // defaults to enc0, enc1, ...
  std::vector<double> noise_std{0.8, 0.8, 0.8};
  double label_noise = 0.05;
  std::optional<std::vector<double>> label_weights;  // defaults to a seeded unit vector
  std::uint64_t seed = 1;
  std::array<double, 3> fractions{0.7, 0.1, 0.2};
  std::int64_t start_timestamp = 1577836800;  // 2020-01-01T00:00:00Z
  std::int64_t timestamp_step = 3600;
};

struct SyntheticDataset {
  Manifest manifest;
  std::vector<EmbeddingStore> stores;  // one per view, rows in document order
  // Generator ground truth, kept for verification harnesses.
  Matrix latent;                  // n x k
  std::vector<Matrix> view_maps;  // A_m, d_m x k
  Vector label_weights;           // w
};

SyntheticDataset generate(const SyntheticSpec& spec);

// JSON spec file mirroring the struct fields.
SyntheticSpec load_synthetic_spec(const std::filesystem::path& path);

// End-to-end comparison on one generated dataset: per-encoder readouts plus
// the raw_concat, aligned_concat, and aligned_mean strategies, all trained on
// the same time split and scored on the test rows.
struct BenchmarkOptions {
  double alpha = 10.0;
  TrainConfig train;
  std::string anchor;  // defaults to the first view
  bool include_aligned_concat = true;
  // Pick binary operating thresholds on the validation split; 0.5 otherwise.
  bool select_thresholds = true;
  std::optional<std::filesystem::path> csv_path;
};

struct BenchmarkRow {
  std::string config_label;
  MetricsSummary metrics;  // test split
};

std::vector<BenchmarkRow> benchmark(const SyntheticSpec& spec,
                                    const BenchmarkOptions& options);

}  // namespace anchorfuse

#endif  // ANCHORFUSE_SYNTHETIC_HPP_
