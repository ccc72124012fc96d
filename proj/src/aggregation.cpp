#include "anchorfuse/aggregation.hpp"

#include <cstring>
#include <fstream>

#include "binary_io.hpp"

namespace anchorfuse {

std::string fusion_strategy_name(FusionStrategy s) {
  switch (s) {
    case FusionStrategy::aligned_mean: return "aligned_mean";
    case FusionStrategy::aligned_concat: return "aligned_concat";
    case FusionStrategy::raw_concat: return "raw_concat";
  }
  return "aligned_mean";
}

std::optional<FusionStrategy> parse_fusion_strategy(const std::string& name) {
  if (name == "aligned_mean") return FusionStrategy::aligned_mean;
  if (name == "aligned_concat") return FusionStrategy::aligned_concat;
  if (name == "raw_concat") return FusionStrategy::raw_concat;
  return std::nullopt;
}

Matrix fuse(const Matrix& anchor_emb, const std::vector<Matrix>& aligned_embs,
            const FusionConfig& config) {
  const Index rows = anchor_emb.rows();
  for (const auto& view : aligned_embs)
    if (view.rows() != rows)
      throw DimensionError("fuse: views disagree on row count");

  if (config.strategy == FusionStrategy::aligned_mean) {
    const Index cols = anchor_emb.cols();
    Matrix sum = anchor_emb;
    for (const auto& view : aligned_embs) {
      if (view.cols() != cols)
        throw DimensionError("fuse: aligned_mean requires equal column counts");
      sum += view;
    }
    return sum / static_cast<double>(1 + aligned_embs.size());
  }

  if (aligned_embs.empty())
    throw InvalidConfig("fuse: " + fusion_strategy_name(config.strategy) +
                        " needs at least one source view");
  Index total_cols = anchor_emb.cols();
  for (const auto& view : aligned_embs) total_cols += view.cols();
  Matrix out(rows, total_cols);
  out.leftCols(anchor_emb.cols()) = anchor_emb;
  Index offset = anchor_emb.cols();
  for (const auto& view : aligned_embs) {
    out.middleCols(offset, view.cols()) = view;
    offset += view.cols();
  }
  return out;
}

StandardScaler fit_final_scaler(const Matrix& train_fused) {
  return fit_scaler(train_fused);
}

Matrix apply_final(const StandardScaler& scaler, const Matrix& fused) {
  return apply_scaler(scaler, fused);
}

Matrix FusionModel::fuse_views(const std::vector<Matrix>& views) const {
  if (views.size() != config.source_order.size() + 1)
    throw ConsistencyError("FusionModel: expected " +
                           std::to_string(config.source_order.size() + 1) +
                           " views, got " + std::to_string(views.size()));

  if (config.strategy == FusionStrategy::raw_concat) {
    if (raw_scalers.size() != views.size())
      throw ConsistencyError("FusionModel: missing per-encoder scalers for raw_concat");
    Matrix anchor_std = apply_scaler(raw_scalers[0], views[0]);
    std::vector<Matrix> standardized;
    standardized.reserve(views.size() - 1);
    for (std::size_t i = 1; i < views.size(); ++i)
      standardized.push_back(apply_scaler(raw_scalers[i], views[i]));
    return fuse(anchor_std, standardized, config);
  }

  if (maps.size() != config.source_order.size())
    throw ConsistencyError("FusionModel: missing alignment maps");
  Matrix anchor_std = apply_scaler(anchor_scaler, views[0]);
  std::vector<Matrix> aligned;
  aligned.reserve(maps.size());
  for (std::size_t i = 0; i < maps.size(); ++i)
    aligned.push_back(apply_alignment(maps[i], views[i + 1]));
  return fuse(anchor_std, aligned, config);
}

Matrix FusionModel::featurize(const std::vector<Matrix>& views) const {
  return apply_final(final_scaler, fuse_views(views));
}

FusionModel fit_single_view_fusion(const std::string& encoder, const Matrix& train_rows) {
  FusionModel fusion;
  fusion.config.strategy = FusionStrategy::aligned_mean;
  fusion.config.anchor_name = encoder;
  fusion.anchor_scaler = fit_scaler(train_rows);
  fusion.final_scaler = fit_final_scaler(fusion.fuse_views({train_rows}));
  return fusion;
}

void save_fusion_model(const FusionModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open fusion model for writing: " + path.string());
  io::put_bytes(out, "FUSE", 4);
  io::put_uint<std::uint32_t>(out, 1);
  io::put_uint<std::uint8_t>(out, static_cast<std::uint8_t>(model.config.strategy));
  io::put_string(out, model.config.anchor_name);
  io::put_uint<std::uint32_t>(out,
                              static_cast<std::uint32_t>(model.config.source_order.size()));
  for (const auto& name : model.config.source_order) io::put_string(out, name);
  io::put_scaler(out, model.anchor_scaler);
  io::put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(model.raw_scalers.size()));
  for (const auto& scaler : model.raw_scalers) io::put_scaler(out, scaler);
  io::put_scaler(out, model.final_scaler);
  if (!out) throw FormatError("failed writing fusion model: " + path.string());
}

FusionModel load_fusion_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open fusion model: " + path.string());
  char magic[4];
  io::get_bytes(in, magic, 4, "magic");
  if (std::memcmp(magic, "FUSE", 4) != 0)
    throw FormatError("fusion model: bad magic bytes");
  auto version = io::get_uint<std::uint32_t>(in, "version");
  if (version != 1)
    throw FormatError("fusion model: unsupported version " + std::to_string(version));

  FusionModel model;
  auto strategy = io::get_uint<std::uint8_t>(in, "strategy");
  if (strategy > 2) throw FormatError("fusion model: unknown strategy code");
  model.config.strategy = static_cast<FusionStrategy>(strategy);
  model.config.anchor_name = io::get_string(in, "anchor name");
  auto n_sources = io::get_uint<std::uint32_t>(in, "source count");
  for (std::uint32_t i = 0; i < n_sources; ++i)
    model.config.source_order.push_back(io::get_string(in, "source name"));
  model.anchor_scaler = io::get_scaler(in, "anchor scaler");
  auto n_raw = io::get_uint<std::uint32_t>(in, "raw scaler count");
  for (std::uint32_t i = 0; i < n_raw; ++i)
    model.raw_scalers.push_back(io::get_scaler(in, "raw scaler"));
  model.final_scaler = io::get_scaler(in, "final scaler");
  return model;
}

}  // namespace anchorfuse
