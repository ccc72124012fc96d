#include "anchorfuse/alignment.hpp"

#include <cstring>
#include <fstream>

#include "binary_io.hpp"

namespace anchorfuse {

AlignmentMap fit_alignment(const Matrix& source_train, const Matrix& anchor_train,
                           double alpha) {
  if (source_train.rows() != anchor_train.rows())
    throw DimensionError("fit_alignment: source has " + std::to_string(source_train.rows()) +
                         " rows, anchor has " + std::to_string(anchor_train.rows()));
  if (source_train.rows() < 2)
    throw InvalidInput("fit_alignment: need at least two training rows");

  AlignmentMap map;
  map.alpha = alpha;
  map.source_scaler = fit_scaler(source_train);
  map.anchor_scaler = fit_scaler(anchor_train);
  Matrix source_std = apply_scaler(map.source_scaler, source_train);
  Matrix anchor_std = apply_scaler(map.anchor_scaler, anchor_train);
  map.W = ridge_solve(source_std, anchor_std, alpha);
  map.train_r2 = r_squared(anchor_std, source_std * map.W);
  return map;
}

Matrix apply_alignment(const AlignmentMap& map, const Matrix& source) {
  if (source.cols() != map.W.rows())
    throw DimensionError("apply_alignment: source has " + std::to_string(source.cols()) +
                         " columns, map expects " + std::to_string(map.W.rows()));
  return apply_scaler(map.source_scaler, source) * map.W;
}

std::vector<AlignmentQualityRow> report_alignment_quality(
    const std::vector<AlignmentMap>& maps) {
  if (maps.empty())
    throw EmptyInput("report_alignment_quality: no alignment maps");
  std::vector<AlignmentQualityRow> rows;
  rows.reserve(maps.size());
  for (const auto& map : maps)
    rows.push_back({map.source_name, map.anchor_name, map.train_r2});
  return rows;
}

void save_alignment_map(const AlignmentMap& map, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open alignment map for writing: " + path.string());
  io::put_bytes(out, "ALNM", 4);
  io::put_uint<std::uint32_t>(out, 1);
  io::put_string(out, map.source_name);
  io::put_string(out, map.anchor_name);
  io::put_f64(out, map.alpha);
  io::put_scaler(out, map.source_scaler);
  io::put_scaler(out, map.anchor_scaler);
  io::put_matrix(out, map.W);
  io::put_f64(out, map.train_r2);
  if (!out) throw FormatError("failed writing alignment map: " + path.string());
}

AlignmentMap load_alignment_map(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open alignment map: " + path.string());
  char magic[4];
  io::get_bytes(in, magic, 4, "magic");
  if (std::memcmp(magic, "ALNM", 4) != 0)
    throw FormatError("alignment map: bad magic bytes");
  auto version = io::get_uint<std::uint32_t>(in, "version");
  if (version != 1)
    throw FormatError("alignment map: unsupported version " + std::to_string(version));

  AlignmentMap map;
  map.source_name = io::get_string(in, "source name");
  map.anchor_name = io::get_string(in, "anchor name");
  map.alpha = io::get_f64(in, "alpha");
  map.source_scaler = io::get_scaler(in, "source scaler");
  map.anchor_scaler = io::get_scaler(in, "anchor scaler");
  map.W = io::get_matrix(in, "W");
  map.train_r2 = io::get_f64(in, "train r2");
  if (!map.W.allFinite())
    throw FormatError("alignment map: W contains non-finite values");
  return map;
}

}  // namespace anchorfuse
