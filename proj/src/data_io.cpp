#include "anchorfuse/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace anchorfuse {

namespace {

using nlohmann::json;

// --- little-endian stream helpers ---

void put_bytes(std::ostream& out, const void* data, std::size_t n) {
  out.write(static_cast<const char*>(data), static_cast<std::streamsize>(n));
}

template <typename UInt>
void put_uint(std::ostream& out, UInt value) {
  unsigned char buf[sizeof(UInt)];
  for (std::size_t i = 0; i < sizeof(UInt); ++i)
    buf[i] = static_cast<unsigned char>((value >> (8 * i)) & 0xFF);
  put_bytes(out, buf, sizeof(UInt));
}

void get_bytes(std::istream& in, void* data, std::size_t n, const char* what) {
  in.read(static_cast<char*>(data), static_cast<std::streamsize>(n));
  if (static_cast<std::size_t>(in.gcount()) != n)
    throw FormatError(std::string("embedding store: truncated while reading ") + what);
}

template <typename UInt>
UInt get_uint(std::istream& in, const char* what) {
  unsigned char buf[sizeof(UInt)];
  get_bytes(in, buf, sizeof(UInt), what);
  UInt value = 0;
  for (std::size_t i = 0; i < sizeof(UInt); ++i)
    value |= static_cast<UInt>(buf[i]) << (8 * i);
  return value;
}

// Days since 1970-01-01 for a civil date (proleptic Gregorian).
std::int64_t days_from_civil(int y, unsigned m, unsigned d) {
  y -= m <= 2;
  const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
  const unsigned yoe = static_cast<unsigned>(y - era * 400);
  const unsigned doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
  const unsigned doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
  return era * 146097 + static_cast<std::int64_t>(doe) - 719468;
}

void civil_from_days(std::int64_t z, int& y, unsigned& m, unsigned& d) {
  z += 719468;
  const std::int64_t era = (z >= 0 ? z : z - 146096) / 146097;
  const unsigned doe = static_cast<unsigned>(z - era * 146097);
  const unsigned yoe = (doe - doe / 1460 + doe / 36524 - doe / 146096) / 365;
  const int yr = static_cast<int>(yoe) + static_cast<int>(era) * 400;
  const unsigned doy = doe - (365 * yoe + yoe / 4 - yoe / 100);
  const unsigned mp = (5 * doy + 2) / 153;
  d = doy - (153 * mp + 2) / 5 + 1;
  m = mp + (mp < 10 ? 3 : -9);
  y = yr + (m <= 2);
}

}  // namespace

std::string split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "train";
}

std::optional<Split> parse_split_name(const std::string& name) {
  if (name == "train") return Split::train;
  if (name == "val") return Split::val;
  if (name == "test") return Split::test;
  return std::nullopt;
}

std::int64_t parse_iso8601(const std::string& text) {
  int y = 0, mo = 0, d = 0, h = 0, mi = 0, s = 0;
  char sep = 0;
  int fields = std::sscanf(text.c_str(), "%d-%d-%d%c%d:%d:%d", &y, &mo, &d, &sep, &h, &mi, &s);
  bool ok = false;
  if (fields == 3) {
    ok = true;
  } else if (fields == 7 && (sep == 'T' || sep == ' ')) {
    ok = h >= 0 && h < 24 && mi >= 0 && mi < 60 && s >= 0 && s <= 60;
  }
  if (!ok || mo < 1 || mo > 12 || d < 1 || d > 31)
    throw FormatError("unparseable ISO-8601 timestamp: '" + text + "'");
  return days_from_civil(y, static_cast<unsigned>(mo), static_cast<unsigned>(d)) * 86400 +
         h * 3600 + mi * 60 + s;
}

std::string format_iso8601(std::int64_t epoch_seconds) {
  std::int64_t days = epoch_seconds / 86400;
  std::int64_t rem = epoch_seconds % 86400;
  if (rem < 0) {
    rem += 86400;
    days -= 1;
  }
  int y;
  unsigned mo, d;
  civil_from_days(days, y, mo, d);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02uT%02lld:%02lld:%02lldZ", y, mo, d,
                static_cast<long long>(rem / 3600), static_cast<long long>((rem / 60) % 60),
                static_cast<long long>(rem % 60));
  return buf;
}

std::optional<int> derive_sue_label(double reported_eps,
                                    const std::vector<double>& estimates,
                                    double delta) {
  if (estimates.size() < 2)
    throw InsufficientEstimates("derive_sue_label: need at least two analyst estimates");
  if (!(delta > 0.0))
    throw InvalidInput("derive_sue_label: delta must be positive");
  if (!std::isfinite(reported_eps))
    throw InvalidInput("derive_sue_label: non-finite reported EPS");

  const auto n = static_cast<double>(estimates.size());
  Vector values = Eigen::Map<const Vector>(estimates.data(),
                                           static_cast<Index>(estimates.size()));
  if (!values.allFinite())
    throw InvalidInput("derive_sue_label: non-finite estimate");
  double mean = pairwise_sum(values) / n;
  Vector sq = (values.array() - mean).square();
  // Sample standard deviation: forecasts are a sample of analyst opinion.
  double std_dev = std::sqrt(pairwise_sum(sq) / (n - 1.0));
  if (std_dev == 0.0)
    throw DegenerateEstimates("derive_sue_label: analyst estimates have zero dispersion");

  double es = (reported_eps - mean) / std_dev;
  if (es >= delta) return 1;
  if (es <= -delta) return 0;
  return std::nullopt;  // immaterial surprise
}

void resolve_labels(std::vector<DocumentRecord>& records, double delta) {
  for (auto& rec : records) {
    bool has_earnings = rec.reported_eps.has_value() && rec.estimates.has_value();
    if (rec.label.has_value() && has_earnings)
      throw ConsistencyError("record '" + rec.id +
                             "' carries both a direct label and earnings figures");
    if (rec.label.has_value()) {
      rec.excluded = false;
    } else if (has_earnings) {
      auto label = derive_sue_label(*rec.reported_eps, *rec.estimates, delta);
      rec.label = label;
      rec.excluded = !label.has_value();
    } else {
      rec.excluded = true;
    }
  }
}

SplitAssignment time_split(const std::vector<DocumentRecord>& manifest,
                           const std::array<double, 3>& fractions) {
  for (double f : fractions)
    if (!(f > 0.0)) throw InvalidInput("time_split: fractions must be positive");
  if (std::abs(fractions[0] + fractions[1] + fractions[2] - 1.0) > 1e-9)
    throw InvalidInput("time_split: fractions must sum to 1");

  std::vector<const DocumentRecord*> included;
  for (const auto& rec : manifest)
    if (!rec.excluded) included.push_back(&rec);
  if (included.empty())
    throw EmptyDataset("time_split: every record is excluded");
  if (included.size() < 3)
    throw InvalidInput("time_split: need at least three non-excluded records");

  auto chronological = [](const DocumentRecord* a, const DocumentRecord* b) {
    if (a->timestamp != b->timestamp) return a->timestamp < b->timestamp;
    return a->id < b->id;
  };
  std::sort(included.begin(), included.end(), chronological);

  std::vector<const DocumentRecord*> automatic;
  std::vector<std::pair<const DocumentRecord*, Split>> assigned;
  for (const auto* rec : included) {
    if (rec->split_override)
      assigned.emplace_back(rec, *rec->split_override);
    else
      automatic.push_back(rec);
  }

  const auto n = static_cast<double>(automatic.size());
  auto n_train = static_cast<std::size_t>(std::floor(n * fractions[0]));
  auto n_val = static_cast<std::size_t>(std::floor(n * fractions[1]));
  for (std::size_t i = 0; i < automatic.size(); ++i) {
    Split s = i < n_train ? Split::train : (i < n_train + n_val ? Split::val : Split::test);
    assigned.emplace_back(automatic[i], s);
  }

  std::sort(assigned.begin(), assigned.end(),
            [&](const auto& a, const auto& b) { return chronological(a.first, b.first); });

  SplitAssignment out;
  for (const auto& [rec, s] : assigned) {
    switch (s) {
      case Split::train: out.train_ids.push_back(rec->id); break;
      case Split::val: out.val_ids.push_back(rec->id); break;
      case Split::test: out.test_ids.push_back(rec->id); break;
    }
  }
  return out;
}

Manifest read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open manifest: " + path.string());

  Manifest manifest;
  std::set<std::string> seen_ids;
  std::string line;
  std::size_t line_no = 0;
  bool first_content_line = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json obj;
    try {
      obj = json::parse(line);
    } catch (const json::exception& e) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!obj.is_object())
      throw FormatError("manifest line " + std::to_string(line_no) + ": expected an object");

    if (!obj.contains("id")) {
      if (!first_content_line)
        throw FormatError("manifest line " + std::to_string(line_no) +
                          ": record is missing 'id'");
      if (obj.contains("label_map")) {
        for (auto& [name, idx] : obj.at("label_map").items()) {
          if (!idx.is_number_integer())
            throw FormatError("manifest header: label_map values must be integers");
          manifest.header.label_map[name] = idx.get<int>();
        }
      }
      first_content_line = false;
      continue;
    }
    first_content_line = false;

    DocumentRecord rec;
    try {
      if (!obj.at("id").is_string())
        throw FormatError("manifest line " + std::to_string(line_no) + ": 'id' must be a string");
      rec.id = obj.at("id").get<std::string>();
      rec.timestamp = parse_iso8601(obj.at("timestamp").get<std::string>());
      if (obj.contains("label")) {
        const auto& label = obj.at("label");
        if (label.is_number_integer()) {
          rec.label = label.get<int>();
        } else if (label.is_string()) {
          auto it = manifest.header.label_map.find(label.get<std::string>());
          if (it == manifest.header.label_map.end())
            throw FormatError("manifest line " + std::to_string(line_no) +
                              ": label '" + label.get<std::string>() +
                              "' not declared in the header label_map");
          rec.label = it->second;
        } else {
          throw FormatError("manifest line " + std::to_string(line_no) +
                            ": 'label' must be an integer or mapped string");
        }
      }
      if (obj.contains("reported_eps"))
        rec.reported_eps = obj.at("reported_eps").get<double>();
      if (obj.contains("estimates"))
        rec.estimates = obj.at("estimates").get<std::vector<double>>();
      if (obj.contains("split")) {
        auto s = parse_split_name(obj.at("split").get<std::string>());
        if (!s)
          throw FormatError("manifest line " + std::to_string(line_no) +
                            ": unknown split override");
        rec.split_override = s;
      }
    } catch (const json::exception& e) {
      throw FormatError("manifest line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!seen_ids.insert(rec.id).second)
      throw ConsistencyError("manifest: duplicate id '" + rec.id + "'");
    manifest.records.push_back(std::move(rec));
  }
  return manifest;
}

void write_manifest(const std::filesystem::path& path, const Manifest& manifest) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open manifest for writing: " + path.string());
  if (!manifest.header.label_map.empty()) {
    json header;
    header["label_map"] = manifest.header.label_map;
    out << header.dump() << "\n";
  }
  for (const auto& rec : manifest.records) {
    json obj;
    obj["id"] = rec.id;
    obj["timestamp"] = format_iso8601(rec.timestamp);
    if (rec.label) obj["label"] = *rec.label;
    if (rec.reported_eps) obj["reported_eps"] = *rec.reported_eps;
    if (rec.estimates) obj["estimates"] = *rec.estimates;
    if (rec.split_override) obj["split"] = split_name(*rec.split_override);
    out << obj.dump() << "\n";
  }
  if (!out) throw FormatError("failed writing manifest: " + path.string());
}

void save_embedding_store(const EmbeddingStore& store,
                          const std::filesystem::path& path,
                          StoreDtype dtype) {
  const auto rows = store.matrix.rows();
  const auto cols = store.matrix.cols();
  if (rows < 1 || cols < 1)
    throw InvalidInput("save_embedding_store: dimensions must be >= 1");
  if (store.row_ids.size() != static_cast<std::size_t>(rows))
    throw ConsistencyError("save_embedding_store: row_ids length does not match rows");
  if (!store.matrix.allFinite())
    throw InvalidInput("save_embedding_store: matrix contains non-finite values");

  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open store for writing: " + path.string());
  put_bytes(out, "EMBD", 4);
  put_uint<std::uint32_t>(out, 1);
  put_uint<std::uint8_t>(out, static_cast<std::uint8_t>(dtype));
  put_uint<std::uint64_t>(out, static_cast<std::uint64_t>(rows));
  put_uint<std::uint64_t>(out, static_cast<std::uint64_t>(cols));

  if (dtype == StoreDtype::f64) {
    std::vector<double> buf(static_cast<std::size_t>(rows) * cols);
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j)
        buf[static_cast<std::size_t>(i) * cols + j] = store.matrix(i, j);
    put_bytes(out, buf.data(), buf.size() * sizeof(double));
  } else {
    std::vector<float> buf(static_cast<std::size_t>(rows) * cols);
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < cols; ++j)
        buf[static_cast<std::size_t>(i) * cols + j] = static_cast<float>(store.matrix(i, j));
    put_bytes(out, buf.data(), buf.size() * sizeof(float));
  }

  put_uint<std::uint32_t>(out, static_cast<std::uint32_t>(store.row_ids.size()));
  for (const auto& id : store.row_ids) {
    if (id.size() > 0xFFFF)
      throw InvalidInput("save_embedding_store: id longer than 65535 bytes");
    put_uint<std::uint16_t>(out, static_cast<std::uint16_t>(id.size()));
    put_bytes(out, id.data(), id.size());
  }
  if (!out) throw FormatError("failed writing store: " + path.string());
}

EmbeddingStore load_embedding_store(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open store: " + path.string());

  char magic[4];
  get_bytes(in, magic, 4, "magic");
  if (std::memcmp(magic, "EMBD", 4) != 0)
    throw FormatError("embedding store: bad magic bytes");
  auto version = get_uint<std::uint32_t>(in, "version");
  if (version != 1)
    throw FormatError("embedding store: unsupported version " + std::to_string(version));
  auto dtype = get_uint<std::uint8_t>(in, "dtype");
  if (dtype != 1 && dtype != 2)
    throw FormatError("embedding store: unknown dtype code " + std::to_string(dtype));
  auto rows = get_uint<std::uint64_t>(in, "rows");
  auto cols = get_uint<std::uint64_t>(in, "cols");
  if (rows < 1 || cols < 1)
    throw FormatError("embedding store: dimensions must be >= 1");

  EmbeddingStore store;
  store.encoder_name = path.stem().string();
  store.matrix.resize(static_cast<Index>(rows), static_cast<Index>(cols));
  const std::size_t count = static_cast<std::size_t>(rows) * cols;
  if (dtype == 2) {
    std::vector<double> buf(count);
    get_bytes(in, buf.data(), count * sizeof(double), "float64 values");
    for (std::uint64_t i = 0; i < rows; ++i)
      for (std::uint64_t j = 0; j < cols; ++j)
        store.matrix(static_cast<Index>(i), static_cast<Index>(j)) = buf[i * cols + j];
  } else {
    std::vector<float> buf(count);
    get_bytes(in, buf.data(), count * sizeof(float), "float32 values");
    for (std::uint64_t i = 0; i < rows; ++i)
      for (std::uint64_t j = 0; j < cols; ++j)
        store.matrix(static_cast<Index>(i), static_cast<Index>(j)) =
            static_cast<double>(buf[i * cols + j]);
  }
  if (!store.matrix.allFinite())
    throw FormatError("embedding store: payload contains non-finite values");

  auto id_count = get_uint<std::uint32_t>(in, "id count");
  if (id_count != rows)
    throw ConsistencyError("embedding store: id count " + std::to_string(id_count) +
                           " disagrees with row count " + std::to_string(rows));
  store.row_ids.reserve(id_count);
  for (std::uint32_t i = 0; i < id_count; ++i) {
    auto len = get_uint<std::uint16_t>(in, "id length");
    std::string id(len, '\0');
    if (len > 0) get_bytes(in, id.data(), len, "id bytes");
    store.row_ids.push_back(std::move(id));
  }
  if (in.peek() != std::char_traits<char>::eof())
    throw FormatError("embedding store: trailing bytes after id block");
  return store;
}

}  // namespace anchorfuse
