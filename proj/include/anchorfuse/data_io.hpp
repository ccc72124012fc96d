#ifndef ANCHORFUSE_DATA_IO_HPP_
#define ANCHORFUSE_DATA_IO_HPP_

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "anchorfuse/numeric.hpp"

namespace anchorfuse {

enum class Split { train, val, test };

std::string split_name(Split s);
std::optional<Split> parse_split_name(const std::string& name);

// One manifest row. Label is either given directly or derived from the
// earnings figures; records resolvable to neither are marked excluded.
struct DocumentRecord {
  std::string id;
  std::int64_t timestamp = 0;  // UTC seconds since epoch
  std::optional<int> label;
  std::optional<double> reported_eps;
  std::optional<std::vector<double>> estimates;
  std::optional<Split> split_override;
  bool excluded = false;
};

// Optional first manifest line (an object without an "id" field). Declares
// class-name -> index mappings for string labels.
struct ManifestHeader {
  std::map<std::string, int> label_map;
};

struct Manifest {
  ManifestHeader header;
  std::vector<DocumentRecord> records;
};

struct EmbeddingStore {
  std::string encoder_name;
  Matrix matrix;  // N x d, rows aligned with row_ids
  std::vector<std::string> row_ids;
};

struct SplitAssignment {
  // Each list is in chronological (timestamp, id) order.
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
  std::vector<std::string> test_ids;
};

// --- timestamps ----------------------------------------------------------

// Accepts "YYYY-MM-DD" or "YYYY-MM-DDTHH:MM:SS[.fff][Z]"; always UTC.
std::int64_t parse_iso8601(const std::string& text);
std::string format_iso8601(std::int64_t epoch_seconds);

// --- labeling ------------------------------------------------------------

// Standardized unexpected earnings: (reported - mean(estimates)) divided by
// the sample standard deviation of the estimates. Returns 1 when the surprise
// is >= delta, 0 when <= -delta, and nullopt (excluded) in between.
std::optional<int> derive_sue_label(double reported_eps,
                                    const std::vector<double>& estimates,
                                    double delta);

// Fills in labels for every record: direct labels pass through, earnings
// figures go through derive_sue_label, anything unresolvable is excluded.
// A record carrying both a direct label and earnings figures is rejected.
void resolve_labels(std::vector<DocumentRecord>& records, double delta);

// --- splitting -----------------------------------------------------------

// Chronological prefix/middle/suffix split over non-excluded records. Sizes
// are floor(n * fraction) for train and val with the remainder as test.
// Records with a split override are honored before fractions apply.
SplitAssignment time_split(const std::vector<DocumentRecord>& manifest,
                           const std::array<double, 3>& fractions);

// --- manifest file -------------------------------------------------------

Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

// --- embedding store file ------------------------------------------------

enum class StoreDtype : std::uint8_t { f32 = 1, f64 = 2 };

// Binary layout: magic "EMBD", version u32, dtype u8, rows u64, cols u64,
// row-major values, then u32 id count followed by u16-length-prefixed ids.
// All integers little-endian.
void save_embedding_store(const EmbeddingStore& store,
                          const std::filesystem::path& path,
                          StoreDtype dtype = StoreDtype::f64);
EmbeddingStore load_embedding_store(const std::filesystem::path& path);

}  // namespace anchorfuse

#endif  // ANCHORFUSE_DATA_IO_HPP_
