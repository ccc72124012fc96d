#include "anchorfuse/pipeline.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <unordered_map>

#include <json.hpp>

#include "anchorfuse/alignment.hpp"
#include "anchorfuse/diagnostics.hpp"

namespace anchorfuse {

namespace {

using nlohmann::json;

std::uint64_t fnv1a_update(std::uint64_t hash, const char* data, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) {
    hash ^= static_cast<unsigned char>(data[i]);
    hash *= 1099511628211ULL;
  }
  return hash;
}

constexpr std::uint64_t kFnvOffset = 1469598103934665603ULL;

std::string render_hash(std::uint64_t hash) {
  char buf[24];
  std::snprintf(buf, sizeof(buf), "fnv64:%016llx", static_cast<unsigned long long>(hash));
  return buf;
}

// Honors the ANCHORFUSE_THREADS cap for Eigen's internal parallelism.
void apply_thread_cap() {
  const char* env = std::getenv("ANCHORFUSE_THREADS");
  if (env == nullptr) return;
  int threads = std::atoi(env);
  if (threads >= 1) Eigen::setNbThreads(threads);
}

// Advisory single-writer lock, removed on scope exit.
class RunLock {
 public:
  explicit RunLock(const RunPaths& paths) : path_(paths.lock_file()) {
    if (std::filesystem::exists(path_))
      throw Error("run directory is locked by another writer (remove " + path_.string() +
                  " if stale)");
    std::ofstream out(path_);
    if (!out) throw Error("cannot create lock file: " + path_.string());
    out << "anchorfuse\n";
  }
  ~RunLock() {
    std::error_code ec;
    std::filesystem::remove(path_, ec);
  }
  RunLock(const RunLock&) = delete;
  RunLock& operator=(const RunLock&) = delete;

 private:
  std::filesystem::path path_;
};

struct RunState {
  RunPaths paths;
  json data;
};

RunState load_state(const std::filesystem::path& run_dir, bool must_exist) {
  RunState state{RunPaths{run_dir}, json::object()};
  auto manifest_path = state.paths.run_manifest();
  if (std::filesystem::exists(manifest_path)) {
    std::ifstream in(manifest_path);
    try {
      in >> state.data;
    } catch (const json::exception& e) {
      throw FormatError("run manifest is corrupt: " + std::string(e.what()));
    }
  } else {
    if (must_exist)
      throw IncompleteRun("not an ingested run directory: " + run_dir.string());
    state.data["run_id"] = run_dir.filename().string();
  }
  if (!state.data.contains("run_id")) state.data["run_id"] = run_dir.filename().string();
  if (!state.data.contains("config")) state.data["config"] = json::object();
  if (!state.data.contains("stages")) state.data["stages"] = json::object();
  if (!state.data.contains("artifacts")) state.data["artifacts"] = json::object();
  return state;
}

void save_state(const RunState& state) {
  std::ofstream out(state.paths.run_manifest());
  if (!out)
    throw FormatError("cannot write run manifest: " + state.paths.run_manifest().string());
  out << state.data.dump(2) << "\n";
}

bool stage_is_current(const RunState& state, const std::string& stage,
                      const std::string& input_hash) {
  const auto& stages = state.data.at("stages");
  if (!stages.contains(stage)) return false;
  const auto& entry = stages.at(stage);
  if (!entry.value("done", false)) return false;
  if (entry.value("inputs", std::string()) != input_hash) return false;
  for (const auto& rel : entry.value("outputs", std::vector<std::string>()))
    if (!std::filesystem::exists(state.paths.root / rel)) return false;
  return true;
}

void mark_stage(RunState& state, const std::string& stage, const std::string& input_hash,
                const std::vector<std::string>& output_rel_paths) {
  json entry;
  entry["done"] = true;
  entry["inputs"] = input_hash;
  entry["outputs"] = output_rel_paths;
  state.data["stages"][stage] = entry;
  for (const auto& rel : output_rel_paths)
    state.data["artifacts"][rel] = hash_file(state.paths.root / rel);
}

void require_stage(const RunState& state, const std::string& stage, const char* hint) {
  const auto& stages = state.data.at("stages");
  if (!stages.contains(stage) || !stages.at(stage).value("done", false))
    throw IncompleteRun(std::string("stage '") + stage + "' has not completed; " + hint);
}

void validate_encoder_name(const std::string& name) {
  if (name.empty()) throw ConfigError("encoder name must not be empty");
  if (name == kFusedTag)
    throw ConfigError("encoder name '" + name + "' is reserved for the fused readout");
  for (char c : name)
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '.' && c != '_' && c != '-')
      throw ConfigError("encoder name '" + name + "' contains unsupported characters");
}

std::vector<std::string> state_encoders(const RunState& state) {
  return state.data.at("encoders").get<std::vector<std::string>>();
}

// --- run dataset -----------------------------------------------------------

struct RunDataset {
  std::vector<DocumentRecord> records;  // canonical (timestamp, id) order
  std::array<std::vector<std::string>, 3> split_ids;
  std::map<std::string, int> label_of;
  int num_classes = 2;
};

RunDataset load_run_dataset(const RunPaths& paths) {
  RunDataset dataset;
  Manifest manifest = read_manifest(paths.manifest());
  dataset.records = std::move(manifest.records);
  int max_label = 1;
  for (const auto& rec : dataset.records) {
    if (!rec.label || !rec.split_override)
      throw IncompleteRun("run manifest record '" + rec.id +
                          "' is missing a resolved label or split");
    dataset.split_ids[static_cast<int>(*rec.split_override)].push_back(rec.id);
    dataset.label_of[rec.id] = *rec.label;
    max_label = std::max(max_label, *rec.label);
  }
  dataset.num_classes = max_label + 1;
  return dataset;
}

std::vector<int> labels_for(const RunDataset& dataset, const std::vector<std::string>& ids) {
  std::vector<int> labels;
  labels.reserve(ids.size());
  for (const auto& id : ids) labels.push_back(dataset.label_of.at(id));
  return labels;
}

const std::vector<std::string>& ids_for(const RunDataset& dataset, Split split) {
  return dataset.split_ids[static_cast<int>(split)];
}

// Rows for the requested ids, in the requested order. Only the ids actually
// needed must be present in the store.
Matrix store_rows(const EmbeddingStore& store, const std::vector<std::string>& ids) {
  std::unordered_map<std::string, Index> row_of;
  row_of.reserve(store.row_ids.size());
  for (std::size_t i = 0; i < store.row_ids.size(); ++i)
    row_of[store.row_ids[i]] = static_cast<Index>(i);
  Matrix out(static_cast<Index>(ids.size()), store.matrix.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) {
    auto it = row_of.find(ids[i]);
    if (it == row_of.end())
      throw ConsistencyError("store '" + store.encoder_name + "' is missing id '" +
                             ids[i] + "'");
    out.row(static_cast<Index>(i)) = store.matrix.row(it->second);
  }
  return out;
}

// Encoder order used for featurization: anchor first, then source_order.
std::vector<std::string> fusion_encoder_order(const FusionModel& fusion) {
  std::vector<std::string> order{fusion.config.anchor_name};
  order.insert(order.end(), fusion.config.source_order.begin(),
               fusion.config.source_order.end());
  return order;
}

Matrix featurize_ids(const RunPaths& paths, const FusionModel& fusion,
                     const std::vector<std::string>& ids) {
  std::vector<Matrix> views;
  for (const auto& name : fusion_encoder_order(fusion)) {
    EmbeddingStore store = load_embedding_store(paths.embedding_store(name));
    store.encoder_name = name;
    views.push_back(store_rows(store, ids));
  }
  return fusion.featurize(views);
}

FusionModel load_target_fusion(const RunPaths& paths, const std::string& target) {
  if (target == kFusedTag) {
    FusionModel fusion = load_fusion_model(paths.fusion_model());
    if (fusion.config.strategy != FusionStrategy::raw_concat)
      for (const auto& source : fusion.config.source_order)
        fusion.maps.push_back(load_alignment_map(paths.aligner(source)));
    return fusion;
  }
  return load_fusion_model(paths.target_fusion(target));
}

std::string train_config_fingerprint(const TrainConfig& config) {
  std::ostringstream out;
  out << config.learning_rate << '|' << config.batch_size << '|' << config.max_epochs << '|'
      << config.patience << '|' << config.dropout_rate << '|' << config.seed << '|'
      << config.adam_beta1 << '|' << config.adam_beta2 << '|' << config.adam_epsilon << '|';
  for (Index h : config.hidden_dims) out << h << ',';
  out << '|';
  if (config.class_weights)
    for (Index i = 0; i < config.class_weights->size(); ++i)
      out << (*config.class_weights)[i] << ',';
  return out.str();
}

std::string embeddings_fingerprint(const RunState& state) {
  std::string combined;
  for (const auto& name : state_encoders(state))
    combined += name + "=" + hash_file(state.paths.embedding_store(name)) + ";";
  combined += "manifest=" + hash_file(state.paths.manifest());
  return combined;
}

std::string rel_path(const RunPaths& paths, const std::filesystem::path& p) {
  return std::filesystem::relative(p, paths.root).generic_string();
}

// Shared tail of ingest and synth: canonical ordering, store filtering, and
// run-manifest bookkeeping. Records must already carry labels and splits.
StageOutcome materialize_dataset(RunState& state, const std::string& input_hash,
                                 std::vector<DocumentRecord> records,
                                 const ManifestHeader& header,
                                 std::vector<EmbeddingStore> stores,
                                 const std::array<double, 3>& fractions, double delta) {
  const RunPaths& paths = state.paths;
  std::filesystem::create_directories(paths.embeddings_dir());
  std::filesystem::create_directories(paths.reports_dir());

  std::sort(records.begin(), records.end(),
            [](const DocumentRecord& a, const DocumentRecord& b) {
              if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
              return a.id < b.id;
            });

  std::vector<std::string> included_ids;
  int max_label = 1;
  for (const auto& rec : records) {
    included_ids.push_back(rec.id);
    if (*rec.label < 0)
      throw InvalidInput("record '" + rec.id + "' has a negative label");
    max_label = std::max(max_label, *rec.label);
  }

  std::vector<std::string> outputs;
  std::vector<std::string> encoder_names;
  for (auto& store : stores) {
    validate_encoder_name(store.encoder_name);
    EmbeddingStore filtered;
    filtered.encoder_name = store.encoder_name;
    filtered.row_ids = included_ids;
    filtered.matrix = store_rows(store, included_ids);
    auto path = paths.embedding_store(store.encoder_name);
    save_embedding_store(filtered, path);
    outputs.push_back(rel_path(paths, path));
    encoder_names.push_back(store.encoder_name);
  }

  Manifest out_manifest;
  out_manifest.header = header;
  out_manifest.records = std::move(records);
  write_manifest(paths.manifest(), out_manifest);
  outputs.insert(outputs.begin(), rel_path(paths, paths.manifest()));

  json splits;
  std::array<std::size_t, 3> split_sizes{0, 0, 0};
  for (const auto& rec : out_manifest.records)
    ++split_sizes[static_cast<int>(*rec.split_override)];
  splits["train"] = split_sizes[0];
  splits["val"] = split_sizes[1];
  splits["test"] = split_sizes[2];

  state.data["encoders"] = encoder_names;
  state.data["num_classes"] = max_label + 1;
  state.data["splits"] = splits;
  state.data["config"]["delta"] = delta;
  state.data["config"]["fractions"] = std::vector<double>(fractions.begin(), fractions.end());
  mark_stage(state, "ingest", input_hash, outputs);
  save_state(state);

  std::ostringstream msg;
  msg << "ingested " << out_manifest.records.size() << " documents (" << split_sizes[0]
      << " train / " << split_sizes[1] << " val / " << split_sizes[2] << " test), "
      << encoder_names.size() << " encoder store(s)";
  return {true, msg.str()};
}

void apply_split_assignment(std::vector<DocumentRecord>& records,
                            const SplitAssignment& splits) {
  std::map<std::string, Split> split_of;
  for (const auto& id : splits.train_ids) split_of[id] = Split::train;
  for (const auto& id : splits.val_ids) split_of[id] = Split::val;
  for (const auto& id : splits.test_ids) split_of[id] = Split::test;
  std::vector<DocumentRecord> included;
  included.reserve(split_of.size());
  for (auto& rec : records) {
    auto it = split_of.find(rec.id);
    if (it == split_of.end()) continue;  // excluded
    rec.split_override = it->second;
    included.push_back(std::move(rec));
  }
  records = std::move(included);
}

void regenerate_metrics_report(const RunPaths& paths) {
  std::vector<std::filesystem::path> files;
  if (std::filesystem::exists(paths.predictions_dir()))
    for (const auto& entry : std::filesystem::directory_iterator(paths.predictions_dir()))
      if (entry.path().extension() == ".csv") files.push_back(entry.path());
  std::sort(files.begin(), files.end());

  std::vector<MetricsRow> rows;
  for (const auto& file : files) {
    std::string stem = file.stem().string();
    auto sep = stem.rfind('_');
    if (sep == std::string::npos) continue;
    std::string tag = stem.substr(0, sep);
    auto split = parse_split_name(stem.substr(sep + 1));
    if (!split) continue;
    PredictionSet preds = load_prediction_set(file, tag);
    rows.push_back({tag, split_name(*split), compute_metrics(preds)});
  }
  std::filesystem::create_directories(paths.reports_dir());
  write_metrics_csv(paths.metrics_csv(), rows);
}

}  // namespace

std::string hash_bytes(const std::string& bytes) {
  return render_hash(fnv1a_update(kFnvOffset, bytes.data(), bytes.size()));
}

std::string hash_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot hash missing file: " + path.string());
  std::uint64_t hash = kFnvOffset;
  char buf[65536];
  while (in) {
    in.read(buf, sizeof(buf));
    hash = fnv1a_update(hash, buf, static_cast<std::size_t>(in.gcount()));
  }
  return render_hash(hash);
}

StageOutcome stage_ingest(const std::filesystem::path& run_dir, const IngestOptions& options) {
  apply_thread_cap();
  if (options.embeddings.empty())
    throw ConfigError("ingest: at least one --embeddings NAME=PATH is required");
  std::set<std::string> names;
  for (const auto& [name, path] : options.embeddings) {
    validate_encoder_name(name);
    if (!names.insert(name).second)
      throw ConfigError("ingest: duplicate encoder name '" + name + "'");
  }

  std::ostringstream hash_src;
  hash_src << "ingest|delta=" << options.delta << "|fractions=" << options.fractions[0]
           << ',' << options.fractions[1] << ',' << options.fractions[2]
           << "|manifest=" << hash_file(options.manifest_path);
  for (const auto& [name, path] : options.embeddings)
    hash_src << '|' << name << '=' << hash_file(path);
  std::string input_hash = hash_bytes(hash_src.str());

  std::filesystem::create_directories(run_dir);
  RunState state = load_state(run_dir, false);
  if (stage_is_current(state, "ingest", input_hash))
    return {false, "ingest inputs unchanged; skipping"};
  RunLock lock(state.paths);

  Manifest manifest = read_manifest(options.manifest_path);
  resolve_labels(manifest.records, options.delta);
  SplitAssignment splits = time_split(manifest.records, options.fractions);
  apply_split_assignment(manifest.records, splits);

  std::vector<EmbeddingStore> stores;
  for (const auto& [name, path] : options.embeddings) {
    EmbeddingStore store = load_embedding_store(path);
    store.encoder_name = name;
    stores.push_back(std::move(store));
  }
  return materialize_dataset(state, input_hash, std::move(manifest.records), manifest.header,
                             std::move(stores), options.fractions, options.delta);
}

StageOutcome stage_synth(const std::filesystem::path& run_dir, const SyntheticSpec& spec) {
  apply_thread_cap();
  std::ostringstream hash_src;
  hash_src << "synth|n=" << spec.n_docs << "|k=" << spec.latent_dim << "|dims=";
  for (Index d : spec.view_dims) hash_src << d << ',';
  hash_src << "|noise=";
  for (double s : spec.noise_std) hash_src << s << ',';
  hash_src << "|label_noise=" << spec.label_noise << "|seed=" << spec.seed << "|fractions="
           << spec.fractions[0] << ',' << spec.fractions[1] << ',' << spec.fractions[2];
  if (spec.label_weights) {
    hash_src << "|w=";
    for (double w : *spec.label_weights) hash_src << w << ',';
  }
  for (const auto& name : spec.view_names) hash_src << '|' << name;
  hash_src << "|t0=" << spec.start_timestamp << "|dt=" << spec.timestamp_step;
  std::string input_hash = hash_bytes(hash_src.str());

  std::filesystem::create_directories(run_dir);
  RunState state = load_state(run_dir, false);
  if (stage_is_current(state, "ingest", input_hash))
    return {false, "synthetic spec unchanged; skipping"};
  RunLock lock(state.paths);

  SyntheticDataset dataset = generate(spec);
  SplitAssignment splits = time_split(dataset.manifest.records, spec.fractions);
  apply_split_assignment(dataset.manifest.records, splits);
  return materialize_dataset(state, input_hash, std::move(dataset.manifest.records),
                             dataset.manifest.header, std::move(dataset.stores),
                             spec.fractions, 0.5);
}

StageOutcome stage_fit_align(const std::filesystem::path& run_dir,
                             const FitAlignOptions& options) {
  apply_thread_cap();
  RunState state = load_state(run_dir, true);
  require_stage(state, "ingest", "ingest or synth a dataset first");
  auto encoders = state_encoders(state);
  if (std::find(encoders.begin(), encoders.end(), options.anchor) == encoders.end())
    throw ConfigError("fit-align: anchor '" + options.anchor +
                      "' is not among the ingested encoder stores");
  if (!(options.alpha >= 0.0)) throw ConfigError("fit-align: alpha must be non-negative");

  std::string input_hash = hash_bytes("fit-align|anchor=" + options.anchor + "|alpha=" +
                                      std::to_string(options.alpha) + "|" +
                                      embeddings_fingerprint(state));
  if (stage_is_current(state, "fit-align", input_hash))
    return {false, "fit-align inputs unchanged; skipping"};
  RunLock lock(state.paths);
  std::filesystem::create_directories(state.paths.aligners_dir());
  std::filesystem::create_directories(state.paths.reports_dir());

  RunDataset dataset = load_run_dataset(state.paths);
  const auto& train_ids = ids_for(dataset, Split::train);
  EmbeddingStore anchor_store = load_embedding_store(state.paths.embedding_store(options.anchor));
  anchor_store.encoder_name = options.anchor;
  Matrix anchor_train = store_rows(anchor_store, train_ids);

  std::vector<AlignmentMap> maps;
  std::vector<std::string> outputs;
  for (const auto& name : encoders) {
    if (name == options.anchor) continue;
    EmbeddingStore source_store = load_embedding_store(state.paths.embedding_store(name));
    source_store.encoder_name = name;
    AlignmentMap map =
        fit_alignment(store_rows(source_store, train_ids), anchor_train, options.alpha);
    map.source_name = name;
    map.anchor_name = options.anchor;
    auto path = state.paths.aligner(name);
    save_alignment_map(map, path);
    outputs.push_back(rel_path(state.paths, path));
    maps.push_back(std::move(map));
  }

  auto quality_path = state.paths.reports_dir() / "alignment_quality.csv";
  {
    std::ofstream out(quality_path);
    if (!out) throw FormatError("cannot write " + quality_path.string());
    out << "source,anchor,train_r2\n";
    if (!maps.empty())
      for (const auto& row : report_alignment_quality(maps))
        out << row.source << ',' << row.anchor << ',' << format_csv_double(row.train_r2)
            << "\n";
  }
  outputs.push_back(rel_path(state.paths, quality_path));

  state.data["config"]["anchor"] = options.anchor;
  state.data["config"]["alpha"] = options.alpha;
  mark_stage(state, "fit-align", input_hash, outputs);
  save_state(state);

  std::ostringstream msg;
  msg << "fitted " << maps.size() << " alignment map(s) into anchor '" << options.anchor
      << "' (alpha=" << options.alpha << ")";
  for (const auto& map : maps)
    msg << "\n  " << map.source_name << " -> " << map.anchor_name
        << ": train R^2 = " << format_csv_double(map.train_r2);
  return {true, msg.str()};
}

StageOutcome stage_fuse(const std::filesystem::path& run_dir, FusionStrategy strategy) {
  apply_thread_cap();
  RunState state = load_state(run_dir, true);
  require_stage(state, "fit-align", "run fit-align first");
  auto encoders = state_encoders(state);
  std::string anchor = state.data["config"].value("anchor", std::string());

  std::string input_hash =
      hash_bytes("fuse|strategy=" + fusion_strategy_name(strategy) + "|anchor=" + anchor +
                 "|alpha=" + std::to_string(state.data["config"].value("alpha", 0.0)) + "|" +
                 embeddings_fingerprint(state));
  if (stage_is_current(state, "fuse", input_hash))
    return {false, "fuse inputs unchanged; skipping"};
  RunLock lock(state.paths);
  std::filesystem::create_directories(state.paths.fused_dir());

  RunDataset dataset = load_run_dataset(state.paths);
  const auto& train_ids = ids_for(dataset, Split::train);

  FusionModel fusion;
  fusion.config.strategy = strategy;
  fusion.config.anchor_name = anchor;
  for (const auto& name : encoders)
    if (name != anchor) fusion.config.source_order.push_back(name);

  std::vector<Matrix> train_views;
  for (const auto& name : fusion_encoder_order(fusion)) {
    EmbeddingStore store = load_embedding_store(state.paths.embedding_store(name));
    store.encoder_name = name;
    train_views.push_back(store_rows(store, train_ids));
  }

  if (strategy == FusionStrategy::raw_concat) {
    for (const auto& view : train_views) fusion.raw_scalers.push_back(fit_scaler(view));
  } else {
    fusion.anchor_scaler = fit_scaler(train_views[0]);
    for (const auto& source : fusion.config.source_order)
      fusion.maps.push_back(load_alignment_map(state.paths.aligner(source)));
  }
  fusion.final_scaler = fit_final_scaler(fusion.fuse_views(train_views));

  save_fusion_model(fusion, state.paths.fusion_model());
  state.data["config"]["strategy"] = fusion_strategy_name(strategy);
  mark_stage(state, "fuse", input_hash,
             {rel_path(state.paths, state.paths.fusion_model())});
  save_state(state);

  Index fused_dim = fusion.final_scaler.dim();
  return {true, "fused " + std::to_string(encoders.size()) + " view(s) with " +
                    fusion_strategy_name(strategy) + " (d_fused=" +
                    std::to_string(fused_dim) + ")"};
}

StageOutcome stage_train(const std::filesystem::path& run_dir,
                         const TrainStageOptions& options) {
  apply_thread_cap();
  RunState state = load_state(run_dir, true);
  require_stage(state, "ingest", "ingest or synth a dataset first");
  auto encoders = state_encoders(state);
  const bool is_fused = options.target == kFusedTag;
  if (!is_fused &&
      std::find(encoders.begin(), encoders.end(), options.target) == encoders.end())
    throw ConfigError("train: unknown target '" + options.target +
                      "' (expected 'fused' or an encoder name)");
  if (is_fused) require_stage(state, "fuse", "run fuse first");

  std::ostringstream hash_src;
  hash_src << "train|target=" << options.target << "|head=" << head_kind_name(options.head)
           << "|select=" << options.select_threshold << "|cfg="
           << train_config_fingerprint(options.train) << "|" << embeddings_fingerprint(state);
  if (is_fused)
    hash_src << "|fusion=" << hash_file(state.paths.fusion_model());
  std::string input_hash = hash_bytes(hash_src.str());
  std::string stage = "train:" + options.target;
  if (stage_is_current(state, stage, input_hash))
    return {false, "train inputs unchanged for '" + options.target + "'; skipping"};
  RunLock lock(state.paths);
  std::filesystem::create_directories(state.paths.models_dir());

  RunDataset dataset = load_run_dataset(state.paths);
  const auto& train_ids = ids_for(dataset, Split::train);
  const auto& val_ids = ids_for(dataset, Split::val);
  auto y_train = labels_for(dataset, train_ids);
  auto y_val = labels_for(dataset, val_ids);
  if (options.head == HeadKind::binary_logit && dataset.num_classes > 2)
    throw InvalidInput("train: dataset has " + std::to_string(dataset.num_classes) +
                       " classes; use the multiclass head");

  std::vector<std::string> outputs;
  FusionModel fusion;
  if (is_fused) {
    fusion = load_target_fusion(state.paths, kFusedTag);
  } else {
    EmbeddingStore store = load_embedding_store(state.paths.embedding_store(options.target));
    store.encoder_name = options.target;
    fusion = fit_single_view_fusion(options.target, store_rows(store, train_ids));
    save_fusion_model(fusion, state.paths.target_fusion(options.target));
    outputs.push_back(rel_path(state.paths, state.paths.target_fusion(options.target)));
  }

  Matrix X_train = featurize_ids(state.paths, fusion, train_ids);
  Matrix X_val = featurize_ids(state.paths, fusion, val_ids);
  ReadoutModel model = train_readout(X_train, y_train, X_val, y_val, options.head,
                                     dataset.num_classes, options.train);
  if (options.head == HeadKind::binary_logit && options.select_threshold)
    select_threshold(model, X_val, y_val);
  save_readout_model(model, state.paths.readout(options.target));
  outputs.push_back(rel_path(state.paths, state.paths.readout(options.target)));

  if (is_fused) {
    state.data["config"]["head"] = head_kind_name(options.head);
    state.data["config"]["seed"] = options.train.seed;
  }
  mark_stage(state, stage, input_hash, outputs);
  save_state(state);

  std::ostringstream msg;
  msg << "trained '" << options.target << "' readout (head=" << head_kind_name(options.head)
      << ", seed=" << options.train.seed << ", threshold="
      << format_csv_double(model.threshold) << ")";
  return {true, msg.str()};
}

StageOutcome stage_evaluate(const std::filesystem::path& run_dir,
                            const EvaluateOptions& options) {
  apply_thread_cap();
  RunState state = load_state(run_dir, true);
  require_stage(state, "train:" + options.target, "train this target first");

  std::string fusion_path =
      options.target == kFusedTag
          ? hash_file(state.paths.fusion_model())
          : hash_file(state.paths.target_fusion(options.target));
  std::string input_hash = hash_bytes(
      "evaluate|target=" + options.target + "|split=" + split_name(options.split) +
      "|model=" + hash_file(state.paths.readout(options.target)) + "|fusion=" + fusion_path +
      "|" + embeddings_fingerprint(state));
  std::string stage = "evaluate:" + options.target + ":" + split_name(options.split);
  if (stage_is_current(state, stage, input_hash))
    return {false, "evaluate inputs unchanged for '" + options.target + "'; skipping"};
  RunLock lock(state.paths);
  std::filesystem::create_directories(state.paths.predictions_dir());

  RunDataset dataset = load_run_dataset(state.paths);
  const auto& ids = ids_for(dataset, options.split);
  if (ids.empty()) throw EmptyDataset("evaluate: split has no documents");

  FusionModel fusion = load_target_fusion(state.paths, options.target);
  ReadoutModel model = load_readout_model(state.paths.readout(options.target));
  PredictionSet preds = predict(model, featurize_ids(state.paths, fusion, ids));
  preds.ids = ids;
  preds.true_labels = labels_for(dataset, ids);
  preds.model_tag = options.target;

  auto pred_path = state.paths.predictions(options.target, options.split);
  save_prediction_set(preds, pred_path);
  regenerate_metrics_report(state.paths);

  MetricsSummary metrics = compute_metrics(preds);
  mark_stage(state, stage, input_hash,
             {rel_path(state.paths, pred_path), rel_path(state.paths, state.paths.metrics_csv())});
  save_state(state);

  std::ostringstream msg;
  msg << "evaluated '" << options.target << "' on " << split_name(options.split) << ": n="
      << metrics.n << " accuracy=" << format_csv_double(metrics.accuracy)
      << " f1=" << format_csv_double(metrics.f1) << " roc_auc="
      << (metrics.roc_auc ? format_csv_double(*metrics.roc_auc) : "undefined");
  return {true, msg.str()};
}

StageOutcome stage_diagnose(const std::filesystem::path& run_dir,
                            const std::string& against_tag) {
  apply_thread_cap();
  RunState state = load_state(run_dir, true);
  require_stage(state, "evaluate:" + against_tag + ":test",
                "evaluate the comparison model on the test split first");
  require_stage(state, std::string("evaluate:") + kFusedTag + ":test",
                "evaluate the fused model on the test split first");

  auto against_path = state.paths.predictions(against_tag, Split::test);
  auto fused_path = state.paths.predictions(kFusedTag, Split::test);
  std::string input_hash = hash_bytes("diagnose|against=" + against_tag + "|" +
                                      hash_file(against_path) + "|" + hash_file(fused_path));
  std::string stage = "diagnose:" + against_tag;
  if (stage_is_current(state, stage, input_hash))
    return {false, "diagnose inputs unchanged; skipping"};
  RunLock lock(state.paths);
  std::filesystem::create_directories(state.paths.reports_dir());

  PredictionSet anchor_preds = load_prediction_set(against_path, against_tag);
  PredictionSet fused_preds = load_prediction_set(fused_path, kFusedTag);

  std::vector<std::string> outputs;
  OverlapMatrix overlap = error_overlap({anchor_preds, fused_preds});
  auto overlap_path = state.paths.reports_dir() / "overlap.csv";
  write_overlap_csv(overlap_path, overlap);
  outputs.push_back(rel_path(state.paths, overlap_path));

  std::ostringstream msg;
  msg << "diagnosed '" << against_tag << "' vs '" << kFusedTag << "'\n";
  const bool binary = anchor_preds.probabilities.cols() == 1;
  if (binary) {
    TransitionTable transitions = decision_transitions(anchor_preds, fused_preds);
    auto transitions_path = state.paths.reports_dir() / "transitions.csv";
    write_transitions_csv(transitions_path, transitions);
    outputs.push_back(rel_path(state.paths, transitions_path));
    msg << render_transitions_text(transitions);
  } else {
    msg << "decision transitions skipped (multiclass predictions)\n";
  }

  auto shifts = confidence_shift(anchor_preds, fused_preds);
  auto shift_path = state.paths.reports_dir() / "confidence_shift.csv";
  write_confidence_shift_csv(shift_path, shifts);
  outputs.push_back(rel_path(state.paths, shift_path));

  msg << render_overlap_text(overlap);
  mark_stage(state, stage, input_hash, outputs);
  save_state(state);
  return {true, msg.str()};
}

StageOutcome stage_occlude(const std::filesystem::path& run_dir, const std::string& doc_id,
                           const std::filesystem::path& variants_dir, int up_class) {
  apply_thread_cap();
  RunState state = load_state(run_dir, true);
  require_stage(state, std::string("train:") + kFusedTag, "train the fused readout first");

  FusionModel fusion = load_target_fusion(state.paths, kFusedTag);
  auto encoder_order = fusion_encoder_order(fusion);

  std::ostringstream hash_src;
  hash_src << "occlude|doc=" << doc_id << "|up=" << up_class
           << "|model=" << hash_file(state.paths.readout(kFusedTag))
           << "|fusion=" << hash_file(state.paths.fusion_model()) << "|"
           << embeddings_fingerprint(state);
  for (const auto& name : encoder_order) {
    auto variant_path = variants_dir / (name + ".embd");
    if (!std::filesystem::exists(variant_path))
      throw ConsistencyError("occlude: missing encoder variant store " +
                             variant_path.string());
    hash_src << '|' << name << '=' << hash_file(variant_path);
  }
  std::string input_hash = hash_bytes(hash_src.str());
  std::string stage = "occlude:" + doc_id;
  if (stage_is_current(state, stage, input_hash))
    return {false, "occlude inputs unchanged; skipping"};
  RunLock lock(state.paths);
  std::filesystem::create_directories(state.paths.reports_dir());

  // Base document views from the run's own stores.
  std::vector<Vector> base_views;
  for (const auto& name : encoder_order) {
    EmbeddingStore store = load_embedding_store(state.paths.embedding_store(name));
    store.encoder_name = name;
    Matrix row = store_rows(store, {doc_id});
    base_views.push_back(row.row(0).transpose());
  }

  // Sentence variants: one store per encoder, rows keyed by sentence index.
  std::vector<EmbeddingStore> variant_stores;
  for (const auto& name : encoder_order) {
    EmbeddingStore store = load_embedding_store(variants_dir / (name + ".embd"));
    store.encoder_name = name;
    variant_stores.push_back(std::move(store));
  }
  std::vector<std::pair<long long, std::string>> sentences;
  for (const auto& id : variant_stores.front().row_ids) {
    try {
      sentences.emplace_back(std::stoll(id), id);
    } catch (const std::exception&) {
      throw FormatError("occlude: sentence row id '" + id + "' is not an integer index");
    }
  }
  std::sort(sentences.begin(), sentences.end());

  std::vector<SentenceVariant> occluded;
  for (const auto& [index, id] : sentences) {
    SentenceVariant variant;
    variant.sentence_index = static_cast<Index>(index);
    for (auto& store : variant_stores) {
      Matrix row = store_rows(store, {id});  // missing index -> ConsistencyError
      variant.views.push_back(row.row(0).transpose());
    }
    occluded.push_back(std::move(variant));
  }

  ReadoutModel model = load_readout_model(state.paths.readout(kFusedTag));
  auto results = occlusion_attribution(model, fusion, doc_id, base_views, occluded, up_class);
  auto occlusion_path = state.paths.reports_dir() / "occlusion.csv";
  write_occlusion_csv(occlusion_path, results);

  mark_stage(state, stage, input_hash, {rel_path(state.paths, occlusion_path)});
  save_state(state);
  return {true, "computed occlusion attribution for '" + doc_id + "' over " +
                    std::to_string(results.size()) + " sentences"};
}

std::vector<StageOutcome> run_pipeline(const std::filesystem::path& run_dir,
                                       const PipelineConfig& config) {
  RunState state = load_state(run_dir, true);
  require_stage(state, "ingest", "ingest or synth a dataset first");
  auto encoders = state_encoders(state);
  std::string anchor = config.anchor.empty() ? encoders.front() : config.anchor;
  if (std::find(encoders.begin(), encoders.end(), anchor) == encoders.end())
    throw ConfigError("run: anchor '" + anchor + "' is not among the ingested encoders");

  TrainConfig train_config = config.train;
  train_config.seed = config.seed;
  TrainStageOptions train_fused{kFusedTag, config.head, train_config,
                                config.select_thresholds};
  TrainStageOptions train_anchor{anchor, config.head, train_config,
                                 config.select_thresholds};

  std::vector<StageOutcome> outcomes;
  outcomes.push_back(stage_fit_align(run_dir, {anchor, config.alpha}));
  outcomes.push_back(stage_fuse(run_dir, config.strategy));
  outcomes.push_back(stage_train(run_dir, train_anchor));
  outcomes.push_back(stage_train(run_dir, train_fused));
  outcomes.push_back(stage_evaluate(run_dir, {anchor, Split::test}));
  outcomes.push_back(stage_evaluate(run_dir, {kFusedTag, Split::test}));
  outcomes.push_back(stage_diagnose(run_dir, anchor));
  return outcomes;
}

std::string compare_runs(const std::vector<std::filesystem::path>& run_dirs) {
  if (run_dirs.empty()) throw EmptyInput("compare: no run directories given");

  std::ostringstream out;
  out << "run,anchor,strategy,alpha,seed,model,split,n,accuracy,f1,roc_auc\n";
  for (const auto& dir : run_dirs) {
    RunState state = load_state(dir, true);
    bool evaluated = false;
    for (const auto& [stage, entry] : state.data.at("stages").items())
      if (stage.rfind("evaluate:", 0) == 0 && entry.value("done", false)) evaluated = true;
    if (!evaluated || !std::filesystem::exists(state.paths.metrics_csv()))
      throw IncompleteRun("compare: run '" + dir.string() +
                          "' has not completed an evaluate stage");

    const auto& cfg = state.data.at("config");
    std::string prefix = state.data.value("run_id", dir.filename().string()) + "," +
                         cfg.value("anchor", std::string()) + "," +
                         cfg.value("strategy", std::string()) + ",";
    if (cfg.contains("alpha")) prefix += format_csv_double(cfg["alpha"].get<double>());
    prefix += ",";
    if (cfg.contains("seed")) prefix += std::to_string(cfg["seed"].get<std::uint64_t>());

    std::ifstream metrics(state.paths.metrics_csv());
    std::string line;
    std::getline(metrics, line);  // header
    while (std::getline(metrics, line)) {
      if (line.empty()) continue;
      out << prefix << ',' << line << "\n";
    }
  }
  return out.str();
}

}  // namespace anchorfuse
