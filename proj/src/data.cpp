#include "hgcd/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace hgcd {

bool EmbeddingDataset::is_novel(int class_id) const {
  return !std::binary_search(known_classes.begin(), known_classes.end(), class_id);
}

int64_t EmbeddingDataset::count_labelled() const {
  int64_t n = 0;
  for (uint8_t m : labelled_mask) n += m;
  return n;
}

void EmbeddingDataset::compute_feature_std() {
  feature_std.assign(static_cast<size_t>(dim), 0.0);
  if (num_samples == 0) return;
  std::vector<double> mean(static_cast<size_t>(dim), 0.0);
  for (int64_t i = 0; i < num_samples; ++i) {
    auto r = row(i);
    for (int64_t j = 0; j < dim; ++j) mean[static_cast<size_t>(j)] += r[static_cast<size_t>(j)];
  }
  for (double& m : mean) m /= static_cast<double>(num_samples);
  for (int64_t i = 0; i < num_samples; ++i) {
    auto r = row(i);
    for (int64_t j = 0; j < dim; ++j) {
      double d = r[static_cast<size_t>(j)] - mean[static_cast<size_t>(j)];
      feature_std[static_cast<size_t>(j)] += d * d;
    }
  }
  for (double& s : feature_std) s = std::sqrt(s / static_cast<double>(num_samples));
}

void EmbeddingDataset::validate() const {
  if (num_samples != static_cast<int64_t>(class_ids.size()) ||
      num_samples * dim != static_cast<int64_t>(features.size())) {
    throw DataError("dataset: inconsistent sizes (N=" + std::to_string(num_samples) +
                    ", d=" + std::to_string(dim) + ", features=" +
                    std::to_string(features.size()) + ")");
  }
  std::vector<int64_t> per_class(static_cast<size_t>(num_classes), 0);
  for (int64_t i = 0; i < num_samples; ++i) {
    int c = class_ids[static_cast<size_t>(i)];
    if (c < 0 || c >= num_classes) {
      throw DataError("dataset: class id " + std::to_string(c) + " out of range [0, " +
                      std::to_string(num_classes) + ") at sample " + std::to_string(i));
    }
    ++per_class[static_cast<size_t>(c)];
  }
  for (int64_t c = 0; c < num_classes; ++c) {
    if (per_class[static_cast<size_t>(c)] == 0) {
      throw DataError("dataset: class " + std::to_string(c) + " has no samples");
    }
  }
  if (!labelled_mask.empty()) {
    if (static_cast<int64_t>(labelled_mask.size()) != num_samples) {
      throw DataError("dataset: labelled mask size mismatch");
    }
    for (int64_t i = 0; i < num_samples; ++i) {
      if (labelled_mask[static_cast<size_t>(i)] && is_novel(class_ids[static_cast<size_t>(i)])) {
        throw DataError("dataset: labelled sample " + std::to_string(i) +
                        " belongs to a novel class");
      }
    }
  }
}

// ---- CSV -------------------------------------------------------------------
// Header: dim=<d>,classes=<C>  then one row per sample:
// class_id,feat_0,...,feat_{d-1}

void save_dataset_csv(const EmbeddingDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << "dim=" << ds.dim << ",classes=" << ds.num_classes << "\n";
  char buf[32];
  for (int64_t i = 0; i < ds.num_samples; ++i) {
    out << ds.class_ids[static_cast<size_t>(i)];
    auto r = ds.row(i);
    for (int64_t j = 0; j < ds.dim; ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", r[static_cast<size_t>(j)]);
      out << ',' << buf;
    }
    out << '\n';
  }
  if (!out) throw DataError("write to '" + path + "' failed");
}

namespace {

EmbeddingDataset load_dataset_csv(std::istream& in, const std::string& path) {
  EmbeddingDataset ds;
  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": empty file");
  int64_t d = -1, c = -1;
  if (std::sscanf(line.c_str(), "dim=%ld,classes=%ld", &d, &c) != 2 || d <= 0 || c <= 0) {
    throw DataError(path + ":1: malformed header '" + line + "' (expected dim=<d>,classes=<C>)");
  }
  ds.dim = d;
  ds.num_classes = c;
  int64_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string field;
    if (!std::getline(ss, field, ',')) {
      throw DataError(path + ":" + std::to_string(line_no) + ": empty row");
    }
    int cid = 0;
    try {
      cid = std::stoi(field);
    } catch (const std::exception&) {
      throw DataError(path + ":" + std::to_string(line_no) + ": bad class id '" + field + "'");
    }
    if (cid < 0 || cid >= ds.num_classes) {
      throw DataError(path + ":" + std::to_string(line_no) + ": class id " +
                      std::to_string(cid) + " out of range [0, " +
                      std::to_string(ds.num_classes) + ")");
    }
    ds.class_ids.push_back(cid);
    int64_t got = 0;
    while (std::getline(ss, field, ',')) {
      try {
        ds.features.push_back(std::stod(field));
      } catch (const std::exception&) {
        throw DataError(path + ":" + std::to_string(line_no) + ": bad feature value '" + field +
                        "'");
      }
      ++got;
    }
    if (got != ds.dim) {
      throw DataError(path + ":" + std::to_string(line_no) + ": expected " +
                      std::to_string(ds.dim) + " features, got " + std::to_string(got));
    }
    ++ds.num_samples;
  }
  for (int64_t i = 0; i < ds.num_classes; ++i) {
    ds.class_names.push_back("class_" + std::to_string(i));
  }
  ds.labelled_mask.assign(static_cast<size_t>(ds.num_samples), 0);
  ds.validate();
  ds.compute_feature_std();
  return ds;
}

constexpr char kDatasetMagic[4] = {'H', 'G', 'C', 'E'};
constexpr uint32_t kDatasetVersion = 1;

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T read_pod(std::istream& in, const std::string& path, const char* what) {
  T v{};
  if (!in.read(reinterpret_cast<char*>(&v), sizeof v)) {
    throw DataError(path + ": truncated while reading " + what + " at byte offset " +
                    std::to_string(static_cast<long long>(in.tellg())));
  }
  return v;
}

}  // namespace

void save_dataset_binary(const EmbeddingDataset& ds, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out.write(kDatasetMagic, 4);
  write_pod(out, kDatasetVersion);
  write_pod(out, static_cast<uint64_t>(ds.num_samples));
  write_pod(out, static_cast<uint32_t>(ds.dim));
  write_pod(out, static_cast<uint32_t>(ds.num_classes));
  for (int64_t c = 0; c < ds.num_classes; ++c) {
    const std::string& name = ds.class_names[static_cast<size_t>(c)];
    write_pod(out, static_cast<uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
  }
  for (int64_t i = 0; i < ds.num_samples; ++i) {
    write_pod(out, static_cast<uint32_t>(ds.class_ids[static_cast<size_t>(i)]));
    auto r = ds.row(i);
    out.write(reinterpret_cast<const char*>(r.data()),
              static_cast<std::streamsize>(sizeof(double) * r.size()));
  }
  if (!out) throw DataError("write to '" + path + "' failed");
}

namespace {

EmbeddingDataset load_dataset_binary(std::istream& in, const std::string& path) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kDatasetMagic, 4) != 0) {
    throw DataError(path + ": bad magic bytes (not an embedding dataset)");
  }
  uint32_t version = read_pod<uint32_t>(in, path, "version");
  if (version != kDatasetVersion) {
    throw DataError(path + ": unsupported dataset version " + std::to_string(version));
  }
  EmbeddingDataset ds;
  uint64_t n = read_pod<uint64_t>(in, path, "sample count");
  ds.dim = read_pod<uint32_t>(in, path, "dimension");
  ds.num_classes = read_pod<uint32_t>(in, path, "class count");
  if (ds.dim == 0 || ds.num_classes == 0) {
    throw DataError(path + ": zero dimension or class count in header");
  }
  for (int64_t c = 0; c < ds.num_classes; ++c) {
    uint32_t len = read_pod<uint32_t>(in, path, "class name length");
    std::string name(len, '\0');
    if (!in.read(name.data(), len)) {
      throw DataError(path + ": truncated class name at byte offset " +
                      std::to_string(static_cast<long long>(in.tellg())));
    }
    ds.class_names.push_back(std::move(name));
  }
  ds.features.resize(static_cast<size_t>(n) * static_cast<size_t>(ds.dim));
  ds.class_ids.resize(static_cast<size_t>(n));
  for (uint64_t i = 0; i < n; ++i) {
    uint32_t cid;
    if (!in.read(reinterpret_cast<char*>(&cid), sizeof cid) ||
        !in.read(reinterpret_cast<char*>(ds.features.data() + i * static_cast<uint64_t>(ds.dim)),
                 static_cast<std::streamsize>(sizeof(double) * static_cast<size_t>(ds.dim)))) {
      throw DataError(path + ": declared " + std::to_string(n) + " records but file ends in record " +
                      std::to_string(i) + " (byte offset " +
                      std::to_string(static_cast<long long>(in.tellg())) + ")");
    }
    if (cid >= static_cast<uint32_t>(ds.num_classes)) {
      throw DataError(path + ": record " + std::to_string(i) + ": class id " +
                      std::to_string(cid) + " out of range [0, " +
                      std::to_string(ds.num_classes) + ")");
    }
    ds.class_ids[static_cast<size_t>(i)] = static_cast<int>(cid);
  }
  ds.num_samples = static_cast<int64_t>(n);
  char extra;
  if (in.read(&extra, 1)) {
    throw DataError(path + ": trailing bytes after " + std::to_string(n) + " declared records");
  }
  ds.labelled_mask.assign(static_cast<size_t>(ds.num_samples), 0);
  ds.validate();
  ds.compute_feature_std();
  return ds;
}

}  // namespace

EmbeddingDataset load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open dataset '" + path + "'");
  char magic[4] = {0, 0, 0, 0};
  in.read(magic, 4);
  in.clear();
  in.seekg(0);
  if (std::memcmp(magic, kDatasetMagic, 4) == 0) return load_dataset_binary(in, path);
  return load_dataset_csv(in, path);
}

// ---- split ------------------------------------------------------------------

SplitSpec gcd_split(EmbeddingDataset& ds, const std::vector<int>& known_classes,
                    double labelled_fraction, uint64_t seed) {
  if (known_classes.empty()) throw ConfigError("gcd_split: known class set is empty");
  if (labelled_fraction <= 0.0 || labelled_fraction > 1.0) {
    throw ConfigError("gcd_split: labelled fraction must be in (0, 1]");
  }
  std::vector<int> known = known_classes;
  std::sort(known.begin(), known.end());
  known.erase(std::unique(known.begin(), known.end()), known.end());
  for (int c : known) {
    if (c < 0 || c >= ds.num_classes) {
      throw ConfigError("gcd_split: unknown class id " + std::to_string(c));
    }
  }
  if (static_cast<int64_t>(known.size()) >= ds.num_classes) {
    throw ConfigError("gcd_split: all classes marked known; nothing left to discover");
  }

  SplitSpec split;
  split.known_classes = known;
  split.labelled_fraction = labelled_fraction;
  split.seed = seed;

  Rng rng(derive_seed(seed, kStreamSplit));
  for (int c : known) {
    std::vector<int64_t> members;
    for (int64_t i = 0; i < ds.num_samples; ++i) {
      if (ds.class_ids[static_cast<size_t>(i)] == c) members.push_back(i);
    }
    rng.shuffle(members);
    // round half up
    auto take = static_cast<int64_t>(
        std::floor(labelled_fraction * static_cast<double>(members.size()) + 0.5));
    members.resize(static_cast<size_t>(take));
    split.labelled_indices.insert(split.labelled_indices.end(), members.begin(), members.end());
  }
  std::sort(split.labelled_indices.begin(), split.labelled_indices.end());
  apply_split(ds, split);
  return split;
}

void apply_split(EmbeddingDataset& ds, const SplitSpec& split) {
  ds.known_classes = split.known_classes;
  std::sort(ds.known_classes.begin(), ds.known_classes.end());
  ds.labelled_mask.assign(static_cast<size_t>(ds.num_samples), 0);
  for (int64_t i : split.labelled_indices) {
    if (i < 0 || i >= ds.num_samples) {
      throw DataError("split: labelled index " + std::to_string(i) + " out of range");
    }
    ds.labelled_mask[static_cast<size_t>(i)] = 1;
  }
  ds.validate();
}

void save_split(const SplitSpec& split, const std::string& path) {
  nlohmann::json j;
  j["known_classes"] = split.known_classes;
  j["labelled_fraction"] = split.labelled_fraction;
  j["seed"] = split.seed;
  j["labelled_indices"] = split.labelled_indices;
  std::ofstream out(path);
  if (!out) throw DataError("cannot open '" + path + "' for writing");
  out << j.dump(2) << "\n";
}

SplitSpec load_split(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open split '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": malformed split JSON: " + e.what());
  }
  SplitSpec split;
  try {
    split.known_classes = j.at("known_classes").get<std::vector<int>>();
    split.labelled_fraction = j.at("labelled_fraction").get<double>();
    split.seed = j.at("seed").get<uint64_t>();
    split.labelled_indices = j.at("labelled_indices").get<std::vector<int64_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path + ": split JSON missing field: " + e.what());
  }
  return split;
}

// ---- augmentation -------------------------------------------------------------

void AugmentConfig::validate() const {
  if (dropout_prob < 0.0 || dropout_prob >= 1.0) {
    throw ConfigError("dropout_prob must be in [0, 1)");
  }
  if (scale_lo > scale_hi) throw ConfigError("scale range is inverted");
  if (gaussian_sigma < 0.0 || shift_sigma < 0.0) {
    throw ConfigError("augmentation sigmas must be >= 0");
  }
}

AugmentConfig AugmentConfig::none() {
  AugmentConfig cfg;
  cfg.gaussian_sigma = 0.0;
  cfg.scale_lo = 1.0;
  cfg.scale_hi = 1.0;
  cfg.shift_sigma = 0.0;
  cfg.dropout_prob = 0.0;
  return cfg;
}

std::vector<double> augment(std::span<const double> x, const AugmentConfig& cfg,
                            std::span<const double> feature_std, Rng& rng) {
  size_t d = x.size();
  std::vector<double> out(x.begin(), x.end());
  if (cfg.gaussian_sigma > 0.0) {
    for (size_t j = 0; j < d; ++j) {
      out[j] += rng.normal() * cfg.gaussian_sigma * feature_std[j];
    }
  }
  if (cfg.scale_lo != 1.0 || cfg.scale_hi != 1.0) {
    double s = rng.uniform(cfg.scale_lo, cfg.scale_hi);
    for (double& v : out) v *= s;
  }
  if (cfg.shift_sigma > 0.0) {
    for (size_t j = 0; j < d; ++j) {
      out[j] += rng.normal() * cfg.shift_sigma * feature_std[j];
    }
  }
  if (cfg.dropout_prob > 0.0) {
    for (double& v : out) {
      if (rng.uniform() < cfg.dropout_prob) v = 0.0;
    }
  }
  return out;
}

// ---- batching ------------------------------------------------------------------

std::vector<BatchView> make_batches(const EmbeddingDataset& ds, int64_t batch_size,
                                    uint64_t seed, int epoch, const AugmentConfig& aug) {
  if (batch_size < 2) {
    throw ConfigError("batch_size must be >= 2 (contrastive losses are undefined below that)");
  }
  aug.validate();
  std::vector<int64_t> order(static_cast<size_t>(ds.num_samples));
  for (int64_t i = 0; i < ds.num_samples; ++i) order[static_cast<size_t>(i)] = i;
  Rng shuffle_rng(derive_seed(seed, kStreamShuffle, static_cast<uint64_t>(epoch)));
  shuffle_rng.shuffle(order);
  Rng aug_rng(derive_seed(seed, kStreamAugment, static_cast<uint64_t>(epoch)));

  std::vector<BatchView> batches;
  for (size_t start = 0; start < order.size(); start += static_cast<size_t>(batch_size)) {
    size_t end = std::min(order.size(), start + static_cast<size_t>(batch_size));
    int64_t b = static_cast<int64_t>(end - start);
    if (b < 2) break;  // final singleton dropped
    BatchView batch;
    std::vector<double> v1, v2;
    v1.reserve(static_cast<size_t>(b * ds.dim));
    v2.reserve(static_cast<size_t>(b * ds.dim));
    for (size_t p = start; p < end; ++p) {
      int64_t i = order[p];
      batch.indices.push_back(i);
      batch.labels.push_back(ds.labelled_mask[static_cast<size_t>(i)]
                                 ? ds.class_ids[static_cast<size_t>(i)]
                                 : -1);
      auto a1 = augment(ds.row(i), aug, ds.feature_std, aug_rng);
      auto a2 = augment(ds.row(i), aug, ds.feature_std, aug_rng);
      v1.insert(v1.end(), a1.begin(), a1.end());
      v2.insert(v2.end(), a2.begin(), a2.end());
    }
    batch.view1 = Tensor::from({b, ds.dim}, std::move(v1));
    batch.view2 = Tensor::from({b, ds.dim}, std::move(v2));
    batches.push_back(std::move(batch));
  }
  return batches;
}

// ---- synthetic hierarchy ----------------------------------------------------------

void SynthConfig::validate() const {
  if (depth < 1 || depth > 16) throw ConfigError("synth depth must be in [1, 16]");
  if (num_classes < 2) throw ConfigError("synth needs at least 2 classes");
  if (num_classes > (1 << depth)) {
    throw ConfigError("synth: " + std::to_string(num_classes) + " classes do not fit in " +
                      std::to_string(1 << depth) + " leaves of a depth-" + std::to_string(depth) +
                      " tree");
  }
  if (dim < 1 || samples_per_class < 1) throw ConfigError("synth dim/samples must be >= 1");
  if (cluster_spread < 0.0 || level_offset_scale < 0.0) {
    throw ConfigError("synth spreads must be >= 0");
  }
}

EmbeddingDataset make_synthetic_hierarchy(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(derive_seed(cfg.seed, kStreamSynth));

  // Means for all nodes, level by level; node i at level l has children 2i
  // and 2i+1 at level l+1.
  std::vector<std::vector<double>> means(1, std::vector<double>(static_cast<size_t>(cfg.dim), 0.0));
  for (int level = 1; level <= cfg.depth; ++level) {
    double sigma = cfg.level_offset_scale * std::pow(2.0, -level);
    std::vector<std::vector<double>> next(static_cast<size_t>(1) << level);
    for (size_t node = 0; node < next.size(); ++node) {
      const auto& parent = means[node / 2];
      auto& m = next[node];
      m.resize(static_cast<size_t>(cfg.dim));
      for (int64_t j = 0; j < cfg.dim; ++j) {
        m[static_cast<size_t>(j)] = parent[static_cast<size_t>(j)] + rng.normal() * sigma;
      }
    }
    means = std::move(next);
  }

  EmbeddingDataset ds;
  ds.dim = cfg.dim;
  ds.num_classes = cfg.num_classes;
  ds.num_samples = static_cast<int64_t>(cfg.num_classes) * cfg.samples_per_class;
  ds.features.reserve(static_cast<size_t>(ds.num_samples * ds.dim));
  ds.class_ids.reserve(static_cast<size_t>(ds.num_samples));
  for (int c = 0; c < cfg.num_classes; ++c) {
    std::string path;
    for (int level = cfg.depth - 1; level >= 0; --level) {
      path += ((c >> level) & 1) ? 'R' : 'L';
    }
    ds.class_names.push_back("class_" + std::to_string(c));
    ds.class_paths.push_back(path);
    const auto& mean = means[static_cast<size_t>(c)];
    for (int64_t s = 0; s < cfg.samples_per_class; ++s) {
      ds.class_ids.push_back(c);
      for (int64_t j = 0; j < cfg.dim; ++j) {
        ds.features.push_back(mean[static_cast<size_t>(j)] + rng.normal() * cfg.cluster_spread);
      }
    }
  }
  ds.labelled_mask.assign(static_cast<size_t>(ds.num_samples), 0);
  ds.validate();
  ds.compute_feature_std();
  return ds;
}

}  // namespace hgcd
