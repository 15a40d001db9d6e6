#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "hgcd/rng.hpp"
#include "hgcd/tensor.hpp"

namespace hgcd {

// Feature-embedding dataset for the category-discovery setting: every sample
// has a ground-truth class; a subset of the classes is "known" and, within
// those, a subset of samples is labelled. Invariant: labelled implies the
// class is known (the labelled label space is a strict subset of the full
// label space).
struct EmbeddingDataset {
  int64_t num_samples = 0;
  int64_t dim = 0;
  int64_t num_classes = 0;
  std::vector<double> features;           // N x d row-major
  std::vector<int> class_ids;             // N, in [0, C)
  std::vector<std::string> class_names;   // C
  std::vector<int> known_classes;         // sorted; empty before a split
  std::vector<uint8_t> labelled_mask;     // N
  std::vector<double> feature_std;        // d, population std (augment scaling)
  std::vector<std::string> class_paths;   // C, synthetic hierarchy ("LRL..."), may be empty

  std::span<const double> row(int64_t i) const {
    return {features.data() + i * dim, static_cast<size_t>(dim)};
  }
  bool is_novel(int class_id) const;
  int64_t count_labelled() const;
  void compute_feature_std();
  void validate() const;
};

void save_dataset_csv(const EmbeddingDataset& ds, const std::string& path);
void save_dataset_binary(const EmbeddingDataset& ds, const std::string& path);
// Dispatches on content (binary magic vs CSV header).
EmbeddingDataset load_dataset(const std::string& path);

// A published split: exact labelled indices so it reproduces bit-for-bit.
struct SplitSpec {
  std::vector<int> known_classes;
  double labelled_fraction = 0.5;
  uint64_t seed = 0;
  std::vector<int64_t> labelled_indices;
};

// Per known class, marks exactly round(fraction * n_c) samples labelled
// (round half up), chosen by seeded shuffle. Novel-class samples are never
// labelled. Errors when known_classes is empty, not a proper subset, or names
// an unknown class id.
SplitSpec gcd_split(EmbeddingDataset& ds, const std::vector<int>& known_classes,
                    double labelled_fraction, uint64_t seed);

void apply_split(EmbeddingDataset& ds, const SplitSpec& split);
void save_split(const SplitSpec& split, const std::string& path);
SplitSpec load_split(const std::string& path);

// Embedding-space augmentation, applied in this order: additive Gaussian
// noise, global scale, additive shift, feature dropout. Noise and shift
// widths are per-feature, scaled by the dataset's stored feature std.
struct AugmentConfig {
  double gaussian_sigma = 0.1;
  double scale_lo = 0.9;
  double scale_hi = 1.1;
  double shift_sigma = 0.05;
  double dropout_prob = 0.1;

  void validate() const;
  static AugmentConfig none();  // identity transform
};

std::vector<double> augment(std::span<const double> x, const AugmentConfig& cfg,
                            std::span<const double> feature_std, Rng& rng);

// One training batch: two independently augmented views per sample. labels[i]
// is the class id when sample i is labelled, -1 otherwise (unlabelled samples
// carry no usable label at loss time).
struct BatchView {
  Tensor view1;  // B x d
  Tensor view2;
  std::vector<int> labels;
  std::vector<int64_t> indices;  // dataset rows

  int64_t size() const { return static_cast<int64_t>(indices.size()); }
};

// Seeded per-epoch shuffle; a final short batch is kept if it still has >= 2
// samples and dropped otherwise. batch_size < 2 is an error (the contrastive
// losses are undefined on singletons).
std::vector<BatchView> make_batches(const EmbeddingDataset& ds, int64_t batch_size,
                                    uint64_t seed, int epoch, const AugmentConfig& aug);

// Synthetic hierarchical data: class means are leaves of a random binary
// tree; each level adds a Gaussian offset with standard deviation
// level_offset_scale * 2^-level, so sibling classes sit closer than cousins.
struct SynthConfig {
  int depth = 3;
  int num_classes = 7;
  int64_t dim = 32;
  int64_t samples_per_class = 200;
  double cluster_spread = 0.35;     // sigma within a class
  double level_offset_scale = 1.0;
  uint64_t seed = 0;

  void validate() const;
};

EmbeddingDataset make_synthetic_hierarchy(const SynthConfig& cfg);

}  // namespace hgcd
