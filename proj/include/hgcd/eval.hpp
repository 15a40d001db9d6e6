#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "hgcd/tensor.hpp"

namespace hgcd {

// Standard category-discovery evaluation: constrained k-means over learned
// embeddings, Hungarian cluster-to-class alignment, accuracy on unlabelled
// samples reported for all / known / novel classes under one shared mapping.

struct ClusterResult {
  std::vector<int> assignments;       // N cluster ids in [0, K_c)
  std::vector<double> centroids;      // K_c x d row-major
  int64_t num_clusters = 0;
  int64_t dim = 0;
  int iterations = 0;
  bool converged = false;
  std::vector<int> pinned_classes;    // class id pinned to cluster i, for i < |Y_L|
};

// Labelled samples are permanently assigned to their class's cluster
// (clusters 0..|Y_L|-1, one per distinct labelled class in sorted order,
// initialized at the labelled-class centroids). Remaining centroids start
// k-means++ style over the unlabelled points. Unlabelled points move to the
// nearest centroid each iteration; centroids update to the mean of all
// assigned points; an empty cluster is reseeded to the unlabelled point
// farthest from its stale centroid. Stops when the largest centroid
// displacement drops below tol or after max_iter iterations.
ClusterResult semi_kmeans(const Tensor& embeddings, const std::vector<int>& class_ids,
                          const std::vector<uint8_t>& labelled_mask, int64_t num_clusters,
                          uint64_t seed, double tol = 1e-6, int max_iter = 300);

struct HungarianResult {
  std::vector<int> assignment;  // row -> column
  double total_cost = 0.0;
};

// Minimum-cost perfect matching in O(n^3). Rectangular inputs are padded to
// square with a large constant; NaN costs are an error.
HungarianResult hungarian(const std::vector<double>& cost, int64_t rows, int64_t cols);

struct GcdReport {
  std::vector<int> mapping;        // cluster id -> class id, -1 when unmatched
  double acc_all = 0.0;
  double acc_known = 0.0;
  double acc_novel = 0.0;
  int64_t num_classes = 0;
  int64_t num_clusters = 0;
  std::vector<int64_t> confusion;  // C x K_c counts over unlabelled samples
  int64_t unlabelled_total = 0;
  int64_t unlabelled_known = 0;
  int64_t unlabelled_novel = 0;
};

// Builds the class x cluster contingency over unlabelled samples only, runs
// Hungarian on negated counts (maximum matching), and scores the single
// resulting mapping. Unmatched clusters count as errors for their members.
GcdReport score(const ClusterResult& clusters, const std::vector<int>& truth,
                const std::vector<int>& known_classes, const std::vector<uint8_t>& labelled_mask,
                int64_t num_classes);

// Confusion matrix as CSV: true classes as rows, mapped cluster classes as
// columns, novel classes suffixed "*".
void write_confusion_csv(const GcdReport& report, const std::vector<std::string>& class_names,
                         const std::vector<int>& known_classes, std::ostream& out);

}  // namespace hgcd
