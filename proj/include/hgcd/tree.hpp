#pragma once

#include <cstdint>
#include <vector>

#include "hgcd/tensor.hpp"

namespace hgcd {

// Soft binary decision tree routing. A head emits K = 2^T - 1 left-branch
// probabilities, heap-ordered: internal node i at depth t lives at flat index
// 2^t - 1 + i. Routing turns them into one distribution per level; similarity
// between two routings is the per-level Bhattacharyya coefficient summed over
// levels 1..T.

struct TreeConfig {
  int depth = 3;  // T: number of internal-node levels

  int64_t num_internal() const { return (int64_t{1} << depth) - 1; }  // K
  int64_t num_leaves() const { return int64_t{1} << depth; }
  void validate() const;

  bool operator==(const TreeConfig&) const = default;
};

// Branch probabilities are clamped to this interval before routing so the
// sqrt/log gradients stay finite.
inline constexpr double kBranchClampLo = 1e-7;
inline constexpr double kBranchClampHi = 1.0 - 1e-7;

// Distributions P_t over the 2^t nodes at depth t, t = 0..T, for a batch of
// samples. levels[t] has shape [B x 2^t]; P_0 is the constant [1] column.
// Mass is conserved down the tree: every row of every level sums to 1.
struct LevelPosteriors {
  TreeConfig cfg;
  std::vector<Tensor> levels;  // size T + 1

  int64_t batch_size() const { return levels.empty() ? 0 : levels[0].rows(); }
};

// Routes branch probabilities (shape [B x K] or [K]) down the tree:
// P_0 = [1]; P_{t+1}[2i] = P_t[i] * sigma_{t,i}; P_{t+1}[2i+1] = P_t[i] *
// (1 - sigma_{t,i}). Differentiable.
LevelPosteriors level_posteriors(const Tensor& branch, const TreeConfig& cfg);

// Bhattacharyya coefficient sum_i sqrt(p_i q_i) of two rank-1 distributions;
// differentiable, in [0, 1], 1 iff identical.
Tensor level_similarity(const Tensor& p, const Tensor& q);

// Tree similarity s(a, b) = sum_{t=1..T} level_similarity(P_t(a), P_t(b)) for
// a pair of single-sample posteriors. Lies in [0, T]; s(x, x) = T. The sum
// runs over depths 1..T (leaf level included, constant root level dropped) so
// every head parameter stays live; see tree_similarity_matrix for batches.
Tensor tree_similarity(const LevelPosteriors& a, const LevelPosteriors& b,
                       const TreeConfig& cfg);

// Pairwise tree similarities between all rows of a and all rows of b:
// out[i][j] = s(a_i, b_j), shape [B_a x B_b]. Computed per level as
// sqrt(P_t(a)) * sqrt(P_t(b))^T.
Tensor tree_similarity_matrix(const LevelPosteriors& a, const LevelPosteriors& b);

// Row-wise similarities s(a_i, b_i), shape [B]. Used for a sample against its
// own augmented view.
Tensor tree_similarity_rowwise(const LevelPosteriors& a, const LevelPosteriors& b);

// Hard cluster readout: argmax over the leaf-level distribution per row, ties
// broken toward the lowest index.
std::vector<int64_t> leaf_assignment(const LevelPosteriors& p);

}  // namespace hgcd
