#include "hgcd/tree.hpp"

#include <cmath>
#include <string>

namespace hgcd {

void TreeConfig::validate() const {
  if (depth < 1 || depth > 10) {
    throw ConfigError("tree depth must be in [1, 10], got " + std::to_string(depth));
  }
}

LevelPosteriors level_posteriors(const Tensor& branch, const TreeConfig& cfg) {
  cfg.validate();
  Tensor b = branch;
  if (b.rank() == 1) b = reshape(b, {1, b.numel()});
  if (b.rank() != 2 || b.cols() != cfg.num_internal()) {
    throw ConfigError("level_posteriors: expected " + std::to_string(cfg.num_internal()) +
                      " branch probabilities per sample (depth " + std::to_string(cfg.depth) +
                      "), got shape " + shape_str(branch.shape()));
  }
  int64_t rows = b.rows();

  LevelPosteriors out;
  out.cfg = cfg;
  out.levels.reserve(static_cast<size_t>(cfg.depth) + 1);
  out.levels.push_back(Tensor::constant({rows, 1}, 1.0));

  // A = [sigma | 1 - sigma]; column j is the left factor of node j, column
  // K + j its right factor.
  Tensor complement = sub(Tensor::scalar(1.0), b);
  Tensor factors = concat_cols(b, complement);
  int64_t k = cfg.num_internal();

  for (int t = 0; t < cfg.depth; ++t) {
    int64_t level_nodes = int64_t{1} << t;  // nodes at depth t
    std::vector<int64_t> parent_idx, factor_idx;
    parent_idx.reserve(static_cast<size_t>(level_nodes) * 2);
    factor_idx.reserve(static_cast<size_t>(level_nodes) * 2);
    for (int64_t i = 0; i < level_nodes; ++i) {
      int64_t node = (level_nodes - 1) + i;  // heap index 2^t - 1 + i
      parent_idx.push_back(i);
      parent_idx.push_back(i);
      factor_idx.push_back(node);      // left: sigma
      factor_idx.push_back(k + node);  // right: 1 - sigma
    }
    Tensor expanded = gather_cols(out.levels.back(), parent_idx);
    Tensor level_factors = gather_cols(factors, factor_idx);
    out.levels.push_back(mul(expanded, level_factors));
  }
  return out;
}

Tensor level_similarity(const Tensor& p, const Tensor& q) {
  if (p.rank() != 1 || q.rank() != 1 || p.numel() != q.numel()) {
    throw ShapeError("level_similarity: distributions must be rank-1 of equal length, got " +
                     shape_str(p.shape()) + " vs " + shape_str(q.shape()));
  }
  double sp = 0.0, sq = 0.0;
  for (double v : p.values()) sp += v;
  for (double v : q.values()) sq += v;
  if (std::abs(sp - 1.0) > 1e-6 || std::abs(sq - 1.0) > 1e-6) {
    throw ConfigError("level_similarity: inputs must be distributions; sums are " +
                      std::to_string(sp) + " and " + std::to_string(sq));
  }
  return sum(mul(sqrt(p), sqrt(q)));
}

namespace {

void check_same_cfg(const LevelPosteriors& a, const LevelPosteriors& b, const char* op) {
  if (!(a.cfg == b.cfg)) {
    throw ConfigError(std::string(op) + ": posteriors come from different tree configs (depth " +
                      std::to_string(a.cfg.depth) + " vs " + std::to_string(b.cfg.depth) + ")");
  }
}

}  // namespace

Tensor tree_similarity(const LevelPosteriors& a, const LevelPosteriors& b,
                       const TreeConfig& cfg) {
  check_same_cfg(a, b, "tree_similarity");
  if (!(a.cfg == cfg)) {
    throw ConfigError("tree_similarity: posteriors were built for depth " +
                      std::to_string(a.cfg.depth) + ", caller expects depth " +
                      std::to_string(cfg.depth));
  }
  if (a.batch_size() != 1 || b.batch_size() != 1) {
    throw ShapeError("tree_similarity: expects single-sample posteriors; use "
                     "tree_similarity_matrix for batches");
  }
  Tensor total = Tensor::scalar(0.0);
  for (int t = 1; t <= cfg.depth; ++t) {
    Tensor prod = mul(sqrt(a.levels[static_cast<size_t>(t)]),
                      sqrt(b.levels[static_cast<size_t>(t)]));
    total = add(total, sum(prod));
  }
  return total;
}

Tensor tree_similarity_matrix(const LevelPosteriors& a, const LevelPosteriors& b) {
  check_same_cfg(a, b, "tree_similarity_matrix");
  Tensor total;
  for (int t = 1; t <= a.cfg.depth; ++t) {
    Tensor term = matmul_nt(sqrt(a.levels[static_cast<size_t>(t)]),
                            sqrt(b.levels[static_cast<size_t>(t)]));
    total = t == 1 ? term : add(total, term);
  }
  return total;
}

Tensor tree_similarity_rowwise(const LevelPosteriors& a, const LevelPosteriors& b) {
  check_same_cfg(a, b, "tree_similarity_rowwise");
  if (a.batch_size() != b.batch_size()) {
    throw ShapeError("tree_similarity_rowwise: batch sizes disagree");
  }
  Tensor total;
  for (int t = 1; t <= a.cfg.depth; ++t) {
    Tensor term = sum(mul(sqrt(a.levels[static_cast<size_t>(t)]),
                          sqrt(b.levels[static_cast<size_t>(t)])),
                      1);
    total = t == 1 ? term : add(total, term);
  }
  return total;
}

std::vector<int64_t> leaf_assignment(const LevelPosteriors& p) {
  const Tensor& leaves = p.levels.back();
  Tensor idx = max_index(leaves, leaves.rank() == 2 ? 1 : 0);
  std::vector<int64_t> out;
  out.reserve(static_cast<size_t>(idx.numel()));
  for (double v : idx.values()) out.push_back(static_cast<int64_t>(v));
  return out;
}

}  // namespace hgcd
