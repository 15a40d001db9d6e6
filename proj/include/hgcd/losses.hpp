#pragma once

#include <cstdint>
#include <vector>

#include "hgcd/tensor.hpp"
#include "hgcd/tree.hpp"

namespace hgcd {

// Loss weighting. Defaults follow the reference training recipe: alpha
// balances supervised vs unsupervised contrastive terms, beta = 2^-T weights
// the balance regularizer, gamma the contrastive term in the combined
// objective, tau divides every dot product (1.0 keeps the printed form).
struct LossWeights {
  double alpha = 0.35;
  double beta = 0.125;  // 2^-T for T = 3; use beta_for_depth for other T
  double gamma = 1.0;
  double tau = 1.0;
  int warmup_epochs = 50;

  void validate() const;
};

double beta_for_depth(int depth);

// Ablation switches. contrastive_in_objective=false drops gamma*L^c from the
// post-warm-up objective (warm-up itself always trains on the contrastive
// loss). hier_ignore_labels treats every sample as unlabelled when building
// the hierarchical positive/negative sets.
struct LossOptions {
  bool contrastive_in_objective = true;
  bool hier_ignore_labels = false;
};

struct LossBreakdown {
  double l_unsup = 0.0;
  double l_sup = 0.0;
  double l_contrastive = 0.0;
  double l_hier = 0.0;
  double l_reg = 0.0;
  double l_total = 0.0;
};

// Unsupervised contrastive loss over 2B unit-norm embedding rows laid out as
// [view1; view2] (row i pairs with row i + B). Each of the 2B views anchors
// once; the denominator runs over the other 2B - 1 views.
Tensor unsup_contrastive(const Tensor& z_views, double tau);

struct SupContrastiveResult {
  Tensor value;
  bool has_labelled = false;  // warning flag: false when no labelled anchors
};

// Supervised contrastive loss over labelled views only. Each row is an anchor
// and a candidate; labels align with rows. Anchors whose positive set is
// empty contribute nothing and are excluded from the mean.
SupContrastiveResult sup_contrastive(const Tensor& z, const std::vector<int>& labels,
                                     double tau);

// (1 - alpha) * L^u + alpha * L^s over a stacked [view1; view2] batch.
// labels[i] is the class of sample i, or -1 when unlabelled (B entries).
struct ContrastiveResult {
  Tensor value;
  Tensor unsup;
  Tensor sup;  // undefined tensor when the batch has no labelled samples
  bool has_labelled = false;
};
ContrastiveResult contrastive_loss(const Tensor& z_views, const std::vector<int>& labels,
                                   const LossWeights& w);

// Semi-supervised hierarchical clustering loss. view1/view2 are posteriors of
// each sample's two augmentations; labels as above. Per anchor i:
//   mean_j-in-N(i) s(x_i, x_j) - (sum_j-in-P(i) s(x_i, x_j) + s(x_i, x_i'))
//                                 / (|P(i)| + 1)
// Labelled anchors: N(i) = differently-labelled + all unlabelled, P(i) =
// same-labelled. Unlabelled anchors (or ignore_labels): N(i) = all other
// samples, P(i) empty. A batch of one sample has no negative term.
Tensor hierarchical_loss(const LevelPosteriors& view1, const LevelPosteriors& view2,
                         const std::vector<int>& labels, bool ignore_labels);

// Cross-entropy between [0.5, 0.5] and the batch-mean branch probability of
// each internal node, averaged over the K nodes; >= ln 2, minimized when
// every node splits the batch evenly.
Tensor balance_regularizer(const Tensor& branch_all_views, const TreeConfig& cfg);

struct TotalLossResult {
  Tensor objective;  // what backward() should run on
  LossBreakdown breakdown;
};

// Full objective with warm-up gating: epochs before warmup_epochs train on
// L^c alone (hierarchical and regularizer still evaluated for logging); after
// that L = L^h + beta * L^r + gamma * L^c.
TotalLossResult total_loss(const Tensor& z_views, const Tensor& branch_views,
                           const std::vector<int>& labels, int epoch, const LossWeights& w,
                           const LossOptions& opts, const TreeConfig& cfg);

}  // namespace hgcd
