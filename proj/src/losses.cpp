#include "hgcd/losses.hpp"

#include <cmath>
#include <string>

namespace hgcd {

void LossWeights::validate() const {
  if (alpha < 0.0 || alpha > 1.0) throw ConfigError("alpha must be in [0, 1]");
  if (beta < 0.0) throw ConfigError("beta must be >= 0");
  if (gamma < 0.0) throw ConfigError("gamma must be >= 0");
  if (tau <= 0.0) throw ConfigError("temperature tau must be > 0");
  if (warmup_epochs < 0) throw ConfigError("warmup_epochs must be >= 0");
}

double beta_for_depth(int depth) { return std::pow(2.0, -depth); }

Tensor unsup_contrastive(const Tensor& z_views, double tau) {
  if (z_views.rank() != 2 || z_views.rows() == 0 || z_views.rows() % 2 != 0) {
    throw ShapeError("unsup_contrastive: expected a non-empty [2B x d] view stack, got " +
                     shape_str(z_views.shape()));
  }
  int64_t n = z_views.rows();
  int64_t half = n / 2;

  Tensor logits = scale(matmul_nt(z_views, z_views), 1.0 / tau);

  std::vector<double> offdiag(static_cast<size_t>(n * n), 1.0);
  std::vector<double> partner(static_cast<size_t>(n * n), 0.0);
  for (int64_t i = 0; i < n; ++i) {
    offdiag[static_cast<size_t>(i * n + i)] = 0.0;
    int64_t p = i < half ? i + half : i - half;
    partner[static_cast<size_t>(i * n + p)] = 1.0;
  }
  Tensor mask_neg = Tensor::from({n, n}, std::move(offdiag));
  Tensor mask_pos = Tensor::from({n, n}, std::move(partner));

  Tensor denom = sum(mul(exp(logits), mask_neg), 1);
  Tensor pos = sum(mul(logits, mask_pos), 1);
  return mean(sub(log(denom), pos));
}

SupContrastiveResult sup_contrastive(const Tensor& z, const std::vector<int>& labels,
                                     double tau) {
  if (z.rank() != 2) {
    throw ShapeError("sup_contrastive: expected rank-2 embeddings, got " + shape_str(z.shape()));
  }
  int64_t n = z.rows();
  if (static_cast<int64_t>(labels.size()) != n) {
    throw ShapeError("sup_contrastive: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " rows");
  }
  if (n == 0) return {Tensor::scalar(0.0), false};

  // Positive counts |P(i)|; anchors with an empty positive set are skipped.
  std::vector<double> offdiag(static_cast<size_t>(n * n), 1.0);
  std::vector<double> posmask(static_cast<size_t>(n * n), 0.0);
  std::vector<double> inv_count(static_cast<size_t>(n), 0.0);
  std::vector<double> valid(static_cast<size_t>(n), 0.0);
  int64_t num_valid = 0;
  for (int64_t i = 0; i < n; ++i) {
    offdiag[static_cast<size_t>(i * n + i)] = 0.0;
    int64_t count = 0;
    for (int64_t j = 0; j < n; ++j) {
      if (j != i && labels[static_cast<size_t>(j)] == labels[static_cast<size_t>(i)]) {
        posmask[static_cast<size_t>(i * n + j)] = 1.0;
        ++count;
      }
    }
    if (count > 0) {
      inv_count[static_cast<size_t>(i)] = 1.0 / static_cast<double>(count);
      valid[static_cast<size_t>(i)] = 1.0;
      ++num_valid;
    }
  }
  if (num_valid == 0) return {Tensor::scalar(0.0), true};

  Tensor logits = scale(matmul_nt(z, z), 1.0 / tau);
  Tensor denom = sum(mul(exp(logits), Tensor::from({n, n}, std::move(offdiag))), 1);
  Tensor pos_sum = sum(mul(logits, Tensor::from({n, n}, std::move(posmask))), 1);
  // L_i = log(denom_i) - pos_sum_i / |P(i)|, averaged over valid anchors.
  Tensor per_anchor = sub(log(denom), mul(pos_sum, Tensor::from({n}, std::move(inv_count))));
  Tensor masked = mul(per_anchor, Tensor::from({n}, std::move(valid)));
  return {scale(sum(masked), 1.0 / static_cast<double>(num_valid)), true};
}

ContrastiveResult contrastive_loss(const Tensor& z_views, const std::vector<int>& labels,
                                   const LossWeights& w) {
  int64_t half = z_views.rows() / 2;
  if (static_cast<int64_t>(labels.size()) != half) {
    throw ShapeError("contrastive_loss: expected one label per sample (" +
                     std::to_string(half) + "), got " + std::to_string(labels.size()));
  }
  ContrastiveResult out;
  out.unsup = unsup_contrastive(z_views, w.tau);

  // Both augmented views of each labelled sample act as anchors and
  // candidates in the supervised term.
  std::vector<int64_t> rows;
  std::vector<int> view_labels;
  for (int64_t i = 0; i < half; ++i) {
    if (labels[static_cast<size_t>(i)] >= 0) {
      rows.push_back(i);
      rows.push_back(i + half);
      view_labels.push_back(labels[static_cast<size_t>(i)]);
      view_labels.push_back(labels[static_cast<size_t>(i)]);
    }
  }
  if (rows.empty()) {
    out.has_labelled = false;
    out.value = scale(out.unsup, 1.0 - w.alpha);
    return out;
  }
  auto sup = sup_contrastive(gather_rows(z_views, rows), view_labels, w.tau);
  out.sup = sup.value;
  out.has_labelled = true;
  out.value = add(scale(out.unsup, 1.0 - w.alpha), scale(out.sup, w.alpha));
  return out;
}

Tensor hierarchical_loss(const LevelPosteriors& view1, const LevelPosteriors& view2,
                         const std::vector<int>& labels, bool ignore_labels) {
  int64_t n = view1.batch_size();
  if (view2.batch_size() != n) {
    throw ShapeError("hierarchical_loss: view batch sizes disagree");
  }
  if (static_cast<int64_t>(labels.size()) != n) {
    throw ShapeError("hierarchical_loss: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(n) + " samples");
  }

  // Pairwise similarities between first views; own-augmentation similarity
  // per sample.
  Tensor sim = tree_similarity_matrix(view1, view1);
  Tensor own = tree_similarity_rowwise(view1, view2);

  std::vector<double> neg_mask(static_cast<size_t>(n * n), 0.0);
  std::vector<double> pos_mask(static_cast<size_t>(n * n), 0.0);
  std::vector<double> neg_w(static_cast<size_t>(n), 0.0);
  std::vector<double> pos_w(static_cast<size_t>(n), 0.0);
  for (int64_t i = 0; i < n; ++i) {
    int li = ignore_labels ? -1 : labels[static_cast<size_t>(i)];
    int64_t n_count = 0, p_count = 0;
    for (int64_t j = 0; j < n; ++j) {
      if (j == i) continue;
      int lj = ignore_labels ? -1 : labels[static_cast<size_t>(j)];
      bool positive = li >= 0 && lj == li;
      if (positive) {
        pos_mask[static_cast<size_t>(i * n + j)] = 1.0;
        ++p_count;
      } else {
        // Unlabelled anchors treat every other sample as a negative; labelled
        // anchors additionally repel all unlabelled samples.
        neg_mask[static_cast<size_t>(i * n + j)] = 1.0;
        ++n_count;
      }
    }
    neg_w[static_cast<size_t>(i)] =
        n_count > 0 ? 1.0 / static_cast<double>(n_count) : 0.0;  // batch of one: no negatives
    pos_w[static_cast<size_t>(i)] = 1.0 / static_cast<double>(p_count + 1);
  }

  Tensor neg = mul(sum(mul(sim, Tensor::from({n, n}, std::move(neg_mask))), 1),
                   Tensor::from({n}, std::move(neg_w)));
  Tensor pos_pairs = sum(mul(sim, Tensor::from({n, n}, std::move(pos_mask))), 1);
  Tensor pos = mul(add(pos_pairs, own), Tensor::from({n}, std::move(pos_w)));
  return mean(sub(neg, pos));
}

Tensor balance_regularizer(const Tensor& branch_all_views, const TreeConfig& cfg) {
  if (branch_all_views.rank() != 2 || branch_all_views.rows() == 0 ||
      branch_all_views.cols() != cfg.num_internal()) {
    throw ShapeError("balance_regularizer: expected non-empty [n x " +
                     std::to_string(cfg.num_internal()) + "], got " +
                     shape_str(branch_all_views.shape()));
  }
  Tensor mean_left = mean(branch_all_views, 0);  // per-node batch mean
  Tensor ce = add(log(mean_left), log(sub(Tensor::scalar(1.0), mean_left)));
  return scale(sum(ce), -0.5 / static_cast<double>(cfg.num_internal()));
}

TotalLossResult total_loss(const Tensor& z_views, const Tensor& branch_views,
                           const std::vector<int>& labels, int epoch, const LossWeights& w,
                           const LossOptions& opts, const TreeConfig& cfg) {
  w.validate();
  int64_t n = z_views.rows();
  if (branch_views.rows() != n) {
    throw ShapeError("total_loss: embedding and branch stacks disagree on view count");
  }
  int64_t half = n / 2;

  ContrastiveResult c = contrastive_loss(z_views, labels, w);

  std::vector<int64_t> first_rows(static_cast<size_t>(half));
  std::vector<int64_t> second_rows(static_cast<size_t>(half));
  for (int64_t i = 0; i < half; ++i) {
    first_rows[static_cast<size_t>(i)] = i;
    second_rows[static_cast<size_t>(i)] = i + half;
  }
  LevelPosteriors p1 = level_posteriors(gather_rows(branch_views, first_rows), cfg);
  LevelPosteriors p2 = level_posteriors(gather_rows(branch_views, second_rows), cfg);

  Tensor hier = hierarchical_loss(p1, p2, labels, opts.hier_ignore_labels);
  Tensor reg = balance_regularizer(branch_views, cfg);

  TotalLossResult out;
  out.breakdown.l_unsup = c.unsup.item();
  out.breakdown.l_sup = c.has_labelled ? c.sup.item() : 0.0;
  out.breakdown.l_contrastive = c.value.item();
  out.breakdown.l_hier = hier.item();
  out.breakdown.l_reg = reg.item();

  bool warmup = epoch < w.warmup_epochs;
  if (warmup) {
    // Hierarchical terms are logged above but stay out of the objective, so
    // they receive no gradient.
    out.objective = c.value;
  } else {
    Tensor obj = add(hier, scale(reg, w.beta));
    if (opts.contrastive_in_objective) obj = add(obj, scale(c.value, w.gamma));
    out.objective = obj;
  }
  out.breakdown.l_total = out.objective.item();
  return out;
}

}  // namespace hgcd
