#include "hgcd/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <set>

#include "hgcd/rng.hpp"

namespace hgcd {

namespace {

double sq_dist(const double* a, const double* b, int64_t d) {
  double s = 0.0;
  for (int64_t j = 0; j < d; ++j) {
    double diff = a[j] - b[j];
    s += diff * diff;
  }
  return s;
}

}  // namespace

ClusterResult semi_kmeans(const Tensor& embeddings, const std::vector<int>& class_ids,
                          const std::vector<uint8_t>& labelled_mask, int64_t num_clusters,
                          uint64_t seed, double tol, int max_iter) {
  if (embeddings.rank() != 2) {
    throw ShapeError("semi_kmeans: embeddings must be rank-2, got " +
                     shape_str(embeddings.shape()));
  }
  int64_t n = embeddings.rows(), d = embeddings.cols();
  if (static_cast<int64_t>(class_ids.size()) != n ||
      static_cast<int64_t>(labelled_mask.size()) != n) {
    throw ShapeError("semi_kmeans: class ids / labelled mask do not match the sample count");
  }
  if (num_clusters > n) {
    throw ConfigError("semi_kmeans: " + std::to_string(num_clusters) + " clusters for " +
                      std::to_string(n) + " points");
  }

  // Distinct labelled classes, sorted: class i of this list is pinned to
  // cluster i.
  std::set<int> labelled_class_set;
  for (int64_t i = 0; i < n; ++i) {
    if (labelled_mask[static_cast<size_t>(i)]) {
      labelled_class_set.insert(class_ids[static_cast<size_t>(i)]);
    }
  }
  std::vector<int> pinned(labelled_class_set.begin(), labelled_class_set.end());
  int64_t num_pinned = static_cast<int64_t>(pinned.size());
  if (num_clusters < num_pinned) {
    throw ConfigError("semi_kmeans: " + std::to_string(num_clusters) +
                      " clusters cannot cover " + std::to_string(num_pinned) +
                      " labelled classes");
  }

  const double* x = embeddings.values().data();
  std::vector<int64_t> unlabelled;
  for (int64_t i = 0; i < n; ++i) {
    if (!labelled_mask[static_cast<size_t>(i)]) unlabelled.push_back(i);
  }

  ClusterResult res;
  res.num_clusters = num_clusters;
  res.dim = d;
  res.pinned_classes = pinned;
  res.assignments.assign(static_cast<size_t>(n), -1);
  res.centroids.assign(static_cast<size_t>(num_clusters * d), 0.0);

  // Pinned centroids: labelled-class means.
  for (int64_t c = 0; c < num_pinned; ++c) {
    double* cen = res.centroids.data() + c * d;
    int64_t count = 0;
    for (int64_t i = 0; i < n; ++i) {
      if (labelled_mask[static_cast<size_t>(i)] &&
          class_ids[static_cast<size_t>(i)] == pinned[static_cast<size_t>(c)]) {
        const double* r = x + i * d;
        for (int64_t j = 0; j < d; ++j) cen[j] += r[j];
        ++count;
        res.assignments[static_cast<size_t>(i)] = static_cast<int>(c);
      }
    }
    for (int64_t j = 0; j < d; ++j) cen[j] /= static_cast<double>(count);
  }

  // Remaining centroids: k-means++ over unlabelled points, seeded from the
  // pinned centroids (D^2 to the nearest already-chosen centroid).
  Rng rng(derive_seed(seed, kStreamKmeans));
  std::vector<uint8_t> used(unlabelled.size(), 0);
  for (int64_t c = num_pinned; c < num_clusters; ++c) {
    std::vector<double> weight(unlabelled.size(), 0.0);
    double total = 0.0;
    for (size_t u = 0; u < unlabelled.size(); ++u) {
      if (used[u]) continue;
      const double* r = x + unlabelled[u] * d;
      double best = std::numeric_limits<double>::infinity();
      for (int64_t k = 0; k < c; ++k) {
        best = std::min(best, sq_dist(r, res.centroids.data() + k * d, d));
      }
      if (c == 0) best = 1.0;  // no centroids yet: uniform
      weight[u] = best;
      total += best;
    }
    size_t pick = 0;
    if (total > 0.0) {
      double target = rng.uniform() * total;
      double acc = 0.0;
      pick = unlabelled.size();  // falls back to the last eligible point
      for (size_t u = 0; u < unlabelled.size(); ++u) {
        if (used[u]) continue;
        acc += weight[u];
        if (pick == unlabelled.size()) pick = u;
        if (acc >= target) {
          pick = u;
          break;
        }
      }
    } else {
      // All candidate weights zero (duplicates of existing centroids): take
      // the first unused unlabelled point, else the first unlabelled point.
      bool found = false;
      for (size_t u = 0; u < unlabelled.size(); ++u) {
        if (!used[u]) {
          pick = u;
          found = true;
          break;
        }
      }
      if (!found) pick = 0;
    }
    used[pick] = 1;
    const double* r = x + unlabelled[pick] * d;
    std::copy(r, r + d, res.centroids.data() + c * d);
  }

  std::vector<double> new_centroids(static_cast<size_t>(num_clusters * d));
  std::vector<int64_t> counts(static_cast<size_t>(num_clusters));
  for (int iter = 0; iter < max_iter; ++iter) {
    res.iterations = iter + 1;
    // Assignment: labelled points stay pinned; unlabelled points move to the
    // nearest centroid, ties toward the lowest cluster id.
    for (int64_t i : unlabelled) {
      const double* r = x + i * d;
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int64_t k = 0; k < num_clusters; ++k) {
        double dist = sq_dist(r, res.centroids.data() + k * d, d);
        if (dist < best_d) {
          best_d = dist;
          best = static_cast<int>(k);
        }
      }
      res.assignments[static_cast<size_t>(i)] = best;
    }

    // Update: mean of all assigned points, in sample-index order.
    std::fill(new_centroids.begin(), new_centroids.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (int64_t i = 0; i < n; ++i) {
      int k = res.assignments[static_cast<size_t>(i)];
      const double* r = x + i * d;
      double* cen = new_centroids.data() + static_cast<int64_t>(k) * d;
      for (int64_t j = 0; j < d; ++j) cen[j] += r[j];
      ++counts[static_cast<size_t>(k)];
    }
    double max_shift = 0.0;
    bool reseeded = false;
    for (int64_t k = 0; k < num_clusters; ++k) {
      double* cen = new_centroids.data() + k * d;
      if (counts[static_cast<size_t>(k)] > 0) {
        for (int64_t j = 0; j < d; ++j) cen[j] /= static_cast<double>(counts[static_cast<size_t>(k)]);
      } else {
        // Deterministic reseed: the unlabelled point farthest from this
        // cluster's stale centroid (never touches labelled assignments).
        const double* stale = res.centroids.data() + k * d;
        int64_t far_idx = -1;
        double far_d = -1.0;
        for (int64_t i : unlabelled) {
          double dist = sq_dist(x + i * d, stale, d);
          if (dist > far_d) {
            far_d = dist;
            far_idx = i;
          }
        }
        if (far_idx >= 0) {
          std::copy(x + far_idx * d, x + (far_idx + 1) * d, cen);
        } else {
          std::copy(stale, stale + d, cen);  // no unlabelled points at all
        }
        reseeded = true;
      }
      double shift = std::sqrt(sq_dist(cen, res.centroids.data() + k * d, d));
      max_shift = std::max(max_shift, shift);
    }
    std::copy(new_centroids.begin(), new_centroids.end(), res.centroids.begin());
    if (max_shift < tol && !reseeded) {
      res.converged = true;
      break;
    }
  }
  return res;
}

HungarianResult hungarian(const std::vector<double>& cost, int64_t rows, int64_t cols) {
  if (rows <= 0 || cols <= 0 || static_cast<int64_t>(cost.size()) != rows * cols) {
    throw ShapeError("hungarian: bad cost matrix dimensions");
  }
  double max_abs = 0.0;
  for (double v : cost) {
    if (std::isnan(v)) throw NumericError("hungarian: NaN in cost matrix");
    max_abs = std::max(max_abs, std::abs(v));
  }
  int64_t n = std::max(rows, cols);
  // Pad rectangular inputs to square with a constant worse than any real
  // entry; padded pairings never displace a real optimum.
  double pad = max_abs * static_cast<double>(n) + 1.0;
  std::vector<double> a(static_cast<size_t>(n * n), pad);
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols; ++j)
      a[static_cast<size_t>(i * n + j)] = cost[static_cast<size_t>(i * cols + j)];

  // Kuhn-Munkres with row/column potentials, O(n^3).
  std::vector<double> u(static_cast<size_t>(n + 1), 0.0), v(static_cast<size_t>(n + 1), 0.0);
  std::vector<int64_t> p(static_cast<size_t>(n + 1), 0), way(static_cast<size_t>(n + 1), 0);
  for (int64_t i = 1; i <= n; ++i) {
    p[0] = i;
    int64_t j0 = 0;
    std::vector<double> minv(static_cast<size_t>(n + 1), std::numeric_limits<double>::infinity());
    std::vector<uint8_t> visited(static_cast<size_t>(n + 1), 0);
    do {
      visited[static_cast<size_t>(j0)] = 1;
      int64_t i0 = p[static_cast<size_t>(j0)], j1 = 0;
      double delta = std::numeric_limits<double>::infinity();
      for (int64_t j = 1; j <= n; ++j) {
        if (visited[static_cast<size_t>(j)]) continue;
        double cur = a[static_cast<size_t>((i0 - 1) * n + (j - 1))] - u[static_cast<size_t>(i0)] -
                     v[static_cast<size_t>(j)];
        if (cur < minv[static_cast<size_t>(j)]) {
          minv[static_cast<size_t>(j)] = cur;
          way[static_cast<size_t>(j)] = j0;
        }
        if (minv[static_cast<size_t>(j)] < delta) {
          delta = minv[static_cast<size_t>(j)];
          j1 = j;
        }
      }
      for (int64_t j = 0; j <= n; ++j) {
        if (visited[static_cast<size_t>(j)]) {
          u[static_cast<size_t>(p[static_cast<size_t>(j)])] += delta;
          v[static_cast<size_t>(j)] -= delta;
        } else {
          minv[static_cast<size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<size_t>(j0)] != 0);
    do {
      int64_t j1 = way[static_cast<size_t>(j0)];
      p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
      j0 = j1;
    } while (j0 != 0);
  }

  HungarianResult res;
  res.assignment.assign(static_cast<size_t>(rows), -1);
  for (int64_t j = 1; j <= n; ++j) {
    int64_t i = p[static_cast<size_t>(j)];
    if (i >= 1 && i <= rows && j <= cols) {
      res.assignment[static_cast<size_t>(i - 1)] = static_cast<int>(j - 1);
    }
  }
  for (int64_t i = 0; i < rows; ++i) {
    int j = res.assignment[static_cast<size_t>(i)];
    if (j >= 0) res.total_cost += cost[static_cast<size_t>(i * cols + j)];
  }
  return res;
}

GcdReport score(const ClusterResult& clusters, const std::vector<int>& truth,
                const std::vector<int>& known_classes, const std::vector<uint8_t>& labelled_mask,
                int64_t num_classes) {
  int64_t n = static_cast<int64_t>(truth.size());
  if (static_cast<int64_t>(clusters.assignments.size()) != n ||
      static_cast<int64_t>(labelled_mask.size()) != n) {
    throw ShapeError("score: assignments / labels / mask sizes disagree");
  }
  int64_t kc = clusters.num_clusters;
  if (kc < num_classes) {
    throw ConfigError("score: " + std::to_string(kc) + " clusters cannot cover " +
                      std::to_string(num_classes) + " ground-truth classes");
  }

  GcdReport rep;
  rep.num_classes = num_classes;
  rep.num_clusters = kc;
  rep.confusion.assign(static_cast<size_t>(num_classes * kc), 0);
  for (int64_t i = 0; i < n; ++i) {
    if (labelled_mask[static_cast<size_t>(i)]) continue;
    int c = truth[static_cast<size_t>(i)];
    int k = clusters.assignments[static_cast<size_t>(i)];
    ++rep.confusion[static_cast<size_t>(c * kc + k)];
    ++rep.unlabelled_total;
  }
  if (rep.unlabelled_total == 0) {
    throw DataError("score: no unlabelled samples to evaluate");
  }

  // Hungarian maximizes the matched count: minimize negated counts on a
  // square matrix (zero-count rows pad missing classes).
  int64_t nsq = kc;  // kc >= num_classes
  std::vector<double> costm(static_cast<size_t>(nsq * nsq), 0.0);
  for (int64_t c = 0; c < num_classes; ++c)
    for (int64_t k = 0; k < kc; ++k)
      costm[static_cast<size_t>(c * nsq + k)] =
          -static_cast<double>(rep.confusion[static_cast<size_t>(c * kc + k)]);
  HungarianResult match = hungarian(costm, nsq, nsq);

  rep.mapping.assign(static_cast<size_t>(kc), -1);
  for (int64_t c = 0; c < num_classes; ++c) {
    int k = match.assignment[static_cast<size_t>(c)];
    if (k >= 0 && k < kc) rep.mapping[static_cast<size_t>(k)] = static_cast<int>(c);
  }

  auto is_known = [&](int c) {
    return std::binary_search(known_classes.begin(), known_classes.end(), c);
  };
  std::vector<int> sorted_known = known_classes;
  std::sort(sorted_known.begin(), sorted_known.end());

  int64_t correct_all = 0, correct_known = 0, correct_novel = 0;
  for (int64_t i = 0; i < n; ++i) {
    if (labelled_mask[static_cast<size_t>(i)]) continue;
    int c = truth[static_cast<size_t>(i)];
    int k = clusters.assignments[static_cast<size_t>(i)];
    bool known = std::binary_search(sorted_known.begin(), sorted_known.end(), c);
    if (known) {
      ++rep.unlabelled_known;
    } else {
      ++rep.unlabelled_novel;
    }
    bool correct = rep.mapping[static_cast<size_t>(k)] == c;
    if (correct) {
      ++correct_all;
      if (known) {
        ++correct_known;
      } else {
        ++correct_novel;
      }
    }
  }
  (void)is_known;
  rep.acc_all = static_cast<double>(correct_all) / static_cast<double>(rep.unlabelled_total);
  rep.acc_known = rep.unlabelled_known > 0 ? static_cast<double>(correct_known) /
                                                 static_cast<double>(rep.unlabelled_known)
                                           : 0.0;
  rep.acc_novel = rep.unlabelled_novel > 0 ? static_cast<double>(correct_novel) /
                                                 static_cast<double>(rep.unlabelled_novel)
                                           : 0.0;
  return rep;
}

void write_confusion_csv(const GcdReport& report, const std::vector<std::string>& class_names,
                         const std::vector<int>& known_classes, std::ostream& out) {
  std::vector<int> sorted_known = known_classes;
  std::sort(sorted_known.begin(), sorted_known.end());
  auto name_of = [&](int c) {
    std::string name = c >= 0 && c < static_cast<int>(class_names.size())
                           ? class_names[static_cast<size_t>(c)]
                           : "unmatched";
    if (c >= 0 && !std::binary_search(sorted_known.begin(), sorted_known.end(), c)) name += "*";
    return name;
  };

  out << "true\\cluster";
  for (int64_t k = 0; k < report.num_clusters; ++k) {
    out << "," << name_of(report.mapping[static_cast<size_t>(k)]);
  }
  out << "\n";
  for (int64_t c = 0; c < report.num_classes; ++c) {
    out << name_of(static_cast<int>(c));
    for (int64_t k = 0; k < report.num_clusters; ++k) {
      out << "," << report.confusion[static_cast<size_t>(c * report.num_clusters + k)];
    }
    out << "\n";
  }
}

}  // namespace hgcd
