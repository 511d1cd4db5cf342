#pragma once

#include <algorithm>
#include <limits>
#include <numeric>
#include <vector>

#include "fliptest/core_data.hpp"
#include "fliptest/random.hpp"

namespace fliptest {

/// Minimum-cost bijection between two equal-size samples:
/// row i of the source is matched with row assignment[i] of the target.
struct ExactMap {
  std::vector<std::size_t> assignment;
  double total_cost = 0.0;
  double mean_cost = 0.0;

  std::size_t size() const { return assignment.size(); }

  /// Target rows in source order, i.e. f(S_i) for every i. Row ids are the
  /// target's, so lookups into a predictions file stay valid.
  FeatureMatrix apply(const FeatureMatrix& target) const {
    if (target.rows() != assignment.size()) {
      throw Error(Errc::kShapeMismatch, "assignment of size " + std::to_string(size()) +
                                            " applied to " + std::to_string(target.rows()) +
                                            " target rows");
    }
    return target.select_rows(assignment);
  }

  /// The inverse bijection, from target to source.
  ExactMap inverse() const {
    ExactMap inv{std::vector<std::size_t>(size()), total_cost, mean_cost};
    for (std::size_t i = 0; i < size(); ++i) inv.assignment[assignment[i]] = i;
    return inv;
  }
};

/// Solves the dense square assignment problem min sum_i C(i, p(i)) with the
/// shortest-augmenting-path Hungarian method (row potentials u, column
/// potentials v). O(n^3) time, O(n) extra memory.
inline std::vector<std::size_t> solve_assignment(const CostMatrix& cost) {
  const auto n = static_cast<std::size_t>(cost.rows());
  if (static_cast<std::size_t>(cost.cols()) != n) {
    throw Error(Errc::kUnequalSizes, "assignment needs a square cost matrix");
  }
  constexpr double kInf = std::numeric_limits<double>::infinity();
  // 1-based columns; column 0 is a virtual column holding the row being added.
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), min_slack(n + 1);
  std::vector<std::size_t> col_owner(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1);

  for (std::size_t row = 1; row <= n; ++row) {
    col_owner[0] = row;
    std::size_t col0 = 0;
    std::fill(min_slack.begin(), min_slack.end(), kInf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[col0] = 1;
      const std::size_t r = col_owner[col0];
      const double* crow = cost.data() + (r - 1) * n;
      double delta = kInf;
      std::size_t col1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double slack = crow[j - 1] - u[r] - v[j];
        if (slack < min_slack[j]) {
          min_slack[j] = slack;
          way[j] = col0;
        }
        if (min_slack[j] < delta) {
          delta = min_slack[j];
          col1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[col_owner[j]] += delta;
          v[j] -= delta;
        } else {
          min_slack[j] -= delta;
        }
      }
      col0 = col1;
    } while (col_owner[col0] != 0);
    do {
      const std::size_t prev = way[col0];
      col_owner[col0] = col_owner[prev];
      col0 = prev;
    } while (col0 != 0);
  }

  std::vector<std::size_t> assignment(n);
  for (std::size_t j = 1; j <= n; ++j) assignment[col_owner[j] - 1] = j - 1;
  return assignment;
}

namespace detail {

inline void check_exact_inputs(const GroupedDataset& data) {
  const std::size_t na = data.group_a.rows(), nb = data.group_b.rows();
  if (na == 0 || nb == 0) throw Error(Errc::kEmptyDataset, "exact transport needs n >= 1");
  if (na != nb) {
    throw Error(Errc::kUnequalSizes, "groups have " + std::to_string(na) + " and " +
                                         std::to_string(nb) +
                                         " rows; subsample the larger group first");
  }
}

inline ExactMap finish_map(const CostMatrix& cost, std::vector<std::size_t> assignment) {
  ExactMap map{std::move(assignment), 0.0, 0.0};
  for (std::size_t i = 0; i < map.size(); ++i) {
    map.total_cost += cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(map.assignment[i]));
  }
  map.mean_cost = map.total_cost / static_cast<double>(map.size());
  return map;
}

}  // namespace detail

/// Exact optimal transport between equal-size groups.
inline ExactMap solve_exact(const GroupedDataset& data, const CostFunction& c = {},
                            unsigned threads = 1) {
  detail::check_exact_inputs(data);
  const CostMatrix cost = cost_matrix(c, data.group_a, data.group_b, threads);
  return detail::finish_map(cost, solve_assignment(cost));
}

/// Exhaustive search over all n! bijections (n <= 9). Among equal-cost optima
/// the lexicographically smallest assignment wins. Test oracle only.
inline ExactMap brute_force_exact(const GroupedDataset& data, const CostFunction& c = {}) {
  detail::check_exact_inputs(data);
  const std::size_t n = data.group_a.rows();
  if (n > 9) throw Error(Errc::kTooLarge, "brute force limited to n <= 9, got " + std::to_string(n));
  const CostMatrix cost = cost_matrix(c, data.group_a, data.group_b);
  std::vector<std::size_t> perm(n), best;
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  double best_cost = std::numeric_limits<double>::infinity();
  // next_permutation visits permutations in lexicographic order, so a strict
  // improvement test keeps the first (smallest) optimum.
  do {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      total += cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(perm[i]));
    }
    if (total < best_cost) {
      best_cost = total;
      best = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return detail::finish_map(cost, std::move(best));
}

/// Row indices of a uniform draw of k out of n without replacement;
/// deterministic per seed.
inline std::vector<std::size_t> subsample_indices(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k > n) {
    throw Error(Errc::kKTooLarge, "cannot draw " + std::to_string(k) + " of " + std::to_string(n) + " rows");
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  Rng rng(substream_seed(seed, "subsample"));
  // Partial Fisher-Yates: the first k slots are the sample.
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(idx[i], idx[pick(rng)]);
  }
  idx.resize(k);
  return idx;
}

inline FeatureMatrix subsample(const FeatureMatrix& data, std::size_t k, std::uint64_t seed) {
  return data.select_rows(subsample_indices(data.rows(), k, seed));
}

/// Seeded subsample of both groups to `k` rows each (labels follow rows).
inline GroupedDataset subsample_groups(const GroupedDataset& data, std::size_t k, std::uint64_t seed) {
  const auto ia = subsample_indices(data.group_a.rows(), k, substream_seed(seed, "group_a"));
  const auto ib = subsample_indices(data.group_b.rows(), k, substream_seed(seed, "group_b"));
  auto pick_labels = [](const std::optional<std::vector<int>>& labels,
                        const std::vector<std::size_t>& idx) -> std::optional<std::vector<int>> {
    if (!labels) return std::nullopt;
    std::vector<int> out;
    out.reserve(idx.size());
    for (auto i : idx) out.push_back((*labels)[i]);
    return out;
  };
  return GroupedDataset(data.group_a.select_rows(ia), data.group_b.select_rows(ib),
                        pick_labels(data.labels_a, ia), pick_labels(data.labels_b, ib));
}

}  // namespace fliptest
