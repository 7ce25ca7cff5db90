#include "evcma/isolation_forest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "evcma/error.hpp"

namespace evcma {
namespace {

constexpr double kEulerGamma = 0.5772156649015329;

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

}  // namespace

double average_path_length(std::size_t n) {
  if (n <= 1) return 0.0;
  if (n == 2) return 1.0;
  const double m = static_cast<double>(n - 1);
  return 2.0 * (std::log(m) + kEulerGamma) - 2.0 * m / static_cast<double>(n);
}

void IsolationForest::fit(const std::vector<std::vector<double>>& rows,
                          const IsolationForestConfig& config) {
  if (rows.empty()) throw Error(ErrorKind::kDegenerate, "isolation forest needs training rows");
  if (config.n_trees <= 0 || config.subsample <= 1) {
    throw Error(ErrorKind::kConfig, "isolation forest needs n_trees >= 1 and subsample >= 2");
  }
  dim_ = rows.front().size();
  for (const auto& r : rows) {
    if (r.size() != dim_) throw Error(ErrorKind::kDimension, "isolation forest rows differ in length");
  }
  psi_ = std::min(rows.size(), static_cast<std::size_t>(config.subsample));
  const int height_limit = static_cast<int>(std::ceil(std::log2(static_cast<double>(psi_))));
  std::mt19937_64 rng(config.seed);
  trees_.clear();
  trees_.reserve(static_cast<std::size_t>(config.n_trees));

  std::vector<std::size_t> all(rows.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::vector<int> candidates;
  for (int t = 0; t < config.n_trees; ++t) {
    // Partial Fisher-Yates for a sample without replacement.
    for (std::size_t i = 0; i < psi_; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, all.size() - 1);
      std::swap(all[i], all[pick(rng)]);
    }
    std::vector<std::size_t> idx(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(psi_));
    Tree tree;

    struct Job {
      int node;
      std::size_t begin, end;
      int depth;
    };
    tree.push_back({});
    std::vector<Job> stack{{0, 0, idx.size(), 0}};
    while (!stack.empty()) {
      const Job job = stack.back();
      stack.pop_back();
      const std::size_t n = job.end - job.begin;
      tree[static_cast<std::size_t>(job.node)].size = n;
      if (n <= 1 || job.depth >= height_limit) continue;

      candidates.clear();
      std::vector<double> lo(dim_), hi(dim_);
      for (std::size_t f = 0; f < dim_; ++f) {
        double mn = rows[idx[job.begin]][f], mx = mn;
        for (std::size_t k = job.begin + 1; k < job.end; ++k) {
          mn = std::min(mn, rows[idx[k]][f]);
          mx = std::max(mx, rows[idx[k]][f]);
        }
        lo[f] = mn;
        hi[f] = mx;
        if (mx > mn) candidates.push_back(static_cast<int>(f));
      }
      if (candidates.empty()) continue;
      std::uniform_int_distribution<std::size_t> pick_f(0, candidates.size() - 1);
      const int f = candidates[pick_f(rng)];
      const auto fu = static_cast<std::size_t>(f);
      double thr = lo[fu] + uniform01(rng) * (hi[fu] - lo[fu]);
      if (!(thr > lo[fu])) thr = std::nextafter(lo[fu], hi[fu]);
      // Points with value < thr go left.
      const auto mid = std::partition(idx.begin() + static_cast<std::ptrdiff_t>(job.begin),
                                      idx.begin() + static_cast<std::ptrdiff_t>(job.end),
                                      [&](std::size_t r) { return rows[r][fu] < thr; });
      const auto split = static_cast<std::size_t>(mid - idx.begin());
      const int left = static_cast<int>(tree.size());
      tree.push_back({});
      const int right = static_cast<int>(tree.size());
      tree.push_back({});
      auto& node = tree[static_cast<std::size_t>(job.node)];
      node.feature = f;
      node.threshold = thr;
      node.left = left;
      node.right = right;
      stack.push_back({right, split, job.end, job.depth + 1});
      stack.push_back({left, job.begin, split, job.depth + 1});
    }
    trees_.push_back(std::move(tree));
  }
}

double IsolationForest::path_length(std::span<const double> x, std::size_t tree) const {
  if (x.size() != dim_) throw Error(ErrorKind::kDimension, "isolation forest input has wrong length");
  const auto& t = trees_.at(tree);
  std::size_t cur = 0;
  double depth = 0.0;
  while (t[cur].feature >= 0) {
    const auto& node = t[cur];
    cur = static_cast<std::size_t>(x[static_cast<std::size_t>(node.feature)] < node.threshold
                                       ? node.left
                                       : node.right);
    depth += 1.0;
  }
  return depth + average_path_length(t[cur].size);
}

double IsolationForest::mean_path_length(std::span<const double> x) const {
  if (trees_.empty()) throw Error(ErrorKind::kState, "isolation forest is not fitted");
  double sum = 0.0;
  for (std::size_t t = 0; t < trees_.size(); ++t) sum += path_length(x, t);
  return sum / static_cast<double>(trees_.size());
}

double IsolationForest::score(std::span<const double> x) const {
  const double c = average_path_length(psi_);
  if (c <= 0.0) return 1.0;
  return std::pow(2.0, -mean_path_length(x) / c);
}

}  // namespace evcma
