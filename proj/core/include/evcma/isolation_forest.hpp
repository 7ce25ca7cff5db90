#pragma once

// Isolation forest on fixed-length feature vectors.

#include <cstdint>
#include <span>
#include <vector>

namespace evcma {

/// c(n): average unsuccessful-search path length in a binary search tree of n
/// points, c(1) = 0.
double average_path_length(std::size_t n);

struct IsolationForestConfig {
  int n_trees = 100;
  int subsample = 256;  // ψ
  std::uint64_t seed = 0;
};

class IsolationForest {
 public:
  /// Each tree grows on a seeded subsample (without replacement) of min(ψ, n) rows
  /// to height ceil(log2 ψ). Splits draw an attribute uniformly among those that
  /// are non-constant in the node, then a threshold uniformly in (min, max).
  void fit(const std::vector<std::vector<double>>& rows, const IsolationForestConfig& config);

  /// Path length of `x` in one tree, including the c(size) leaf adjustment.
  double path_length(std::span<const double> x, std::size_t tree) const;
  double mean_path_length(std::span<const double> x) const;
  /// s(x) = 2^(-E[h(x)] / c(ψ)), in (0, 1]; higher is more anomalous.
  double score(std::span<const double> x) const;

  std::size_t tree_count() const noexcept { return trees_.size(); }
  std::size_t dimension() const noexcept { return dim_; }
  std::size_t sample_size() const noexcept { return psi_; }

 private:
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    std::size_t size = 0;
  };
  using Tree = std::vector<Node>;

  std::vector<Tree> trees_;
  std::size_t dim_ = 0;
  std::size_t psi_ = 0;
};

}  // namespace evcma
