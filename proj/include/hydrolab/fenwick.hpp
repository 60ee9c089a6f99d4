#pragma once

#include <cstddef>
#include <vector>

namespace hydrolab {

/// Binary indexed tree over non-negative weights with weighted sampling.
/// Sums are plain doubles; the owner keeps an exact or compensated total and
/// may call rebuild() to clear accumulated drift.
class FenwickTree {
 public:
  FenwickTree() = default;
  explicit FenwickTree(std::size_t n) { reset(n); }

  void reset(std::size_t n) {
    weights_.assign(n, 0.0);
    tree_.assign(n + 1, 0.0);
    top_bit_ = 1;
    while (top_bit_ <= n) top_bit_ <<= 1;
    top_bit_ >>= 1;
  }

  std::size_t size() const noexcept { return weights_.size(); }
  double weight(std::size_t i) const { return weights_[i]; }

  void set(std::size_t i, double w) {
    const double delta = w - weights_[i];
    if (delta == 0.0) return;
    weights_[i] = w;
    for (std::size_t k = i + 1; k < tree_.size(); k += k & (~k + 1)) tree_[k] += delta;
  }

  /// Linear-time rebuild from the stored weights.
  void rebuild() {
    for (std::size_t k = 1; k < tree_.size(); ++k) tree_[k] = weights_[k - 1];
    for (std::size_t k = 1; k < tree_.size(); ++k) {
      const std::size_t parent = k + (k & (~k + 1));
      if (parent < tree_.size()) tree_[parent] += tree_[k];
    }
  }

  /// Sum of weights [0, i).
  double prefix(std::size_t i) const {
    double s = 0.0;
    for (; i > 0; i -= i & (~i + 1)) s += tree_[i];
    return s;
  }

  double total() const { return prefix(weights_.size()); }

  /// Smallest index i with prefix(i + 1) > target, skipping zero-weight
  /// entries that rounding could otherwise select.
  std::size_t find(double target) const {
    std::size_t pos = 0;
    for (std::size_t step = top_bit_; step > 0; step >>= 1) {
      const std::size_t next = pos + step;
      if (next < tree_.size() && tree_[next] <= target) {
        pos = next;
        target -= tree_[next];
      }
    }
    if (pos >= weights_.size()) pos = weights_.size() - 1;
    if (weights_[pos] > 0.0) return pos;
    for (std::size_t j = pos; j-- > 0;)
      if (weights_[j] > 0.0) return j;
    for (std::size_t j = pos + 1; j < weights_.size(); ++j)
      if (weights_[j] > 0.0) return j;
    return pos;
  }

 private:
  std::vector<double> weights_;
  std::vector<double> tree_;
  std::size_t top_bit_ = 1;
};

}  // namespace hydrolab
