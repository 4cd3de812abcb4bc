#pragma once

#include <vector>

#include "common.hpp"

namespace aesmpfp {

// Fixed-capacity prioritized ring buffer over a binary sum tree.  Leaves hold
// per-slot priorities; every internal node is maintained as the exact sum of
// its two children (parents are recomputed, not delta-adjusted, so the
// invariant holds to rounding at all times).  Handles are opaque 64-bit ids
// owned by the caller.
class SumTree {
 public:
  explicit SumTree(size_t capacity) : cap_(capacity) {
    if (capacity == 0 || (capacity & (capacity - 1)) != 0)
      throw ConfigError("sumtree: capacity must be a power of two");
    nodes_.assign(2 * cap_ - 1, 0.0);
    handles_.assign(cap_, 0);
    filled_.assign(cap_, false);
  }

  size_t capacity() const { return cap_; }
  size_t size() const { return size_; }
  size_t write_cursor() const { return cursor_; }
  // Restores ring position when rebuilding from a snapshot.
  void set_write_cursor(size_t cursor) {
    if (cursor >= cap_) throw ConfigError("sumtree: cursor out of range");
    cursor_ = cursor;
  }
  double total() const { return nodes_[0]; }

  // Overwrites the slot at the write cursor (ring semantics) and returns it.
  size_t insert(uint64_t handle, double priority) {
    const size_t slot = cursor_;
    handles_[slot] = handle;
    if (!filled_[slot]) {
      filled_[slot] = true;
      ++size_;
    }
    set_leaf(slot, priority);
    cursor_ = (cursor_ + 1) % cap_;
    return slot;
  }

  void update(size_t slot, double priority) {
    if (slot >= cap_ || !filled_[slot]) throw Error("sumtree: update of empty slot");
    set_leaf(slot, priority);
  }

  double priority_at(size_t slot) const { return nodes_[cap_ - 1 + slot]; }
  uint64_t handle_at(size_t slot) const { return handles_[slot]; }
  bool filled(size_t slot) const { return slot < cap_ && filled_[slot]; }

  struct Sampled {
    size_t slot;
    uint64_t handle;
    double priority;
  };

  // Prefix-sum descent: returns the leaf whose cumulative interval contains u.
  Sampled sample(double u) const {
    if (size_ == 0 || total() <= 0.0) throw EmptyTree("sumtree: nothing to sample");
    if (u < 0.0) throw Error("sumtree: negative sample point");
    size_t node = 0;
    while (node < cap_ - 1) {
      const size_t left = 2 * node + 1;
      if (u < nodes_[left]) {
        node = left;
      } else {
        u -= nodes_[left];
        node = left + 1;
      }
    }
    const size_t slot = node - (cap_ - 1);
    return {slot, handles_[slot], nodes_[node]};
  }

  // Largest |node - (left + right)| over all internal nodes.
  double max_child_sum_error() const {
    double worst = 0.0;
    for (size_t i = 0; i < cap_ - 1; ++i)
      worst = std::max(worst,
                       std::abs(nodes_[i] - (nodes_[2 * i + 1] + nodes_[2 * i + 2])));
    return worst;
  }

 private:
  size_t cap_;
  std::vector<double> nodes_;
  std::vector<uint64_t> handles_;
  std::vector<bool> filled_;
  size_t cursor_ = 0;
  size_t size_ = 0;

  void set_leaf(size_t slot, double priority) {
    if (!(priority >= 0.0) || !std::isfinite(priority))
      throw Error("sumtree: priority must be finite and >= 0");
    size_t node = cap_ - 1 + slot;
    nodes_[node] = priority;
    while (node > 0) {
      node = (node - 1) / 2;
      nodes_[node] = nodes_[2 * node + 1] + nodes_[2 * node + 2];
    }
  }
};

}  // namespace aesmpfp
