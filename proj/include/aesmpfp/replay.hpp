#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <fstream>
#include <vector>

#include "checkpoint.hpp"
#include "envsim.hpp"
#include "sumtree.hpp"

namespace aesmpfp {

// Occupancy cells are 0/1 so a byte per cell round-trips exactly; state
// vectors stay at full precision.
struct StoredObs {
  std::array<uint8_t, kMapCells> map;
  std::array<double, kObsVecDim> vec;
};

inline StoredObs quantize_obs(const Observation& o) {
  StoredObs s;
  for (size_t i = 0; i < kMapCells; ++i)
    s.map[i] = static_cast<uint8_t>(o.map[i] * 255.0 + 0.5);
  s.vec = o.vec;
  return s;
}

inline Observation dequantize_obs(const StoredObs& s) {
  Observation o;
  for (size_t i = 0; i < kMapCells; ++i) o.map[i] = s.map[i] / 255.0;
  o.vec = s.vec;
  return o;
}

struct StoredEpisode {
  std::vector<StoredObs> obs;  // length() + 1 entries, obs[t] precedes actions[t]
  std::vector<Vec2> actions;
  std::vector<double> rewards;
  std::vector<uint8_t> ik;
  DoneReason reason = DoneReason::None;

  size_t length() const { return actions.size(); }
  // Timeout is a time-limit cut, not an environment terminal, so its TD
  // target still bootstraps.
  bool terminal() const {
    return reason == DoneReason::Success || reason == DoneReason::FailureThreshold;
  }
};

// One transition picked uniformly from the episode store.
struct TransitionRef {
  const StoredEpisode* episode;
  size_t t;
  bool done() const { return t + 1 == episode->length() && episode->terminal(); }
};

// Episode-granular FIFO store; the RL learner samples transitions uniformly.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(size_t capacity_transitions)
      : capacity_(capacity_transitions) {
    if (capacity_ == 0) throw ConfigError("replay: capacity must be positive");
  }

  void add_episode(StoredEpisode&& ep) {
    if (ep.length() == 0) throw Error("replay: empty episode");
    if (ep.obs.size() != ep.length() + 1 || ep.rewards.size() != ep.length() ||
        ep.ik.size() != ep.length())
      throw ShapeMismatch("replay: episode field lengths disagree");
    total_ += ep.length();
    episodes_.push_back(std::move(ep));
    while (total_ > capacity_ && episodes_.size() > 1) {
      total_ -= episodes_.front().length();
      episodes_.pop_front();
    }
  }

  size_t size() const { return total_; }
  size_t num_episodes() const { return episodes_.size(); }
  const StoredEpisode& episode(size_t i) const { return episodes_.at(i); }

  TransitionRef sample(RngStream& rng) const {
    if (total_ == 0) throw Error("replay: sample from empty buffer");
    size_t idx = rng.uniform_index(total_);
    for (const StoredEpisode& ep : episodes_) {
      if (idx < ep.length()) return {&ep, idx};
      idx -= ep.length();
    }
    throw Error("replay: index walk overran buffer");  // unreachable
  }

 private:
  size_t capacity_;
  size_t total_ = 0;
  std::deque<StoredEpisode> episodes_;
};

// A fragment owns copies of its window so episode eviction can never
// invalidate it. static_priority holds the non-model-error part of each
// transition's total priority (fixed once the episode ends); loss_norm holds
// the normalizer the model-error term was divided by at insert time, so
// priority refreshes keep the same [0,1] scale.
struct FragmentData {
  std::vector<StoredObs> obs;  // length() + 1
  std::vector<Vec2> actions;
  std::vector<double> rewards;
  std::vector<double> static_priority;
  std::vector<double> loss_norm;
  uint32_t start = 0;

  size_t length() const { return actions.size(); }
};

struct FragmentSample {
  size_t slot;
  double priority;
  const FragmentData* fragment;
};

// Prioritized fragment store: a ring of fragment payloads addressed by the
// SumTree's leaf slots.
class FragmentBuffer {
 public:
  explicit FragmentBuffer(size_t capacity) : tree_(capacity), slots_(capacity) {}

  size_t insert(FragmentData&& frag, double priority) {
    if (frag.length() == 0) throw Error("fragments: empty fragment");
    if (frag.obs.size() != frag.length() + 1)
      throw ShapeMismatch("fragments: obs/action lengths disagree");
    const size_t slot = tree_.insert(next_handle_++, priority);
    slots_[slot] = std::move(frag);
    return slot;
  }

  void update_priority(size_t slot, double priority) { tree_.update(slot, priority); }

  FragmentSample sample(RngStream& rng) const {
    const auto s = tree_.sample(rng.uniform01() * tree_.total());
    return {s.slot, s.priority, &slots_[s.slot]};
  }

  const FragmentData& fragment(size_t slot) const { return slots_.at(slot); }
  double priority(size_t slot) const { return tree_.priority_at(slot); }
  size_t size() const { return tree_.size(); }
  size_t capacity() const { return tree_.capacity(); }
  double total_priority() const { return tree_.size() == 0 ? 0.0 : tree_.total(); }

  void save(const std::string& path) const {
    using ckpt_detail::write_raw;
    std::ofstream os(path, std::ios::binary);
    if (!os) throw CheckpointError("fragments: cannot open " + path);
    write_raw<uint32_t>(os, kMagic);
    write_raw<uint32_t>(os, kVersion);
    write_raw<uint32_t>(os, static_cast<uint32_t>(tree_.capacity()));
    write_raw<uint32_t>(os, static_cast<uint32_t>(tree_.size()));
    write_raw<uint32_t>(os, static_cast<uint32_t>(tree_.write_cursor()));
    write_raw<uint64_t>(os, next_handle_);
    for (size_t slot = 0; slot < tree_.size(); ++slot) {
      const FragmentData& f = slots_[slot];
      write_raw<double>(os, tree_.priority_at(slot));
      write_raw<uint64_t>(os, tree_.handle_at(slot));
      write_raw<uint32_t>(os, f.start);
      write_raw<uint32_t>(os, static_cast<uint32_t>(f.length()));
      for (const StoredObs& o : f.obs) {
        os.write(reinterpret_cast<const char*>(o.map.data()), kMapCells);
        for (double v : o.vec) write_raw<double>(os, v);
      }
      for (const Vec2& a : f.actions) {
        write_raw<double>(os, a.x);
        write_raw<double>(os, a.y);
      }
      for (double r : f.rewards) write_raw<double>(os, r);
      for (double p : f.static_priority) write_raw<double>(os, p);
      for (double m : f.loss_norm) write_raw<double>(os, m);
    }
    if (!os) throw CheckpointError("fragments: write failed for " + path);
  }

  void load(const std::string& path) {
    using ckpt_detail::read_raw;
    std::ifstream is(path, std::ios::binary);
    if (!is) throw CheckpointError("fragments: cannot open " + path);
    if (read_raw<uint32_t>(is) != kMagic)
      throw CheckpointError("fragments: bad magic in " + path);
    if (read_raw<uint32_t>(is) != kVersion)
      throw CheckpointError("fragments: unsupported version in " + path);
    const uint32_t capacity = read_raw<uint32_t>(is);
    if (capacity != tree_.capacity())
      throw CheckpointError("fragments: snapshot capacity mismatch");
    const uint32_t count = read_raw<uint32_t>(is);
    const uint32_t cursor = read_raw<uint32_t>(is);
    const uint64_t next_handle = read_raw<uint64_t>(is);

    SumTree tree(capacity);
    std::vector<FragmentData> slots(capacity);
    for (uint32_t slot = 0; slot < count; ++slot) {
      const double prio = read_raw<double>(is);
      const uint64_t handle = read_raw<uint64_t>(is);
      FragmentData f;
      f.start = read_raw<uint32_t>(is);
      const uint32_t len = read_raw<uint32_t>(is);
      f.obs.resize(len + 1);
      for (StoredObs& o : f.obs) {
        is.read(reinterpret_cast<char*>(o.map.data()), kMapCells);
        for (double& v : o.vec) v = read_raw<double>(is);
      }
      f.actions.resize(len);
      for (Vec2& a : f.actions) {
        a.x = read_raw<double>(is);
        a.y = read_raw<double>(is);
      }
      f.rewards.resize(len);
      for (double& r : f.rewards) r = read_raw<double>(is);
      f.static_priority.resize(len);
      for (double& p : f.static_priority) p = read_raw<double>(is);
      f.loss_norm.resize(len);
      for (double& m : f.loss_norm) m = read_raw<double>(is);
      tree.insert(handle, prio);
      slots[slot] = std::move(f);
    }
    if (!is) throw CheckpointError("fragments: truncated snapshot " + path);
    tree.set_write_cursor(cursor);
    tree_ = std::move(tree);
    slots_ = std::move(slots);
    next_handle_ = next_handle;
  }

 private:
  static constexpr uint32_t kMagic = 0x42534541;  // "AESB"
  static constexpr uint32_t kVersion = 1;

  SumTree tree_;
  std::vector<FragmentData> slots_;
  uint64_t next_handle_ = 0;
};

}  // namespace aesmpfp
