#pragma once

#include <array>
#include <optional>

#include "scenario.hpp"

namespace aesmpfp {

constexpr size_t kMapSide = 30;
constexpr size_t kMapCells = kMapSide * kMapSide;
constexpr double kMapRes = 0.1;
constexpr size_t kObsVecDim = 14;

struct EnvConfig {
  double v_max = 0.3;
  double dt = 1.0;
  double r_min = 0.3;
  double r_max = 0.9;
  int failure_threshold = 20;
  int t_max = 200;
  double eps_goal = 0.05;
  double base_radius = 0.15;
  double progress_gain = 1.0;
  double fail_cost = 1.0;
  double goal_bonus = 5.0;

  double r_ideal() const { return 0.5 * (r_min + r_max); }
  // Per-step reward bounds: ring progress is at most v_max*dt per step.
  double reward_lo() const { return -progress_gain * v_max * dt - 2.0 * fail_cost; }
  double reward_hi() const { return progress_gain * v_max * dt + goal_bonus; }
};

// Observation: robot-centric occupancy raster plus the flattened state vector
//   [prev_action(2), base x, y, theta, base_velocity(2), ee_pos(2),
//    ee_desired(2), goal_rel(2), goal_index]
struct Observation {
  std::array<double, kMapCells> map{};
  std::array<double, kObsVecDim> vec{};
};

enum class DoneReason { None, Success, FailureThreshold, Timeout };

inline const char* done_reason_name(DoneReason r) {
  switch (r) {
    case DoneReason::None: return "None";
    case DoneReason::Success: return "Success";
    case DoneReason::FailureThreshold: return "FailureThreshold";
    case DoneReason::Timeout: return "Timeout";
  }
  return "?";
}

struct StepResult {
  Observation obs;
  double reward = 0;
  bool ik_failure = false;
  bool collision = false;
  bool goal_reached = false;
  bool done = false;
  DoneReason done_reason = DoneReason::None;
};

struct StepRecord {
  int t = 0;
  Vec2 action;
  double reward = 0;
  bool ik_failure = false;
  bool collision = false;
  int goal_index = 0;
  Vec2 base_pos;
  double base_theta = 0;
  Vec2 ee_desired;
};

struct EpisodeLog {
  std::vector<StepRecord> steps;
  DoneReason reason = DoneReason::None;
};

struct Metrics {
  int aikf = 0;
  int abc = 0;
  bool tcr_flag = false;
  bool psr_flag = false;
};

inline Metrics episode_metrics(const EpisodeLog& log, int failure_threshold = 20) {
  Metrics m;
  for (const StepRecord& s : log.steps) {
    m.aikf += s.ik_failure ? 1 : 0;
    m.abc += s.collision ? 1 : 0;
  }
  const bool success = log.reason == DoneReason::Success;
  m.tcr_flag = success && (m.aikf + m.abc) < failure_threshold;
  m.psr_flag = success && (m.aikf + m.abc) == 0;
  return m;
}

// Poses needed to rasterize the local map, independent of episode bookkeeping.
struct WorldState {
  Vec2 base;
  double theta = 0;
  bool door_open = false;
  std::vector<Vec2> dyn_pos;
};

inline bool point_occupied(const Scenario& sc, const WorldState& ws, Vec2 p) {
  if (!sc.world.contains(p)) return true;
  for (const Rect& r : sc.static_rects)
    if (r.contains(p)) return true;
  for (const Circle& c : sc.static_circles)
    if (c.contains(p)) return true;
  if (sc.has_door && !ws.door_open && sc.door.contains(p)) return true;
  for (size_t i = 0; i < sc.dynamic_obstacles.size(); ++i) {
    Circle c = sc.dynamic_obstacles[i].shape;
    if (i < ws.dyn_pos.size()) c.center = ws.dyn_pos[i];
    if (c.contains(p)) return true;
  }
  return false;
}

// Robot-centric raster: row index grows along the base heading, column index
// along the base's left; cell centers sit at ((i - 14.5) * res) body-frame.
inline std::array<double, kMapCells> render_local_map(const Scenario& sc,
                                                      const WorldState& ws) {
  std::array<double, kMapCells> map{};
  const double half = (static_cast<double>(kMapSide) - 1.0) / 2.0;
  for (size_t r = 0; r < kMapSide; ++r) {
    for (size_t c = 0; c < kMapSide; ++c) {
      const Vec2 body{(static_cast<double>(r) - half) * kMapRes,
                      (static_cast<double>(c) - half) * kMapRes};
      const Vec2 world = ws.base + rotate(body, ws.theta);
      map[r * kMapSide + c] = point_occupied(sc, ws, world) ? 1.0 : 0.0;
    }
  }
  return map;
}

class Env {
 public:
  explicit Env(Scenario scenario, EnvConfig cfg = {})
      : sc_(std::move(scenario)), cfg_(cfg) {}

  const Scenario& scenario() const { return sc_; }
  const EnvConfig& config() const { return cfg_; }
  const EpisodeLog& log() const { return log_; }
  bool done() const { return done_; }
  Vec2 base_pos() const { return base_; }
  double base_theta() const { return theta_; }
  Vec2 ee_desired() const { return ee_des_; }
  int goal_index() const { return goal_index_; }
  bool door_open() const { return door_open_; }
  int steps_taken() const { return t_; }

  Observation reset(uint64_t seed) {
    RngStream rng(derive_seed(sc_.rng_seed, seed));
    dyn_travel_.assign(sc_.dynamic_obstacles.size(), 0.0);
    door_open_ = false;
    theta_ = 0.0;

    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      base_ = {rng.uniform(sc_.spawn_region.x0, sc_.spawn_region.x1),
               rng.uniform(sc_.spawn_region.y0, sc_.spawn_region.y1)};
      placed = !base_collides(base_);
    }
    if (!placed) throw SpawnInfeasible("no collision-free spawn in spawn_region");

    goal_index_ = 0;
    ee_des_ = sc_.goal_sequence[0].pos;
    prev_action_ = {0, 0};
    base_vel_ = {0, 0};
    t_ = 0;
    cum_failures_ = 0;
    done_ = false;
    log_ = {};
    return make_observation();
  }

  StepResult step(Vec2 action) {
    if (done_) throw SteppedAfterDone("step() after episode end");

    const Vec2 cmd{clip(action.x, -cfg_.v_max, cfg_.v_max),
                   clip(action.y, -cfg_.v_max, cfg_.v_max)};
    const Vec2 pre_base = base_;

    advance_dynamic_obstacles();

    Vec2 new_base = base_ + rotate(cmd, theta_) * cfg_.dt;
    bool collision = base_collides(new_base);
    if (collision) {
      new_base = pre_base;  // revert
      base_vel_ = {0, 0};
    } else {
      base_vel_ = rotate(cmd, theta_);
    }
    base_ = new_base;

    // Scripted EE target: straight line toward the current goal.
    bool goal_reached = false;
    if (goal_index_ < static_cast<int>(sc_.goal_sequence.size())) {
      const Vec2 goal = sc_.goal_sequence[goal_index_].pos;
      const Vec2 delta = goal - ee_des_;
      const double dist = delta.norm();
      const double travel = sc_.ee_speed * cfg_.dt;
      if (dist > travel) {
        ee_des_ = ee_des_ + delta * (travel / dist);
      } else {
        ee_des_ = goal;
      }
      if ((ee_des_ - goal).norm() <= cfg_.eps_goal) {
        goal_reached = true;
        if (sc_.goal_sequence[goal_index_].stage == GoalStage::DoorEnd)
          door_open_ = true;
        ++goal_index_;
      }
    }

    const double ee_dist = (ee_des_ - base_).norm();
    const bool ik_failure = ee_dist < cfg_.r_min || ee_dist > cfg_.r_max;
    cum_failures_ += (ik_failure ? 1 : 0) + (collision ? 1 : 0);

    // Ring progress is measured against the post-step EE target so the term
    // rewards base motion only.
    const double reward = cfg_.progress_gain * (ring_dist(pre_base) - ring_dist(base_)) -
                          cfg_.fail_cost * (ik_failure ? 1.0 : 0.0) -
                          cfg_.fail_cost * (collision ? 1.0 : 0.0) +
                          cfg_.goal_bonus * (goal_reached ? 1.0 : 0.0);

    ++t_;
    prev_action_ = cmd;

    DoneReason reason = DoneReason::None;
    if (goal_index_ == static_cast<int>(sc_.goal_sequence.size())) {
      reason = DoneReason::Success;
    } else if (cum_failures_ >= cfg_.failure_threshold) {
      reason = DoneReason::FailureThreshold;
    } else if (t_ >= cfg_.t_max) {
      reason = DoneReason::Timeout;
    }
    done_ = reason != DoneReason::None;

    log_.steps.push_back({t_, cmd, reward, ik_failure, collision, goal_index_, base_,
                          theta_, ee_des_});
    if (done_) log_.reason = reason;

    StepResult res;
    res.obs = make_observation();
    res.reward = reward;
    res.ik_failure = ik_failure;
    res.collision = collision;
    res.goal_reached = goal_reached;
    res.done = done_;
    res.done_reason = reason;
    return res;
  }

  WorldState world_state() const {
    WorldState ws;
    ws.base = base_;
    ws.theta = theta_;
    ws.door_open = door_open_;
    ws.dyn_pos.reserve(sc_.dynamic_obstacles.size());
    for (size_t i = 0; i < sc_.dynamic_obstacles.size(); ++i)
      ws.dyn_pos.push_back(dyn_position(i));
    return ws;
  }

  // Position of dynamic obstacle i after its accumulated travel distance,
  // moving along the closed waypoint loop.
  Vec2 dyn_position(size_t i) const {
    const DynamicObstacle& d = sc_.dynamic_obstacles[i];
    if (d.waypoints.size() < 2) return d.shape.center;
    double loop_len = 0.0;
    for (size_t k = 0; k < d.waypoints.size(); ++k)
      loop_len += (d.waypoints[(k + 1) % d.waypoints.size()] - d.waypoints[k]).norm();
    if (loop_len <= 0.0) return d.waypoints[0];
    double s = std::fmod(dyn_travel_[i], loop_len);
    for (size_t k = 0; k < d.waypoints.size(); ++k) {
      const Vec2 a = d.waypoints[k];
      const Vec2 b = d.waypoints[(k + 1) % d.waypoints.size()];
      const double seg = (b - a).norm();
      if (s <= seg) return seg > 0.0 ? a + (b - a) * (s / seg) : a;
      s -= seg;
    }
    return d.waypoints[0];
  }

 private:
  Scenario sc_;
  EnvConfig cfg_;

  Vec2 base_;
  double theta_ = 0;
  Vec2 base_vel_;
  Vec2 prev_action_;
  Vec2 ee_des_;
  int goal_index_ = 0;
  bool door_open_ = false;
  std::vector<double> dyn_travel_;
  int t_ = 0;
  int cum_failures_ = 0;
  bool done_ = true;
  EpisodeLog log_;

  double ring_dist(Vec2 base) const {
    return std::abs((ee_des_ - base).norm() - cfg_.r_ideal());
  }

  void advance_dynamic_obstacles() {
    for (size_t i = 0; i < dyn_travel_.size(); ++i)
      dyn_travel_[i] += sc_.dynamic_obstacles[i].speed * cfg_.dt;
  }

  bool base_collides(Vec2 pos) const {
    const double r = cfg_.base_radius;
    if (pos.x - r < sc_.world.x0 || pos.x + r > sc_.world.x1 ||
        pos.y - r < sc_.world.y0 || pos.y + r > sc_.world.y1)
      return true;
    for (const Rect& rect : sc_.static_rects)
      if (disc_hits_rect(pos, r, rect)) return true;
    for (const Circle& c : sc_.static_circles)
      if (disc_hits_circle(pos, r, c)) return true;
    if (sc_.has_door && !door_open_ && disc_hits_rect(pos, r, sc_.door)) return true;
    for (size_t i = 0; i < sc_.dynamic_obstacles.size(); ++i) {
      Circle c = sc_.dynamic_obstacles[i].shape;
      c.center = dyn_position(i);
      if (disc_hits_circle(pos, r, c)) return true;
    }
    return false;
  }

  Observation make_observation() const {
    Observation o;
    o.map = render_local_map(sc_, world_state());
    const double ee_dist = (ee_des_ - base_).norm();
    Vec2 ee_pos;
    if (ee_dist >= cfg_.r_min && ee_dist <= cfg_.r_max) {
      ee_pos = ee_des_;
    } else if (ee_dist > 0.0) {
      // Arm saturates at the annulus boundary nearest the target.
      ee_pos = base_ + (ee_des_ - base_) * (clip(ee_dist, cfg_.r_min, cfg_.r_max) / ee_dist);
    } else {
      ee_pos = base_ + rotate({cfg_.r_min, 0.0}, theta_);
    }
    const Vec2 goal_rel = rotate_inv(ee_des_ - base_, theta_);
    o.vec = {prev_action_.x, prev_action_.y, base_.x,   base_.y,
             theta_,         base_vel_.x,    base_vel_.y, ee_pos.x,
             ee_pos.y,       ee_des_.x,      ee_des_.y,   goal_rel.x,
             goal_rel.y,     static_cast<double>(goal_index_)};
    return o;
  }
};

}  // namespace aesmpfp
