#pragma once

#include <fstream>
#include <sstream>
#include <vector>

#include "geometry.hpp"

namespace aesmpfp {

enum class GoalStage { Pick, DoorStart, DoorEnd, Place };

inline const char* stage_name(GoalStage s) {
  switch (s) {
    case GoalStage::Pick: return "Pick";
    case GoalStage::DoorStart: return "DoorStart";
    case GoalStage::DoorEnd: return "DoorEnd";
    case GoalStage::Place: return "Place";
  }
  return "?";
}

inline GoalStage stage_from_name(const std::string& s) {
  if (s == "Pick") return GoalStage::Pick;
  if (s == "DoorStart") return GoalStage::DoorStart;
  if (s == "DoorEnd") return GoalStage::DoorEnd;
  if (s == "Place") return GoalStage::Place;
  throw ScenarioError("unknown goal stage: " + s);
}

struct Goal {
  Vec2 pos;
  GoalStage stage;
};

struct DynamicObstacle {
  Circle shape;       // shape.center is the position at phase 0
  double speed = 0;   // m/s along the waypoint loop
  std::vector<Vec2> waypoints;
};

// World description loaded from a flat key-value text file.
//
//   schema_version = 1
//   name = cross_room_a
//   world = xmin ymin xmax ymax
//   spawn = xmin ymin xmax ymax
//   rng_seed = 12345
//   ee_speed = 0.15
//   rect = xmin ymin xmax ymax        (repeatable; static obstacle)
//   circle = cx cy r                  (repeatable; static obstacle)
//   door = xmin ymin xmax ymax        (optional wall removed after DoorEnd)
//   goal = x y Stage                  (repeatable, in task order)
//   dyn = cx cy r speed x1 y1 x2 y2 ...  (repeatable; waypoint loop)
//
// '#' starts a comment; unknown keys are errors.
struct Scenario {
  std::string name;
  Rect world{-2, -2, 2, 2};
  Rect spawn_region;
  uint64_t rng_seed = 0;
  double ee_speed = 0.15;
  std::vector<Rect> static_rects;
  std::vector<Circle> static_circles;
  bool has_door = false;
  Rect door;
  std::vector<Goal> goal_sequence;
  std::vector<DynamicObstacle> dynamic_obstacles;
};

namespace scenario_detail {

inline std::vector<std::string> tokenize(const std::string& s) {
  std::istringstream is(s);
  std::vector<std::string> out;
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

inline double num(const std::string& tok, int line_no) {
  try {
    size_t pos = 0;
    const double v = std::stod(tok, &pos);
    if (pos != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw ScenarioError("scenario line " + std::to_string(line_no) +
                        ": bad number '" + tok + "'");
  }
}

}  // namespace scenario_detail

inline Scenario parse_scenario(std::istream& is) {
  using scenario_detail::num;
  using scenario_detail::tokenize;
  Scenario sc;
  bool saw_version = false;
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const size_t eq = line.find('=');
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (eq == std::string::npos)
      throw ScenarioError("scenario line " + std::to_string(line_no) + ": missing '='");
    std::string key = line.substr(0, eq);
    key.erase(0, key.find_first_not_of(" \t"));
    key.erase(key.find_last_not_of(" \t") + 1);
    const std::vector<std::string> v = tokenize(line.substr(eq + 1));
    auto want = [&](size_t n) {
      if (v.size() != n)
        throw ScenarioError("scenario line " + std::to_string(line_no) + ": key '" +
                            key + "' expects " + std::to_string(n) + " values");
    };

    if (key == "schema_version") {
      want(1);
      if (num(v[0], line_no) != 1.0)
        throw ScenarioError("unsupported scenario schema_version");
      saw_version = true;
    } else if (key == "name") {
      want(1);
      sc.name = v[0];
    } else if (key == "world") {
      want(4);
      sc.world = {num(v[0], line_no), num(v[1], line_no), num(v[2], line_no),
                  num(v[3], line_no)};
    } else if (key == "spawn") {
      want(4);
      sc.spawn_region = {num(v[0], line_no), num(v[1], line_no), num(v[2], line_no),
                         num(v[3], line_no)};
    } else if (key == "rng_seed") {
      want(1);
      sc.rng_seed = static_cast<uint64_t>(std::stoull(v[0]));
    } else if (key == "ee_speed") {
      want(1);
      sc.ee_speed = num(v[0], line_no);
    } else if (key == "rect") {
      want(4);
      sc.static_rects.push_back({num(v[0], line_no), num(v[1], line_no),
                                 num(v[2], line_no), num(v[3], line_no)});
    } else if (key == "circle") {
      want(3);
      sc.static_circles.push_back(
          {{num(v[0], line_no), num(v[1], line_no)}, num(v[2], line_no)});
    } else if (key == "door") {
      want(4);
      sc.has_door = true;
      sc.door = {num(v[0], line_no), num(v[1], line_no), num(v[2], line_no),
                 num(v[3], line_no)};
    } else if (key == "goal") {
      want(3);
      sc.goal_sequence.push_back(
          {{num(v[0], line_no), num(v[1], line_no)}, stage_from_name(v[2])});
    } else if (key == "dyn") {
      if (v.size() < 6 || (v.size() - 4) % 2 != 0)
        throw ScenarioError("scenario line " + std::to_string(line_no) +
                            ": dyn expects cx cy r speed + waypoint pairs");
      DynamicObstacle d;
      d.shape = {{num(v[0], line_no), num(v[1], line_no)}, num(v[2], line_no)};
      d.speed = num(v[3], line_no);
      for (size_t i = 4; i + 1 < v.size(); i += 2)
        d.waypoints.push_back({num(v[i], line_no), num(v[i + 1], line_no)});
      sc.dynamic_obstacles.push_back(std::move(d));
    } else {
      throw ScenarioError("scenario line " + std::to_string(line_no) +
                          ": unknown key '" + key + "'");
    }
  }
  if (!saw_version) throw ScenarioError("scenario: missing schema_version");
  if (sc.goal_sequence.empty()) throw ScenarioError("scenario: no goals");
  if (sc.spawn_region.width() <= 0 || sc.spawn_region.height() <= 0)
    throw ScenarioError("scenario: empty spawn region");
  for (const Goal& g : sc.goal_sequence)
    if (!sc.world.contains(g.pos)) throw ScenarioError("scenario: goal outside world");
  return sc;
}

inline Scenario load_scenario(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ScenarioError("cannot open scenario file: " + path);
  Scenario sc = parse_scenario(is);
  if (sc.name.empty()) sc.name = path;
  return sc;
}

}  // namespace aesmpfp
