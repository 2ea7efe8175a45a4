#pragma once

// Continuous 2D navigation environment. A point agent starts at the arena
// center, the target sits on a 70 m circle, and disc obstacles are placed by
// the episode seed. Observations are range-sensor sectors plus goal geometry
// and the previously executed command.

#include <cstdint>
#include <string>
#include <vector>

#include "semtwin/common.hpp"
#include "semtwin/rng.hpp"

namespace semtwin {

struct Action {
  double forward = 0.0;  // m/s
  double vertical = 0.0; // m/s
  double yaw_rate = 0.0; // rad/s
};

struct Obstacle {
  double x = 0.0, y = 0.0, radius = 0.0;
};

struct NavConfig {
  double arena = 200.0;
  double target_radius = 70.0;
  double success_radius = 5.0;
  int horizon = 200;
  int num_obstacles = 12;
  double obstacle_min_r = 3.0;
  double obstacle_max_r = 8.0;
  double clearance = 6.0;     // obstacles keep this distance from start/target
  double sensor_range = 50.0;
  int sectors = 8;
  double dt = 1.0;
  double max_forward = 5.0;   // [0, max_forward]
  double max_vertical = 1.0;  // [-max_vertical, max_vertical]
  double max_yaw = 0.5;       // [-max_yaw, max_yaw]
  double success_reward = 10.0;
  double collision_penalty = 10.0;
  double step_penalty = 0.01;
};

struct NavState {
  double x = 0.0, y = 0.0;
  double heading = 0.0;
  double z = 0.0;  // tracked but not part of 2D collision
  double target_x = 0.0, target_y = 0.0;
  std::vector<Obstacle> obstacles;
  int t = 0;
  bool success = false;
  bool collision = false;
  bool truncated = false;
  bool terminal() const { return success || collision || truncated; }
  double distance_to_target() const;
};

struct StepOutcome {
  double reward = 0.0;
  bool success = false;
  bool collision = false;
  bool truncated = false;
};

// Fixed-length feature vector: sector ranges, sector deltas, goal bearing,
// goal distance, previous command.
using Observation = std::vector<double>;

class NavEnv {
 public:
  explicit NavEnv(NavConfig cfg = {});

  Observation reset(uint64_t seed);
  StepOutcome step(const Action& a);

  const NavState& state() const { return state_; }
  Observation observe() const;
  int observation_dim() const { return cfg_.sectors * 2 + 5; }
  const NavConfig& config() const { return cfg_; }

  Action clamp(const Action& a) const;
  std::vector<double> sector_ranges() const;

  // one CSV row per step: t,x,y,heading,d,reward,success,collision,truncated
  static void write_trace_header(std::ostream& os);
  void append_trace_row(std::ostream& os, double reward) const;

 private:
  NavConfig cfg_;
  NavState state_;
  std::vector<double> prev_sectors_;
  Action prev_action_;
};

}  // namespace semtwin
