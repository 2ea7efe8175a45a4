#include "semtwin/env.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

namespace semtwin {

namespace {
constexpr double kPi = 3.14159265358979323846;

double wrap_angle(double a) {
  while (a > kPi) a -= 2.0 * kPi;
  while (a < -kPi) a += 2.0 * kPi;
  return a;
}
}  // namespace

double NavState::distance_to_target() const {
  return std::hypot(x - target_x, y - target_y);
}

NavEnv::NavEnv(NavConfig cfg) : cfg_(cfg) {}

Action NavEnv::clamp(const Action& a) const {
  Action c;
  c.forward = std::clamp(a.forward, 0.0, cfg_.max_forward);
  c.vertical = std::clamp(a.vertical, -cfg_.max_vertical, cfg_.max_vertical);
  c.yaw_rate = std::clamp(a.yaw_rate, -cfg_.max_yaw, cfg_.max_yaw);
  return c;
}

Observation NavEnv::reset(uint64_t seed) {
  Rng rng(mix_seed(seed, 0xE17));
  state_ = NavState{};
  state_.x = cfg_.arena / 2.0;
  state_.y = cfg_.arena / 2.0;
  state_.heading = rng.uniform(-kPi, kPi);

  const double ang = rng.uniform(0.0, 2.0 * kPi);
  state_.target_x = state_.x + cfg_.target_radius * std::cos(ang);
  state_.target_y = state_.y + cfg_.target_radius * std::sin(ang);

  state_.obstacles.clear();
  int attempts = 0;
  while (static_cast<int>(state_.obstacles.size()) < cfg_.num_obstacles && attempts < 10000) {
    ++attempts;
    Obstacle ob;
    ob.radius = rng.uniform(cfg_.obstacle_min_r, cfg_.obstacle_max_r);
    ob.x = rng.uniform(ob.radius, cfg_.arena - ob.radius);
    ob.y = rng.uniform(ob.radius, cfg_.arena - ob.radius);
    const double d_start = std::hypot(ob.x - state_.x, ob.y - state_.y);
    const double d_target = std::hypot(ob.x - state_.target_x, ob.y - state_.target_y);
    if (d_start < ob.radius + cfg_.clearance) continue;
    if (d_target < ob.radius + cfg_.clearance) continue;
    state_.obstacles.push_back(ob);
  }
  SEMTWIN_CHECK(static_cast<int>(state_.obstacles.size()) == cfg_.num_obstacles,
                "obstacle placement failed");

  prev_sectors_ = sector_ranges();
  prev_action_ = Action{};
  return observe();
}

StepOutcome NavEnv::step(const Action& raw) {
  SEMTWIN_CHECK(!state_.terminal(), "step() after terminal state");
  const Action a = clamp(raw);
  prev_sectors_ = sector_ranges();
  prev_action_ = a;

  const double d_prev = state_.distance_to_target();
  state_.heading = wrap_angle(state_.heading + a.yaw_rate * cfg_.dt);
  state_.x += a.forward * cfg_.dt * std::cos(state_.heading);
  state_.y += a.forward * cfg_.dt * std::sin(state_.heading);
  state_.x = std::clamp(state_.x, 0.0, cfg_.arena);
  state_.y = std::clamp(state_.y, 0.0, cfg_.arena);
  state_.z += a.vertical * cfg_.dt;
  state_.t += 1;

  const double d = state_.distance_to_target();
  StepOutcome out;
  out.success = d <= cfg_.success_radius;
  for (const auto& ob : state_.obstacles) {
    if (std::hypot(state_.x - ob.x, state_.y - ob.y) <= ob.radius) {
      out.collision = true;
      break;
    }
  }
  if (out.success) out.collision = false;  // reaching the goal dominates
  out.truncated = !out.success && !out.collision && state_.t >= cfg_.horizon;
  out.reward = (d_prev - d) + cfg_.success_reward * (out.success ? 1.0 : 0.0) -
               cfg_.collision_penalty * (out.collision ? 1.0 : 0.0) - cfg_.step_penalty;

  state_.success = out.success;
  state_.collision = out.collision;
  state_.truncated = out.truncated;
  return out;
}

std::vector<double> NavEnv::sector_ranges() const {
  std::vector<double> ranges(cfg_.sectors, cfg_.sensor_range);
  const double width = 2.0 * kPi / cfg_.sectors;
  for (const auto& ob : state_.obstacles) {
    const double dx = ob.x - state_.x, dy = ob.y - state_.y;
    const double dist = std::max(0.0, std::hypot(dx, dy) - ob.radius);
    if (dist >= cfg_.sensor_range) continue;
    const double rel = wrap_angle(std::atan2(dy, dx) - state_.heading);
    // sector 0 is centered on the heading
    int idx = static_cast<int>(std::floor((rel + width / 2.0) / width));
    idx = ((idx % cfg_.sectors) + cfg_.sectors) % cfg_.sectors;
    ranges[idx] = std::min(ranges[idx], dist);
  }
  return ranges;
}

Observation NavEnv::observe() const {
  Observation o;
  o.reserve(observation_dim());
  const auto sect = sector_ranges();
  for (double s : sect) o.push_back(s / cfg_.sensor_range);
  for (int i = 0; i < cfg_.sectors; ++i)
    o.push_back((sect[i] - prev_sectors_[i]) / cfg_.sensor_range);
  const double bearing =
      wrap_angle(std::atan2(state_.target_y - state_.y, state_.target_x - state_.x) -
                 state_.heading);
  o.push_back(bearing / kPi);
  o.push_back(state_.distance_to_target() / 100.0);
  o.push_back(prev_action_.forward / cfg_.max_forward);
  o.push_back(prev_action_.vertical / cfg_.max_vertical);
  o.push_back(prev_action_.yaw_rate / cfg_.max_yaw);
  return o;
}

void NavEnv::write_trace_header(std::ostream& os) {
  os << "t,x,y,heading,distance,reward,success,collision,truncated\n";
}

void NavEnv::append_trace_row(std::ostream& os, double reward) const {
  os << state_.t << ',' << state_.x << ',' << state_.y << ',' << state_.heading << ','
     << state_.distance_to_target() << ',' << reward << ',' << state_.success << ','
     << state_.collision << ',' << state_.truncated << '\n';
}

}  // namespace semtwin
