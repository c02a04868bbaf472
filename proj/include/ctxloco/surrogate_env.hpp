#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <span>

#include "json.hpp"

#include "ctxloco/errors.hpp"
#include "ctxloco/rng.hpp"
#include "ctxloco/terrain.hpp"

namespace ctxloco {

inline constexpr int kObsDim = 16;
inline constexpr int kActionDim = 8;
inline constexpr int kNumLegs = 4;

using Observation = std::array<double, kObsDim>;

/// Observation entry indices.
namespace obs {
inline constexpr int kRoll = 0, kPitch = 1, kGyroX = 2, kGyroY = 3, kGyroZ = 4;
inline constexpr int kAccX = 5, kAccY = 6, kAccZ = 7;
inline constexpr int kHeight = 8, kVx = 9, kVy = 10, kVh = 11, kContact0 = 12;
inline constexpr int kNoisy = 8;  // entries [0, kNoisy) carry sensor noise
}  // namespace obs

/// Per-leg thrust t1..t4 followed by per-leg lateral push l1..l4.
struct Action {
  std::array<double, kActionDim> u{};

  static Action constant_thrust(double t) {
    Action a;
    for (int i = 0; i < kNumLegs; ++i) a.u[i] = t;
    return a;
  }
  double thrust(int leg) const { return u[leg]; }
  double lateral(int leg) const { return u[kNumLegs + leg]; }
};

struct BodyState {
  double x = 0, y = 0, h = 0;
  double vx = 0, vy = 0, vh = 0;
  double roll = 0, pitch = 0;
  double phase = 0;        // gait phase in cycles, [0, 1)
  double instability = 0;  // accumulated foot slip
  int low_steps = 0;       // consecutive steps below the fall height
  int step_index = 0;
};

struct StepInfo {
  double dx = 0;         // forward progress this step
  double y_penalty = 0;  // 0.03 |y| dt
  bool fell = false;
  bool impact = false;   // vertical velocity reflected this step
  double impact_speed_in = 0;
  double impact_speed_out = 0;
};

struct StepResult {
  Observation observation{};
  double reward = 0;
  bool done = false;
  StepInfo info;
};

/// Constants of the surrogate body and ground model.
struct EnvConfig {
  double dt = 0.01;
  double gravity = 9.81;
  double nominal_height = 0.5;
  double gait_hz = 1.0;
  double contact_clearance = 0.05;
  int max_steps = 5000;
  double traction_gain = 8.0;  // A, m/s^2
  double y_penalty = 0.03;
  double fall_penalty = 10.0;
  double fall_height_frac = 0.3;
  int fall_steps = 10;
  double impact_height_frac = 0.25;
  double sensor_noise = 1e-3;
  // Foot slip: commanded effort beyond the terrain's grip destabilizes the body
  // and removes vertical support.
  double grip_base = 0.15;
  double grip_per_friction = 0.85;
  double slip_gain = 10.0;
  double slip_recovery = 2.0;  // 1/s
  double slip_traction_loss = 2.0;  // thrust lost per unit of excess demand

  void validate() const {
    if (dt <= 0 || max_steps <= 0) throw ConfigError("env dt and max_steps must be positive");
  }
};

inline void to_json(nlohmann::json& j, const EnvConfig& c) {
  j = nlohmann::json{{"dt", c.dt},
                     {"max_steps", c.max_steps},
                     {"nominal_height", c.nominal_height},
                     {"traction_gain", c.traction_gain},
                     {"sensor_noise", c.sensor_noise},
                     {"grip_base", c.grip_base},
                     {"grip_per_friction", c.grip_per_friction},
                     {"slip_gain", c.slip_gain},
                     {"slip_recovery", c.slip_recovery},
                     {"slip_traction_loss", c.slip_traction_loss}};
}

inline void from_json(const nlohmann::json& j, EnvConfig& c) {
  c.dt = j.value("dt", c.dt);
  c.max_steps = j.value("max_steps", c.max_steps);
  c.nominal_height = j.value("nominal_height", c.nominal_height);
  c.traction_gain = j.value("traction_gain", c.traction_gain);
  c.sensor_noise = j.value("sensor_noise", c.sensor_noise);
  c.grip_base = j.value("grip_base", c.grip_base);
  c.grip_per_friction = j.value("grip_per_friction", c.grip_per_friction);
  c.slip_gain = j.value("slip_gain", c.slip_gain);
  c.slip_recovery = j.value("slip_recovery", c.slip_recovery);
  c.slip_traction_loss = j.value("slip_traction_loss", c.slip_traction_loss);
}

/// Outgoing / incoming vertical speed on a ground impact.
constexpr double restitution_gain(double restitution) { return 0.1 + 4.0 * restitution; }

/// Four-legged point-body locomotion surrogate.
///
/// Vertical motion is a spring-damper ground contact scaled by the fraction of
/// legs in stance; forward and lateral motion come from per-leg thrust through
/// friction, with rolling and terrain damping drag. Legs follow a trot: legs 1
/// and 4 are down in the first half of each gait cycle, legs 2 and 3 in the
/// second half.
class SurrogateEnv {
 public:
  explicit SurrogateEnv(TerrainParams terrain, EnvConfig config = {})
      : config_(config), terrain_(terrain), rng_(0) {
    config_.validate();
  }

  Observation reset(const TerrainParams& terrain, std::uint64_t seed) {
    terrain_ = terrain;
    return reset(seed);
  }

  Observation reset(std::uint64_t seed) {
    rng_ = Rng(seed);
    state_ = BodyState{};
    state_.h = config_.nominal_height;
    done_ = false;
    last_gyro_ = {0.0, 0.0, config_.gait_hz};
    last_acc_ = {0.0, 0.0, 0.0};
    return observe(contacts());
  }

  StepResult step(const Action& action_in) {
    if (done_) throw StateError("step called on a finished episode");
    const auto& c = config_;
    const auto& p = terrain_;
    BodyState& s = state_;

    Action a = action_in;
    for (auto& v : a.u) v = std::isfinite(v) ? std::clamp(v, -1.0, 1.0) : 0.0;

    const auto contact = contacts();
    double contact_frac = 0, thrust_sum = 0, lateral_sum = 0, slip = 0;
    const double grip = c.grip_base + c.grip_per_friction * p.lateral_friction();
    int stance = 0;
    for (int i = 0; i < kNumLegs; ++i) {
      if (contact[i] == 0.0) continue;
      contact_frac += 0.25;
      thrust_sum += a.thrust(i);
      lateral_sum += a.lateral(i);
      ++stance;
    }
    double traction = 1.0;
    if (stance > 0) {
      // Net traction demand per stance leg against the available grip.
      const double demand = std::hypot(thrust_sum, lateral_sum) / stance;
      const double excess = std::max(0.0, demand - grip);
      slip = contact_frac * excess;
      if (excess > 0.0) traction = std::max(0.0, 1.0 - c.slip_traction_loss * excess / demand);
    }
    s.instability = std::max(0.0, s.instability + c.dt * (c.slip_gain * slip - c.slip_recovery * s.instability));
    const double support = std::clamp(1.0 - s.instability, 0.0, 1.0);

    StepResult out;

    // Vertical spring-damper.
    const double h0 = c.nominal_height;
    const double k_eff = 200.0 + 1800.0 * p.stiffness();
    const double c_eff = 2.0 + 38.0 * (p.damping() / 0.5);
    const double vh_prev = s.vh;
    const double ah = -c.gravity + contact_frac * support * (k_eff * std::max(0.0, h0 - s.h) - c_eff * s.vh);
    s.vh += ah * c.dt;
    const double h_prev = s.h;
    s.h += s.vh * c.dt;
    const double impact_h = c.impact_height_frac * h0;
    if (h_prev >= impact_h && s.h < impact_h && s.vh < 0.0) {
      out.info.impact = true;
      out.info.impact_speed_in = -s.vh;
      s.vh = -restitution_gain(p.restitution()) * s.vh;
      out.info.impact_speed_out = s.vh;
    }
    if (s.h < 0.0) {
      s.h = 0.0;
      s.vh = std::max(0.0, s.vh);
    }

    // Traction.
    const double sink = 0.5 + 0.5 * p.stiffness();
    const double c_roll = 0.05 + 0.45 * (p.rolling_friction() - ranges::kRollingFriction.lo) /
                                     ranges::kRollingFriction.width();
    const double c_terr = 1.2 * (p.damping() / 0.5);
    const double drag = c_roll + c_terr;
    const double vx_prev = s.vx, vy_prev = s.vy;
    s.vx += c.dt * (c.traction_gain * p.lateral_friction() * sink * traction * thrust_sum / kNumLegs - drag * s.vx);
    s.vy += c.dt * (0.5 * c.traction_gain * p.lateral_friction() * traction * lateral_sum / kNumLegs - drag * s.vy);
    const double dx = s.vx * c.dt;
    s.x += dx;
    s.y += s.vy * c.dt;

    s.phase += c.gait_hz * c.dt;
    s.phase -= std::floor(s.phase);

    const double roll_prev = s.roll, pitch_prev = s.pitch;
    s.roll = std::clamp(0.2 * s.vy, -0.5, 0.5);
    s.pitch = std::clamp(-0.1 * s.vx, -0.5, 0.5);
    last_gyro_ = {(s.roll - roll_prev) / c.dt, (s.pitch - pitch_prev) / c.dt, c.gait_hz};
    last_acc_ = {(s.vx - vx_prev) / c.dt, (s.vy - vy_prev) / c.dt, (s.vh - vh_prev) / c.dt};

    s.low_steps = s.h < c.fall_height_frac * h0 ? s.low_steps + 1 : 0;
    const bool fell = s.low_steps >= c.fall_steps;

    ++s.step_index;
    out.info.dx = dx;
    out.info.y_penalty = c.y_penalty * std::abs(s.y) * c.dt;
    out.info.fell = fell;
    out.reward = dx - out.info.y_penalty - (fell ? c.fall_penalty : 0.0);
    done_ = fell || s.step_index >= c.max_steps;
    out.done = done_;
    out.observation = observe(contacts());

    if (trace_ != nullptr) {
      nlohmann::json line{{"t", s.step_index}, {"x", s.x},           {"y", s.y},
                          {"h", s.h},          {"reward", out.reward}, {"contacts", contacts()}};
      *trace_ << line.dump() << '\n';
    }
    return out;
  }

  /// Contact flags for the current state: leg in its stance window and body
  /// low enough for the foot to reach the ground.
  std::array<double, kNumLegs> contacts() const {
    constexpr std::array<double, kNumLegs> offsets{0.0, 0.5, 0.5, 0.0};
    std::array<double, kNumLegs> out{};
    const bool reach = state_.h < config_.nominal_height + config_.contact_clearance;
    for (int i = 0; i < kNumLegs; ++i) {
      double ph = state_.phase + offsets[i];
      ph -= std::floor(ph);
      out[i] = (ph < 0.5 && reach) ? 1.0 : 0.0;
    }
    return out;
  }

  /// Emits one JSON line per step; pass nullptr to stop.
  void set_trace(std::ostream* os) { trace_ = os; }

  void set_terrain(const TerrainParams& terrain) { terrain_ = terrain; }

  const BodyState& state() const { return state_; }
  /// Overrides the body state; the episode becomes active again.
  void set_state(const BodyState& s) {
    state_ = s;
    done_ = false;
  }

  const TerrainParams& terrain() const { return terrain_; }
  const EnvConfig& config() const { return config_; }
  bool done() const { return done_; }

 private:
  Observation observe(const std::array<double, kNumLegs>& contact) {
    const BodyState& s = state_;
    Observation o{s.roll,         s.pitch,      last_gyro_[0], last_gyro_[1],
                  last_gyro_[2],  last_acc_[0], last_acc_[1],  last_acc_[2],
                  s.h,            s.vx,         s.vy,          s.vh,
                  contact[0],     contact[1],   contact[2],    contact[3]};
    for (int i = 0; i < obs::kNoisy; ++i) o[i] += rng_.uniform(-config_.sensor_noise, config_.sensor_noise);
    return o;
  }

  EnvConfig config_;
  TerrainParams terrain_;
  Rng rng_;
  BodyState state_;
  bool done_ = true;
  std::array<double, 3> last_gyro_{};
  std::array<double, 3> last_acc_{};
  std::ostream* trace_ = nullptr;
};

}  // namespace ctxloco
