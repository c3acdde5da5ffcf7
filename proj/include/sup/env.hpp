#pragma once

// env.hpp - Deterministic toy manipulation world.
//
// The robot is a point end-effector with first-order controller lag: each
// tick moves a fixed fraction of the remaining gap to the commanded target,
// so sparse waypoints are tracked less faithfully than dense ones. A
// velocity-like gripper channel integrates commands into an aperture; an
// object attaches when the aperture crosses the grasp threshold while the
// EEF is within grasp radius, and detaches when the gripper reopens.
//
// Three scripted tasks ship: reach_grasp_place (contact-critical),
// push_path (gross motion), fold_mix (grasp, arc transport, precise
// release). The scripted expert re-plans its waypoint program from the
// current observation and doubles as the frozen chunk-emitting base policy.
// Demonstrations are deliberately slow; the controller could cover a
// chunk's span in a couple of ticks. Near contact the expert closes the
// gripper while still sliding in and rotates the wrist into the grasp, so
// coarse downsampling both trips the deviation metric and physically
// misses the grasp window.

#include "sup/chunking.hpp"
#include "sup/geometry.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sup {

inline constexpr int kStateDim = 8;   // position(3) + quat(4) + aperture(1)
inline constexpr int kActionDim = 8;  // eef(3) + quat(4) + gripper(1)

struct Observation {
  Pose eef;
  double gripper_aperture{1.0};
  int held_object{-1};  // -1 = none
  std::map<int, Pose> object_poses;
};

/// Robot-state vector seen by the world model: EEF pose with the quaternion
/// sign-canonicalized (w >= 0) plus the gripper aperture. Object poses are
/// environment state, not robot state, and are deliberately excluded.
inline Eigen::VectorXd to_state_vector(const Observation& obs) {
  Eigen::VectorXd v(kStateDim);
  const Quat q = obs.eef.orientation.canonicalized();
  v << obs.eef.position.x(), obs.eef.position.y(), obs.eef.position.z(), q.w,
      q.x, q.y, q.z, obs.gripper_aperture;
  return v;
}

inline Pose eef_pose_from_state(const Eigen::VectorXd& v) {
  if (v.size() < 7) {
    throw std::invalid_argument("eef_pose_from_state: vector too short");
  }
  Pose p;
  p.position = Vec3(v[0], v[1], v[2]);
  const double n =
      std::sqrt(v[3] * v[3] + v[4] * v[4] + v[5] * v[5] + v[6] * v[6]);
  if (n < 1e-9) {
    p.orientation = Quat::identity();
  } else {
    p.orientation = Quat(v[3], v[4], v[5], v[6]);
  }
  return p;
}

inline Eigen::VectorXd action_to_vector(const Action& a) {
  Eigen::VectorXd v(kActionDim);
  const Quat q = a.eef_orientation.canonicalized();
  v << a.eef_position.x(), a.eef_position.y(), a.eef_position.z(), q.w, q.x,
      q.y, q.z, a.gripper;
  return v;
}

struct WorldParams {
  double controller_gain{0.6};  // fraction of the target gap closed per tick
  double grasp_threshold{0.35};
  double grasp_radius{0.0065};
  // a closing crossing that lands near but outside grasp_radius shoves the
  // object instead of catching it
  double knock_radius{0.030};
  double knock_distance{0.05};
};

enum class GoalKind { kReach, kGrasp, kPlace };

struct GoalPredicate {
  GoalKind kind{GoalKind::kReach};
  int object_id{-1};
  Vec3 center{0.0, 0.0, 0.0};
  double radius{0.02};

  bool satisfied(const Observation& obs) const {
    switch (kind) {
      case GoalKind::kReach:
        return (obs.eef.position - center).norm() <= radius;
      case GoalKind::kGrasp:
        return obs.held_object == object_id;
      case GoalKind::kPlace: {
        const auto it = obs.object_poses.find(object_id);
        return it != obs.object_poses.end() && obs.held_object != object_id &&
               (it->second.position - center).norm() <= radius;
      }
    }
    return false;
  }
};

struct TaskSpec {
  std::string id;
  std::vector<GoalPredicate> goals;
  double success_tolerance{0.02};
  int horizon_cap{600};
  ControlMode mode{ControlMode::kAbs};
  int chunk_length{24};
  WorldParams world;

  // scene geometry
  Vec3 eef_start{0.0, 0.0, 0.22};
  Vec3 object_nominal{0.0, 0.0, 0.0};
  double object_jitter{0.015};
  Vec3 place_center{0.0, 0.0, 0.0};
  std::vector<Vec3> via_points;  // push_path route knots
  double hover_z{0.10};
  double surface_z{0.02};
};

/// One control tick of the world. Pure: the caller keeps the returned state.
inline Observation step(const Observation& obs, const Action& a,
                        ControlMode mode, const WorldParams& world) {
  const double alpha = world.controller_gain;
  Observation next = obs;

  const Vec3 target_pos = (mode == ControlMode::kAbs)
                              ? a.eef_position
                              : obs.eef.position + a.eef_position;
  next.eef.position = obs.eef.position + alpha * (target_pos - obs.eef.position);

  const Quat target_q = (mode == ControlMode::kAbs)
                            ? a.eef_orientation
                            : obs.eef.orientation * a.eef_orientation;
  next.eef.orientation = nlerp(obs.eef.orientation, target_q, alpha);

  next.gripper_aperture =
      std::min(1.0, std::max(0.0, obs.gripper_aperture + a.gripper));

  // grasp on the closing crossing, release on reopening past the threshold
  if (obs.held_object < 0 &&
      obs.gripper_aperture >= world.grasp_threshold &&
      next.gripper_aperture < world.grasp_threshold) {
    int nearest = -1;
    double nearest_dist = world.knock_radius;
    for (const auto& [id, pose] : next.object_poses) {
      const double d = (pose.position - next.eef.position).norm();
      if (d <= nearest_dist) {
        nearest_dist = d;
        nearest = id;
      }
    }
    if (nearest >= 0 && nearest_dist <= world.grasp_radius) {
      next.held_object = nearest;
    } else if (nearest >= 0) {
      // fumbled grasp: the closing gripper shoves the object sideways
      Vec3& op = next.object_poses[nearest].position;
      Vec3 dir = op - next.eef.position;
      dir.z() = 0.0;
      const double n = dir.norm();
      dir = (n < 1e-9) ? Vec3(1.0, 0.0, 0.0) : Vec3(dir / n);
      op += world.knock_distance * dir;
    }
  } else if (obs.held_object >= 0 &&
             next.gripper_aperture >= world.grasp_threshold) {
    next.held_object = -1;
  }

  if (next.held_object >= 0) {
    next.object_poses[next.held_object] = next.eef;
  }
  return next;
}

/// Applies the chunk tick by tick; returns the pose after each tick plus the
/// final observation. Ground-truth counterpart of the world model's predict.
inline std::pair<Trajectory, Observation> rollout(const Observation& obs,
                                                  const ActionChunk& chunk,
                                                  const WorldParams& world) {
  Trajectory traj;
  traj.poses.reserve(chunk.size());
  Observation cur = obs;
  for (const Action& a : chunk.actions) {
    cur = step(cur, a, chunk.mode, world);
    traj.poses.push_back(cur.eef);
  }
  return {traj, cur};
}

// ---------------------------------------------------------------------------
// Tasks
// ---------------------------------------------------------------------------

inline TaskSpec make_task(const std::string& name, int chunk_length = 24) {
  TaskSpec t;
  t.id = name;
  t.chunk_length = chunk_length;
  if (name == "reach_grasp_place") {
    t.eef_start = Vec3(0.00, 0.00, 0.18);
    t.object_nominal = Vec3(0.24, 0.10, 0.02);
    t.object_jitter = 0.015;
    t.place_center = Vec3(0.24, -0.16, 0.02);
    t.horizon_cap = 700;
    t.goals = {
        {GoalKind::kReach, -1, Vec3(0.24, 0.10, 0.10), 0.06},
        {GoalKind::kGrasp, 0, Vec3::Zero(), 0.0},
        {GoalKind::kPlace, 0, t.place_center, t.success_tolerance},
    };
  } else if (name == "push_path") {
    t.eef_start = Vec3(0.00, 0.00, 0.05);
    t.via_points = {Vec3(0.16, 0.13, 0.05), Vec3(0.33, 0.00, 0.05),
                    Vec3(0.16, -0.13, 0.05)};
    t.horizon_cap = 420;
    t.goals = {
        {GoalKind::kReach, -1, t.via_points[0], 0.032},
        {GoalKind::kReach, -1, t.via_points[1], 0.032},
        {GoalKind::kReach, -1, t.via_points[2], 0.032},
    };
  } else if (name == "fold_mix") {
    t.eef_start = Vec3(0.00, 0.00, 0.16);
    t.object_nominal = Vec3(0.20, 0.14, 0.02);
    t.object_jitter = 0.012;
    t.place_center = Vec3(0.20, -0.14, 0.02);
    t.horizon_cap = 700;
    t.goals = {
        {GoalKind::kGrasp, 0, Vec3::Zero(), 0.0},
        {GoalKind::kReach, -1, Vec3(0.27, 0.00, 0.13), 0.05},
        {GoalKind::kPlace, 0, t.place_center, t.success_tolerance},
    };
  } else {
    throw std::invalid_argument("make_task: unknown task '" + name + "'");
  }
  return t;
}

inline std::vector<std::string> default_task_names() {
  return {"reach_grasp_place", "push_path", "fold_mix"};
}

inline Observation initial_observation(const TaskSpec& task,
                                       std::uint64_t seed) {
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Observation obs;
  obs.eef.position = task.eef_start;
  obs.gripper_aperture = 1.0;
  if (task.id != "push_path") {
    Pose p;
    p.position = task.object_nominal +
                 Vec3(u(rng) * task.object_jitter, u(rng) * task.object_jitter,
                      0.0);
    obs.object_poses[0] = p;
  }
  return obs;
}

// ---------------------------------------------------------------------------
// Scripted expert / base policy
// ---------------------------------------------------------------------------

/// Generator pacing. Demonstration pace is deliberately slow, slower still
/// inside the contact envelope.
struct ExpertTuning {
  double free_pace{0.0080};
  double contact_pace{0.0040};
  double grip_close{-0.11};
  double grip_open{0.30};
  double wrist_rotation{0.50};  // radians swept over the closing descent
  double pace_scale{1.0};       // per-seed jitter for demos
  Vec3 waypoint_offset{0.0, 0.0, 0.0};
};

namespace detail {

struct PlanStep {
  std::string phase;
  Vec3 target;
  Quat orient;
  double pace{0.0};
  double grip{0.0};
};

struct SimState {
  Vec3 pos;
  Quat orient;
  double aperture;
  int held;
  std::map<int, Vec3> objects;
};

inline double horiz_dist(const Vec3& a, const Vec3& b) {
  return std::hypot(a.x() - b.x(), a.y() - b.y());
}

inline Quat yaw_quat(double angle) {
  return Quat::from_axis_angle(Vec3(0, 0, 1), angle);
}

// Shared grasp sub-program: approach above the object, then descend while
// rotating the wrist in, closing the gripper over the last stretch so the
// crossing lands just above the object at demonstration pace. A failed
// closure knocks the object out of the closing zone, so "half-open and far
// from the object" unambiguously means a recovery is due.
inline bool plan_grasp(const SimState& s, const TaskSpec& task,
                       const ExpertTuning& tune, PlanStep* out) {
  const Vec3 obj = s.objects.count(0) ? s.objects.at(0) : task.object_nominal;
  const double close_ticks = std::ceil(0.66 / -tune.grip_close);
  const double close_start = close_ticks * tune.contact_pace + 0.0015;
  const double close_zone = close_start * 1.25;
  const double rot_span = 0.060;  // wrist rotates over the last 6 cm of descent
  const double dist = (s.pos - obj).norm();

  const bool closing_here =
      dist <= close_zone && s.aperture > task.world.grasp_threshold - 0.22;
  if (s.aperture < 0.95 && !closing_here) {
    out->phase = "reopen";
    out->target = Vec3(s.pos.x(), s.pos.y(), obj.z() + 0.07);
    out->orient = Quat::identity();
    out->pace = tune.contact_pace;
    out->grip = tune.grip_open;
    return true;
  }
  if (horiz_dist(s.pos, obj) > 0.004) {
    out->phase = "approach";
    out->target = Vec3(obj.x(), obj.y(), task.hover_z);
    out->orient = Quat::identity();
    out->pace = tune.free_pace;
    return true;
  }
  // wrist rotates in as the descent closes the last few centimeters
  const double rot_progress =
      std::min(1.0, std::max(0.0, 1.0 - (dist - 0.004) / rot_span));
  out->orient = yaw_quat(tune.wrist_rotation * rot_progress);
  out->target = obj;
  out->pace = tune.contact_pace;
  if (dist > close_start) {
    out->phase = "descend";
  } else {
    out->phase = "grasp";
    out->grip = tune.grip_close;
  }
  return true;
}

inline PlanStep plan_reach_grasp_place(const SimState& s, const TaskSpec& task,
                                       const ExpertTuning& tune) {
  PlanStep out;
  out.orient = Quat::identity();
  const Vec3 obj = s.objects.count(0) ? s.objects.at(0) : task.object_nominal;
  const Vec3 place = task.place_center + tune.waypoint_offset;
  const double hover = task.hover_z;
  const double place_z = task.surface_z + 0.012;

  const bool placed =
      s.held != 0 && (obj - task.place_center).norm() <= task.success_tolerance;
  if (placed) {
    out.phase = "done";
    out.target = s.pos;
    return out;
  }
  if (s.held == 0) {
    if (horiz_dist(s.pos, place) > 0.004) {
      if (s.pos.z() < hover - 0.004) {
        out.phase = "lift";
        out.target = Vec3(s.pos.x(), s.pos.y(), hover);
        out.pace = tune.contact_pace;
      } else {
        out.phase = "transport";
        out.target = Vec3(place.x(), place.y(), hover);
        out.pace = tune.free_pace;
      }
    } else if (s.pos.z() > place_z + 0.002) {
      out.phase = "place";
      out.target = Vec3(place.x(), place.y(), place_z);
      out.pace = tune.contact_pace;
    } else {
      out.phase = "release";
      out.target = Vec3(place.x(), place.y(), place_z);
      out.grip = tune.grip_open;
    }
    return out;
  }
  plan_grasp(s, task, tune, &out);
  return out;
}

// Dense polyline through the push route; progress is recovered from position
// alone (nearest vertex), which keeps the policy memoryless.
inline std::vector<Vec3> route_polyline(const std::vector<Vec3>& knots,
                                        const Vec3& start) {
  std::vector<Vec3> pts;
  Vec3 prev = start;
  for (const Vec3& knot : knots) {
    const double len = (knot - prev).norm();
    const int segs = std::max(1, static_cast<int>(std::ceil(len / 0.002)));
    for (int i = 1; i <= segs; ++i) {
      pts.push_back(prev + (static_cast<double>(i) / segs) * (knot - prev));
    }
    prev = knot;
  }
  return pts;
}

inline std::size_t nearest_vertex(const std::vector<Vec3>& pts,
                                  const Vec3& p) {
  std::size_t best = 0;
  double best_d = (pts[0] - p).squaredNorm();
  for (std::size_t i = 1; i < pts.size(); ++i) {
    const double d = (pts[i] - p).squaredNorm();
    if (d < best_d) {
      best_d = d;
      best = i;
    }
  }
  return best;
}

inline PlanStep plan_push_path(const SimState& s, const TaskSpec& task,
                               const ExpertTuning& tune) {
  std::vector<Vec3> knots = task.via_points;
  for (auto& k : knots) {
    k += tune.waypoint_offset;
  }
  const std::vector<Vec3> pts = route_polyline(knots, task.eef_start);
  PlanStep out;
  const std::size_t at = nearest_vertex(pts, s.pos);
  if (at + 1 >= pts.size() && (s.pos - pts.back()).norm() < 0.004) {
    out.phase = "done";
    out.target = s.pos;
    out.orient = Quat::identity();
    return out;
  }
  const std::size_t ahead = std::min(at + 6, pts.size() - 1);
  out.target = pts[ahead];
  const std::size_t third = pts.size() / 3;
  out.phase =
      at < third ? "sweep_in" : (at < 2 * third ? "sweep_mid" : "sweep_out");
  out.orient = Quat::identity();
  out.pace = tune.free_pace;
  return out;
}

inline PlanStep plan_fold_mix(const SimState& s, const TaskSpec& task,
                              const ExpertTuning& tune) {
  PlanStep out;
  out.orient = Quat::identity();
  const Vec3 obj = s.objects.count(0) ? s.objects.at(0) : task.object_nominal;
  const Vec3 place = task.place_center + tune.waypoint_offset;
  const double place_z = task.surface_z + 0.012;
  const Vec3 apex(0.27, 0.00, 0.13);

  const bool placed =
      s.held != 0 && (obj - task.place_center).norm() <= task.success_tolerance;
  if (placed) {
    out.phase = "done";
    out.target = s.pos;
    return out;
  }
  if (s.held == 0) {
    // fold arc over the apex, then a precise release; progress along the arc
    // is recovered by projecting onto a fixed route polyline
    if (horiz_dist(s.pos, place) > 0.004) {
      out.phase = "arc";
      const std::vector<Vec3> route = route_polyline(
          {apex, Vec3(place.x(), place.y(), task.hover_z),
           Vec3(place.x(), place.y(), place_z)},
          task.object_nominal);
      const std::size_t at = nearest_vertex(route, s.pos);
      out.target = route[std::min(at + 6, route.size() - 1)];
      out.pace = tune.free_pace;
    } else if (s.pos.z() > place_z + 0.002) {
      out.phase = "place";
      out.target = Vec3(place.x(), place.y(), place_z);
      out.pace = tune.contact_pace;
    } else {
      out.phase = "release";
      out.target = Vec3(place.x(), place.y(), place_z);
      out.grip = tune.grip_open;
    }
    return out;
  }
  plan_grasp(s, task, tune, &out);
  return out;
}

inline PlanStep plan_tick(const SimState& s, const TaskSpec& task,
                          const ExpertTuning& tune) {
  if (task.id == "reach_grasp_place") {
    return plan_reach_grasp_place(s, task, tune);
  }
  if (task.id == "push_path") {
    return plan_push_path(s, task, tune);
  }
  if (task.id == "fold_mix") {
    return plan_fold_mix(s, task, tune);
  }
  throw std::invalid_argument("plan_tick: unknown task '" + task.id + "'");
}

inline SimState sim_from_observation(const Observation& obs) {
  SimState sim;
  sim.pos = obs.eef.position;
  sim.orient = obs.eef.orientation;
  sim.aperture = obs.gripper_aperture;
  sim.held = obs.held_object;
  for (const auto& [id, pose] : obs.object_poses) {
    sim.objects[id] = pose.position;
  }
  return sim;
}

}  // namespace detail

/// The expert's waypoint program from the current observation: n absolute
/// target waypoints advancing at demonstration pace, with gripper commands
/// where the program closes or opens. Deterministic given (obs, task, tune).
inline ActionChunk expert_chunk(const Observation& obs, const TaskSpec& task,
                                const ExpertTuning& tune) {
  detail::SimState sim = detail::sim_from_observation(obs);

  ActionChunk chunk;
  chunk.mode = task.mode;
  chunk.actions.reserve(static_cast<std::size_t>(task.chunk_length));
  for (int i = 0; i < task.chunk_length; ++i) {
    const detail::PlanStep plan = detail::plan_tick(sim, task, tune);
    const double pace = plan.pace * tune.pace_scale;
    const Vec3 gap = plan.target - sim.pos;
    const double dist = gap.norm();
    Vec3 next_wp = plan.target;
    if (dist > pace && dist > 1e-12) {
      next_wp = sim.pos + (pace / dist) * gap;
    }
    Action a;
    a.eef_position = next_wp;
    a.eef_orientation = nlerp(sim.orient, plan.orient, 0.35);
    a.gripper = plan.grip;
    chunk.actions.push_back(a);

    // advance the expert's intent; assumes its own waypoints are tracked
    sim.pos = next_wp;
    sim.orient = a.eef_orientation;
    const double prev_ap = sim.aperture;
    sim.aperture = std::min(1.0, std::max(0.0, sim.aperture + plan.grip));
    if (sim.held < 0 && prev_ap >= task.world.grasp_threshold &&
        sim.aperture < task.world.grasp_threshold) {
      for (const auto& [id, p] : sim.objects) {
        if ((p - sim.pos).norm() <= task.world.grasp_radius) {
          sim.held = id;
          break;
        }
      }
    } else if (sim.held >= 0 && sim.aperture >= task.world.grasp_threshold) {
      sim.held = -1;
    }
    if (sim.held >= 0) {
      sim.objects[sim.held] = sim.pos;
    }
  }
  return chunk;
}

/// Frozen base policy: the expert program at nominal pace with no jitter.
inline ActionChunk base_policy_chunk(const Observation& obs,
                                     const TaskSpec& task) {
  return expert_chunk(obs, task, ExpertTuning{});
}

/// Phase label the expert would assign to this state; used for case-study
/// traces.
inline std::string phase_label(const Observation& obs, const TaskSpec& task) {
  return detail::plan_tick(detail::sim_from_observation(obs), task,
                           ExpertTuning{})
      .phase;
}

inline bool is_contact_phase(const std::string& phase) {
  return phase == "descend" || phase == "grasp" || phase == "place" ||
         phase == "release" || phase == "reopen";
}

// ---------------------------------------------------------------------------
// Episodes
// ---------------------------------------------------------------------------

struct Episode {
  std::string task_id;
  std::uint64_t seed{0};
  std::vector<Observation> observations;  // length + 1 entries
  std::vector<std::pair<ActionChunk, int>> chunks;  // chunk, first step index
  bool success{false};
  int length{0};
};

/// Ordered goal evaluation over the episode's observation sequence.
inline bool is_success(const Episode& ep, const TaskSpec& task) {
  std::size_t next_goal = 0;
  for (const Observation& obs : ep.observations) {
    while (next_goal < task.goals.size() &&
           task.goals[next_goal].satisfied(obs)) {
      ++next_goal;
    }
  }
  return next_goal == task.goals.size();
}

/// Scripted demonstration: closed-loop expert rollout at rate 1 with
/// per-seed scene, pace, and waypoint jitter. Demos always succeed; running
/// out of horizon is a generator bug and throws.
inline Episode gen_demo(const TaskSpec& task, std::uint64_t seed) {
  std::mt19937_64 rng(seed * 0x2545f4914f6cdd1dull + 0x1234567);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ExpertTuning tune;
  tune.pace_scale = 1.0 + 0.08 * u(rng);
  tune.waypoint_offset = Vec3(0.002 * u(rng), 0.002 * u(rng), 0.0);

  Episode ep;
  ep.task_id = task.id;
  ep.seed = seed;
  Observation obs = initial_observation(task, seed);
  ep.observations.push_back(obs);

  std::size_t next_goal = 0;
  auto advance_goals = [&](const Observation& o) {
    while (next_goal < task.goals.size() && task.goals[next_goal].satisfied(o)) {
      ++next_goal;
    }
  };
  advance_goals(obs);

  while (next_goal < task.goals.size()) {
    if (ep.length + task.chunk_length > task.horizon_cap) {
      throw std::runtime_error("gen_demo: horizon exceeded on task " + task.id +
                               " seed " + std::to_string(seed));
    }
    const ActionChunk chunk = expert_chunk(obs, task, tune);
    ep.chunks.emplace_back(chunk, ep.length);
    for (const Action& a : chunk.actions) {
      obs = step(obs, a, task.mode, task.world);
      ep.observations.push_back(obs);
      ++ep.length;
      advance_goals(obs);
    }
  }
  ep.success = true;
  return ep;
}

}  // namespace sup
