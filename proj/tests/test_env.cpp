#include <catch2/catch_amalgamated.hpp>

#include "sup/env.hpp"

#include <cmath>
#include <random>

using namespace sup;

namespace {

constexpr double kPi = 3.14159265358979323846;

double observation_gap(const Observation& a, const Observation& b) {
  double g = (a.eef.position - b.eef.position).norm() +
             std::abs(a.gripper_aperture - b.gripper_aperture) +
             std::abs(static_cast<double>(a.held_object - b.held_object));
  g += geodesic_dist(a.eef.orientation, b.eef.orientation);
  for (const auto& [id, pose] : a.object_poses) {
    const auto it = b.object_poses.find(id);
    if (it == b.object_poses.end()) {
      return 1e9;
    }
    g += (pose.position - it->second.position).norm();
  }
  return g;
}

double episode_gap(const Episode& a, const Episode& b) {
  if (a.length != b.length || a.observations.size() != b.observations.size() ||
      a.chunks.size() != b.chunks.size()) {
    return 1e9;
  }
  double g = 0.0;
  for (std::size_t i = 0; i < a.observations.size(); ++i) {
    g += observation_gap(a.observations[i], b.observations[i]);
  }
  for (std::size_t c = 0; c < a.chunks.size(); ++c) {
    for (std::size_t i = 0; i < a.chunks[c].first.size(); ++i) {
      g += (a.chunks[c].first.actions[i].eef_position -
            b.chunks[c].first.actions[i].eef_position)
               .norm();
    }
  }
  return g;
}

// arc of absolute waypoints, spaced `pace` apart along the circle
ActionChunk arc_chunk(double radius, double sweep, double pace, int n) {
  ActionChunk chunk;
  chunk.mode = ControlMode::kAbs;
  const double dtheta = pace / radius;
  for (int i = 1; i <= n; ++i) {
    const double theta = std::min(sweep, i * dtheta);
    Action a;
    a.eef_position =
        Vec3(radius * std::sin(theta), radius * (1.0 - std::cos(theta)), 0.1);
    chunk.actions.push_back(a);
  }
  return chunk;
}

}  // namespace

TEST_CASE("step: zero delta and zero gripper is a fixed point") {
  WorldParams world;
  Observation obs;
  obs.eef.position = Vec3(0.1, 0.2, 0.3);
  obs.eef.orientation = Quat::from_axis_angle(Vec3(0, 0, 1), 0.4);
  obs.gripper_aperture = 0.7;
  Action a;
  a.eef_position = Vec3::Zero();
  const Observation next = step(obs, a, ControlMode::kDelta, world);
  CHECK((next.eef.position - obs.eef.position).norm() < 1e-15);
  CHECK(geodesic_dist(next.eef.orientation, obs.eef.orientation) < 1e-12);
  CHECK(next.gripper_aperture == obs.gripper_aperture);
}

TEST_CASE("step: first-order lag toward an absolute target") {
  WorldParams world;
  world.controller_gain = 0.6;
  Observation obs;
  Action a;
  a.eef_position = Vec3(1.0, 0.0, 0.0);
  const Observation one = step(obs, a, ControlMode::kAbs, world);
  CHECK((one.eef.position - Vec3(0.6, 0, 0)).norm() < 1e-12);
  const Observation two = step(one, a, ControlMode::kAbs, world);
  CHECK((two.eef.position - Vec3(0.84, 0, 0)).norm() < 1e-12);
}

TEST_CASE("step is deterministic") {
  WorldParams world;
  Observation obs;
  obs.eef.position = Vec3(0.05, -0.02, 0.11);
  Action a;
  a.eef_position = Vec3(0.2, 0.1, 0.05);
  a.gripper = -0.11;
  const Observation n1 = step(obs, a, ControlMode::kAbs, world);
  const Observation n2 = step(obs, a, ControlMode::kAbs, world);
  CHECK(observation_gap(n1, n2) == 0.0);
}

TEST_CASE("rollout: empty motion gives a constant trajectory") {
  WorldParams world;
  Observation obs;
  obs.eef.position = Vec3(0.1, 0.1, 0.1);
  ActionChunk chunk;
  chunk.mode = ControlMode::kDelta;
  for (int i = 0; i < 8; ++i) {
    Action a;
    a.eef_position = Vec3::Zero();
    chunk.actions.push_back(a);
  }
  auto [traj, last] = rollout(obs, chunk, world);
  REQUIRE(traj.size() == 8);
  for (const Pose& p : traj.poses) {
    CHECK((p.position - obs.eef.position).norm() < 1e-15);
  }
}

TEST_CASE("rollout: straight-line waypoints approach monotonically") {
  WorldParams world;
  Observation obs;
  ActionChunk chunk;
  chunk.mode = ControlMode::kAbs;
  for (int i = 1; i <= 12; ++i) {
    Action a;
    a.eef_position = Vec3(0.01 * i, 0, 0);
    chunk.actions.push_back(a);
  }
  auto [traj, last] = rollout(obs, chunk, world);
  const Vec3 goal = chunk.actions.back().eef_position;
  double prev = (obs.eef.position - goal).norm();
  for (const Pose& p : traj.poses) {
    const double d = (p.position - goal).norm();
    CHECK(d < prev);
    prev = d;
  }

  // collinear waypoints: the rate-2 rollout lands within controller-lag
  // distance of the full rollout's endpoint
  const ActionChunk half = downsample(chunk, {2});
  auto [traj2, last2] = rollout(obs, half, world);
  const double gap =
      (traj2.poses.back().position - traj.poses.back().position).norm();
  CHECK(gap < 0.02 * (1.0 - world.controller_gain) / world.controller_gain +
                  1e-6);
}

TEST_CASE("property: downsampling exacerbates tracking error on curved paths") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> rad(0.05, 0.2);
  std::uniform_real_distribution<double> sw(0.8, 2.4);
  WorldParams world;
  for (int trial = 0; trial < 50; ++trial) {
    const ActionChunk chunk = arc_chunk(rad(rng), sw(rng), 0.006, 24);
    Observation obs;
    obs.eef.position = Vec3(0, 0, 0.1);
    auto [base_traj, o1] = rollout(obs, chunk, world);
    double base_err = 0.0;
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      base_err = std::max(base_err, (base_traj[i].position -
                                     chunk.actions[i].eef_position)
                                        .norm());
    }
    for (int k = 2; k <= 4; ++k) {
      const ActionChunk ds = downsample(chunk, {k});
      auto [traj_k, o2] = rollout(obs, ds, world);
      double err_k = 0.0;
      for (std::size_t j = 0; j < ds.size(); ++j) {
        err_k = std::max(
            err_k, (traj_k[j].position - ds.actions[j].eef_position).norm());
      }
      REQUIRE(err_k >= base_err - 1e-9);
    }
  }
}

TEST_CASE("gen_demo: determinism, success, and chunk bookkeeping") {
  for (const std::string& name : default_task_names()) {
    const TaskSpec task = make_task(name);
    const Episode a = gen_demo(task, 7);
    const Episode b = gen_demo(task, 7);
    CHECK(episode_gap(a, b) == 0.0);
    CHECK(a.success);
    CHECK(is_success(a, task));
    CHECK(a.observations.size() == static_cast<std::size_t>(a.length) + 1);
    for (const auto& [chunk, start] : a.chunks) {
      CHECK(chunk.size() == static_cast<std::size_t>(task.chunk_length));
    }
    const Episode c = gen_demo(task, 8);
    CHECK(episode_gap(a, c) > 0.0);
  }
}

TEST_CASE("gen_demo: every seeded episode succeeds") {
  for (const std::string& name : default_task_names()) {
    const TaskSpec task = make_task(name);
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const Episode ep = gen_demo(task, seed);
      REQUIRE(ep.success);
      REQUIRE(is_success(ep, task));
    }
  }
}

TEST_CASE("gen_demo: demonstrations are redundantly slow") {
  // mean per-step displacement must stay under 40% of the single-step
  // displacement the controller could track (one lag step toward the
  // chunk-end state)
  for (const std::string& name : default_task_names()) {
    const TaskSpec task = make_task(name);
    double step_sum = 0.0;
    int step_count = 0;
    double trackable_sum = 0.0;
    int chunk_count = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const Episode ep = gen_demo(task, seed);
      for (std::size_t i = 1; i < ep.observations.size(); ++i) {
        step_sum += (ep.observations[i].eef.position -
                     ep.observations[i - 1].eef.position)
                        .norm();
        ++step_count;
      }
      for (const auto& [chunk, start] : ep.chunks) {
        const Vec3 span =
            ep.observations[start + chunk.size()].eef.position -
            ep.observations[start].eef.position;
        trackable_sum += task.world.controller_gain * span.norm();
        ++chunk_count;
      }
    }
    const double mean_step = step_sum / step_count;
    const double mean_trackable = trackable_sum / chunk_count;
    INFO(name << ": mean step " << mean_step << " trackable "
              << mean_trackable);
    CHECK(mean_step < 0.4 * mean_trackable);
  }
}

TEST_CASE("base_policy_chunk: length, determinism, and demo replay") {
  const TaskSpec task = make_task("reach_grasp_place");
  const Episode demo = gen_demo(task, 3);
  // replay: at a recorded demo state, the frozen policy's first action
  // matches the demo's action at that step within jitter tolerance
  for (std::size_t c = 0; c < demo.chunks.size(); ++c) {
    const auto& [chunk, start] = demo.chunks[c];
    const ActionChunk emitted =
        base_policy_chunk(demo.observations[start], task);
    REQUIRE(emitted.size() == static_cast<std::size_t>(task.chunk_length));
    const double gap = (emitted.actions[0].eef_position -
                        chunk.actions[0].eef_position)
                           .norm();
    CHECK(gap < 0.006);
  }
  const ActionChunk a = base_policy_chunk(demo.observations[0], task);
  const ActionChunk b = base_policy_chunk(demo.observations[0], task);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a.actions[i].eef_position == b.actions[i].eef_position);
  }
}

TEST_CASE("base policy closed-loop success at rate 1") {
  for (const std::string& name : default_task_names()) {
    const TaskSpec task = make_task(name);
    int successes = 0;
    const int trials = 30;
    for (int trial = 0; trial < trials; ++trial) {
      Observation obs = initial_observation(task, 5000 + trial);
      std::size_t next_goal = 0;
      auto advance = [&](const Observation& o) {
        while (next_goal < task.goals.size() &&
               task.goals[next_goal].satisfied(o)) {
          ++next_goal;
        }
      };
      advance(obs);
      int steps = 0;
      while (steps < task.horizon_cap && next_goal < task.goals.size()) {
        const ActionChunk chunk = base_policy_chunk(obs, task);
        for (const Action& act : chunk.actions) {
          obs = step(obs, act, task.mode, task.world);
          ++steps;
          advance(obs);
          if (next_goal == task.goals.size()) {
            break;
          }
        }
      }
      if (next_goal == task.goals.size()) {
        ++successes;
      }
    }
    INFO(name << ": " << successes << "/" << trials);
    CHECK(successes >= static_cast<int>(0.95 * trials));
  }
}

TEST_CASE("is_success: ordered goal predicates") {
  TaskSpec reach_task;
  reach_task.id = "t";
  reach_task.goals = {{GoalKind::kReach, -1, Vec3(0.1, 0, 0), 0.02}};
  Episode ep;
  Observation o;
  ep.observations.push_back(o);
  o.eef.position = Vec3(0.1, 0, 0);
  ep.observations.push_back(o);
  ep.length = 1;
  CHECK(is_success(ep, reach_task));

  // grasp before passing through the reach region does not count
  TaskSpec ordered;
  ordered.id = "t2";
  ordered.goals = {{GoalKind::kReach, -1, Vec3(0.5, 0, 0), 0.02},
                   {GoalKind::kGrasp, 0, Vec3::Zero(), 0.0}};
  Episode ep2;
  Observation o2;
  o2.object_poses[0] = Pose{};
  ep2.observations.push_back(o2);
  o2.held_object = 0;
  ep2.observations.push_back(o2);
  ep2.length = 1;
  CHECK_FALSE(is_success(ep2, ordered));

  // place outside tolerance by 2x tolerance
  TaskSpec place_task;
  place_task.id = "t3";
  place_task.goals = {{GoalKind::kPlace, 0, Vec3(0.2, 0, 0), 0.02}};
  Episode ep3;
  Observation o3;
  Pose obj;
  obj.position = Vec3(0.24, 0, 0);
  o3.object_poses[0] = obj;
  ep3.observations.push_back(o3);
  ep3.length = 0;
  CHECK_FALSE(is_success(ep3, place_task));
}

TEST_CASE("grasp and release through the gripper crossing") {
  const TaskSpec task = make_task("reach_grasp_place");
  WorldParams world = task.world;
  Observation obs;
  obs.eef.position = Vec3(0.2, 0.1, 0.02);
  Pose obj;
  obj.position = Vec3(0.2, 0.1, 0.021);
  obs.object_poses[0] = obj;
  obs.gripper_aperture = 0.4;

  Action closing;
  closing.eef_position = obs.eef.position;
  closing.gripper = -0.11;
  const Observation grasped = step(obs, closing, ControlMode::kAbs, world);
  CHECK(grasped.held_object == 0);
  CHECK(grasped.gripper_aperture < world.grasp_threshold);
  // held object follows the EEF
  Action move;
  move.eef_position = Vec3(0.25, 0.1, 0.05);
  const Observation carried = step(grasped, move, ControlMode::kAbs, world);
  CHECK(carried.held_object == 0);
  CHECK((carried.object_poses.at(0).position - carried.eef.position).norm() ==
        0.0);
  // reopening releases
  Action open;
  open.eef_position = carried.eef.position;
  open.gripper = 0.5;
  const Observation released = step(carried, open, ControlMode::kAbs, world);
  CHECK(released.held_object == -1);

  // a crossing outside the grasp radius knocks the object away
  Observation far = obs;
  far.object_poses[0].position = Vec3(0.2, 0.112, 0.02);
  const Observation fumbled = step(far, closing, ControlMode::kAbs, world);
  CHECK(fumbled.held_object == -1);
  CHECK((fumbled.object_poses.at(0).position - far.object_poses.at(0).position)
            .norm() > 0.01);
}

TEST_CASE("state vector round trip") {
  Observation obs;
  obs.eef.position = Vec3(0.1, 0.2, 0.3);
  obs.eef.orientation = Quat::from_axis_angle(Vec3(0, 0, 1), -0.7).negated();
  obs.gripper_aperture = 0.55;
  const Eigen::VectorXd v = to_state_vector(obs);
  REQUIRE(v.size() == kStateDim);
  CHECK(v[3] >= 0.0);  // canonical sign
  const Pose p = eef_pose_from_state(v);
  CHECK((p.position - obs.eef.position).norm() == 0.0);
  CHECK(geodesic_dist(p.orientation, obs.eef.orientation) < 1e-12);
}
