// Scratch diagnostics for tuning the toy world. Not installed; run manually.
#include "sup/chunking.hpp"
#include "sup/env.hpp"
#include "sup/geometry.hpp"

#include <cstdio>
#include <map>
#include <string>
#include <vector>

using namespace sup;

namespace {

struct EvalResult {
  int successes = 0;
  double mean_steps = 0.0;
  int trials = 0;
};

// closed-loop fixed-rate evaluation against the true env
EvalResult eval_fixed(const TaskSpec& task, int k, int trials) {
  EvalResult res;
  res.trials = trials;
  double steps_sum = 0.0;
  for (int trial = 0; trial < trials; ++trial) {
    Observation obs = initial_observation(task, 1000 + trial);
    std::size_t next_goal = 0;
    auto advance = [&](const Observation& o) {
      while (next_goal < task.goals.size() && task.goals[next_goal].satisfied(o))
        ++next_goal;
    };
    advance(obs);
    int steps = 0;
    bool ok = false;
    while (steps < task.horizon_cap) {
      ActionChunk chunk = base_policy_chunk(obs, task);
      int kk = std::min<int>(k, (int)chunk.size());
      ActionChunk ak = compensate_gripper(downsample(chunk, {kk}), {kk});
      bool done = false;
      for (const Action& a : ak.actions) {
        obs = step(obs, a, task.mode, task.world);
        ++steps;
        advance(obs);
        if (next_goal == task.goals.size()) { done = true; break; }
      }
      if (done) { ok = true; break; }
    }
    if (ok) { res.successes++; steps_sum += steps; }
  }
  res.mean_steps = res.successes ? steps_sum / res.successes : 0.0;
  return res;
}

}  // namespace

int main() {
  for (const std::string& name : default_task_names()) {
    TaskSpec task = make_task(name);
    std::printf("=== %s ===\n", name.c_str());
    // demo stats
    double len_sum = 0;
    for (int s = 0; s < 5; ++s) {
      Episode ep = gen_demo(task, s);
      len_sum += ep.length;
      if (s == 0) std::printf("  demo len %d chunks %zu success %d\n", ep.length, ep.chunks.size(), (int)ep.success);
    }
    std::printf("  mean demo len %.1f\n", len_sum / 5);

    // oracle deviation per chunk per k, annotated with phase
    Episode ep = gen_demo(task, 0);
    std::map<std::string, std::map<int, double>> phase_max;
    for (const auto& [chunk, start] : ep.chunks) {
      const Observation& obs = ep.observations[start];
      std::string phase = phase_label(obs, task);
      for (int k = 2; k <= 4; ++k) {
        if ((int)chunk.size() < k) continue;
        const std::size_t l = chunk.size() / k;
        ActionChunk ref = chunk;
        ref.actions.resize(l * k);
        ActionChunk ak = compensate_gripper(downsample(chunk, {k}), {k});
        auto [tau, o1] = rollout(obs, ref, task.world);
        auto [tauk, o2] = rollout(obs, ak, task.world);
        double dev = state_deviation(tau, tauk);
        auto& m = phase_max[phase];
        if (dev > m[k]) m[k] = dev;
      }
    }
    for (auto& [phase, m] : phase_max) {
      std::printf("  phase %-10s", phase.c_str());
      for (int k = 2; k <= 4; ++k) std::printf("  k%d: %.4f", k, m[k]);
      std::printf("%s\n", is_contact_phase(phase) ? "   [contact]" : "");
    }

    // fixed-rate closed-loop success
    for (int k : {1, 2, 3, 4}) {
      EvalResult r = eval_fixed(task, k, 30);
      std::printf("  ds-%d: success %2d/30  mean steps %.1f\n", k, r.successes, r.mean_steps);
    }
  }
  return 0;
}
