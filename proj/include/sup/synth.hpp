#pragma once

// synth.hpp - Counterfactual dataset synthesis. For every chunk-aligned
// transition of the demonstrations and every feasible rate k, both the
// original sub-chunk and its downsampled version are rolled through the
// world model; the maximum EEF discrepancy between the two predicted
// trajectories is the state deviation, its threshold crossing is the
// violation flag, and the penalty-augmented reward is k on safe records and
// -Omega on violations. Records carry the model's terminal prediction as
// the next state, exactly as the training loop will consume them.

#include "sup/chunking.hpp"
#include "sup/env.hpp"
#include "sup/geometry.hpp"
#include "sup/wm.hpp"

#include <json.hpp>

#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sup {

struct SynthConfig {
  int k_min{1};
  int k_max{4};
  double epsilon{0.015};
  double omega{5.0};  // penalty magnitude; violation reward is -omega
  double gamma{0.9};
  bool gripper_compensation{true};
};

/// Prop. 2 threshold gamma*K_max/(1-gamma); a penalty strictly above it
/// forces the optimal policy to zero violations.
inline double min_penalty_bound(int k_max, double gamma) {
  if (gamma < 0.0 || gamma >= 1.0) {
    throw std::invalid_argument("min_penalty_bound: gamma must be in [0,1)");
  }
  return gamma * static_cast<double>(k_max) / (1.0 - gamma);
}

inline double penalty_reward(int k, bool violated, double omega) {
  return violated ? -omega : static_cast<double>(k);
}

/// The executed form of a chunk at rate k: downsampled, gripper-compensated.
inline ActionChunk accelerated_chunk(const ActionChunk& chunk, int k,
                                     bool compensate) {
  ActionChunk out = downsample(chunk, {k});
  if (compensate) {
    out = compensate_gripper(out, {k});
  }
  return out;
}

inline std::vector<Eigen::VectorXd> action_vectors(const ActionChunk& chunk) {
  std::vector<Eigen::VectorXd> out;
  out.reserve(chunk.size());
  for (const Action& a : chunk.actions) {
    out.push_back(action_to_vector(a));
  }
  return out;
}

struct ViolationResult {
  bool violated{false};
  double deviation{0.0};
  Eigen::VectorXd terminal_state;                // model prediction under A^k
  std::vector<Eigen::VectorXd> accel_actions;    // A^k as input vectors
};

/// Counterfactual violation check: both trajectories come from the world
/// model, the reference truncated to the l*k actions the accelerated chunk
/// actually replaces.
inline ViolationResult violation(const Eigen::VectorXd& state,
                                 const ActionChunk& chunk, int k,
                                 const RwmParams& wm, double epsilon,
                                 bool compensate = true) {
  const ActionChunk accel = accelerated_chunk(chunk, k, compensate);
  const std::size_t covered = accel.size() * static_cast<std::size_t>(k);
  ActionChunk reference = chunk;
  reference.actions.resize(covered);

  const auto tau = predict(wm, state, action_vectors(reference));
  ViolationResult res;
  res.accel_actions = action_vectors(accel);
  const auto tau_k = predict(wm, state, res.accel_actions);
  res.deviation = state_deviation(predicted_trajectory(tau),
                                  predicted_trajectory(tau_k));
  res.violated = res.deviation > epsilon;
  res.terminal_state = tau_k.back();
  return res;
}

/// One counterfactual transition (o, A^k, r', o') of the synthetic dataset.
struct SynthRecord {
  Eigen::VectorXd o;
  int k{1};
  std::vector<Eigen::VectorXd> a_seq;  // post-compensation
  double r_prime{0.0};
  Eigen::VectorXd o_next;
  double deviation{0.0};
  bool violated{false};
};

/// Expands every chunk-aligned transition by every rate in [k_min, k_max].
/// Deterministic ordering: (episode, chunk, k).
inline std::vector<SynthRecord> synthesize(const std::vector<Episode>& demos,
                                           const RwmParams& wm,
                                           const SynthConfig& cfg) {
  if (demos.empty()) {
    throw std::invalid_argument("synthesize: empty demonstration set");
  }
  std::vector<SynthRecord> records;
  for (const Episode& ep : demos) {
    for (const auto& [chunk, start] : ep.chunks) {
      const Eigen::VectorXd state = to_state_vector(ep.observations[start]);
      for (int k = cfg.k_min; k <= cfg.k_max; ++k) {
        ViolationResult v =
            violation(state, chunk, k, wm, cfg.epsilon,
                      cfg.gripper_compensation);
        SynthRecord rec;
        rec.o = state;
        rec.k = k;
        rec.a_seq = std::move(v.accel_actions);
        rec.deviation = v.deviation;
        rec.violated = v.violated;
        rec.r_prime = penalty_reward(k, v.violated, cfg.omega);
        rec.o_next = std::move(v.terminal_state);
        records.push_back(std::move(rec));
      }
    }
  }
  return records;
}

// ---------------------------------------------------------------------------
// Line-delimited serialization (field order is part of the format)
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json synth_record_to_json(const SynthRecord& rec) {
  nlohmann::ordered_json j;
  j["o"] = std::vector<double>(rec.o.data(), rec.o.data() + rec.o.size());
  j["k"] = rec.k;
  std::vector<double> flat;
  for (const Eigen::VectorXd& a : rec.a_seq) {
    flat.insert(flat.end(), a.data(), a.data() + a.size());
  }
  j["a_seq"] = flat;
  j["r_prime"] = rec.r_prime;
  j["o_next"] = std::vector<double>(rec.o_next.data(),
                                    rec.o_next.data() + rec.o_next.size());
  j["deviation"] = rec.deviation;
  j["violated"] = rec.violated ? 1 : 0;
  return j;
}

inline void write_synth_records(const std::vector<SynthRecord>& records,
                                const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) {
    throw std::runtime_error("write_synth_records: cannot open " + path);
  }
  for (const SynthRecord& rec : records) {
    out << synth_record_to_json(rec).dump() << '\n';
  }
  if (!out) {
    throw std::runtime_error("write_synth_records: write failed: " + path);
  }
}

inline std::vector<SynthRecord> read_synth_records(const std::string& path,
                                                   int action_dim = kActionDim) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("read_synth_records: cannot open " + path);
  }
  std::vector<SynthRecord> records;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) {
      continue;
    }
    const nlohmann::json j = nlohmann::json::parse(line);
    SynthRecord rec;
    const std::vector<double> o = j.at("o");
    rec.o = Eigen::Map<const Eigen::VectorXd>(o.data(),
                                              static_cast<Eigen::Index>(o.size()));
    rec.k = j.at("k");
    const std::vector<double> flat = j.at("a_seq");
    if (flat.size() % static_cast<std::size_t>(action_dim) != 0) {
      throw std::invalid_argument(
          "read_synth_records: a_seq length not a multiple of action_dim");
    }
    for (std::size_t at = 0; at < flat.size();
         at += static_cast<std::size_t>(action_dim)) {
      rec.a_seq.push_back(Eigen::Map<const Eigen::VectorXd>(
          flat.data() + at, action_dim));
    }
    rec.r_prime = j.at("r_prime");
    const std::vector<double> on = j.at("o_next");
    rec.o_next = Eigen::Map<const Eigen::VectorXd>(
        on.data(), static_cast<Eigen::Index>(on.size()));
    rec.deviation = j.at("deviation");
    rec.violated = static_cast<int>(j.at("violated")) != 0;
    records.push_back(std::move(rec));
  }
  return records;
}

}  // namespace sup
