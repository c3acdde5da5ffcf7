#pragma once

// chunking.hpp - Action chunks and the rate-k downsampling operator.
//
// A chunk of n actions downsamples to l = floor(n/k) actions: Abs mode keeps
// every k-th target waypoint (indices k-1, 2k-1, ...), Delta mode merges each
// group of k relative actions into one (positional deltas summed, orientation
// deltas composed in order, gripper commands summed). Gripper compensation
// scales commands by k so cumulative closure displacement is preserved at the
// reduced step count.

#include "sup/geometry.hpp"

#include <stdexcept>
#include <vector>

namespace sup {

enum class ControlMode { kAbs, kDelta };

/// One low-level control tick. eef_position/eef_orientation are absolute
/// targets in Abs mode and relative displacements in Delta mode; gripper is
/// a velocity-like command in [-1, 1].
struct Action {
  Vec3 eef_position{0.0, 0.0, 0.0};
  Quat eef_orientation{};
  double gripper{0.0};
};

struct ActionChunk {
  std::vector<Action> actions;
  ControlMode mode{ControlMode::kAbs};

  std::size_t size() const { return actions.size(); }
  bool empty() const { return actions.empty(); }
};

struct DownsampleRate {
  int k{1};
};

inline Action merge_delta_actions(const std::vector<Action>& actions,
                                  std::size_t begin, std::size_t end) {
  Action merged;
  merged.eef_position = Vec3::Zero();
  for (std::size_t i = begin; i < end; ++i) {
    merged.eef_position += actions[i].eef_position;
    // rotations do not commute; compose in execution order
    merged.eef_orientation = merged.eef_orientation * actions[i].eef_orientation;
    merged.gripper += actions[i].gripper;
  }
  return merged;
}

/// Rate-k downsampling. Requires k >= 1 and chunk length n >= k; the last
/// n - floor(n/k)*k actions are dropped when k does not divide n.
inline ActionChunk downsample(const ActionChunk& chunk, DownsampleRate rate) {
  const int k = rate.k;
  if (k < 1) {
    throw std::invalid_argument("downsample: rate must be >= 1");
  }
  const auto n = chunk.size();
  if (n < static_cast<std::size_t>(k)) {
    throw std::invalid_argument("downsample: chunk shorter than rate");
  }
  if (k == 1) {
    return chunk;
  }
  const std::size_t l = n / static_cast<std::size_t>(k);
  ActionChunk out;
  out.mode = chunk.mode;
  out.actions.reserve(l);
  for (std::size_t j = 0; j < l; ++j) {
    if (chunk.mode == ControlMode::kAbs) {
      out.actions.push_back(chunk.actions[(j + 1) * k - 1]);
    } else {
      out.actions.push_back(merge_delta_actions(chunk.actions, j * k, (j + 1) * k));
    }
  }
  return out;
}

/// Scales each gripper command of an already-downsampled chunk by k and
/// clamps to [-1, 1]; EEF components untouched. Generalizes the x2 rule for
/// k=2 to arbitrary rates.
inline ActionChunk compensate_gripper(const ActionChunk& chunk_k,
                                      DownsampleRate rate) {
  ActionChunk out = chunk_k;
  const double k = static_cast<double>(rate.k);
  for (auto& a : out.actions) {
    a.gripper = std::min(1.0, std::max(-1.0, a.gripper * k));
  }
  return out;
}

}  // namespace sup
