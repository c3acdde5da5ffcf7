#include <catch2/catch_amalgamated.hpp>

#include "sup/chunking.hpp"

#include <random>

using namespace sup;

namespace {

ActionChunk random_chunk(std::mt19937_64& rng, ControlMode mode, int n) {
  std::uniform_real_distribution<double> u(-0.05, 0.05);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> grip(-1.0, 1.0);
  ActionChunk chunk;
  chunk.mode = mode;
  for (int i = 0; i < n; ++i) {
    Action a;
    a.eef_position = Vec3(u(rng), u(rng), u(rng));
    a.eef_orientation = Quat(1.0 + 0.1 * g(rng), 0.1 * g(rng), 0.1 * g(rng),
                             0.1 * g(rng));
    a.gripper = grip(rng);
    chunk.actions.push_back(a);
  }
  return chunk;
}

}  // namespace

TEST_CASE("delta downsampling sums scalar deltas") {
  ActionChunk chunk;
  chunk.mode = ControlMode::kDelta;
  for (double d : {0.1, 0.2, 0.3, 0.4}) {
    Action a;
    a.eef_position = Vec3(d, 0, 0);
    chunk.actions.push_back(a);
  }
  const ActionChunk ds = downsample(chunk, {2});
  REQUIRE(ds.size() == 2);
  CHECK(ds.actions[0].eef_position.x() == Catch::Approx(0.3).margin(1e-15));
  CHECK(ds.actions[1].eef_position.x() == Catch::Approx(0.7).margin(1e-15));
}

TEST_CASE("k=1 downsampling is the identity") {
  std::mt19937_64 rng(3);
  for (ControlMode mode : {ControlMode::kAbs, ControlMode::kDelta}) {
    const ActionChunk chunk = random_chunk(rng, mode, 7);
    const ActionChunk same = downsample(chunk, {1});
    REQUIRE(same.size() == chunk.size());
    for (std::size_t i = 0; i < chunk.size(); ++i) {
      CHECK(same.actions[i].eef_position == chunk.actions[i].eef_position);
      CHECK(same.actions[i].gripper == chunk.actions[i].gripper);
    }
  }
}

TEST_CASE("abs downsampling keeps every k-th waypoint") {
  std::mt19937_64 rng(5);
  const ActionChunk chunk = random_chunk(rng, ControlMode::kAbs, 24);
  const ActionChunk ds = downsample(chunk, {2});
  REQUIRE(ds.size() == 12);
  for (std::size_t j = 0; j < 12; ++j) {
    CHECK(ds.actions[j].eef_position == chunk.actions[2 * j + 1].eef_position);
  }
}

TEST_CASE("downsample rejects chunks shorter than the rate") {
  std::mt19937_64 rng(7);
  const ActionChunk chunk = random_chunk(rng, ControlMode::kAbs, 3);
  CHECK_THROWS_AS(downsample(chunk, {4}), std::invalid_argument);
  CHECK_THROWS_AS(downsample(chunk, {0}), std::invalid_argument);
}

TEST_CASE("gripper compensation scales then clamps") {
  ActionChunk chunk;
  chunk.mode = ControlMode::kAbs;
  for (double g : {0.1, 0.0, 0.6, -0.8}) {
    Action a;
    a.gripper = g;
    a.eef_position = Vec3(1, 2, 3);
    chunk.actions.push_back(a);
  }
  const ActionChunk c2 = compensate_gripper(chunk, {2});
  CHECK(c2.actions[0].gripper == Catch::Approx(0.2).margin(1e-15));
  CHECK(c2.actions[1].gripper == 0.0);
  const ActionChunk c3 = compensate_gripper(chunk, {3});
  CHECK(c3.actions[2].gripper == 1.0);
  CHECK(c3.actions[3].gripper == -1.0);
  // EEF untouched
  CHECK(c3.actions[0].eef_position == Vec3(1, 2, 3));
}

TEST_CASE("property: delta displacement telescopes over the kept prefix") {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<int> len(1, 40);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = len(rng);
    std::uniform_int_distribution<int> rate(1, n);
    const int k = rate(rng);
    const ActionChunk chunk = random_chunk(rng, ControlMode::kDelta, n);
    const ActionChunk ds = downsample(chunk, {k});
    const std::size_t l = static_cast<std::size_t>(n / k);
    REQUIRE(ds.size() == l);
    Vec3 merged = Vec3::Zero();
    for (const auto& a : ds.actions) {
      merged += a.eef_position;
    }
    Vec3 prefix = Vec3::Zero();
    for (std::size_t i = 0; i < l * static_cast<std::size_t>(k); ++i) {
      prefix += chunk.actions[i].eef_position;
    }
    REQUIRE((merged - prefix).norm() < 1e-12);
  }
}

TEST_CASE("property: abs tail truncation law") {
  std::mt19937_64 rng(13);
  std::uniform_int_distribution<int> len(1, 40);
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = len(rng);
    std::uniform_int_distribution<int> rate(1, n);
    const int k = rate(rng);
    const ActionChunk chunk = random_chunk(rng, ControlMode::kAbs, n);
    const ActionChunk ds = downsample(chunk, {k});
    const std::size_t l = static_cast<std::size_t>(n / k);
    REQUIRE(ds.size() == l);
    // final output is the input at index l*k - 1; equals the original final
    // action when k divides n
    REQUIRE(ds.actions.back().eef_position ==
            chunk.actions[l * k - 1].eef_position);
    if (n % k == 0) {
      REQUIRE(ds.actions.back().eef_position ==
              chunk.actions.back().eef_position);
    }
  }
}

TEST_CASE("property: delta merge composes orientations in order") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const ActionChunk chunk = random_chunk(rng, ControlMode::kDelta, 6);
    const ActionChunk ds = downsample(chunk, {3});
    REQUIRE(ds.size() == 2);
    // applying the merged delta equals applying the three deltas in order
    Quat q = Quat::identity();
    for (int i = 0; i < 3; ++i) {
      q = q * chunk.actions[i].eef_orientation;
    }
    CHECK(std::abs(std::abs(dot(q, ds.actions[0].eef_orientation)) - 1.0) <
          1e-12);
  }
}
