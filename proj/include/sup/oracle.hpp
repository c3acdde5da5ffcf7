#pragma once

// oracle.hpp - Exact tabular machinery behind the two guarantees: value
// iteration on rate-scheduling CMDPs with the penalty-augmented reward
// (k on safe rates, -Omega on violations), randomized verification that a
// penalty above gamma*K_max/(1-gamma) forces zero-violation optima, exact
// chunk-dominance checks on episodic gamma=1 chunk MDPs, and a brute-force
// enumerator over rate sequences used to certify greedy suboptimality.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <queue>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace sup {

// ---------------------------------------------------------------------------
// Tabular CMDP over downsampling rates
// ---------------------------------------------------------------------------

struct TabularCMDP {
  int num_states{0};
  int initial_state{0};
  double gamma{0.9};
  std::vector<std::vector<int>> rates;  // feasible k per state, ascending
  // transitions[s][rate_idx] -> (next state, probability)
  std::vector<std::vector<std::vector<std::pair<int, double>>>> transitions;
  std::vector<std::vector<bool>> violations;  // h(s, k)

  int max_rate() const {
    int k_max = 1;
    for (const auto& ks : rates) {
      for (int k : ks) {
        k_max = std::max(k_max, k);
      }
    }
    return k_max;
  }

  double reward(int s, std::size_t rate_idx, double omega) const {
    return violations[s][rate_idx]
               ? -omega
               : static_cast<double>(rates[s][rate_idx]);
  }

  void validate() const {
    if (num_states <= 0 || gamma < 0.0 || gamma >= 1.0) {
      throw std::invalid_argument("TabularCMDP: bad shape or discount");
    }
    for (int s = 0; s < num_states; ++s) {
      if (rates[s].empty()) {
        throw std::invalid_argument("TabularCMDP: state without rates");
      }
      bool has_safe = false;
      for (std::size_t i = 0; i < rates[s].size(); ++i) {
        double total = 0.0;
        for (const auto& [next, p] : transitions[s][i]) {
          if (next < 0 || next >= num_states || p < 0.0) {
            throw std::invalid_argument("TabularCMDP: bad transition");
          }
          total += p;
        }
        if (std::abs(total - 1.0) > 1e-12) {
          throw std::invalid_argument("TabularCMDP: non-stochastic row");
        }
        has_safe = has_safe || !violations[s][i];
      }
      if (!has_safe) {
        throw std::invalid_argument(
            "TabularCMDP: state with no non-violating rate");
      }
    }
  }
};

struct ValueIterationResult {
  std::vector<double> v;
  std::vector<std::vector<double>> q;  // [s][rate_idx]
  std::vector<int> greedy;             // rate index per state
  int iterations{0};
};

/// Sup-norm value iteration to 1e-12 on the penalty-augmented reward;
/// greedy ties break toward the smallest rate.
inline ValueIterationResult value_iteration(const TabularCMDP& mdp,
                                            double omega) {
  mdp.validate();
  ValueIterationResult res;
  res.v.assign(static_cast<std::size_t>(mdp.num_states), 0.0);
  std::vector<double> next(res.v.size(), 0.0);
  const int max_iterations = 2000000;
  for (int it = 0; it < max_iterations; ++it) {
    double delta = 0.0;
    for (int s = 0; s < mdp.num_states; ++s) {
      double best = -std::numeric_limits<double>::infinity();
      for (std::size_t i = 0; i < mdp.rates[s].size(); ++i) {
        double q = mdp.reward(s, i, omega);
        for (const auto& [nxt, p] : mdp.transitions[s][i]) {
          q += mdp.gamma * p * res.v[static_cast<std::size_t>(nxt)];
        }
        best = std::max(best, q);
      }
      next[static_cast<std::size_t>(s)] = best;
      delta = std::max(delta,
                       std::abs(best - res.v[static_cast<std::size_t>(s)]));
    }
    res.v.swap(next);
    res.iterations = it + 1;
    if (delta < 1e-12) {
      break;
    }
  }
  res.q.resize(static_cast<std::size_t>(mdp.num_states));
  res.greedy.resize(static_cast<std::size_t>(mdp.num_states));
  for (int s = 0; s < mdp.num_states; ++s) {
    auto& qs = res.q[static_cast<std::size_t>(s)];
    qs.resize(mdp.rates[s].size());
    double best = -std::numeric_limits<double>::infinity();
    int best_idx = 0;
    for (std::size_t i = 0; i < mdp.rates[s].size(); ++i) {
      double q = mdp.reward(s, i, omega);
      for (const auto& [nxt, p] : mdp.transitions[s][i]) {
        q += mdp.gamma * p * res.v[static_cast<std::size_t>(nxt)];
      }
      qs[i] = q;
      if (q > best) {  // strict: first (smallest-k) maximizer wins
        best = q;
        best_idx = static_cast<int>(i);
      }
    }
    res.greedy[static_cast<std::size_t>(s)] = best_idx;
  }
  return res;
}

/// Exact value of a stationary policy (rate index per state).
inline std::vector<double> policy_value(const TabularCMDP& mdp,
                                        const std::vector<int>& policy,
                                        double omega) {
  std::vector<double> v(static_cast<std::size_t>(mdp.num_states), 0.0);
  std::vector<double> next(v.size(), 0.0);
  for (int it = 0; it < 2000000; ++it) {
    double delta = 0.0;
    for (int s = 0; s < mdp.num_states; ++s) {
      const auto i = static_cast<std::size_t>(policy[s]);
      double val = mdp.reward(s, i, omega);
      for (const auto& [nxt, p] : mdp.transitions[s][i]) {
        val += mdp.gamma * p * v[static_cast<std::size_t>(nxt)];
      }
      next[static_cast<std::size_t>(s)] = val;
      delta =
          std::max(delta, std::abs(val - v[static_cast<std::size_t>(s)]));
    }
    v.swap(next);
    if (delta < 1e-13) {
      break;
    }
  }
  return v;
}

inline std::vector<bool> reachable_states(const TabularCMDP& mdp,
                                          const std::vector<int>& policy) {
  std::vector<bool> seen(static_cast<std::size_t>(mdp.num_states), false);
  std::queue<int> frontier;
  frontier.push(mdp.initial_state);
  seen[static_cast<std::size_t>(mdp.initial_state)] = true;
  while (!frontier.empty()) {
    const int s = frontier.front();
    frontier.pop();
    const auto i = static_cast<std::size_t>(policy[s]);
    for (const auto& [nxt, p] : mdp.transitions[s][i]) {
      if (p > 0.0 && !seen[static_cast<std::size_t>(nxt)]) {
        seen[static_cast<std::size_t>(nxt)] = true;
        frontier.push(nxt);
      }
    }
  }
  return seen;
}

struct PenaltyReport {
  double bound{0.0};       // gamma * K_max / (1 - gamma)
  bool satisfied{false};   // omega strictly above the bound
  bool zero_violation{false};
  double optimal_return{0.0};
};

/// Solves the penalty-augmented MDP and checks whether the greedy optimal
/// policy ever selects a violating rate at a reachable state.
inline PenaltyReport verify_penalty_bound(const TabularCMDP& mdp,
                                          double omega) {
  PenaltyReport report;
  report.bound = mdp.gamma * mdp.max_rate() / (1.0 - mdp.gamma);
  report.satisfied = omega > report.bound;
  const ValueIterationResult res = value_iteration(mdp, omega);
  const std::vector<bool> reachable = reachable_states(mdp, res.greedy);
  report.zero_violation = true;
  for (int s = 0; s < mdp.num_states; ++s) {
    if (reachable[static_cast<std::size_t>(s)] &&
        mdp.violations[s][static_cast<std::size_t>(
            res.greedy[static_cast<std::size_t>(s)])]) {
      report.zero_violation = false;
      break;
    }
  }
  report.optimal_return =
      res.v[static_cast<std::size_t>(mdp.initial_state)];
  return report;
}

/// Random feasible instance: every state keeps at least one non-violating
/// rate, transition rows are normalized random supports.
inline TabularCMDP random_feasible_cmdp(std::mt19937_64& rng,
                                        int max_states = 8, int k_max = 4,
                                        double max_gamma = 0.95) {
  std::uniform_int_distribution<int> states(2, max_states);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  TabularCMDP mdp;
  mdp.num_states = states(rng);
  mdp.initial_state = 0;
  mdp.gamma = 0.3 + (max_gamma - 0.3) * unit(rng);
  mdp.rates.resize(static_cast<std::size_t>(mdp.num_states));
  mdp.transitions.resize(static_cast<std::size_t>(mdp.num_states));
  mdp.violations.resize(static_cast<std::size_t>(mdp.num_states));
  std::uniform_int_distribution<int> rate_count(1, k_max);
  for (int s = 0; s < mdp.num_states; ++s) {
    const int count = rate_count(rng);
    std::vector<int> pool;
    for (int k = 1; k <= k_max; ++k) {
      pool.push_back(k);
    }
    std::shuffle(pool.begin(), pool.end(), rng);
    pool.resize(static_cast<std::size_t>(count));
    std::sort(pool.begin(), pool.end());
    mdp.rates[static_cast<std::size_t>(s)] = pool;
    auto& trans = mdp.transitions[static_cast<std::size_t>(s)];
    auto& viol = mdp.violations[static_cast<std::size_t>(s)];
    trans.resize(pool.size());
    viol.resize(pool.size());
    const auto safe_idx =
        static_cast<std::size_t>(rng() % pool.size());  // planted safe rate
    for (std::size_t i = 0; i < pool.size(); ++i) {
      viol[i] = i == safe_idx ? false : unit(rng) < 0.4;
      const int support = 1 + static_cast<int>(rng() % 3);
      double total = 0.0;
      std::vector<std::pair<int, double>> row;
      for (int j = 0; j < support; ++j) {
        const int nxt = static_cast<int>(rng() % mdp.num_states);
        const double w = 0.1 + unit(rng);
        row.emplace_back(nxt, w);
        total += w;
      }
      for (auto& [nxt, p] : row) {
        p /= total;
      }
      // renormalize exactly so the row sums to 1 within 1e-12
      double sum = 0.0;
      for (auto& [nxt, p] : row) {
        sum += p;
      }
      row.back().second += 1.0 - sum;
      trans[i] = std::move(row);
    }
  }
  return mdp;
}

// ---------------------------------------------------------------------------
// Episodic chunk MDP (gamma = 1)
// ---------------------------------------------------------------------------

/// Atomic-chunk MDP: two macro-actions per non-terminal state (the original
/// chunk A and its accelerated version A^k), each a distribution over
/// (intra-chunk reward, next state). Transitions go strictly forward in the
/// state ordering, which bounds every episode.
struct AtomicChunkMDP {
  struct Outcome {
    double p{0.0};
    double reward{0.0};
    int next{0};
  };
  int num_states{0};
  int initial_state{0};
  // [s][0] = original chunk, [s][1] = accelerated chunk; both empty at
  // terminal states
  std::vector<std::array<std::vector<Outcome>, 2>> actions;

  bool terminal(int s) const {
    return actions[static_cast<std::size_t>(s)][0].empty();
  }

  void validate() const {
    if (num_states <= 0) {
      throw std::invalid_argument("AtomicChunkMDP: empty");
    }
    for (int s = 0; s < num_states; ++s) {
      const auto& both = actions[static_cast<std::size_t>(s)];
      if (both[0].empty() != both[1].empty()) {
        throw std::invalid_argument(
            "AtomicChunkMDP: terminal state with one action");
      }
      for (const auto& action : both) {
        double total = 0.0;
        for (const Outcome& o : action) {
          if (o.next <= s || o.next >= num_states) {
            throw std::invalid_argument(
                "AtomicChunkMDP: transition must move strictly forward");
          }
          total += o.p;
        }
        if (!action.empty() && std::abs(total - 1.0) > 1e-12) {
          throw std::invalid_argument("AtomicChunkMDP: non-stochastic row");
        }
      }
    }
  }
};

struct DominanceReport {
  bool premise_holds{false};    // c_q(s) >= 0 at every non-terminal state
  bool conclusion_holds{false}; // V_accel(s0) >= V_base(s0)
  double v_base{0.0};           // success probability of the base policy
  double v_accel{0.0};          // success probability of always-accelerated
  double min_cq{0.0};
};

/// Exact backward induction at gamma = 1. c_q(s) = Q^pi(s, A^k) - Q^pi(s, A)
/// under the base policy pi that always runs the original chunk.
inline DominanceReport verify_chunk_dominance(const AtomicChunkMDP& mdp) {
  mdp.validate();
  const auto n = static_cast<std::size_t>(mdp.num_states);
  std::vector<double> v_base(n, 0.0), v_accel(n, 0.0);
  DominanceReport report;
  report.min_cq = std::numeric_limits<double>::infinity();
  for (int s = mdp.num_states - 1; s >= 0; --s) {
    if (mdp.terminal(s)) {
      continue;
    }
    const auto& both = mdp.actions[static_cast<std::size_t>(s)];
    auto expect = [&](const std::vector<AtomicChunkMDP::Outcome>& action,
                      const std::vector<double>& v) {
      double total = 0.0;
      for (const auto& o : action) {
        total += o.p * (o.reward + v[static_cast<std::size_t>(o.next)]);
      }
      return total;
    };
    v_base[static_cast<std::size_t>(s)] = expect(both[0], v_base);
    v_accel[static_cast<std::size_t>(s)] = expect(both[1], v_accel);
    // c_q at s needs Q^pi(s, A^k) with continuation under the base policy
    const double q_accel_under_base = expect(both[1], v_base);
    const double cq =
        q_accel_under_base - v_base[static_cast<std::size_t>(s)];
    report.min_cq = std::min(report.min_cq, cq);
  }
  report.premise_holds = report.min_cq >= -1e-12;
  report.v_base = v_base[static_cast<std::size_t>(mdp.initial_state)];
  report.v_accel = v_accel[static_cast<std::size_t>(mdp.initial_state)];
  report.conclusion_holds = report.v_accel >= report.v_base - 1e-9;
  return report;
}

/// Random layered episodic instance with sparse success reward. When
/// `guarantee_premise` is set, the accelerated distribution at each state is
/// a mixture of the original distribution and a point mass on the best
/// continuation, which makes c_q >= 0 by construction.
inline AtomicChunkMDP random_chunk_mdp(std::mt19937_64& rng,
                                       bool guarantee_premise) {
  std::uniform_int_distribution<int> layer_count(2, 4);
  std::uniform_int_distribution<int> width_dist(1, 3);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const int layers = layer_count(rng);
  std::vector<std::vector<int>> layer_states;
  int next_id = 0;
  for (int l = 0; l < layers; ++l) {
    const int width = width_dist(rng);
    std::vector<int> ids;
    for (int w = 0; w < width; ++w) {
      ids.push_back(next_id++);
    }
    layer_states.push_back(ids);
  }
  const int success = next_id++;
  const int fail = next_id++;

  AtomicChunkMDP mdp;
  mdp.num_states = next_id;
  mdp.initial_state = layer_states[0][0];
  mdp.actions.resize(static_cast<std::size_t>(mdp.num_states));

  auto random_row = [&](const std::vector<int>& succs, bool to_terminal) {
    std::vector<AtomicChunkMDP::Outcome> row;
    if (to_terminal) {
      const double p_success = unit(rng);
      row.push_back({p_success, 1.0, success});
      row.push_back({1.0 - p_success, 0.0, fail});
      return row;
    }
    double total = 0.0;
    for (int nxt : succs) {
      const double w = 0.1 + unit(rng);
      row.push_back({w, 0.0, nxt});
      total += w;
    }
    for (auto& o : row) {
      o.p /= total;
    }
    double sum = 0.0;
    for (auto& o : row) {
      sum += o.p;
    }
    row.back().p += 1.0 - sum;
    return row;
  };

  // first pass: original-chunk rows everywhere
  for (int l = 0; l < layers; ++l) {
    const bool last = l + 1 == layers;
    for (int s : layer_states[static_cast<std::size_t>(l)]) {
      mdp.actions[static_cast<std::size_t>(s)][0] = random_row(
          last ? std::vector<int>{}
               : layer_states[static_cast<std::size_t>(l + 1)],
          last);
    }
  }
  // base-policy values, needed to aim the premise-guaranteeing mixture
  std::vector<double> v_base(static_cast<std::size_t>(mdp.num_states), 0.0);
  for (int s = mdp.num_states - 1; s >= 0; --s) {
    const auto& row = mdp.actions[static_cast<std::size_t>(s)][0];
    for (const auto& o : row) {
      v_base[static_cast<std::size_t>(s)] +=
          o.p * (o.reward + v_base[static_cast<std::size_t>(o.next)]);
    }
  }
  // second pass: accelerated rows
  for (int l = 0; l < layers; ++l) {
    const bool last = l + 1 == layers;
    for (int s : layer_states[static_cast<std::size_t>(l)]) {
      auto& accel = mdp.actions[static_cast<std::size_t>(s)][1];
      const auto& base_row = mdp.actions[static_cast<std::size_t>(s)][0];
      if (!guarantee_premise) {
        accel = random_row(last ? std::vector<int>{}
                                : layer_states[static_cast<std::size_t>(l + 1)],
                           last);
        continue;
      }
      // mix toward the best continuation of the base row
      std::size_t best = 0;
      double best_val = -1.0;
      for (std::size_t i = 0; i < base_row.size(); ++i) {
        const double val =
            base_row[i].reward +
            v_base[static_cast<std::size_t>(base_row[i].next)];
        if (val > best_val) {
          best_val = val;
          best = i;
        }
      }
      const double lambda = unit(rng);
      accel = base_row;
      for (auto& o : accel) {
        o.p *= 1.0 - lambda;
      }
      accel[best].p += lambda;
    }
  }
  return mdp;
}

// ---------------------------------------------------------------------------
// Brute-force rate-sequence enumeration
// ---------------------------------------------------------------------------

struct BruteForceResult {
  std::vector<int> rates;  // the optimal open-loop rate sequence (k values)
  double best_return{0.0};
  std::uint64_t sequences{0};
};

namespace detail {

inline void brute_force_dfs(const TabularCMDP& mdp, double omega, int horizon,
                            int depth, double discount, double partial,
                            std::vector<double>* dist,
                            std::vector<int>* current,
                            BruteForceResult* best) {
  if (depth == horizon) {
    ++best->sequences;
    if (partial > best->best_return) {
      best->best_return = partial;
      best->rates = *current;
    }
    return;
  }
  // the feasible rate set may differ per state; enumerate the union and
  // skip rates that are infeasible somewhere in the current support
  std::vector<int> pool;
  for (int s = 0; s < mdp.num_states; ++s) {
    if ((*dist)[static_cast<std::size_t>(s)] <= 0.0) {
      continue;
    }
    for (int k : mdp.rates[s]) {
      if (std::find(pool.begin(), pool.end(), k) == pool.end()) {
        pool.push_back(k);
      }
    }
  }
  std::sort(pool.begin(), pool.end());
  for (int k : pool) {
    double reward = 0.0;
    std::vector<double> next_dist(dist->size(), 0.0);
    bool feasible = true;
    for (int s = 0; s < mdp.num_states && feasible; ++s) {
      const double mass = (*dist)[static_cast<std::size_t>(s)];
      if (mass <= 0.0) {
        continue;
      }
      const auto& ks = mdp.rates[s];
      const auto it = std::find(ks.begin(), ks.end(), k);
      if (it == ks.end()) {
        feasible = false;
        break;
      }
      const auto idx = static_cast<std::size_t>(it - ks.begin());
      reward += mass * mdp.reward(s, idx, omega);
      for (const auto& [nxt, p] : mdp.transitions[s][idx]) {
        next_dist[static_cast<std::size_t>(nxt)] += mass * p;
      }
    }
    if (!feasible) {
      continue;
    }
    current->push_back(k);
    brute_force_dfs(mdp, omega, horizon, depth + 1, discount * mdp.gamma,
                    partial + discount * reward, &next_dist, current, best);
    current->pop_back();
  }
}

}  // namespace detail

/// Exhaustive enumeration of open-loop rate sequences up to `horizon`;
/// returns the exact truncated discounted return of the best sequence.
inline BruteForceResult brute_force_scheduler(const TabularCMDP& mdp,
                                              int horizon, double omega) {
  if (horizon < 1 || horizon > 12) {
    throw std::invalid_argument(
        "brute_force_scheduler: horizon must be in [1, 12]");
  }
  mdp.validate();
  BruteForceResult best;
  best.best_return = -std::numeric_limits<double>::infinity();
  std::vector<double> dist(static_cast<std::size_t>(mdp.num_states), 0.0);
  dist[static_cast<std::size_t>(mdp.initial_state)] = 1.0;
  std::vector<int> current;
  detail::brute_force_dfs(mdp, omega, horizon, 0, 1.0, 0.0, &dist, &current,
                          &best);
  return best;
}

// ---------------------------------------------------------------------------
// The two-corridor trap instance
// ---------------------------------------------------------------------------

/// A myopic trap: taking any rate above 1 at the entry state drops the
/// system into a corridor where only rate 1 is ever safe, while rate 1 at
/// the entry unlocks a corridor that is safe at every rate. The greedy
/// picker takes the largest immediately-safe rate and pays for it.
inline TabularCMDP make_trap_cmdp(int corridor_len = 5, double gamma = 0.9) {
  TabularCMDP mdp;
  mdp.gamma = gamma;
  // state layout: 0 = entry, 1..L = good corridor, L+1..2L = bad corridor,
  // 2L+1 = rest state (all rates safe, self-loop)
  const int good0 = 1;
  const int bad0 = corridor_len + 1;
  const int rest = 2 * corridor_len + 1;
  mdp.num_states = rest + 1;
  mdp.initial_state = 0;
  mdp.rates.assign(static_cast<std::size_t>(mdp.num_states), {1, 2, 3, 4});
  mdp.transitions.resize(static_cast<std::size_t>(mdp.num_states));
  mdp.violations.resize(static_cast<std::size_t>(mdp.num_states));

  auto set_state = [&](int s, std::vector<bool> viol, std::vector<int> next) {
    auto& trans = mdp.transitions[static_cast<std::size_t>(s)];
    trans.clear();
    for (int n : next) {
      trans.push_back({{n, 1.0}});
    }
    mdp.violations[static_cast<std::size_t>(s)] = std::move(viol);
  };

  // entry: k=1 -> good corridor (safe), k=2 -> bad corridor (safe now),
  // k=3,4 -> bad corridor (violations)
  set_state(0, {false, false, true, true}, {good0, bad0, bad0, bad0});
  for (int i = 0; i < corridor_len; ++i) {
    const int g = good0 + i;
    const int g_next = (i + 1 == corridor_len) ? rest : g + 1;
    set_state(g, {false, false, false, false},
              {g_next, g_next, g_next, g_next});
    const int b = bad0 + i;
    const int b_next = (i + 1 == corridor_len) ? rest : b + 1;
    set_state(b, {false, true, true, true}, {b_next, b_next, b_next, b_next});
  }
  set_state(rest, {false, false, false, false}, {rest, rest, rest, rest});
  return mdp;
}

/// Largest immediately-non-violating rate per state, the tabular analogue of
/// the MPC-greedy selector.
inline std::vector<int> greedy_mpc_policy(const TabularCMDP& mdp) {
  std::vector<int> policy(static_cast<std::size_t>(mdp.num_states), 0);
  for (int s = 0; s < mdp.num_states; ++s) {
    int best_idx = 0;
    for (std::size_t i = 0; i < mdp.rates[s].size(); ++i) {
      if (!mdp.violations[s][i]) {
        best_idx = static_cast<int>(i);
      }
    }
    policy[static_cast<std::size_t>(s)] = best_idx;
  }
  return policy;
}

}  // namespace sup
