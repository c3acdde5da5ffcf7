#pragma once

// config.hpp - Pipeline configuration: a flat key = value file whose keys
// mirror the standard hyperparameter table (learning rate, batch size, GRU
// hidden dimension, GRU layers, chunk length, rate bounds, epsilon,
// expectile, penalty, gamma) plus the artifact knobs (tasks, demo counts,
// trial counts, seeds, training budgets). Unknown keys are errors.

#include "sup/env.hpp"
#include "sup/synth.hpp"

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace sup {

struct PipelineConfig {
  // hyperparameter-table keys
  double learning_rate{1.5e-3};
  int batch_size{128};
  int gru_hidden_dim{48};
  int gru_layers{2};
  int chunk_length{24};
  int k_min{1};
  int k_max{4};
  double epsilon{0.015};
  double expectile{0.95};
  double penalty{5.0};  // violation reward magnitude for the paper profile
  double gamma{0.9};

  // artifact knobs
  std::vector<std::string> tasks{default_task_names()};
  int demos_per_task{40};
  int trials{100};
  std::uint64_t seed{0};
  std::string omega_profile{"paper"};  // "paper" | "theory"
  int wm_train_steps{9000};
  int iql_train_steps{3000};
  double controller_gain{0.6};

  /// The resolved penalty magnitude Omega (> 0); the violation reward is
  /// its negation. The theory profile sits 10% above the zero-violation
  /// bound, the paper profile uses the configured table value.
  double resolved_omega() const {
    if (omega_profile == "theory") {
      return 1.1 * min_penalty_bound(k_max, gamma);
    }
    if (omega_profile == "paper") {
      return penalty;
    }
    throw std::invalid_argument("omega_profile must be 'paper' or 'theory'");
  }

  void validate() const {
    if (k_min < 1 || k_max < k_min) {
      throw std::invalid_argument("config: need 1 <= k_min <= k_max");
    }
    if (epsilon <= 0.0) {
      throw std::invalid_argument("config: epsilon must be positive");
    }
    if (gamma < 0.0 || gamma >= 1.0) {
      throw std::invalid_argument("config: gamma must be in [0, 1)");
    }
    if (expectile <= 0.0 || expectile >= 1.0) {
      throw std::invalid_argument("config: expectile must be in (0, 1)");
    }
    if (chunk_length < k_max) {
      throw std::invalid_argument("config: chunk_length must be >= k_max");
    }
    if (tasks.empty() || demos_per_task < 1 || trials < 1) {
      throw std::invalid_argument("config: need tasks, demos, and trials");
    }
    resolved_omega();
  }

  TaskSpec task_spec(const std::string& name) const {
    TaskSpec t = make_task(name, chunk_length);
    t.world.controller_gain = controller_gain;
    return t;
  }

  RwmConfig rwm_config() const {
    RwmConfig m;
    m.hidden = gru_hidden_dim;
    m.gru_layers = gru_layers;
    m.l_max = chunk_length;
    return m;
  }

  WmTrainConfig wm_train_config() const {
    WmTrainConfig t;
    t.learning_rate = learning_rate;
    t.batch_size = batch_size;
    t.max_steps = wm_train_steps;
    t.eval_every = std::max(1, wm_train_steps / 18);
    t.seed = seed;
    return t;
  }

  SynthConfig synth_config() const {
    SynthConfig s;
    s.k_min = k_min;
    s.k_max = k_max;
    s.epsilon = epsilon;
    s.omega = resolved_omega();
    s.gamma = gamma;
    return s;
  }

  IqlConfig iql_config() const {
    IqlConfig c;
    c.hidden = gru_hidden_dim;
    c.gru_layers = gru_layers;
    c.expectile = expectile;
    c.gamma = gamma;
    c.learning_rate = learning_rate;
    c.batch_size = batch_size;
    c.train_steps = iql_train_steps;
    c.seed = seed;
    return c;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) {
    return "";
  }
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

}  // namespace detail

inline PipelineConfig parse_config_text(std::istream& in,
                                        const std::string& origin) {
  PipelineConfig cfg;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto comment = line.find('#');
    if (comment != std::string::npos) {
      line = line.substr(0, comment);
    }
    line = detail::trim(line);
    if (line.empty()) {
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument(origin + ":" + std::to_string(line_no) +
                                  ": expected key = value");
    }
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key == "learning_rate") {
      cfg.learning_rate = std::stod(value);
    } else if (key == "batch_size") {
      cfg.batch_size = std::stoi(value);
    } else if (key == "gru_hidden_dim") {
      cfg.gru_hidden_dim = std::stoi(value);
    } else if (key == "gru_layers") {
      cfg.gru_layers = std::stoi(value);
    } else if (key == "chunk_length") {
      cfg.chunk_length = std::stoi(value);
    } else if (key == "k_min") {
      cfg.k_min = std::stoi(value);
    } else if (key == "k_max") {
      cfg.k_max = std::stoi(value);
    } else if (key == "epsilon") {
      cfg.epsilon = std::stod(value);
    } else if (key == "expectile") {
      cfg.expectile = std::stod(value);
    } else if (key == "penalty") {
      cfg.penalty = std::stod(value);
    } else if (key == "gamma") {
      cfg.gamma = std::stod(value);
    } else if (key == "tasks") {
      cfg.tasks.clear();
      std::stringstream ss(value);
      std::string item;
      while (std::getline(ss, item, ',')) {
        item = detail::trim(item);
        if (!item.empty()) {
          cfg.tasks.push_back(item);
        }
      }
    } else if (key == "demos_per_task") {
      cfg.demos_per_task = std::stoi(value);
    } else if (key == "trials") {
      cfg.trials = std::stoi(value);
    } else if (key == "seed") {
      cfg.seed = std::stoull(value);
    } else if (key == "omega_profile") {
      cfg.omega_profile = value;
    } else if (key == "wm_train_steps") {
      cfg.wm_train_steps = std::stoi(value);
    } else if (key == "iql_train_steps") {
      cfg.iql_train_steps = std::stoi(value);
    } else if (key == "controller_gain") {
      cfg.controller_gain = std::stod(value);
    } else {
      throw std::invalid_argument(origin + ":" + std::to_string(line_no) +
                                  ": unknown key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

inline PipelineConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("load_config: cannot open " + path);
  }
  return parse_config_text(in, path);
}

inline void write_config(const PipelineConfig& cfg, std::ostream& out) {
  out << "learning_rate = " << cfg.learning_rate << "\n";
  out << "batch_size = " << cfg.batch_size << "\n";
  out << "gru_hidden_dim = " << cfg.gru_hidden_dim << "\n";
  out << "gru_layers = " << cfg.gru_layers << "\n";
  out << "chunk_length = " << cfg.chunk_length << "\n";
  out << "k_min = " << cfg.k_min << "\n";
  out << "k_max = " << cfg.k_max << "\n";
  out << "epsilon = " << cfg.epsilon << "\n";
  out << "expectile = " << cfg.expectile << "\n";
  out << "penalty = " << cfg.penalty << "\n";
  out << "gamma = " << cfg.gamma << "\n";
  out << "tasks = ";
  for (std::size_t i = 0; i < cfg.tasks.size(); ++i) {
    out << (i == 0 ? "" : ", ") << cfg.tasks[i];
  }
  out << "\n";
  out << "demos_per_task = " << cfg.demos_per_task << "\n";
  out << "trials = " << cfg.trials << "\n";
  out << "seed = " << cfg.seed << "\n";
  out << "omega_profile = " << cfg.omega_profile << "\n";
  out << "wm_train_steps = " << cfg.wm_train_steps << "\n";
  out << "iql_train_steps = " << cfg.iql_train_steps << "\n";
  out << "controller_gain = " << cfg.controller_gain << "\n";
}

}  // namespace sup
