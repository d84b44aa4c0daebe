#pragma once
// Deep-Q training over the discrete gantry-bin action space.

#include <cstdint>
#include <deque>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "beamplan/environment.hpp"
#include "beamplan/qnet.hpp"
#include "beamplan/render.hpp"

namespace beamplan {

struct DqnHyperparams {
  int episodes = 300;
  int replay_capacity = 2000;
  int batch_size = 32;
  double gamma = 0.99;
  double epsilon_start = 1.0;
  double epsilon_end = 0.05;
  double epsilon_decay_episodes = 200.0;
  double learning_rate = 1e-4;
  int target_sync_interval = 100;  // optimiser steps
  int warmup_transitions = 64;
  int updates_per_step = 1;        // optimiser steps per environment step
  double reward_scale = 1e-4;      // applied to rewards before they enter the TD target
  Index3 render_dims{16, 16, 16};
  std::uint64_t seed = 0;

  // Throws std::invalid_argument on inconsistent settings.
  void validate() const;
  double epsilon_at(int episode) const;
  friend bool operator==(const DqnHyperparams&, const DqnHyperparams&) = default;
};

struct Transition {
  std::shared_ptr<const StateTensor> state;
  int action = 0;
  double reward = 0.0;  // already scaled
  std::shared_ptr<const StateTensor> next_state;
  bool done = false;
  std::vector<int> next_valid_actions;  // bootstrap max is taken over these
};

// Fixed-capacity FIFO; the oldest transition is dropped first.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity);
  void push(Transition t);
  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Transition& operator[](std::size_t i) const { return items_[i]; }
  // Uniform with replacement.
  std::vector<const Transition*> sample(std::size_t n, std::mt19937_64& rng) const;

 private:
  std::size_t capacity_;
  std::deque<Transition> items_;
};

// y = r for terminal transitions, r + gamma * max(q_next) otherwise.
double td_target(double reward, bool done, double gamma, std::span<const double> q_next);

// Uniform over the actions the environment would accept.
int uniform_valid_action(const Environment& env, const EnvState& state, std::mt19937_64& rng);
// Highest-valued valid action; ties go to the lowest index.
int greedy_valid_action(const Environment& env, const EnvState& state, std::span<const double> q);
// epsilon <= 0 is pure argmax and draws nothing from rng; epsilon >= 1 is
// exactly uniform_valid_action; otherwise one uniform draw picks the branch.
int epsilon_greedy(const Environment& env, const EnvState& state, const QNetwork& net, const StateTensor& render,
                   double epsilon, std::mt19937_64& rng);

struct EpisodeLog {
  double episode_return = 0.0;  // unscaled sum of reward deltas
  double final_score = 0.0;
  int steps = 0;
  double epsilon = 0.0;
  std::vector<double> angles;
};

struct DqnTrainResult {
  QNetwork net;
  std::vector<EpisodeLog> episodes;
  long optimizer_steps = 0;
};

// Single-threaded and fully seeded: equal inputs give bit-identical weights.
// Episode e resets the environment with seed hyper.seed + e.
DqnTrainResult dqn_train(const Environment& env, const DqnHyperparams& hyper);

struct RolloutResult {
  Plan plan;
  double episode_return = 0.0;
  double final_score = 0.0;
};

// One epsilon-greedy episode with a trained network.
RolloutResult dqn_rollout(const Environment& env, const QNetwork& net, double epsilon, std::uint64_t seed);

}  // namespace beamplan
