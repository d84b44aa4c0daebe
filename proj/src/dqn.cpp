#include "beamplan/dqn.hpp"

#include <algorithm>
#include <stdexcept>

namespace beamplan {

void DqnHyperparams::validate() const {
  if (episodes < 1) throw std::invalid_argument("dqn: episodes must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("dqn: batch_size must be >= 1");
  if (replay_capacity < batch_size) throw std::invalid_argument("dqn: replay_capacity must be >= batch_size");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw std::invalid_argument("dqn: gamma must be in [0, 1]");
  if (!(epsilon_end >= 0.0 && epsilon_end <= epsilon_start && epsilon_start <= 1.0))
    throw std::invalid_argument("dqn: need 0 <= epsilon_end <= epsilon_start <= 1");
  if (!(epsilon_decay_episodes >= 0.0)) throw std::invalid_argument("dqn: epsilon_decay_episodes must be >= 0");
  if (!(learning_rate > 0.0)) throw std::invalid_argument("dqn: learning_rate must be > 0");
  if (target_sync_interval < 1) throw std::invalid_argument("dqn: target_sync_interval must be >= 1");
  if (updates_per_step < 1) throw std::invalid_argument("dqn: updates_per_step must be >= 1");
  if (warmup_transitions < 0) throw std::invalid_argument("dqn: warmup_transitions must be >= 0");
  if (!(reward_scale > 0.0)) throw std::invalid_argument("dqn: reward_scale must be > 0");
  if (render_dims.x < 1 || render_dims.y < 1 || render_dims.z < 1)
    throw std::invalid_argument("dqn: render_dims must be positive");
}

double DqnHyperparams::epsilon_at(int episode) const {
  if (epsilon_decay_episodes <= 0.0) return epsilon_end;
  const double frac = std::min(1.0, episode / epsilon_decay_episodes);
  return epsilon_start + frac * (epsilon_end - epsilon_start);
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("ReplayBuffer: capacity must be >= 1");
}

void ReplayBuffer::push(Transition t) {
  if (items_.size() == capacity_) items_.pop_front();
  items_.push_back(std::move(t));
}

std::vector<const Transition*> ReplayBuffer::sample(std::size_t n, std::mt19937_64& rng) const {
  if (items_.empty()) throw std::logic_error("ReplayBuffer: sample from empty buffer");
  std::uniform_int_distribution<std::size_t> pick(0, items_.size() - 1);
  std::vector<const Transition*> out(n);
  for (auto& p : out) p = &items_[pick(rng)];
  return out;
}

double td_target(double reward, bool done, double gamma, std::span<const double> q_next) {
  if (done) return reward;
  if (q_next.empty()) throw std::invalid_argument("td_target: no next-state values for a non-terminal transition");
  return reward + gamma * *std::max_element(q_next.begin(), q_next.end());
}

namespace {

std::vector<int> valid_actions(const Environment& env, const EnvState& state) {
  std::vector<int> out;
  for (int a = 0; a < env.config().action_count(); ++a)
    if (env.is_valid_action(state, a)) out.push_back(a);
  return out;
}

}  // namespace

int uniform_valid_action(const Environment& env, const EnvState& state, std::mt19937_64& rng) {
  const auto valid = valid_actions(env, state);
  if (valid.empty()) throw std::logic_error("no valid action in this state");
  std::uniform_int_distribution<std::size_t> pick(0, valid.size() - 1);
  return valid[pick(rng)];
}

int greedy_valid_action(const Environment& env, const EnvState& state, std::span<const double> q) {
  int best = -1;
  for (int a = 0; a < static_cast<int>(q.size()); ++a)
    if (env.is_valid_action(state, a) && (best < 0 || q[a] > q[best])) best = a;
  if (best < 0) throw std::logic_error("no valid action in this state");
  return best;
}

int epsilon_greedy(const Environment& env, const EnvState& state, const QNetwork& net, const StateTensor& render,
                   double epsilon, std::mt19937_64& rng) {
  if (epsilon >= 1.0) return uniform_valid_action(env, state, rng);
  if (epsilon > 0.0 && std::uniform_real_distribution<double>(0.0, 1.0)(rng) < epsilon)
    return uniform_valid_action(env, state, rng);
  return greedy_valid_action(env, state, net.forward(render));
}

DqnTrainResult dqn_train(const Environment& env, const DqnHyperparams& hyper) {
  hyper.validate();
  const EnvConfig& cfg = env.config();
  DqnTrainResult result{QNetwork(hyper.render_dims, cfg.action_count(), hyper.seed), {}, 0};
  QNetwork& online = result.net;
  QNetwork target = online;
  AdamOptimizer optimizer(hyper.learning_rate);
  ReplayBuffer replay(static_cast<std::size_t>(hyper.replay_capacity));
  std::mt19937_64 rng(hyper.seed ^ 0x9e3779b97f4a7c15ULL);
  std::vector<double> grad;
  const auto warmup = static_cast<std::size_t>(std::max(hyper.batch_size, hyper.warmup_transitions));

  for (int episode = 0; episode < hyper.episodes; ++episode) {
    EpisodeLog log;
    log.epsilon = hyper.epsilon_at(episode);
    EnvState state = env.reset(hyper.seed + static_cast<std::uint64_t>(episode));
    auto render = std::make_shared<const StateTensor>(render_state(state, hyper.render_dims, cfg.prescription_gy));

    while (!state.done) {
      const int action = epsilon_greedy(env, state, online, *render, log.epsilon, rng);
      StepResult step = env.step(state, action);
      auto next_render =
          std::make_shared<const StateTensor>(render_state(step.state, hyper.render_dims, cfg.prescription_gy));
      log.episode_return += step.reward_delta;
      replay.push({render, action, step.reward_delta * hyper.reward_scale, next_render, step.done,
                   step.done ? std::vector<int>{} : valid_actions(env, step.state)});
      state = std::move(step.state);
      render = std::move(next_render);
      ++log.steps;

      if (replay.size() < warmup) continue;
      for (int u = 0; u < hyper.updates_per_step; ++u) {
        QNetwork::Batch batch;
        for (const Transition* t : replay.sample(static_cast<std::size_t>(hyper.batch_size), rng)) {
          double y = t->reward;
          if (!t->done) {
            const auto q_next = target.forward(*t->next_state);
            std::vector<double> allowed;
            for (int a : t->next_valid_actions) allowed.push_back(q_next[a]);
            y = td_target(t->reward, false, hyper.gamma, allowed);
          }
          batch.inputs.push_back(t->state.get());
          batch.actions.push_back(t->action);
          batch.targets.push_back(y);
        }
        online.loss_and_gradient(batch, grad, true);
        optimizer.step(online.parameters(), grad);
        if (++result.optimizer_steps % hyper.target_sync_interval == 0) target = online;
      }
    }
    log.final_score = state.last_score;
    log.angles = state.chosen_angles;
    result.episodes.push_back(std::move(log));
  }
  return result;
}

RolloutResult dqn_rollout(const Environment& env, const QNetwork& net, double epsilon, std::uint64_t seed) {
  const EnvConfig& cfg = env.config();
  if (net.action_count() != cfg.action_count())
    throw std::invalid_argument("dqn_rollout: network action count does not match the environment");
  std::mt19937_64 rng(seed);
  EnvState state = env.reset(seed);
  RolloutResult out;
  while (!state.done) {
    const auto render = render_state(state, net.input_dims(), cfg.prescription_gy);
    StepResult step = env.step(state, epsilon_greedy(env, state, net, render, epsilon, rng));
    out.episode_return += step.reward_delta;
    state = std::move(step.state);
  }
  out.plan = Plan::from_angles(state.chosen_angles);
  out.final_score = state.last_score;
  return out;
}

}  // namespace beamplan
