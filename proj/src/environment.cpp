#include "beamplan/environment.hpp"

#include <cmath>
#include <stdexcept>

#include "beamplan/kernels.hpp"

namespace beamplan {

void EnvConfig::validate() const {
  if (!(prescription_gy > 0.0)) throw std::invalid_argument("env: prescription_gy must be > 0");
  if (!(r_max > 0.0)) throw std::invalid_argument("env: r_max must be > 0");
  if (!(penalty > 0.0)) throw std::invalid_argument("env: penalty must be > 0");
  if (max_beams < 1) throw std::invalid_argument("env: max_beams must be >= 1");
  if (angle_bins < 2) throw std::invalid_argument("env: angle_bins must be >= 2");
  if (!(homogeneity_width_gy > 0.0)) throw std::invalid_argument("env: homogeneity_width_gy must be > 0");
}

RewardBreakdown score_plan(const DoseGrid& dose, const Phantom& phantom, const EnvConfig& cfg) {
  if (!(dose.geometry == phantom.geometry()) || dose.dose_gy.size() != phantom.geometry().voxel_count())
    throw std::invalid_argument("score_plan: dose grid is not congruent with the phantom");

  RewardBreakdown r;
  const Structure& ptv = phantom.ptv();
  const double target = ptv.target_dose_gy.value_or(cfg.prescription_gy);
  const double width = cfg.homogeneity_width_gy;
  for (std::size_t i = 0; i < ptv.mask.size(); ++i) {
    if (!ptv.mask[i]) continue;
    const double z = (target - dose.dose_gy[i]) / width;
    r.ptv_term += cfg.r_max * std::exp(-(z * z));
  }
  double penalties = 0.0;
  for (const Structure& s : phantom.structures) {
    if (s.kind != StructureKind::oar) continue;
    const double term = cfg.penalty * kernels::masked_excess_sum(dose.dose_gy, s.mask, *s.dose_limit_gy);
    r.oar_terms[s.name] = term;
    penalties += term;
  }
  r.total = r.ptv_term - penalties;
  return r;
}

Environment::Environment(std::shared_ptr<const Phantom> phantom, EnvConfig cfg)
    : phantom_(std::move(phantom)), cfg_(std::move(cfg)), engine_(phantom_, cfg_.engine) {
  cfg_.validate();
}

EnvState Environment::reset(std::uint64_t seed) const {
  EnvState s;
  s.phantom = phantom_;
  s.dose = DoseGrid::zeros(phantom_->geometry());
  s.breakdown = score_plan(s.dose, *phantom_, cfg_);
  s.last_score = s.breakdown.total;
  s.seed = seed;
  return s;
}

ScoredPlan Environment::evaluate(const Plan& plan) const {
  plan.validate(cfg_.max_beams);
  ScoredPlan out{plan, engine_.plan_dose(plan, cfg_.prescription_gy, cfg_.normalize_dose), {}};
  out.reward = score_plan(out.dose.dose, *phantom_, cfg_);
  return out;
}

bool Environment::is_valid_action(const EnvState& state, int action) const {
  if (state.done || action < 0 || action > cfg_.stop_action()) return false;
  if (action == cfg_.stop_action()) return !state.chosen_angles.empty();
  const int key = angle_key_deg(cfg_.bin_angle_deg(action));
  for (double a : state.chosen_angles)
    if (angle_key_deg(a) == key) return false;
  return true;
}

StepResult Environment::step(const EnvState& state, int action) const {
  if (state.done) throw std::logic_error("step() called on a finished episode");
  if (action < 0 || action > cfg_.stop_action())
    throw std::out_of_range("action " + std::to_string(action) + " outside [0, " +
                            std::to_string(cfg_.stop_action()) + "]");

  StepResult r{state, 0.0, false, false};
  EnvState& next = r.state;
  ++next.steps_taken;

  if (action == cfg_.stop_action()) {
    if (next.chosen_angles.empty()) {
      r.invalid = true;
    } else {
      next.done = true;
    }
  } else {
    const double angle = cfg_.bin_angle_deg(action);
    const int key = angle_key_deg(angle);
    bool duplicate = false;
    for (double a : next.chosen_angles) duplicate = duplicate || angle_key_deg(a) == key;
    if (duplicate) {
      r.invalid = true;
    } else {
      next.chosen_angles.push_back(angle);
      const auto plan = Plan::from_angles(next.chosen_angles);
      auto dose = engine_.plan_dose(plan, cfg_.prescription_gy, cfg_.normalize_dose);
      next.dose = std::move(dose.dose);
      next.breakdown = score_plan(next.dose, *phantom_, cfg_);
      r.reward_delta = next.breakdown.total - state.last_score;
      next.last_score = next.breakdown.total;
    }
  }
  if (r.invalid) {
    ++next.invalid_actions;
    r.reward_delta = kInvalidActionPenalty;
  }
  if (next.steps_taken >= cfg_.max_beams) next.done = true;
  r.done = next.done;
  return r;
}

}  // namespace beamplan
