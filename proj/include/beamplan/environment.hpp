#pragma once
// Episodic gantry-angle selection. One beam is added per step; the reward is
// the change of the plan score, so an episode's return is the quality of the
// final plan (minus invalid-action penalties).

#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "beamplan/dose_engine.hpp"
#include "beamplan/phantom.hpp"

namespace beamplan {

struct EnvConfig {
  double prescription_gy = 100.0;
  double r_max = 1.0;
  double penalty = 1.0;
  int max_beams = 5;
  int angle_bins = 36;
  double homogeneity_width_gy = 1.0;
  bool normalize_dose = true;
  EngineConfig engine;

  void validate() const;
  int stop_action() const { return angle_bins; }
  int action_count() const { return angle_bins + 1; }
  double bin_angle_deg(int bin) const { return bin * (360.0 / angle_bins); }
  friend bool operator==(const EnvConfig&, const EnvConfig&) = default;
};

inline constexpr double kInvalidActionPenalty = -1.0;

struct RewardBreakdown {
  double ptv_term = 0.0;
  std::map<std::string, double> oar_terms;  // name -> P * sum of excess dose
  double total = 0.0;
};

// Sum over PTV voxels of r_max * exp(-((T - D) / width)^2) minus, for every
// OAR, P * sum of max(0, D - L). T is the PTV's target dose.
RewardBreakdown score_plan(const DoseGrid& dose, const Phantom& phantom, const EnvConfig& cfg);

struct EnvState {
  std::shared_ptr<const Phantom> phantom;
  std::vector<double> chosen_angles;
  DoseGrid dose;
  RewardBreakdown breakdown;
  double last_score = 0.0;
  int steps_taken = 0;      // every accepted action, valid or not
  int invalid_actions = 0;
  bool done = false;
  std::uint64_t seed = 0;
};

struct StepResult {
  EnvState state;
  double reward_delta = 0.0;
  bool done = false;
  bool invalid = false;
};

struct ScoredPlan {
  Plan plan;
  DoseEngine::PlanDose dose;
  RewardBreakdown reward;
};

class Environment {
 public:
  Environment(std::shared_ptr<const Phantom> phantom, EnvConfig cfg);

  const EnvConfig& config() const { return cfg_; }
  const Phantom& phantom() const { return *phantom_; }
  std::shared_ptr<const Phantom> phantom_ptr() const { return phantom_; }
  const DoseEngine& engine() const { return engine_; }

  EnvState reset(std::uint64_t seed = 0) const;

  // action in [0, angle_bins) adds bin * 360/angle_bins degrees; action ==
  // angle_bins is STOP. A repeated bin or a STOP before any beam costs -1 and
  // leaves the plan unchanged. The episode ends on a valid STOP or once
  // max_beams actions have been taken. Throws std::logic_error when the state
  // is already done and std::out_of_range for an unknown action.
  StepResult step(const EnvState& state, int action) const;
  // True when step() would accept the action without the invalid-action penalty.
  bool is_valid_action(const EnvState& state, int action) const;

  // Plan-level path with continuous angles (random and text-to-plan agents).
  ScoredPlan evaluate(const Plan& plan) const;

 private:
  std::shared_ptr<const Phantom> phantom_;
  EnvConfig cfg_;
  DoseEngine engine_;
};

}  // namespace beamplan
