#pragma once
// Method comparison: repeated independent trials per planning method, group
// statistics, DVHs of each method's best plan and the run-directory artifacts.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "beamplan/agents.hpp"
#include "beamplan/dqn.hpp"
#include "beamplan/dvh.hpp"
#include "beamplan/environment.hpp"
#include "beamplan/llm_client.hpp"
#include "beamplan/stats.hpp"

namespace beamplan {

enum class Method { random, dqn, text_to_plan };
std::string method_name(Method m);
// Accepts the canonical names plus "text2plan" and "rl".
std::optional<Method> parse_method(const std::string& name);

// Independent 64-bit seed for (base, method, trial).
std::uint64_t trial_seed(std::uint64_t base, Method method, int trial);

struct TrialSet {
  std::string label;  // method name, suffixed when a method is listed twice
  Method method = Method::random;
  std::vector<double> rewards;
  std::vector<Plan> plans;
  std::vector<std::uint64_t> seeds;
};

struct MethodSummary {
  std::string label;
  int n = 0;
  double mean = 0.0;
  double sd = 0.0;
};

struct PairwiseResult {
  std::string a, b;
  stats::TTestResult t;
};

struct StatsReport {
  int trials_per_method = 0;
  std::vector<MethodSummary> methods;
  std::optional<stats::AnovaResult> anova;  // needs two or more methods
  std::vector<PairwiseResult> pairwise;
  std::vector<std::string> notices;

  nlohmann::json to_json() const;
};

StatsReport make_report(const std::vector<TrialSet>& sets, int trials_per_method);

using ClientFactory = std::function<std::unique_ptr<ChatClient>(std::uint64_t seed)>;

struct ComparisonOptions {
  std::vector<Method> methods{Method::random, Method::dqn, Method::text_to_plan};
  int trials_per_method = 30;
  std::uint64_t seed = 0;
  int jobs = 1;
  DqnHyperparams dqn;
  double dqn_eval_epsilon = 0.05;
  TextToPlanOptions text_to_plan;
  ClientFactory client_factory;  // defaults to the hill-climbing mock
  int hillclimb_beams = 5;
  int dvh_bins = 120;
  double dvh_max_dose_factor = 1.2;  // DVH edges reach factor * prescription
  bool keep_transcripts = true;
};

struct BestPlan {
  std::string label;
  Plan plan;
  double reward = 0.0;
  DoseGrid dose;
  std::vector<DvhCurve> dvhs;
};

struct ComparisonResult {
  StatsReport report;
  std::vector<TrialSet> trials;
  std::vector<BestPlan> best;
  std::vector<DqnTrainResult> dqn_training;  // zero or one entry
  std::map<std::string, std::vector<AgentTranscript>> transcripts;
};

// Methods that cannot run (for example a live endpoint without credentials)
// are skipped with a notice; the report covers the rest.
ComparisonResult run_comparison(const Environment& env, const ComparisonOptions& options);

// rewards_<label>.csv, dvh_<label>_<structure>.csv, stats.json,
// dose_<label>_best/ and, when kept, transcripts/<label>_trial<k>.jsonl.
void write_comparison(const ComparisonResult& result, const Environment& env, const std::filesystem::path& dir);

void write_dvh_csv(const DvhCurve& curve, const std::filesystem::path& path);

}  // namespace beamplan
