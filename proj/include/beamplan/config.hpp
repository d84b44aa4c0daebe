#pragma once
// Run configuration: every tunable in one JSON document. Unknown keys are
// rejected; missing keys keep their defaults.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "beamplan/dqn.hpp"
#include "beamplan/environment.hpp"
#include "beamplan/eval.hpp"
#include "beamplan/llm_client.hpp"

namespace beamplan {

struct PhantomSettings {
  Index3 dims{32, 32, 32};
  Vec3 spacing_mm{4.0, 4.0, 4.0};
  std::uint64_t seed = 0;
  std::string path;  // load from here instead of generating, when set
};

struct AgentSettings {
  std::string backend = "mock-hillclimb";  // mock-script | mock-hillclimb | http
  std::uint64_t seed = 0;
  int max_iterations = 10;
  int max_parse_retries = 3;
  bool attach_images = true;
  std::string target_name = "prostate";
  int hillclimb_beams = 5;
  std::vector<std::string> script_responses;  // mock-script replies, in order
};

struct EvalSettings {
  std::vector<std::string> methods{"random", "dqn", "text_to_plan"};
  int trials_per_method = 30;
  std::uint64_t seed = 0;
  int jobs = 1;
  double dqn_eval_epsilon = 0.05;
  int dvh_bins = 120;
  double dvh_max_dose_factor = 1.2;
};

struct RunConfig {
  PhantomSettings phantom;
  EnvConfig env;
  DqnHyperparams dqn;
  ClientConfig client;
  AgentSettings agent;
  EvalSettings eval;

  nlohmann::json to_json() const;
  // Throws std::invalid_argument naming the offending key.
  static RunConfig from_json(const nlohmann::json& j);
  // Overlays j onto this config.
  void merge(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
};

}  // namespace beamplan
