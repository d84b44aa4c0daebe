#pragma once
// Planning policies that produce whole plans: the random baseline and the
// text-to-plan loop driven by a chat model. The deep-Q agent lives in dqn.hpp.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "beamplan/environment.hpp"
#include "beamplan/llm_client.hpp"

namespace beamplan {

// Beam count uniform on [1, max_beams]; angles uniform on [0, 360), resampled
// until distinct at 1 degree.
Plan random_plan(const EnvConfig& cfg, std::mt19937_64& rng);

struct CaseMeta {
  std::string target_name = "prostate";
  double prescription_gy = 100.0;
};

std::string build_initial_prompt(const CaseMeta& meta);
// The reward appears rounded to the nearest integer.
std::string build_refinement_prompt(double current_reward, const CaseMeta& meta);
std::string build_retry_prompt();

struct ParseResult {
  bool ok = false;
  std::vector<double> angles;  // normalised to [0, 360), distinct at 1 degree, at most max_beams
  std::size_t original_count = 0;  // distinct angles before truncation
  bool truncated = false;
  std::string error;  // set when !ok
};

// Finds the first well-formed JSON object (anywhere in the text, fences
// included) holding a "gantry_angles" array of numbers or numeric strings.
ParseResult parse_angles(const std::string& response_text, int max_beams);
// {"gantry_angles": [...]}
std::string serialize_angles(std::span<const double> angles);

struct TranscriptIteration {
  int index = 0;
  std::string prompt_text;
  std::vector<std::string> images_sent;
  std::string raw_response;
  int parse_attempts = 0;
  std::optional<std::vector<double>> parsed_angles;
  bool truncated = false;
  std::optional<double> score;
  std::string error;

  friend bool operator==(const TranscriptIteration&, const TranscriptIteration&) = default;
};

struct AgentTranscript {
  std::vector<TranscriptIteration> iterations;
  std::optional<std::vector<double>> best_plan;
  std::optional<double> best_score;
  bool complete = true;
  std::string failure;
  std::uint64_t seed = 0;

  friend bool operator==(const AgentTranscript&, const AgentTranscript&) = default;
};

struct TextToPlanOptions {
  int max_iterations = 10;
  int max_parse_retries = 3;
  bool attach_images = true;
  std::filesystem::path image_dir;  // PNGs are written here when set
  CaseMeta meta;
};

// Prompt, parse, score, feed the score back. A transport or model error ends
// the loop early with complete = false and everything gathered so far kept.
AgentTranscript text_to_plan_run(const Environment& env, ChatClient& client, const TextToPlanOptions& options,
                                 std::uint64_t seed);

// JSON lines: one {"type":"iteration",...} per iteration, then one summary.
void save_transcript(const AgentTranscript& transcript, const std::filesystem::path& path);
AgentTranscript load_transcript(const std::filesystem::path& path);

}  // namespace beamplan
