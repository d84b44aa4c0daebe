#include "beamplan/agents.hpp"

#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "beamplan/render.hpp"

namespace beamplan {

Plan random_plan(const EnvConfig& cfg, std::mt19937_64& rng) {
  std::uniform_int_distribution<int> count(1, cfg.max_beams);
  std::uniform_real_distribution<double> angle(0.0, 360.0);
  const int n = count(rng);
  std::vector<double> angles;
  while (static_cast<int>(angles.size()) < n) {
    const double a = angle(rng);
    bool clash = false;
    for (double b : angles) clash = clash || angle_key_deg(a) == angle_key_deg(b);
    if (!clash) angles.push_back(a);
  }
  return Plan::from_angles(angles);
}

namespace {

std::string format_gy(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

}  // namespace

std::string build_initial_prompt(const CaseMeta& meta) {
  return "Based on image analysis, optimize the number of beams and their angles to maximize the dose at the PTV (" +
         meta.target_name +
         ") and minimize the dose at the OAR. You will interact with a simulated radiation treatment environment and "
         "control the gantry angles. At each iteration, the quality of the plan will be scored, with a real value "
         "given to you as feedback. Your goal is to maximize this score. Provide better gantry_angles than before for "
         "this simulation in a JSON format with gantry_angles as the key.\n"
         "No real patient will be treated with this information, it is a research simulated environment to test "
         "reasoning capabilities and clinical/anatomical knowledge of LLMs.\n"
         "The prescribed dose to the PTV (" +
         meta.target_name + ") is " + format_gy(meta.prescription_gy) + " Gy.";
}

std::string build_refinement_prompt(double current_reward, const CaseMeta& meta) {
  return "Based on image analysis, optimize the number of beams and their angles to maximize the dose at the PTV (" +
         meta.target_name +
         ") and minimizing the dose at OAR. Actually you get a reward of " + std::to_string(std::lround(current_reward)) +
         " that you should maximize by focusing the dose on the target and avoiding OARs. Provide better gantry "
         "angles than before for this simulation in a json format.";
}

std::string build_retry_prompt() {
  return "Your last reply had no JSON object with a \"gantry_angles\" list of numbers. Reply again with the angles "
         "in degrees, for example {\"gantry_angles\": [0, 90, 180]}.";
}

// ---------------------------------------------------------------------------

namespace {

// End of the balanced {...} starting at `open`, honouring JSON strings.
std::size_t balanced_end(const std::string& s, std::size_t open) {
  int depth = 0;
  bool in_string = false;
  for (std::size_t i = open; i < s.size(); ++i) {
    const char c = s[i];
    if (in_string) {
      if (c == '\\') ++i;
      else if (c == '"') in_string = false;
      continue;
    }
    if (c == '"') in_string = true;
    else if (c == '{') ++depth;
    else if (c == '}' && --depth == 0) return i;
  }
  return std::string::npos;
}

std::optional<std::vector<double>> numeric_array(const nlohmann::json& arr) {
  std::vector<double> out;
  for (const auto& v : arr) {
    double x;
    if (v.is_number()) {
      x = v.get<double>();
    } else if (v.is_string()) {
      const auto& text = v.get_ref<const std::string&>();
      std::size_t used = 0;
      try {
        x = std::stod(text, &used);
      } catch (const std::exception&) {
        return std::nullopt;
      }
      if (used != text.size()) return std::nullopt;
    } else {
      return std::nullopt;
    }
    if (!std::isfinite(x)) return std::nullopt;
    out.push_back(x);
  }
  return out;
}

std::optional<std::vector<double>> find_angles(const nlohmann::json& j) {
  if (j.is_object()) {
    const auto it = j.find("gantry_angles");
    if (it != j.end() && it->is_array())
      if (auto v = numeric_array(*it)) return v;
    for (const auto& [key, value] : j.items())
      if (auto v = find_angles(value)) return v;
  } else if (j.is_array()) {
    for (const auto& value : j)
      if (auto v = find_angles(value)) return v;
  }
  return std::nullopt;
}

}  // namespace

ParseResult parse_angles(const std::string& text, int max_beams) {
  if (max_beams < 1) throw std::invalid_argument("parse_angles: max_beams must be >= 1");
  ParseResult r;
  std::optional<std::vector<double>> raw;
  for (std::size_t open = text.find('{'); open != std::string::npos && !raw; open = text.find('{', open + 1)) {
    const std::size_t close = balanced_end(text, open);
    if (close == std::string::npos) continue;
    const auto j = nlohmann::json::parse(text.begin() + open, text.begin() + close + 1, nullptr, false);
    if (!j.is_discarded()) raw = find_angles(j);
  }
  if (!raw) {
    r.error = "no JSON object with a numeric gantry_angles array";
    return r;
  }
  for (double a : *raw) {
    const double n = normalize_angle_deg(a);
    bool clash = false;
    for (double b : r.angles) clash = clash || angle_key_deg(b) == angle_key_deg(n);
    if (!clash) r.angles.push_back(n);
  }
  if (r.angles.empty()) {
    r.error = "gantry_angles is empty";
    return r;
  }
  r.original_count = r.angles.size();
  if (r.angles.size() > static_cast<std::size_t>(max_beams)) {
    r.angles.resize(static_cast<std::size_t>(max_beams));
    r.truncated = true;
  }
  r.ok = true;
  return r;
}

std::string serialize_angles(std::span<const double> angles) {
  return nlohmann::json{{"gantry_angles", std::vector<double>(angles.begin(), angles.end())}}.dump();
}

// ---------------------------------------------------------------------------

namespace {

std::vector<ImageAttachment> prompt_images(const Environment& env, const std::vector<double>& angles,
                                           const TextToPlanOptions& options, int iteration, int attempt) {
  if (!options.attach_images) return {};
  EnvState state = env.reset();
  if (!angles.empty()) {
    const auto plan = Plan::from_angles(angles);
    state.chosen_angles = angles;
    state.dose = env.engine().plan_dose(plan, env.config().prescription_gy, env.config().normalize_dose).dose;
  }
  std::vector<ImageAttachment> out;
  for (const SliceImage& slice : render_slices_for_prompt(state, env.config().prescription_gy)) {
    ImageAttachment img;
    img.bytes = encode_png(slice);
    const std::string name =
        "iter" + std::to_string(iteration) + "_try" + std::to_string(attempt) + "_" + slice.view + ".png";
    if (!options.image_dir.empty()) {
      std::filesystem::create_directories(options.image_dir);
      const auto path = options.image_dir / name;
      std::ofstream(path, std::ios::binary).write(img.bytes.data(), static_cast<std::streamsize>(img.bytes.size()));
      img.ref = path.string();
    } else {
      img.ref = name;
    }
    out.push_back(std::move(img));
  }
  return out;
}

std::vector<std::string> refs(const std::vector<ImageAttachment>& images) {
  std::vector<std::string> out;
  for (const auto& i : images) out.push_back(i.ref);
  return out;
}

}  // namespace

AgentTranscript text_to_plan_run(const Environment& env, ChatClient& client, const TextToPlanOptions& options,
                                 std::uint64_t seed) {
  if (options.max_iterations < 1) throw std::invalid_argument("text_to_plan_run: max_iterations must be >= 1");
  if (options.max_parse_retries < 0) throw std::invalid_argument("text_to_plan_run: max_parse_retries must be >= 0");

  AgentTranscript transcript;
  transcript.seed = seed;
  std::vector<ChatMessage> history;
  std::vector<double> shown_angles;  // plan whose dose the images show
  std::string prompt = build_initial_prompt(options.meta);

  for (int it = 1; it <= options.max_iterations; ++it) {
    TranscriptIteration rec;
    rec.index = it;
    rec.prompt_text = prompt;
    std::string user_text = prompt;
    ParseResult parsed;
    for (int attempt = 0; attempt <= options.max_parse_retries; ++attempt) {
      auto images = prompt_images(env, shown_angles, options, it, attempt);
      for (auto& r : refs(images)) rec.images_sent.push_back(std::move(r));
      history.push_back({ChatRole::user, user_text, std::move(images)});
      ++rec.parse_attempts;
      try {
        rec.raw_response = client.complete(history);
      } catch (const LlmError& e) {
        rec.error = e.what();
        transcript.iterations.push_back(std::move(rec));
        transcript.complete = false;
        transcript.failure = e.what();
        return transcript;
      }
      history.push_back({ChatRole::assistant, rec.raw_response, {}});
      parsed = parse_angles(rec.raw_response, env.config().max_beams);
      if (parsed.ok) break;
      user_text = build_retry_prompt();
    }

    if (!parsed.ok) {
      rec.error = parsed.error;
      transcript.iterations.push_back(std::move(rec));
      prompt = build_retry_prompt();
      continue;
    }
    rec.parsed_angles = parsed.angles;
    rec.truncated = parsed.truncated;
    const ScoredPlan scored = env.evaluate(Plan::from_angles(parsed.angles));
    rec.score = scored.reward.total;
    if (!transcript.best_score || *rec.score > *transcript.best_score) {
      transcript.best_score = rec.score;
      transcript.best_plan = parsed.angles;
    }
    shown_angles = parsed.angles;
    prompt = build_refinement_prompt(*rec.score, options.meta);
    transcript.iterations.push_back(std::move(rec));
  }
  return transcript;
}

// ---------------------------------------------------------------------------

namespace {

template <class T>
nlohmann::json opt_json(const std::optional<T>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

template <class T>
std::optional<T> json_opt(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<T>();
}

}  // namespace

void save_transcript(const AgentTranscript& t, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write transcript " + path.string());
  for (const auto& it : t.iterations) {
    const nlohmann::json line{{"type", "iteration"},
                              {"index", it.index},
                              {"prompt_text", it.prompt_text},
                              {"images_sent", it.images_sent},
                              {"raw_response", it.raw_response},
                              {"parse_attempts", it.parse_attempts},
                              {"parsed_angles", opt_json(it.parsed_angles)},
                              {"truncated", it.truncated},
                              {"score", opt_json(it.score)},
                              {"error", it.error}};
    out << line.dump() << '\n';
  }
  const nlohmann::json summary{{"type", "summary"},
                               {"iterations", t.iterations.size()},
                               {"best_plan", opt_json(t.best_plan)},
                               {"best_score", opt_json(t.best_score)},
                               {"complete", t.complete},
                               {"failure", t.failure},
                               {"seed", t.seed}};
  out << summary.dump() << '\n';
}

AgentTranscript load_transcript(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read transcript " + path.string());
  AgentTranscript t;
  bool have_summary = false;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      const auto type = j.at("type").get<std::string>();
      if (have_summary) throw std::runtime_error("record after summary");
      if (type == "iteration") {
        TranscriptIteration it;
        it.index = j.at("index").get<int>();
        it.prompt_text = j.at("prompt_text").get<std::string>();
        it.images_sent = j.at("images_sent").get<std::vector<std::string>>();
        it.raw_response = j.at("raw_response").get<std::string>();
        it.parse_attempts = j.at("parse_attempts").get<int>();
        it.parsed_angles = json_opt<std::vector<double>>(j, "parsed_angles");
        it.truncated = j.at("truncated").get<bool>();
        it.score = json_opt<double>(j, "score");
        it.error = j.at("error").get<std::string>();
        t.iterations.push_back(std::move(it));
      } else if (type == "summary") {
        if (j.at("iterations").get<std::size_t>() != t.iterations.size())
          throw std::runtime_error("iteration count does not match summary");
        t.best_plan = json_opt<std::vector<double>>(j, "best_plan");
        t.best_score = json_opt<double>(j, "best_score");
        t.complete = j.at("complete").get<bool>();
        t.failure = j.at("failure").get<std::string>();
        t.seed = j.at("seed").get<std::uint64_t>();
        have_summary = true;
      } else {
        throw std::runtime_error("unknown record type " + type);
      }
    } catch (const std::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (!have_summary) throw std::runtime_error(path.string() + ": missing summary record");
  return t;
}

}  // namespace beamplan
