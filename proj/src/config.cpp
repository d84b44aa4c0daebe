#include "beamplan/config.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <type_traits>

namespace beamplan {
namespace {

using nlohmann::json;

struct Entry {
  std::string name;
  std::function<json()> get;
  std::function<void(const json&)> set;
};

template <class T>
void read_value(const json& j, T& out) {
  if constexpr (std::is_same_v<T, bool>) {
    if (!j.is_boolean()) throw std::invalid_argument("expected a boolean");
    out = j.get<bool>();
  } else if constexpr (std::is_integral_v<T>) {
    if (!j.is_number_integer()) throw std::invalid_argument("expected an integer");
    if constexpr (std::is_unsigned_v<T>) {
      if (j.is_number_unsigned()) {
        out = j.get<T>();
      } else {
        const auto v = j.get<std::int64_t>();
        if (v < 0) throw std::invalid_argument("expected a non-negative integer");
        out = static_cast<T>(v);
      }
    } else {
      out = j.get<T>();
    }
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!j.is_number()) throw std::invalid_argument("expected a number");
    out = j.get<T>();
  } else if constexpr (std::is_same_v<T, std::string>) {
    if (!j.is_string()) throw std::invalid_argument("expected a string");
    out = j.get<std::string>();
  } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
    if (!j.is_array()) throw std::invalid_argument("expected an array of strings");
    out.clear();
    for (const auto& v : j) {
      if (!v.is_string()) throw std::invalid_argument("expected an array of strings");
      out.push_back(v.get<std::string>());
    }
  } else if constexpr (std::is_same_v<T, Index3>) {
    if (!j.is_array() || j.size() != 3) throw std::invalid_argument("expected [x, y, z]");
    read_value(j[0], out.x);
    read_value(j[1], out.y);
    read_value(j[2], out.z);
  } else if constexpr (std::is_same_v<T, Vec3>) {
    if (!j.is_array() || j.size() != 3) throw std::invalid_argument("expected [x, y, z]");
    read_value(j[0], out.x);
    read_value(j[1], out.y);
    read_value(j[2], out.z);
  } else {
    static_assert(sizeof(T) == 0, "unsupported config field type");
  }
}

template <class T>
json write_value(const T& v) {
  if constexpr (std::is_same_v<T, Index3>) return json::array({v.x, v.y, v.z});
  else if constexpr (std::is_same_v<T, Vec3>) return json::array({v.x, v.y, v.z});
  else return json(v);
}

template <class T>
Entry entry(std::string name, T& ref) {
  return {std::move(name), [&ref] { return write_value(ref); }, [&ref](const json& j) { read_value(j, ref); }};
}

std::vector<std::pair<std::string, std::vector<Entry>>> sections(RunConfig& c) {
  return {
      {"phantom",
       {entry("dims", c.phantom.dims), entry("spacing_mm", c.phantom.spacing_mm), entry("seed", c.phantom.seed),
        entry("path", c.phantom.path)}},
      {"env",
       {entry("prescription_gy", c.env.prescription_gy), entry("r_max", c.env.r_max), entry("penalty", c.env.penalty),
        entry("max_beams", c.env.max_beams), entry("angle_bins", c.env.angle_bins),
        entry("homogeneity_width_gy", c.env.homogeneity_width_gy), entry("normalize_dose", c.env.normalize_dose)}},
      {"engine",
       {entry("mu_water_per_mm", c.env.engine.mu_water_per_mm), entry("beam_margin_mm", c.env.engine.beam_margin_mm),
        entry("penumbra_sigma_mm", c.env.engine.penumbra_sigma_mm),
        entry("ray_spacing_mm", c.env.engine.ray_spacing_mm)}},
      {"dqn",
       {entry("episodes", c.dqn.episodes), entry("replay_capacity", c.dqn.replay_capacity),
        entry("batch_size", c.dqn.batch_size), entry("gamma", c.dqn.gamma),
        entry("epsilon_start", c.dqn.epsilon_start), entry("epsilon_end", c.dqn.epsilon_end),
        entry("epsilon_decay_episodes", c.dqn.epsilon_decay_episodes), entry("learning_rate", c.dqn.learning_rate),
        entry("target_sync_interval", c.dqn.target_sync_interval),
        entry("warmup_transitions", c.dqn.warmup_transitions), entry("updates_per_step", c.dqn.updates_per_step),
        entry("reward_scale", c.dqn.reward_scale), entry("render_dims", c.dqn.render_dims),
        entry("seed", c.dqn.seed)}},
      {"client",
       {entry("base_url", c.client.base_url), entry("model_name", c.client.model_name),
        entry("api_key_env_var", c.client.api_key_env_var), entry("timeout_s", c.client.timeout_s),
        entry("max_retries", c.client.max_retries), entry("temperature", c.client.temperature),
        entry("backoff_base_s", c.client.backoff_base_s), entry("min_interval_s", c.client.min_interval_s),
        entry("call_log_path", c.client.call_log_path)}},
      {"agent",
       {entry("backend", c.agent.backend), entry("seed", c.agent.seed), entry("max_iterations", c.agent.max_iterations),
        entry("max_parse_retries", c.agent.max_parse_retries), entry("attach_images", c.agent.attach_images),
        entry("target_name", c.agent.target_name), entry("hillclimb_beams", c.agent.hillclimb_beams),
        entry("script_responses", c.agent.script_responses)}},
      {"eval",
       {entry("methods", c.eval.methods), entry("trials_per_method", c.eval.trials_per_method),
        entry("seed", c.eval.seed), entry("jobs", c.eval.jobs), entry("dqn_eval_epsilon", c.eval.dqn_eval_epsilon),
        entry("dvh_bins", c.eval.dvh_bins), entry("dvh_max_dose_factor", c.eval.dvh_max_dose_factor)}},
  };
}

}  // namespace

json RunConfig::to_json() const {
  RunConfig copy = *this;
  json out = json::object();
  for (const auto& [name, entries] : sections(copy)) {
    json s = json::object();
    for (const auto& e : entries) s[e.name] = e.get();
    out[name] = s;
  }
  return out;
}

void RunConfig::merge(const json& j) {
  if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");
  auto secs = sections(*this);
  for (const auto& [key, value] : j.items()) {
    auto sec = std::find_if(secs.begin(), secs.end(), [&](const auto& s) { return s.first == key; });
    if (sec == secs.end()) throw std::invalid_argument("config: unknown key '" + key + "'");
    if (!value.is_object()) throw std::invalid_argument("config: '" + key + "' must be an object");
    for (const auto& [field, v] : value.items()) {
      auto e = std::find_if(sec->second.begin(), sec->second.end(), [&](const Entry& x) { return x.name == field; });
      if (e == sec->second.end()) throw std::invalid_argument("config: unknown key '" + key + "." + field + "'");
      try {
        e->set(v);
      } catch (const std::exception& err) {
        throw std::invalid_argument("config: '" + key + "." + field + "': " + err.what());
      }
    }
  }
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  c.merge(j);
  return c;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::invalid_argument("config: " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

}  // namespace beamplan
