#include "beamplan/llm_client.hpp"

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <regex>
#include <thread>

#include "beamplan/dose_engine.hpp"

#include <httplib.h>

namespace beamplan {

std::string role_name(ChatRole role) {
  switch (role) {
    case ChatRole::system: return "system";
    case ChatRole::user: return "user";
    case ChatRole::assistant: return "assistant";
  }
  return "user";
}

void validate_history(const std::vector<ChatMessage>& history) {
  using K = LlmError::Kind;
  if (history.empty()) throw LlmError(K::precondition, "chat history is empty");
  if (history.back().role != ChatRole::user)
    throw LlmError(K::precondition, "chat history must end with a user message");
  for (const auto& m : history)
    if (m.role == ChatRole::assistant && !m.images.empty())
      throw LlmError(K::precondition, "assistant messages cannot carry images");
}

// ---------------------------------------------------------------------------

std::string ScriptedClient::complete(const std::vector<ChatMessage>& history) {
  validate_history(history);
  std::lock_guard lock(mutex_);
  if (next_ >= responses_.size())
    throw LlmError(LlmError::Kind::queue_exhausted,
                   "scripted client exhausted after " + std::to_string(responses_.size()) + " responses");
  return responses_[next_++];
}

std::size_t ScriptedClient::calls() const {
  std::lock_guard lock(mutex_);
  return next_;
}

// ---------------------------------------------------------------------------

std::optional<double> extract_reported_reward(const std::string& prompt) {
  static const std::regex pattern(R"(reward of\s+(-?[0-9]+(?:\.[0-9]+)?))", std::regex::icase);
  std::optional<double> found;
  for (std::sregex_iterator it(prompt.begin(), prompt.end(), pattern), end; it != end; ++it)
    found = std::stod((*it)[1].str());
  return found;
}

HillClimbClient::HillClimbClient(std::uint64_t seed, int beam_count, double step_deg)
    : rng_(seed), beam_count_(beam_count), step_deg_(step_deg) {
  if (beam_count < 1 || beam_count > 36) throw std::invalid_argument("HillClimbClient: beam_count must be in [1, 36]");
}

std::vector<double> HillClimbClient::perturb(const std::vector<double>& from) {
  const int n = static_cast<int>(from.size());
  const int first = static_cast<int>(rng_() % static_cast<std::uint64_t>(n));
  const double first_sign = (rng_() & 1U) ? 1.0 : -1.0;
  for (int tried = 0; tried < n; ++tried) {
    const int i = (first + tried) % n;
    for (double sign : {first_sign, -first_sign}) {
      std::vector<double> next = from;
      next[i] = normalize_angle_deg(from[i] + sign * step_deg_);
      const int key = angle_key_deg(next[i]);
      bool clash = false;
      for (int j = 0; j < n; ++j) clash = clash || (j != i && angle_key_deg(next[j]) == key);
      if (!clash) return next;
    }
  }
  return from;
}

std::string HillClimbClient::complete(const std::vector<ChatMessage>& history) {
  validate_history(history);
  std::lock_guard lock(mutex_);
  if (proposal_.empty()) {
    for (int i = 0; i < beam_count_; ++i) current_.push_back(i * (360.0 / beam_count_));
    proposal_ = current_;
  } else {
    const auto reward = extract_reported_reward(history.back().text);
    if (reward && (!best_reward_ || *reward > *best_reward_)) {
      best_reward_ = reward;
      current_ = proposal_;
    }
    proposal_ = perturb(current_);
  }
  nlohmann::json payload{{"gantry_angles", proposal_}};
  return "Based on the reported score, here is an adjusted set of gantry angles:\n\n```json\n" + payload.dump() +
         "\n```\n\nIterate with these angles and report the new score.";
}

// ---------------------------------------------------------------------------

namespace {

std::pair<std::string, std::string> split_base_url(const std::string& base) {
  const auto scheme = base.find("://");
  if (scheme == std::string::npos) throw LlmError(LlmError::Kind::configuration, "base_url needs a scheme: " + base);
  const auto slash = base.find('/', scheme + 3);
  if (slash == std::string::npos) return {base, ""};
  std::string path = base.substr(slash);
  while (!path.empty() && path.back() == '/') path.pop_back();
  return {base.substr(0, slash), path};
}

std::string iso_timestamp() {
  const auto now = std::chrono::system_clock::now();
  const auto t = std::chrono::system_clock::to_time_t(now);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

}  // namespace

HttpTransport default_http_transport() {
  return [](const HttpRequest& req) -> HttpResponse {
    const auto [host, prefix] = split_base_url(req.base_url);
    httplib::Client cli(host);
    if (!cli.is_valid()) throw LlmError(LlmError::Kind::configuration, "unsupported base_url " + req.base_url);
    const auto timeout = std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::duration<double>(req.timeout_s));
    cli.set_connection_timeout(timeout);
    cli.set_read_timeout(timeout);
    cli.set_write_timeout(timeout);
    httplib::Headers headers{{"Authorization", "Bearer " + req.bearer_token}};
    auto res = cli.Post(prefix + req.path, headers, req.body, "application/json");
    if (!res) {
      const auto err = res.error();
      const auto kind = (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read)
                            ? LlmError::Kind::timeout
                            : LlmError::Kind::transport;
      throw LlmError(kind, "HTTP request failed: " + httplib::to_string(err));
    }
    return {res->status, res->body};
  };
}

HttpChatClient::HttpChatClient(ClientConfig cfg, HttpTransport transport, Sleeper sleeper)
    : cfg_(std::move(cfg)), transport_(std::move(transport)), sleeper_(std::move(sleeper)) {
  if (cfg_.api_key_env_var.empty())
    throw LlmError(LlmError::Kind::configuration, "client config names no API key environment variable");
  const char* secret = std::getenv(cfg_.api_key_env_var.c_str());
  if (!secret || !*secret)
    throw LlmError(LlmError::Kind::configuration,
                   "environment variable " + cfg_.api_key_env_var + " is not set; it must hold the API key");
  secret_ = secret;
  split_base_url(cfg_.base_url);
  if (cfg_.max_retries < 0) throw LlmError(LlmError::Kind::configuration, "max_retries must be >= 0");
  if (!sleeper_) sleeper_ = [](std::chrono::duration<double> d) { std::this_thread::sleep_for(d); };
}

nlohmann::json HttpChatClient::build_request(const ClientConfig& cfg, const std::vector<ChatMessage>& history) {
  nlohmann::json messages = nlohmann::json::array();
  for (const auto& m : history) {
    nlohmann::json msg{{"role", role_name(m.role)}};
    if (m.images.empty()) {
      msg["content"] = m.text;
    } else {
      nlohmann::json parts = nlohmann::json::array();
      parts.push_back({{"type", "text"}, {"text", m.text}});
      for (const auto& img : m.images)
        parts.push_back({{"type", "image_url"},
                         {"image_url", {{"url", "data:" + img.media_type + ";base64," +
                                                    httplib::detail::base64_encode(img.bytes)}}}});
      msg["content"] = parts;
    }
    messages.push_back(msg);
  }
  return {{"model", cfg.model_name}, {"temperature", cfg.temperature}, {"messages", messages}};
}

void HttpChatClient::log_call(const nlohmann::json& entry) {
  if (cfg_.call_log_path.empty()) return;
  std::ofstream out(cfg_.call_log_path, std::ios::app);
  out << entry.dump() << '\n';
}

std::string HttpChatClient::complete(const std::vector<ChatMessage>& history) {
  validate_history(history);
  const HttpRequest request{cfg_.base_url, "/chat/completions", secret_, build_request(cfg_, history).dump(),
                            cfg_.timeout_s};

  LlmError last_error(LlmError::Kind::transport, "no attempt made");
  for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
    if (attempt > 0) sleeper_(std::chrono::duration<double>(cfg_.backoff_base_s * std::pow(2.0, attempt - 1)));
    {
      std::unique_lock lock(mutex_);
      const auto gap = std::chrono::duration<double>(cfg_.min_interval_s);
      const auto ready = last_request_ + std::chrono::duration_cast<std::chrono::steady_clock::duration>(gap);
      if (cfg_.min_interval_s > 0.0 && std::chrono::steady_clock::now() < ready) std::this_thread::sleep_until(ready);
      last_request_ = std::chrono::steady_clock::now();
    }

    nlohmann::json log{{"timestamp", iso_timestamp()}, {"model", cfg_.model_name}, {"attempt", attempt}};
    const auto started = std::chrono::steady_clock::now();
    HttpResponse response;
    try {
      response = transport_(request);
    } catch (const LlmError& e) {
      log["error"] = e.what();
      log["latency_ms"] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
      {
        std::lock_guard lock(mutex_);
        log_call(log);
      }
      if (e.kind() != LlmError::Kind::timeout && e.kind() != LlmError::Kind::transport) throw;
      last_error = e;
      continue;
    }
    log["status"] = response.status;
    log["latency_ms"] = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();

    std::optional<LlmError> failure;
    std::string content;
    bool retryable = false;
    if (response.status == 401 || response.status == 403) {
      failure.emplace(LlmError::Kind::authentication, "endpoint rejected credentials (HTTP " +
                                                          std::to_string(response.status) + ")");
    } else if (response.status == 429 || response.status >= 500) {
      failure.emplace(LlmError::Kind::transport, "endpoint unavailable (HTTP " + std::to_string(response.status) + ")");
      retryable = true;
    } else if (response.status != 200) {
      failure.emplace(LlmError::Kind::transport, "unexpected HTTP " + std::to_string(response.status));
    } else {
      try {
        const auto body = nlohmann::json::parse(response.body);
        const auto& message = body.at("choices").at(0).at("message").at("content");
        if (message.is_string()) {
          content = message.get<std::string>();
        } else if (message.is_array()) {
          for (const auto& part : message)
            if (part.value("type", "") == "text") content += part.at("text").get<std::string>();
        } else {
          throw std::runtime_error("content is neither text nor parts");
        }
        if (body.contains("usage") && body["usage"].is_object()) {
          const auto& usage = body["usage"];
          if (usage.contains("prompt_tokens")) log["prompt_tokens"] = usage["prompt_tokens"];
          if (usage.contains("completion_tokens")) log["completion_tokens"] = usage["completion_tokens"];
        }
      } catch (const std::exception& e) {
        failure.emplace(LlmError::Kind::malformed_response, std::string("malformed chat response: ") + e.what());
      }
    }
    if (failure) log["error"] = failure->what();
    {
      std::lock_guard lock(mutex_);
      log_call(log);
    }
    if (!failure) return content;
    if (!retryable) throw *failure;
    last_error = *failure;
  }
  throw last_error;
}

}  // namespace beamplan
