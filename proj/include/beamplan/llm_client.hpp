#pragma once
// Chat-completion clients for the text-to-plan agent: an HTTP client for any
// endpoint speaking the chat-completions JSON shape, and two deterministic
// mocks (scripted replay and a hill-climbing proposer).

#include <chrono>
#include <cstdint>
#include <functional>
#include <mutex>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

namespace beamplan {

class LlmError : public std::runtime_error {
 public:
  enum class Kind {
    precondition,       // history empty or not ending in a user turn
    configuration,      // missing credentials or bad endpoint settings
    authentication,     // 401 / 403
    timeout,            // timed out on every attempt
    transport,          // connection failures or 429/5xx after retries
    malformed_response, // server answered with something we cannot read
    queue_exhausted,    // scripted mock ran out of responses
  };
  LlmError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

enum class ChatRole { system, user, assistant };
std::string role_name(ChatRole role);

struct ImageAttachment {
  std::string media_type = "image/png";
  std::string bytes;
  std::string ref;  // file path or logical name, for transcripts
};

struct ChatMessage {
  ChatRole role = ChatRole::user;
  std::string text;
  std::vector<ImageAttachment> images;
};

// Throws LlmError(precondition) unless history is non-empty, ends with a user
// message and no assistant message carries images.
void validate_history(const std::vector<ChatMessage>& history);

class ChatClient {
 public:
  virtual ~ChatClient() = default;
  // Returns the assistant's reply text.
  virtual std::string complete(const std::vector<ChatMessage>& history) = 0;
};

// Replays a fixed queue of responses.
class ScriptedClient final : public ChatClient {
 public:
  explicit ScriptedClient(std::vector<std::string> responses) : responses_(std::move(responses)) {}
  std::string complete(const std::vector<ChatMessage>& history) override;
  std::size_t calls() const;

 private:
  mutable std::mutex mutex_;
  std::vector<std::string> responses_;
  std::size_t next_ = 0;
};

// Seeded coordinate descent over gantry angles. Ignores images; reads the
// reward interpolated into the latest user prompt. The first call proposes
// equally spaced angles; every later call keeps the previous proposal if its
// reward beat the best so far (otherwise reverts) and then moves one angle by
// +-step_deg.
class HillClimbClient final : public ChatClient {
 public:
  explicit HillClimbClient(std::uint64_t seed, int beam_count = 5, double step_deg = 10.0);
  std::string complete(const std::vector<ChatMessage>& history) override;

 private:
  std::vector<double> perturb(const std::vector<double>& from);

  std::mutex mutex_;
  std::mt19937_64 rng_;
  int beam_count_;
  double step_deg_;
  std::vector<double> current_;
  std::vector<double> proposal_;
  std::optional<double> best_reward_;
};

// Latest "reward of <number>" in a prompt, if any.
std::optional<double> extract_reported_reward(const std::string& prompt);

struct ClientConfig {
  std::string base_url = "https://api.openai.com/v1";
  std::string model_name = "gpt-4o";
  std::string api_key_env_var = "OPENAI_API_KEY";  // the secret itself is never stored
  double timeout_s = 60.0;
  int max_retries = 3;
  double temperature = 0.0;
  double backoff_base_s = 1.0;
  double min_interval_s = 0.0;
  std::string call_log_path;  // JSON lines; empty disables

  friend bool operator==(const ClientConfig&, const ClientConfig&) = default;
};

struct HttpRequest {
  std::string base_url;
  std::string path;  // appended to base_url
  std::string bearer_token;
  std::string body;
  double timeout_s = 60.0;
};

struct HttpResponse {
  int status = 0;
  std::string body;
};

// Throws LlmError(transport | timeout) when no HTTP response arrived.
using HttpTransport = std::function<HttpResponse(const HttpRequest&)>;
HttpTransport default_http_transport();

using Sleeper = std::function<void(std::chrono::duration<double>)>;

// POST {base_url}/chat/completions with bearer auth read from the configured
// environment variable at construction. Retries timeouts, connection errors,
// 429 and 5xx with exponential backoff (backoff_base_s * 2^attempt).
class HttpChatClient final : public ChatClient {
 public:
  explicit HttpChatClient(ClientConfig cfg, HttpTransport transport = default_http_transport(),
                          Sleeper sleeper = {});
  std::string complete(const std::vector<ChatMessage>& history) override;

  // Request body in the chat-completions shape; images become base64 data
  // URL content parts.
  static nlohmann::json build_request(const ClientConfig& cfg, const std::vector<ChatMessage>& history);

 private:
  void log_call(const nlohmann::json& entry);

  ClientConfig cfg_;
  std::string secret_;
  HttpTransport transport_;
  Sleeper sleeper_;
  std::mutex mutex_;  // rate limiting and call log
  std::chrono::steady_clock::time_point last_request_{};
};

}  // namespace beamplan
