#ifndef EVICTLAB_LLM_CLIENT_HPP
#define EVICTLAB_LLM_CLIENT_HPP

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace evictlab {

struct ChatMessage {
  std::string role;
  std::string content;
};

enum class ReplayMode { off, record, replay };

struct ChatConfig {
  /// Full chat-completions URL, e.g. https://host/v1/chat/completions.
  std::string url = "http://127.0.0.1:8000/v1/chat/completions";
  std::string model = "default";
  double temperature = 0.8;
  /// Environment variable holding the bearer token; unset or empty sends none.
  std::string api_key_env = "EVICTLAB_API_KEY";
  int max_attempts = 5;
  std::chrono::milliseconds initial_backoff{500};
  double backoff_factor = 2.0;
  std::chrono::milliseconds max_backoff{30'000};
  int timeout_seconds = 120;
  ReplayMode replay_mode = ReplayMode::off;
  /// JSONL of {"request": ..., "reply": "..."}; one line per completion.
  std::string replay_path;
};

/// Raised when a completion could not be obtained within the retry budget.
class GeneratorUnavailable : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct UrlParts {
  std::string scheme_host_port;
  std::string path;
};

inline UrlParts split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw std::invalid_argument("url lacks a scheme: '" + url + "'");
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, "/"};
  return {url.substr(0, path_start), url.substr(path_start)};
}

inline nlohmann::json chat_request_body(const ChatConfig& cfg, const std::vector<ChatMessage>& messages) {
  nlohmann::json msgs = nlohmann::json::array();
  for (const auto& m : messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
  return {{"model", cfg.model}, {"messages", msgs}, {"temperature", cfg.temperature}};
}

/// Contents of the first fenced code block, without the info string line.
/// Returns nullopt when the reply has no complete fence pair.
inline std::optional<std::string> extract_code_block(const std::string& reply) {
  const auto open = reply.find("```");
  if (open == std::string::npos) return std::nullopt;
  auto body = reply.find('\n', open + 3);
  if (body == std::string::npos) return std::nullopt;
  ++body;
  const auto close = reply.find("```", body);
  if (close == std::string::npos) return std::nullopt;
  std::string code = reply.substr(body, close - body);
  while (!code.empty() && (code.back() == '\n' || code.back() == '\r' || code.back() == ' ')) code.pop_back();
  return code;
}

/// OpenAI-compatible chat-completions client with bounded exponential backoff
/// on transport errors, 429 and 5xx. Other 4xx fail immediately.
class ChatClient {
 public:
  using Sleeper = std::function<void(std::chrono::milliseconds)>;

  explicit ChatClient(ChatConfig cfg, Sleeper sleeper = {})
      : cfg_(std::move(cfg)), sleep_(sleeper ? std::move(sleeper) : Sleeper([](std::chrono::milliseconds d) {
                                       std::this_thread::sleep_for(d);
                                     })) {
    if (cfg_.replay_mode == ReplayMode::replay) load_replay();
  }

  const ChatConfig& config() const { return cfg_; }
  /// HTTP attempts made so far, including retries.
  int attempts() const { return attempts_; }

  std::string complete(const std::vector<ChatMessage>& messages) {
    const nlohmann::json body = chat_request_body(cfg_, messages);
    if (cfg_.replay_mode == ReplayMode::replay) {
      if (replay_next_ >= replay_.size()) throw GeneratorUnavailable("replay file exhausted");
      return replay_[replay_next_++];
    }
    std::string reply = post_with_retry(body);
    if (cfg_.replay_mode == ReplayMode::record) {
      std::ofstream out(cfg_.replay_path, std::ios::app);
      if (!out) throw std::runtime_error("cannot append to replay file '" + cfg_.replay_path + "'");
      out << nlohmann::json{{"request", body}, {"reply", reply}}.dump() << '\n';
    }
    return reply;
  }

 private:
  std::string post_with_retry(const nlohmann::json& body) {
    const UrlParts url = split_url(cfg_.url);
    httplib::Client client(url.scheme_host_port);
    client.set_connection_timeout(cfg_.timeout_seconds, 0);
    client.set_read_timeout(cfg_.timeout_seconds, 0);
    if (const char* key = std::getenv(cfg_.api_key_env.c_str()); key && *key) client.set_bearer_token_auth(key);

    const std::string payload = body.dump();
    std::chrono::milliseconds backoff = cfg_.initial_backoff;
    std::string last_error = "no attempt made";
    for (int attempt = 1; attempt <= cfg_.max_attempts; ++attempt) {
      ++attempts_;
      auto res = client.Post(url.path, payload, "application/json");
      if (!res) {
        last_error = "transport error: " + httplib::to_string(res.error());
      } else if (res->status == 200) {
        return parse_reply(res->body);
      } else if (res->status == 429 || res->status >= 500) {
        last_error = "HTTP " + std::to_string(res->status);
      } else {
        throw GeneratorUnavailable("HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 200));
      }
      if (attempt < cfg_.max_attempts) {
        sleep_(backoff);
        const auto next = static_cast<std::int64_t>(static_cast<double>(backoff.count()) * cfg_.backoff_factor);
        backoff = std::min(cfg_.max_backoff, std::chrono::milliseconds(next));
      }
    }
    throw GeneratorUnavailable("giving up after " + std::to_string(cfg_.max_attempts) + " attempts: " + last_error);
  }

  static std::string parse_reply(const std::string& text) {
    try {
      const auto j = nlohmann::json::parse(text);
      return j.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw GeneratorUnavailable(std::string("malformed completion reply: ") + e.what());
    }
  }

  void load_replay() {
    std::ifstream in(cfg_.replay_path);
    if (!in) throw std::runtime_error("cannot open replay file '" + cfg_.replay_path + "'");
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      replay_.push_back(nlohmann::json::parse(line).at("reply").get<std::string>());
    }
  }

  ChatConfig cfg_;
  Sleeper sleep_;
  int attempts_ = 0;
  std::vector<std::string> replay_;
  std::size_t replay_next_ = 0;
};

}  // namespace evictlab

#endif  // EVICTLAB_LLM_CLIENT_HPP
