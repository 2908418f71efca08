#pragma once

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

namespace dualkb {

struct ChatMessage {
  std::string role;  // "system", "user" or "assistant"
  std::string content;

  friend bool operator==(const ChatMessage&, const ChatMessage&) = default;
};

/// Stable key of a request: FNV-1a over its canonical JSON, as 16 hex digits.
std::string request_key(const std::vector<ChatMessage>& messages);

/// Text-in, text-out model access. Calls through one handle are serialized.
class ChatTransport {
 public:
  virtual ~ChatTransport() = default;

  std::string complete(const std::vector<ChatMessage>& messages) {
    std::lock_guard lock(mutex_);
    return send(messages);
  }

 protected:
  virtual std::string send(const std::vector<ChatMessage>& messages) = 0;

 private:
  std::mutex mutex_;
};

struct HttpChatConfig {
  /// Full URL of an OpenAI-style chat completions endpoint, http only.
  std::string endpoint = "http://127.0.0.1:8080/v1/chat/completions";
  std::string model = "default";
  /// Name of the environment variable holding the bearer token.
  std::string token_env = "DUALKB_CHAT_TOKEN";
  std::chrono::milliseconds timeout{30000};
  int max_retries = 2;
  std::chrono::milliseconds backoff{500};
};

/// POSTs {"model", "messages", "temperature": 0} and returns
/// choices[0].message.content. Connection failures, 429 and 5xx are retried
/// with doubling backoff; everything else fails at once with TransportError.
class HttpChatTransport final : public ChatTransport {
 public:
  explicit HttpChatTransport(HttpChatConfig cfg);

 protected:
  std::string send(const std::vector<ChatMessage>& messages) override;

 private:
  HttpChatConfig cfg_;
  std::string origin_;
  std::string path_;
};

/// One recorded exchange per line: {"key", "messages", "response"}.
struct CassetteEntry {
  std::string key;
  std::vector<ChatMessage> messages;
  std::string response;
};

std::vector<CassetteEntry> load_cassette(const std::string& path);

/// Forwards to `inner` and appends every exchange to a cassette file.
class RecordingTransport final : public ChatTransport {
 public:
  RecordingTransport(ChatTransport& inner, std::string cassette_path);

 protected:
  std::string send(const std::vector<ChatMessage>& messages) override;

 private:
  ChatTransport* inner_;
  std::string path_;
};

/// Answers from a cassette only; an unrecorded request throws CassetteMiss.
/// Repeated identical requests are answered in recording order, and the last
/// answer is reused once they run out.
class ReplayTransport final : public ChatTransport {
 public:
  explicit ReplayTransport(const std::string& cassette_path);
  explicit ReplayTransport(std::vector<CassetteEntry> entries);

 protected:
  std::string send(const std::vector<ChatMessage>& messages) override;

 private:
  std::map<std::string, std::vector<std::string>> answers_;
  std::map<std::string, std::size_t> served_;
};

}  // namespace dualkb
