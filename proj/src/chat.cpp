#include "dualkb/chat.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <thread>

#include "httplib.h"
#include "json.hpp"
#include "dualkb/error.hpp"
#include "dualkb/kb_io.hpp"
#include "dualkb/text.hpp"

namespace dualkb {

namespace {

nlohmann::ordered_json messages_json(const std::vector<ChatMessage>& messages) {
  auto out = nlohmann::ordered_json::array();
  for (const auto& m : messages) out.push_back({{"role", m.role}, {"content", m.content}});
  return out;
}

bool retryable(int status) { return status == 429 || status >= 500; }

}  // namespace

std::string request_key(const std::vector<ChatMessage>& messages) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(messages_json(messages).dump())));
  return buf;
}

HttpChatTransport::HttpChatTransport(HttpChatConfig cfg) : cfg_(std::move(cfg)) {
  const std::string scheme = "http://";
  if (cfg_.endpoint.rfind(scheme, 0) != 0) {
    throw Error(ErrorKind::InvalidArgument, "endpoint must start with http://: " + cfg_.endpoint);
  }
  const auto slash = cfg_.endpoint.find('/', scheme.size());
  origin_ = cfg_.endpoint.substr(0, slash);
  path_ = slash == std::string::npos ? "/" : cfg_.endpoint.substr(slash);
  if (cfg_.max_retries < 0) throw Error(ErrorKind::InvalidArgument, "max_retries must be >= 0");
}

std::string HttpChatTransport::send(const std::vector<ChatMessage>& messages) {
  nlohmann::ordered_json body;
  body["model"] = cfg_.model;
  body["messages"] = messages_json(messages);
  body["temperature"] = 0;

  httplib::Client client(origin_);
  const auto seconds = std::chrono::duration_cast<std::chrono::seconds>(cfg_.timeout);
  const auto micros = std::chrono::duration_cast<std::chrono::microseconds>(cfg_.timeout - seconds);
  client.set_connection_timeout(seconds.count(), micros.count());
  client.set_read_timeout(seconds.count(), micros.count());
  client.set_write_timeout(seconds.count(), micros.count());
  httplib::Headers headers;
  if (const char* token = std::getenv(cfg_.token_env.c_str()); token && *token) {
    headers.emplace("Authorization", std::string("Bearer ") + token);
  }

  std::string last_error;
  auto delay = cfg_.backoff;
  for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(delay);
      delay *= 2;
    }
    auto res = client.Post(path_, headers, body.dump(), "application/json");
    if (!res) {
      last_error = "request failed: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status != 200) {
      last_error = "HTTP " + std::to_string(res->status);
      if (retryable(res->status)) continue;
      throw Error(ErrorKind::TransportError, last_error);
    }
    try {
      const auto reply = nlohmann::json::parse(res->body);
      return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& e) {
      throw Error(ErrorKind::MalformedModelResponse, std::string("chat reply: ") + e.what());
    }
  }
  throw Error(ErrorKind::TransportError, last_error + " after " + std::to_string(cfg_.max_retries + 1) + " attempts");
}

std::vector<CassetteEntry> load_cassette(const std::string& path) {
  std::vector<CassetteEntry> out;
  std::istringstream in(read_file(path));
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      CassetteEntry e;
      e.key = j.at("key").get<std::string>();
      for (const auto& m : j.at("messages")) e.messages.push_back({m.at("role"), m.at("content")});
      e.response = j.at("response").get<std::string>();
      out.push_back(std::move(e));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(line_no, e.what());
    }
  }
  return out;
}

RecordingTransport::RecordingTransport(ChatTransport& inner, std::string cassette_path)
    : inner_(&inner), path_(std::move(cassette_path)) {}

std::string RecordingTransport::send(const std::vector<ChatMessage>& messages) {
  std::string response = inner_->complete(messages);
  nlohmann::ordered_json j;
  j["key"] = request_key(messages);
  j["messages"] = messages_json(messages);
  j["response"] = response;
  std::ofstream out(path_, std::ios::app | std::ios::binary);
  if (!out) throw Error(ErrorKind::IoError, "cannot append to cassette " + path_);
  out << j.dump() << '\n';
  return response;
}

ReplayTransport::ReplayTransport(const std::string& cassette_path) : ReplayTransport(load_cassette(cassette_path)) {}

ReplayTransport::ReplayTransport(std::vector<CassetteEntry> entries) {
  for (auto& e : entries) answers_[e.key].push_back(std::move(e.response));
}

std::string ReplayTransport::send(const std::vector<ChatMessage>& messages) {
  const std::string key = request_key(messages);
  auto it = answers_.find(key);
  if (it == answers_.end()) throw Error(ErrorKind::CassetteMiss, "no recorded response for request " + key);
  std::size_t& n = served_[key];
  const std::string& answer = it->second[std::min(n, it->second.size() - 1)];
  ++n;
  return answer;
}

}  // namespace dualkb
