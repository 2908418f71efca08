#include "dualkb/text.hpp"

#include <cctype>
#include <iostream>
#include <mutex>

#include "dualkb/error.hpp"

namespace dualkb {

namespace {

bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }
char lower(char c) { return static_cast<char>(std::tolower(static_cast<unsigned char>(c))); }

std::mutex& sink_mutex() {
  static std::mutex m;
  return m;
}

LogSink& sink() {
  static LogSink s = [](std::string_view msg) { std::cerr << "warning: " << msg << '\n'; };
  return s;
}

}  // namespace

std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::UnregisteredRelation: return "UnregisteredRelation";
    case ErrorKind::ChannelConflict: return "ChannelConflict";
    case ErrorKind::StaleWrite: return "StaleWrite";
    case ErrorKind::InvalidBatch: return "InvalidBatch";
    case ErrorKind::InvalidUnit: return "InvalidUnit";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::ParseError: return "ParseError";
    case ErrorKind::SchemaVersionMismatch: return "SchemaVersionMismatch";
    case ErrorKind::EmptyCorpus: return "EmptyCorpus";
    case ErrorKind::RerankerError: return "RerankerError";
    case ErrorKind::UnknownDocId: return "UnknownDocId";
    case ErrorKind::NonFiniteLoss: return "NonFiniteLoss";
    case ErrorKind::TrainingDiverged: return "TrainingDiverged";
    case ErrorKind::ReplayDivergence: return "ReplayDivergence";
    case ErrorKind::InsufficientNegatives: return "InsufficientNegatives";
    case ErrorKind::BackendError: return "BackendError";
    case ErrorKind::MalformedModelResponse: return "MalformedModelResponse";
    case ErrorKind::UnknownTask: return "UnknownTask";
    case ErrorKind::UnparseableAction: return "UnparseableAction";
    case ErrorKind::DecisionModelError: return "DecisionModelError";
    case ErrorKind::EnvError: return "EnvError";
    case ErrorKind::TransportError: return "TransportError";
    case ErrorKind::CassetteMiss: return "CassetteMiss";
  }
  return "Unknown";
}

std::string normalize_name(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(lower(c));
  }
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> tokens;
  std::string current;
  for (char c : text) {
    if (is_alnum(c)) {
      current.push_back(lower(c));
    } else if (!current.empty()) {
      tokens.push_back(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) tokens.push_back(std::move(current));
  return tokens;
}

std::uint64_t fnv1a64(std::string_view bytes) noexcept {
  std::uint64_t hash = 14695981039346656037ULL;
  for (char c : bytes) {
    hash ^= static_cast<unsigned char>(c);
    hash *= 1099511628211ULL;
  }
  return hash;
}

std::string join(const std::vector<std::string>& parts, std::string_view separator) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out.append(separator);
    out.append(parts[i]);
  }
  return out;
}

bool contains_phrase(std::string_view haystack, std::string_view needle) {
  if (needle.empty()) return false;
  std::size_t pos = haystack.find(needle);
  while (pos != std::string_view::npos) {
    const bool left_ok = pos == 0 || !is_alnum(haystack[pos - 1]);
    const std::size_t end = pos + needle.size();
    const bool right_ok = end == haystack.size() || !is_alnum(haystack[end]);
    if (left_ok && right_ok) return true;
    pos = haystack.find(needle, pos + 1);
  }
  return false;
}

void set_log_sink(LogSink s) {
  std::lock_guard lock(sink_mutex());
  sink() = std::move(s);
}

void log_warning(std::string_view message) {
  std::lock_guard lock(sink_mutex());
  if (sink()) sink()(message);
}

}  // namespace dualkb
