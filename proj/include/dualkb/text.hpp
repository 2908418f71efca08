#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

namespace dualkb {

/// Lowercase, collapse internal whitespace runs to one space, trim.
std::string normalize_name(std::string_view text);

/// Lowercase and split on runs of non-alphanumeric bytes. Empty input yields
/// no tokens. Shared by the sparse scorer, the featurizer and the F1 reranker.
std::vector<std::string> tokenize(std::string_view text);

/// 64-bit FNV-1a.
std::uint64_t fnv1a64(std::string_view bytes) noexcept;

std::string join(const std::vector<std::string>& parts, std::string_view separator);

/// True if `needle` occurs in `haystack` bounded by non-alphanumeric bytes or
/// the string ends. Case-sensitive; callers normalize first.
bool contains_phrase(std::string_view haystack, std::string_view needle);

// Warnings that are not errors (empty eval sets, skipped instances) go
// through a replaceable sink so tests and the CLI can route them.
using LogSink = std::function<void(std::string_view)>;
void set_log_sink(LogSink sink);
void log_warning(std::string_view message);

}  // namespace dualkb
