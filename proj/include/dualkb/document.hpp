#pragma once

#include <cstdint>
#include <string>
#include <variant>

#include "dualkb/kb_store.hpp"

namespace dualkb {

struct ExpUnitRef {
  std::size_t unit_id = 0;
  friend bool operator==(const ExpUnitRef&, const ExpUnitRef&) = default;
};

using DocumentPayload = std::variant<ExpUnitRef, Triple>;

/// One retrievable item. `text` is always the canonical rendering of the
/// payload; use the factories below rather than filling it by hand.
struct Document {
  std::int64_t id = 0;
  std::string text;
  DocumentPayload payload;

  friend bool operator==(const Document&, const Document&) = default;
};

Document make_document(std::int64_t id, const Triple& t);
Document make_document(std::int64_t id, std::size_t unit_id, const SubGoalUnit& u);

/// Documents for every triple of `env`, ids 0..n-1 in key order.
std::vector<Document> env_corpus(const EnvKnowledgeBase& env);
/// Documents for every unit of `exp`, ids equal unit ids.
std::vector<Document> exp_corpus(const ExpKnowledgeBase& exp);

}  // namespace dualkb
