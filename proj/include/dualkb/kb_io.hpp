#pragma once

#include <string>

#include "json.hpp"
#include "dualkb/kb_store.hpp"

namespace dualkb {

inline constexpr int kKnowledgeSchemaVersion = 1;

struct KnowledgeBases {
  EnvKnowledgeBase env;
  ExpKnowledgeBase exp;

  friend bool operator==(const KnowledgeBases&, const KnowledgeBases&) = default;
};

// Record encoders shared by every line-delimited file in the project. Field
// order is fixed so that equal content always serializes to equal bytes.
nlohmann::ordered_json triple_to_json(const Triple& t);
Triple triple_from_json(const nlohmann::json& j);
nlohmann::ordered_json unit_to_json(const SubGoalUnit& u, std::size_t id);
SubGoalUnit unit_from_json(const nlohmann::json& j);

/// One record per line: header, relation records (sorted), triple records in
/// key order, unit records in id order.
std::string serialize_knowledge(const EnvKnowledgeBase& env, const ExpKnowledgeBase& exp);
KnowledgeBases parse_knowledge(const std::string& text);

void save_knowledge(const std::string& path, const EnvKnowledgeBase& env, const ExpKnowledgeBase& exp);
KnowledgeBases load_knowledge(const std::string& path);

std::string read_file(const std::string& path);
/// Writes via a temporary file and rename so readers never see a partial file.
void write_file(const std::string& path, const std::string& contents);

}  // namespace dualkb
