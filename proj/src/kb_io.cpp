#include "dualkb/kb_io.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include "dualkb/error.hpp"

namespace dualkb {

using nlohmann::json;
using nlohmann::ordered_json;

ordered_json triple_to_json(const Triple& t) {
  ordered_json j;
  j["task_id"] = t.task_id;
  j["subject"] = t.subject.name();
  j["relation"] = t.relation.name;
  j["channel"] = std::string(to_string(t.relation.channel));
  if (const auto* e = value_entity(t)) {
    j["value_kind"] = "entity";
    j["value"] = e->name();
    j["unit"] = nullptr;
  } else {
    const auto& a = std::get<Attribute>(t.value);
    j["value_kind"] = "attribute";
    j["value"] = a.text;
    j["unit"] = a.unit ? ordered_json(*a.unit) : ordered_json(nullptr);
  }
  j["step_index"] = t.step_index;
  return j;
}

Triple triple_from_json(const json& j) {
  Relation relation{j.at("relation").get<std::string>(), channel_from_string(j.at("channel").get<std::string>())};
  const auto kind = j.at("value_kind").get<std::string>();
  TripleValue value = EntityId("_");
  if (kind == "entity") {
    value = EntityId(j.at("value").get<std::string>());
  } else if (kind == "attribute") {
    Attribute a{j.at("value").get<std::string>(), std::nullopt};
    if (!j.at("unit").is_null()) a.unit = j.at("unit").get<std::string>();
    value = std::move(a);
  } else {
    throw Error(ErrorKind::ParseError, "unknown value_kind '" + kind + "'");
  }
  return Triple{EntityId(j.at("subject").get<std::string>()), std::move(relation), std::move(value),
                j.at("step_index").get<std::uint64_t>(), j.at("task_id").get<std::string>()};
}

ordered_json unit_to_json(const SubGoalUnit& u, std::size_t id) {
  ordered_json j;
  j["id"] = id;
  j["name"] = u.name;
  j["provenance"] = std::string(to_string(u.provenance));
  j["source_task_id"] = u.source_task_id;
  ordered_json entities = ordered_json::array();
  for (const auto& e : u.associated_entities) entities.push_back(e.name());
  j["associated_entities"] = std::move(entities);
  j["reflections"] = u.reflections;
  j["action_trajectory"] = u.action_trajectory;
  ordered_json knowledge = ordered_json::array();
  for (const auto& t : u.relevant_env_knowledge) knowledge.push_back(triple_to_json(t));
  j["relevant_env_knowledge"] = std::move(knowledge);
  return j;
}

SubGoalUnit unit_from_json(const json& j) {
  SubGoalUnit u;
  u.name = j.at("name").get<std::string>();
  u.provenance = provenance_from_string(j.at("provenance").get<std::string>());
  u.source_task_id = j.at("source_task_id").get<std::string>();
  for (const auto& e : j.at("associated_entities")) u.associated_entities.emplace_back(e.get<std::string>());
  u.reflections = j.at("reflections").get<std::vector<std::string>>();
  u.action_trajectory = j.at("action_trajectory").get<std::vector<std::string>>();
  for (const auto& t : j.at("relevant_env_knowledge")) u.relevant_env_knowledge.push_back(triple_from_json(t));
  return u;
}

std::string serialize_knowledge(const EnvKnowledgeBase& env, const ExpKnowledgeBase& exp) {
  std::ostringstream out;
  ordered_json header;
  header["record"] = "header";
  header["schema"] = "dualkb-kb";
  header["version"] = kKnowledgeSchemaVersion;
  out << header.dump() << '\n';
  for (const auto& [name, channel] : env.registry().entries()) {
    ordered_json r;
    r["record"] = "relation";
    r["name"] = name;
    r["channel"] = std::string(to_string(channel));
    out << r.dump() << '\n';
  }
  for (const auto& [key, t] : env.entries()) {
    ordered_json r;
    r["record"] = "triple";
    const auto fields = triple_to_json(t);
    for (const auto& [k, v] : fields.items()) r[k] = v;
    out << r.dump() << '\n';
  }
  for (std::size_t id = 0; id < exp.size(); ++id) {
    ordered_json r;
    r["record"] = "unit";
    const auto fields = unit_to_json(exp.at(id), id);
    for (const auto& [k, v] : fields.items()) r[k] = v;
    out << r.dump() << '\n';
  }
  return out.str();
}

KnowledgeBases parse_knowledge(const std::string& text) {
  KnowledgeBases kb;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(line_no, e.what());
    }
    try {
      const auto record = j.at("record").get<std::string>();
      if (!saw_header) {
        if (record != "header" || j.at("schema").get<std::string>() != "dualkb-kb") {
          throw ParseError(line_no, "expected dualkb-kb header record");
        }
        const int version = j.at("version").get<int>();
        if (version != kKnowledgeSchemaVersion) {
          throw Error(ErrorKind::SchemaVersionMismatch,
                      "file has version " + std::to_string(version) + ", expected " +
                          std::to_string(kKnowledgeSchemaVersion));
        }
        saw_header = true;
      } else if (record == "relation") {
        kb.env.registry().add(j.at("name").get<std::string>(), channel_from_string(j.at("channel").get<std::string>()));
      } else if (record == "triple") {
        kb.env.upsert(triple_from_json(j));
      } else if (record == "unit") {
        const auto id = j.at("id").get<std::size_t>();
        if (id != kb.exp.size()) throw ParseError(line_no, "unit ids must be dense and ordered");
        kb.exp.store(unit_from_json(j));
      } else {
        throw ParseError(line_no, "unknown record type '" + record + "'");
      }
    } catch (const json::exception& e) {
      throw ParseError(line_no, e.what());
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::SchemaVersionMismatch) throw;
      throw ParseError(line_no, e.what());
    }
  }
  if (!saw_header) throw ParseError(line_no, "missing header record");
  return kb;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path);
  std::ostringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

void write_file(const std::string& path, const std::string& contents) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorKind::IoError, "cannot write " + tmp);
    out << contents;
    if (!out) throw Error(ErrorKind::IoError, "write failed for " + tmp);
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw Error(ErrorKind::IoError, "cannot rename " + tmp + " to " + path + ": " + ec.message());
}

void save_knowledge(const std::string& path, const EnvKnowledgeBase& env, const ExpKnowledgeBase& exp) {
  write_file(path, serialize_knowledge(env, exp));
}

KnowledgeBases load_knowledge(const std::string& path) { return parse_knowledge(read_file(path)); }

}  // namespace dualkb
