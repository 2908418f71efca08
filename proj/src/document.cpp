#include "dualkb/document.hpp"

namespace dualkb {

Document make_document(std::int64_t id, const Triple& t) { return Document{id, render_triple(t), t}; }

Document make_document(std::int64_t id, std::size_t unit_id, const SubGoalUnit& u) {
  return Document{id, render_unit(u), ExpUnitRef{unit_id}};
}

std::vector<Document> env_corpus(const EnvKnowledgeBase& env) {
  std::vector<Document> docs;
  docs.reserve(env.size());
  std::int64_t id = 0;
  for (const auto& [key, t] : env.entries()) docs.push_back(make_document(id++, t));
  return docs;
}

std::vector<Document> exp_corpus(const ExpKnowledgeBase& exp) {
  std::vector<Document> docs;
  docs.reserve(exp.size());
  for (std::size_t id = 0; id < exp.size(); ++id) {
    docs.push_back(make_document(static_cast<std::int64_t>(id), id, exp.at(id)));
  }
  return docs;
}

}  // namespace dualkb
