#include "dualkb/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include "dualkb/error.hpp"
#include "dualkb/text.hpp"

namespace dualkb {

namespace {

double bm25_term(double tf, std::size_t df, std::size_t doc_count, double doc_length, double average_length,
                 const Bm25Params& p) {
  const double n = static_cast<double>(doc_count);
  const double dfd = static_cast<double>(df);
  const double idf = std::log(1.0 + (n - dfd + 0.5) / (dfd + 0.5));
  const double norm = average_length > 0 ? doc_length / average_length : 0.0;
  return idf * tf * (p.k1 + 1.0) / (tf + p.k1 * (1.0 - p.b + p.b * norm));
}

std::set<std::string> distinct_terms(std::string_view text) {
  auto tokens = tokenize(text);
  return {tokens.begin(), tokens.end()};
}

bool fused_before(const ScoredDoc& a, const ScoredDoc& b) {
  if (a.fused != b.fused) return a.fused > b.fused;
  return a.doc.id < b.doc.id;
}

bool reranked_before(const ScoredDoc& a, const ScoredDoc& b) {
  const double ra = a.rerank.value_or(0.0);
  const double rb = b.rerank.value_or(0.0);
  if (ra != rb) return ra > rb;
  return fused_before(a, b);
}

Eigen::MatrixXd token_matrix(const std::vector<std::string>& tokens, const TextEncoder& encoder) {
  std::set<std::string> distinct(tokens.begin(), tokens.end());
  std::vector<Eigen::VectorXd> rows;
  for (const auto& t : distinct) {
    auto e = encoder.embed_token(t);
    if (!e.degenerate) rows.push_back(std::move(e.vector));
  }
  if (rows.empty()) return {};
  Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), rows.front().size());
  for (std::size_t i = 0; i < rows.size(); ++i) m.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
  return m;
}

double late_interaction(const std::vector<Embedding>& query_tokens, const Eigen::MatrixXd& doc_tokens) {
  if (query_tokens.empty() || doc_tokens.rows() == 0) return 0.0;
  double total = 0;
  for (const auto& q : query_tokens) {
    if (q.degenerate) continue;
    total += (doc_tokens * q.vector).maxCoeff();
  }
  return total / static_cast<double>(query_tokens.size());
}

std::vector<Embedding> query_token_embeddings(std::string_view query, const TextEncoder& encoder) {
  std::vector<Embedding> out;
  for (const auto& t : tokenize(query)) out.push_back(encoder.embed_token(t));
  return out;
}

}  // namespace

CorpusStats::CorpusStats(std::span<const Document> corpus) : doc_count_(corpus.size()) {
  std::size_t total = 0;
  for (const auto& d : corpus) {
    const auto tokens = tokenize(d.text);
    total += tokens.size();
    for (const auto& t : std::set<std::string>(tokens.begin(), tokens.end())) ++df_[t];
  }
  average_length_ = doc_count_ ? static_cast<double>(total) / static_cast<double>(doc_count_) : 0.0;
}

std::size_t CorpusStats::document_frequency(const std::string& term) const {
  auto it = df_.find(term);
  return it == df_.end() ? 0 : it->second;
}

double sparse_score(std::string_view query, const Document& doc, const CorpusStats& stats, Bm25Params params) {
  const auto doc_tokens = tokenize(doc.text);
  std::map<std::string, std::size_t> tf;
  for (const auto& t : doc_tokens) ++tf[t];
  double score = 0;
  for (const auto& term : distinct_terms(query)) {
    auto it = tf.find(term);
    if (it == tf.end()) continue;
    score += bm25_term(static_cast<double>(it->second), stats.document_frequency(term), stats.doc_count(),
                       static_cast<double>(doc_tokens.size()), stats.average_length(), params);
  }
  return score;
}

double dense_score(std::string_view query, const Document& doc, const TextEncoder& encoder) {
  const auto q = encoder.embed(query);
  const auto d = encoder.embed(doc.text);
  if (q.degenerate || d.degenerate) return 0.0;
  return q.vector.dot(d.vector);
}

double multi_vector_score(std::string_view query, const Document& doc, const TextEncoder& encoder) {
  return late_interaction(query_token_embeddings(query, encoder), token_matrix(tokenize(doc.text), encoder));
}

void RetrievalConfig::validate() const {
  if (k_final == 0 || k_final > k_candidates) {
    throw Error(ErrorKind::InvalidArgument, "retrieval config needs 0 < k_final <= k_candidates");
  }
  if (w_dense < 0 || w_sparse < 0 || w_multi < 0) {
    throw Error(ErrorKind::InvalidArgument, "fusion weights must be non-negative");
  }
  if (std::abs(w_dense + w_sparse + w_multi - 1.0) > 1e-9) {
    throw Error(ErrorKind::InvalidArgument, "fusion weights must sum to 1");
  }
  if (!(sparse_cap > 0)) throw Error(ErrorKind::InvalidArgument, "sparse cap must be positive");
}

std::vector<ScoredDoc> fuse_and_rank(std::vector<ScoredDoc> scored, const RetrievalConfig& cfg) {
  if (scored.empty()) return scored;
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& s : scored) {
    const double capped = std::min(s.sparse, cfg.sparse_cap);
    lo = std::min(lo, capped);
    hi = std::max(hi, capped);
  }
  for (auto& s : scored) {
    const double capped = std::min(s.sparse, cfg.sparse_cap);
    const double sparse_norm = hi > lo ? (capped - lo) / (hi - lo) : 0.0;
    s.fused = cfg.w_dense * s.dense + cfg.w_sparse * sparse_norm + cfg.w_multi * s.multi;
  }
  const std::size_t keep = std::min(cfg.k_candidates, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(keep), scored.end(), fused_before);
  scored.resize(keep);
  return scored;
}

double token_f1(std::string_view a, std::string_view b) {
  const auto ta = tokenize(a);
  const auto tb = tokenize(b);
  if (ta.empty() || tb.empty()) return 0.0;
  std::map<std::string, std::size_t> counts;
  for (const auto& t : ta) ++counts[t];
  std::size_t overlap = 0;
  for (const auto& t : tb) {
    auto it = counts.find(t);
    if (it != counts.end() && it->second > 0) {
      --it->second;
      ++overlap;
    }
  }
  if (overlap == 0) return 0.0;
  const double precision = static_cast<double>(overlap) / static_cast<double>(tb.size());
  const double recall = static_cast<double>(overlap) / static_cast<double>(ta.size());
  return 2 * precision * recall / (precision + recall);
}

std::vector<ScoredDoc> rerank(std::string_view query, std::vector<ScoredDoc> candidates, const CrossScorer& scorer,
                              std::size_t k_final) {
  for (auto& c : candidates) {
    double s = 0;
    try {
      s = scorer.score(query, c.doc.text);
    } catch (const std::exception& e) {
      throw Error(ErrorKind::RerankerError, e.what());
    }
    if (!std::isfinite(s)) throw Error(ErrorKind::RerankerError, "reranker returned a non-finite score");
    c.rerank = s;
  }
  std::sort(candidates.begin(), candidates.end(), reranked_before);
  if (candidates.size() > k_final) candidates.resize(k_final);
  return candidates;
}

std::string query_text(const QueryBundle& bundle) {
  std::string out = bundle.task_description + "\n" + bundle.plan_text;
  for (const auto& d : bundle.env_context) out += "\n" + d.text;
  return out;
}

RetrievalIndex::RetrievalIndex(std::vector<Document> corpus, const TextEncoder& encoder, Bm25Params bm25)
    : corpus_(std::move(corpus)), encoder_(&encoder), bm25_(bm25), stats_(corpus_) {
  if (corpus_.empty()) throw Error(ErrorKind::EmptyCorpus, "retrieval corpus is empty");
  std::set<std::int64_t> ids;
  for (const auto& d : corpus_) {
    if (!ids.insert(d.id).second) throw Error(ErrorKind::InvalidArgument, "duplicate document id " + std::to_string(d.id));
  }
  terms_.reserve(corpus_.size());
  doc_embeddings_.reserve(corpus_.size());
  doc_token_vectors_.reserve(corpus_.size());
  for (const auto& d : corpus_) {
    const auto tokens = tokenize(d.text);
    DocTerms terms;
    terms.length = tokens.size();
    for (const auto& t : tokens) ++terms.tf[t];
    terms_.push_back(std::move(terms));
    doc_embeddings_.push_back(encoder.embed(d.text));
    doc_token_vectors_.push_back(token_matrix(tokens, encoder));
  }
}

std::vector<ScoredDoc> RetrievalIndex::score_all(std::string_view query) const {
  const auto query_terms = distinct_terms(query);
  const auto query_embedding = encoder_->embed(query);
  const auto query_tokens = query_token_embeddings(query, *encoder_);
  std::vector<ScoredDoc> scored;
  scored.reserve(corpus_.size());
  for (std::size_t i = 0; i < corpus_.size(); ++i) {
    ScoredDoc s;
    s.doc = corpus_[i];
    for (const auto& term : query_terms) {
      auto it = terms_[i].tf.find(term);
      if (it == terms_[i].tf.end()) continue;
      s.sparse += bm25_term(static_cast<double>(it->second), stats_.document_frequency(term), stats_.doc_count(),
                            static_cast<double>(terms_[i].length), stats_.average_length(), bm25_);
    }
    if (!query_embedding.degenerate && !doc_embeddings_[i].degenerate) {
      s.dense = query_embedding.vector.dot(doc_embeddings_[i].vector);
    }
    s.multi = late_interaction(query_tokens, doc_token_vectors_[i]);
    scored.push_back(std::move(s));
  }
  return scored;
}

RetrievalResult retrieve(const RetrievalIndex& index, const QueryBundle& bundle, const RetrievalConfig& cfg,
                         const CrossScorer& scorer) {
  cfg.validate();
  const std::string query = query_text(bundle);
  auto candidates = fuse_and_rank(index.score_all(query), cfg);
  RetrievalResult result;
  try {
    result.docs = rerank(query, candidates, scorer, cfg.k_final);
  } catch (const Error& e) {
    result.reranker_fallback = true;
    result.reranker_error = e.what();
    candidates.resize(std::min(candidates.size(), cfg.k_final));
    result.docs = std::move(candidates);
  }
  return result;
}

RetrievalResult retrieve(std::span<const Document> corpus, const QueryBundle& bundle, const TextEncoder& encoder,
                         const RetrievalConfig& cfg, const CrossScorer& scorer) {
  if (corpus.empty()) throw Error(ErrorKind::EmptyCorpus, "retrieval corpus is empty");
  RetrievalIndex index({corpus.begin(), corpus.end()}, encoder);
  return retrieve(index, bundle, cfg, scorer);
}

}  // namespace dualkb
