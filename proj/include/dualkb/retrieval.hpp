#pragma once

#include <Eigen/Dense>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dualkb/document.hpp"
#include "dualkb/embedder.hpp"

namespace dualkb {

struct Bm25Params {
  double k1 = 1.2;
  double b = 0.75;
};

/// Document frequencies and lengths over one corpus, under the shared
/// tokenizer.
class CorpusStats {
 public:
  explicit CorpusStats(std::span<const Document> corpus);

  std::size_t doc_count() const noexcept { return doc_count_; }
  double average_length() const noexcept { return average_length_; }
  std::size_t document_frequency(const std::string& term) const;

 private:
  std::size_t doc_count_ = 0;
  double average_length_ = 0;
  std::unordered_map<std::string, std::size_t> df_;
};

/// BM25 with idf = ln(1 + (N - df + 0.5)/(df + 0.5)), summed over distinct
/// query terms. Never negative; 0 without term overlap.
double sparse_score(std::string_view query, const Document& doc, const CorpusStats& stats, Bm25Params params = {});

/// Cosine of the two unit embeddings; 0 when either side is degenerate.
double dense_score(std::string_view query, const Document& doc, const TextEncoder& encoder);

/// Late interaction: every query token takes its best cosine against the
/// document's token vectors; the result is the mean over query tokens.
double multi_vector_score(std::string_view query, const Document& doc, const TextEncoder& encoder);

struct ScoredDoc {
  Document doc;
  double sparse = 0;
  double dense = 0;
  double multi = 0;
  double fused = 0;
  std::optional<double> rerank;

  friend bool operator==(const ScoredDoc&, const ScoredDoc&) = default;
};

struct RetrievalConfig {
  std::size_t k_candidates = 32;
  std::size_t k_final = 5;
  double w_dense = 0.4;
  double w_sparse = 0.3;
  double w_multi = 0.3;
  /// Raw BM25 scores are clipped here before min-max normalization.
  double sparse_cap = std::numeric_limits<double>::infinity();

  void validate() const;
};

/// fused = w_dense·dense + w_sparse·norm(sparse) + w_multi·multi, where
/// norm is min-max over `scored` (0 when all sparse scores are equal).
/// Sorted by fused descending, ties by ascending id, truncated to
/// k_candidates.
std::vector<ScoredDoc> fuse_and_rank(std::vector<ScoredDoc> scored, const RetrievalConfig& cfg);

/// Second-stage scorer over (query, document text).
class CrossScorer {
 public:
  virtual ~CrossScorer() = default;
  virtual double score(std::string_view query, std::string_view doc_text) const = 0;
};

/// Multiset token-overlap F1.
double token_f1(std::string_view a, std::string_view b);

class TokenF1Scorer final : public CrossScorer {
 public:
  double score(std::string_view query, std::string_view doc_text) const override { return token_f1(query, doc_text); }
};

/// Orders by rerank score descending, then fused descending, then id; keeps
/// k_final. A throwing scorer surfaces as RerankerError.
std::vector<ScoredDoc> rerank(std::string_view query, std::vector<ScoredDoc> candidates, const CrossScorer& scorer,
                              std::size_t k_final);

struct QueryBundle {
  std::string task_description;
  std::string plan_text;
  /// Environmental results fed into an experiential query; empty otherwise.
  std::vector<Document> env_context;
};

/// task description, plan text, then each env_context rendering, one per line.
std::string query_text(const QueryBundle& bundle);

struct RetrievalResult {
  std::vector<ScoredDoc> docs;
  bool reranker_fallback = false;
  std::string reranker_error;
};

/// A corpus with everything that does not depend on the query precomputed.
/// Immutable after construction and safe to query from several threads.
class RetrievalIndex {
 public:
  RetrievalIndex(std::vector<Document> corpus, const TextEncoder& encoder, Bm25Params bm25 = {});

  const std::vector<Document>& corpus() const noexcept { return corpus_; }
  const TextEncoder& encoder() const noexcept { return *encoder_; }

  /// Scores every document on all three legs; fused is left at 0.
  std::vector<ScoredDoc> score_all(std::string_view query) const;

 private:
  struct DocTerms {
    std::unordered_map<std::string, std::size_t> tf;
    std::size_t length = 0;
  };

  std::vector<Document> corpus_;
  const TextEncoder* encoder_;
  Bm25Params bm25_;
  CorpusStats stats_;
  std::vector<DocTerms> terms_;
  std::vector<Embedding> doc_embeddings_;
  std::vector<Eigen::MatrixXd> doc_token_vectors_;  // one row per distinct token
};

/// score all → fuse_and_rank → rerank. Falls back to the fused order when
/// the reranker fails and records why.
RetrievalResult retrieve(const RetrievalIndex& index, const QueryBundle& bundle, const RetrievalConfig& cfg,
                         const CrossScorer& scorer);
RetrievalResult retrieve(std::span<const Document> corpus, const QueryBundle& bundle, const TextEncoder& encoder,
                         const RetrievalConfig& cfg, const CrossScorer& scorer = TokenF1Scorer{});

}  // namespace dualkb
