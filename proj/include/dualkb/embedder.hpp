#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "dualkb/document.hpp"

namespace dualkb {

inline constexpr std::size_t kFeatureDim = 32768;
inline constexpr std::size_t kDefaultEmbeddingDim = 64;
inline constexpr int kModelSchemaVersion = 1;

using WeightMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Hashed bag of tokens: (bucket, count) pairs sorted by bucket, counts > 0.
struct FeatureVector {
  std::vector<std::pair<std::uint32_t, double>> entries;

  bool empty() const noexcept { return entries.empty(); }
  double norm() const;
  FeatureVector normalized() const;

  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

std::uint32_t feature_bucket(std::string_view token, std::size_t feature_dim = kFeatureDim);
FeatureVector featurize(std::string_view text, std::size_t feature_dim = kFeatureDim);

struct Embedding {
  Eigen::VectorXd vector;
  /// Set when the text has no tokens or projects to zero; `vector` is then
  /// all zeros and every similarity involving it is 0.
  bool degenerate = false;
};

/// What retrieval needs from an encoder. The hashed linear model below is the
/// trainable implementation; a pre-trained encoder can stand in behind this.
class TextEncoder {
 public:
  virtual ~TextEncoder() = default;
  virtual Embedding embed(std::string_view text) const = 0;
  /// Unit vector for a single token, used by late-interaction scoring.
  virtual Embedding embed_token(std::string_view token) const = 0;
};

class EmbeddingModel final : public TextEncoder {
 public:
  /// Seeded Gaussian initialization scaled by 1/sqrt(feature_dim).
  explicit EmbeddingModel(std::uint64_t seed, std::size_t embedding_dim = kDefaultEmbeddingDim,
                          std::size_t feature_dim = kFeatureDim);
  EmbeddingModel(WeightMatrix weights, std::uint64_t seed);

  Embedding embed(std::string_view text) const override;
  Embedding embed_token(std::string_view token) const override;
  Embedding embed(const FeatureVector& features) const;

  /// Wᵀx for an already-normalized feature vector.
  Eigen::VectorXd project(const FeatureVector& normalized) const;

  const WeightMatrix& weights() const noexcept { return weights_; }
  WeightMatrix& weights() noexcept { return weights_; }
  std::uint64_t seed() const noexcept { return seed_; }
  std::size_t feature_dim() const noexcept { return static_cast<std::size_t>(weights_.rows()); }
  std::size_t embedding_dim() const noexcept { return static_cast<std::size_t>(weights_.cols()); }

  friend bool operator==(const EmbeddingModel& a, const EmbeddingModel& b) {
    return a.seed_ == b.seed_ && a.weights_.rows() == b.weights_.rows() && a.weights_.cols() == b.weights_.cols() &&
           a.weights_ == b.weights_;
  }

 private:
  WeightMatrix weights_;
  std::uint64_t seed_;
};

void save_model(const std::string& path, const EmbeddingModel& model);
EmbeddingModel load_model(const std::string& path);

struct TrainingInstance {
  std::string query;
  std::string positive;
  std::vector<std::string> negatives;

  friend bool operator==(const TrainingInstance&, const TrainingInstance&) = default;
};

/// Throws InvalidArgument unless there is at least one negative and none
/// equals the positive.
void validate_instance(const TrainingInstance& instance);

/// Gradient with respect to W, stored only for the rows (feature buckets) the
/// batch touched.
class SparseGradient {
 public:
  SparseGradient(std::size_t feature_dim, std::size_t embedding_dim)
      : feature_dim_(feature_dim), embedding_dim_(embedding_dim) {}

  void add_to_row(std::uint32_t row, double scale, const Eigen::VectorXd& values);
  void scale(double factor);
  double at(std::size_t row, std::size_t col) const;
  WeightMatrix to_dense() const;
  /// W += step * gradient, visiting rows in ascending order.
  void apply(WeightMatrix& weights, double step) const;

  const std::map<std::uint32_t, Eigen::RowVectorXd>& rows() const noexcept { return rows_; }

 private:
  std::size_t feature_dim_;
  std::size_t embedding_dim_;
  std::map<std::uint32_t, Eigen::RowVectorXd> rows_;
};

struct LossAndGradient {
  double loss = 0;
  SparseGradient gradient;
};

/// Mean InfoNCE over the batch with s = φ(q)ᵀφ(k) on unit embeddings.
double info_nce_loss(const EmbeddingModel& model, std::span<const TrainingInstance> batch, double tau);
SparseGradient info_nce_grad(const EmbeddingModel& model, std::span<const TrainingInstance> batch, double tau);
LossAndGradient info_nce_loss_and_grad(const EmbeddingModel& model, std::span<const TrainingInstance> batch,
                                       double tau);

struct TrainConfig {
  double tau = 0.05;
  double learning_rate = 0.0005;
  int epochs = 10;
  int batch_size = 16;
  int m = 8;
  std::uint64_t seed = 0;
};

struct TrainReport {
  /// Mean batch loss per epoch, measured before each batch's update.
  std::vector<double> epoch_losses;
};

/// Mini-batch gradient descent with a seeded shuffle per epoch. Throws
/// TrainingDiverged if the last epoch's loss exceeds the first's.
EmbeddingModel train(EmbeddingModel model, std::span<const TrainingInstance> dataset, const TrainConfig& cfg,
                     TrainReport* report = nullptr);

struct EvalQuery {
  std::string query;
  std::vector<std::int64_t> relevant;
};

/// Fraction of queries whose top-k dense results (ties by ascending id)
/// contain a relevant document. An empty eval set yields 0 and a warning.
double recall_at_k(const TextEncoder& encoder, std::span<const EvalQuery> eval_set,
                   std::span<const Document> corpus, std::size_t k);

/// Dense top-k ids for one query; ties broken by ascending id.
std::vector<std::int64_t> dense_top_k(const TextEncoder& encoder, std::string_view query,
                                      std::span<const Document> corpus, std::size_t k);

}  // namespace dualkb
