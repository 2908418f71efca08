#include "dualkb/embedder.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

#include "dualkb/error.hpp"
#include "dualkb/info_nce.hpp"
#include "dualkb/text.hpp"

namespace dualkb {

double FeatureVector::norm() const {
  double sum = 0;
  for (const auto& [bucket, count] : entries) sum += count * count;
  return std::sqrt(sum);
}

FeatureVector FeatureVector::normalized() const {
  FeatureVector out = *this;
  const double n = norm();
  if (n > 0) {
    for (auto& [bucket, count] : out.entries) count /= n;
  }
  return out;
}

std::uint32_t feature_bucket(std::string_view token, std::size_t feature_dim) {
  return static_cast<std::uint32_t>(fnv1a64(token) % feature_dim);
}

FeatureVector featurize(std::string_view text, std::size_t feature_dim) {
  std::map<std::uint32_t, double> counts;
  for (const auto& token : tokenize(text)) counts[feature_bucket(token, feature_dim)] += 1.0;
  FeatureVector fv;
  fv.entries.assign(counts.begin(), counts.end());
  return fv;
}

EmbeddingModel::EmbeddingModel(std::uint64_t seed, std::size_t embedding_dim, std::size_t feature_dim)
    : weights_(feature_dim, embedding_dim), seed_(seed) {
  if (embedding_dim == 0 || feature_dim == 0) throw Error(ErrorKind::InvalidArgument, "model dimensions must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0 / std::sqrt(static_cast<double>(feature_dim)));
  for (Eigen::Index r = 0; r < weights_.rows(); ++r) {
    for (Eigen::Index c = 0; c < weights_.cols(); ++c) weights_(r, c) = gauss(rng);
  }
}

EmbeddingModel::EmbeddingModel(WeightMatrix weights, std::uint64_t seed) : weights_(std::move(weights)), seed_(seed) {
  if (weights_.rows() == 0 || weights_.cols() == 0) throw Error(ErrorKind::InvalidArgument, "empty weight matrix");
  if (!weights_.allFinite()) throw Error(ErrorKind::InvalidArgument, "weight matrix has non-finite entries");
}

Eigen::VectorXd EmbeddingModel::project(const FeatureVector& normalized) const {
  Eigen::VectorXd z = Eigen::VectorXd::Zero(weights_.cols());
  for (const auto& [bucket, value] : normalized.entries) z += value * weights_.row(bucket).transpose();
  return z;
}

Embedding EmbeddingModel::embed(const FeatureVector& features) const {
  Embedding out{Eigen::VectorXd::Zero(weights_.cols()), true};
  if (features.empty()) return out;
  Eigen::VectorXd z = project(features.normalized());
  const double n = z.norm();
  if (n == 0) return out;
  out.vector = z / n;
  out.degenerate = false;
  return out;
}

Embedding EmbeddingModel::embed(std::string_view text) const { return embed(featurize(text, feature_dim())); }

Embedding EmbeddingModel::embed_token(std::string_view token) const { return embed(token); }

void save_model(const std::string& path, const EmbeddingModel& model) {
  static_assert(std::endian::native == std::endian::little, "model files are little-endian");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path);
  out << "dualkb-model " << kModelSchemaVersion << ' ' << model.feature_dim() << ' ' << model.embedding_dim() << ' '
      << model.seed() << '\n';
  const auto& w = model.weights();
  out.write(reinterpret_cast<const char*>(w.data()), static_cast<std::streamsize>(w.size() * sizeof(double)));
  if (!out) throw Error(ErrorKind::IoError, "write failed for " + path);
}

EmbeddingModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path);
  std::string header;
  if (!std::getline(in, header)) throw ParseError(1, "missing model header");
  std::istringstream fields(header);
  std::string magic;
  int version = 0;
  std::size_t feature_dim = 0, embedding_dim = 0;
  std::uint64_t seed = 0;
  if (!(fields >> magic >> version >> feature_dim >> embedding_dim >> seed) || magic != "dualkb-model") {
    throw ParseError(1, "malformed model header '" + header + "'");
  }
  if (version != kModelSchemaVersion) {
    throw Error(ErrorKind::SchemaVersionMismatch, "model version " + std::to_string(version));
  }
  if (feature_dim == 0 || embedding_dim == 0) throw ParseError(1, "model dimensions must be positive");
  WeightMatrix w(feature_dim, embedding_dim);
  const auto bytes = static_cast<std::streamsize>(w.size() * sizeof(double));
  in.read(reinterpret_cast<char*>(w.data()), bytes);
  if (in.gcount() != bytes) throw ParseError(2, "weight block is shorter than the header dimensions");
  if (in.peek() != std::char_traits<char>::eof()) throw ParseError(2, "trailing bytes after the weight block");
  return EmbeddingModel(std::move(w), seed);
}

void validate_instance(const TrainingInstance& instance) {
  if (instance.negatives.empty()) throw Error(ErrorKind::InvalidArgument, "training instance has no negatives");
  if (std::find(instance.negatives.begin(), instance.negatives.end(), instance.positive) != instance.negatives.end()) {
    throw Error(ErrorKind::InvalidArgument, "positive text also appears among the negatives");
  }
}

void SparseGradient::add_to_row(std::uint32_t row, double scale, const Eigen::VectorXd& values) {
  auto it = rows_.find(row);
  if (it == rows_.end()) it = rows_.emplace(row, Eigen::RowVectorXd::Zero(embedding_dim_)).first;
  it->second += scale * values.transpose();
}

void SparseGradient::scale(double factor) {
  for (auto& [row, values] : rows_) values *= factor;
}

double SparseGradient::at(std::size_t row, std::size_t col) const {
  auto it = rows_.find(static_cast<std::uint32_t>(row));
  return it == rows_.end() ? 0.0 : it->second(static_cast<Eigen::Index>(col));
}

WeightMatrix SparseGradient::to_dense() const {
  WeightMatrix dense = WeightMatrix::Zero(feature_dim_, embedding_dim_);
  for (const auto& [row, values] : rows_) dense.row(row) = values;
  return dense;
}

void SparseGradient::apply(WeightMatrix& weights, double step) const {
  for (const auto& [row, values] : rows_) weights.row(row) += step * values;
}

namespace {

// Forward state of one text: normalized features, projection and its norm.
struct Encoded {
  FeatureVector features;
  Eigen::VectorXd unit;
  double norm = 0;
  bool degenerate = true;
};

Encoded encode(const EmbeddingModel& model, const FeatureVector& raw) {
  Encoded e;
  e.features = raw.normalized();
  e.unit = Eigen::VectorXd::Zero(model.embedding_dim());
  if (raw.empty()) return e;
  Eigen::VectorXd z = model.project(e.features);
  e.norm = z.norm();
  if (e.norm == 0) return e;
  e.unit = z / e.norm;
  e.degenerate = false;
  return e;
}

using FeatureCache = std::unordered_map<std::string, FeatureVector>;

const FeatureVector& cached_features(FeatureCache& cache, const std::string& text, std::size_t dim) {
  auto it = cache.find(text);
  if (it == cache.end()) it = cache.emplace(text, featurize(text, dim)).first;
  return it->second;
}

// Loss and gradient for a batch. Texts are encoded once per call; gradients
// flow through u = z/|z| into the rows of W touched by each text.
LossAndGradient batch_loss_and_grad(const EmbeddingModel& model, std::span<const TrainingInstance> batch, double tau,
                                    FeatureCache& cache, bool want_gradient) {
  if (batch.empty()) throw Error(ErrorKind::InvalidArgument, "InfoNCE batch is empty");
  if (!(tau > 0)) throw Error(ErrorKind::InvalidArgument, "temperature must be positive");

  std::map<std::string, Encoded> encoded;
  auto get = [&](const std::string& text) -> Encoded& {
    auto it = encoded.find(text);
    if (it == encoded.end()) {
      it = encoded.emplace(text, encode(model, cached_features(cache, text, model.feature_dim()))).first;
    }
    return it->second;
  };

  const auto d = static_cast<Eigen::Index>(model.embedding_dim());
  std::map<std::string, Eigen::VectorXd> grad_unit;  // dL/du per text
  double total = 0;
  for (const auto& inst : batch) {
    validate_instance(inst);
    const Encoded& q = get(inst.query);
    std::vector<const std::string*> keys{&inst.positive};
    for (const auto& n : inst.negatives) keys.push_back(&n);
    Eigen::VectorXd sims(static_cast<Eigen::Index>(keys.size()));
    for (std::size_t j = 0; j < keys.size(); ++j) sims(static_cast<Eigen::Index>(j)) = q.unit.dot(get(*keys[j]).unit);
    const auto terms = info_nce_terms(sims, tau);
    if (!std::isfinite(terms.loss)) throw Error(ErrorKind::NonFiniteLoss, "InfoNCE loss is not finite");
    total += terms.loss;
    if (!want_gradient) continue;
    auto& gq = grad_unit.try_emplace(inst.query, Eigen::VectorXd::Zero(d)).first->second;
    for (std::size_t j = 0; j < keys.size(); ++j) {
      const double g = terms.grad(static_cast<Eigen::Index>(j));
      const Encoded& k = get(*keys[j]);
      gq += g * k.unit;
      auto& gk = grad_unit.try_emplace(*keys[j], Eigen::VectorXd::Zero(d)).first->second;
      gk += g * q.unit;
    }
  }

  const double scale = 1.0 / static_cast<double>(batch.size());
  LossAndGradient out{total * scale, SparseGradient(model.feature_dim(), model.embedding_dim())};
  if (!want_gradient) return out;
  for (const auto& [text, gu] : grad_unit) {
    const Encoded& e = encoded.at(text);
    if (e.degenerate) continue;
    // Jacobian of z/|z|: (I - u uᵀ)/|z|.
    const Eigen::VectorXd gz = (gu - e.unit * e.unit.dot(gu)) / e.norm;
    for (const auto& [bucket, value] : e.features.entries) out.gradient.add_to_row(bucket, value * scale, gz);
  }
  return out;
}

}  // namespace

double info_nce_loss(const EmbeddingModel& model, std::span<const TrainingInstance> batch, double tau) {
  FeatureCache cache;
  return batch_loss_and_grad(model, batch, tau, cache, false).loss;
}

SparseGradient info_nce_grad(const EmbeddingModel& model, std::span<const TrainingInstance> batch, double tau) {
  return info_nce_loss_and_grad(model, batch, tau).gradient;
}

LossAndGradient info_nce_loss_and_grad(const EmbeddingModel& model, std::span<const TrainingInstance> batch,
                                       double tau) {
  FeatureCache cache;
  return batch_loss_and_grad(model, batch, tau, cache, true);
}

EmbeddingModel train(EmbeddingModel model, std::span<const TrainingInstance> dataset, const TrainConfig& cfg,
                     TrainReport* report) {
  if (cfg.epochs < 0 || cfg.batch_size <= 0 || !(cfg.learning_rate > 0) || !(cfg.tau > 0)) {
    throw Error(ErrorKind::InvalidArgument, "invalid training configuration");
  }
  if (cfg.epochs == 0) return model;
  if (dataset.empty()) throw Error(ErrorKind::InvalidArgument, "training dataset is empty");
  for (const auto& inst : dataset) validate_instance(inst);

  FeatureCache cache;
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(dataset.size());
  std::vector<double> losses;
  std::vector<TrainingInstance> batch;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_total = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      batch.clear();
      for (std::size_t i = start; i < end; ++i) batch.push_back(dataset[order[i]]);
      auto step = batch_loss_and_grad(model, batch, cfg.tau, cache, true);
      epoch_total += step.loss * static_cast<double>(batch.size());
      step.gradient.apply(model.weights(), -cfg.learning_rate);
    }
    losses.push_back(epoch_total / static_cast<double>(dataset.size()));
    if (!std::isfinite(losses.back())) throw Error(ErrorKind::NonFiniteLoss, "epoch loss is not finite");
  }
  if (report) report->epoch_losses = losses;
  if (losses.back() > losses.front()) {
    throw Error(ErrorKind::TrainingDiverged, "final epoch loss " + std::to_string(losses.back()) +
                                                 " exceeds first epoch loss " + std::to_string(losses.front()));
  }
  return model;
}

namespace {

std::vector<std::int64_t> top_k_from_embeddings(const Embedding& query, std::span<const Document> corpus,
                                                const std::vector<Embedding>& doc_embeddings, std::size_t k) {
  std::vector<std::pair<double, std::int64_t>> scored;
  scored.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    scored.emplace_back(query.vector.dot(doc_embeddings[i].vector), corpus[i].id);
  }
  const std::size_t n = std::min(k, scored.size());
  std::partial_sort(scored.begin(), scored.begin() + static_cast<std::ptrdiff_t>(n), scored.end(),
                    [](const auto& a, const auto& b) { return a.first != b.first ? a.first > b.first : a.second < b.second; });
  std::vector<std::int64_t> ids;
  for (std::size_t i = 0; i < n; ++i) ids.push_back(scored[i].second);
  return ids;
}

}  // namespace

std::vector<std::int64_t> dense_top_k(const TextEncoder& encoder, std::string_view query,
                                      std::span<const Document> corpus, std::size_t k) {
  std::vector<Embedding> docs;
  docs.reserve(corpus.size());
  for (const auto& d : corpus) docs.push_back(encoder.embed(d.text));
  return top_k_from_embeddings(encoder.embed(query), corpus, docs, k);
}

double recall_at_k(const TextEncoder& encoder, std::span<const EvalQuery> eval_set, std::span<const Document> corpus,
                   std::size_t k) {
  std::set<std::int64_t> known;
  for (const auto& d : corpus) known.insert(d.id);
  for (const auto& q : eval_set) {
    for (auto id : q.relevant) {
      if (!known.count(id)) throw Error(ErrorKind::UnknownDocId, "relevant id " + std::to_string(id) + " is not in the corpus");
    }
  }
  if (eval_set.empty()) {
    log_warning("EmptyEvalSet: recall@k over an empty eval set is reported as 0");
    return 0.0;
  }
  std::vector<Embedding> docs;
  docs.reserve(corpus.size());
  for (const auto& d : corpus) docs.push_back(encoder.embed(d.text));
  std::size_t hits = 0;
  for (const auto& q : eval_set) {
    const auto top = top_k_from_embeddings(encoder.embed(q.query), corpus, docs, k);
    const bool hit = std::any_of(top.begin(), top.end(), [&](std::int64_t id) {
      return std::find(q.relevant.begin(), q.relevant.end(), id) != q.relevant.end();
    });
    hits += hit ? 1 : 0;
  }
  return static_cast<double>(hits) / static_cast<double>(eval_set.size());
}

}  // namespace dualkb
