#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "acnescore/core.hpp"
#include "acnescore/embedding.hpp"
#include "acnescore/io.hpp"

namespace acnescore {

enum class Activation : std::uint32_t { Relu = 1 };

inline const std::vector<int> kHiddenWidths = {1024, 512, 256};

/// Dense regression network: widths [d, h1, ..., hk, 1], rectifier between
/// layers, identity output. Scalar is float for production heads and double
/// where finite-difference checks need the precision.
template <typename Scalar>
class RegressionHead {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
  using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

  struct Gradients {
    std::vector<Matrix> weights;
    std::vector<Vector> biases;
  };

  RegressionHead() = default;

  /// Zero-initialized head with the given layer widths.
  explicit RegressionHead(std::vector<int> widths, Activation act = Activation::Relu)
      : widths_(std::move(widths)), activation_(act) {
    if (widths_.size() < 2 || widths_.back() != 1) {
      throw Error(ErrorCode::InputShapeError, "head widths must end in a single output");
    }
    for (int w : widths_) {
      if (w < 1) throw Error(ErrorCode::InputShapeError, "layer widths must be positive");
    }
    for (std::size_t l = 0; l + 1 < widths_.size(); ++l) {
      weights_.push_back(Matrix::Zero(widths_[l + 1], widths_[l]));
      biases_.push_back(Vector::Zero(widths_[l + 1]));
    }
  }

  /// He-uniform weights, bound sqrt(6 / fan_in), zero biases, drawn from a
  /// 64-bit Mersenne Twister so the draw is identical across platforms.
  static RegressionHead initialized(std::vector<int> widths, std::uint64_t seed) {
    RegressionHead head(std::move(widths));
    std::mt19937_64 rng(seed);
    for (auto& w : head.weights_) {
      const double bound = std::sqrt(6.0 / static_cast<double>(w.cols()));
      for (Eigen::Index r = 0; r < w.rows(); ++r) {
        for (Eigen::Index c = 0; c < w.cols(); ++c) {
          const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
          w(r, c) = static_cast<Scalar>((2.0 * u - 1.0) * bound);
        }
      }
    }
    return head;
  }

  std::size_t input_dim() const { return widths_.empty() ? 0 : static_cast<std::size_t>(widths_.front()); }
  const std::vector<int>& widths() const { return widths_; }
  Activation activation() const { return activation_; }
  std::size_t layers() const { return weights_.size(); }

  Matrix& weight(std::size_t l) { return weights_[l]; }
  const Matrix& weight(std::size_t l) const { return weights_[l]; }
  Vector& bias(std::size_t l) { return biases_[l]; }
  const Vector& bias(std::size_t l) const { return biases_[l]; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < layers(); ++l) n += static_cast<std::size_t>(weights_[l].size() + biases_[l].size());
    return n;
  }

  /// Raw (unclamped) outputs for a batch; inputs are columns of `x`.
  RowVector forward_batch(const Matrix& x) const {
    check_input_rows(x.rows());
    Matrix a = x;
    for (std::size_t l = 0; l < layers(); ++l) {
      Matrix z = (weights_[l] * a).colwise() + biases_[l];
      a = l + 1 < layers() ? Matrix(z.cwiseMax(Scalar(0))) : z;
    }
    return a.row(0);
  }

  Scalar forward(std::span<const float> e) const {
    check_input_rows(static_cast<Eigen::Index>(e.size()));
    Matrix x(static_cast<Eigen::Index>(e.size()), 1);
    for (std::size_t i = 0; i < e.size(); ++i) x(static_cast<Eigen::Index>(i), 0) = static_cast<Scalar>(e[i]);
    return forward_batch(x)(0);
  }

  /// Mean squared error over the batch and its gradient by backpropagation.
  Scalar loss_and_gradients(const Matrix& x, const RowVector& y, Gradients& grads) const {
    check_input_rows(x.rows());
    const std::size_t n_layers = layers();
    std::vector<Matrix> pre(n_layers);
    std::vector<Matrix> act(n_layers + 1);
    act[0] = x;
    for (std::size_t l = 0; l < n_layers; ++l) {
      pre[l] = (weights_[l] * act[l]).colwise() + biases_[l];
      act[l + 1] = l + 1 < n_layers ? Matrix(pre[l].cwiseMax(Scalar(0))) : pre[l];
    }
    const auto n = static_cast<Scalar>(x.cols());
    const RowVector residual = act[n_layers].row(0) - y;
    const Scalar loss = residual.squaredNorm() / n;

    grads.weights.resize(n_layers);
    grads.biases.resize(n_layers);
    Matrix delta = (Scalar(2) / n) * residual;
    for (std::size_t l = n_layers; l-- > 0;) {
      grads.weights[l].noalias() = delta * act[l].transpose();
      grads.biases[l] = delta.rowwise().sum();
      if (l > 0) {
        Matrix back = weights_[l].transpose() * delta;
        delta = back.cwiseProduct((pre[l - 1].array() > Scalar(0)).template cast<Scalar>().matrix());
      }
    }
    return loss;
  }

  Scalar loss(const Matrix& x, const RowVector& y) const {
    return (forward_batch(x) - y).squaredNorm() / static_cast<Scalar>(x.cols());
  }

  void apply(const Gradients& g, Scalar learning_rate) {
    for (std::size_t l = 0; l < layers(); ++l) {
      weights_[l].noalias() -= learning_rate * g.weights[l];
      biases_[l].noalias() -= learning_rate * g.biases[l];
    }
  }

  template <typename Other>
  RegressionHead<Other> cast() const {
    RegressionHead<Other> out(widths_, activation_);
    for (std::size_t l = 0; l < layers(); ++l) {
      out.weight(l) = weights_[l].template cast<Other>();
      out.bias(l) = biases_[l].template cast<Other>();
    }
    return out;
  }

  friend bool operator==(const RegressionHead& a, const RegressionHead& b) {
    if (a.widths_ != b.widths_ || a.activation_ != b.activation_) return false;
    for (std::size_t l = 0; l < a.layers(); ++l) {
      if (a.weights_[l] != b.weights_[l] || a.biases_[l] != b.biases_[l]) return false;
    }
    return true;
  }

 private:
  void check_input_rows(Eigen::Index rows) const {
    if (rows != static_cast<Eigen::Index>(input_dim())) {
      throw Error(ErrorCode::InputShapeError, "embedding has dimension " + std::to_string(rows) +
                                                  ", head expects " + std::to_string(input_dim()));
    }
  }

  std::vector<int> widths_;
  Activation activation_ = Activation::Relu;
  std::vector<Matrix> weights_;
  std::vector<Vector> biases_;
};

using Head = RegressionHead<float>;

// ---------------------------------------------------------------------------
// Training

struct TrainConfig {
  double learning_rate = 1e-2;
  std::size_t batch_size = 32;
  std::size_t epochs = 50;
  std::uint64_t seed = 42;
  double validation_fraction = 0.1;
  std::vector<int> hidden = kHiddenWidths;
  // Train on per-dimension standardized embeddings and fold the scaling into
  // the first layer afterwards, so the saved head still takes raw vectors.
  bool standardize_inputs = true;
  // Start the output layer as the mean predictor: zero weights, bias at the
  // mean training target.
  bool init_output_at_mean = true;

  void validate() const {
    if (!(learning_rate > 0.0) || batch_size == 0 || epochs == 0) {
      throw Error(ErrorCode::ConfigError, "learning rate, batch size and epochs must be positive");
    }
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
      throw Error(ErrorCode::ConfigError, "validation fraction must lie in [0, 1)");
    }
  }
};

struct TrainResult {
  Head head;
  double train_loss = 0.0;
  std::optional<double> validation_loss;
  std::vector<double> epoch_losses;  // full training-set MSE after each epoch
  std::size_t train_size = 0;
  std::size_t validation_size = 0;
};

namespace detail {

inline void seeded_shuffle(std::vector<std::size_t>& v, std::mt19937_64& rng) {
  for (std::size_t i = v.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(v[i - 1], v[j]);
  }
}

inline Head::Matrix gather_columns(const std::vector<EmbeddingVector>& xs, std::span<const std::size_t> idx) {
  const auto d = static_cast<Eigen::Index>(xs[idx.front()].size());
  Head::Matrix m(d, static_cast<Eigen::Index>(idx.size()));
  for (std::size_t c = 0; c < idx.size(); ++c) {
    const auto& v = xs[idx[c]].values;
    for (Eigen::Index r = 0; r < d; ++r) m(r, static_cast<Eigen::Index>(c)) = v[static_cast<std::size_t>(r)];
  }
  return m;
}

inline Head::RowVector gather_targets(std::span<const double> ys, std::span<const std::size_t> idx) {
  Head::RowVector t(static_cast<Eigen::Index>(idx.size()));
  for (std::size_t c = 0; c < idx.size(); ++c) t(static_cast<Eigen::Index>(c)) = static_cast<float>(ys[idx[c]]);
  return t;
}

struct Standardizer {
  std::vector<double> mean;
  std::vector<double> scale;  // 1 / std, or 1 for constant dimensions

  static Standardizer identity(std::size_t d) { return {std::vector<double>(d, 0.0), std::vector<double>(d, 1.0)}; }

  static Standardizer fit(const std::vector<EmbeddingVector>& xs, std::span<const std::size_t> idx) {
    const std::size_t d = xs[idx.front()].size();
    Standardizer s{std::vector<double>(d, 0.0), std::vector<double>(d, 1.0)};
    std::vector<double> m2(d, 0.0);
    std::size_t n = 0;
    for (auto i : idx) {
      ++n;
      for (std::size_t c = 0; c < d; ++c) {
        const double x = xs[i].values[c];
        const double delta = x - s.mean[c];
        s.mean[c] += delta / static_cast<double>(n);
        m2[c] += delta * (x - s.mean[c]);
      }
    }
    for (std::size_t c = 0; c < d; ++c) {
      const double sd = std::sqrt(m2[c] / static_cast<double>(n));
      s.scale[c] = sd > 1e-12 * std::max(1.0, std::abs(s.mean[c])) ? 1.0 / sd : 1.0;
    }
    return s;
  }

  Head::Matrix apply(Head::Matrix x) const {
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
      const auto c = static_cast<std::size_t>(r);
      x.row(r) = ((x.row(r).template cast<double>().array() - mean[c]) * scale[c]).template cast<float>().matrix();
    }
    return x;
  }

  /// Rewrites the first layer so it accepts unstandardized input:
  /// W' = W diag(scale), b' = b - W' mean.
  void fold_into(Head& head) const {
    auto& w = head.weight(0);
    auto& b = head.bias(0);
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      double shift = 0.0;
      for (Eigen::Index c = 0; c < w.cols(); ++c) {
        const auto k = static_cast<std::size_t>(c);
        const double folded = static_cast<double>(w(r, c)) * scale[k];
        w(r, c) = static_cast<float>(folded);
        shift += folded * mean[k];
      }
      b(r) = static_cast<float>(static_cast<double>(b(r)) - shift);
    }
  }
};

}  // namespace detail

/// Minibatch gradient descent on mean squared error against real targets.
/// The split, the per-epoch shuffles, and the initialization all derive from
/// cfg.seed; batches are visited sequentially.
inline TrainResult train_regression(const std::vector<EmbeddingVector>& xs, std::span<const double> ys,
                                    const TrainConfig& cfg = {}) {
  cfg.validate();
  if (xs.empty()) throw Error(ErrorCode::EmptyDataset, "no training examples");
  if (xs.size() != ys.size()) throw Error(ErrorCode::ShapeError, "features and targets differ in length");
  const std::size_t d = xs.front().size();
  for (const auto& x : xs) {
    if (x.size() != d) throw Error(ErrorCode::InputShapeError, "embeddings differ in dimension");
  }

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(xs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  detail::seeded_shuffle(order, rng);
  auto n_val = static_cast<std::size_t>(std::floor(cfg.validation_fraction * static_cast<double>(xs.size())));
  if (n_val >= xs.size()) n_val = xs.size() - 1;
  std::vector<std::size_t> train_idx(order.begin(), order.end() - static_cast<std::ptrdiff_t>(n_val));
  const std::vector<std::size_t> val_idx(order.end() - static_cast<std::ptrdiff_t>(n_val), order.end());

  std::vector<int> widths{static_cast<int>(d)};
  widths.insert(widths.end(), cfg.hidden.begin(), cfg.hidden.end());
  widths.push_back(1);
  TrainResult result;
  result.head = Head::initialized(widths, rng());
  if (cfg.init_output_at_mean) {
    double mean = 0.0;
    for (auto i : train_idx) mean += ys[i];
    const std::size_t last = result.head.layers() - 1;
    result.head.weight(last).setZero();
    result.head.bias(last)(0) = static_cast<float>(mean / static_cast<double>(train_idx.size()));
  }

  const auto standardizer =
      cfg.standardize_inputs ? detail::Standardizer::fit(xs, train_idx) : detail::Standardizer::identity(d);
  const Head::Matrix train_x = standardizer.apply(detail::gather_columns(xs, train_idx));
  const Head::RowVector train_y = detail::gather_targets(ys, train_idx);
  Head::Gradients grads;
  std::size_t step = 0;
  std::vector<std::size_t> epoch_order(train_idx.size());
  std::iota(epoch_order.begin(), epoch_order.end(), std::size_t{0});
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    detail::seeded_shuffle(epoch_order, rng);
    for (std::size_t start = 0; start < epoch_order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(start + cfg.batch_size, epoch_order.size());
      Head::Matrix bx(train_x.rows(), static_cast<Eigen::Index>(end - start));
      Head::RowVector by(static_cast<Eigen::Index>(end - start));
      for (std::size_t c = start; c < end; ++c) {
        bx.col(static_cast<Eigen::Index>(c - start)) = train_x.col(static_cast<Eigen::Index>(epoch_order[c]));
        by(static_cast<Eigen::Index>(c - start)) = train_y(static_cast<Eigen::Index>(epoch_order[c]));
      }
      const float loss = result.head.loss_and_gradients(bx, by, grads);
      if (!std::isfinite(loss)) {
        throw Error(ErrorCode::DivergenceError, "non-finite loss at step " + std::to_string(step));
      }
      result.head.apply(grads, static_cast<float>(cfg.learning_rate));
      ++step;
    }
    const double epoch_loss = result.head.loss(train_x, train_y);
    if (!std::isfinite(epoch_loss)) {
      throw Error(ErrorCode::DivergenceError, "non-finite loss at step " + std::to_string(step));
    }
    result.epoch_losses.push_back(epoch_loss);
  }
  if (cfg.standardize_inputs) standardizer.fold_into(result.head);
  result.train_loss = result.epoch_losses.back();
  result.train_size = train_idx.size();
  result.validation_size = val_idx.size();
  if (!val_idx.empty()) {
    result.validation_loss = result.head.loss(detail::gather_columns(xs, val_idx), detail::gather_targets(ys, val_idx));
  }
  return result;
}

/// Regression on numeric severity grades.
inline TrainResult train_head(const std::vector<std::pair<EmbeddingVector, SeverityLabel>>& features,
                              const TrainConfig& cfg = {}) {
  if (features.empty()) throw Error(ErrorCode::EmptyDataset, "no training examples");
  std::vector<EmbeddingVector> xs;
  std::vector<double> ys;
  xs.reserve(features.size());
  ys.reserve(features.size());
  for (const auto& [e, label] : features) {
    xs.push_back(e);
    ys.push_back(label.value());
  }
  return train_regression(xs, ys, cfg);
}

// ---------------------------------------------------------------------------
// Persistence
//
// Little-endian layout:
//   "ACNH"            4-byte magic
//   u32 version       = 1
//   u32 d             input dimension
//   u32 n_layers      number of affine layers
//   u32 widths[n_layers + 1]
//   u32 activation    1 = rectifier
//   per layer: f32 weights[out][in] row-major, then f32 bias[out]
//   u64 checksum      FNV-1a of every preceding byte

inline constexpr std::uint32_t kHeadFormatVersion = 1;

namespace detail {

inline void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
inline void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_++]) << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::size_t position() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (bytes_.size() - pos_ < n) throw Error(ErrorCode::ModelFormatError, "head file is truncated");
  }
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::vector<std::uint8_t> serialize_head(const Head& head) {
  std::vector<std::uint8_t> out = {'A', 'C', 'N', 'H'};
  detail::put_u32(out, kHeadFormatVersion);
  detail::put_u32(out, static_cast<std::uint32_t>(head.input_dim()));
  detail::put_u32(out, static_cast<std::uint32_t>(head.layers()));
  for (int w : head.widths()) detail::put_u32(out, static_cast<std::uint32_t>(w));
  detail::put_u32(out, static_cast<std::uint32_t>(head.activation()));
  for (std::size_t l = 0; l < head.layers(); ++l) {
    const auto& w = head.weight(l);
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) detail::put_u32(out, std::bit_cast<std::uint32_t>(w(r, c)));
    }
    const auto& b = head.bias(l);
    for (Eigen::Index r = 0; r < b.size(); ++r) detail::put_u32(out, std::bit_cast<std::uint32_t>(b(r)));
  }
  detail::put_u64(out, fnv1a64(out));
  return out;
}

inline Head deserialize_head(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || bytes[0] != 'A' || bytes[1] != 'C' || bytes[2] != 'N' || bytes[3] != 'H') {
    throw Error(ErrorCode::ModelFormatError, "not a head file (bad magic)");
  }
  detail::Reader in(bytes.subspan(4));
  const auto version = in.u32();
  if (version != kHeadFormatVersion) {
    throw Error(ErrorCode::ModelFormatError, "head format version " + std::to_string(version) + ", expected " +
                                                 std::to_string(kHeadFormatVersion));
  }
  const auto d = in.u32();
  const auto n_layers = in.u32();
  if (n_layers == 0 || n_layers > 64) throw Error(ErrorCode::ModelFormatError, "implausible layer count");
  std::vector<int> widths;
  for (std::uint32_t i = 0; i <= n_layers; ++i) {
    const auto w = in.u32();
    if (w == 0 || w > (1U << 24)) throw Error(ErrorCode::ModelFormatError, "implausible layer width");
    widths.push_back(static_cast<int>(w));
  }
  if (static_cast<std::uint32_t>(widths.front()) != d || widths.back() != 1) {
    throw Error(ErrorCode::ModelFormatError, "layer widths inconsistent with header");
  }
  if (in.u32() != static_cast<std::uint32_t>(Activation::Relu)) {
    throw Error(ErrorCode::ModelFormatError, "unknown activation tag");
  }
  std::size_t expected = 0;
  for (std::uint32_t l = 0; l < n_layers; ++l) {
    expected += (static_cast<std::size_t>(widths[l]) + 1) * static_cast<std::size_t>(widths[l + 1]) * 4;
  }
  if (in.remaining() != expected + 8) throw Error(ErrorCode::ModelFormatError, "head file is truncated or padded");

  Head head(widths);
  for (std::size_t l = 0; l < head.layers(); ++l) {
    auto& w = head.weight(l);
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = in.f32();
    }
    auto& b = head.bias(l);
    for (Eigen::Index r = 0; r < b.size(); ++r) b(r) = in.f32();
  }
  const std::size_t body = 4 + in.position();
  if (in.u64() != fnv1a64(bytes.first(body))) throw Error(ErrorCode::ModelFormatError, "head checksum mismatch");
  return head;
}

inline void save_head(const Head& head, const std::filesystem::path& path) {
  io::write_atomic(path, serialize_head(head));
}

inline Head load_head(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw Error(ErrorCode::IoError, "no such head file " + path.string());
  return deserialize_head(io::read_bytes(path));
}

/// Short identifier of a head's exact contents.
inline std::string head_version(const Head& head) {
  return "v" + std::to_string(kHeadFormatVersion) + "-" + hex64(fnv1a64(serialize_head(head))).substr(0, 12);
}

}  // namespace acnescore
