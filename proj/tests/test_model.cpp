#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "acnescore/embedding.hpp"
#include "acnescore/head.hpp"
#include "acnescore/scoring.hpp"
#include "acnescore/synthetic.hpp"
#include "test_util.hpp"

using namespace acnescore;
using acnescore::testing::random_image;
using acnescore::testing::TempDir;
using acnescore::testing::throws_code;

namespace {

RandomProjectionBackend small_backend(std::size_t d = 64, int side = 32, int grid = 8) {
  return RandomProjectionBackend({d, side, grid, 0x5eed});
}

std::vector<EmbeddingVector> random_embeddings(std::size_t n, std::size_t d, std::mt19937_64& rng) {
  std::normal_distribution<float> g(0.0F, 1.0F);
  std::vector<EmbeddingVector> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<float> v(d);
    for (auto& x : v) x = g(rng);
    out.emplace_back(std::move(v));
  }
  return out;
}

struct NoLandmarks final : LandmarkBackend {
  std::optional<NamedLandmarks> landmarks(const ImageBuffer&, std::string_view) const override { return std::nullopt; }
};

struct FixedLandmarks final : LandmarkBackend {
  NamedLandmarks lm;
  std::optional<NamedLandmarks> landmarks(const ImageBuffer&, std::string_view) const override { return lm; }
};

struct NoEyes final : EyeBackend {
  std::vector<EyeCandidate> eyes(const ImageBuffer&, std::string_view) const override { return {}; }
};

Head constant_head(std::size_t d, float value) {
  Head h({static_cast<int>(d), 4, 1});
  h.bias(1)(0) = value;
  return h;
}

}  // namespace

// ---------------------------------------------------------------------------
// Embeddings

TEST(RandomProjection, MatchesIndependentOracle) {
  const auto backend = small_backend(64, 32, 8);
  std::mt19937_64 rng(1);
  const auto patch = random_image(32, 32, rng);
  // Oracle: 4x4 block means of 0.299R + 0.587G + 0.114B, over 255.
  std::vector<double> cells(64, 0.0);
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 32; ++x) {
      const double l = 0.299 * patch.at(x, y, 0) + 0.587 * patch.at(x, y, 1) + 0.114 * patch.at(x, y, 2);
      cells[static_cast<std::size_t>((y / 4) * 8 + x / 4)] += l / (255.0 * 16.0);
    }
  }
  const auto e = embed(backend, patch);
  ASSERT_EQ(e.size(), 64U);
  const auto p = backend.projection();
  for (std::size_t r = 0; r < 64; ++r) {
    double acc = 0.0;
    for (std::size_t c = 0; c < 64; ++c) {
      EXPECT_EQ(std::abs(p[r * 64 + c]), 1.0 / 8.0);
      acc += p[r * 64 + c] * cells[c];
    }
    EXPECT_NEAR(e.values[r], acc, 1e-5);
  }
}

TEST(RandomProjection, Deterministic) {
  std::mt19937_64 rng(2);
  const auto patch = random_image(32, 32, rng);
  EXPECT_EQ(embed(small_backend(), patch), embed(small_backend(), patch));
}

TEST(RandomProjection, ZeroPatchGivesZeroVector) {
  const auto e = embed(small_backend(), ImageBuffer(32, 32, 0));
  for (float v : e.values) EXPECT_EQ(v, 0.0F);
}

TEST(RandomProjection, SinglePixelChangesVector) {
  std::mt19937_64 rng(3);
  const auto backend = small_backend();
  for (int i = 0; i < 20; ++i) {
    auto a = random_image(32, 32, rng);
    auto b = a;
    const int x = static_cast<int>(rng() % 32);
    const int y = static_cast<int>(rng() % 32);
    b.set(x, y, {static_cast<std::uint8_t>(a.at(x, y, 0) ^ 0x80), a.at(x, y, 1), a.at(x, y, 2)});
    EXPECT_NE(embed(backend, a), embed(backend, b));
  }
}

TEST(RandomProjection, WrongSizeIsShapeError) {
  EXPECT_TRUE(throws_code(ErrorCode::InputShapeError, [] { embed(small_backend(), ImageBuffer(31, 32)); }));
  EXPECT_TRUE(throws_code(ErrorCode::InputShapeError, [] { embed(RandomProjectionBackend(), ImageBuffer(64, 64)); }));
}

TEST(Onnx, TinyBackboneRuns) {
  OnnxBackend backend({std::filesystem::path(ACNESCORE_TEST_DATA) / "tiny_backbone.onnx", 32});
  EXPECT_EQ(backend.dimension(), 4U);
  std::mt19937_64 rng(4);
  const auto patch = random_image(32, 32, rng);
  const auto a = embed(backend, patch);
  EXPECT_EQ(a, embed(backend, patch));
  for (float v : a.values) {
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_GE(v, 0.0F);  // rectifier then average pooling
  }
  EXPECT_TRUE(throws_code(ErrorCode::InputShapeError, [&] { embed(backend, ImageBuffer(16, 16)); }));
}

TEST(Onnx, MissingOrCorruptArtifact) {
  EXPECT_TRUE(throws_code(ErrorCode::BackendError, [] { OnnxBackend({"/nonexistent/model.onnx", 224}); }));
  TempDir dir("onnx");
  io::write_atomic(dir / "bad.onnx", std::string("garbage bytes"));
  EXPECT_TRUE(throws_code(ErrorCode::BackendError, [&] { OnnxBackend({dir / "bad.onnx", 224}); }));
}

// ---------------------------------------------------------------------------
// Head

TEST(HeadForward, ZeroWeightsGiveOutputBias) {
  std::mt19937_64 rng(5);
  const auto head = constant_head(16, 2.75F);
  for (const auto& e : random_embeddings(10, 16, rng)) EXPECT_EQ(head.forward(e.values), 2.75F);
}

TEST(HeadForward, SingleLayerIsAffine) {
  std::mt19937_64 rng(6);
  Head head({8, 1});
  std::normal_distribution<float> g(0.0F, 1.0F);
  for (int c = 0; c < 8; ++c) head.weight(0)(0, c) = g(rng);
  head.bias(0)(0) = 0.5F;
  for (const auto& e : random_embeddings(20, 8, rng)) {
    double expect = 0.5;
    for (int c = 0; c < 8; ++c) expect += static_cast<double>(head.weight(0)(0, c)) * e.values[static_cast<std::size_t>(c)];
    EXPECT_NEAR(head.forward(e.values), expect, 1e-5);
  }
}

TEST(HeadForward, RectifierHiddenLayer) {
  // One hidden unit: out = 2 * max(0, x0 - x1) + 1.
  Head head({2, 1, 1});
  head.weight(0)(0, 0) = 1.0F;
  head.weight(0)(0, 1) = -1.0F;
  head.weight(1)(0, 0) = 2.0F;
  head.bias(1)(0) = 1.0F;
  EXPECT_EQ(head.forward(std::vector<float>{3.0F, 1.0F}), 5.0F);
  EXPECT_EQ(head.forward(std::vector<float>{1.0F, 3.0F}), 1.0F);
}

TEST(HeadForward, DimensionMismatch) {
  const auto head = constant_head(16, 1.0F);
  EXPECT_TRUE(throws_code(ErrorCode::InputShapeError, [&] { head.forward(std::vector<float>(15)); }));
}

TEST(HeadGradients, MatchFiniteDifferences) {
  using D = RegressionHead<double>;
  std::mt19937_64 rng(7);
  auto head = D::initialized({6, 5, 4, 1}, 99);
  D::Matrix x = D::Matrix::Random(6, 7);
  D::RowVector y = D::RowVector::Random(7);
  D::Gradients g;
  head.loss_and_gradients(x, y, g);
  const double eps = 1e-5;
  for (std::size_t l = 0; l < head.layers(); ++l) {
    for (Eigen::Index r = 0; r < head.weight(l).rows(); ++r) {
      for (Eigen::Index c = 0; c < head.weight(l).cols(); ++c) {
        const double orig = head.weight(l)(r, c);
        head.weight(l)(r, c) = orig + eps;
        const double up = head.loss(x, y);
        head.weight(l)(r, c) = orig - eps;
        const double down = head.loss(x, y);
        head.weight(l)(r, c) = orig;
        const double fd = (up - down) / (2 * eps);
        EXPECT_NEAR(g.weights[l](r, c), fd, 1e-4 * std::max(1.0, std::abs(fd)));
      }
    }
    for (Eigen::Index r = 0; r < head.bias(l).size(); ++r) {
      const double orig = head.bias(l)(r);
      head.bias(l)(r) = orig + eps;
      const double up = head.loss(x, y);
      head.bias(l)(r) = orig - eps;
      const double down = head.loss(x, y);
      head.bias(l)(r) = orig;
      EXPECT_NEAR(g.biases[l](r), (up - down) / (2 * eps), 1e-4 * std::max(1.0, std::abs((up - down) / (2 * eps))));
    }
  }
}

TEST(HeadInit, HeUniformBounds) {
  const auto head = Head::initialized({100, 50, 1}, 3);
  const float bound = std::sqrt(6.0F / 100.0F);
  EXPECT_LE(head.weight(0).cwiseAbs().maxCoeff(), bound);
  EXPECT_GT(head.weight(0).cwiseAbs().maxCoeff(), 0.9F * bound);
  EXPECT_EQ(head.bias(0).cwiseAbs().maxCoeff(), 0.0F);
  EXPECT_EQ(Head::initialized({100, 50, 1}, 3), head);
  EXPECT_FALSE(Head::initialized({100, 50, 1}, 4) == head);
}

// ---------------------------------------------------------------------------
// Training

TEST(Training, ConstantLabelsLearnConstant) {
  std::mt19937_64 rng(8);
  std::vector<std::pair<EmbeddingVector, SeverityLabel>> data;
  for (auto& e : random_embeddings(64, 16, rng)) data.emplace_back(std::move(e), SeverityLabel(4));
  const auto result = train_head(data);
  for (const auto& e : random_embeddings(20, 16, rng)) EXPECT_NEAR(result.head.forward(e.values), 4.0, 0.05);
}

TEST(Training, RealizableTargetsFitClosely) {
  // Targets linear in test-backend embeddings of lesion patches, rescaled
  // onto [1, 5].
  const RandomProjectionBackend backend({256, 64, 16, 0x5eed});
  std::mt19937_64 rng(9);
  std::vector<EmbeddingVector> xs;
  for (int i = 0; i < 256; ++i) {
    xs.push_back(embed(backend, synthetic::lesion_patch(static_cast<int>(rng() % 10), rng).image));
  }
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> w(256);
  for (auto& v : w) v = g(rng);
  std::vector<double> ys;
  for (const auto& x : xs) {
    double y = 0.0;
    for (std::size_t c = 0; c < w.size(); ++c) y += w[c] * x.values[c];
    ys.push_back(y);
  }
  const auto [lo, hi] = std::minmax_element(ys.begin(), ys.end());
  const double a = *lo;
  const double b = *hi;
  for (auto& y : ys) y = 1.0 + 4.0 * (y - a) / (b - a);

  const auto result = train_regression(xs, ys);
  EXPECT_LT(result.train_loss, 0.01);
  // The folded head reproduces the training loss on raw embeddings.
  double sse = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    const double r = result.head.forward(xs[i].values) - ys[i];
    sse += r * r;
  }
  const double n_train = static_cast<double>(result.train_size);
  const double n_val = static_cast<double>(result.validation_size);
  EXPECT_NEAR(sse, result.train_loss * n_train + *result.validation_loss * n_val, 1e-3 * sse + 1e-3);
}

TEST(Training, SameSeedBitwiseIdentical) {
  std::mt19937_64 rng(10);
  const auto xs = random_embeddings(50, 12, rng);
  std::vector<double> ys;
  for (std::size_t i = 0; i < xs.size(); ++i) ys.push_back(1.0 + static_cast<double>(i % 5));
  TrainConfig cfg;
  cfg.hidden = {16, 8};
  cfg.epochs = 5;
  const auto a = train_regression(xs, ys, cfg);
  const auto b = train_regression(xs, ys, cfg);
  EXPECT_EQ(serialize_head(a.head), serialize_head(b.head));
  cfg.seed = 43;
  EXPECT_NE(serialize_head(train_regression(xs, ys, cfg).head), serialize_head(a.head));
}

TEST(Training, FullBatchLossNonIncreasing) {
  std::mt19937_64 rng(11);
  const auto xs = random_embeddings(40, 8, rng);
  std::vector<double> ys;
  std::uniform_real_distribution<double> u(1.0, 5.0);
  for (std::size_t i = 0; i < xs.size(); ++i) ys.push_back(u(rng));
  TrainConfig cfg;
  cfg.hidden = {16, 8};
  cfg.batch_size = xs.size();
  cfg.validation_fraction = 0.0;
  cfg.epochs = 30;
  const auto r = train_regression(xs, ys, cfg);
  for (std::size_t i = 1; i < r.epoch_losses.size(); ++i) {
    EXPECT_LE(r.epoch_losses[i], r.epoch_losses[i - 1] * (1 + 1e-6));
  }
  EXPECT_LT(r.epoch_losses.back(), r.epoch_losses.front());
}

TEST(Training, ValidationSplit) {
  std::mt19937_64 rng(12);
  const auto xs = random_embeddings(100, 8, rng);
  const std::vector<double> ys(100, 2.0);
  TrainConfig cfg;
  cfg.hidden = {8};
  cfg.epochs = 1;
  const auto r = train_regression(xs, ys, cfg);
  EXPECT_EQ(r.train_size, 90U);
  EXPECT_EQ(r.validation_size, 10U);
  EXPECT_TRUE(r.validation_loss.has_value());
}

TEST(Training, EmptyDataset) {
  EXPECT_TRUE(throws_code(ErrorCode::EmptyDataset, [] { train_head({}); }));
}

TEST(Training, DivergenceReportsStep) {
  std::mt19937_64 rng(13);
  auto xs = random_embeddings(32, 8, rng);
  for (auto& x : xs) {
    for (auto& v : x.values) v *= 1e3F;
  }
  std::vector<double> ys(32);
  for (std::size_t i = 0; i < ys.size(); ++i) ys[i] = i % 2 == 0 ? 1.0 : 5.0;
  TrainConfig cfg;
  cfg.hidden = {16, 16};
  cfg.learning_rate = 10.0;
  cfg.validation_fraction = 0.0;
  try {
    train_regression(xs, ys, cfg);
    FAIL() << "expected divergence";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::DivergenceError);
    EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
  }
}

// ---------------------------------------------------------------------------
// Scoring

TEST(Discretize, Boundaries) {
  const std::vector<std::pair<double, int>> cases = {{1.0, 1}, {1.49, 1}, {1.5, 2}, {2.49, 2}, {2.5, 3},
                                                     {3.49, 3}, {3.5, 4}, {4.49, 4}, {4.5, 5}, {5.0, 5}};
  for (const auto& [s, c] : cases) EXPECT_EQ(discretize(SeverityScore::clamped(s)).value(), c) << s;
}

TEST(Discretize, Monotone) {
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<double> u(1.0, 5.0);
  for (int i = 0; i < 10000; ++i) {
    double a = u(rng);
    double b = u(rng);
    if (a > b) std::swap(a, b);
    EXPECT_LE(discretize(clamp_score(a)).value(), discretize(clamp_score(b)).value());
  }
}

TEST(CombinePatchScores, MeanThenClamp) {
  EXPECT_DOUBLE_EQ(combine_patch_scores({2.0, 3.0, 4.0, 3.0}).value(), 3.0);
  EXPECT_DOUBLE_EQ(combine_patch_scores({6.0, 6.0, 6.0, 6.0}).value(), 5.0);
  EXPECT_DOUBLE_EQ(combine_patch_scores({0.0, 3.0}).value(), 1.5);
  EXPECT_TRUE(throws_code(ErrorCode::EmptyInput, [] { combine_patch_scores({}); }));
}

TEST(CombinePatchScores, PermutationInvariantExactly) {
  std::mt19937_64 rng(15);
  std::uniform_real_distribution<double> u(0.0, 6.0);
  for (int i = 0; i < 1000; ++i) {
    std::vector<double> v(2 + rng() % 3);
    for (auto& x : v) x = u(rng);
    const double ref = combine_patch_scores(v).value();
    std::shuffle(v.begin(), v.end(), rng);
    EXPECT_EQ(combine_patch_scores(v).value(), ref);
  }
}

TEST(ScoreImage, ConstantHeadGivesItsValue) {
  const auto face = synthetic::frontal_face();
  FixedLandmarks lm;
  lm.lm = face.landmarks;
  NoEyes eyes;
  const auto backend = small_backend();
  const auto result = score_image(face.image, lm, eyes, backend, constant_head(64, 3.2F), "face");
  ASSERT_EQ(result.patch_scores.size(), 4U);
  EXPECT_NEAR(result.final_score.value(), 3.2, 1e-6);
  EXPECT_EQ(result.severity.value(), 3);
  EXPECT_EQ(result.image_id, "face");
  const auto high = score_image(face.image, lm, eyes, backend, constant_head(64, 6.0F));
  EXPECT_EQ(high.final_score.value(), 5.0);
  EXPECT_EQ(high.patch_scores[0].raw, 6.0);
}

TEST(ScoreImage, NoFace) {
  NoLandmarks lm;
  NoEyes eyes;
  const auto backend = small_backend();
  EXPECT_TRUE(throws_code(ErrorCode::NoFaceFound,
                          [&] { score_image(synthetic::blank(), lm, eyes, backend, constant_head(64, 3.0F)); }));
}

TEST(ScoreImage, DimensionMismatchNamesBoth) {
  auto lm = std::make_shared<NoLandmarks>();
  auto eyes = std::make_shared<NoEyes>();
  auto backend = std::make_shared<RandomProjectionBackend>(RandomProjectionBackend::Options{512, 32, 8, 1});
  try {
    ScoringPipeline p(lm, eyes, backend, constant_head(256, 3.0F));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::InputShapeError);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("256"), std::string::npos);
    EXPECT_NE(msg.find("512"), std::string::npos);
  }
}

TEST(ScoreImage, PipelineMatchesFreeFunction) {
  const auto face = synthetic::frontal_face(512, 6, 3);
  auto lm = std::make_shared<FixedLandmarks>();
  lm->lm = face.landmarks;
  auto eyes = std::make_shared<NoEyes>();
  auto backend = std::make_shared<RandomProjectionBackend>(small_backend());
  const auto head = Head::initialized({64, 16, 1}, 5);
  ScoringPipeline pipeline(lm, eyes, backend, head);
  const auto a = pipeline.score(face.image, "f");
  const auto b = score_image(face.image, *lm, *eyes, *backend, head, "f");
  EXPECT_EQ(a.final_score, b.final_score);
  EXPECT_NE(pipeline.version().find(pipeline.version_of_head()), std::string::npos);
}

// ---------------------------------------------------------------------------
// Persistence

TEST(HeadFile, RoundTrip) {
  TempDir dir("head");
  const auto head = Head::initialized({32, 16, 8, 1}, 21);
  save_head(head, dir / "h.bin");
  const auto loaded = load_head(dir / "h.bin");
  EXPECT_EQ(loaded, head);
  std::mt19937_64 rng(16);
  for (const auto& e : random_embeddings(10, 32, rng)) EXPECT_EQ(loaded.forward(e.values), head.forward(e.values));
  EXPECT_EQ(head_version(loaded), head_version(head));
}

TEST(HeadFile, LayoutHeader) {
  const auto bytes = serialize_head(Head::initialized({3, 2, 1}, 1));
  // magic, version, d, n_layers, 3 widths, activation, 11 floats, checksum
  EXPECT_EQ(bytes.size(), 4U + 4 + 4 + 4 + 12 + 4 + (3 * 2 + 2 + 2 + 1) * 4 + 8);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "ACNH");
  EXPECT_EQ(bytes[4], 1);
  EXPECT_EQ(bytes[8], 3);
  EXPECT_EQ(bytes[12], 2);
}

TEST(HeadFile, TruncatedOrCorrupt) {
  auto bytes = serialize_head(Head::initialized({8, 4, 1}, 2));
  for (std::size_t cut : {std::size_t{3}, std::size_t{10}, bytes.size() - 1}) {
    std::vector<std::uint8_t> t(bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(cut));
    EXPECT_TRUE(throws_code(ErrorCode::ModelFormatError, [&] { deserialize_head(t); })) << cut;
  }
  auto flipped = bytes;
  flipped[40] ^= 0x01;
  EXPECT_TRUE(throws_code(ErrorCode::ModelFormatError, [&] { deserialize_head(flipped); }));
  auto versioned = bytes;
  versioned[4] = 2;
  try {
    deserialize_head(versioned);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::ModelFormatError);
    EXPECT_NE(std::string(e.what()).find("version 2"), std::string::npos);
  }
  EXPECT_TRUE(throws_code(ErrorCode::IoError, [] { load_head("/nonexistent/head.bin"); }));
}

TEST(HeadFile, VersionTracksContents) {
  auto head = Head::initialized({8, 4, 1}, 2);
  const auto v = head_version(head);
  EXPECT_EQ(v.substr(0, 3), "v1-");
  EXPECT_EQ(v.size(), 15U);
  head.bias(1)(0) += 1.0F;
  EXPECT_NE(head_version(head), v);
}
