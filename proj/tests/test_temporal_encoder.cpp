#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <random>

#include "oti/temporal_encoder.hpp"
#include "support/oracles.hpp"

namespace {

using oti::EncoderConfig;
using oti::Tensor;
using oti::TemporalParams;
using oti::Vector;

Tensor random_frames(std::mt19937_64& gen, std::size_t T, std::size_t d) {
  return Tensor({T, d}, oracle::gaussian_vector(gen, T * d));
}

TemporalParams random_params(const EncoderConfig& config, std::uint64_t seed) {
  auto stream = oti::seeded_stream(seed, "test/params");
  return oti::init_params(config, stream);
}

// Non-trivial layer norm scales and biases so every tensor matters.
TemporalParams perturbed_params(const EncoderConfig& config, std::uint64_t seed, double scale) {
  TemporalParams p = random_params(config, seed);
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> n(0.0, scale);
  for (Tensor& t : p.tensors)
    for (double& v : t.data()) v += n(gen);
  return p;
}

std::map<std::string, oracle::Vec> by_name(const TemporalParams& p) {
  std::map<std::string, oracle::Vec> out;
  for (std::size_t i = 0; i < p.count(); ++i) out[p.names[i]] = p.tensors[i].values();
  return out;
}

oracle::Mat rows_of(const Tensor& t) { return oracle::to_mat(t.values(), t.rows(), t.cols()); }

TEST(EncoderConfig, Validation) {
  EncoderConfig c;
  c.dim = 10;
  c.heads = 4;
  EXPECT_THROW(c.validate(), oti::ParameterError);
  c.heads = 0;
  EXPECT_THROW(c.validate(), oti::ParameterError);
  c = EncoderConfig{};
  c.max_frames = 0;
  EXPECT_THROW(c.validate(), oti::ParameterError);
  EXPECT_NO_THROW(EncoderConfig{}.validate());
}

TEST(InitParams, LayoutAndInitialValues) {
  EncoderConfig c;
  c.dim = 16;
  c.layers = 2;
  const TemporalParams p = random_params(c, 1);
  EXPECT_EQ(p.count(), 1u + 2u * 12u);
  EXPECT_EQ(p.names.front(), "pos");
  EXPECT_EQ(p.tensors.front().shape(), (std::vector<std::size_t>{8, 16}));
  for (std::size_t i = 0; i < p.count(); ++i) {
    if (p.names[i].ends_with("gamma")) {
      for (double v : p.tensors[i].data()) EXPECT_EQ(v, 1.0);
    }
    if (p.names[i].ends_with("beta") || p.names[i].ends_with(".b1") || p.names[i].ends_with(".b2")) {
      for (double v : p.tensors[i].data()) EXPECT_EQ(v, 0.0);
    }
  }
  oracle::Vec w = p.tensors[p.index_of("layer0.ffn.w1").value()].values();
  EXPECT_NEAR(oracle::population_stats(w).std, 0.02, 0.002);
}

TEST(InitParams, DeterministicPerSeed) {
  EncoderConfig c;
  c.dim = 16;
  EXPECT_EQ(random_params(c, 5), random_params(c, 5));
  EXPECT_NE(random_params(c, 5), random_params(c, 6));
}

TEST(EncodeFrames, EmptyStackWithoutPositionsIsIdentity) {
  EncoderConfig c;
  c.dim = 16;
  c.layers = 0;
  c.positional = false;
  std::mt19937_64 gen(1);
  const Tensor x = random_frames(gen, 5, 16);
  EXPECT_EQ(oti::encode_frames(random_params(c, 1), x), x);
}

TEST(EncodeFrames, ZeroInitialisedOutputsPassInputThrough) {
  EncoderConfig c;
  c.dim = 16;
  c.layers = 1;
  c.positional = false;
  c.zero_init_output = true;
  std::mt19937_64 gen(2);
  const Tensor x = random_frames(gen, 6, 16);
  EXPECT_EQ(oti::encode_frames(random_params(c, 2), x), x);
}

TEST(EncodeFrames, ShapeContract) {
  EncoderConfig c;
  c.dim = 16;
  std::mt19937_64 gen(3);
  const Tensor y = oti::encode_frames(random_params(c, 3), random_frames(gen, 8, 16));
  EXPECT_EQ(y.shape(), (std::vector<std::size_t>{8, 16}));
  EXPECT_TRUE(y.all_finite());
}

TEST(EncodeFrames, ShapeMismatchIsAShapeError) {
  EncoderConfig c;
  c.dim = 16;
  std::mt19937_64 gen(4);
  const TemporalParams p = random_params(c, 4);
  EXPECT_THROW(oti::encode_frames(p, random_frames(gen, 4, 12)), oti::ShapeError);
  EXPECT_THROW(oti::encode_frames(p, random_frames(gen, 9, 16)), oti::ShapeError);
  TemporalParams broken = p;
  broken.tensors[1] = Tensor({3}, 1.0);
  EXPECT_THROW(oti::encode_frames(broken, random_frames(gen, 4, 16)), oti::ShapeError);
}

TEST(EncodeFrames, MatchesReferenceTransformer) {
  for (std::size_t layers : {1u, 2u}) {
    for (std::size_t heads : {1u, 4u}) {
      EncoderConfig c;
      c.dim = 16;
      c.layers = layers;
      c.heads = heads;
      const TemporalParams p = perturbed_params(c, 10 + layers * heads, 0.3);
      std::mt19937_64 gen(layers * 7 + heads);
      const Tensor x = random_frames(gen, 7, 16);
      const Tensor y = oti::encode_frames(p, x);
      const oracle::Mat ref = oracle::encoder_forward(by_name(p), rows_of(x), layers, heads, true);
      for (std::size_t t = 0; t < 7; ++t)
        for (std::size_t j = 0; j < 16; ++j) EXPECT_NEAR(y(t, j), ref[t][j], 1e-12);
    }
  }
}

TEST(EncodeFrames, Deterministic) {
  EncoderConfig c;
  c.dim = 16;
  std::mt19937_64 gen(5);
  const Tensor x = random_frames(gen, 8, 16);
  const TemporalParams p = perturbed_params(c, 5, 0.2);
  EXPECT_EQ(oti::encode_frames(p, x), oti::encode_frames(p, x));
}

// Analytic gradients of a scalar readout of encode_frames against central
// differences of the reference transformer.
TEST(EncodeFrames, GradientsMatchFiniteDifferencesOfReference) {
  for (bool positional : {true, false}) {
    EncoderConfig c;
    c.dim = 16;
    c.layers = 1;
    c.heads = 4;
    c.max_frames = 4;
    c.positional = positional;
    const TemporalParams p = perturbed_params(c, 21, 0.3);
    std::mt19937_64 gen(22);
    const Tensor x = random_frames(gen, 4, 16);
    const oracle::Vec readout = oracle::gaussian_vector(gen, 4 * 16);

    auto fn = [&](oti::ad::Graph& g, std::span<const oti::ad::Var> vars) {
      auto y = oti::encode_frames(c, vars, g.constant_ref(x));
      return oti::ad::mean_all(oti::ad::hadamard(y, g.constant(Tensor({4, 16}, readout))));
    };
    const auto analytic = oti::ad::evaluate_with_gradients(fn, p.tensors);

    for (std::size_t k = 0; k < p.count(); ++k) {
      auto scalar = [&](const oracle::Vec& flat) {
        auto named = by_name(p);
        named[p.names[k]] = flat;
        const oracle::Mat y = oracle::encoder_forward(named, rows_of(x), 1, 4, positional);
        long double s = 0.0L;
        for (std::size_t t = 0; t < 4; ++t)
          for (std::size_t j = 0; j < 16; ++j) s += y[t][j] * readout[t * 16 + j];
        return static_cast<double>(s / 64.0L);
      };
      const Tensor numeric(p.tensors[k].shape(), oracle::finite_difference(scalar, p.tensors[k].values()));
      EXPECT_LT(oti::ad::relative_error(analytic.grads[k], numeric), 1e-4) << p.names[k];
    }
  }
}

TEST(PoolAvg, Examples) {
  const Vector v{0.5, -1.0, 2.0};
  Tensor constant({4, 3});
  for (std::size_t t = 0; t < 4; ++t) std::copy(v.begin(), v.end(), constant.row_span(t).begin());
  EXPECT_EQ(oti::pool_avg(constant), v);
  EXPECT_EQ(oti::pool_avg(Tensor({2, 2}, Vector{0, 2, 2, 0})), (Vector{1, 1}));
  EXPECT_EQ(oti::pool_avg(Tensor({1, 3}, v)), v);
  EXPECT_THROW(oti::pool_avg(Tensor{}), oti::ShapeError);
}

TEST(VideoFeatures, IdentityModuleGivesNoTemporalComponent) {
  EncoderConfig c;
  c.dim = 16;
  c.layers = 0;
  c.positional = false;
  std::mt19937_64 gen(6);
  const auto fs = oti::video_features(random_params(c, 6), random_frames(gen, 8, 16), false, 1.0);
  EXPECT_EQ(fs.v_after, fs.v_before);
  for (double x : fs.v_otf) EXPECT_NEAR(x, 0.0, 1e-15);
  EXPECT_TRUE(fs.v_af_res.empty());
}

TEST(VideoFeatures, ResidualFeatureIsDirectionOfPooledSum) {
  EncoderConfig c;
  c.dim = 16;
  std::mt19937_64 gen(7);
  const TemporalParams p = perturbed_params(c, 7, 0.2);
  const Tensor x = random_frames(gen, 8, 16);
  const auto fs = oti::video_features(p, x, true, 0.5);
  const oracle::Vec q = oracle::mean_rows(rows_of(x));
  const oracle::Vec pe = oracle::mean_rows(oracle::encoder_forward(by_name(p), rows_of(x), 1, 4, true));
  oracle::Vec sum(16);
  for (std::size_t j = 0; j < 16; ++j) sum[j] = pe[j] + q[j];
  const oracle::Vec want = oracle::unit(sum);
  ASSERT_EQ(fs.v_af_res.size(), 16u);
  for (std::size_t j = 0; j < 16; ++j) EXPECT_NEAR(fs.v_af_res[j], want[j], 1e-12);
  // v_otf is the part of v_af_res orthogonal to v_before
  const oracle::Vec otf_ref = [&] {
    oracle::Vec proj = oracle::projection(fs.v_af_res, fs.v_before), out(16);
    for (std::size_t j = 0; j < 16; ++j) out[j] = fs.v_af_res[j] - proj[j];
    return out;
  }();
  for (std::size_t j = 0; j < 16; ++j) EXPECT_NEAR(fs.v_otf[j], otf_ref[j], 1e-12);
}

TEST(VideoFeatures, LambdaZeroGivesBeforeExactly) {
  EncoderConfig c;
  c.dim = 16;
  std::mt19937_64 gen(8);
  const auto fs = oti::video_features(perturbed_params(c, 8, 0.3), random_frames(gen, 8, 16), false, 0.0);
  EXPECT_EQ(fs.v_af_otf, fs.v_before);
}

TEST(VideoFeatures, SatisfiesFeatureSetInvariants) {
  EncoderConfig c;
  c.dim = 16;
  std::mt19937_64 gen(9);
  for (int trial = 0; trial < 20; ++trial) {
    const auto fs =
        oti::video_features(perturbed_params(c, 100 + trial, 0.3), random_frames(gen, 8, 16), false, 0.7);
    EXPECT_NEAR(oracle::norm(fs.v_before), 1.0, 1e-12);
    EXPECT_NEAR(oracle::norm(fs.v_after), 1.0, 1e-12);
    for (std::size_t j = 0; j < 16; ++j) {
      EXPECT_NEAR(fs.v_map[j] + fs.v_otf[j], fs.v_after[j], 1e-12);
      EXPECT_NEAR(fs.v_af_otf[j], fs.v_before[j] + 0.7 * fs.v_otf[j], 1e-15);
    }
    EXPECT_LE(std::abs(static_cast<double>(oracle::dot(fs.v_otf, fs.v_before))), 1e-9 * oracle::norm(fs.v_otf));
  }
}

TEST(VideoFeatures, InvalidLambdaIsRejected) {
  EncoderConfig c;
  c.dim = 16;
  std::mt19937_64 gen(10);
  EXPECT_THROW(oti::video_features(random_params(c, 1), random_frames(gen, 4, 16), false, 1.5),
               oti::ParameterError);
}

Tensor permute_rows(const Tensor& x, const std::vector<std::size_t>& perm) {
  Tensor out = x;
  for (std::size_t t = 0; t < perm.size(); ++t) {
    auto src = x.row_span(perm[t]);
    std::copy(src.begin(), src.end(), out.row_span(t).begin());
  }
  return out;
}

TEST(EncodeFrames, PoolingIsPermutationInvariantWithoutPositions) {
  EncoderConfig c;
  c.dim = 16;
  c.layers = 2;
  c.positional = false;
  const TemporalParams p = perturbed_params(c, 11, 0.3);
  std::mt19937_64 gen(11);
  const Tensor x = random_frames(gen, 8, 16);
  const Vector base = oti::pool_avg(oti::encode_frames(p, x));
  std::vector<std::size_t> perm{0, 1, 2, 3, 4, 5, 6, 7};
  for (int trial = 0; trial < 10; ++trial) {
    std::shuffle(perm.begin(), perm.end(), gen);
    const Vector pooled = oti::pool_avg(oti::encode_frames(p, permute_rows(x, perm)));
    for (std::size_t j = 0; j < 16; ++j) EXPECT_NEAR(pooled[j], base[j], 1e-10);
  }
}

TEST(EncodeFrames, PositionsMakePoolingOrderSensitive) {
  EncoderConfig c;
  c.dim = 16;
  const TemporalParams p = perturbed_params(c, 12, 0.3);
  std::mt19937_64 gen(12);
  const Tensor x = random_frames(gen, 8, 16);
  const Vector base = oti::pool_avg(oti::encode_frames(p, x));
  const Vector reversed = oti::pool_avg(oti::encode_frames(p, permute_rows(x, {7, 6, 5, 4, 3, 2, 1, 0})));
  EXPECT_GT(oracle::max_abs_diff(base, reversed), 1e-6);
}

}  // namespace
