#pragma once

// Temporal learning module: an n-layer pre-norm transformer over frame
// embeddings, average pooling, and the per-video feature set built on it.

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "oti/autodiff.hpp"
#include "oti/error.hpp"
#include "oti/feature_geometry.hpp"
#include "oti/rng.hpp"
#include "oti/tensor.hpp"

namespace oti {

enum class VideoRole { train, eval };

// One video as T x d frame embeddings.
struct FrameSequence {
  Tensor frames;
  std::int64_t video_id = 0;
  std::int64_t category = 0;
  VideoRole role = VideoRole::train;

  std::size_t length() const { return frames.rows(); }
  std::size_t dim() const { return frames.cols(); }

  friend bool operator==(const FrameSequence&, const FrameSequence&) = default;
};

struct EncoderConfig {
  std::size_t dim = 64;
  std::size_t layers = 1;
  std::size_t heads = 4;
  bool positional = true;
  std::size_t max_frames = 8;
  double init_std = 0.02;
  bool zero_init_output = false;

  void validate() const {
    if (dim == 0) throw ParameterError("model.dim must be positive");
    if (heads == 0) throw ParameterError("model.heads must be >= 1");
    if (dim % heads != 0) {
      throw ParameterError("model.dim (" + std::to_string(dim) + ") must be divisible by model.heads (" +
                           std::to_string(heads) + ")");
    }
    if (max_frames == 0) throw ParameterError("model.max_frames must be positive");
    if (!(init_std >= 0.0) || !std::isfinite(init_std)) {
      throw ParameterError("model.init_std must be finite and >= 0");
    }
  }

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

// Trainable tensors of the temporal module, in a fixed canonical order.
struct TemporalParams {
  EncoderConfig config;
  std::vector<std::string> names;
  std::vector<Tensor> tensors;

  std::size_t count() const { return tensors.size(); }

  std::optional<std::size_t> index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names.size(); ++i)
      if (names[i] == name) return i;
    return std::nullopt;
  }

  Tensor& at(const std::string& name) {
    auto i = index_of(name);
    if (!i) throw ParameterError("no parameter tensor named '" + name + "'");
    return tensors[*i];
  }

  bool all_finite() const {
    for (const Tensor& t : tensors)
      if (!t.all_finite()) return false;
    return true;
  }

  friend bool operator==(const TemporalParams&, const TemporalParams&) = default;
};

// Names and shapes of every tensor for `config`, in canonical order.
inline std::vector<std::pair<std::string, std::vector<std::size_t>>> parameter_layout(
    const EncoderConfig& config) {
  const std::size_t d = config.dim;
  std::vector<std::pair<std::string, std::vector<std::size_t>>> layout;
  if (config.positional) layout.push_back({"pos", {config.max_frames, d}});
  for (std::size_t l = 0; l < config.layers; ++l) {
    const std::string p = "layer" + std::to_string(l) + ".";
    layout.push_back({p + "ln1.gamma", {d}});
    layout.push_back({p + "ln1.beta", {d}});
    layout.push_back({p + "attn.wq", {d, d}});
    layout.push_back({p + "attn.wk", {d, d}});
    layout.push_back({p + "attn.wv", {d, d}});
    layout.push_back({p + "attn.wo", {d, d}});
    layout.push_back({p + "ln2.gamma", {d}});
    layout.push_back({p + "ln2.beta", {d}});
    layout.push_back({p + "ffn.w1", {d, 4 * d}});
    layout.push_back({p + "ffn.b1", {4 * d}});
    layout.push_back({p + "ffn.w2", {4 * d, d}});
    layout.push_back({p + "ffn.b2", {d}});
  }
  return layout;
}

// Normal(0, init_std) weights and positional table; unit norm scales; zero
// offsets and biases. Output projections (attn.wo, ffn.w2) start at zero when
// config.zero_init_output is set.
inline TemporalParams init_params(const EncoderConfig& config, RngStream& stream) {
  config.validate();
  TemporalParams params;
  params.config = config;
  for (auto& [name, shape] : parameter_layout(config)) {
    Tensor t;
    const bool is_gamma = name.ends_with(".gamma");
    const bool is_offset = name.ends_with(".beta") || name.ends_with(".b1") || name.ends_with(".b2");
    const bool is_output = name.ends_with("attn.wo") || name.ends_with("ffn.w2");
    if (is_gamma) {
      t = Tensor(shape, 1.0);
    } else if (is_offset || (is_output && config.zero_init_output)) {
      t = Tensor(shape, 0.0);
    } else {
      t = stream.normal_tensor(shape, config.init_std);
    }
    params.names.push_back(name);
    params.tensors.push_back(std::move(t));
  }
  return params;
}

// Transformer stack over `frames` (T x d) with parameter vars laid out as
// parameter_layout(config).
inline ad::Var encode_frames(const EncoderConfig& config, std::span<const ad::Var> params,
                             ad::Var frames) {
  using namespace ad;
  const Tensor& fv = value(frames);
  const std::size_t T = fv.rows(), d = config.dim;
  if (fv.cols() != d) {
    throw ShapeError("encode_frames: frame width " + std::to_string(fv.cols()) +
                     " does not match model dim " + std::to_string(d));
  }
  if (T == 0 || T > config.max_frames) {
    throw ShapeError("encode_frames: " + std::to_string(T) + " frames exceeds max_frames " +
                     std::to_string(config.max_frames));
  }
  const std::size_t expected = parameter_layout(config).size();
  if (params.size() != expected) {
    throw ShapeError("encode_frames: expected " + std::to_string(expected) +
                     " parameter tensors, got " + std::to_string(params.size()));
  }
  std::size_t k = 0;
  Var h = frames;
  if (config.positional) h = add(h, slice_rows(params[k++], 0, T));
  const std::size_t heads = config.heads;
  const std::size_t dh = d / heads;
  const double attn_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  for (std::size_t l = 0; l < config.layers; ++l) {
    Var ln1_g = params[k++], ln1_b = params[k++];
    Var wq = params[k++], wk = params[k++], wv = params[k++], wo = params[k++];
    Var ln2_g = params[k++], ln2_b = params[k++];
    Var w1 = params[k++], b1 = params[k++], w2 = params[k++], b2 = params[k++];

    Var z = layer_norm_rows(h, ln1_g, ln1_b);
    Var q = matmul(z, wq), kk = matmul(z, wk), v = matmul(z, wv);
    std::vector<Var> head_out;
    head_out.reserve(heads);
    for (std::size_t hd = 0; hd < heads; ++hd) {
      Var qh = heads == 1 ? q : slice_cols(q, hd * dh, dh);
      Var kh = heads == 1 ? kk : slice_cols(kk, hd * dh, dh);
      Var vh = heads == 1 ? v : slice_cols(v, hd * dh, dh);
      Var att = softmax_rows(scale(matmul_bt(qh, kh), attn_scale));
      head_out.push_back(matmul(att, vh));
    }
    Var o = heads == 1 ? head_out.front() : concat_cols(head_out);
    h = add(h, matmul(o, wo));

    Var z2 = layer_norm_rows(h, ln2_g, ln2_b);
    Var ff = gelu(add_row(matmul(z2, w1), b1));
    h = add(h, add_row(matmul(ff, w2), b2));
  }
  return h;
}

inline void check_params_shape(const TemporalParams& params) {
  auto layout = parameter_layout(params.config);
  if (layout.size() != params.tensors.size()) {
    throw ShapeError("temporal params hold " + std::to_string(params.tensors.size()) +
                     " tensors, layout expects " + std::to_string(layout.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (params.tensors[i].shape() != layout[i].second) {
      throw ShapeError("parameter '" + layout[i].first + "' has shape " +
                       shape_string(params.tensors[i].shape()) + ", expected " +
                       shape_string(layout[i].second));
    }
  }
}

inline std::vector<ad::Var> constant_vars(ad::Graph& g, const TemporalParams& params) {
  std::vector<ad::Var> vars;
  vars.reserve(params.count());
  for (const Tensor& t : params.tensors) vars.push_back(g.constant_ref(t));
  return vars;
}

inline std::vector<ad::Var> parameter_vars(ad::Graph& g, const TemporalParams& params) {
  std::vector<ad::Var> vars;
  vars.reserve(params.count());
  for (const Tensor& t : params.tensors) vars.push_back(g.parameter(t));
  return vars;
}

inline Tensor encode_frames(const TemporalParams& params, const Tensor& frames) {
  check_params_shape(params);
  ad::Graph g;
  auto vars = constant_vars(g, params);
  ad::Var out = encode_frames(params.config, vars, g.constant_ref(frames));
  return g.value(out);
}

inline Vector pool_avg(const Tensor& frames) {
  if (frames.empty() || frames.rows() == 0) throw ShapeError("pool_avg: empty frame sequence");
  const std::size_t T = frames.rows(), d = frames.cols();
  Vector out(d, 0.0);
  for (std::size_t t = 0; t < T; ++t)
    for (std::size_t j = 0; j < d; ++j) out[j] += frames(t, j);
  for (double& v : out) v /= static_cast<double>(T);
  return out;
}

// Vars of the features a loss may read, built on one graph.
struct FeatureVars {
  ad::Var v_before;  // constant
  ad::Var v_after;
  ad::Var v_st;      // v_af_res with the residual connection, else v_after
  ad::Var v_otf;
  ad::Var v_af_otf;
};

inline FeatureVars feature_graph(ad::Graph& g, const EncoderConfig& config,
                                 std::span<const ad::Var> params, const Tensor& frames,
                                 bool residual, double lambda) {
  using namespace ad;
  check_lambda(lambda);
  const Vector pooled_input = pool_avg(frames);
  const Vector before = l2_normalize(pooled_input);
  FeatureVars f;
  f.v_before = g.constant(Tensor::row(before));
  Var encoded = encode_frames(config, params, g.constant_ref(frames));
  Var pooled = mean_rows(encoded);
  f.v_after = l2_normalize_rows(pooled);
  f.v_st = residual ? l2_normalize_rows(add(pooled, g.constant(Tensor::row(pooled_input))))
                    : f.v_after;
  const double inv_sq_norm = 1.0 / dot(before, before);
  Var coef = scale(matmul_bt(f.v_st, f.v_before), inv_sq_norm);
  f.v_otf = sub(f.v_st, mul_scalar(coef, f.v_before));
  f.v_af_otf = add(f.v_before, scale(f.v_otf, lambda));
  return f;
}

inline VideoFeatureSet video_features(const TemporalParams& params, const Tensor& frames,
                                      bool residual, double lambda) {
  check_lambda(lambda);
  const Tensor encoded = encode_frames(params, frames);
  const Vector pooled = pool_avg(encoded);
  const Vector pooled_input = pool_avg(frames);
  const Vector before = l2_normalize(pooled_input);
  const Vector after = l2_normalize(pooled);
  Vector af_res;
  if (residual) {
    Vector sum = pooled;
    for (std::size_t j = 0; j < sum.size(); ++j) sum[j] += pooled_input[j];
    af_res = l2_normalize(sum);
  }
  VideoFeatureSet fs = factorize(before, residual ? af_res : after, lambda);
  fs.v_after = after;
  fs.v_af_res = std::move(af_res);
  return fs;
}

}  // namespace oti
