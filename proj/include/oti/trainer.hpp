#pragma once

// Optimizes the temporal module on seen-category videos with AdamW, plus the
// finite-difference gradient check and the model file.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "json.hpp"
#include "oti/autodiff.hpp"
#include "oti/category_bank.hpp"
#include "oti/error.hpp"
#include "oti/json_text.hpp"
#include "oti/objectives.hpp"
#include "oti/rng.hpp"
#include "oti/synthetic_corpus.hpp"
#include "oti/temporal_encoder.hpp"

namespace oti {

struct TrainConfig {
  EncoderConfig model;
  double learning_rate = 5e-4;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  std::size_t frames = 8;
  SamplingMode sampling = SamplingMode::random;
  bool residual = false;
  double lambda_train = 1.0;
  LossWeights loss;
  std::uint64_t seed = 0;

  void validate() const {
    model.validate();
    auto positive = [](double v, const char* name) {
      if (!std::isfinite(v) || !(v > 0.0)) throw ParameterError(std::string(name) + " must be > 0");
    };
    positive(learning_rate, "train.learning_rate");
    positive(epsilon, "train.epsilon");
    if (!std::isfinite(weight_decay) || weight_decay < 0.0) {
      throw ParameterError("train.weight_decay must be >= 0");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0)) throw ParameterError("train.beta1 must lie in [0, 1)");
    if (!(beta2 >= 0.0 && beta2 < 1.0)) throw ParameterError("train.beta2 must lie in [0, 1)");
    if (batch_size == 0) throw ParameterError("train.batch_size must be >= 1");
    if (frames == 0) throw ParameterError("train.frames must be >= 1");
    if (frames > model.max_frames) {
      throw ParameterError("train.frames (" + std::to_string(frames) + ") exceeds model.max_frames (" +
                           std::to_string(model.max_frames) + ")");
    }
    if (!(lambda_train >= 0.0 && lambda_train <= 1.0)) {
      throw ParameterError("train.lambda_train must lie in [0, 1]");
    }
    try {
      loss.validate();
    } catch (const ParameterError& e) {
      throw ParameterError(std::string("train.") + e.what());
    }
  }

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct Model {
  TrainConfig config;
  TemporalParams params;

  friend bool operator==(const Model&, const Model&) = default;
};

struct EpochLosses {
  double total = 0.0;
  double cls = 0.0;
  double oti = 0.0;
  double match = 0.0;
};

struct TrainReport {
  std::vector<EpochLosses> epochs;
  Model model;
  double seconds = 0.0;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::size_t step = 0;
};

// w <- w (1 - lr wd), then the bias-corrected Adam update.
inline void adamw_step(std::vector<Tensor>& params, const std::vector<Tensor>& grads,
                       AdamState& state, const TrainConfig& config) {
  if (params.size() != grads.size()) throw ShapeError("adamw_step: parameter/gradient count mismatch");
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (!params[p].same_shape(grads[p])) {
      throw ShapeError("adamw_step: gradient " + std::to_string(p) + " has shape " +
                       shape_string(grads[p].shape()) + ", parameter " + shape_string(params[p].shape()));
    }
    if (!grads[p].all_finite()) {
      throw NumericFailure("non-finite gradient in parameter tensor " + std::to_string(p) + " at step " +
                           std::to_string(state.step + 1));
    }
  }
  if (state.m.empty()) {
    for (const Tensor& p : params) {
      state.m.push_back(Tensor::zeros_like(p));
      state.v.push_back(Tensor::zeros_like(p));
    }
  }
  ++state.step;
  const double lr = config.learning_rate;
  const double decay = 1.0 - lr * config.weight_decay;
  const double b1 = config.beta1, b2 = config.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t p = 0; p < params.size(); ++p) {
    auto w = params[p].data();
    auto g = grads[p].data();
    auto m = state.m[p].data();
    auto v = state.v[p].data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] *= decay;
      m[i] = b1 * m[i] + (1.0 - b1) * g[i];
      v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
      w[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + config.epsilon);
    }
  }
}

// Loss and parameter gradients of one video, plus the plain per-term values.
struct VideoStep {
  std::vector<Tensor> grads;
  LossTerms terms;
};

inline VideoStep video_step(const TemporalParams& params, const Tensor& frames, const Tensor& bank_unit,
                            std::size_t target, const TrainConfig& config, LossProbe* probe) {
  ad::Graph g;
  auto vars = parameter_vars(g, params);
  FeatureVars f = feature_graph(g, params.config, vars, frames, config.residual, config.lambda_train);
  ad::Var loss = video_loss_graph(f, g.constant_ref(bank_unit), target, config.loss, probe);
  g.backward(loss);
  VideoStep out;
  out.grads.reserve(vars.size());
  for (ad::Var v : vars) out.grads.push_back(g.grad(v));
  const double scale = config.loss.logit_scale;
  out.terms.cls = ce_over_similarities(g.value(f.v_st).data(), bank_unit, target, scale);
  out.terms.oti = ce_over_similarities(g.value(f.v_af_otf).data(), bank_unit, target, scale);
  out.terms.match = loss_match(g.value(f.v_after).data(), g.value(f.v_before).data());
  out.terms.total = g.value(loss)[0];
  return out;
}

struct TrainHooks {
  LossProbe* probe = nullptr;
  std::function<void(std::size_t epoch, const EpochLosses&)> on_epoch;
};

inline Tensor unit_rows(const Tensor& m) {
  Tensor out = m;
  for (std::size_t r = 0; r < out.rows(); ++r) {
    Vector u = l2_normalize(out.row_span(r));
    std::copy(u.begin(), u.end(), out.row_span(r).begin());
  }
  return out;
}

inline TrainReport train(const Corpus& corpus, const CategoryBank& bank, const TrainConfig& config,
                         const TrainHooks& hooks = {}) {
  const auto started = std::chrono::steady_clock::now();
  config.validate();
  if (config.model.dim != bank.dim()) {
    throw ParameterError("model.dim (" + std::to_string(config.model.dim) + ") does not match corpus d (" +
                         std::to_string(bank.dim()) + ")");
  }
  const BankMatrix seen = bank.embeddings_of(Partition::seen);
  if (seen.count() == 0) throw ParameterError("category bank has no seen categories");
  const Tensor bank_unit = unit_rows(seen.matrix);

  std::vector<const FrameSequence*> videos;
  std::vector<std::size_t> targets;
  for (const FrameSequence& v : corpus.videos) {
    if (v.role != VideoRole::train) continue;
    const CategoryEntry& cat = bank.at(v.category);
    if (cat.partition != Partition::seen) continue;
    if (v.length() < config.frames) {
      throw ParameterError("video " + std::to_string(v.video_id) + " has " + std::to_string(v.length()) +
                           " frames, fewer than train.frames");
    }
    videos.push_back(&v);
    targets.push_back(seen.row_of(v.category));
  }
  if (videos.empty()) throw ParameterError("no training videos from seen categories");

  TrainReport report;
  report.model.config = config;
  RngStream init_stream = seeded_stream(config.seed, "train/init");
  report.model.params = init_params(config.model, init_stream);
  TemporalParams& params = report.model.params;

  RngStream shuffle_stream = seeded_stream(config.seed, "train/shuffle");
  RngStream sample_stream = seeded_stream(config.seed, "train/sample");
  AdamState state;
  std::vector<std::size_t> order(videos.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    shuffle_stream.shuffle(order.begin(), order.end());
    EpochLosses sums;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::vector<Tensor> grads;
      for (std::size_t i = start; i < end; ++i) {
        const std::size_t k = order[i];
        const Tensor frames = sample_frames(*videos[k], config.frames, config.sampling, sample_stream);
        VideoStep step = video_step(params, frames, bank_unit, targets[k], config, hooks.probe);
        if (!std::isfinite(step.terms.total)) {
          throw NumericFailure("non-finite loss at epoch " + std::to_string(epoch) + ", video " +
                               std::to_string(videos[k]->video_id));
        }
        if (grads.empty()) {
          grads = std::move(step.grads);
        } else {
          for (std::size_t p = 0; p < grads.size(); ++p) ad::detail::axpy(grads[p], step.grads[p]);
        }
        sums.total += step.terms.total;
        sums.cls += step.terms.cls;
        sums.oti += step.terms.oti;
        sums.match += step.terms.match;
      }
      const double inv = 1.0 / static_cast<double>(end - start);
      for (Tensor& gtensor : grads)
        for (double& v : gtensor.data()) v *= inv;
      adamw_step(params.tensors, grads, state, config);
    }
    const double n = static_cast<double>(order.size());
    EpochLosses mean{sums.total / n, sums.cls / n, sums.oti / n, sums.match / n};
    report.epochs.push_back(mean);
    if (hooks.on_epoch) hooks.on_epoch(epoch, mean);
  }
  report.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return report;
}

inline TrainReport train(const Corpus& corpus, const TrainConfig& config, const TrainHooks& hooks = {}) {
  return train(corpus, corpus.bank, config, hooks);
}

// Small problem on which analytic and finite-difference gradients of the
// batch-mean total loss are compared.
struct GradCheckSetup {
  EncoderConfig model{.dim = 16, .layers = 1, .heads = 4, .positional = true, .max_frames = 4,
                      .init_std = 0.1, .zero_init_output = false};
  std::size_t frames = 4;
  std::size_t seen = 5;
  std::size_t batch = 3;
  bool residual = false;
  double lambda = 1.0;
  LossWeights loss;
  std::uint64_t seed = 0;
  double step = 1e-5;
};

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::vector<std::string> names;
  std::vector<double> relative_errors;
};

inline GradCheckResult gradient_check_detailed(const GradCheckSetup& setup) {
  setup.model.validate();
  setup.loss.validate();
  CorpusSpec spec;
  spec.dim = setup.model.dim;
  spec.seen = setup.seen;
  spec.unseen = 2;
  spec.twin_fraction = 0.0;
  spec.videos_per_seen = 1;
  spec.videos_per_unseen = 1;
  spec.frames_per_video = setup.frames;
  spec.atoms_per_category = std::min<std::size_t>(setup.frames, 4);
  spec.atom_bank_size = 6;
  spec.seed = setup.seed;
  const Corpus corpus = generate(spec);
  const BankMatrix seen = corpus.bank.embeddings_of(Partition::seen);
  const Tensor bank_unit = unit_rows(seen.matrix);

  std::vector<Tensor> frames;
  std::vector<std::size_t> targets;
  for (const FrameSequence& v : corpus.videos) {
    if (v.role != VideoRole::train || frames.size() == setup.batch) continue;
    frames.push_back(v.frames);
    targets.push_back(seen.row_of(v.category));
  }
  if (frames.size() < setup.batch) throw ParameterError("gradient check needs batch <= seen categories");

  RngStream init_stream = seeded_stream(setup.seed, "gradcheck/init");
  const TemporalParams params = init_params(setup.model, init_stream);
  GradCheckResult result;
  result.names = params.names;
  if (params.count() == 0) return result;

  auto fn = [&](ad::Graph& g, std::span<const ad::Var> vars) {
    ad::Var bank_var = g.constant_ref(bank_unit);
    ad::Var total = g.constant(Tensor({1, 1}, 0.0));
    for (std::size_t i = 0; i < frames.size(); ++i) {
      FeatureVars f = feature_graph(g, setup.model, vars, frames[i], setup.residual, setup.lambda);
      total = ad::add(total, video_loss_graph(f, bank_var, targets[i], setup.loss));
    }
    return ad::scale(total, 1.0 / static_cast<double>(frames.size()));
  };
  const auto analytic = ad::evaluate_with_gradients(fn, params.tensors);
  const auto numeric = ad::central_difference(fn, std::span<const Tensor>(params.tensors), setup.step);
  for (std::size_t p = 0; p < params.count(); ++p) {
    const double err = ad::relative_error(analytic.grads[p], numeric[p]);
    result.relative_errors.push_back(err);
    result.max_relative_error = std::max(result.max_relative_error, err);
  }
  return result;
}

inline double gradient_check(const GradCheckSetup& setup) {
  return gradient_check_detailed(setup).max_relative_error;
}

// ---- model file ----------------------------------------------------------

inline constexpr int kModelFormatVersion = 1;

inline nlohmann::json encoder_to_json(const EncoderConfig& c) {
  return {{"dim", c.dim},
          {"layers", c.layers},
          {"heads", c.heads},
          {"positional", c.positional},
          {"max_frames", c.max_frames},
          {"init_std", c.init_std},
          {"zero_init_output", c.zero_init_output}};
}

inline void encoder_from_json(json_text::ObjectReader& r, EncoderConfig& c) {
  r.read("dim", c.dim);
  r.read("layers", c.layers);
  r.read("heads", c.heads);
  r.read("positional", c.positional);
  r.read("max_frames", c.max_frames);
  r.read("init_std", c.init_std);
  r.read("zero_init_output", c.zero_init_output);
  r.finish();
}

inline nlohmann::json train_to_json(const TrainConfig& c) {
  return {{"learning_rate", c.learning_rate},
          {"weight_decay", c.weight_decay},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"epsilon", c.epsilon},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"frames", c.frames},
          {"sampling", std::string(to_string(c.sampling))},
          {"residual", c.residual},
          {"lambda_train", c.lambda_train},
          {"alpha", c.loss.alpha},
          {"beta", c.loss.beta},
          {"gamma", c.loss.gamma},
          {"logit_scale", c.loss.logit_scale},
          {"seed", c.seed}};
}

// Reads every train.* key except "seed", which the caller resolves.
inline void train_from_json(json_text::ObjectReader& r, TrainConfig& c) {
  r.read("learning_rate", c.learning_rate);
  r.read("weight_decay", c.weight_decay);
  r.read("beta1", c.beta1);
  r.read("beta2", c.beta2);
  r.read("epsilon", c.epsilon);
  r.read("epochs", c.epochs);
  r.read("batch_size", c.batch_size);
  r.read("frames", c.frames);
  std::string sampling;
  if (r.read("sampling", sampling)) {
    try {
      c.sampling = parse_sampling(sampling);
    } catch (const ParameterError& e) {
      throw ParameterError(r.path_of("sampling") + ": " + e.what());
    }
  }
  r.read("residual", c.residual);
  r.read("lambda_train", c.lambda_train);
  r.read("alpha", c.loss.alpha);
  r.read("beta", c.loss.beta);
  r.read("gamma", c.loss.gamma);
  r.read("logit_scale", c.loss.logit_scale);
}

inline nlohmann::json model_config_json(const TrainConfig& c) {
  return {{"model", encoder_to_json(c.model)}, {"train", train_to_json(c)}};
}

inline std::string model_to_json(const Model& model) {
  check_params_shape(model.params);
  std::string out = "{\n\"version\": " + std::to_string(kModelFormatVersion) + ",\n";
  out += "\"config\": " + model_config_json(model.config).dump() + ",\n";
  out += "\"params\": [\n";
  for (std::size_t i = 0; i < model.params.count(); ++i) {
    const Tensor& t = model.params.tensors[i];
    out += "{\"name\": " + json_text::quote(model.params.names[i]) + ", \"shape\": [";
    for (std::size_t k = 0; k < t.shape().size(); ++k) {
      if (k) out += ',';
      out += std::to_string(t.shape()[k]);
    }
    out += "], \"data\": ";
    json_text::append_array(out, t.data());
    out += i + 1 < model.params.count() ? "},\n" : "}\n";
  }
  out += "]\n}\n";
  return out;
}

inline Model model_from_json(const std::string& text, const std::string& source = "model") {
  using namespace json_text;
  const json doc = parse(text, source);
  if (!doc.is_object()) throw FormatError(source + ": top level must be an object");
  check_version(doc, kModelFormatVersion, source);
  Model model;
  {
    ObjectReader top(doc, source);
    top.child("version");
    const json* config = top.child("config");
    const json* params = top.child("params");
    top.finish();
    if (!config) throw FormatError(source + ".config: missing field");
    if (!params) throw FormatError(source + ".params: missing field");
    ObjectReader cr(*config, source + ".config");
    const json* mj = cr.child("model");
    const json* tj = cr.child("train");
    cr.finish();
    if (mj) {
      ObjectReader mr(*mj, source + ".config.model");
      encoder_from_json(mr, model.config.model);
    }
    if (tj) {
      ObjectReader tr(*tj, source + ".config.train");
      train_from_json(tr, model.config);
      tr.read("seed", model.config.seed);
      tr.finish();
    }
    try {
      model.config.validate();
    } catch (const ParameterError& e) {
      throw FormatError(source + ".config: " + e.what());
    }
    if (!params->is_array()) throw FormatError(source + ".params: expected an array");
    const auto layout = parameter_layout(model.config.model);
    model.params.config = model.config.model;
    model.params.names.resize(layout.size());
    model.params.tensors.resize(layout.size());
    std::vector<bool> filled(layout.size(), false);
    for (std::size_t i = 0; i < params->size(); ++i) {
      const std::string path = source + ".params[" + std::to_string(i) + "]";
      const json& pj = (*params)[i];
      ObjectReader pr(pj, path);
      std::string name;
      if (!pr.read("name", name)) throw FormatError(path + ".name: missing field");
      const json* shape_j = pr.child("shape");
      const json* data_j = pr.child("data");
      pr.finish();
      std::size_t slot = layout.size();
      for (std::size_t k = 0; k < layout.size(); ++k)
        if (layout[k].first == name) slot = k;
      if (slot == layout.size()) {
        throw FormatError(path + ": unknown tensor '" + name + "' for this model configuration");
      }
      if (filled[slot]) throw FormatError(path + ": duplicate tensor '" + name + "'");
      if (!shape_j || !shape_j->is_array()) throw FormatError(path + ".shape: expected an array");
      std::vector<std::size_t> shape;
      for (const json& e : *shape_j) {
        if (!e.is_number_unsigned()) throw FormatError(path + ".shape: expected positive integers");
        shape.push_back(e.get<std::size_t>());
      }
      if (shape != layout[slot].second) {
        throw FormatError(path + ": tensor '" + name + "' has shape " + shape_string(shape) +
                          ", configuration requires " + shape_string(layout[slot].second));
      }
      if (!data_j) throw FormatError(path + ".data: missing field");
      const std::size_t count =
          std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
      Tensor t(shape, as_doubles(*data_j, path + ".data", count));
      model.params.names[slot] = name;
      model.params.tensors[slot] = std::move(t);
      filled[slot] = true;
    }
    for (std::size_t k = 0; k < layout.size(); ++k) {
      if (!filled[k]) throw FormatError(source + ".params: missing tensor '" + layout[k].first + "'");
    }
  }
  return model;
}

inline void save_model(const Model& model, const std::string& path) {
  json_text::write_file(path, model_to_json(model));
}

inline Model load_model(const std::string& path) {
  return model_from_json(json_text::read_file(path), path);
}

}  // namespace oti
