#pragma once

// Training objective: cross-entropy over scaled cosine similarities for the
// spatial-temporal feature and for the refined feature, plus the MSE that
// matches v_after to v_before.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "oti/autodiff.hpp"
#include "oti/category_bank.hpp"
#include "oti/error.hpp"
#include "oti/feature_geometry.hpp"
#include "oti/tensor.hpp"
#include "oti/temporal_encoder.hpp"

namespace oti {

struct LossWeights {
  double alpha = 1.0;
  double beta = 1.0;
  double gamma = 1.0;
  double logit_scale = 10.0;

  void validate() const {
    for (double w : {alpha, beta, gamma}) {
      if (!std::isfinite(w) || w < 0.0) throw ParameterError("loss weights must be finite and >= 0");
    }
    if (!std::isfinite(logit_scale) || !(logit_scale > 0.0)) {
      throw ParameterError("logit_scale must be finite and > 0");
    }
  }

  friend bool operator==(const LossWeights&, const LossWeights&) = default;
};

// Cosine similarity of `feature` with every row of `bank`.
inline Vector cosine_similarities(std::span<const double> feature, const Tensor& bank) {
  if (feature.size() != bank.cols()) {
    throw ShapeError("feature dimension " + std::to_string(feature.size()) +
                     " does not match bank width " + std::to_string(bank.cols()));
  }
  Vector sims(bank.rows());
  for (std::size_t r = 0; r < bank.rows(); ++r) sims[r] = cosine_sim(feature, bank.row_span(r));
  return sims;
}

// -log softmax(logit_scale * cos(feature, bank rows))[target]
inline double ce_over_similarities(std::span<const double> feature, const Tensor& bank,
                                   std::size_t target, double logit_scale) {
  if (target >= bank.rows()) {
    throw ParameterError("target index " + std::to_string(target) + " out of range for " +
                         std::to_string(bank.rows()) + " categories");
  }
  const Vector sims = cosine_similarities(feature, bank);
  double mx = -INFINITY;
  for (double s : sims) mx = std::max(mx, logit_scale * s);
  double sum = 0.0;
  for (double s : sims) sum += std::exp(logit_scale * s - mx);
  return -(logit_scale * sims[target] - mx - std::log(sum));
}

inline double loss_oti(const VideoFeatureSet& fs, const Tensor& bank, std::size_t target,
                       double logit_scale) {
  return ce_over_similarities(fs.v_af_otf, bank, target, logit_scale);
}

inline double loss_match(std::span<const double> v_after, std::span<const double> v_before) {
  if (v_after.size() != v_before.size() || v_after.empty()) {
    throw ShapeError("loss_match: dimensions " + std::to_string(v_after.size()) + " vs " +
                     std::to_string(v_before.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < v_after.size(); ++i) {
    const double diff = v_after[i] - v_before[i];
    s += diff * diff;
  }
  return s / static_cast<double>(v_after.size());
}

// The feature the classification term reads: v_af_res when the residual
// connection produced one, else v_after.
inline const Vector& classification_feature(const VideoFeatureSet& fs) {
  return fs.v_af_res.empty() ? fs.v_after : fs.v_af_res;
}

struct LossTerms {
  double cls = 0.0;
  double oti = 0.0;
  double match = 0.0;
  double total = 0.0;
};

inline LossTerms total_loss_terms(std::span<const VideoFeatureSet> batch, const Tensor& bank,
                                  std::span<const std::size_t> targets, const LossWeights& weights) {
  weights.validate();
  if (batch.size() != targets.size()) {
    throw ShapeError("total_loss: " + std::to_string(batch.size()) + " feature sets for " +
                     std::to_string(targets.size()) + " targets");
  }
  if (batch.empty()) throw ParameterError("total_loss: empty batch");
  LossTerms t;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    t.cls += ce_over_similarities(classification_feature(batch[i]), bank, targets[i], weights.logit_scale);
    t.oti += loss_oti(batch[i], bank, targets[i], weights.logit_scale);
    t.match += loss_match(batch[i].v_after, batch[i].v_before);
  }
  const double n = static_cast<double>(batch.size());
  t.cls /= n;
  t.oti /= n;
  t.match /= n;
  t.total = weights.alpha * t.cls + weights.beta * t.oti + weights.gamma * t.match;
  return t;
}

inline double total_loss(std::span<const VideoFeatureSet> batch, const Tensor& bank,
                         std::span<const std::size_t> targets, const LossWeights& weights) {
  return total_loss_terms(batch, bank, targets, weights).total;
}

// Records which features each differentiable loss term consumed.
struct LossProbe {
  std::vector<std::string> reads;  // "<term>:<feature>"

  bool term_read(const std::string& term, const std::string& feature) const {
    return term_read_entry(term + ":" + feature);
  }
  bool term_read_entry(const std::string& entry) const {
    return std::find(reads.begin(), reads.end(), entry) != reads.end();
  }
};

// Differentiable per-video weighted loss alpha L_cls + beta L_oti + gamma
// L_match. Terms with zero weight are not built. `bank_rows` must hold unit
// rows.
inline ad::Var video_loss_graph(const FeatureVars& f, ad::Var bank_rows, std::size_t target,
                                const LossWeights& weights, LossProbe* probe = nullptr) {
  using namespace ad;
  Graph& g = *bank_rows.graph;
  auto logits_ce = [&](Var feature) {
    return softmax_cross_entropy(scale(matmul_bt(l2_normalize_rows(feature), bank_rows),
                                       weights.logit_scale),
                                 {target});
  };
  auto note = [&](const char* entry) {
    if (probe && !probe->term_read_entry(entry)) probe->reads.emplace_back(entry);
  };
  Var total = g.constant(Tensor({1, 1}, 0.0));
  if (weights.alpha > 0.0) {
    note("cls:v_st");
    total = add(total, scale(logits_ce(f.v_st), weights.alpha));
  }
  if (weights.beta > 0.0) {
    note("oti:v_af_otf");
    note("oti:v_before");
    total = add(total, scale(logits_ce(f.v_af_otf), weights.beta));
  }
  if (weights.gamma > 0.0) {
    note("match:v_after");
    note("match:v_before");
    Var diff = sub(f.v_after, f.v_before);
    total = add(total, scale(mean_all(hadamard(diff, diff)), weights.gamma));
  }
  return total;
}

}  // namespace oti
