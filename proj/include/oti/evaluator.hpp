#pragma once

// Zero-shot inference on unseen categories and the evaluation protocols
// built on it: full, repeated random halves, and repeated fixed-size
// subsets. Also feature-variant tables, interpolation sweeps and the angle
// analysis against ground-truth category embeddings.

#include <cmath>
#include <cstdint>
#include <map>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "oti/category_bank.hpp"
#include "oti/error.hpp"
#include "oti/feature_geometry.hpp"
#include "oti/objectives.hpp"
#include "oti/rng.hpp"
#include "oti/synthetic_corpus.hpp"
#include "oti/temporal_encoder.hpp"
#include "oti/trainer.hpp"

namespace oti {

enum class FeatureVariant { before, after, af_res, af_otf };
enum class InterpolationBasis { otf, after };

inline std::string_view to_string(FeatureVariant v) {
  switch (v) {
    case FeatureVariant::before: return "before";
    case FeatureVariant::after: return "after";
    case FeatureVariant::af_res: return "af_res";
    case FeatureVariant::af_otf: return "af_otf";
  }
  return "?";
}

inline FeatureVariant parse_variant(std::string_view s) {
  if (s == "before") return FeatureVariant::before;
  if (s == "after") return FeatureVariant::after;
  if (s == "af_res") return FeatureVariant::af_res;
  if (s == "af_otf") return FeatureVariant::af_otf;
  throw ParameterError("unknown feature variant '" + std::string(s) +
                       "' (expected before|after|af_res|af_otf)");
}

inline std::string_view to_string(InterpolationBasis b) {
  return b == InterpolationBasis::otf ? "otf" : "after";
}

inline InterpolationBasis parse_basis(std::string_view s) {
  if (s == "otf") return InterpolationBasis::otf;
  if (s == "after") return InterpolationBasis::after;
  throw ParameterError("unknown interpolation basis '" + std::string(s) + "' (expected otf|after)");
}

struct FeatureChoice {
  FeatureVariant variant = FeatureVariant::af_otf;
  double lambda = 1.0;
  InterpolationBasis basis = InterpolationBasis::otf;
};

// The vector a choice classifies with. basis=after interpolates toward
// v_after instead of v_otf.
inline Vector select_feature(const VideoFeatureSet& fs, const FeatureChoice& choice) {
  switch (choice.variant) {
    case FeatureVariant::before: return fs.v_before;
    case FeatureVariant::after: return fs.v_after;
    case FeatureVariant::af_res:
      if (fs.v_af_res.empty()) {
        throw ParameterError("variant af_res needs a model trained with the residual connection");
      }
      return fs.v_af_res;
    case FeatureVariant::af_otf:
      return interpolate(fs.v_before, choice.basis == InterpolationBasis::otf ? fs.v_otf : fs.v_after,
                         choice.lambda);
  }
  throw ParameterError("invalid feature variant");
}

// Index of the highest score; the earliest (lowest id) wins ties.
inline std::size_t argmax_first(std::span<const double> scores) {
  if (scores.empty()) throw ParameterError("argmax over no candidates");
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i)
    if (scores[i] > scores[best]) best = i;
  return best;
}

// Category whose embedding has the highest cosine similarity to `feature`.
inline std::int64_t classify(std::span<const double> feature, const BankMatrix& candidates) {
  if (candidates.count() == 0) throw ParameterError("classify: no candidate categories");
  return candidates.ids[argmax_first(cosine_similarities(feature, candidates.matrix))];
}

struct ClipPlan {
  std::size_t frames = 8;
  std::size_t clips = 3;
  SamplingMode mode = SamplingMode::random;

  void validate() const {
    if (clips == 0) throw ParameterError("eval.clips must be >= 1");
    if (frames == 0) throw ParameterError("eval frames must be >= 1");
  }
};

// Feature sets of every clip of one video (lambda-independent parts).
inline std::vector<VideoFeatureSet> clip_features(const Model& model, const FrameSequence& video,
                                                  const ClipPlan& plan, RngStream& stream) {
  plan.validate();
  std::vector<VideoFeatureSet> out;
  out.reserve(plan.clips);
  for (std::size_t c = 0; c < plan.clips; ++c) {
    const Tensor frames = sample_frames(video, plan.frames, plan.mode, stream);
    out.push_back(video_features(model.params, frames, model.config.residual, 0.0));
  }
  return out;
}

// Clip-averaged cosine similarities against `candidates`.
inline Vector fused_similarities(const std::vector<VideoFeatureSet>& clips, const FeatureChoice& choice,
                                 const BankMatrix& candidates) {
  Vector acc(candidates.count(), 0.0);
  for (const VideoFeatureSet& fs : clips) {
    const Vector sims = cosine_similarities(select_feature(fs, choice), candidates.matrix);
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += sims[i];
  }
  for (double& v : acc) v /= static_cast<double>(clips.size());
  return acc;
}

inline std::int64_t infer_video(const Model& model, const FrameSequence& video, const BankMatrix& candidates,
                                const ClipPlan& plan, const FeatureChoice& choice, RngStream& stream) {
  check_lambda(choice.lambda);
  if (choice.variant == FeatureVariant::af_res && !model.config.residual) {
    throw ParameterError("variant af_res needs a model trained with the residual connection");
  }
  const auto clips = clip_features(model, video, plan, stream);
  return candidates.ids[argmax_first(fused_similarities(clips, choice, candidates))];
}

// ---- protocols --------------------------------------------------------------

struct ProtocolSpec {
  enum class Kind { full, random_half, subset };
  Kind kind = Kind::full;
  std::size_t subset_size = 0;  // subset only
  std::size_t repeats = 1;
  std::uint64_t seed = 0;

  static ProtocolSpec full(std::uint64_t seed = 0) { return {Kind::full, 0, 1, seed}; }
  static ProtocolSpec random_half(std::size_t repeats = 10, std::uint64_t seed = 0) {
    return {Kind::random_half, 0, repeats, seed};
  }
  static ProtocolSpec subset(std::size_t m, std::size_t repeats = 3, std::uint64_t seed = 0) {
    return {Kind::subset, m, repeats, seed};
  }

  std::string label() const {
    switch (kind) {
      case Kind::full: return "full";
      case Kind::random_half: return "half";
      case Kind::subset:
        return "subset:" + std::to_string(subset_size) + ":" + std::to_string(repeats);
    }
    return "?";
  }

  std::size_t size_for(std::size_t unseen) const {
    switch (kind) {
      case Kind::full: return unseen;
      case Kind::random_half: return unseen / 2;
      case Kind::subset: return subset_size;
    }
    return 0;
  }

  void validate(std::size_t unseen) const {
    if (repeats == 0) throw ParameterError("protocol repeats must be >= 1");
    const std::size_t m = size_for(unseen);
    if (m == 0 || m > unseen) {
      throw ParameterError("protocol " + label() + " needs between 1 and " + std::to_string(unseen) +
                           " categories, got " + std::to_string(m));
    }
  }
};

// "full" | "half" | "subset:M:R"
inline ProtocolSpec parse_protocol(std::string_view text, std::size_t half_repeats = 10) {
  if (text == "full") return ProtocolSpec::full();
  if (text == "half") return ProtocolSpec::random_half(half_repeats);
  if (text.starts_with("subset:")) {
    const std::string rest(text.substr(7));
    const auto colon = rest.find(':');
    try {
      std::size_t used = 0;
      const std::string m_text = rest.substr(0, colon);
      const long long m = std::stoll(m_text, &used);
      if (used != m_text.size() || m <= 0) throw std::invalid_argument("m");
      long long r = 3;
      if (colon != std::string::npos) {
        const std::string r_text = rest.substr(colon + 1);
        r = std::stoll(r_text, &used);
        if (used != r_text.size() || r <= 0) throw std::invalid_argument("r");
      }
      return ProtocolSpec::subset(static_cast<std::size_t>(m), static_cast<std::size_t>(r));
    } catch (const std::logic_error&) {
      // fall through
    }
  }
  throw ParameterError("unknown protocol '" + std::string(text) + "' (expected full|half|subset:M:R)");
}

// Number of m-subsets of n items, saturating at `cap`.
inline std::size_t choose_capped(std::size_t n, std::size_t m, std::size_t cap) {
  if (m > n) return 0;
  m = std::min(m, n - m);
  double c = 1.0;
  for (std::size_t i = 1; i <= m; ++i) {
    c = c * static_cast<double>(n - m + i) / static_cast<double>(i);
    if (c >= static_cast<double>(cap)) return cap;
  }
  return static_cast<std::size_t>(std::llround(c));
}

// Category subsets evaluated by the protocol, each sorted ascending. Random
// draws are distinct while repeats do not exceed the number of possible
// subsets.
inline std::vector<std::vector<std::int64_t>> protocol_subsets(const ProtocolSpec& protocol,
                                                               const std::vector<std::int64_t>& unseen_ids) {
  protocol.validate(unseen_ids.size());
  if (protocol.kind == ProtocolSpec::Kind::full) return {unseen_ids};
  const std::size_t m = protocol.size_for(unseen_ids.size());
  const std::size_t available = choose_capped(unseen_ids.size(), m, protocol.repeats + 1);
  const bool distinct = protocol.repeats <= available;
  RngStream stream = seeded_stream(protocol.seed, "eval/subsets/" + protocol.label());
  std::vector<std::vector<std::int64_t>> out;
  std::set<std::vector<std::int64_t>> taken;
  while (out.size() < protocol.repeats) {
    std::vector<std::int64_t> pool = unseen_ids;
    stream.shuffle(pool.begin(), pool.end());
    pool.resize(m);
    std::sort(pool.begin(), pool.end());
    if (distinct && !taken.insert(pool).second) continue;
    out.push_back(std::move(pool));
  }
  return out;
}

struct EvalRow {
  std::size_t run_id = 0;
  std::string protocol;
  FeatureVariant variant = FeatureVariant::af_otf;
  InterpolationBasis basis = InterpolationBasis::otf;
  double lambda = 0.0;
  std::size_t clips = 1;
  std::uint64_t seed = 0;
  std::size_t subset_index = 0;
  double accuracy = 0.0;  // percent
};

struct AccuracySummary {
  double mean = 0.0;
  double std = 0.0;  // population
  std::size_t runs = 0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  std::size_t clip_count = 0;

  // Summary over rows matching variant (and lambda/basis for af_otf when given).
  AccuracySummary summary(FeatureVariant variant) const {
    std::vector<double> acc;
    for (const EvalRow& r : rows)
      if (r.variant == variant) acc.push_back(r.accuracy);
    return summarize(acc);
  }

  AccuracySummary summary(FeatureVariant variant, double lambda, InterpolationBasis basis) const {
    std::vector<double> acc;
    for (const EvalRow& r : rows)
      if (r.variant == variant && r.lambda == lambda && r.basis == basis) acc.push_back(r.accuracy);
    return summarize(acc);
  }

  static AccuracySummary summarize(const std::vector<double>& acc) {
    AccuracySummary s;
    s.runs = acc.size();
    if (acc.empty()) return s;
    for (double a : acc) s.mean += a;
    s.mean /= static_cast<double>(acc.size());
    double var = 0.0;
    for (double a : acc) var += (a - s.mean) * (a - s.mean);
    s.std = std::sqrt(var / static_cast<double>(acc.size()));
    return s;
  }
};

// Per-clip features of every eval video, sampled once so that every variant
// and interpolation weight is scored on identical clips.
struct EvalCache {
  std::vector<const FrameSequence*> videos;
  std::vector<std::vector<VideoFeatureSet>> clips;
  BankMatrix unseen;
  ClipPlan plan;
  bool residual = false;
};

inline EvalCache build_eval_cache(const Model& model, const Corpus& corpus, const CategoryBank& bank,
                                  const ClipPlan& plan, std::uint64_t seed) {
  plan.validate();
  EvalCache cache;
  cache.plan = plan;
  cache.residual = model.config.residual;
  cache.unseen = bank.embeddings_of(Partition::unseen);
  for (const FrameSequence& v : corpus.videos) {
    if (v.role != VideoRole::eval) continue;
    const CategoryEntry& cat = bank.at(v.category);
    if (cat.partition != Partition::unseen) continue;
    RngStream stream = seeded_stream(seed, "eval/clips/" + std::to_string(v.video_id));
    cache.videos.push_back(&v);
    cache.clips.push_back(clip_features(model, v, plan, stream));
  }
  if (cache.videos.empty()) throw ParameterError("corpus has no eval videos of unseen categories");
  return cache;
}

// Accuracy rows for one feature choice over the protocol's subsets.
inline std::vector<EvalRow> evaluate_cached(const EvalCache& cache, const ProtocolSpec& protocol,
                                            const FeatureChoice& choice) {
  check_lambda(choice.lambda);
  if (choice.variant == FeatureVariant::af_res && !cache.residual) {
    throw ParameterError("variant af_res needs a model trained with the residual connection");
  }
  const auto subsets = protocol_subsets(protocol, cache.unseen.ids);
  std::vector<Vector> sims;
  sims.reserve(cache.videos.size());
  for (const auto& clips : cache.clips) sims.push_back(fused_similarities(clips, choice, cache.unseen));

  std::vector<EvalRow> rows;
  for (std::size_t s = 0; s < subsets.size(); ++s) {
    const auto& subset = subsets[s];
    std::vector<std::size_t> cols;
    for (std::int64_t id : subset) cols.push_back(cache.unseen.row_of(id));
    std::size_t correct = 0, total = 0;
    Vector restricted(cols.size());
    for (std::size_t v = 0; v < cache.videos.size(); ++v) {
      const std::int64_t truth = cache.videos[v]->category;
      if (!std::binary_search(subset.begin(), subset.end(), truth)) continue;
      for (std::size_t k = 0; k < cols.size(); ++k) restricted[k] = sims[v][cols[k]];
      ++total;
      if (subset[argmax_first(restricted)] == truth) ++correct;
    }
    EvalRow row;
    row.run_id = s;
    row.protocol = protocol.label();
    row.variant = choice.variant;
    row.basis = choice.basis;
    row.lambda = choice.lambda;
    row.clips = cache.plan.clips;
    row.seed = protocol.seed;
    row.subset_index = s;
    row.accuracy = total ? 100.0 * static_cast<double>(correct) / static_cast<double>(total) : 0.0;
    rows.push_back(row);
  }
  return rows;
}

inline EvalReport evaluate(const Model& model, const Corpus& corpus, const CategoryBank& bank,
                           const ProtocolSpec& protocol, const FeatureChoice& choice, const ClipPlan& plan) {
  protocol.validate(bank.unseen_count());
  const EvalCache cache = build_eval_cache(model, corpus, bank, plan, protocol.seed);
  EvalReport report;
  report.rows = evaluate_cached(cache, protocol, choice);
  report.clip_count = plan.clips;
  return report;
}

inline void renumber(std::vector<EvalRow>& rows) {
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].run_id = i;
}

// before, after, af_otf (and af_res with the residual connection) on shared
// clips.
inline EvalReport feature_variant_table(const EvalCache& cache, const ProtocolSpec& protocol, double lambda) {
  EvalReport report;
  report.clip_count = cache.plan.clips;
  std::vector<FeatureVariant> variants{FeatureVariant::before, FeatureVariant::after, FeatureVariant::af_otf};
  if (cache.residual) variants.push_back(FeatureVariant::af_res);
  for (FeatureVariant v : variants) {
    auto rows = evaluate_cached(cache, protocol, FeatureChoice{v, lambda, InterpolationBasis::otf});
    report.rows.insert(report.rows.end(), rows.begin(), rows.end());
  }
  renumber(report.rows);
  return report;
}

inline EvalReport feature_variant_table(const Model& model, const Corpus& corpus, const CategoryBank& bank,
                                        const ProtocolSpec& protocol, double lambda, const ClipPlan& plan) {
  protocol.validate(bank.unseen_count());
  return feature_variant_table(build_eval_cache(model, corpus, bank, plan, protocol.seed), protocol, lambda);
}

inline std::vector<double> default_lambda_grid() {
  std::vector<double> grid;
  for (int i = 0; i <= 10; ++i) grid.push_back(i / 10.0);
  return grid;
}

// One af_otf accuracy row per (lambda, protocol run).
inline EvalReport lambda_sweep(const EvalCache& cache, const ProtocolSpec& protocol,
                               const std::vector<double>& grid, InterpolationBasis basis) {
  for (double l : grid) check_lambda(l);
  EvalReport report;
  report.clip_count = cache.plan.clips;
  for (double l : grid) {
    auto rows = evaluate_cached(cache, protocol, FeatureChoice{FeatureVariant::af_otf, l, basis});
    report.rows.insert(report.rows.end(), rows.begin(), rows.end());
  }
  renumber(report.rows);
  return report;
}

inline EvalReport lambda_sweep(const Model& model, const Corpus& corpus, const CategoryBank& bank,
                               const ProtocolSpec& protocol, const std::vector<double>& grid,
                               InterpolationBasis basis, const ClipPlan& plan) {
  protocol.validate(bank.unseen_count());
  return lambda_sweep(build_eval_cache(model, corpus, bank, plan, protocol.seed), protocol, grid, basis);
}

// ---- angle analysis ---------------------------------------------------------

inline double to_degrees(double radians) { return radians * 180.0 / std::numbers::pi; }

struct AngleRow {
  std::int64_t video_id = 0;
  double theta1 = 0.0;  // v_before vs c_cls, degrees
  double theta2 = 0.0;  // v_after vs c_cls
  double theta3 = 0.0;  // v_af_otf vs c_cls
  bool over_90 = false;  // theta1 + theta2 > 90
};

struct AngleReport {
  std::vector<AngleRow> rows;
  double mean_theta1 = 0.0;
  double mean_theta2 = 0.0;
  double mean_theta3 = 0.0;
  std::size_t over_90 = 0;
  std::size_t at_most_90 = 0;
};

inline bool angle_sum_over_90(double theta1_deg, double theta2_deg) { return theta1_deg + theta2_deg > 90.0; }

// Angles of every eval video's features to its own category embedding, one
// uniformly sampled clip of model.config.frames frames.
inline AngleReport angle_report(const Model& model, const Corpus& corpus, const CategoryBank& bank, double lambda) {
  check_lambda(lambda);
  AngleReport report;
  RngStream unused = seeded_stream(0, "angles");
  for (const FrameSequence& v : corpus.videos) {
    if (v.role != VideoRole::eval) continue;
    const Tensor frames = sample_frames(v, model.config.frames, SamplingMode::uniform, unused);
    const VideoFeatureSet fs = video_features(model.params, frames, model.config.residual, lambda);
    const Vector& c = bank.at(v.category).embedding;
    AngleRow row;
    row.video_id = v.video_id;
    row.theta1 = to_degrees(angle_between(fs.v_before, c));
    row.theta2 = to_degrees(angle_between(fs.v_after, c));
    row.theta3 = to_degrees(angle_between(fs.v_af_otf, c));
    row.over_90 = angle_sum_over_90(row.theta1, row.theta2);
    report.rows.push_back(row);
  }
  if (report.rows.empty()) throw ParameterError("corpus has no eval videos");
  for (const AngleRow& r : report.rows) {
    report.mean_theta1 += r.theta1;
    report.mean_theta2 += r.theta2;
    report.mean_theta3 += r.theta3;
    (r.over_90 ? report.over_90 : report.at_most_90) += 1;
  }
  const double n = static_cast<double>(report.rows.size());
  report.mean_theta1 /= n;
  report.mean_theta2 /= n;
  report.mean_theta3 /= n;
  return report;
}

// ---- ordering of variant accuracies ----------------------------------------

struct OrderingFlags {
  bool abnormal = false;      // before > after
  bool refined_best = false;  // af_otf >= max(before, after)

  std::vector<std::string> labels() const {
    std::vector<std::string> out;
    if (abnormal) out.emplace_back("abnormal");
    if (refined_best) out.emplace_back("refined-best");
    if (out.empty()) out.emplace_back("other");
    return out;
  }
};

inline OrderingFlags ordering_check(const std::map<std::string, double>& table) {
  auto get = [&](const char* key) {
    auto it = table.find(key);
    if (it == table.end()) throw ParameterError(std::string("ordering_check: missing variant '") + key + "'");
    return it->second;
  };
  const double before = get("before"), after = get("after"), refined = get("af_otf");
  return OrderingFlags{before > after, refined >= std::max(before, after)};
}

// ---- CSV --------------------------------------------------------------------

inline std::string results_csv(const std::vector<EvalRow>& rows) {
  std::string out = "run_id,protocol,variant,basis,lambda,clips,seed,subset_index,accuracy_percent\n";
  for (const EvalRow& r : rows) {
    out += std::to_string(r.run_id) + "," + r.protocol + "," + std::string(to_string(r.variant)) + "," +
           std::string(to_string(r.basis)) + "," + json_text::format_double(r.lambda) + "," +
           std::to_string(r.clips) + "," + std::to_string(r.seed) + "," + std::to_string(r.subset_index) + "," +
           json_text::format_double(r.accuracy) + "\n";
  }
  return out;
}

inline std::string angles_csv(const AngleReport& report) {
  std::string out = "video_id,theta1_deg,theta2_deg,theta3_deg,sum_bucket\n";
  for (const AngleRow& r : report.rows) {
    out += std::to_string(r.video_id) + "," + json_text::format_double(r.theta1) + "," +
           json_text::format_double(r.theta2) + "," + json_text::format_double(r.theta3) + "," +
           (r.over_90 ? ">90" : "<=90") + "\n";
  }
  return out;
}

}  // namespace oti
