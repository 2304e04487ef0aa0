#pragma once

// Experiment configuration: one JSON document with corpus, model, train,
// eval and paths sections. Unknown keys are rejected; omitted keys take
// their defaults; section seeds default to the global seed.

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "oti/error.hpp"
#include "oti/evaluator.hpp"
#include "oti/json_text.hpp"
#include "oti/synthetic_corpus.hpp"
#include "oti/trainer.hpp"

namespace oti {

inline constexpr int kConfigFormatVersion = 1;

struct EvalConfig {
  std::string protocol = "full";
  std::size_t half_repeats = 10;
  std::vector<std::string> variants{"before", "after", "af_otf"};
  double lambda = 1.0;
  std::vector<double> lambda_grid = default_lambda_grid();
  std::string basis = "otf";
  std::size_t clips = 3;
  SamplingMode sampling = SamplingMode::random;
  std::uint64_t seed = 0;

  ProtocolSpec protocol_spec() const {
    ProtocolSpec p = parse_protocol(protocol, half_repeats);
    p.seed = seed;
    return p;
  }
  std::vector<FeatureChoice> choices() const {
    std::vector<FeatureChoice> out;
    for (const std::string& v : variants) out.push_back({parse_variant(v), lambda, parse_basis(basis)});
    return out;
  }

  void validate() const {
    auto wrap = [](const char* field, auto&& fn) {
      try {
        fn();
      } catch (const ParameterError& e) {
        throw ParameterError(std::string(field) + ": " + e.what());
      }
    };
    wrap("eval.protocol", [&] { parse_protocol(protocol, half_repeats); });
    wrap("eval.variants", [&] {
      if (variants.empty()) throw ParameterError("list must not be empty");
      for (const std::string& v : variants) parse_variant(v);
    });
    wrap("eval.basis", [&] { parse_basis(basis); });
    wrap("eval.lambda", [&] { check_lambda(lambda); });
    wrap("eval.lambda_grid", [&] {
      if (lambda_grid.empty()) throw ParameterError("grid must not be empty");
      for (double l : lambda_grid) check_lambda(l);
    });
    if (clips == 0) throw ParameterError("eval.clips must be >= 1");
    if (half_repeats == 0) throw ParameterError("eval.half_repeats must be >= 1");
  }
};

struct PathsConfig {
  std::string out = "out";
  std::string corpus;  // empty: <out>/corpus.json
  std::string model;   // empty: <out>/model.json

  std::string corpus_path() const { return corpus.empty() ? out + "/corpus.json" : corpus; }
  std::string model_path() const { return model.empty() ? out + "/model.json" : model; }
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  CorpusSpec corpus;
  TrainConfig train;
  EvalConfig eval;
  PathsConfig paths;

  // Cross-section checks; every field error names its path.
  void validate() const {
    corpus.validate();
    train.validate();
    eval.validate();
    if (train.model.dim != corpus.dim) {
      throw ParameterError("model.dim (" + std::to_string(train.model.dim) + ") must equal corpus.d (" +
                           std::to_string(corpus.dim) + ")");
    }
    if (train.frames > corpus.frames_per_video) {
      throw ParameterError("train.frames must not exceed corpus.frames_per_video");
    }
    if (train.model.max_frames > corpus.frames_per_video) {
      throw ParameterError("model.max_frames must not exceed corpus.frames_per_video");
    }
  }
};

// Seed overrides collected from section keys and flags before resolution.
struct SeedOverrides {
  std::optional<std::uint64_t> corpus, train, eval;
};

inline nlohmann::json corpus_to_config_json(const CorpusSpec& s) {
  return {{"d", s.dim},
          {"seen", s.seen},
          {"unseen", s.unseen},
          {"twin_fraction", s.twin_fraction},
          {"videos_per_seen", s.videos_per_seen},
          {"videos_per_unseen", s.videos_per_unseen},
          {"frames_per_video", s.frames_per_video},
          {"atoms_per_category", s.atoms_per_category},
          {"atom_bank_size", s.atom_bank_size},
          {"spatial_weight", s.spatial_weight},
          {"temporal_weight", s.temporal_weight},
          {"noise", s.noise},
          {"seed", s.seed}};
}

inline nlohmann::json config_to_json(const ExperimentConfig& c) {
  nlohmann::json model = encoder_to_json(c.train.model);
  model.erase("dim");  // tied to corpus.d
  return {{"version", kConfigFormatVersion},
          {"seed", c.seed},
          {"corpus", corpus_to_config_json(c.corpus)},
          {"model", model},
          {"train", train_to_json(c.train)},
          {"eval",
           {{"protocol", c.eval.protocol},
            {"half_repeats", c.eval.half_repeats},
            {"variants", c.eval.variants},
            {"lambda", c.eval.lambda},
            {"lambda_grid", c.eval.lambda_grid},
            {"basis", c.eval.basis},
            {"clips", c.eval.clips},
            {"sampling", std::string(to_string(c.eval.sampling))},
            {"seed", c.eval.seed}}},
          {"paths", {{"out", c.paths.out}, {"corpus", c.paths.corpus}, {"model", c.paths.model}}}};
}

// Parses a config document over the defaults. Whitespace-only text is an
// empty document. Section seeds absent from the text follow the global seed.
inline ExperimentConfig config_from_json(const std::string& text, const std::string& source = "config") {
  using namespace json_text;
  ExperimentConfig c;
  if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
    c.train.model.dim = c.corpus.dim;
    return c;
  }
  const json doc = parse(text, source);
  ObjectReader top(doc, "");
  if (const json* v = top.child("version")) {
    if (!v->is_number_integer() || v->get<std::int64_t>() != kConfigFormatVersion) {
      throw FormatError("version: unsupported config version " + v->dump() + ", expected version " +
                        std::to_string(kConfigFormatVersion));
    }
  }
  top.read("seed", c.seed);
  SeedOverrides seeds;
  if (const json* s = top.child("corpus")) {
    ObjectReader r(*s, "corpus");
    r.read("d", c.corpus.dim);
    r.read("seen", c.corpus.seen);
    r.read("unseen", c.corpus.unseen);
    r.read("twin_fraction", c.corpus.twin_fraction);
    r.read("videos_per_seen", c.corpus.videos_per_seen);
    r.read("videos_per_unseen", c.corpus.videos_per_unseen);
    r.read("frames_per_video", c.corpus.frames_per_video);
    r.read("atoms_per_category", c.corpus.atoms_per_category);
    r.read("atom_bank_size", c.corpus.atom_bank_size);
    r.read("spatial_weight", c.corpus.spatial_weight);
    r.read("temporal_weight", c.corpus.temporal_weight);
    r.read("noise", c.corpus.noise);
    std::uint64_t seed = 0;
    if (r.read("seed", seed)) seeds.corpus = seed;
    r.finish();
  }
  if (const json* s = top.child("model")) {
    ObjectReader r(*s, "model");
    r.read("layers", c.train.model.layers);
    r.read("heads", c.train.model.heads);
    r.read("positional", c.train.model.positional);
    r.read("max_frames", c.train.model.max_frames);
    r.read("init_std", c.train.model.init_std);
    r.read("zero_init_output", c.train.model.zero_init_output);
    r.finish();
  }
  if (const json* s = top.child("train")) {
    ObjectReader r(*s, "train");
    train_from_json(r, c.train);
    std::uint64_t seed = 0;
    if (r.read("seed", seed)) seeds.train = seed;
    r.finish();
  }
  if (const json* s = top.child("eval")) {
    ObjectReader r(*s, "eval");
    r.read("protocol", c.eval.protocol);
    r.read("half_repeats", c.eval.half_repeats);
    if (const json* v = r.child("variants")) {
      if (!v->is_array()) throw FormatError("eval.variants: expected an array of strings");
      c.eval.variants.clear();
      for (std::size_t i = 0; i < v->size(); ++i) {
        c.eval.variants.push_back(as_string((*v)[i], "eval.variants[" + std::to_string(i) + "]"));
      }
    }
    r.read("lambda", c.eval.lambda);
    r.read("lambda_grid", c.eval.lambda_grid);
    r.read("basis", c.eval.basis);
    r.read("clips", c.eval.clips);
    std::string sampling;
    if (r.read("sampling", sampling)) {
      try {
        c.eval.sampling = parse_sampling(sampling);
      } catch (const ParameterError& e) {
        throw ParameterError(std::string("eval.sampling: ") + e.what());
      }
    }
    std::uint64_t seed = 0;
    if (r.read("seed", seed)) seeds.eval = seed;
    r.finish();
  }
  if (const json* s = top.child("paths")) {
    ObjectReader r(*s, "paths");
    r.read("out", c.paths.out);
    r.read("corpus", c.paths.corpus);
    r.read("model", c.paths.model);
    r.finish();
  }
  top.finish();
  c.train.model.dim = c.corpus.dim;
  c.corpus.seed = seeds.corpus.value_or(c.seed);
  c.train.seed = seeds.train.value_or(c.seed);
  c.eval.seed = seeds.eval.value_or(c.seed);
  return c;
}

inline ExperimentConfig parse_config(const std::string& path) {
  std::ifstream probe(path);
  if (!probe) throw FormatError("config file '" + path + "' not found");
  return config_from_json(json_text::read_file(path), path);
}

}  // namespace oti
