#pragma once

// Desk-scale benchmark: videos of frame embeddings whose categories differ
// by a spatial prototype and by the order of shared temporal atoms.
//
// Frame t of a category-c video is
//   normalize(w_s p_c + w_t a[seq_c(t mod M)] + noise_t)
// and the category embedding is
//   normalize(w_s p_c + w_t sum_t w(t) a[seq_c(t)]),  w(t) = (M - t) / M.
// Twin categories share p_c and the atom multiset but not the order, so the
// frame mean cannot tell them apart while order-aware features can.

#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "oti/category_bank.hpp"
#include "oti/error.hpp"
#include "oti/feature_geometry.hpp"
#include "oti/json_text.hpp"
#include "oti/rng.hpp"
#include "oti/temporal_encoder.hpp"
#include "oti/tensor.hpp"

namespace oti {

struct CorpusSpec {
  std::size_t dim = 64;
  std::size_t seen = 20;
  std::size_t unseen = 10;
  double twin_fraction = 0.5;
  std::size_t videos_per_seen = 40;
  std::size_t videos_per_unseen = 25;
  std::size_t frames_per_video = 16;
  std::size_t atoms_per_category = 8;
  std::size_t atom_bank_size = 12;
  double spatial_weight = 1.0;
  double temporal_weight = 1.0;
  double noise = 0.1;
  std::uint64_t seed = 0;

  void validate() const {
    if (dim < 2) throw ParameterError("corpus.d must be >= 2");
    if (seen < 2) throw ParameterError("corpus.seen must be >= 2");
    if (unseen < 2) throw ParameterError("corpus.unseen must be >= 2");
    if (!(twin_fraction >= 0.0 && twin_fraction <= 1.0)) {
      throw ParameterError("corpus.twin_fraction must lie in [0, 1]");
    }
    if (videos_per_seen == 0 || videos_per_unseen == 0) {
      throw ParameterError("corpus.videos_per_seen and corpus.videos_per_unseen must be >= 1");
    }
    if (atoms_per_category < 1) throw ParameterError("corpus.atoms_per_category must be >= 1");
    if (frames_per_video < atoms_per_category) {
      throw ParameterError("corpus.frames_per_video must be >= corpus.atoms_per_category");
    }
    if (atom_bank_size < 1) throw ParameterError("corpus.atom_bank_size must be >= 1");
    if (!(noise >= 0.0) || !std::isfinite(noise)) throw ParameterError("corpus.noise must be >= 0");
    if (!std::isfinite(spatial_weight) || !std::isfinite(temporal_weight)) {
      throw ParameterError("corpus weights must be finite");
    }
    if ((twin_count(seen) > 0 || twin_count(unseen) > 0) && atoms_per_category < 2) {
      throw ParameterError("twin categories need corpus.atoms_per_category >= 2");
    }
  }

  // Categories of a partition that belong to a twin pair (always even).
  std::size_t twin_count(std::size_t partition_size) const {
    const auto paired = static_cast<std::size_t>(std::lround(twin_fraction * static_cast<double>(partition_size)));
    return 2 * (std::min(paired, partition_size) / 2);
  }

  friend bool operator==(const CorpusSpec&, const CorpusSpec&) = default;
};

// Ground-truth construction of every category.
struct CategoryDesign {
  Tensor atoms;  // K x d, unit rows
  std::vector<Vector> prototypes;
  std::vector<std::vector<std::size_t>> sequences;
  std::vector<std::int64_t> twin_of;  // -1 when unpaired
  std::vector<Partition> partitions;
};

inline Vector random_unit(RngStream& stream, std::size_t d) {
  for (;;) {
    Vector v(d);
    for (double& x : v) x = stream.normal();
    if (norm(v) > 1e-6) return l2_normalize(v);
  }
}

inline CategoryDesign design_categories(const CorpusSpec& spec, RngStream& stream) {
  spec.validate();
  const std::size_t d = spec.dim, K = spec.atom_bank_size, M = spec.atoms_per_category;
  CategoryDesign design;
  design.atoms = Tensor::matrix(K, d);
  for (std::size_t k = 0; k < K; ++k) {
    Vector a = random_unit(stream, d);
    std::copy(a.begin(), a.end(), design.atoms.row_span(k).begin());
  }
  auto draw_sequence = [&] {
    std::vector<std::size_t> seq;
    if (M <= K) {
      std::vector<std::size_t> pool(K);
      std::iota(pool.begin(), pool.end(), 0);
      stream.shuffle(pool.begin(), pool.end());
      seq.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(M));
    } else {
      for (std::size_t t = 0; t < M; ++t) seq.push_back(stream.integer(0, K));
    }
    return seq;
  };
  const std::size_t total = spec.seen + spec.unseen;
  for (std::size_t c = 0; c < total; ++c) {
    const bool is_seen = c < spec.seen;
    const std::size_t local = is_seen ? c : c - spec.seen;
    const std::size_t twins = spec.twin_count(is_seen ? spec.seen : spec.unseen);
    design.partitions.push_back(is_seen ? Partition::seen : Partition::unseen);
    if (local < twins && local % 2 == 1) {
      // Second member of a pair: same prototype, same atoms, new order.
      const std::size_t base = c - 1;
      std::vector<std::size_t> seq = design.sequences[base];
      if (std::adjacent_find(seq.begin(), seq.end(), std::not_equal_to<>()) == seq.end()) {
        throw ParameterError("cannot reorder a twin whose atoms are all identical");
      }
      do {
        stream.shuffle(seq.begin(), seq.end());
      } while (seq == design.sequences[base]);
      design.prototypes.push_back(design.prototypes[base]);
      design.sequences.push_back(std::move(seq));
      design.twin_of.push_back(static_cast<std::int64_t>(base));
      design.twin_of[base] = static_cast<std::int64_t>(c);
    } else {
      design.prototypes.push_back(random_unit(stream, d));
      design.sequences.push_back(draw_sequence());
      design.twin_of.push_back(-1);
    }
  }
  return design;
}

inline Vector category_embedding(const CorpusSpec& spec, const CategoryDesign& design,
                                 std::size_t c) {
  const std::size_t d = spec.dim, M = spec.atoms_per_category;
  Vector e(d);
  for (std::size_t j = 0; j < d; ++j) e[j] = spec.spatial_weight * design.prototypes[c][j];
  for (std::size_t t = 0; t < M; ++t) {
    const double w = static_cast<double>(M - t) / static_cast<double>(M);
    auto atom = design.atoms.row_span(design.sequences[c][t]);
    for (std::size_t j = 0; j < d; ++j) e[j] += spec.temporal_weight * w * atom[j];
  }
  return l2_normalize(e);
}

inline std::string category_name(const CategoryDesign& design, std::size_t c) {
  std::string name = "category-" + std::to_string(c);
  if (design.twin_of[c] >= 0) name += "-twin-" + std::to_string(design.twin_of[c]);
  return name;
}

inline CategoryBank bank_from_design(const CorpusSpec& spec, const CategoryDesign& design) {
  std::vector<CategoryEntry> entries;
  for (std::size_t c = 0; c < design.prototypes.size(); ++c) {
    entries.push_back(CategoryEntry{static_cast<std::int64_t>(c), category_name(design, c),
                                    category_embedding(spec, design, c), design.partitions[c]});
  }
  return CategoryBank(std::move(entries));
}

// Bank of the corpus generated from `spec` when `stream` is seeded the same.
inline CategoryBank build_bank(const CorpusSpec& spec, RngStream& stream) {
  return bank_from_design(spec, design_categories(spec, stream));
}

// Frames for a prototype and atom order; `noise` holds one L x d row per
// frame, already scaled.
inline Tensor render_frames(const CorpusSpec& spec, const Tensor& atoms, std::span<const double> prototype,
                            std::span<const std::size_t> sequence, const Tensor& noise) {
  const std::size_t L = noise.rows(), d = spec.dim, M = sequence.size();
  Tensor frames = Tensor::matrix(L, d);
  Vector f(d);
  for (std::size_t t = 0; t < L; ++t) {
    auto atom = atoms.row_span(sequence[t % M]);
    for (std::size_t j = 0; j < d; ++j) {
      f[j] = spec.spatial_weight * prototype[j] + spec.temporal_weight * atom[j] + noise(t, j);
    }
    Vector unit = l2_normalize(f);
    std::copy(unit.begin(), unit.end(), frames.row_span(t).begin());
  }
  return frames;
}

struct Corpus {
  CategoryBank bank;
  std::vector<FrameSequence> videos;

  std::size_t dim() const { return bank.dim(); }

  std::vector<const FrameSequence*> videos_with(VideoRole role) const {
    std::vector<const FrameSequence*> out;
    for (const FrameSequence& v : videos)
      if (v.role == role) out.push_back(&v);
    return out;
  }

  friend bool operator==(const Corpus&, const Corpus&) = default;
};

inline Corpus generate(const CorpusSpec& spec) {
  RngStream stream = seeded_stream(spec.seed, "corpus");
  const CategoryDesign design = design_categories(spec, stream);
  Corpus corpus;
  corpus.bank = bank_from_design(spec, design);
  std::int64_t next_id = 0;
  for (std::size_t c = 0; c < design.prototypes.size(); ++c) {
    const bool is_seen = design.partitions[c] == Partition::seen;
    const std::size_t count = is_seen ? spec.videos_per_seen : spec.videos_per_unseen;
    for (std::size_t v = 0; v < count; ++v) {
      Tensor noise = stream.normal_tensor({spec.frames_per_video, spec.dim}, spec.noise);
      FrameSequence seq;
      seq.frames = render_frames(spec, design.atoms, design.prototypes[c], design.sequences[c], noise);
      seq.video_id = next_id++;
      seq.category = static_cast<std::int64_t>(c);
      seq.role = is_seen ? VideoRole::train : VideoRole::eval;
      corpus.videos.push_back(std::move(seq));
    }
  }
  return corpus;
}

enum class SamplingMode { random, uniform };

inline std::string_view to_string(SamplingMode m) {
  return m == SamplingMode::random ? "random" : "uniform";
}

inline SamplingMode parse_sampling(std::string_view s) {
  if (s == "random") return SamplingMode::random;
  if (s == "uniform") return SamplingMode::uniform;
  throw ParameterError("unknown sampling mode '" + std::string(s) + "' (expected random|uniform)");
}

// One index per equal segment of [0, L): the segment centre (uniform) or a
// uniform draw inside the segment (random). Order-preserving.
inline std::vector<std::size_t> sample_indices(std::size_t L, std::size_t T, SamplingMode mode,
                                               RngStream& stream) {
  if (T == 0) throw ParameterError("sample_frames: T must be >= 1");
  if (T > L) {
    throw ParameterError("sample_frames: T = " + std::to_string(T) + " exceeds video length " +
                         std::to_string(L));
  }
  std::vector<std::size_t> idx(T);
  for (std::size_t i = 0; i < T; ++i) {
    if (mode == SamplingMode::uniform) {
      idx[i] = static_cast<std::size_t>(std::floor((static_cast<double>(i) + 0.5) *
                                                   static_cast<double>(L) / static_cast<double>(T)));
    } else {
      const std::size_t lo = i * L / T, hi = (i + 1) * L / T;
      idx[i] = stream.integer(lo, hi);
    }
  }
  return idx;
}

inline Tensor sample_frames(const FrameSequence& video, std::size_t T, SamplingMode mode,
                            RngStream& stream) {
  const auto idx = sample_indices(video.length(), T, mode, stream);
  Tensor out = Tensor::matrix(T, video.dim());
  for (std::size_t i = 0; i < T; ++i) {
    auto src = video.frames.row_span(idx[i]);
    std::copy(src.begin(), src.end(), out.row_span(i).begin());
  }
  return out;
}

inline constexpr int kCorpusFormatVersion = 1;

inline std::string corpus_to_json(const Corpus& corpus) {
  using json_text::append_array;
  using json_text::quote;
  std::string out;
  out += "{\n\"version\": " + std::to_string(kCorpusFormatVersion) + ",\n";
  out += "\"d\": " + std::to_string(corpus.dim()) + ",\n";
  out += "\"categories\": [\n";
  const auto& entries = corpus.bank.entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const CategoryEntry& e = entries[i];
    out += "{\"id\": " + std::to_string(e.id) + ", \"name\": " + quote(e.name) +
           ", \"partition\": " + quote(to_string(e.partition)) + ", \"embedding\": ";
    append_array(out, e.embedding);
    out += i + 1 < entries.size() ? "},\n" : "}\n";
  }
  out += "],\n\"videos\": [\n";
  for (std::size_t i = 0; i < corpus.videos.size(); ++i) {
    const FrameSequence& v = corpus.videos[i];
    out += "{\"id\": " + std::to_string(v.video_id) + ", \"category\": " + std::to_string(v.category) +
           ", \"role\": " + quote(v.role == VideoRole::train ? "train" : "eval") + ", \"frames\": [";
    for (std::size_t t = 0; t < v.length(); ++t) {
      if (t) out += ',';
      append_array(out, v.frames.row_span(t));
    }
    out += i + 1 < corpus.videos.size() ? "]},\n" : "]}\n";
  }
  out += "]\n}\n";
  return out;
}

inline Corpus corpus_from_json(const std::string& text, const std::string& source = "corpus") {
  using namespace json_text;
  const json doc = parse(text, source);
  if (!doc.is_object()) throw FormatError(source + ": top level must be an object");
  check_version(doc, kCorpusFormatVersion, source);
  const std::int64_t d = as_int(field(doc, "d", source), source + ".d");
  if (d <= 0) throw FormatError(source + ".d: must be positive");
  const json& cats = field(doc, "categories", source);
  if (!cats.is_array()) throw FormatError(source + ".categories: expected an array");
  std::vector<CategoryEntry> entries;
  for (std::size_t i = 0; i < cats.size(); ++i) {
    const std::string path = source + ".categories[" + std::to_string(i) + "]";
    CategoryEntry e;
    e.id = as_int(field(cats[i], "id", path), path + ".id");
    e.name = as_string(field(cats[i], "name", path), path + ".name");
    const std::string part = as_string(field(cats[i], "partition", path), path + ".partition");
    if (part != "seen" && part != "unseen") {
      throw FormatError(path + ".partition: expected \"seen\" or \"unseen\"");
    }
    e.partition = parse_partition(part);
    e.embedding = as_doubles(field(cats[i], "embedding", path), path + ".embedding",
                             static_cast<std::size_t>(d));
    entries.push_back(std::move(e));
  }
  Corpus corpus;
  try {
    corpus.bank = CategoryBank(std::move(entries));
  } catch (const Error& e) {
    throw FormatError(source + ".categories: " + e.what());
  }
  const json& vids = field(doc, "videos", source);
  if (!vids.is_array()) throw FormatError(source + ".videos: expected an array");
  for (std::size_t i = 0; i < vids.size(); ++i) {
    const std::string path = source + ".videos[" + std::to_string(i) + "]";
    FrameSequence v;
    v.video_id = as_int(field(vids[i], "id", path), path + ".id");
    v.category = as_int(field(vids[i], "category", path), path + ".category");
    const CategoryEntry* cat = corpus.bank.find(v.category);
    if (!cat) throw FormatError(path + ".category: unknown category " + std::to_string(v.category));
    const std::string role = as_string(field(vids[i], "role", path), path + ".role");
    if (role == "train") {
      v.role = VideoRole::train;
    } else if (role == "eval") {
      v.role = VideoRole::eval;
    } else {
      throw FormatError(path + ".role: expected \"train\" or \"eval\"");
    }
    if ((v.role == VideoRole::train) != (cat->partition == Partition::seen)) {
      throw FormatError(path + ".role: train videos must belong to seen categories and eval videos to unseen ones");
    }
    const json& frames = field(vids[i], "frames", path);
    if (!frames.is_array() || frames.empty()) throw FormatError(path + ".frames: expected a non-empty array");
    Vector flat;
    for (std::size_t t = 0; t < frames.size(); ++t) {
      Vector row = as_doubles(frames[t], path + ".frames[" + std::to_string(t) + "]",
                              static_cast<std::size_t>(d));
      flat.insert(flat.end(), row.begin(), row.end());
    }
    v.frames = Tensor({frames.size(), static_cast<std::size_t>(d)}, std::move(flat));
    corpus.videos.push_back(std::move(v));
  }
  return corpus;
}

inline void save(const Corpus& corpus, const std::string& path) {
  json_text::write_file(path, corpus_to_json(corpus));
}

inline Corpus load_corpus(const std::string& path) {
  return corpus_from_json(json_text::read_file(path), path);
}

}  // namespace oti
