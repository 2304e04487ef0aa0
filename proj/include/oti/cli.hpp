#pragma once

// Command-line front end: gen, train, eval, sweep, gradcheck, angles.
// Exit codes: 0 success, 1 usage, 2 config or data format, 3 numeric failure.

#include <cstdio>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "oti/config.hpp"
#include "oti/error.hpp"
#include "oti/evaluator.hpp"
#include "oti/json_text.hpp"
#include "oti/synthetic_corpus.hpp"
#include "oti/trainer.hpp"

namespace oti::cli {

enum ExitCode : int { ok = 0, usage = 1, format = 2, numeric = 3 };

inline const std::vector<std::string>& commands() {
  static const std::vector<std::string> names{"gen", "train", "eval", "sweep", "gradcheck", "angles"};
  return names;
}

// Flag values; unset flags leave the config untouched.
struct Overrides {
  std::optional<std::string> out;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> protocol;
  std::optional<std::string> variant;
  std::optional<double> lambda;
  std::optional<std::size_t> clips;
  std::optional<std::string> basis;
};

// Flags win over file values. --seed replaces the global seed and every
// section seed.
inline void apply(const Overrides& o, ExperimentConfig& c) {
  if (o.out) c.paths.out = *o.out;
  if (o.seed) c.seed = c.corpus.seed = c.train.seed = c.eval.seed = *o.seed;
  if (o.protocol) c.eval.protocol = *o.protocol;
  if (o.variant) c.eval.variants = {*o.variant};
  if (o.lambda) c.eval.lambda = *o.lambda;
  if (o.clips) c.eval.clips = *o.clips;
  if (o.basis) c.eval.basis = *o.basis;
}

inline std::string resolved_config_text(const ExperimentConfig& c) { return config_to_json(c).dump(2) + "\n"; }

inline std::string train_report_csv(const TrainReport& report) {
  std::string out = "epoch,total,cls,oti,match\n";
  for (std::size_t e = 0; e < report.epochs.size(); ++e) {
    const EpochLosses& l = report.epochs[e];
    out += std::to_string(e) + "," + json_text::format_double(l.total) + "," + json_text::format_double(l.cls) +
           "," + json_text::format_double(l.oti) + "," + json_text::format_double(l.match) + "\n";
  }
  return out;
}

inline void print_summary(std::ostream& out, const std::vector<EvalRow>& rows) {
  // Rows arrive grouped by (variant, basis, lambda); one summary line per group.
  std::size_t start = 0;
  while (start < rows.size()) {
    std::size_t end = start;
    std::vector<double> acc;
    while (end < rows.size() && rows[end].variant == rows[start].variant && rows[end].basis == rows[start].basis &&
           rows[end].lambda == rows[start].lambda) {
      acc.push_back(rows[end].accuracy);
      ++end;
    }
    const AccuracySummary s = EvalReport::summarize(acc);
    char line[160];
    std::snprintf(line, sizeof line, "%-7s basis=%-5s lambda=%.3g  %6.2f%% +- %.2f (%zu runs)\n",
                  std::string(to_string(rows[start].variant)).c_str(),
                  std::string(to_string(rows[start].basis)).c_str(), rows[start].lambda, s.mean, s.std, s.runs);
    out << line;
    start = end;
  }
}

class Runner {
 public:
  Runner(const ExperimentConfig& config, std::ostream& out) : c_(config), out_(out) {}

  int run(const std::string& command) {
    std::filesystem::create_directories(c_.paths.out);
    json_text::write_file(path(command + "_config.json"), resolved_config_text(c_));
    if (command == "gen") return gen();
    if (command == "train") return train_cmd();
    if (command == "eval") return eval();
    if (command == "sweep") return sweep();
    if (command == "gradcheck") return gradcheck();
    if (command == "angles") return angles();
    throw ParameterError("unknown command '" + command + "'");
  }

 private:
  std::string path(const std::string& name) const { return c_.paths.out + "/" + name; }

  int gen() {
    const Corpus corpus = generate(c_.corpus);
    save(corpus, path("corpus.json"));
    out_ << "wrote " << path("corpus.json") << " (" << corpus.videos.size() << " videos, "
         << corpus.bank.seen_count() << " seen / " << corpus.bank.unseen_count() << " unseen categories)\n";
    return ok;
  }

  int train_cmd() {
    const Corpus corpus = load_corpus(c_.paths.corpus_path());
    const TrainReport report = train(corpus, c_.train, TrainHooks{nullptr, [&](std::size_t e, const EpochLosses& l) {
                                                                    char line[128];
                                                                    std::snprintf(line, sizeof line,
                                                                                  "epoch %3zu  loss %.6f\n", e,
                                                                                  l.total);
                                                                    out_ << line;
                                                                  }});
    save_model(report.model, path("model.json"));
    json_text::write_file(path("train_report.csv"), train_report_csv(report));
    out_ << "wrote " << path("model.json") << " and " << path("train_report.csv") << "\n";
    return ok;
  }

  struct Loaded {
    Corpus corpus;
    Model model;
    ProtocolSpec protocol;
    EvalCache cache;
  };

  Loaded load_for_eval() {
    Loaded l{load_corpus(c_.paths.corpus_path()), load_model(c_.paths.model_path()), c_.eval.protocol_spec(), {}};
    if (l.model.config.model.dim != l.corpus.dim()) {
      throw FormatError("model dim " + std::to_string(l.model.config.model.dim) + " does not match corpus d " +
                        std::to_string(l.corpus.dim()));
    }
    l.protocol.validate(l.corpus.bank.unseen_count());
    const ClipPlan plan{l.model.config.frames, c_.eval.clips, c_.eval.sampling};
    l.cache = build_eval_cache(l.model, l.corpus, l.corpus.bank, plan, l.protocol.seed);
    return l;
  }

  int eval() {
    const Loaded l = load_for_eval();
    std::vector<EvalRow> rows;
    for (const FeatureChoice& choice : c_.eval.choices()) {
      auto part = evaluate_cached(l.cache, l.protocol, choice);
      rows.insert(rows.end(), part.begin(), part.end());
    }
    renumber(rows);
    json_text::write_file(path("results.csv"), results_csv(rows));
    print_summary(out_, rows);
    out_ << "wrote " << path("results.csv") << "\n";
    return ok;
  }

  int sweep() {
    const Loaded l = load_for_eval();
    std::vector<EvalRow> rows;
    for (InterpolationBasis b : {InterpolationBasis::otf, InterpolationBasis::after}) {
      const EvalReport r = lambda_sweep(l.cache, l.protocol, c_.eval.lambda_grid, b);
      rows.insert(rows.end(), r.rows.begin(), r.rows.end());
    }
    renumber(rows);
    json_text::write_file(path("sweep.csv"), results_csv(rows));
    print_summary(out_, rows);
    out_ << "wrote " << path("sweep.csv") << "\n";
    return ok;
  }

  int gradcheck() {
    GradCheckSetup setup;
    setup.model.layers = c_.train.model.layers;
    setup.model.positional = c_.train.model.positional;
    setup.residual = c_.train.residual;
    setup.lambda = c_.train.lambda_train;
    setup.loss = c_.train.loss;
    setup.seed = c_.train.seed;
    const GradCheckResult r = gradient_check_detailed(setup);
    for (std::size_t i = 0; i < r.names.size(); ++i) {
      char line[128];
      std::snprintf(line, sizeof line, "  %-20s %.3e\n", r.names[i].c_str(), r.relative_errors[i]);
      out_ << line;
    }
    char line[96];
    std::snprintf(line, sizeof line, "max relative error %.3e\n", r.max_relative_error);
    out_ << line;
    return r.max_relative_error < 1e-4 ? ok : numeric;
  }

  int angles() {
    const Corpus corpus = load_corpus(c_.paths.corpus_path());
    const Model model = load_model(c_.paths.model_path());
    const AngleReport r = angle_report(model, corpus, corpus.bank, c_.eval.lambda);
    json_text::write_file(path("angles.csv"), angles_csv(r));
    char line[160];
    std::snprintf(line, sizeof line, "mean theta1 %.2f  theta2 %.2f  theta3 %.2f  (sum > 90: %zu, <= 90: %zu)\n",
                  r.mean_theta1, r.mean_theta2, r.mean_theta3, r.over_90, r.at_most_90);
    out_ << line << "wrote " << path("angles.csv") << "\n";
    return ok;
  }

  ExperimentConfig c_;
  std::ostream& out_;
};

// Resolves the config (file, then flags), validates it and runs `command`.
inline int execute(const std::string& command, const std::optional<std::string>& config_path,
                   const Overrides& overrides, std::ostream& out, std::ostream& err) {
  try {
    ExperimentConfig config = config_path ? parse_config(*config_path) : config_from_json("");
    apply(overrides, config);
    config.validate();
    return Runner(config, out).run(command);
  } catch (const NumericFailure& e) {
    err << "numeric failure: " << e.what() << "\n";
    return numeric;
  } catch (const NumericDomainError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return numeric;
  } catch (const DegenerateVectorError& e) {
    err << "numeric failure: " << e.what() << "\n";
    return numeric;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return format;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << e.what() << "\n";
    return format;
  }
}

inline int main(int argc, char** argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Orthogonal temporal interpolation experiments on a synthetic zero-shot video benchmark", "oti"};
  app.require_subcommand(1, 1);
  std::optional<std::string> config_path;
  Overrides o;
  auto common = [&](CLI::App* sub, bool eval_flags) {
    sub->add_option("--config", config_path, "Experiment config (JSON)");
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--seed", o.seed, "Global seed; replaces every section seed");
    if (!eval_flags) return;
    sub->add_option("--protocol", o.protocol, "full | half | subset:M:R");
    sub->add_option("--variant", o.variant, "before | after | af_res | af_otf");
    sub->add_option("--lambda", o.lambda, "Interpolation weight in [0, 1]");
    sub->add_option("--clips", o.clips, "Clips per eval video");
    sub->add_option("--basis", o.basis, "otf | after");
  };
  const char* help[] = {"Generate the synthetic corpus",  "Train the temporal module",
                        "Evaluate feature variants",      "Sweep the interpolation weight for both bases",
                        "Check gradients against finite differences", "Write per-video feature angles"};
  std::string chosen;
  for (std::size_t i = 0; i < commands().size(); ++i) {
    const std::string& name = commands()[i];
    CLI::App* sub = app.add_subcommand(name, help[i]);
    common(sub, name == "eval" || name == "sweep" || name == "angles");
    sub->callback([&chosen, name] { chosen = name; });
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return ok;
  } catch (const CLI::CallForAllHelp& e) {
    out << app.help("", CLI::AppFormatMode::All);
    return ok;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n" << "run 'oti --help' for usage\n";
    return usage;
  }
  return execute(chosen, config_path, o, out, err);
}

}  // namespace oti::cli
