#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "oti/evaluator.hpp"
#include "support/oracles.hpp"

namespace {

using oti::FeatureChoice;
using oti::FeatureVariant;
using oti::InterpolationBasis;
using oti::ProtocolSpec;
using oti::Vector;

oti::CorpusSpec small_spec() {
  oti::CorpusSpec s;
  s.dim = 16;
  s.seen = 6;
  s.unseen = 10;
  s.videos_per_seen = 2;
  s.videos_per_unseen = 4;
  s.frames_per_video = 8;
  s.atoms_per_category = 4;
  s.atom_bank_size = 6;
  s.noise = 0.3;
  s.seed = 4;
  return s;
}

oti::Model random_model(bool residual = false, std::size_t layers = 1, bool positional = true) {
  oti::Model m;
  m.config.model = oti::EncoderConfig{.dim = 16, .layers = layers, .heads = 4, .positional = positional,
                                      .max_frames = 4, .init_std = 0.3, .zero_init_output = false};
  m.config.frames = 4;
  m.config.residual = residual;
  auto stream = oti::seeded_stream(12, "eval-test");
  m.params = oti::init_params(m.config.model, stream);
  return m;
}

class EvalFixture : public ::testing::Test {
 protected:
  oti::Corpus corpus = oti::generate(small_spec());
  oti::Model model = random_model();
  oti::ClipPlan plan{4, 3, oti::SamplingMode::random};
};

TEST(SelectFeature, Variants) {
  oti::VideoFeatureSet fs = oti::factorize(Vector{1, 0, 0}, Vector{0.6, 0.8, 0}, 0.0);
  fs.v_after = {0.6, 0.8, 0};
  EXPECT_EQ(oti::select_feature(fs, {FeatureVariant::before, 0.5}), (Vector{1, 0, 0}));
  EXPECT_EQ(oti::select_feature(fs, {FeatureVariant::after, 0.5}), (Vector{0.6, 0.8, 0}));
  const Vector otf = oti::select_feature(fs, {FeatureVariant::af_otf, 0.5, InterpolationBasis::otf});
  EXPECT_NEAR(otf[0], 1.0, 1e-15);
  EXPECT_NEAR(otf[1], 0.4, 1e-15);
  const Vector aft = oti::select_feature(fs, {FeatureVariant::af_otf, 0.5, InterpolationBasis::after});
  EXPECT_NEAR(aft[0], 1.3, 1e-15);
  EXPECT_NEAR(aft[1], 0.4, 1e-15);
  EXPECT_THROW(oti::select_feature(fs, {FeatureVariant::af_res, 0.5}), oti::ParameterError);
  fs.v_af_res = {0, 1, 0};
  EXPECT_EQ(oti::select_feature(fs, {FeatureVariant::af_res, 0.5}), fs.v_af_res);
}

TEST(SelectFeature, NamesRoundTrip) {
  for (auto v : {FeatureVariant::before, FeatureVariant::after, FeatureVariant::af_res, FeatureVariant::af_otf}) {
    EXPECT_EQ(oti::parse_variant(oti::to_string(v)), v);
  }
  EXPECT_EQ(oti::parse_basis("after"), InterpolationBasis::after);
  EXPECT_THROW(oti::parse_variant("middle"), oti::ParameterError);
  EXPECT_THROW(oti::parse_basis("map"), oti::ParameterError);
}

TEST(Classify, ArgmaxWithLowestIdOnTies) {
  EXPECT_EQ(oti::argmax_first(Vector{0.1, 0.5, 0.5, 0.2}), 1u);
  EXPECT_THROW(oti::argmax_first(Vector{}), oti::ParameterError);
  oti::BankMatrix m;
  m.ids = {3, 7, 9};
  m.matrix = oti::Tensor({3, 2}, Vector{1, 0, 0, 1, 0, 1});
  EXPECT_EQ(oti::classify(Vector{0.2, 0.9}, m), 7);
  EXPECT_EQ(oti::classify(Vector{0.9, 0.2}, m), 3);
  EXPECT_THROW(oti::classify(Vector{1, 0}, oti::BankMatrix{}), oti::ParameterError);
}

TEST(Protocols, Parsing) {
  EXPECT_EQ(oti::parse_protocol("full").kind, ProtocolSpec::Kind::full);
  const auto half = oti::parse_protocol("half", 7);
  EXPECT_EQ(half.kind, ProtocolSpec::Kind::random_half);
  EXPECT_EQ(half.repeats, 7u);
  const auto sub = oti::parse_protocol("subset:5:4");
  EXPECT_EQ(sub.subset_size, 5u);
  EXPECT_EQ(sub.repeats, 4u);
  EXPECT_EQ(sub.label(), "subset:5:4");
  EXPECT_EQ(oti::parse_protocol("subset:6").repeats, 3u);
  for (const char* bad : {"quarter", "subset:", "subset:0:3", "subset:x:3", "subset:3:0", "subset:3:2x", ""}) {
    EXPECT_THROW(oti::parse_protocol(bad), oti::ParameterError) << bad;
  }
  EXPECT_THROW(oti::parse_protocol("subset:11:3").validate(10), oti::ParameterError);
  EXPECT_THROW(ProtocolSpec::random_half(3).validate(1), oti::ParameterError);
}

TEST(Protocols, ChooseCappedMatchesEnumeration) {
  for (std::size_t n = 1; n <= 12; ++n) {
    for (std::size_t m = 0; m <= n + 1; ++m) {
      const std::size_t exact = m > n ? 0 : oracle::all_subsets(n, m).size();
      EXPECT_EQ(oti::choose_capped(n, m, 100000), exact) << n << " choose " << m;
      EXPECT_EQ(oti::choose_capped(n, m, 5), std::min<std::size_t>(exact, 5));
    }
  }
}

TEST(Protocols, SubsetsAreSortedDistinctAndDeterministic) {
  std::vector<std::int64_t> ids{20, 21, 22, 23, 24, 25, 26, 27, 28, 29};
  const auto half = oti::protocol_subsets(ProtocolSpec::random_half(10), ids);
  ASSERT_EQ(half.size(), 10u);
  std::set<std::vector<std::int64_t>> unique(half.begin(), half.end());
  EXPECT_EQ(unique.size(), 10u);
  for (const auto& s : half) {
    EXPECT_EQ(s.size(), 5u);
    EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
    for (std::int64_t id : s) EXPECT_TRUE(std::binary_search(ids.begin(), ids.end(), id));
  }
  EXPECT_EQ(oti::protocol_subsets(ProtocolSpec::random_half(10), ids), half);
  EXPECT_NE(oti::protocol_subsets(ProtocolSpec::random_half(10, 1), ids), half);
  // Ten possible 9-subsets: ten distinct draws enumerate them all.
  const auto nine = oti::protocol_subsets(ProtocolSpec::subset(9, 10), ids);
  EXPECT_EQ(std::set<std::vector<std::int64_t>>(nine.begin(), nine.end()).size(), 10u);
  // One possible 10-subset: repeats are allowed.
  const auto all = oti::protocol_subsets(ProtocolSpec::subset(10, 3), ids);
  ASSERT_EQ(all.size(), 3u);
  for (const auto& s : all) EXPECT_EQ(s, ids);
  EXPECT_EQ(oti::protocol_subsets(ProtocolSpec::full(), ids), std::vector<std::vector<std::int64_t>>{ids});
}

TEST(Summary, PopulationMeanAndStd) {
  const std::vector<double> acc{48.0, 44.7, 47.1, 52.5};
  const auto s = oti::EvalReport::summarize(acc);
  const auto want = oracle::population_stats(acc);
  EXPECT_EQ(s.runs, 4u);
  EXPECT_NEAR(s.mean, want.mean, 1e-12);
  EXPECT_NEAR(s.std, want.std, 1e-12);
  EXPECT_EQ(oti::EvalReport::summarize({}).runs, 0u);
}

TEST(Ordering, ReferenceTables) {
  const auto hmdb = oti::ordering_check({{"before", 48.0}, {"after", 44.7}, {"af_otf", 47.1}});
  EXPECT_TRUE(hmdb.abnormal);
  EXPECT_FALSE(hmdb.refined_best);
  EXPECT_EQ(hmdb.labels(), std::vector<std::string>{"abnormal"});
  const auto ucf = oti::ordering_check({{"before", 75.7}, {"after", 76.9}, {"af_otf", 79.0}});
  EXPECT_FALSE(ucf.abnormal);
  EXPECT_TRUE(ucf.refined_best);
  EXPECT_EQ(oti::ordering_check({{"before", 1}, {"after", 2}, {"af_otf", 1.5}}).labels(),
            std::vector<std::string>{"other"});
  EXPECT_TRUE(oti::ordering_check({{"before", 2}, {"after", 2}, {"af_otf", 2}}).refined_best);
  EXPECT_THROW(oti::ordering_check({{"before", 1}, {"after", 2}}), oti::ParameterError);
}

TEST(Angles, SumThreshold) {
  EXPECT_TRUE(oti::angle_sum_over_90(45.0, 46.0));
  EXPECT_FALSE(oti::angle_sum_over_90(45.0, 45.0));
  EXPECT_FALSE(oti::angle_sum_over_90(10.0, 20.0));
}

// Independent reimplementation of the full-protocol accuracy: sample clips
// from the per-video stream, average cosine scores, take the argmax.
double oracle_accuracy(const oti::Model& model, const oti::Corpus& corpus, const oti::ClipPlan& plan,
                       std::uint64_t seed, const FeatureChoice& choice) {
  const auto unseen = corpus.bank.embeddings_of(oti::Partition::unseen);
  const auto rows = oracle::to_mat(unseen.matrix.values(), unseen.count(), unseen.matrix.cols());
  std::size_t correct = 0, total = 0;
  for (const auto& v : corpus.videos) {
    if (v.role != oti::VideoRole::eval) continue;
    auto stream = oti::seeded_stream(seed, "eval/clips/" + std::to_string(v.video_id));
    oracle::Vec score(rows.size(), 0.0);
    for (std::size_t c = 0; c < plan.clips; ++c) {
      const auto frames = oti::sample_frames(v, plan.frames, plan.mode, stream);
      const auto enc = oti::encode_frames(model.params, frames);
      const auto before = oracle::unit(oracle::mean_rows(oracle::to_mat(frames.values(), plan.frames, 16)));
      const auto after = oracle::unit(oracle::mean_rows(oracle::to_mat(enc.values(), plan.frames, 16)));
      oracle::Vec feature;
      switch (choice.variant) {
        case FeatureVariant::before: feature = before; break;
        case FeatureVariant::after: feature = after; break;
        default: {
          oracle::Vec dir = after;
          if (choice.basis == InterpolationBasis::otf) {
            const auto p = oracle::projection(after, before);
            for (std::size_t j = 0; j < dir.size(); ++j) dir[j] -= p[j];
          }
          feature = before;
          for (std::size_t j = 0; j < dir.size(); ++j) feature[j] += choice.lambda * dir[j];
        }
      }
      for (std::size_t k = 0; k < rows.size(); ++k) score[k] += oracle::cosine(feature, rows[k]);
    }
    std::size_t best = 0;
    for (std::size_t k = 1; k < score.size(); ++k)
      if (score[k] > score[best]) best = k;
    ++total;
    if (unseen.ids[best] == v.category) ++correct;
  }
  return 100.0 * static_cast<double>(correct) / static_cast<double>(total);
}

TEST_F(EvalFixture, FullProtocolMatchesIndependentOracle) {
  const std::vector<FeatureChoice> choices{{FeatureVariant::before, 1.0},
                                           {FeatureVariant::after, 1.0},
                                           {FeatureVariant::af_otf, 1.0, InterpolationBasis::otf},
                                           {FeatureVariant::af_otf, 0.4, InterpolationBasis::otf},
                                           {FeatureVariant::af_otf, 0.7, InterpolationBasis::after}};
  for (const auto& choice : choices) {
    const auto report = oti::evaluate(model, corpus, corpus.bank, ProtocolSpec::full(5), choice, plan);
    ASSERT_EQ(report.rows.size(), 1u);
    EXPECT_NEAR(report.rows[0].accuracy, oracle_accuracy(model, corpus, plan, 5, choice), 1e-12)
        << oti::to_string(choice.variant) << " " << choice.lambda;
  }
}

TEST_F(EvalFixture, EvaluationIsDeterministicAndSeedSensitive) {
  const ProtocolSpec half = ProtocolSpec::random_half(6, 2);
  const FeatureChoice choice{FeatureVariant::af_otf, 1.0};
  const auto a = oti::evaluate(model, corpus, corpus.bank, half, choice, plan);
  const auto b = oti::evaluate(model, corpus, corpus.bank, half, choice, plan);
  EXPECT_EQ(oti::results_csv(a.rows), oti::results_csv(b.rows));
  EXPECT_EQ(a.rows.size(), 6u);
  for (std::size_t i = 0; i < a.rows.size(); ++i) EXPECT_EQ(a.rows[i].subset_index, i);
}

TEST_F(EvalFixture, SubsetAccuracyUsesOnlySubsetCategories) {
  // With a single candidate every video of that category is correct.
  const auto report = oti::evaluate(model, corpus, corpus.bank, ProtocolSpec::subset(1, 4),
                                    FeatureChoice{FeatureVariant::before, 1.0}, plan);
  for (const auto& row : report.rows) EXPECT_EQ(row.accuracy, 100.0);
}

TEST_F(EvalFixture, LambdaZeroEqualsBefore) {
  const auto cache = oti::build_eval_cache(model, corpus, corpus.bank, plan, 3);
  const auto sweep = oti::lambda_sweep(cache, ProtocolSpec::random_half(4), oti::default_lambda_grid(),
                                       InterpolationBasis::otf);
  EXPECT_EQ(sweep.rows.size(), 11u * 4u);
  const auto before = oti::evaluate_cached(cache, ProtocolSpec::random_half(4), {FeatureVariant::before, 1.0});
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(sweep.rows[i].accuracy, before[i].accuracy);
  for (std::size_t i = 0; i < sweep.rows.size(); ++i) EXPECT_EQ(sweep.rows[i].run_id, i);
  EXPECT_EQ(sweep.summary(FeatureVariant::af_otf, 0.0, InterpolationBasis::otf).runs, 4u);
  EXPECT_THROW(oti::lambda_sweep(cache, ProtocolSpec::full(), {0.5, 1.5}, InterpolationBasis::otf),
               oti::ParameterError);
}

TEST_F(EvalFixture, VariantTableListsResidualOnlyWhenTrainedWithIt) {
  const auto table = oti::feature_variant_table(model, corpus, corpus.bank, ProtocolSpec::full(), 1.0, plan);
  EXPECT_EQ(table.rows.size(), 3u);
  EXPECT_THROW(oti::evaluate(model, corpus, corpus.bank, ProtocolSpec::full(), {FeatureVariant::af_res, 1.0}, plan),
               oti::ParameterError);
  const auto res = oti::feature_variant_table(random_model(true), corpus, corpus.bank, ProtocolSpec::full(), 1.0,
                                              plan);
  EXPECT_EQ(res.rows.size(), 4u);
  EXPECT_EQ(res.rows.back().variant, FeatureVariant::af_res);
}

TEST_F(EvalFixture, IdentityModuleMakesEveryVariantAgree) {
  const oti::Model id = random_model(false, 0, false);
  const auto table = oti::feature_variant_table(id, corpus, corpus.bank, ProtocolSpec::full(), 1.0, plan);
  EXPECT_EQ(table.summary(FeatureVariant::before).mean, table.summary(FeatureVariant::after).mean);
  EXPECT_EQ(table.summary(FeatureVariant::before).mean, table.summary(FeatureVariant::af_otf).mean);
  const auto angles = oti::angle_report(id, corpus, corpus.bank, 1.0);
  for (const auto& r : angles.rows) {
    EXPECT_NEAR(r.theta1, r.theta2, 1e-6);
    EXPECT_NEAR(r.theta1, r.theta3, 1e-6);
  }
}

TEST_F(EvalFixture, AngleReportAgreesWithGeometry) {
  const auto report = oti::angle_report(model, corpus, corpus.bank, 0.6);
  EXPECT_EQ(report.rows.size(), 10u * 4u);
  EXPECT_EQ(report.over_90 + report.at_most_90, report.rows.size());
  double mean1 = 0.0;
  for (const auto& r : report.rows) {
    EXPECT_EQ(r.over_90, r.theta1 + r.theta2 > 90.0);
    EXPECT_GE(r.theta1, 0.0);
    EXPECT_LE(r.theta2, 180.0);
    mean1 += r.theta1;
  }
  EXPECT_NEAR(report.mean_theta1, mean1 / 40.0, 1e-12);
  const std::string csv = oti::angles_csv(report);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "video_id,theta1_deg,theta2_deg,theta3_deg,sum_bucket");
  EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), 41u);
  EXPECT_THROW(oti::angle_report(model, corpus, corpus.bank, -0.5), oti::ParameterError);
}

TEST_F(EvalFixture, ResultsCsvLayout) {
  const auto report = oti::evaluate(model, corpus, corpus.bank, ProtocolSpec::subset(4, 2, 9),
                                    {FeatureVariant::af_otf, 0.5, InterpolationBasis::after}, plan);
  const std::string csv = oti::results_csv(report.rows);
  const std::string header = "run_id,protocol,variant,basis,lambda,clips,seed,subset_index,accuracy_percent\n";
  ASSERT_EQ(csv.substr(0, header.size()), header);
  const std::string prefix = "0,subset:4:2,af_otf,after,0.5,3,9,0,";
  EXPECT_EQ(csv.substr(header.size(), prefix.size()), prefix);
}

TEST_F(EvalFixture, ClipPlanValidation) {
  EXPECT_THROW(oti::build_eval_cache(model, corpus, corpus.bank, {4, 0, oti::SamplingMode::random}, 0),
               oti::ParameterError);
  EXPECT_THROW(oti::build_eval_cache(model, corpus, corpus.bank, {9, 1, oti::SamplingMode::random}, 0),
               oti::ParameterError);
}

}  // namespace
