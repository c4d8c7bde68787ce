#include "tsxplain/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <optional>
#include <vector>

#include <gtest/gtest.h>

#include "ssa_oracle.hpp"
#include "test_support.hpp"
#include "tsxplain/reference.hpp"

namespace tsxplain {
namespace {

using testing::random_corpus;
using testing::random_model;

AttributionVector attr(std::vector<double> scores, const std::string& id, int target = 0,
                       Method m = Method::kSaliency) {
  return AttributionVector{std::move(scores), m, target, id, {}};
}

TEST(MacroF1, PerfectAndWorst) {
  const std::vector<int> truth{0, 1, 1, 0, 2};
  EXPECT_DOUBLE_EQ(macro_f1(truth, truth), 1.0);
  EXPECT_DOUBLE_EQ(macro_f1(truth, std::vector<int>{1, 2, 0, 2, 1}), 0.0);
}

TEST(MacroF1, HandComputed) {
  // class 0: tp 1, fp 1, fn 1 -> 0.5; class 1: tp 2, fp 1, fn 1 -> 2/3.
  const std::vector<int> truth{0, 0, 1, 1, 1};
  const std::vector<int> pred{0, 1, 1, 1, 0};
  EXPECT_NEAR(macro_f1(truth, pred), (0.5 + 2.0 / 3.0) / 2.0, 1e-15);
  // A constant prediction scores zero on the classes it never predicts.
  EXPECT_NEAR(macro_f1(std::vector<int>{0, 0, 1, 1}, std::vector<int>{0, 0, 0, 0}), (2.0 / 3.0) / 2.0, 1e-15);
}

TEST(DeletionOrder, DescendingWithLowIndexTies) {
  EXPECT_EQ(deletion_order(std::vector<double>{0.1, 0.5, 0.5, -1.0, 0.7}),
            (std::vector<std::size_t>{4, 1, 2, 0, 3}));
}

TEST(Auc, ClosedForms) {
  EXPECT_DOUBLE_EQ(auc(DeletionCurve{std::vector<double>(11, 1.0), "x", ""}), 1.0);
  EXPECT_DOUBLE_EQ(auc(DeletionCurve{std::vector<double>(7, 0.5), "x", ""}), 0.5);
  for (std::size_t t : {1u, 4u, 24u, 101u}) {
    std::vector<double> f1;
    for (std::size_t k = 0; k <= t; ++k) f1.push_back(1.0 - static_cast<double>(k) / t);
    EXPECT_NEAR(auc(DeletionCurve{f1, "x", ""}), 0.5, 0.5 / t);
  }
  EXPECT_THROW(auc(DeletionCurve{{1.0}, "x", ""}), ValidationError);
  EXPECT_DOUBLE_EQ(auc_gap(0.4, 0.4), 0.0);
  EXPECT_NEAR(auc_gap(0.52, 0.27), 0.25, 1e-15);
}

TEST(DeletionCurve, InputIndependentModelIsFlat) {
  Rng rng(1);
  auto model = random_model(4, 6, 2, 2, {5}, 3);
  std::fill(model.head.weight.begin(), model.head.weight.end(), 0.0);
  model.head.bias = {0.0, 1.0};
  const auto test = random_corpus(40, 6, 4, 2, rng);
  std::vector<AttributionVector> attrs;
  for (const auto& s : test) attrs.push_back(attr(std::vector<double>(6, 0.0), s.id));
  const auto curve = deletion_curve(model, test, attrs, "flat");
  ASSERT_EQ(curve.f1.size(), 7u);
  for (double v : curve.f1) EXPECT_DOUBLE_EQ(v, curve.f1.front());
}

TEST(DeletionCurve, EndpointIsAllUnkPrediction) {
  Rng rng(2);
  const auto model = random_model(5, 5, 3, 3, {6}, 4);
  const auto test = random_corpus(30, 5, 5, 3, rng);
  const auto attrs = random_attributions(test, 9);
  const auto curve = deletion_curve(model, test, attrs, "rnd");
  const int unk_pred = predict_batch(model, std::vector<TokenSequence>{{"u", 0, std::vector<int>(5, 5)}})[0];
  std::vector<int> truth, pred;
  for (const auto& s : test) {
    truth.push_back(*s.label);
    pred.push_back(unk_pred);
  }
  EXPECT_DOUBLE_EQ(curve.f1.back(), macro_f1(truth, pred));
  EXPECT_DOUBLE_EQ(curve.f1.front(), macro_f1(truth, predict_batch(model, test)));
}

TEST(DeletionCurve, ParallelMatchesReference) {
  Rng rng(3);
  for (int trial = 0; trial < 5; ++trial) {
    const auto model = random_model(4, 7, 3, 3, {8}, 10 + trial);
    const auto test = random_corpus(40, 7, 4, 3, rng);
    // Coarse scores create ties so the tie-break rule is exercised.
    auto attrs = random_attributions(test, trial);
    for (auto& a : attrs) {
      for (auto& v : a.scores) v = std::floor(v * 3.0);
    }
    std::reverse(attrs.begin(), attrs.end());
    EXPECT_EQ(deletion_curve(model, test, attrs, "x").f1, reference::deletion_curve(model, test, attrs).f1);
  }
}

TEST(DeletionCurve, MissingAttributionIsNamed) {
  Rng rng(4);
  const auto model = random_model(4, 3, 2, 2, {}, 1);
  const auto test = random_corpus(3, 3, 4, 2, rng);
  std::vector<AttributionVector> attrs{attr({1, 2, 3}, test[0].id)};
  try {
    deletion_curve(model, test, attrs, "x");
    FAIL();
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find(test[1].id), std::string::npos);
    EXPECT_NE(std::string(e.what()).find(test[2].id), std::string::npos);
  }
}

TEST(Cosine, BasicProperties) {
  const std::vector<double> a{1, 2, 3};
  EXPECT_NEAR(*cosine_similarity(a, a), 1.0, 1e-15);
  EXPECT_NEAR(*cosine_similarity(std::vector<double>{1, 0}, std::vector<double>{0, 1}), 0.0, 1e-15);
  EXPECT_FALSE(cosine_similarity(std::vector<double>{0, 0}, std::vector<double>{1, 1}).has_value());
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> v(6);
    for (auto& x : v) x = standard_normal(rng);
    const double lambda = 1e-3 + 100.0 * uniform01(rng);
    std::vector<double> w = v;
    for (auto& x : w) x *= lambda;
    EXPECT_NEAR(*cosine_similarity(v, w), 1.0, 1e-12);
  }
  EXPECT_THROW(cosine_similarity(a, std::vector<double>{1, 2}), ValidationError);
}

TEST(MinMax, MapsToUnitInterval) {
  EXPECT_EQ(min_max_normalize(std::vector<double>{2, 4, 3}), (std::vector<double>{0, 1, 0.5}));
  EXPECT_EQ(min_max_normalize(std::vector<double>{3, 3}), (std::vector<double>{0, 0}));
}

std::vector<std::vector<AttributionVector>> copies(const std::vector<AttributionVector>& a, int n) {
  return std::vector<std::vector<AttributionVector>>(static_cast<std::size_t>(n), a);
}

TEST(Invariance, IdenticalModelsScoreExactlyOne) {
  Rng rng(6);
  const auto test = random_corpus(12, 5, 3, 2, rng);
  const auto per_model = copies(random_attributions(test, 1), 5);
  const auto r = implementation_invariance(per_model);
  EXPECT_EQ(r.mean, 1.0);
  EXPECT_EQ(r.std, 0.0);
  EXPECT_EQ(r.pairs, 10u * test.size());
}

TEST(Invariance, SameSeedModelsThroughMethods) {
  Rng rng(7);
  const auto test = random_corpus(10, 6, 4, 2, rng);
  const std::vector<ClassifierModel> models(5, random_model(4, 6, 2, 3, {5}, 8));
  for (auto m : {Method::kSaliency, Method::kIntegratedGradients, Method::kRise, Method::kLime}) {
    MethodConfig cfg;
    cfg.method = m;
    cfg.rise.masks = 100;
    cfg.lime.samples = 100;
    EXPECT_EQ(implementation_invariance(models, cfg, test, 3).mean, 1.0) << to_string(m);
  }
}

TEST(Invariance, RandomVectorsSitNearTheirNull) {
  Rng rng(8);
  const std::size_t t = 20;
  const auto test = random_corpus(200, t, 3, 2, rng);
  std::vector<std::vector<AttributionVector>> per_model;
  for (int m = 0; m < 5; ++m) per_model.push_back(random_attributions(test, 100 + m));
  const auto r = implementation_invariance(per_model);
  // For i.i.d. U(0,1) entries, E[x]^2 / E[x^2] = 0.75.
  EXPECT_NEAR(r.mean, 0.75, 0.03);
  EXPECT_LT(r.mean, 0.9);
}

TEST(Invariance, RejectsMismatchedArchitectures) {
  Rng rng(9);
  const auto test = random_corpus(4, 6, 4, 2, rng);
  const std::vector<ClassifierModel> models{random_model(4, 6, 2, 3, {5}, 1), random_model(4, 6, 2, 3, {7}, 2)};
  EXPECT_THROW(implementation_invariance(models, MethodConfig{}, test, 1), ValidationError);
}

TEST(Agreement, MatrixShapeAndDiagonal) {
  Rng rng(10);
  const auto test = random_corpus(15, 6, 3, 2, rng);
  std::vector<NamedAttributions> methods{{"a", random_attributions(test, 1)},
                                         {"b", random_attributions(test, 2)},
                                         {"c", random_attributions(test, 1)}};
  for (bool normalize : {false, true}) {
    const auto m = xai_agreement(methods, normalize);
    ASSERT_EQ(m.methods.size(), 3u);
    for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(m.at(i, i), 1.0);
    EXPECT_NEAR(m.at(0, 2), 1.0, 1e-12);
    EXPECT_EQ(m.at(0, 1), m.at(1, 0));
    EXPECT_NEAR(m.summary, (m.at(0, 1) + m.at(0, 2) + m.at(1, 2)) / 3.0, 1e-15);
  }
  EXPECT_NE(xai_agreement(methods, false).at(0, 1), xai_agreement(methods, true).at(0, 1));
  EXPECT_THROW(xai_agreement(std::vector<NamedAttributions>{methods[0]}), ValidationError);
}

TEST(SalientWindow, ArgmaxWithClamp) {
  const std::vector<double> s{0.1, 0.9, 0.3, 0.9, -2.0};
  EXPECT_EQ(salient_window_start(s, 1), 1u);
  EXPECT_EQ(salient_window_start(s, 3), 1u);
  EXPECT_EQ(salient_window_start(std::vector<double>{0, 0, 0, 5}, 2), 2u);
  EXPECT_EQ(salient_window_start(s, 1, true), 4u);
}

TokenSequence seq(const std::string& id, int label, std::vector<int> tokens) {
  return TokenSequence{id, label, std::move(tokens)};
}

TEST(Ssa, RatioByDefinition) {
  // Window [5,5] at position 3 appears in four training instances, three of class 1.
  std::vector<TokenSequence> train{
      seq("a", 1, {0, 0, 0, 5, 5, 0}), seq("b", 1, {1, 1, 1, 5, 5, 1}), seq("c", 1, {0, 1, 0, 5, 5, 0}),
      seq("d", 0, {1, 0, 1, 5, 5, 1}), seq("e", 0, {5, 5, 0, 0, 0, 0}), seq("f", 1, {0, 0, 5, 5, 0, 0})};
  std::vector<TokenSequence> test{seq("z", 1, {2, 2, 2, 5, 5, 2})};
  std::vector<AttributionVector> attrs{attr({0, 0, 0, 1, 0.5, 0}, "z", 1)};
  const auto r = ssa(train, test, attrs, 2, 2, "sm");
  EXPECT_EQ(r.neighborhoods[1], 4u);
  EXPECT_EQ(r.matches[1], 3u);
  EXPECT_DOUBLE_EQ(*r.per_class[1], 0.75);
  EXPECT_FALSE(r.per_class[0].has_value());
  EXPECT_EQ(r.undefined_classes, 1u);
  EXPECT_DOUBLE_EQ(*r.mean, 0.75);
  EXPECT_DOUBLE_EQ(r.mean_neighbors, 4.0);
}

TEST(Ssa, PureNeighborhood) {
  std::vector<TokenSequence> train{seq("a", 0, {3, 1}), seq("b", 0, {3, 2}), seq("c", 1, {4, 1})};
  std::vector<TokenSequence> test{seq("z", 0, {3, 2})};
  std::vector<AttributionVector> attrs{attr({1, 0}, "z")};
  EXPECT_DOUBLE_EQ(*ssa(train, test, attrs, 1, 2, "sm").per_class[0], 1.0);
}

TEST(Ssa, FullLengthWindowMatchesOnlyItself) {
  std::vector<TokenSequence> train{seq("a", 0, {1, 2, 3})};
  std::vector<TokenSequence> test{seq("a", 0, {1, 2, 3})};
  std::vector<AttributionVector> attrs{attr({0, 1, 0}, "a")};
  EXPECT_DOUBLE_EQ(ssa(train, test, attrs, 3, 1, "sm").mean_neighbors, 1.0);
}

TEST(Ssa, RejectsBadLengths) {
  std::vector<TokenSequence> train{seq("a", 0, {1, 2, 3})};
  std::vector<AttributionVector> attrs{attr({0, 1, 0}, "a")};
  EXPECT_THROW(ssa(train, train, attrs, 0, 1, "sm"), ValidationError);
  EXPECT_THROW(ssa(train, train, attrs, 4, 1, "sm"), ValidationError);
}

TEST(Ssa, MatchesBruteForceOnRandomCorpora) {
  Rng rng(11);
  for (int corpus = 0; corpus < 10; ++corpus) {
    const std::size_t t_len = 3 + uniform_index(rng, 18);
    const int vocab = 2 + static_cast<int>(uniform_index(rng, 3));
    const int classes = 2 + static_cast<int>(uniform_index(rng, 3));
    const auto train = random_corpus(1 + uniform_index(rng, 100), t_len, vocab, classes, rng, "tr");
    const auto test = random_corpus(1 + uniform_index(rng, 20), t_len, vocab, classes, rng, "te");
    auto attrs = random_attributions(test, static_cast<std::uint64_t>(corpus));
    for (auto& a : attrs) {
      for (auto& v : a.scores) v = std::floor(v * 4.0);
    }
    for (std::size_t l : {1u, 2u, 3u}) {
      const auto want = testing::brute_force_ssa(train, test, attrs, l, classes);
      for (const auto& got : {ssa(train, test, attrs, l, classes, "rnd"),
                              reference::ssa(train, test, attrs, l, classes)}) {
        EXPECT_EQ(got.matches, want.matches);
        EXPECT_EQ(got.neighborhoods, want.neighborhoods);
        EXPECT_EQ(got.per_class, want.per_class);
        EXPECT_EQ(got.mean, want.mean);
        if (got.mean) {
          EXPECT_GE(*got.mean, 0.0);
          EXPECT_LE(*got.mean, 1.0);
        }
      }
    }
  }
}

TEST(Ssa, NeighborhoodsShrinkWithLengthWithoutClamping) {
  Rng rng(12);
  const auto train = random_corpus(100, 12, 3, 2, rng, "tr");
  const auto test = random_corpus(20, 12, 3, 2, rng, "te");
  // Salient positions in the first half keep every window inside the sequence.
  auto attrs = random_attributions(test, 4);
  for (auto& a : attrs) {
    for (std::size_t p = 6; p < 12; ++p) a.scores[p] = -1.0;
  }
  std::vector<std::size_t> lengths{1, 2, 3, 4, 5};
  const auto sweep = ssa_sweep(train, test, attrs, lengths, 2, "x", 9);
  for (std::size_t k = 1; k < lengths.size(); ++k) {
    EXPECT_LE(sweep.method[k].mean_neighbors, sweep.method[k - 1].mean_neighbors);
  }
  ASSERT_EQ(sweep.random.size(), lengths.size());
}

}  // namespace
}  // namespace tsxplain
