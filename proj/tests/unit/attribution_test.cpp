#include "tsxplain/attribution.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include <gtest/gtest.h>

#include "test_support.hpp"
#include "tsxplain/reference.hpp"

namespace tsxplain {
namespace {

using testing::jitter_layer_norm;
using testing::random_model;
using testing::random_tokens;

double sum(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

double logit(const ClassifierModel& m, const std::vector<int>& tokens, int c) {
  return forward_logits(m, tokens)[static_cast<std::size_t>(c)];
}

// Linear model whose class-1 logit only sees position 3: embedding rows are
// all ones except UNK (zeros) and the head only weights position 3.
ClassifierModel position_three_model(std::size_t length) {
  auto m = random_model(4, length, 2, 2, {}, 1);
  for (int t = 0; t <= 4; ++t) {
    for (std::size_t j = 0; j < 2; ++j) m.embedding[static_cast<std::size_t>(t) * 2 + j] = t == 4 ? 0.0 : 1.0;
  }
  std::fill(m.head.weight.begin(), m.head.weight.end(), 0.0);
  std::fill(m.head.bias.begin(), m.head.bias.end(), 0.0);
  m.head.weight[m.head.in + 3 * 2] = 2.0;
  m.head.weight[m.head.in + 3 * 2 + 1] = 1.5;
  m.head.bias[1] = -1.0;
  return m;
}

ClassifierModel constant_model(std::size_t length, int classes) {
  auto m = random_model(4, length, classes, 2, {6}, 2);
  std::fill(m.head.weight.begin(), m.head.weight.end(), 0.0);
  for (int c = 0; c < classes; ++c) m.head.bias[static_cast<std::size_t>(c)] = 0.3 * c;
  return m;
}

TEST(Saliency, LinearModelIsAbsoluteWeightSum) {
  const auto model = random_model(5, 4, 3, 3, {}, 7);
  const std::vector<int> tokens{0, 2, 5, 1};
  const auto a = saliency(model, tokens, 2);
  ASSERT_EQ(a.scores.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    double want = 0.0;
    for (std::size_t j = 0; j < 3; ++j) want += std::abs(model.head.weight[2 * model.head.in + i * 3 + j]);
    EXPECT_NEAR(a.scores[i], want, 1e-15);
  }
  EXPECT_EQ(a.method, Method::kSaliency);
  EXPECT_EQ(a.target_class, 2);
}

TEST(Saliency, NonNegativeAndMatchesFiniteDifferences) {
  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    auto model = random_model(6, 5, 3, 3, {8, 5}, 40 + trial);
    jitter_layer_norm(model, rng);
    for (auto& v : model.embedding) v *= 20.0;
    const auto tokens = random_tokens(5, 6, rng);
    const int c = trial % 3;
    const auto a = saliency(model, tokens, c);
    auto x = embed(model, tokens);
    const double h = 1e-5;
    for (std::size_t i = 0; i < 5; ++i) {
      EXPECT_GE(a.scores[i], 0.0);
      double fd = 0.0;
      for (std::size_t j = 0; j < 3; ++j) {
        const std::size_t k = i * 3 + j;
        const double orig = x[k];
        x[k] = orig + h;
        const double up = logits_from_input(model, x)[c];
        x[k] = orig - h;
        const double down = logits_from_input(model, x)[c];
        x[k] = orig;
        fd += std::abs((up - down) / (2 * h));
      }
      EXPECT_NEAR(a.scores[i], fd, 1e-3 * std::max(fd, 1e-6));
    }
  }
}

TEST(IntegratedGradients, CompleteOnLinearModel) {
  Rng rng(6);
  const auto model = random_model(7, 6, 3, 4, {}, 8);
  const std::vector<int> baseline(6, model.unk_id());
  for (int m : {1, 8, 64}) {
    for (int trial = 0; trial < 5; ++trial) {
      const auto tokens = random_tokens(6, 7, rng, true);
      const int c = trial % 3;
      const auto a = integrated_gradients(model, tokens, c, IgOptions{m, false});
      EXPECT_NEAR(sum(a.scores), logit(model, tokens, c) - logit(model, baseline, c), 1e-9)
          << "m=" << m;
    }
  }
}

TEST(IntegratedGradients, ZeroForBaselineInput) {
  const auto model = random_model(5, 4, 2, 3, {6, 4}, 9);
  const auto a = integrated_gradients(model, std::vector<int>(4, model.unk_id()), 1);
  for (double v : a.scores) EXPECT_EQ(v, 0.0);
}

TEST(IntegratedGradients, ResidualShrinksWithSteps) {
  Rng rng(10);
  auto model = random_model(6, 5, 2, 3, {10, 6}, 11);
  jitter_layer_norm(model, rng);
  for (auto& v : model.embedding) v *= 30.0;
  const auto tokens = random_tokens(5, 6, rng);
  const double gap = logit(model, tokens, 0) - logit(model, std::vector<int>(5, model.unk_id()), 0);
  const double r8 = std::abs(sum(integrated_gradients(model, tokens, 0, {8, false}).scores) - gap);
  const double r256 = std::abs(sum(integrated_gradients(model, tokens, 0, {256, false}).scores) - gap);
  EXPECT_LE(r256, 0.1 * r8 + 1e-12);
}

TEST(IntegratedGradients, AbsoluteOptionAndDistances) {
  Rng rng(12);
  const auto model = random_model(5, 4, 2, 3, {6}, 13);
  const auto tokens = random_tokens(4, 5, rng);
  const auto raw = integrated_gradients(model, tokens, 1, {16, false});
  const auto abs = integrated_gradients(model, tokens, 1, {16, true});
  for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(abs.scores[i], std::abs(raw.scores[i]));
  const auto d = baseline_distances(model, tokens);
  const auto unk = model.embedding_row(model.unk_id());
  for (std::size_t i = 0; i < 4; ++i) {
    const auto e = model.embedding_row(tokens[i]);
    double s = 0.0;
    for (std::size_t j = 0; j < 3; ++j) s += (e[j] - unk[j]) * (e[j] - unk[j]);
    EXPECT_NEAR(d[i], std::sqrt(s), 1e-15);
  }
}

// sum over all 2^T masks of Pr(M) * P(c | z masked by M) * M_i.
std::vector<double> exhaustive_rise(const ClassifierModel& model, const std::vector<int>& tokens,
                                    int c, double p_keep) {
  const std::size_t t = tokens.size();
  std::vector<double> out(t, 0.0);
  for (unsigned bits = 0; bits < (1u << t); ++bits) {
    std::vector<int> masked = tokens;
    double pr = 1.0;
    for (std::size_t i = 0; i < t; ++i) {
      const bool keep = bits >> i & 1u;
      pr *= keep ? p_keep : 1.0 - p_keep;
      if (!keep) masked[i] = model.unk_id();
    }
    const double p = predict_proba(model, masked)[static_cast<std::size_t>(c)];
    for (std::size_t i = 0; i < t; ++i) {
      if (bits >> i & 1u) out[i] += pr * p;
    }
  }
  return out;
}

TEST(Rise, MonteCarloMatchesExhaustiveEnumeration) {
  Rng rng(13);
  for (int trial = 0; trial < 3; ++trial) {
    auto model = random_model(5, 4, 3, 3, {8}, 60 + trial);
    for (auto& v : model.embedding) v *= 40.0;
    const auto tokens = random_tokens(4, 5, rng);
    const int c = trial;
    Rng mask_rng(99 + trial);
    const auto mc = rise(Predictor(model), tokens, c, RiseOptions{50000, 0.5, false}, mask_rng);
    const auto exact = exhaustive_rise(model, tokens, c, 0.5);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_NEAR(mc.scores[i], exact[i], 0.01);
  }
}

TEST(Rise, KeepAllMasksGiveClassProbability) {
  Rng rng(14);
  const auto model = random_model(5, 6, 2, 3, {7}, 15);
  const auto tokens = random_tokens(6, 5, rng);
  Rng mask_rng(1);
  const auto a = rise(Predictor(model), tokens, 1, RiseOptions{50, 1.0, false}, mask_rng);
  const double p = predict_proba(model, tokens)[1];
  for (double v : a.scores) EXPECT_NEAR(v, p, 1e-12);
}

TEST(Rise, ConstantModelGivesProbabilityTimesKeepRate) {
  const auto model = constant_model(5, 3);
  const double q = predict_proba(model, std::vector<int>{0, 1, 2, 3, 0})[2];
  Rng rng(2);
  const auto a = rise(Predictor(model), std::vector<int>{0, 1, 2, 3, 0}, 2, RiseOptions{50000, 0.3, false}, rng);
  for (double v : a.scores) EXPECT_NEAR(v, q * 0.3, 0.01);
  Rng rng2(2);
  const auto n = rise(Predictor(model), std::vector<int>{0, 1, 2, 3, 0}, 2, RiseOptions{50000, 0.3, true}, rng2);
  for (std::size_t i = 0; i < 5; ++i) EXPECT_NEAR(n.scores[i], a.scores[i] / 0.3, 1e-12);
}

TEST(Rise, ScoresInUnitIntervalAndRepeatable) {
  Rng rng(15);
  const auto model = random_model(6, 8, 3, 3, {9}, 16);
  const Predictor predictor(model);
  for (int trial = 0; trial < 20; ++trial) {
    const auto tokens = random_tokens(8, 6, rng);
    Rng a_rng(trial), b_rng(trial);
    const auto a = rise(predictor, tokens, trial % 3, RiseOptions{200, 0.5, false}, a_rng);
    const auto b = rise(predictor, tokens, trial % 3, RiseOptions{200, 0.5, false}, b_rng);
    EXPECT_EQ(a.scores, b.scores);
    for (double v : a.scores) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
}

TEST(Rise, SampledMasksHaveRequestedDensity) {
  Rng rng(3);
  const auto masks = sample_masks(20000, 10, 0.3, rng);
  const double kept = std::accumulate(masks.bits.begin(), masks.bits.end(), 0.0);
  EXPECT_NEAR(kept / masks.bits.size(), 0.3, 0.005);
}

TEST(Lime, ConstantModelHasZeroCoefficients) {
  const auto model = constant_model(6, 2);
  Rng rng(4);
  const auto a = lime(Predictor(model), std::vector<int>{0, 1, 2, 3, 0, 1}, 1, LimeOptions{}, rng);
  for (double v : a.scores) EXPECT_NEAR(v, 0.0, 1e-6);
}

TEST(Lime, PlantedPositionDominates) {
  const auto model = position_three_model(8);
  Rng rng(5);
  const auto a = lime(Predictor(model), std::vector<int>{0, 1, 2, 3, 0, 1, 2, 3}, 1, LimeOptions{}, rng);
  const auto top = std::max_element(a.scores.begin(), a.scores.end(),
                                    [](double x, double y) { return std::abs(x) < std::abs(y); });
  EXPECT_EQ(top - a.scores.begin(), 3);
  EXPECT_GT(a.scores[3], 0.0);
}

TEST(Lime, SeededRepeatable) {
  Rng rng(6);
  const auto model = random_model(5, 7, 2, 3, {6}, 17);
  const auto tokens = random_tokens(7, 5, rng);
  Rng a_rng(8), b_rng(8);
  EXPECT_EQ(lime(Predictor(model), tokens, 0, LimeOptions{300}, a_rng).scores,
            lime(Predictor(model), tokens, 0, LimeOptions{300}, b_rng).scores);
}

TEST(Lime, RidgeRecoversExactLinearResponse) {
  // Full factorial design on 3 features; response = 0.5 + 2 x0 - x2.
  std::vector<std::uint8_t> presence;
  std::vector<double> response, weights;
  for (unsigned bits = 0; bits < 8; ++bits) {
    for (unsigned i = 0; i < 3; ++i) presence.push_back(static_cast<std::uint8_t>(bits >> i & 1u));
    response.push_back(0.5 + 2.0 * (bits & 1u) - 1.0 * (bits >> 2 & 1u));
    weights.push_back(1.0 + bits);
  }
  const auto coef = weighted_ridge(presence, 3, response, weights, 0.0);
  ASSERT_EQ(coef.size(), 3u);
  EXPECT_NEAR(coef[0], 2.0, 1e-10);
  EXPECT_NEAR(coef[1], 0.0, 1e-10);
  EXPECT_NEAR(coef[2], -1.0, 1e-10);
}

TEST(RandomAttribution, UniformFirstRank) {
  Rng rng(7);
  const std::size_t t = 5;
  const int draws = 10000;
  std::vector<int> first(t, 0);
  for (int d = 0; d < draws; ++d) {
    const auto a = random_attribution(t, rng);
    ASSERT_EQ(a.scores.size(), t);
    ++first[std::max_element(a.scores.begin(), a.scores.end()) - a.scores.begin()];
  }
  double chi2 = 0.0;
  const double e = static_cast<double>(draws) / t;
  for (int f : first) chi2 += (f - e) * (f - e) / e;
  // 4 degrees of freedom, 0.999 quantile.
  EXPECT_LT(chi2, 18.47);
  Rng a(3), b(3);
  EXPECT_EQ(random_attribution(9, a).scores, random_attribution(9, b).scores);
}

TEST(Methods, ParseNamesAndAliases) {
  EXPECT_EQ(parse_method("sm"), Method::kSaliency);
  EXPECT_EQ(parse_method("ig"), Method::kIntegratedGradients);
  EXPECT_EQ(parse_method("rise"), Method::kRise);
  EXPECT_EQ(parse_method("lime"), Method::kLime);
  EXPECT_EQ(parse_method("rnd"), Method::kRandom);
  for (auto m : {Method::kSaliency, Method::kIntegratedGradients, Method::kRise, Method::kLime,
                 Method::kRandom}) {
    EXPECT_EQ(parse_method(to_string(m)), m);
  }
  EXPECT_THROW(parse_method("shap"), ValidationError);
}

TEST(ExplainBatch, ParallelMatchesReference) {
  Rng rng(20);
  auto model = random_model(6, 8, 3, 3, {10, 5}, 21);
  jitter_layer_norm(model, rng);
  const auto data = testing::random_corpus(25, 8, 6, 3, rng);
  for (auto method : {Method::kSaliency, Method::kIntegratedGradients, Method::kRise, Method::kLime,
                      Method::kRandom}) {
    MethodConfig cfg;
    cfg.method = method;
    cfg.ig.steps = 8;
    cfg.rise.masks = 200;
    cfg.lime.samples = 100;
    for (auto mode : {TargetMode::kPredicted, TargetMode::kLabel}) {
      const auto fast = explain_batch(model, data, cfg, 5, mode);
      const auto slow = reference::explain_batch(model, data, cfg, 5, mode);
      ASSERT_EQ(fast.size(), slow.size());
      for (std::size_t i = 0; i < fast.size(); ++i) {
        EXPECT_EQ(fast[i].instance_id, slow[i].instance_id);
        EXPECT_EQ(fast[i].target_class, slow[i].target_class);
        ASSERT_EQ(fast[i].scores.size(), slow[i].scores.size());
        for (std::size_t k = 0; k < fast[i].scores.size(); ++k) {
          EXPECT_NEAR(fast[i].scores[k], slow[i].scores[k], 1e-9) << to_string(method);
        }
      }
    }
  }
}

TEST(ExplainBatch, TargetsFollowMode) {
  Rng rng(22);
  const auto model = random_model(4, 5, 3, 2, {6}, 23);
  const auto data = testing::random_corpus(30, 5, 4, 3, rng);
  MethodConfig cfg;
  const auto predicted = explain_batch(model, data, cfg, 1, TargetMode::kPredicted);
  const auto labelled = explain_batch(model, data, cfg, 1, TargetMode::kLabel);
  const auto preds = predict_batch(model, data);
  for (std::size_t i = 0; i < data.size(); ++i) {
    EXPECT_EQ(predicted[i].target_class, preds[i]);
    EXPECT_EQ(labelled[i].target_class, *data[i].label);
  }
  const std::vector<int> overrides(data.size(), 2);
  for (const auto& a : explain_batch(model, data, cfg, 1, TargetMode::kLabel, std::span<const int>(overrides))) {
    EXPECT_EQ(a.target_class, 2);
  }
}

TEST(ExplainBatch, InstanceStreamsIgnoreBatchComposition) {
  Rng rng(24);
  const auto model = random_model(4, 6, 2, 2, {5}, 25);
  const auto data = testing::random_corpus(10, 6, 4, 2, rng);
  MethodConfig cfg;
  cfg.method = Method::kRise;
  cfg.rise.masks = 100;
  const auto all = explain_batch(model, data, cfg, 3, TargetMode::kLabel);
  const std::vector<TokenSequence> tail(data.begin() + 5, data.end());
  const auto part = explain_batch(model, tail, cfg, 3, TargetMode::kLabel);
  for (std::size_t i = 0; i < tail.size(); ++i) EXPECT_EQ(part[i].scores, all[i + 5].scores);
}

}  // namespace
}  // namespace tsxplain
