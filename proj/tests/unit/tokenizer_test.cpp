#include "tsxplain/tokenizer.hpp"

#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "test_support.hpp"

namespace tsxplain {
namespace {

// Inverse normal CDF by bisection on erfc. Independent of the rational
// approximation used by the library.
double bisect_quantile(double p) {
  double lo = -10.0, hi = 10.0;
  for (int i = 0; i < 200; ++i) {
    const double mid = 0.5 * (lo + hi);
    const double cdf = 0.5 * std::erfc(-mid / std::sqrt(2.0));
    (cdf < p ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

TimeSeries single(std::vector<double> v) {
  return TimeSeries::from_channels("s", 0, {std::move(v)});
}

TEST(Znormalize, PopulationStd) {
  const auto z = znormalize(single({1, 2, 3}));
  const double s = std::sqrt(1.5);
  EXPECT_NEAR(z.values[0], -1.0 * s, 1e-12);
  EXPECT_NEAR(z.values[1], 0.0, 1e-12);
  EXPECT_NEAR(z.values[2], 1.0 * s, 1e-12);
  EXPECT_NEAR(z.values[0], -1.2247, 1e-4);
}

TEST(Znormalize, ConstantChannelBecomesZero) {
  const auto z = znormalize(single({5, 5, 5}));
  for (double v : z.values) EXPECT_EQ(v, 0.0);
}

TEST(Znormalize, IdempotentOnNormalizedInput) {
  Rng rng(3);
  std::vector<double> v(50);
  for (auto& x : v) x = standard_normal(rng) * 3 + 1;
  const auto once = znormalize(single(v));
  const auto twice = znormalize(once);
  for (std::size_t i = 0; i < v.size(); ++i) EXPECT_NEAR(once.values[i], twice.values[i], 1e-12);
}

TEST(Znormalize, ChannelsAreIndependent) {
  const auto ts = TimeSeries::from_channels("m", 1, {{1, 2, 3}, {10, 10, 10}});
  const auto z = znormalize(ts);
  EXPECT_NEAR(z.channel(0)[2], 1.2247, 1e-4);
  EXPECT_EQ(z.channel(1)[0], 0.0);
}

TEST(Paa, PatchMeans) {
  const std::vector<double> v{1, 2, 3, 4, 5, 6};
  EXPECT_EQ(paa(v, 3), (std::vector<double>{2, 5}));
  EXPECT_EQ(paa(v, 1), v);
  EXPECT_EQ(paa(std::vector<double>{0, 0, 0, 0}, 2), (std::vector<double>{0, 0}));
}

TEST(Paa, RejectsBadShapes) {
  EXPECT_THROW(paa(std::vector<double>{1, 2, 3}, 2), ValidationError);
  EXPECT_THROW(paa(std::vector<double>{}, 2), ValidationError);
}

TEST(Breakpoints, KnownValues) {
  EXPECT_EQ(sax_breakpoints(2), (std::vector<double>{0.0}));
  const auto b4 = sax_breakpoints(4);
  ASSERT_EQ(b4.size(), 3u);
  EXPECT_NEAR(b4[0], -0.6745, 1e-4);
  EXPECT_EQ(b4[1], 0.0);
  EXPECT_NEAR(b4[2], 0.6745, 1e-4);
  const auto b3 = sax_breakpoints(3);
  EXPECT_NEAR(b3[0], -0.4307, 1e-4);
  EXPECT_NEAR(b3[1], 0.4307, 1e-4);
}

TEST(Breakpoints, MatchQuantileOracle) {
  for (int a = 2; a <= 10; ++a) {
    const auto b = sax_breakpoints(a);
    ASSERT_EQ(b.size(), static_cast<std::size_t>(a - 1));
    for (int j = 1; j < a; ++j) {
      EXPECT_NEAR(b[j - 1], bisect_quantile(static_cast<double>(j) / a), 1e-4) << "a=" << a;
    }
    for (std::size_t j = 1; j < b.size(); ++j) EXPECT_LT(b[j - 1], b[j]);
  }
}

TEST(Breakpoints, InverseCdfIsTight) {
  for (double p : {1e-6, 0.01, 0.1, 0.3, 0.5, 0.77, 0.99, 1 - 1e-6}) {
    EXPECT_NEAR(inverse_normal_cdf(p), bisect_quantile(p), 1e-9) << p;
  }
}

TEST(Breakpoints, AlphabetTooSmall) {
  EXPECT_THROW(sax_breakpoints(1), ValidationError);
}

TEST(SaxSymbol, BoundaryMapsUpward) {
  const auto b = sax_breakpoints(4);
  EXPECT_EQ(sax_symbol(0.0, b), 2);
  EXPECT_EQ(sax_symbol(b[0], b), 1);
  EXPECT_EQ(sax_symbol(-5.0, b), 0);
  EXPECT_EQ(sax_symbol(5.0, b), 3);
}

TEST(SaxSymbol, Monotone) {
  Rng rng(17);
  for (int a = 2; a <= 10; ++a) {
    const auto b = sax_breakpoints(a);
    for (int trial = 0; trial < 2000; ++trial) {
      const double x = 3 * standard_normal(rng);
      const double y = x + std::abs(standard_normal(rng));
      EXPECT_LE(sax_symbol(x, b), sax_symbol(y, b));
    }
  }
}

TEST(SaxSymbol, EquiprobableOnGaussianInput) {
  Rng rng(2024);
  const auto b = sax_breakpoints(4);
  std::vector<int> counts(4, 0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) ++counts[sax_symbol(standard_normal(rng), b)];
  double chi2 = 0.0;
  for (int c : counts) {
    const double f = static_cast<double>(c) / n;
    EXPECT_NEAR(f, 0.25, 0.01);
    chi2 += (c - n / 4.0) * (c - n / 4.0) / (n / 4.0);
  }
  // 3 degrees of freedom, 0.999 quantile.
  EXPECT_LT(chi2, 16.27);
}

TEST(Tokenize, ZeroChannelGivesUpperMiddleSymbol) {
  TokenizerConfig cfg{5, 4, 1, PadPolicy::kRepeatLast};
  const auto seq = tokenize(single(std::vector<double>(20, 0.0)), cfg);
  EXPECT_EQ(seq.tokens, (std::vector<int>{2, 2, 2, 2}));
  // A constant raw channel normalizes to zeros first.
  const auto prepared = prepare_series(single(std::vector<double>(20, 3.0)), cfg, 20);
  EXPECT_EQ(tokenize(prepared, cfg).tokens, seq.tokens);
}

TEST(Tokenize, SignSplitAtMedian) {
  TokenizerConfig cfg{2, 2, 1, PadPolicy::kRepeatLast};
  // Patch means -1 and 1 after z-normalization.
  const auto seq = tokenize(single({-1, -1, 1, 1}), cfg);
  EXPECT_EQ(seq.tokens, (std::vector<int>{0, 1}));
}

TEST(Tokenize, InterleavesChannelsPatchMajor) {
  EXPECT_EQ(tokens_from_symbols({{0, 1}, {1, 0}}, 2), (std::vector<int>{0, 3, 1, 2}));
  TokenizerConfig cfg{2, 2, 2, PadPolicy::kRepeatLast};
  const auto ts = TimeSeries::from_channels("m", 0, {{-1, -1, 1, 1}, {1, 1, -1, -1}});
  EXPECT_EQ(tokenize(ts, cfg).tokens, (std::vector<int>{0, 3, 1, 2}));
}

TEST(Tokenize, RejectsNonFinite) {
  TokenizerConfig cfg{2, 2, 1, PadPolicy::kRepeatLast};
  EXPECT_THROW(tokenize(single({1, NAN, 2, 3}), cfg), ValidationError);
}

TEST(Tokenize, Deterministic) {
  Rng rng(5);
  std::vector<std::vector<double>> rows(3, std::vector<double>(100));
  for (auto& r : rows) {
    for (auto& v : r) v = standard_normal(rng);
  }
  const auto ts = TimeSeries::from_channels("d", 1, rows);
  TokenizerConfig cfg{10, 6, 3, PadPolicy::kRepeatLast};
  EXPECT_EQ(tokenize(ts, cfg).tokens, tokenize(ts, cfg).tokens);
}

TEST(Tokenize, TokensStayInVocabulary) {
  Rng rng(8);
  TokenizerConfig cfg{4, 5, 3, PadPolicy::kRepeatLast};
  std::vector<std::vector<double>> rows(3, std::vector<double>(40));
  for (auto& r : rows) {
    for (auto& v : r) v = standard_normal(rng);
  }
  const auto seq = tokenize(TimeSeries::from_channels("v", 0, rows), cfg);
  ASSERT_EQ(seq.tokens.size(), 30u);
  for (std::size_t p = 0; p < seq.tokens.size(); ++p) {
    const int f = static_cast<int>(p % 3);
    EXPECT_GE(seq.tokens[p], f * 5);
    EXPECT_LT(seq.tokens[p], (f + 1) * 5);
  }
}

TEST(TokenSpan, Examples) {
  TokenizerConfig two{25, 4, 2, PadPolicy::kRepeatLast};
  TokenizerConfig one{25, 4, 1, PadPolicy::kRepeatLast};
  EXPECT_EQ(token_span(0, 24, two), (TokenSpan{0, 0, 25}));
  EXPECT_EQ(token_span(3, 24, two), (TokenSpan{1, 25, 50}));
  EXPECT_EQ(token_span(5, 12, one), (TokenSpan{0, 125, 150}));
  EXPECT_THROW(token_span(24, 24, two), ValidationError);
}

TEST(TokenSpan, InvertsInterleavingExhaustively) {
  for (std::size_t channels = 1; channels <= 4; ++channels) {
    TokenizerConfig cfg{3, 4, channels, PadPolicy::kRepeatLast};
    const std::size_t patches = 1000 / channels;
    const std::size_t t_len = patches * channels;
    // Each patch value encodes (channel, patch) so the token reveals both.
    std::vector<std::vector<int>> symbols(channels, std::vector<int>(patches));
    for (std::size_t f = 0; f < channels; ++f) {
      for (std::size_t t = 0; t < patches; ++t) symbols[f][t] = static_cast<int>((t + f) % 4);
    }
    const auto tokens = tokens_from_symbols(symbols, 4);
    ASSERT_EQ(tokens.size(), t_len);
    for (std::size_t p = 0; p < t_len; ++p) {
      const auto span = token_span(p, t_len, cfg);
      const std::size_t t = span.start / cfg.patch_length;
      EXPECT_EQ(span.end - span.start, cfg.patch_length);
      EXPECT_EQ(tokens[p], static_cast<int>(span.channel) * 4 + symbols[span.channel][t]);
      EXPECT_EQ(t * channels + span.channel, p);
    }
  }
}

TEST(Padding, RepeatLastBeforeNormalization) {
  TokenizerConfig cfg{2, 4, 1, PadPolicy::kRepeatLast};
  const auto prepared = prepare_series(single({1, 2, 3}), cfg, 6);
  ASSERT_EQ(prepared.length, 6u);
  EXPECT_EQ(prepared.values, znormalize(single({1, 2, 3, 3, 3, 3})).values);
}

TEST(Padding, RoundsUpToWholePatches) {
  EXPECT_EQ(padded_length(7, 3), 9u);
  EXPECT_EQ(padded_length(9, 3), 9u);
  TokenizerConfig cfg{3, 4, 1, PadPolicy::kRepeatLast};
  EXPECT_EQ(prepare_series(single({1, 2, 3, 4, 5, 6, 7}), cfg, 7).length, 9u);
}

TEST(Padding, ZeroAfterZnorm) {
  TokenizerConfig cfg{2, 4, 1, PadPolicy::kZeroAfterZnorm};
  const auto prepared = prepare_series(single({1, 2, 3}), cfg, 6);
  ASSERT_EQ(prepared.length, 6u);
  EXPECT_NEAR(prepared.values[0], -1.2247, 1e-4);
  EXPECT_EQ(prepared.values[3], 0.0);
  EXPECT_EQ(prepared.values[5], 0.0);
}

}  // namespace
}  // namespace tsxplain
