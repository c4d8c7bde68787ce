#include "tsxplain/tokenizer.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "tsxplain/common.hpp"

namespace tsxplain {

TimeSeries::TimeSeries(std::string id_, std::optional<int> label_,
                       std::size_t channels_, std::size_t length_)
    : id(std::move(id_)),
      label(label_),
      channels(channels_),
      length(length_),
      values(channels_ * length_, 0.0) {}

TimeSeries TimeSeries::from_channels(std::string id, std::optional<int> label,
                                     const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw ValidationError("series '" + id + "' has no channels");
  const std::size_t len = rows.front().size();
  TimeSeries out(std::move(id), label, rows.size(), len);
  for (std::size_t f = 0; f < rows.size(); ++f) {
    if (rows[f].size() != len) {
      throw ValidationError("series '" + out.id + "': ragged channels (channel " +
                            std::to_string(f) + " has " +
                            std::to_string(rows[f].size()) + " values, expected " +
                            std::to_string(len) + ")");
    }
    std::copy(rows[f].begin(), rows[f].end(), out.channel(f).begin());
  }
  return out;
}

std::span<double> TimeSeries::channel(std::size_t f) {
  return std::span<double>(values).subspan(f * length, length);
}

std::span<const double> TimeSeries::channel(std::size_t f) const {
  return std::span<const double>(values).subspan(f * length, length);
}

PadPolicy parse_pad_policy(const std::string& name) {
  if (name == "repeat-last") return PadPolicy::kRepeatLast;
  if (name == "zero-after-znorm") return PadPolicy::kZeroAfterZnorm;
  throw ValidationError("unknown pad policy '" + name + "'");
}

std::string to_string(PadPolicy policy) {
  return policy == PadPolicy::kRepeatLast ? "repeat-last" : "zero-after-znorm";
}

void TokenizerConfig::validate() const {
  if (patch_length == 0) throw ValidationError("patch_length must be positive");
  if (alphabet_size < 2) throw ValidationError("alphabet too small");
  if (channels == 0) throw ValidationError("channels must be >= 1");
}

TimeSeries znormalize(const TimeSeries& series) {
  TimeSeries out = series;
  for (std::size_t f = 0; f < out.channels; ++f) {
    auto ch = out.channel(f);
    if (ch.empty()) continue;
    const double n = static_cast<double>(ch.size());
    const double mean = std::accumulate(ch.begin(), ch.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : ch) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / n);
    if (sd < 1e-8) {
      std::fill(ch.begin(), ch.end(), 0.0);
    } else {
      for (double& v : ch) v = (v - mean) / sd;
    }
  }
  return out;
}

std::vector<double> paa(std::span<const double> channel, std::size_t patch_length) {
  if (channel.empty()) throw ValidationError("empty series");
  if (patch_length == 0) throw ValidationError("patch_length must be positive");
  if (channel.size() % patch_length != 0) {
    throw ValidationError("series length " + std::to_string(channel.size()) +
                          " is not a multiple of patch length " +
                          std::to_string(patch_length));
  }
  std::vector<double> out(channel.size() / patch_length);
  for (std::size_t t = 0; t < out.size(); ++t) {
    const auto block = channel.subspan(t * patch_length, patch_length);
    out[t] = std::accumulate(block.begin(), block.end(), 0.0) /
             static_cast<double>(patch_length);
  }
  return out;
}

double inverse_normal_cdf(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw ValidationError("inverse_normal_cdf: p must lie in (0, 1)");
  }
  // Acklam's rational approximation (relative error ~1.15e-9).
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double kLow = 0.02425;
  double x;
  if (p < kLow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= 1.0 - kLow) {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  // One Halley step against the erfc-based CDF brings it to full precision.
  const double e = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(x * x / 2.0);
  x = x - u / (1.0 + x * u / 2.0);
  return x;
}

std::vector<double> sax_breakpoints(int alphabet_size) {
  if (alphabet_size < 2) throw ValidationError("alphabet too small");
  std::vector<double> out(static_cast<std::size_t>(alphabet_size - 1));
  const double a = static_cast<double>(alphabet_size);
  for (int j = 1; j < alphabet_size; ++j) {
    out[static_cast<std::size_t>(j - 1)] = inverse_normal_cdf(j / a);
  }
  // Exact symmetry: mirror the upper half onto the lower half.
  for (std::size_t j = 0; j < out.size() / 2; ++j) {
    out[j] = -out[out.size() - 1 - j];
  }
  if (out.size() % 2 == 1) out[out.size() / 2] = 0.0;
  return out;
}

int sax_symbol(double value, std::span<const double> breakpoints) {
  return static_cast<int>(
      std::upper_bound(breakpoints.begin(), breakpoints.end(), value) -
      breakpoints.begin());
}

std::size_t padded_length(std::size_t length, std::size_t patch_length) {
  if (patch_length == 0) throw ValidationError("patch_length must be positive");
  return (length + patch_length - 1) / patch_length * patch_length;
}

TimeSeries pad_repeat_last(const TimeSeries& series, std::size_t target_length) {
  if (target_length < series.length) {
    throw ValidationError("series '" + series.id + "' is longer than the pad target");
  }
  if (series.length == 0) throw ValidationError("empty series");
  TimeSeries out(series.id, series.label, series.channels, target_length);
  for (std::size_t f = 0; f < series.channels; ++f) {
    auto src = series.channel(f);
    auto dst = out.channel(f);
    std::copy(src.begin(), src.end(), dst.begin());
    std::fill(dst.begin() + static_cast<std::ptrdiff_t>(src.size()), dst.end(),
              src.back());
  }
  return out;
}

TimeSeries prepare_series(const TimeSeries& series, const TokenizerConfig& cfg,
                          std::size_t target_length) {
  cfg.validate();
  if (series.channels != cfg.channels) {
    throw ValidationError("series '" + series.id + "' has " +
                          std::to_string(series.channels) + " channels, expected " +
                          std::to_string(cfg.channels));
  }
  const std::size_t target =
      padded_length(std::max(target_length, series.length), cfg.patch_length);
  if (cfg.pad_policy == PadPolicy::kRepeatLast) {
    return znormalize(pad_repeat_last(series, target));
  }
  const TimeSeries norm = znormalize(series);
  TimeSeries out(series.id, series.label, series.channels, target);
  for (std::size_t f = 0; f < series.channels; ++f) {
    std::copy(norm.channel(f).begin(), norm.channel(f).end(), out.channel(f).begin());
  }
  return out;
}

std::vector<int> tokens_from_symbols(const std::vector<std::vector<int>>& symbols,
                                     int alphabet_size) {
  if (symbols.empty()) return {};
  const std::size_t channels = symbols.size();
  const std::size_t patches = symbols.front().size();
  std::vector<int> tokens(channels * patches);
  for (std::size_t f = 0; f < channels; ++f) {
    if (symbols[f].size() != patches) throw ValidationError("ragged symbol rows");
    for (std::size_t t = 0; t < patches; ++t) {
      const int s = symbols[f][t];
      if (s < 0 || s >= alphabet_size) throw ValidationError("symbol out of range");
      tokens[t * channels + f] = static_cast<int>(f) * alphabet_size + s;
    }
  }
  return tokens;
}

TokenSequence tokenize(const TimeSeries& series, const TokenizerConfig& cfg) {
  cfg.validate();
  if (series.channels != cfg.channels) {
    throw ValidationError("series '" + series.id + "' has " +
                          std::to_string(series.channels) + " channels, expected " +
                          std::to_string(cfg.channels));
  }
  const auto breakpoints = sax_breakpoints(cfg.alphabet_size);
  std::vector<std::vector<int>> symbols(series.channels);
  for (std::size_t f = 0; f < series.channels; ++f) {
    const auto means = paa(series.channel(f), cfg.patch_length);
    symbols[f].reserve(means.size());
    for (double m : means) {
      if (!std::isfinite(m)) {
        throw ValidationError("invalid input: non-finite value in series '" +
                              series.id + "'");
      }
      symbols[f].push_back(sax_symbol(m, breakpoints));
    }
  }
  return TokenSequence{series.id, series.label,
                       tokens_from_symbols(symbols, cfg.alphabet_size)};
}

TokenSpan token_span(std::size_t position, std::size_t sequence_length,
                     const TokenizerConfig& cfg) {
  if (position >= sequence_length) {
    throw ValidationError("token position " + std::to_string(position) +
                          " out of range for sequence of length " +
                          std::to_string(sequence_length));
  }
  const std::size_t patch = position / cfg.channels;
  return TokenSpan{position % cfg.channels, patch * cfg.patch_length,
                   (patch + 1) * cfg.patch_length};
}

}  // namespace tsxplain
