#pragma once

// SAX tokenization of multichannel time series into patch tokens.
//
// Each (channel, patch) pair becomes one token. Channel f uses the id range
// [f*a, (f+1)*a) where a is the alphabet size, so the vocabulary has
// K = F*a real tokens and the reserved UNK id is K. Tokens are laid out
// patch-major: position p = t*F + f for patch t and channel f.

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace tsxplain {

// Real-valued series stored channel-major: values[f * length + t].
struct TimeSeries {
  std::string id;
  std::optional<int> label;
  std::size_t channels = 0;
  std::size_t length = 0;
  std::vector<double> values;

  TimeSeries() = default;
  TimeSeries(std::string id, std::optional<int> label, std::size_t channels,
             std::size_t length);
  // One inner vector per channel; all must have the same size.
  static TimeSeries from_channels(std::string id, std::optional<int> label,
                                  const std::vector<std::vector<double>>& rows);

  std::span<double> channel(std::size_t f);
  std::span<const double> channel(std::size_t f) const;
};

enum class PadPolicy { kRepeatLast, kZeroAfterZnorm };

PadPolicy parse_pad_policy(const std::string& name);
std::string to_string(PadPolicy policy);

struct TokenizerConfig {
  std::size_t patch_length = 25;
  int alphabet_size = 4;
  std::size_t channels = 1;
  PadPolicy pad_policy = PadPolicy::kRepeatLast;

  int vocab_size() const { return static_cast<int>(channels) * alphabet_size; }
  int unk_id() const { return vocab_size(); }
  void validate() const;
};

struct TokenSequence {
  std::string id;
  std::optional<int> label;
  std::vector<int> tokens;
};

struct TokenSpan {
  std::size_t channel;
  std::size_t start;
  std::size_t end;  // exclusive

  bool operator==(const TokenSpan&) const = default;
};

// Per-channel z-normalization with population std. Channels whose std is
// below 1e-8 become all zeros.
TimeSeries znormalize(const TimeSeries& series);

// Mean of each consecutive block of `patch_length` values. The input length
// must be a multiple of the patch length.
std::vector<double> paa(std::span<const double> channel, std::size_t patch_length);

// Standard normal quantile, |error| < 1e-9 on (0, 1).
double inverse_normal_cdf(double p);

// Breakpoints Phi^-1(j/a), j = 1..a-1.
std::vector<double> sax_breakpoints(int alphabet_size);

// Number of breakpoints <= value. A value sitting on a breakpoint goes to the
// upper region.
int sax_symbol(double value, std::span<const double> breakpoints);

// Smallest multiple of patch_length that is >= length.
std::size_t padded_length(std::size_t length, std::size_t patch_length);

// Extends every channel to `target_length` by repeating its last value.
TimeSeries pad_repeat_last(const TimeSeries& series, std::size_t target_length);

// Full preprocessing for one series: pad to `target_length` (rounded up to
// the patch length) according to the pad policy and z-normalize.
TimeSeries prepare_series(const TimeSeries& series, const TokenizerConfig& cfg,
                          std::size_t target_length);

// Interleaves per-channel symbol rows (all the same length) into tokens.
std::vector<int> tokens_from_symbols(const std::vector<std::vector<int>>& symbols,
                                     int alphabet_size);

// Tokenizes an already z-normalized series whose length is a multiple of the
// patch length.
TokenSequence tokenize(const TimeSeries& series, const TokenizerConfig& cfg);

// Channel and time range covered by the token at `position` in a sequence of
// `sequence_length` tokens.
TokenSpan token_span(std::size_t position, std::size_t sequence_length,
                     const TokenizerConfig& cfg);

}  // namespace tsxplain
