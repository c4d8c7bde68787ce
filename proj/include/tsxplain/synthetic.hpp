#pragma once

// Planted-motif corpora with a known ground truth.
//
// Every instance of class c carries motif c: a run of per-patch levels drawn
// as half-sine bumps (each bump averages to its level) on one channel, placed
// at a patch offset inside the motif's window. Everything outside the motif
// is Gaussian noise with standard deviation `noise`.

#include <cstdint>
#include <span>
#include <vector>

#include <nlohmann/json.hpp>

#include "tsxplain/tokenizer.hpp"

namespace tsxplain {

struct Motif {
  std::vector<double> levels;    // one level per patch
  std::size_t channel = 0;
  std::size_t window_start = 0;  // in patches
  std::size_t window_end = 0;    // exclusive, in patches
};

struct SyntheticSpec {
  std::size_t n = 2000;
  std::size_t length = 300;
  std::size_t channels = 2;
  std::size_t patch_length = 25;
  int num_classes = 2;
  std::vector<Motif> motifs;          // one per class; empty -> defaults
  double noise = 1.0;
  std::vector<double> class_balance;  // empty -> uniform

  // Fills in default motifs and balance, then checks consistency.
  void resolve();
  void validate() const;
};

nlohmann::json to_json(const SyntheticSpec& spec);
SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j);

struct SyntheticSplit {
  std::vector<TimeSeries> series;
  std::vector<std::size_t> motif_start;  // first motif patch, per series
};

struct SyntheticCorpus {
  SyntheticSpec spec;  // resolved
  SyntheticSplit train;
  SyntheticSplit val;
  SyntheticSplit test;
};

// Exact class counts from the balance (largest remainder), shuffled, split
// 70/15/15. Deterministic in `seed`.
SyntheticCorpus generate_synthetic(SyntheticSpec spec, std::uint64_t seed);

// Rule-based classifier that knows the motifs: nearest motif template (over
// all allowed offsets) by squared distance on patch means.
int rule_based_label(const TimeSeries& series, const SyntheticSpec& spec);

// Token positions covered by a motif that starts at patch `start`.
std::vector<std::size_t> motif_token_positions(const SyntheticSpec& spec, int label,
                                               std::size_t start);

}  // namespace tsxplain
