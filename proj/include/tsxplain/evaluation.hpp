#pragma once

// Attribution quality measures: incremental-deletion AUC, seed invariance,
// cross-method agreement and Similar Subsequence Accuracy (SSA).

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "tsxplain/attribution.hpp"
#include "tsxplain/classifier.hpp"

namespace tsxplain {

// Unweighted mean of per-class F1 over the classes that occur in either
// `truth` or `pred`.
double macro_f1(std::span<const int> truth, std::span<const int> pred);

// Positions sorted by descending score; equal scores keep ascending position.
std::vector<std::size_t> deletion_order(std::span<const double> scores);

struct DeletionCurve {
  std::vector<double> f1;  // f1[k] after replacing the top-k tokens by UNK
  std::string source;
  std::string dataset_id;
};

// Matches attributions to instances by id; throws listing every test id that
// has no attribution.
std::vector<const AttributionVector*> align_attributions(
    std::span<const TokenSequence> test, std::span<const AttributionVector> attributions);

DeletionCurve deletion_curve(const ClassifierModel& model,
                             std::span<const TokenSequence> test,
                             std::span<const AttributionVector> attributions,
                             std::string source, std::string dataset_id = {});

// Trapezoid rule over k = 0..T, divided by T.
double auc(const DeletionCurve& curve);

// AUC_RND - AUC_XAI; positive when guided deletion hurts more than random.
inline double auc_gap(double auc_rnd, double auc_xai) { return auc_rnd - auc_xai; }

// nullopt when either vector is all zeros (similarity undefined).
std::optional<double> cosine_similarity(std::span<const double> a,
                                        std::span<const double> b);

std::vector<double> min_max_normalize(std::span<const double> v);

struct InvarianceResult {
  double mean = 0.0;
  double std = 0.0;
  std::size_t pairs = 0;    // defined (instance, model pair) comparisons
  std::size_t skipped = 0;  // undefined similarities
};

// `per_model[m]` holds model m's attributions for the same test instances in
// the same order. Every unordered model pair is compared per instance.
InvarianceResult implementation_invariance(
    std::span<const std::vector<AttributionVector>> per_model, bool normalize = false);

// Computes each model's attributions with a shared explanation seed, then
// compares them. Models must share their architecture.
InvarianceResult implementation_invariance(std::span<const ClassifierModel> models,
                                           const MethodConfig& method,
                                           std::span<const TokenSequence> test,
                                           std::uint64_t seed, bool normalize = false);

struct AgreementMatrix {
  std::vector<std::string> methods;
  std::vector<double> values;  // methods x methods, row-major
  double summary = 0.0;        // mean of the off-diagonal entries
  std::size_t skipped = 0;

  double at(std::size_t i, std::size_t j) const { return values[i * methods.size() + j]; }
};

using NamedAttributions = std::pair<std::string, std::vector<AttributionVector>>;

AgreementMatrix xai_agreement(std::span<const NamedAttributions> methods,
                              bool normalize = false);

struct SsaOptions {
  bool use_abs = false;  // argmax over |score| instead of raw score
};

struct SsaResult {
  std::size_t length = 0;
  std::string method;
  std::vector<std::optional<double>> per_class;
  std::vector<std::size_t> matches;
  std::vector<std::size_t> neighborhoods;
  std::optional<double> mean;  // over defined classes
  std::size_t undefined_classes = 0;
  double mean_neighbors = 0.0;  // mean |N(z)| per test instance
};

// Start of the salient window: argmax (lowest index on ties) clamped to T-l.
std::size_t salient_window_start(std::span<const double> scores, std::size_t length,
                                 bool use_abs = false);

// Position-aligned SSA over classes 0..num_classes-1 (OpenMP over test
// instances, window lookups through a per-position index of the training set).
SsaResult ssa(std::span<const TokenSequence> train, std::span<const TokenSequence> test,
              std::span<const AttributionVector> attributions, std::size_t length,
              int num_classes, std::string method, const SsaOptions& opts = {});

struct SsaSweep {
  std::vector<SsaResult> method;
  std::vector<SsaResult> random;  // same procedure on random attributions
};

// One random attribution per test instance (seeded by rnd_seed and the id) is
// reused across all lengths.
SsaSweep ssa_sweep(std::span<const TokenSequence> train,
                   std::span<const TokenSequence> test,
                   std::span<const AttributionVector> attributions,
                   std::span<const std::size_t> lengths, int num_classes,
                   const std::string& method, std::uint64_t rnd_seed,
                   const SsaOptions& opts = {});

// Random attributions for every test instance, as used by the RND baselines.
std::vector<AttributionVector> random_attributions(std::span<const TokenSequence> data,
                                                   std::uint64_t seed);

}  // namespace tsxplain
