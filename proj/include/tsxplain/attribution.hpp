#pragma once

// Token-level attributions: saliency, integrated gradients, RISE, LIME and a
// random baseline. UNK is the neutral replacement for every masking method.

#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "tsxplain/classifier.hpp"
#include "tsxplain/common.hpp"

namespace tsxplain {

enum class Method { kSaliency, kIntegratedGradients, kRise, kLime, kRandom };

std::string to_string(Method m);
Method parse_method(const std::string& name);

struct AttributionVector {
  std::vector<double> scores;
  Method method = Method::kRandom;
  int target_class = 0;
  std::string instance_id;
  std::map<std::string, double> params;
};

// N x T binary masks, row-major. 1 keeps the token, 0 replaces it with UNK.
struct MaskSet {
  std::size_t count = 0;
  std::size_t length = 0;
  double p_keep = 1.0;
  std::vector<std::uint8_t> bits;

  std::span<const std::uint8_t> mask(std::size_t i) const {
    return std::span<const std::uint8_t>(bits).subspan(i * length, length);
  }
};

MaskSet sample_masks(std::size_t count, std::size_t length, double p_keep, Rng& rng);

struct IgOptions {
  int steps = 32;
  bool absolute = false;  // report |sum| instead of the signed sum
};

struct RiseOptions {
  std::size_t masks = 4000;
  double p_keep = 0.5;
  bool normalize_by_pkeep = false;
};

struct LimeOptions {
  std::size_t samples = 1000;
  std::optional<double> kernel_width;  // default 0.75 * sqrt(T)
  double ridge = 1e-3;
};

// s_i = sum_j |dS_c / de_ij| with S_c the class-c logit.
AttributionVector saliency(const ClassifierModel& model, std::span<const int> tokens,
                           int target);

// Euclidean distance between each token's embedding and the UNK embedding.
std::vector<double> baseline_distances(const ClassifierModel& model,
                                       std::span<const int> tokens);

// Right-Riemann integrated gradients from the all-UNK baseline, summed over
// embedding coordinates.
AttributionVector integrated_gradients(const ClassifierModel& model,
                                       std::span<const int> tokens, int target,
                                       const IgOptions& opts = {});

// R = (1/N) sum_M P(c | z masked by M) * M.
AttributionVector rise(const Predictor& predictor, std::span<const int> tokens,
                       int target, const RiseOptions& opts, Rng& rng);
AttributionVector rise_with_masks(const Predictor& predictor, std::span<const int> tokens,
                                  int target, const MaskSet& masks,
                                  bool normalize_by_pkeep = false);

// Weighted ridge surrogate on Bernoulli(0.5) presence vectors, kernel
// exp(-(#absent)^2 / width^2). Scores are the surrogate coefficients.
AttributionVector lime(const Predictor& predictor, std::span<const int> tokens,
                       int target, const LimeOptions& opts, Rng& rng);

// Fits the LIME surrogate for given presence rows / responses / weights.
// Exposed so callers can check the regression on hand-built designs.
std::vector<double> weighted_ridge(std::span<const std::uint8_t> presence,
                                   std::size_t length, std::span<const double> response,
                                   std::span<const double> weights, double ridge);

AttributionVector random_attribution(std::size_t length, Rng& rng);

struct MethodConfig {
  Method method = Method::kSaliency;
  IgOptions ig;
  RiseOptions rise;
  LimeOptions lime;
};

// Which class each instance is explained for.
enum class TargetMode { kPredicted, kLabel };

// Attribution for every instance (OpenMP over instances). Instance i uses an
// rng seeded by derive_seed(seed, method + id), so the result does not depend
// on scheduling or thread count. `targets`, when given, overrides the
// per-instance target class.
std::vector<AttributionVector> explain_batch(
    const ClassifierModel& model, std::span<const TokenSequence> data,
    const MethodConfig& cfg, std::uint64_t seed, TargetMode mode,
    std::optional<std::span<const int>> targets = std::nullopt);

// Rng stream used for one instance in explain_batch.
Rng instance_rng(std::uint64_t seed, Method method, const std::string& id);

}  // namespace tsxplain
