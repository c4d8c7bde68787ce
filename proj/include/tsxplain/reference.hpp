#pragma once

// Serial reference kernels. Same contracts as the OpenMP versions, written
// as plain loops over the unfolded model so the two paths can be checked
// against each other and benchmarked.

#include <cstdint>
#include <span>
#include <vector>

#include "tsxplain/attribution.hpp"
#include "tsxplain/evaluation.hpp"

namespace tsxplain::reference {

std::vector<int> predict_batch(const ClassifierModel& model,
                               std::span<const TokenSequence> data);

std::vector<AttributionVector> explain_batch(const ClassifierModel& model,
                                             std::span<const TokenSequence> data,
                                             const MethodConfig& cfg, std::uint64_t seed,
                                             TargetMode mode);

DeletionCurve deletion_curve(const ClassifierModel& model,
                             std::span<const TokenSequence> test,
                             std::span<const AttributionVector> attributions);

// Linear scan of the training set for every test instance.
SsaResult ssa(std::span<const TokenSequence> train, std::span<const TokenSequence> test,
              std::span<const AttributionVector> attributions, std::size_t length,
              int num_classes, const SsaOptions& opts = {});

}  // namespace tsxplain::reference
