#include "tsxplain/attribution.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <exception>

namespace tsxplain {

std::string to_string(Method m) {
  switch (m) {
    case Method::kSaliency: return "saliency";
    case Method::kIntegratedGradients: return "integrated_gradients";
    case Method::kRise: return "rise";
    case Method::kLime: return "lime";
    case Method::kRandom: return "random";
  }
  return "unknown";
}

Method parse_method(const std::string& name) {
  if (name == "saliency" || name == "sm") return Method::kSaliency;
  if (name == "integrated_gradients" || name == "ig") return Method::kIntegratedGradients;
  if (name == "rise") return Method::kRise;
  if (name == "lime") return Method::kLime;
  if (name == "random" || name == "rnd") return Method::kRandom;
  throw ValidationError("unknown attribution method '" + name + "'");
}

MaskSet sample_masks(std::size_t count, std::size_t length, double p_keep, Rng& rng) {
  if (count == 0) throw ValidationError("need at least one mask");
  if (!(p_keep > 0.0 && p_keep <= 1.0)) throw ValidationError("p_keep must be in (0, 1]");
  MaskSet out{count, length, p_keep, std::vector<std::uint8_t>(count * length)};
  for (auto& b : out.bits) b = uniform01(rng) < p_keep ? 1 : 0;
  return out;
}

AttributionVector saliency(const ClassifierModel& model, std::span<const int> tokens,
                           int target) {
  const auto grad = grad_wrt_embeddings(model, tokens, target);
  const std::size_t d = model.embed_dim;
  AttributionVector out{std::vector<double>(tokens.size(), 0.0), Method::kSaliency,
                        target, {}, {}};
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    for (std::size_t j = 0; j < d; ++j) out.scores[i] += std::abs(grad[i * d + j]);
  }
  return out;
}

std::vector<double> baseline_distances(const ClassifierModel& model,
                                       std::span<const int> tokens) {
  const auto unk = model.embedding_row(model.unk_id());
  std::vector<double> out;
  out.reserve(tokens.size());
  for (int t : tokens) {
    const auto e = model.embedding_row(t);
    double ss = 0.0;
    for (std::size_t j = 0; j < e.size(); ++j) ss += (e[j] - unk[j]) * (e[j] - unk[j]);
    out.push_back(std::sqrt(ss));
  }
  return out;
}

AttributionVector integrated_gradients(const ClassifierModel& model,
                                       std::span<const int> tokens, int target,
                                       const IgOptions& opts) {
  if (opts.steps < 1) throw ValidationError("integrated gradients needs steps >= 1");
  const auto input = embed(model, tokens);
  const auto unk = model.embedding_row(model.unk_id());
  const std::size_t d = model.embed_dim;
  std::vector<double> delta(input.size());
  for (std::size_t k = 0; k < input.size(); ++k) delta[k] = input[k] - unk[k % d];

  std::vector<double> grad_sum(input.size(), 0.0);
  std::vector<double> point(input.size());
  const double m = static_cast<double>(opts.steps);
  for (int alpha = 1; alpha <= opts.steps; ++alpha) {
    const double frac = static_cast<double>(alpha) / m;
    for (std::size_t k = 0; k < point.size(); ++k) point[k] = unk[k % d] + frac * delta[k];
    const auto g = input_gradient(model, point, target);
    for (std::size_t k = 0; k < g.size(); ++k) grad_sum[k] += g[k];
  }

  AttributionVector out{std::vector<double>(tokens.size(), 0.0),
                        Method::kIntegratedGradients, target, {}, {}};
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += delta[i * d + j] * grad_sum[i * d + j] / m;
    out.scores[i] = opts.absolute ? std::abs(s) : s;
  }
  const auto dist = baseline_distances(model, tokens);
  double mean_dist = 0.0;
  for (double v : dist) mean_dist += v;
  out.params["steps"] = opts.steps;
  out.params["mean_baseline_distance"] = dist.empty() ? 0.0 : mean_dist / dist.size();
  return out;
}

AttributionVector rise_with_masks(const Predictor& predictor, std::span<const int> tokens,
                                  int target, const MaskSet& masks,
                                  bool normalize_by_pkeep) {
  if (masks.length != tokens.size()) throw ValidationError("mask length mismatch");
  if (masks.count == 0) throw ValidationError("need at least one mask");
  if (target < 0 || target >= predictor.model().num_classes) {
    throw ValidationError("class " + std::to_string(target) + " out of range");
  }
  const int unk = predictor.model().unk_id();
  std::vector<double> acc(tokens.size(), 0.0);
  std::vector<int> masked(tokens.size());
  for (std::size_t n = 0; n < masks.count; ++n) {
    const auto m = masks.mask(n);
    for (std::size_t i = 0; i < tokens.size(); ++i) masked[i] = m[i] ? tokens[i] : unk;
    const double p = predictor.proba(masked)[static_cast<std::size_t>(target)];
    for (std::size_t i = 0; i < tokens.size(); ++i) {
      if (m[i]) acc[i] += p;
    }
  }
  double denom = static_cast<double>(masks.count);
  if (normalize_by_pkeep) denom *= masks.p_keep;
  for (double& v : acc) v /= denom;
  AttributionVector out{std::move(acc), Method::kRise, target, {}, {}};
  out.params["masks"] = static_cast<double>(masks.count);
  out.params["p_keep"] = masks.p_keep;
  return out;
}

AttributionVector rise(const Predictor& predictor, std::span<const int> tokens,
                       int target, const RiseOptions& opts, Rng& rng) {
  const MaskSet masks = sample_masks(opts.masks, tokens.size(), opts.p_keep, rng);
  return rise_with_masks(predictor, tokens, target, masks, opts.normalize_by_pkeep);
}

std::vector<double> weighted_ridge(std::span<const std::uint8_t> presence,
                                   std::size_t length, std::span<const double> response,
                                   std::span<const double> weights, double ridge) {
  const std::size_t n = response.size();
  if (n == 0 || presence.size() != n * length || weights.size() != n) {
    throw ValidationError("weighted_ridge: inconsistent design");
  }
  if (ridge < 0.0) throw ValidationError("ridge penalty must be >= 0");
  const auto T = static_cast<Eigen::Index>(length);
  Eigen::MatrixXd X(static_cast<Eigen::Index>(n), T);
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t c = 0; c < length; ++c) {
      X(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) = presence[r * length + c];
    }
  }
  const Eigen::Map<const Eigen::VectorXd> y(response.data(), static_cast<Eigen::Index>(n));
  const Eigen::Map<const Eigen::VectorXd> w(weights.data(), static_cast<Eigen::Index>(n));
  const double wsum = w.sum();
  if (!(wsum > 0.0)) throw RuntimeError("singular regression: zero total weight");

  // Centering with the weighted means leaves the intercept unpenalized.
  const Eigen::RowVectorXd xmean = (w.asDiagonal() * X).colwise().sum() / wsum;
  const double ymean = w.dot(y) / wsum;
  const Eigen::MatrixXd Xc = X.rowwise() - xmean;
  const Eigen::VectorXd yc = y.array() - ymean;
  Eigen::MatrixXd A = Xc.transpose() * w.asDiagonal() * Xc;
  A.diagonal().array() += ridge;
  const Eigen::VectorXd b = Xc.transpose() * (w.asDiagonal() * yc);

  Eigen::VectorXd beta;
  if (ridge > 0.0) {
    Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) {
      throw RuntimeError("singular regression");
    }
    beta = ldlt.solve(b);
  } else {
    Eigen::FullPivLU<Eigen::MatrixXd> lu(A);
    lu.setThreshold(1e-12);
    if (lu.rank() < T) throw RuntimeError("singular regression");
    beta = lu.solve(b);
  }
  return std::vector<double>(beta.data(), beta.data() + beta.size());
}

AttributionVector lime(const Predictor& predictor, std::span<const int> tokens,
                       int target, const LimeOptions& opts, Rng& rng) {
  if (opts.samples == 0) throw ValidationError("LIME needs at least one sample");
  if (target < 0 || target >= predictor.model().num_classes) {
    throw ValidationError("class " + std::to_string(target) + " out of range");
  }
  const std::size_t T = tokens.size();
  const double width =
      opts.kernel_width.value_or(0.75 * std::sqrt(static_cast<double>(T)));
  if (!(width > 0.0)) throw ValidationError("kernel width must be positive");
  const int unk = predictor.model().unk_id();

  std::vector<std::uint8_t> presence(opts.samples * T);
  std::vector<double> response(opts.samples);
  std::vector<double> weights(opts.samples);
  std::vector<int> perturbed(T);
  for (std::size_t s = 0; s < opts.samples; ++s) {
    std::size_t absent = 0;
    for (std::size_t i = 0; i < T; ++i) {
      const bool keep = uniform01(rng) < 0.5;
      presence[s * T + i] = keep ? 1 : 0;
      perturbed[i] = keep ? tokens[i] : unk;
      if (!keep) ++absent;
    }
    response[s] = predictor.proba(perturbed)[static_cast<std::size_t>(target)];
    const double dist = static_cast<double>(absent);
    weights[s] = std::exp(-(dist * dist) / (width * width));
  }
  AttributionVector out{weighted_ridge(presence, T, response, weights, opts.ridge),
                        Method::kLime, target, {}, {}};
  out.params["samples"] = static_cast<double>(opts.samples);
  out.params["kernel_width"] = width;
  out.params["ridge"] = opts.ridge;
  return out;
}

AttributionVector random_attribution(std::size_t length, Rng& rng) {
  if (length == 0) throw ValidationError("random attribution needs T >= 1");
  AttributionVector out{std::vector<double>(length), Method::kRandom, 0, {}, {}};
  for (double& v : out.scores) v = uniform01(rng);
  return out;
}

Rng instance_rng(std::uint64_t seed, Method method, const std::string& id) {
  return Rng(derive_seed(seed, to_string(method) + "/" + id));
}

std::vector<AttributionVector> explain_batch(const ClassifierModel& model,
                                             std::span<const TokenSequence> data,
                                             const MethodConfig& cfg, std::uint64_t seed,
                                             TargetMode mode,
                                             std::optional<std::span<const int>> targets) {
  if (targets && targets->size() != data.size()) {
    throw ValidationError("explain_batch: one target per instance required");
  }
  const Predictor predictor(model);
  std::vector<int> target(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    // Validates tokens before entering the parallel region.
    embed(model, data[i].tokens);
    if (targets) {
      target[i] = (*targets)[i];
    } else if (mode == TargetMode::kLabel) {
      if (!data[i].label) {
        throw ValidationError("instance '" + data[i].id + "' has no label to explain");
      }
      target[i] = *data[i].label;
    } else {
      target[i] = predictor.predict(data[i].tokens);
    }
    if (target[i] < 0 || target[i] >= model.num_classes) {
      throw ValidationError("instance '" + data[i].id + "': target class out of range");
    }
  }

  std::vector<AttributionVector> out(data.size());
  std::vector<std::exception_ptr> errors(data.size());
  const auto n = static_cast<std::ptrdiff_t>(data.size());
#pragma omp parallel for schedule(dynamic, 4)
  for (std::ptrdiff_t ii = 0; ii < n; ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    try {
      const TokenSequence& s = data[i];
      Rng rng = instance_rng(seed, cfg.method, s.id);
      AttributionVector a;
      switch (cfg.method) {
        case Method::kSaliency: a = saliency(model, s.tokens, target[i]); break;
        case Method::kIntegratedGradients:
          a = integrated_gradients(model, s.tokens, target[i], cfg.ig);
          break;
        case Method::kRise: a = rise(predictor, s.tokens, target[i], cfg.rise, rng); break;
        case Method::kLime: a = lime(predictor, s.tokens, target[i], cfg.lime, rng); break;
        case Method::kRandom:
          a = random_attribution(s.tokens.size(), rng);
          a.target_class = target[i];
          break;
      }
      a.instance_id = s.id;
      out[i] = std::move(a);
    } catch (...) {
      errors[i] = std::current_exception();
    }
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
  return out;
}

}  // namespace tsxplain
