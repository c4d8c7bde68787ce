#include "tsxplain/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <unordered_map>

namespace tsxplain {

double macro_f1(std::span<const int> truth, std::span<const int> pred) {
  if (truth.size() != pred.size()) throw ValidationError("macro_f1: size mismatch");
  std::set<int> classes(truth.begin(), truth.end());
  classes.insert(pred.begin(), pred.end());
  if (classes.empty()) return 0.0;
  double total = 0.0;
  for (int c : classes) {
    std::size_t tp = 0, fp = 0, fn = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      const bool t = truth[i] == c;
      const bool p = pred[i] == c;
      tp += t && p;
      fp += !t && p;
      fn += t && !p;
    }
    const double denom = 2.0 * tp + fp + fn;
    total += denom > 0 ? 2.0 * tp / denom : 0.0;
  }
  return total / static_cast<double>(classes.size());
}

std::vector<std::size_t> deletion_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

std::vector<const AttributionVector*> align_attributions(
    std::span<const TokenSequence> test, std::span<const AttributionVector> attributions) {
  std::unordered_map<std::string, const AttributionVector*> by_id;
  for (const auto& a : attributions) by_id.emplace(a.instance_id, &a);
  std::vector<const AttributionVector*> out;
  std::string missing;
  std::size_t missing_count = 0;
  for (const auto& s : test) {
    auto it = by_id.find(s.id);
    if (it == by_id.end()) {
      if (missing_count++ < 20) missing += (missing.empty() ? "" : ", ") + s.id;
      out.push_back(nullptr);
      continue;
    }
    if (it->second->scores.size() != s.tokens.size()) {
      throw ValidationError("attribution for '" + s.id + "' has length " +
                            std::to_string(it->second->scores.size()) + ", expected " +
                            std::to_string(s.tokens.size()));
    }
    out.push_back(it->second);
  }
  if (missing_count > 0) {
    throw ValidationError("missing attributions for " + std::to_string(missing_count) +
                          " instance(s): " + missing + (missing_count > 20 ? ", ..." : ""));
  }
  return out;
}

namespace {

std::vector<int> labels_of(std::span<const TokenSequence> data) {
  std::vector<int> out;
  out.reserve(data.size());
  for (const auto& s : data) {
    if (!s.label) throw ValidationError("instance '" + s.id + "' has no label");
    out.push_back(*s.label);
  }
  return out;
}

}  // namespace

DeletionCurve deletion_curve(const ClassifierModel& model,
                             std::span<const TokenSequence> test,
                             std::span<const AttributionVector> attributions,
                             std::string source, std::string dataset_id) {
  if (test.empty()) throw ValidationError("deletion curve needs a non-empty test set");
  const auto truth = labels_of(test);
  const auto aligned = align_attributions(test, attributions);
  for (const auto& s : test) embed(model, s.tokens);
  const std::size_t T = model.seq_len;
  const Predictor predictor(model);

  // pred[k * n + i]: prediction for instance i with its top-k tokens removed.
  const std::size_t n = test.size();
  std::vector<int> pred((T + 1) * n);
#pragma omp parallel for schedule(dynamic, 8)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(n); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    std::vector<int> tokens = test[i].tokens;
    const auto order = deletion_order(aligned[i]->scores);
    pred[i] = predictor.predict(tokens);
    for (std::size_t k = 1; k <= T; ++k) {
      tokens[order[k - 1]] = model.unk_id();
      pred[k * n + i] = predictor.predict(tokens);
    }
  }
  DeletionCurve curve{std::vector<double>(T + 1), std::move(source), std::move(dataset_id)};
  for (std::size_t k = 0; k <= T; ++k) {
    curve.f1[k] = macro_f1(truth, std::span<const int>(pred).subspan(k * n, n));
  }
  return curve;
}

double auc(const DeletionCurve& curve) {
  if (curve.f1.size() < 2) throw ValidationError("AUC needs at least two curve points");
  double area = 0.0;
  for (std::size_t k = 0; k + 1 < curve.f1.size(); ++k) {
    area += 0.5 * (curve.f1[k] + curve.f1[k + 1]);
  }
  return area / static_cast<double>(curve.f1.size() - 1);
}

std::optional<double> cosine_similarity(std::span<const double> a,
                                        std::span<const double> b) {
  if (a.size() != b.size()) throw ValidationError("cosine_similarity: length mismatch");
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0.0 || nb == 0.0) return std::nullopt;
  const double cs = dot / std::sqrt(na * nb);
  return std::clamp(cs, -1.0, 1.0);
}

std::vector<double> min_max_normalize(std::span<const double> v) {
  std::vector<double> out(v.begin(), v.end());
  if (out.empty()) return out;
  const auto [lo, hi] = std::minmax_element(out.begin(), out.end());
  const double mn = *lo, range = *hi - *lo;
  for (double& x : out) x = range > 0 ? (x - mn) / range : 0.0;
  return out;
}

namespace {

std::optional<double> compare(const AttributionVector& a, const AttributionVector& b,
                              bool normalize) {
  if (!normalize) return cosine_similarity(a.scores, b.scores);
  return cosine_similarity(min_max_normalize(a.scores), min_max_normalize(b.scores));
}

}  // namespace

InvarianceResult implementation_invariance(
    std::span<const std::vector<AttributionVector>> per_model, bool normalize) {
  if (per_model.size() < 2) throw ValidationError("invariance needs at least two models");
  const std::size_t n = per_model.front().size();
  for (const auto& m : per_model) {
    if (m.size() != n) throw ValidationError("invariance: attribution counts differ");
  }
  InvarianceResult r;
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t a = 0; a < per_model.size(); ++a) {
      for (std::size_t b = a + 1; b < per_model.size(); ++b) {
        if (per_model[a][i].instance_id != per_model[b][i].instance_id) {
          throw ValidationError("invariance: attributions are not aligned by instance");
        }
        const auto cs = compare(per_model[a][i], per_model[b][i], normalize);
        if (!cs) {
          ++r.skipped;
          continue;
        }
        ++r.pairs;
        sum += *cs;
        sum_sq += *cs * *cs;
      }
    }
  }
  if (r.pairs > 0) {
    r.mean = sum / static_cast<double>(r.pairs);
    r.std = std::sqrt(std::max(0.0, sum_sq / static_cast<double>(r.pairs) - r.mean * r.mean));
  }
  return r;
}

InvarianceResult implementation_invariance(std::span<const ClassifierModel> models,
                                           const MethodConfig& method,
                                           std::span<const TokenSequence> test,
                                           std::uint64_t seed, bool normalize) {
  if (models.empty()) throw ValidationError("invariance needs models");
  for (const auto& m : models) {
    if (!m.same_architecture(models.front())) {
      throw ValidationError("invariance: model architectures differ");
    }
  }
  std::vector<std::vector<AttributionVector>> per_model;
  for (const auto& m : models) {
    per_model.push_back(explain_batch(m, test, method, seed, TargetMode::kPredicted));
  }
  return implementation_invariance(per_model, normalize);
}

AgreementMatrix xai_agreement(std::span<const NamedAttributions> methods, bool normalize) {
  if (methods.size() < 2) throw ValidationError("agreement needs at least two methods");
  const std::size_t m = methods.size();
  const std::size_t n = methods.front().second.size();
  for (const auto& [name, attrs] : methods) {
    if (attrs.size() != n) throw ValidationError("agreement: attribution counts differ");
  }
  AgreementMatrix out;
  out.values.assign(m * m, 0.0);
  for (const auto& entry : methods) out.methods.push_back(entry.first);
  double off_sum = 0.0;
  for (std::size_t a = 0; a < m; ++a) {
    out.values[a * m + a] = 1.0;
    for (std::size_t b = a + 1; b < m; ++b) {
      double sum = 0.0;
      std::size_t count = 0;
      for (std::size_t i = 0; i < n; ++i) {
        const auto& x = methods[a].second[i];
        const auto& y = methods[b].second[i];
        if (x.instance_id != y.instance_id) {
          throw ValidationError("agreement: attributions are not aligned by instance");
        }
        const auto cs = compare(x, y, normalize);
        if (!cs) {
          ++out.skipped;
          continue;
        }
        sum += *cs;
        ++count;
      }
      const double v = count > 0 ? sum / static_cast<double>(count) : 0.0;
      out.values[a * m + b] = v;
      out.values[b * m + a] = v;
      off_sum += v;
    }
  }
  out.summary = off_sum / static_cast<double>(m * (m - 1) / 2);
  return out;
}

std::size_t salient_window_start(std::span<const double> scores, std::size_t length,
                                 bool use_abs) {
  if (length < 1 || length > scores.size()) {
    throw ValidationError("subsequence length " + std::to_string(length) +
                          " must be in [1, " + std::to_string(scores.size()) + "]");
  }
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    const double v = use_abs ? std::abs(scores[i]) : scores[i];
    const double w = use_abs ? std::abs(scores[best]) : scores[best];
    if (v > w) best = i;
  }
  return std::min(best, scores.size() - length);
}

namespace {

void finish_ssa(SsaResult& r, std::size_t instances) {
  double sum = 0.0;
  std::size_t defined = 0, total_neighbors = 0;
  for (std::size_t c = 0; c < r.per_class.size(); ++c) {
    total_neighbors += r.neighborhoods[c];
    if (r.neighborhoods[c] == 0) {
      ++r.undefined_classes;
      continue;
    }
    const double v = static_cast<double>(r.matches[c]) / static_cast<double>(r.neighborhoods[c]);
    r.per_class[c] = v;
    sum += v;
    ++defined;
  }
  if (defined > 0) r.mean = sum / static_cast<double>(defined);
  r.mean_neighbors =
      instances > 0 ? static_cast<double>(total_neighbors) / static_cast<double>(instances) : 0.0;
}

void check_ssa_inputs(std::span<const TokenSequence> train,
                      std::span<const TokenSequence> test, std::size_t length,
                      int num_classes) {
  if (num_classes < 1) throw ValidationError("SSA needs at least one class");
  const std::size_t T = !test.empty() ? test.front().tokens.size()
                        : !train.empty() ? train.front().tokens.size() : 0;
  for (const auto* set : {&train, &test}) {
    for (const auto& s : *set) {
      if (s.tokens.size() != T) throw ValidationError("SSA: sequences differ in length");
      if (!s.label) throw ValidationError("SSA: instance '" + s.id + "' has no label");
    }
  }
  if (length < 1 || length > T) {
    throw ValidationError("subsequence length " + std::to_string(length) +
                          " must be in [1, " + std::to_string(T) + "]");
  }
}

}  // namespace

SsaResult ssa(std::span<const TokenSequence> train, std::span<const TokenSequence> test,
              std::span<const AttributionVector> attributions, std::size_t length,
              int num_classes, std::string method, const SsaOptions& opts) {
  check_ssa_inputs(train, test, length, num_classes);
  const auto aligned = align_attributions(test, attributions);
  const auto C = static_cast<std::size_t>(num_classes);
  SsaResult r;
  r.length = length;
  r.method = std::move(method);
  r.per_class.assign(C, std::nullopt);
  r.matches.assign(C, 0);
  r.neighborhoods.assign(C, 0);
  if (test.empty()) {
    finish_ssa(r, 0);
    return r;
  }

  // Neighbors share the test window at the same position; labels outside
  // 0..C-1 still count towards the neighborhood.
  const std::size_t n = test.size();
  std::vector<std::size_t> inst_matches(n, 0), inst_neighbors(n, 0);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t ii = 0; ii < static_cast<std::ptrdiff_t>(n); ++ii) {
    const auto i = static_cast<std::size_t>(ii);
    const auto& z = test[i];
    const std::size_t start = salient_window_start(aligned[i]->scores, length, opts.use_abs);
    const int* w = z.tokens.data() + start;
    for (const auto& s : train) {
      if (!std::equal(w, w + length, s.tokens.data() + start)) continue;
      ++inst_neighbors[i];
      if (*s.label == *z.label) ++inst_matches[i];
    }
  }
  std::size_t counted = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const int c = *test[i].label;
    if (c < 0 || c >= num_classes) continue;
    ++counted;
    r.matches[static_cast<std::size_t>(c)] += inst_matches[i];
    r.neighborhoods[static_cast<std::size_t>(c)] += inst_neighbors[i];
  }
  finish_ssa(r, counted);
  return r;
}

std::vector<AttributionVector> random_attributions(std::span<const TokenSequence> data,
                                                   std::uint64_t seed) {
  std::vector<AttributionVector> out;
  out.reserve(data.size());
  for (const auto& s : data) {
    Rng rng = instance_rng(seed, Method::kRandom, s.id);
    auto a = random_attribution(s.tokens.size(), rng);
    a.instance_id = s.id;
    a.target_class = s.label.value_or(0);
    out.push_back(std::move(a));
  }
  return out;
}

SsaSweep ssa_sweep(std::span<const TokenSequence> train, std::span<const TokenSequence> test,
                   std::span<const AttributionVector> attributions,
                   std::span<const std::size_t> lengths, int num_classes,
                   const std::string& method, std::uint64_t rnd_seed,
                   const SsaOptions& opts) {
  const auto rnd = random_attributions(test, rnd_seed);
  SsaSweep out;
  for (std::size_t l : lengths) {
    out.method.push_back(ssa(train, test, attributions, l, num_classes, method, opts));
    out.random.push_back(ssa(train, test, rnd, l, num_classes, "random", opts));
  }
  return out;
}

namespace reference {

std::vector<int> predict_batch(const ClassifierModel& model,
                               std::span<const TokenSequence> data) {
  std::vector<int> out;
  out.reserve(data.size());
  for (const auto& s : data) {
    const auto logits = forward_logits(model, s.tokens);
    out.push_back(static_cast<int>(std::max_element(logits.begin(), logits.end()) -
                                   logits.begin()));
  }
  return out;
}

std::vector<AttributionVector> explain_batch(const ClassifierModel& model,
                                             std::span<const TokenSequence> data,
                                             const MethodConfig& cfg, std::uint64_t seed,
                                             TargetMode mode) {
  const Predictor predictor(model);
  std::vector<AttributionVector> out;
  for (const auto& s : data) {
    int target;
    if (mode == TargetMode::kLabel) {
      if (!s.label) throw ValidationError("instance '" + s.id + "' has no label to explain");
      target = *s.label;
    } else {
      target = predictor.predict(s.tokens);
    }
    Rng rng = instance_rng(seed, cfg.method, s.id);
    AttributionVector a;
    switch (cfg.method) {
      case Method::kSaliency: a = saliency(model, s.tokens, target); break;
      case Method::kIntegratedGradients:
        a = integrated_gradients(model, s.tokens, target, cfg.ig);
        break;
      case Method::kRise: a = rise(predictor, s.tokens, target, cfg.rise, rng); break;
      case Method::kLime: a = lime(predictor, s.tokens, target, cfg.lime, rng); break;
      case Method::kRandom:
        a = random_attribution(s.tokens.size(), rng);
        a.target_class = target;
        break;
    }
    a.instance_id = s.id;
    out.push_back(std::move(a));
  }
  return out;
}

DeletionCurve deletion_curve(const ClassifierModel& model,
                             std::span<const TokenSequence> test,
                             std::span<const AttributionVector> attributions) {
  const auto aligned = align_attributions(test, attributions);
  const auto truth = labels_of(test);
  DeletionCurve curve;
  for (std::size_t k = 0; k <= model.seq_len; ++k) {
    std::vector<int> pred;
    for (std::size_t i = 0; i < test.size(); ++i) {
      const auto& scores = aligned[i]->scores;
      std::vector<std::size_t> idx(scores.size());
      std::iota(idx.begin(), idx.end(), 0);
      std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return scores[a] != scores[b] ? scores[a] > scores[b] : a < b;
      });
      std::vector<int> tokens = test[i].tokens;
      for (std::size_t j = 0; j < k; ++j) tokens[idx[j]] = model.unk_id();
      const auto logits = forward_logits(model, tokens);
      pred.push_back(static_cast<int>(std::max_element(logits.begin(), logits.end()) -
                                      logits.begin()));
    }
    curve.f1.push_back(macro_f1(truth, pred));
  }
  return curve;
}

SsaResult ssa(std::span<const TokenSequence> train, std::span<const TokenSequence> test,
              std::span<const AttributionVector> attributions, std::size_t length,
              int num_classes, const SsaOptions& opts) {
  check_ssa_inputs(train, test, length, num_classes);
  const auto aligned = align_attributions(test, attributions);
  const auto C = static_cast<std::size_t>(num_classes);
  SsaResult r;
  r.length = length;
  r.per_class.assign(C, std::nullopt);
  r.matches.assign(C, 0);
  r.neighborhoods.assign(C, 0);
  std::size_t counted = 0;
  for (int c = 0; c < num_classes; ++c) {
    for (std::size_t i = 0; i < test.size(); ++i) {
      if (*test[i].label != c) continue;
      ++counted;
      const std::size_t start = salient_window_start(aligned[i]->scores, length, opts.use_abs);
      for (const auto& other : train) {
        if (std::equal(test[i].tokens.begin() + static_cast<std::ptrdiff_t>(start),
                       test[i].tokens.begin() + static_cast<std::ptrdiff_t>(start + length),
                       other.tokens.begin() + static_cast<std::ptrdiff_t>(start))) {
          ++r.neighborhoods[static_cast<std::size_t>(c)];
          if (*other.label == c) ++r.matches[static_cast<std::size_t>(c)];
        }
      }
    }
  }
  finish_ssa(r, counted);
  return r;
}

}  // namespace reference
}  // namespace tsxplain
