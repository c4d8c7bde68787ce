#include "tsxplain/classifier.hpp"

#include <algorithm>
#include <type_traits>
#include <cmath>
#include <numbers>
#include <numeric>

#include <nlohmann/json.hpp>

namespace tsxplain {

namespace {

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

// In-place layer norm; returns 1/sqrt(var + eps) and writes xhat.
double layer_norm(std::span<double> u, std::span<const double> gain,
                  std::span<const double> shift, std::span<double> xhat) {
  const double n = static_cast<double>(u.size());
  const double mean = std::accumulate(u.begin(), u.end(), 0.0) / n;
  double var = 0.0;
  for (double v : u) var += (v - mean) * (v - mean);
  var /= n;
  const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
  for (std::size_t i = 0; i < u.size(); ++i) {
    xhat[i] = (u[i] - mean) * rstd;
    u[i] = gain[i] * xhat[i] + shift[i];
  }
  return rstd;
}

// Continues a forward pass from the pre-activation of the first affine layer
// (hidden[0] if present, otherwise the head).
std::vector<double> finish_forward(const ClassifierModel& model,
                                   std::vector<double> pre) {
  if (model.hidden.empty()) return pre;
  std::vector<double> xhat;
  for (std::size_t l = 0;; ++l) {
    const HiddenLayer& layer = model.hidden[l];
    xhat.resize(pre.size());
    layer_norm(pre, layer.gain, layer.shift, xhat);
    for (double& v : pre) v = gelu(v);
    const Dense& next = l + 1 < model.hidden.size() ? model.hidden[l + 1].affine
                                                    : model.head;
    std::vector<double> out(next.out);
    next.apply(pre, out);
    if (l + 1 == model.hidden.size()) return out;
    pre = std::move(out);
  }
}

const Dense& first_affine(const ClassifierModel& model) {
  return model.hidden.empty() ? model.head : model.hidden.front().affine;
}

// Every parameter tensor, in a fixed order.
template <typename Model>
auto parameter_tensors(Model& m) {
  using Vec = std::conditional_t<std::is_const_v<Model>, const std::vector<double>,
                                 std::vector<double>>;
  std::vector<Vec*> out{&m.embedding};
  for (auto& layer : m.hidden) {
    out.push_back(&layer.affine.weight);
    out.push_back(&layer.affine.bias);
    out.push_back(&layer.gain);
    out.push_back(&layer.shift);
  }
  out.push_back(&m.head.weight);
  out.push_back(&m.head.bias);
  return out;
}

struct LayerCache {
  std::vector<double> input;
  std::vector<double> xhat;
  std::vector<double> normed;
  double rstd = 0.0;
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  std::vector<double> head_input;
  std::vector<double> logits;
};

ForwardCache forward_cached(const ClassifierModel& model, std::span<const double> input) {
  ForwardCache cache;
  cache.layers.resize(model.hidden.size());
  std::vector<double> act(input.begin(), input.end());
  for (std::size_t l = 0; l < model.hidden.size(); ++l) {
    const HiddenLayer& layer = model.hidden[l];
    LayerCache& lc = cache.layers[l];
    lc.input = act;
    std::vector<double> u(layer.affine.out);
    layer.affine.apply(act, u);
    lc.xhat.resize(u.size());
    lc.rstd = layer_norm(u, layer.gain, layer.shift, lc.xhat);
    lc.normed = u;
    for (double& v : u) v = gelu(v);
    act = std::move(u);
  }
  cache.head_input = act;
  cache.logits.resize(model.head.out);
  model.head.apply(act, cache.logits);
  return cache;
}

// Back-propagates d(loss)/d(logits). Parameter gradients are accumulated into
// `grads` when non-null; the input gradient is returned.
std::vector<double> backward(const ClassifierModel& model, const ForwardCache& cache,
                             std::span<const double> dlogits, ClassifierModel* grads) {
  const Dense& head = model.head;
  std::vector<double> dact(head.in, 0.0);
  for (std::size_t o = 0; o < head.out; ++o) {
    const double g = dlogits[o];
    if (g == 0.0) continue;
    const double* w = &head.weight[o * head.in];
    for (std::size_t i = 0; i < head.in; ++i) dact[i] += g * w[i];
    if (grads) {
      double* gw = &grads->head.weight[o * head.in];
      for (std::size_t i = 0; i < head.in; ++i) gw[i] += g * cache.head_input[i];
      grads->head.bias[o] += g;
    }
  }
  for (std::size_t l = model.hidden.size(); l-- > 0;) {
    const HiddenLayer& layer = model.hidden[l];
    const LayerCache& lc = cache.layers[l];
    const std::size_t n = layer.affine.out;
    std::vector<double> dxhat(n);
    double sum_dxhat = 0.0;
    double sum_dxhat_xhat = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double dy = dact[i] * gelu_derivative(lc.normed[i]);
      if (grads) {
        grads->hidden[l].gain[i] += dy * lc.xhat[i];
        grads->hidden[l].shift[i] += dy;
      }
      dxhat[i] = dy * layer.gain[i];
      sum_dxhat += dxhat[i];
      sum_dxhat_xhat += dxhat[i] * lc.xhat[i];
    }
    const double nn = static_cast<double>(n);
    std::vector<double> du(n);
    for (std::size_t i = 0; i < n; ++i) {
      du[i] = lc.rstd / nn * (nn * dxhat[i] - sum_dxhat - lc.xhat[i] * sum_dxhat_xhat);
    }
    const Dense& aff = layer.affine;
    std::vector<double> dprev(aff.in, 0.0);
    for (std::size_t o = 0; o < aff.out; ++o) {
      const double g = du[o];
      const double* w = &aff.weight[o * aff.in];
      for (std::size_t i = 0; i < aff.in; ++i) dprev[i] += g * w[i];
      if (grads) {
        double* gw = &grads->hidden[l].affine.weight[o * aff.in];
        for (std::size_t i = 0; i < aff.in; ++i) gw[i] += g * lc.input[i];
        grads->hidden[l].affine.bias[o] += g;
      }
    }
    dact = std::move(dprev);
  }
  return dact;
}

void check_tokens(const ClassifierModel& model, std::span<const int> tokens) {
  if (tokens.size() != model.seq_len) {
    throw ValidationError("token sequence has length " + std::to_string(tokens.size()) +
                          ", model expects " + std::to_string(model.seq_len));
  }
  for (int t : tokens) {
    if (t < 0 || t > model.vocab_size) {
      throw ValidationError("token out of vocabulary: " + std::to_string(t));
    }
  }
}

void check_class(const ClassifierModel& model, int c) {
  if (c < 0 || c >= model.num_classes) {
    throw ValidationError("class " + std::to_string(c) + " out of range");
  }
}

nlohmann::json train_config_json(const TrainConfig& cfg) {
  return {{"p_unk", cfg.p_unk},
          {"epochs", cfg.epochs},
          {"batch_size", cfg.batch_size},
          {"learning_rate", cfg.learning_rate},
          {"beta1", cfg.beta1},
          {"beta2", cfg.beta2},
          {"adam_eps", cfg.adam_eps},
          {"embed_dim", cfg.embed_dim},
          {"hidden_sizes", cfg.hidden_sizes},
          {"class_weighting", cfg.class_weighting}};
}

}  // namespace

Dense::Dense(std::size_t in_, std::size_t out_)
    : in(in_), out(out_), weight(in_ * out_, 0.0), bias(out_, 0.0) {}

void Dense::apply(std::span<const double> x, std::span<double> y) const {
  for (std::size_t o = 0; o < out; ++o) {
    const double* w = &weight[o * in];
    double acc = bias[o];
    for (std::size_t i = 0; i < in; ++i) acc += w[i] * x[i];
    y[o] = acc;
  }
}

std::span<const double> ClassifierModel::embedding_row(int token) const {
  return std::span<const double>(embedding).subspan(
      static_cast<std::size_t>(token) * embed_dim, embed_dim);
}

void ClassifierModel::validate() const {
  if (vocab_size < 1 || embed_dim == 0 || seq_len == 0 || num_classes < 1) {
    throw ValidationError("model has empty dimensions");
  }
  if (embedding.size() != static_cast<std::size_t>(vocab_size + 1) * embed_dim) {
    throw ValidationError("embedding table has wrong size");
  }
  std::size_t width = input_dim();
  auto check_dense = [&](const Dense& d, const std::string& what) {
    if (d.in != width || d.weight.size() != d.in * d.out || d.bias.size() != d.out) {
      throw ValidationError(what + " has inconsistent shape");
    }
    width = d.out;
  };
  for (std::size_t l = 0; l < hidden.size(); ++l) {
    check_dense(hidden[l].affine, "hidden layer " + std::to_string(l));
    if (hidden[l].gain.size() != width || hidden[l].shift.size() != width) {
      throw ValidationError("layer norm " + std::to_string(l) + " has wrong size");
    }
  }
  check_dense(head, "output head");
  if (head.out != static_cast<std::size_t>(num_classes)) {
    throw ValidationError("output head does not match class count");
  }
  for (const auto* t : parameter_tensors(*this)) {
    for (double v : *t) {
      if (!std::isfinite(v)) throw ValidationError("model has non-finite parameters");
    }
  }
}

std::string ClassifierModel::parameter_hash() const {
  std::vector<double> all;
  for (const auto* t : parameter_tensors(*this)) all.insert(all.end(), t->begin(), t->end());
  return sha256_hex(std::span<const double>(all));
}

bool ClassifierModel::same_architecture(const ClassifierModel& other) const {
  if (vocab_size != other.vocab_size || embed_dim != other.embed_dim ||
      seq_len != other.seq_len || num_classes != other.num_classes ||
      hidden.size() != other.hidden.size()) {
    return false;
  }
  for (std::size_t l = 0; l < hidden.size(); ++l) {
    if (hidden[l].affine.out != other.hidden[l].affine.out) return false;
  }
  return true;
}

void TrainConfig::validate() const {
  if (!(p_unk >= 0.0 && p_unk < 1.0)) throw ValidationError("p_unk must be in [0, 1)");
  if (epochs < 0) throw ValidationError("epochs must be >= 0");
  if (batch_size == 0) throw ValidationError("batch_size must be positive");
  if (!(learning_rate > 0.0)) throw ValidationError("learning_rate must be positive");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ValidationError("Adam moment coefficients must be in [0, 1)");
  }
  if (embed_dim == 0) throw ValidationError("embed_dim must be positive");
  for (auto h : hidden_sizes) {
    if (h == 0) throw ValidationError("hidden sizes must be positive");
  }
}

ClassifierModel init_model(int vocab_size, std::size_t seq_len, int num_classes,
                           const TrainConfig& cfg) {
  cfg.validate();
  if (vocab_size < 1) throw ValidationError("vocabulary must be non-empty");
  if (seq_len == 0) throw ValidationError("sequence length must be positive");
  if (num_classes < 1) throw ValidationError("need at least one class");

  ClassifierModel m;
  m.vocab_size = vocab_size;
  m.embed_dim = cfg.embed_dim;
  m.seq_len = seq_len;
  m.num_classes = num_classes;
  m.seed = cfg.seed;

  Rng rng(cfg.seed);
  m.embedding.resize(static_cast<std::size_t>(vocab_size + 1) * cfg.embed_dim);
  for (double& v : m.embedding) v = 0.02 * standard_normal(rng);

  auto init_dense = [&](std::size_t in, std::size_t out) {
    Dense d(in, out);
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    for (double& w : d.weight) w = bound * (2.0 * uniform01(rng) - 1.0);
    for (double& b : d.bias) b = bound * (2.0 * uniform01(rng) - 1.0);
    return d;
  };
  std::size_t width = m.input_dim();
  for (std::size_t h : cfg.hidden_sizes) {
    HiddenLayer layer{init_dense(width, h), std::vector<double>(h, 1.0),
                      std::vector<double>(h, 0.0)};
    m.hidden.push_back(std::move(layer));
    width = h;
  }
  m.head = init_dense(width, static_cast<std::size_t>(num_classes));

  nlohmann::json desc = train_config_json(cfg);
  desc["vocab_size"] = vocab_size;
  desc["seq_len"] = seq_len;
  desc["num_classes"] = num_classes;
  m.config_hash = sha256_hex(desc.dump());
  return m;
}

std::vector<double> embed(const ClassifierModel& model, std::span<const int> tokens) {
  check_tokens(model, tokens);
  std::vector<double> out(model.input_dim());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto row = model.embedding_row(tokens[i]);
    std::copy(row.begin(), row.end(), out.begin() + static_cast<std::ptrdiff_t>(i * model.embed_dim));
  }
  return out;
}

std::vector<double> logits_from_input(const ClassifierModel& model,
                                      std::span<const double> input) {
  if (input.size() != model.input_dim()) throw ValidationError("input has wrong size");
  const Dense& first = first_affine(model);
  std::vector<double> pre(first.out);
  first.apply(input, pre);
  return finish_forward(model, std::move(pre));
}

std::vector<double> forward_logits(const ClassifierModel& model,
                                   std::span<const int> tokens) {
  return logits_from_input(model, embed(model, tokens));
}

std::vector<double> softmax(std::span<const double> logits) {
  std::vector<double> p(logits.begin(), logits.end());
  if (p.empty()) return p;
  const double mx = *std::max_element(p.begin(), p.end());
  double sum = 0.0;
  for (double& v : p) {
    v = std::exp(v - mx);
    sum += v;
  }
  for (double& v : p) v /= sum;
  return p;
}

std::vector<double> predict_proba(const ClassifierModel& model,
                                  std::span<const int> tokens) {
  return softmax(forward_logits(model, tokens));
}

std::vector<double> input_gradient(const ClassifierModel& model,
                                   std::span<const double> input, int target) {
  check_class(model, target);
  if (input.size() != model.input_dim()) throw ValidationError("input has wrong size");
  const ForwardCache cache = forward_cached(model, input);
  std::vector<double> dlogits(model.head.out, 0.0);
  dlogits[static_cast<std::size_t>(target)] = 1.0;
  return backward(model, cache, dlogits, nullptr);
}

std::vector<double> grad_wrt_embeddings(const ClassifierModel& model,
                                        std::span<const int> tokens, int target) {
  return input_gradient(model, embed(model, tokens), target);
}

std::vector<int> inject_unk(std::span<const int> tokens, double p_unk, int unk_id,
                            Rng& rng) {
  if (!(p_unk >= 0.0 && p_unk < 1.0)) throw ValidationError("p_unk must be in [0, 1)");
  std::vector<int> out(tokens.begin(), tokens.end());
  if (p_unk == 0.0) return out;
  for (int& t : out) {
    if (uniform01(rng) < p_unk) t = unk_id;
  }
  return out;
}

TrainResult train(std::span<const TokenSequence> data, int vocab_size,
                  int num_classes, const TrainConfig& cfg) {
  cfg.validate();
  if (data.empty()) throw ValidationError("training set is empty");
  const std::size_t seq_len = data.front().tokens.size();
  std::vector<std::size_t> class_count(static_cast<std::size_t>(num_classes), 0);
  for (const auto& s : data) {
    if (s.tokens.size() != seq_len) {
      throw ValidationError("instance '" + s.id + "' has " +
                            std::to_string(s.tokens.size()) + " tokens, expected " +
                            std::to_string(seq_len));
    }
    if (!s.label || *s.label < 0 || *s.label >= num_classes) {
      throw ValidationError("instance '" + s.id + "' has a missing or out-of-range label");
    }
    for (int t : s.tokens) {
      if (t < 0 || t >= vocab_size) {
        throw ValidationError("instance '" + s.id + "' has token " + std::to_string(t) +
                              " outside [0, " + std::to_string(vocab_size) + ")");
      }
    }
    ++class_count[static_cast<std::size_t>(*s.label)];
  }

  TrainResult result{init_model(vocab_size, seq_len, num_classes, cfg), {}};
  ClassifierModel& model = result.model;

  std::vector<double> class_weight(class_count.size(), 1.0);
  if (cfg.class_weighting) {
    for (std::size_t c = 0; c < class_count.size(); ++c) {
      class_weight[c] = class_count[c] == 0
                            ? 0.0
                            : static_cast<double>(data.size()) /
                                  (static_cast<double>(num_classes) * class_count[c]);
    }
  }

  // Training draws from its own stream so init and data order are decoupled.
  Rng rng(derive_seed(cfg.seed, "train"));
  ClassifierModel grads = model;
  ClassifierModel adam_m = model;
  ClassifierModel adam_v = model;
  auto zero = [](ClassifierModel& g) {
    for (auto* t : parameter_tensors(g)) std::fill(t->begin(), t->end(), 0.0);
  };
  zero(adam_m);
  zero(adam_v);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::uint64_t step = 0;
  const std::size_t d = model.embed_dim;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[uniform_index(rng, i)]);
    }
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      zero(grads);
      double weight_sum = 0.0;
      for (std::size_t b = start; b < end; ++b) {
        weight_sum += class_weight[static_cast<std::size_t>(*data[order[b]].label)];
      }
      if (weight_sum == 0.0) continue;
      double batch_loss = 0.0;
      for (std::size_t b = start; b < end; ++b) {
        const TokenSequence& s = data[order[b]];
        const auto tokens = inject_unk(s.tokens, cfg.p_unk, model.unk_id(), rng);
        const auto input = embed(model, tokens);
        const ForwardCache cache = forward_cached(model, input);
        const auto p = softmax(cache.logits);
        const auto y = static_cast<std::size_t>(*s.label);
        const double w = class_weight[y] / weight_sum;
        batch_loss += -w * std::log(std::max(p[y], 1e-300));
        std::vector<double> dlogits(p.size());
        for (std::size_t c = 0; c < p.size(); ++c) {
          dlogits[c] = w * (p[c] - (c == y ? 1.0 : 0.0));
        }
        const auto dinput = backward(model, cache, dlogits, &grads);
        for (std::size_t i = 0; i < tokens.size(); ++i) {
          double* row = &grads.embedding[static_cast<std::size_t>(tokens[i]) * d];
          for (std::size_t j = 0; j < d; ++j) row[j] += dinput[i * d + j];
        }
      }
      epoch_loss += batch_loss * static_cast<double>(end - start);

      ++step;
      const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
      const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
      auto params = parameter_tensors(model);
      auto gs = parameter_tensors(grads);
      auto ms = parameter_tensors(adam_m);
      auto vs = parameter_tensors(adam_v);
      for (std::size_t k = 0; k < params.size(); ++k) {
        auto& p = *params[k];
        const auto& g = *gs[k];
        auto& m1 = *ms[k];
        auto& m2 = *vs[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
          m1[i] = cfg.beta1 * m1[i] + (1.0 - cfg.beta1) * g[i];
          m2[i] = cfg.beta2 * m2[i] + (1.0 - cfg.beta2) * g[i] * g[i];
          p[i] -= cfg.learning_rate * (m1[i] / bc1) / (std::sqrt(m2[i] / bc2) + cfg.adam_eps);
        }
      }
    }
    result.epoch_loss.push_back(epoch_loss / static_cast<double>(data.size()));
  }
  model.validate();
  return result;
}

Predictor::Predictor(const ClassifierModel& model) : model_(&model) {
  model.validate();
  const Dense& first = first_affine(model);
  first_out_ = first.out;
  const std::size_t vocab = static_cast<std::size_t>(model.vocab_size) + 1;
  const std::size_t d = model.embed_dim;
  table_.assign(model.seq_len * vocab * first_out_, 0.0);
  for (std::size_t pos = 0; pos < model.seq_len; ++pos) {
    for (std::size_t tok = 0; tok < vocab; ++tok) {
      const double* e = &model.embedding[tok * d];
      double* dst = &table_[(pos * vocab + tok) * first_out_];
      for (std::size_t o = 0; o < first_out_; ++o) {
        const double* w = &first.weight[o * first.in + pos * d];
        double acc = 0.0;
        for (std::size_t j = 0; j < d; ++j) acc += w[j] * e[j];
        dst[o] = acc;
      }
    }
  }
}

std::vector<double> Predictor::logits(std::span<const int> tokens) const {
  check_tokens(*model_, tokens);
  const std::size_t vocab = static_cast<std::size_t>(model_->vocab_size) + 1;
  const Dense& first = first_affine(*model_);
  std::vector<double> pre(first.bias.begin(), first.bias.end());
  for (std::size_t pos = 0; pos < tokens.size(); ++pos) {
    const double* row =
        &table_[(pos * vocab + static_cast<std::size_t>(tokens[pos])) * first_out_];
    for (std::size_t o = 0; o < first_out_; ++o) pre[o] += row[o];
  }
  return finish_forward(*model_, std::move(pre));
}

std::vector<double> Predictor::proba(std::span<const int> tokens) const {
  return softmax(logits(tokens));
}

int Predictor::predict(std::span<const int> tokens) const {
  const auto l = logits(tokens);
  return static_cast<int>(std::max_element(l.begin(), l.end()) - l.begin());
}

std::vector<int> predict_batch(const ClassifierModel& model,
                               std::span<const TokenSequence> data) {
  const Predictor predictor(model);
  std::vector<int> out(data.size());
  for (const auto& s : data) check_tokens(model, s.tokens);
  const auto n = static_cast<std::ptrdiff_t>(data.size());
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t i = 0; i < n; ++i) {
    out[static_cast<std::size_t>(i)] = predictor.predict(data[static_cast<std::size_t>(i)].tokens);
  }
  return out;
}

double accuracy(const ClassifierModel& model, std::span<const TokenSequence> data) {
  if (data.empty()) return 0.0;
  const auto pred = predict_batch(model, data);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    if (data[i].label && pred[i] == *data[i].label) ++hit;
  }
  return static_cast<double>(hit) / static_cast<double>(data.size());
}

}  // namespace tsxplain
