#pragma once

// Embedding + MLP token classifier.
//
// Forward pass: embedding lookup -> flatten (T*d) -> for each hidden layer
// (affine -> layer norm -> GeLU) -> affine head. Row `vocab_size` of the
// embedding table is the UNK embedding.

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tsxplain/common.hpp"
#include "tsxplain/tokenizer.hpp"

namespace tsxplain {

// Row-major affine map: y[o] = bias[o] + sum_i weight[o * in + i] * x[i].
struct Dense {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weight;
  std::vector<double> bias;

  Dense() = default;
  Dense(std::size_t in, std::size_t out);
  void apply(std::span<const double> x, std::span<double> y) const;
};

struct HiddenLayer {
  Dense affine;
  std::vector<double> gain;   // layer-norm scale
  std::vector<double> shift;  // layer-norm offset
};

inline constexpr double kLayerNormEps = 1e-5;

struct ClassifierModel {
  int vocab_size = 0;  // K; UNK id is K
  std::size_t embed_dim = 0;
  std::size_t seq_len = 0;
  int num_classes = 0;
  std::vector<double> embedding;  // (K+1) x d
  std::vector<HiddenLayer> hidden;
  Dense head;
  std::uint64_t seed = 0;
  std::string config_hash;

  int unk_id() const { return vocab_size; }
  std::size_t input_dim() const { return seq_len * embed_dim; }
  std::span<const double> embedding_row(int token) const;

  // Throws ValidationError if any dimension or tensor size is inconsistent or
  // a parameter is non-finite.
  void validate() const;
  // SHA-256 over all parameter tensors; equal hashes mean identical models.
  std::string parameter_hash() const;
  // Same vocabulary, sequence length, classes, embedding and hidden sizes.
  bool same_architecture(const ClassifierModel& other) const;
};

struct TrainConfig {
  double p_unk = 0.1;
  int epochs = 20;
  std::size_t batch_size = 32;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t embed_dim = 16;
  std::vector<std::size_t> hidden_sizes{128, 64};
  bool class_weighting = false;
  std::uint64_t seed = 0;

  void validate() const;
};

// Fresh model with seed-controlled initialization: N(0, 0.02) embeddings,
// U(-1/sqrt(fan_in), 1/sqrt(fan_in)) affine weights and biases, unit
// layer-norm gain and zero shift.
ClassifierModel init_model(int vocab_size, std::size_t seq_len, int num_classes,
                           const TrainConfig& cfg);

// Flattened T*d input for a token vector. Throws "token out of vocabulary"
// for ids outside [0, K].
std::vector<double> embed(const ClassifierModel& model, std::span<const int> tokens);

std::vector<double> logits_from_input(const ClassifierModel& model,
                                      std::span<const double> input);
std::vector<double> forward_logits(const ClassifierModel& model,
                                   std::span<const int> tokens);

std::vector<double> softmax(std::span<const double> logits);
std::vector<double> predict_proba(const ClassifierModel& model,
                                  std::span<const int> tokens);

// Gradient of logit `target` with respect to a flattened T*d input.
std::vector<double> input_gradient(const ClassifierModel& model,
                                   std::span<const double> input, int target);

// Gradient of logit `target` with respect to each token's embedding vector,
// returned row-major as T x d. The table itself receives no gradient.
std::vector<double> grad_wrt_embeddings(const ClassifierModel& model,
                                        std::span<const int> tokens, int target);

// Replaces each position with `unk_id` independently with probability p_unk.
std::vector<int> inject_unk(std::span<const int> tokens, double p_unk, int unk_id,
                            Rng& rng);

struct TrainResult {
  ClassifierModel model;
  std::vector<double> epoch_loss;  // mean training loss per epoch
};

// Mini-batch Adam on (optionally class-weighted) cross-entropy, with UNK
// injection on every batch. Single-threaded; identical seeds give identical
// models bit for bit.
TrainResult train(std::span<const TokenSequence> data, int vocab_size,
                  int num_classes, const TrainConfig& cfg);

// Inference-only view of a model. The first affine layer is folded into a
// (position, token) contribution table so a forward pass costs O(T*h) for the
// first layer instead of O(T*d*h). The model must outlive the predictor.
class Predictor {
 public:
  explicit Predictor(const ClassifierModel& model);

  const ClassifierModel& model() const { return *model_; }
  std::vector<double> logits(std::span<const int> tokens) const;
  std::vector<double> proba(std::span<const int> tokens) const;
  int predict(std::span<const int> tokens) const;

 private:
  const ClassifierModel* model_;
  std::size_t first_out_ = 0;
  std::vector<double> table_;  // [T][K+1][first_out]
};

// Argmax predictions for a batch (OpenMP over instances).
std::vector<int> predict_batch(const ClassifierModel& model,
                               std::span<const TokenSequence> data);

double accuracy(const ClassifierModel& model, std::span<const TokenSequence> data);

}  // namespace tsxplain
