#pragma once

// End-to-end run: load or synthesize -> tokenize -> train one model per seed
// -> explain with every configured method -> perturbation AUC, invariance,
// agreement and SSA -> one JSON report.
//
// Stage outputs are cached under <cache_dir>/<stage>/<key>/ where key is a
// hash of everything the stage depends on.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tsxplain/attribution.hpp"
#include "tsxplain/classifier.hpp"
#include "tsxplain/io.hpp"
#include "tsxplain/synthetic.hpp"
#include "tsxplain/tokenizer.hpp"

namespace tsxplain {

struct DataSource {
  bool synthetic = true;
  SyntheticSpec synthetic_spec;
  std::uint64_t synthetic_seed = 2024;
  std::filesystem::path train_path;
  std::filesystem::path val_path;  // optional
  std::filesystem::path test_path;
  std::optional<DatasetFormat> format;  // detected from extension if unset
  std::optional<int> num_classes;       // inferred from labels if unset
};

struct EvaluationConfig {
  std::vector<std::size_t> ssa_lengths{1, 2, 3};
  int rnd_draws = 5;
  std::uint64_t rnd_seed = 7;
  std::uint64_t explain_seed = 11;
  bool normalize_cs = false;
  bool ssa_use_abs = false;
};

struct PipelineConfig {
  DataSource data;
  TokenizerConfig tokenizer;
  TrainConfig train;
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::vector<MethodConfig> methods;
  EvaluationConfig evaluation;
  std::filesystem::path cache_dir;  // empty: no cache
  std::filesystem::path report_path;
  std::filesystem::path csv_dir;

  void validate() const;
};

// Defaults for every field not present in `j`.
PipelineConfig pipeline_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PipelineConfig& cfg);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

// Hash of the semantic content (output and cache paths excluded). Key order
// in the source file does not matter.
std::string config_hash(const PipelineConfig& cfg);

struct Corpus {
  std::vector<TokenSequence> train;
  std::vector<TokenSequence> val;
  std::vector<TokenSequence> test;
  int vocab_size = 0;
  std::size_t seq_len = 0;
  int num_classes = 0;
  std::map<int, std::size_t> label_counts;  // training labels
  // Token positions of the planted motif per test instance (synthetic only).
  std::vector<std::vector<std::size_t>> test_motif_positions;
};

Corpus prepare_corpus(const PipelineConfig& cfg);

// Trains (or loads from cache) one model per configured seed.
std::vector<TrainResult> train_models(const PipelineConfig& cfg, const Corpus& corpus);

nlohmann::json run_pipeline(const PipelineConfig& cfg);

}  // namespace tsxplain
