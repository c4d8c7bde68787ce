#pragma once

// File formats:
//   dataset CSV     header `id,label,channel,v0,v1,...`, one row per channel
//   dataset NDJSON  {"id":..,"label":..,"values":[[..],[..]]}
//   tokens NDJSON   {"id":..,"label":..,"tokens":[..]}
//   attributions    {"id":..,"method":..,"class":..,"scores":[..]}
//   model JSON      metadata + every parameter tensor

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "tsxplain/attribution.hpp"
#include "tsxplain/classifier.hpp"
#include "tsxplain/tokenizer.hpp"

namespace tsxplain {

enum class DatasetFormat { kCsv, kNdjson };

DatasetFormat parse_dataset_format(const std::string& name);
// From the file extension (.csv, otherwise NDJSON).
DatasetFormat detect_dataset_format(const std::filesystem::path& path);

struct LoadOptions {
  std::optional<int> num_classes;  // labels must lie in [0, num_classes)
  // repeat-last pads at load time; zero-after-znorm leaves series at their
  // own length so tokenization can pad after normalizing.
  PadPolicy pad_policy = PadPolicy::kRepeatLast;
};

struct Dataset {
  std::vector<TimeSeries> series;
  std::map<int, std::size_t> label_counts;
  std::size_t max_length = 0;
  std::size_t channels = 0;
};

Dataset read_dataset(std::istream& in, DatasetFormat format, const LoadOptions& opts = {});
Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format,
                     const LoadOptions& opts = {});
void write_dataset_ndjson(std::ostream& out, std::span<const TimeSeries> series);

void write_tokens(std::ostream& out, std::span<const TokenSequence> data);
// Every token must be < vocab_size (UNK never appears in stored corpora) and
// all sequences must share one length (`seq_len` when given).
std::vector<TokenSequence> read_tokens(std::istream& in, int vocab_size,
                                       std::optional<std::size_t> seq_len = std::nullopt);
std::vector<TokenSequence> load_tokens(const std::filesystem::path& path, int vocab_size,
                                       std::optional<std::size_t> seq_len = std::nullopt);

void write_attributions(std::ostream& out, std::span<const AttributionVector> attrs);
std::vector<AttributionVector> read_attributions(std::istream& in);
std::vector<AttributionVector> load_attributions(const std::filesystem::path& path);

nlohmann::json model_to_json(const ClassifierModel& model);
ClassifierModel model_from_json(const nlohmann::json& j);
ClassifierModel load_model(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
// Writes to a sibling temp file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, const std::string& content);

// SHA-256 of the canonical token NDJSON of a corpus.
std::string corpus_fingerprint(std::span<const TokenSequence> data);

}  // namespace tsxplain
