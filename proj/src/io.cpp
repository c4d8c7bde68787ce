#include "tsxplain/io.hpp"

#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <unistd.h>

namespace tsxplain {

using nlohmann::json;

DatasetFormat parse_dataset_format(const std::string& name) {
  if (name == "csv") return DatasetFormat::kCsv;
  if (name == "ndjson" || name == "jsonl") return DatasetFormat::kNdjson;
  throw ValidationError("unknown dataset format '" + name + "'");
}

DatasetFormat detect_dataset_format(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".csv") return DatasetFormat::kCsv;
  if (ext == ".ndjson" || ext == ".jsonl" || ext == ".json") return DatasetFormat::kNdjson;
  throw ValidationError("cannot infer dataset format from '" + path.string() +
                        "'; pass csv or ndjson explicitly");
}

namespace {

std::string where(std::size_t line) { return "line " + std::to_string(line) + ": "; }

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

std::optional<int> parse_label(const std::string& text, std::size_t line,
                               const LoadOptions& opts) {
  if (text.empty()) return std::nullopt;
  std::size_t used = 0;
  long v = 0;
  try {
    v = std::stol(text, &used);
  } catch (const std::exception&) {
    used = 0;
  }
  if (used != text.size() || v < 0) {
    throw ValidationError(where(line) + "unknown label '" + text + "'");
  }
  if (opts.num_classes && v >= *opts.num_classes) {
    throw ValidationError(where(line) + "label " + text + " outside [0, " +
                          std::to_string(*opts.num_classes) + ")");
  }
  return static_cast<int>(v);
}

std::optional<int> json_label(const json& j, std::size_t line, const LoadOptions& opts) {
  if (!j.contains("label") || j["label"].is_null()) return std::nullopt;
  const json& l = j["label"];
  if (l.is_number_integer()) return parse_label(std::to_string(l.get<long>()), line, opts);
  if (l.is_string()) return parse_label(l.get<std::string>(), line, opts);
  throw ValidationError(where(line) + "unknown label " + l.dump());
}

std::string json_id(const json& j, std::size_t line) {
  if (!j.contains("id")) throw ValidationError(where(line) + "missing id");
  return j["id"].is_string() ? j["id"].get<std::string>() : j["id"].dump();
}

void finalize(Dataset& ds, const LoadOptions& opts) {
  for (const auto& s : ds.series) {
    ds.max_length = std::max(ds.max_length, s.length);
    if (s.label) ++ds.label_counts[*s.label];
  }
  if (opts.pad_policy == PadPolicy::kRepeatLast) {
    for (auto& s : ds.series) {
      if (s.length < ds.max_length) s = pad_repeat_last(s, ds.max_length);
    }
  }
}

void check_channels(Dataset& ds, const TimeSeries& s, const std::string& loc) {
  if (ds.channels == 0) ds.channels = s.channels;
  if (s.channels != ds.channels) {
    throw ValidationError(loc + "instance '" + s.id + "' has " + std::to_string(s.channels) +
                          " channels, expected " + std::to_string(ds.channels));
  }
  if (s.length == 0) throw ValidationError(loc + "instance '" + s.id + "' is empty");
}

Dataset read_csv(std::istream& in, const LoadOptions& opts) {
  Dataset ds;
  std::string line;
  std::size_t lineno = 1;
  if (!std::getline(in, line)) throw ValidationError("empty CSV dataset");
  const auto header = split_csv(line);
  if (header.size() < 4 || trim(header[0]) != "id" || trim(header[1]) != "label" ||
      trim(header[2]) != "channel") {
    throw ValidationError(where(1) + "expected header id,label,channel,v0,...");
  }

  struct Pending {
    std::string id;
    std::optional<int> label;
    std::vector<std::vector<double>> rows;
    std::size_t first_line = 0;
  };
  std::optional<Pending> cur;
  auto flush = [&]() {
    if (!cur) return;
    auto s = TimeSeries::from_channels(cur->id, cur->label, cur->rows);
    check_channels(ds, s, where(cur->first_line));
    ds.series.push_back(std::move(s));
    cur.reset();
  };

  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    auto cells = split_csv(line);
    if (cells.size() < 4) throw ValidationError(where(lineno) + "too few columns");
    while (cells.size() > 3 && trim(cells.back()).empty()) cells.pop_back();
    const std::string id = trim(cells[0]);
    const auto label = parse_label(trim(cells[1]), lineno, opts);
    std::size_t channel = 0;
    try {
      channel = std::stoul(trim(cells[2]));
    } catch (const std::exception&) {
      throw ValidationError(where(lineno) + "bad channel '" + cells[2] + "'");
    }
    std::vector<double> values;
    for (std::size_t k = 3; k < cells.size(); ++k) {
      const std::string cell = trim(cells[k]);
      double v;
      try {
        std::size_t used = 0;
        v = std::stod(cell, &used);
        if (used != cell.size()) throw std::invalid_argument("trailing");
      } catch (const std::exception&) {
        throw ValidationError(where(lineno) + "instance '" + id + "': bad value '" + cell + "'");
      }
      if (!std::isfinite(v)) {
        throw ValidationError(where(lineno) + "instance '" + id + "': non-finite value");
      }
      values.push_back(v);
    }
    if (!cur || cur->id != id) {
      flush();
      cur = Pending{id, label, {}, lineno};
    } else if (cur->label != label) {
      throw ValidationError(where(lineno) + "instance '" + id + "': inconsistent label");
    }
    if (channel != cur->rows.size()) {
      throw ValidationError(where(lineno) + "instance '" + id + "': expected channel " +
                            std::to_string(cur->rows.size()) + ", got " +
                            std::to_string(channel));
    }
    if (!cur->rows.empty() && values.size() != cur->rows.front().size()) {
      throw ValidationError(where(lineno) + "instance '" + id + "': ragged channels");
    }
    cur->rows.push_back(std::move(values));
  }
  flush();
  finalize(ds, opts);
  return ds;
}

Dataset read_ndjson(std::istream& in, const LoadOptions& opts) {
  Dataset ds;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ValidationError(where(lineno) + "invalid JSON: " + e.what());
    }
    const std::string id = json_id(j, lineno);
    const auto label = json_label(j, lineno, opts);
    if (!j.contains("values") || !j["values"].is_array()) {
      throw ValidationError(where(lineno) + "instance '" + id + "': missing values");
    }
    std::vector<std::vector<double>> rows;
    for (const auto& ch : j["values"]) {
      if (!ch.is_array()) {
        throw ValidationError(where(lineno) + "instance '" + id + "': values must be [[...]]");
      }
      std::vector<double> row;
      for (const auto& v : ch) {
        // nlohmann parses NaN/Infinity literals as invalid JSON; null stands in for them.
        if (!v.is_number() || !std::isfinite(v.get<double>())) {
          throw ValidationError(where(lineno) + "instance '" + id + "': non-finite value");
        }
        row.push_back(v.get<double>());
      }
      rows.push_back(std::move(row));
    }
    TimeSeries s;
    try {
      s = TimeSeries::from_channels(id, label, rows);
    } catch (const ValidationError& e) {
      throw ValidationError(where(lineno) + e.what());
    }
    check_channels(ds, s, where(lineno));
    ds.series.push_back(std::move(s));
  }
  finalize(ds, opts);
  return ds;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open " + path.string());
  return in;
}

}  // namespace

Dataset read_dataset(std::istream& in, DatasetFormat format, const LoadOptions& opts) {
  return format == DatasetFormat::kCsv ? read_csv(in, opts) : read_ndjson(in, opts);
}

Dataset load_dataset(const std::filesystem::path& path, DatasetFormat format,
                     const LoadOptions& opts) {
  auto in = open_in(path);
  try {
    return read_dataset(in, format, opts);
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_dataset_ndjson(std::ostream& out, std::span<const TimeSeries> series) {
  for (const auto& s : series) {
    json rows = json::array();
    for (std::size_t f = 0; f < s.channels; ++f) {
      const auto ch = s.channel(f);
      rows.push_back(std::vector<double>(ch.begin(), ch.end()));
    }
    json j{{"id", s.id}, {"label", s.label ? json(*s.label) : json(nullptr)}, {"values", rows}};
    out << j.dump() << '\n';
  }
}

void write_tokens(std::ostream& out, std::span<const TokenSequence> data) {
  for (const auto& s : data) {
    json j{{"id", s.id}, {"label", s.label ? json(*s.label) : json(nullptr)}, {"tokens", s.tokens}};
    out << j.dump() << '\n';
  }
}

std::vector<TokenSequence> read_tokens(std::istream& in, int vocab_size,
                                       std::optional<std::size_t> seq_len) {
  std::vector<TokenSequence> out;
  std::string line;
  std::size_t lineno = 0;
  LoadOptions any_label;
  std::vector<std::string> mismatched;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ValidationError(where(lineno) + "invalid JSON: " + e.what());
    }
    TokenSequence s{json_id(j, lineno), json_label(j, lineno, any_label), {}};
    if (!j.contains("tokens") || !j["tokens"].is_array()) {
      throw ValidationError(where(lineno) + "instance '" + s.id + "': missing tokens");
    }
    for (const auto& t : j["tokens"]) {
      if (!t.is_number_integer()) {
        throw ValidationError(where(lineno) + "instance '" + s.id + "': non-integer token");
      }
      const long v = t.get<long>();
      if (v < 0 || v >= vocab_size) {
        throw ValidationError(where(lineno) + "instance '" + s.id + "': token " +
                              std::to_string(v) + " outside [0, " +
                              std::to_string(vocab_size) + ")");
      }
      s.tokens.push_back(static_cast<int>(v));
    }
    if (!seq_len) seq_len = s.tokens.size();
    if (s.tokens.size() != *seq_len) mismatched.push_back(s.id);
    out.push_back(std::move(s));
  }
  if (!mismatched.empty()) {
    std::string ids;
    for (std::size_t i = 0; i < mismatched.size() && i < 20; ++i) {
      ids += (i ? ", " : "") + mismatched[i];
    }
    throw ValidationError("token sequences of unexpected length (expected " +
                          std::to_string(*seq_len) + "): " + ids);
  }
  return out;
}

std::vector<TokenSequence> load_tokens(const std::filesystem::path& path, int vocab_size,
                                       std::optional<std::size_t> seq_len) {
  auto in = open_in(path);
  try {
    return read_tokens(in, vocab_size, seq_len);
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

void write_attributions(std::ostream& out, std::span<const AttributionVector> attrs) {
  for (const auto& a : attrs) {
    json j{{"id", a.instance_id},
           {"method", to_string(a.method)},
           {"class", a.target_class},
           {"scores", a.scores}};
    out << j.dump() << '\n';
  }
}

std::vector<AttributionVector> read_attributions(std::istream& in) {
  std::vector<AttributionVector> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      const json j = json::parse(line);
      AttributionVector a;
      a.instance_id = json_id(j, lineno);
      a.method = parse_method(j.at("method").get<std::string>());
      a.target_class = j.at("class").get<int>();
      a.scores = j.at("scores").get<std::vector<double>>();
      for (double v : a.scores) {
        if (!std::isfinite(v)) throw ValidationError("non-finite score");
      }
      out.push_back(std::move(a));
    } catch (const json::exception& e) {
      throw ValidationError(where(lineno) + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(where(lineno) + e.what());
    }
  }
  return out;
}

std::vector<AttributionVector> load_attributions(const std::filesystem::path& path) {
  auto in = open_in(path);
  try {
    return read_attributions(in);
  } catch (const ValidationError& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

namespace {

json dense_json(const Dense& d) {
  return {{"in", d.in}, {"out", d.out}, {"weight", d.weight}, {"bias", d.bias}};
}

Dense dense_from(const json& j) {
  Dense d;
  d.in = j.at("in").get<std::size_t>();
  d.out = j.at("out").get<std::size_t>();
  d.weight = j.at("weight").get<std::vector<double>>();
  d.bias = j.at("bias").get<std::vector<double>>();
  return d;
}

}  // namespace

json model_to_json(const ClassifierModel& m) {
  json hidden = json::array();
  for (const auto& l : m.hidden) {
    hidden.push_back({{"affine", dense_json(l.affine)}, {"gain", l.gain}, {"shift", l.shift}});
  }
  return {{"format", "tsxplain-model-v1"},
          {"vocab_size", m.vocab_size},
          {"embed_dim", m.embed_dim},
          {"seq_len", m.seq_len},
          {"num_classes", m.num_classes},
          {"seed", m.seed},
          {"config_hash", m.config_hash},
          {"parameter_hash", m.parameter_hash()},
          {"embedding", m.embedding},
          {"hidden", hidden},
          {"head", dense_json(m.head)}};
}

ClassifierModel model_from_json(const json& j) {
  ClassifierModel m;
  try {
    if (j.at("format") != "tsxplain-model-v1") throw ValidationError("unknown model format");
    m.vocab_size = j.at("vocab_size").get<int>();
    m.embed_dim = j.at("embed_dim").get<std::size_t>();
    m.seq_len = j.at("seq_len").get<std::size_t>();
    m.num_classes = j.at("num_classes").get<int>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.embedding = j.at("embedding").get<std::vector<double>>();
    for (const auto& l : j.at("hidden")) {
      m.hidden.push_back({dense_from(l.at("affine")), l.at("gain").get<std::vector<double>>(),
                          l.at("shift").get<std::vector<double>>()});
    }
    m.head = dense_from(j.at("head"));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("malformed model: ") + e.what());
  }
  m.validate();
  if (j.contains("parameter_hash") && j["parameter_hash"] != m.parameter_hash()) {
    throw ValidationError("model parameter hash mismatch");
  }
  return m;
}

ClassifierModel load_model(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  try {
    return model_from_json(json::parse(text));
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
}

std::string read_file(const std::filesystem::path& path) {
  auto in = open_in(path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp." + std::to_string(::getpid()) + "." +
         std::to_string(std::random_device{}());
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw RuntimeError("cannot write " + tmp.string());
    out << content;
    if (!out.flush()) throw RuntimeError("write failed: " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string corpus_fingerprint(std::span<const TokenSequence> data) {
  std::ostringstream ss;
  write_tokens(ss, data);
  return sha256_hex(ss.str());
}

}  // namespace tsxplain
