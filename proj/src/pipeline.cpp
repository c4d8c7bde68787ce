#include "tsxplain/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "tsxplain/evaluation.hpp"

namespace tsxplain {

using nlohmann::json;

namespace {

json method_json(const MethodConfig& m) {
  switch (m.method) {
    case Method::kIntegratedGradients:
      return {{"steps", m.ig.steps}, {"absolute", m.ig.absolute}};
    case Method::kRise:
      return {{"masks", m.rise.masks},
              {"p_keep", m.rise.p_keep},
              {"normalize_by_pkeep", m.rise.normalize_by_pkeep}};
    case Method::kLime:
      return {{"samples", m.lime.samples},
              {"kernel_width", m.lime.kernel_width ? json(*m.lime.kernel_width) : json(nullptr)},
              {"ridge", m.lime.ridge}};
    default:
      return json::object();
  }
}

MethodConfig method_from_json(const std::string& name, const json& j) {
  MethodConfig m;
  m.method = parse_method(name);
  if (m.method == Method::kRandom) {
    throw ValidationError("'random' is the built-in baseline, not a configurable method");
  }
  m.ig.steps = j.value("steps", m.ig.steps);
  m.ig.absolute = j.value("absolute", m.ig.absolute);
  m.rise.masks = j.value("masks", m.rise.masks);
  m.rise.p_keep = j.value("p_keep", m.rise.p_keep);
  m.rise.normalize_by_pkeep = j.value("normalize_by_pkeep", m.rise.normalize_by_pkeep);
  m.lime.samples = j.value("samples", m.lime.samples);
  if (j.contains("kernel_width") && !j["kernel_width"].is_null()) {
    m.lime.kernel_width = j["kernel_width"].get<double>();
  }
  m.lime.ridge = j.value("ridge", m.lime.ridge);
  return m;
}

json train_json(const TrainConfig& t) {
  return {{"p_unk", t.p_unk},
          {"epochs", t.epochs},
          {"batch_size", t.batch_size},
          {"learning_rate", t.learning_rate},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"adam_eps", t.adam_eps},
          {"embed_dim", t.embed_dim},
          {"hidden_sizes", t.hidden_sizes},
          {"class_weighting", t.class_weighting}};
}

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& section) {
  if (!j.is_object()) throw ValidationError(section + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (std::find_if(allowed.begin(), allowed.end(),
                     [&](const char* a) { return key == a; }) == allowed.end()) {
      throw ValidationError("unknown key '" + key + "' in " + section);
    }
  }
}

}  // namespace

void PipelineConfig::validate() const {
  if (seeds.empty()) throw ValidationError("seed list must not be empty");
  std::set<std::uint64_t> unique(seeds.begin(), seeds.end());
  if (unique.size() != seeds.size()) throw ValidationError("seeds must be distinct");
  train.validate();
  if (tokenizer.patch_length == 0) throw ValidationError("patch_length must be positive");
  if (tokenizer.alphabet_size < 2) throw ValidationError("alphabet too small");
  if (methods.empty()) throw ValidationError("at least one method is required");
  std::set<Method> seen;
  for (const auto& m : methods) {
    if (!seen.insert(m.method).second) {
      throw ValidationError("method '" + to_string(m.method) + "' listed twice");
    }
    if (m.ig.steps < 1) throw ValidationError("integrated_gradients.steps must be >= 1");
    if (m.rise.masks == 0) throw ValidationError("rise.masks must be >= 1");
    if (!(m.rise.p_keep > 0.0 && m.rise.p_keep <= 1.0)) {
      throw ValidationError("rise.p_keep must be in (0, 1]");
    }
    if (m.lime.samples == 0) throw ValidationError("lime.samples must be >= 1");
    if (m.lime.ridge < 0.0) throw ValidationError("lime.ridge must be >= 0");
  }
  for (auto l : evaluation.ssa_lengths) {
    if (l < 1) throw ValidationError("SSA lengths must be >= 1");
  }
  if (evaluation.rnd_draws < 1) throw ValidationError("rnd_draws must be >= 1");
  if (data.synthetic) {
    SyntheticSpec spec = data.synthetic_spec;
    spec.resolve();
  } else {
    for (const auto* p : {&data.train_path, &data.test_path}) {
      if (p->empty()) throw ValidationError("file data source needs train and test paths");
    }
    for (const auto* p : {&data.train_path, &data.val_path, &data.test_path}) {
      if (!p->empty() && !std::filesystem::exists(*p)) {
        throw ValidationError("path does not exist: " + p->string());
      }
    }
  }
}

PipelineConfig pipeline_config_from_json(const json& j) {
  PipelineConfig cfg;
  try {
    check_keys(j, {"data", "tokenizer", "train", "seeds", "methods", "evaluation",
                   "cache_dir", "report", "csv_dir"},
               "pipeline config");
    if (j.contains("tokenizer")) {
      const json& t = j["tokenizer"];
      check_keys(t, {"patch_length", "alphabet_size", "pad_policy"}, "tokenizer");
      cfg.tokenizer.patch_length = t.value("patch_length", cfg.tokenizer.patch_length);
      cfg.tokenizer.alphabet_size = t.value("alphabet_size", cfg.tokenizer.alphabet_size);
      if (t.contains("pad_policy")) {
        cfg.tokenizer.pad_policy = parse_pad_policy(t["pad_policy"].get<std::string>());
      }
    }
    if (j.contains("data")) {
      const json& d = j["data"];
      check_keys(d, {"source", "synthetic", "seed", "train", "val", "test", "format",
                     "num_classes"},
                 "data");
      const std::string source = d.value("source", std::string("synthetic"));
      if (source == "synthetic") {
        cfg.data.synthetic = true;
        json spec = d.value("synthetic", json::object());
        if (!spec.contains("patch_length")) spec["patch_length"] = cfg.tokenizer.patch_length;
        cfg.data.synthetic_spec = synthetic_spec_from_json(spec);
        cfg.data.synthetic_seed = d.value("seed", cfg.data.synthetic_seed);
      } else if (source == "files") {
        cfg.data.synthetic = false;
        cfg.data.train_path = d.at("train").get<std::string>();
        cfg.data.val_path = d.value("val", std::string());
        cfg.data.test_path = d.at("test").get<std::string>();
        if (d.contains("format")) {
          cfg.data.format = parse_dataset_format(d["format"].get<std::string>());
        }
        if (d.contains("num_classes")) cfg.data.num_classes = d["num_classes"].get<int>();
      } else {
        throw ValidationError("data.source must be 'synthetic' or 'files'");
      }
    } else {
      cfg.data.synthetic_spec.patch_length = cfg.tokenizer.patch_length;
    }
    if (j.contains("train")) {
      const json& t = j["train"];
      check_keys(t, {"p_unk", "epochs", "batch_size", "learning_rate", "beta1", "beta2",
                     "adam_eps", "embed_dim", "hidden_sizes", "class_weighting"},
                 "train");
      TrainConfig& tc = cfg.train;
      tc.p_unk = t.value("p_unk", tc.p_unk);
      tc.epochs = t.value("epochs", tc.epochs);
      tc.batch_size = t.value("batch_size", tc.batch_size);
      tc.learning_rate = t.value("learning_rate", tc.learning_rate);
      tc.beta1 = t.value("beta1", tc.beta1);
      tc.beta2 = t.value("beta2", tc.beta2);
      tc.adam_eps = t.value("adam_eps", tc.adam_eps);
      tc.embed_dim = t.value("embed_dim", tc.embed_dim);
      tc.hidden_sizes = t.value("hidden_sizes", tc.hidden_sizes);
      tc.class_weighting = t.value("class_weighting", tc.class_weighting);
    }
    if (j.contains("seeds")) cfg.seeds = j["seeds"].get<std::vector<std::uint64_t>>();
    if (j.contains("methods")) {
      const json& m = j["methods"];
      if (m.is_array()) {
        for (const auto& name : m) cfg.methods.push_back(method_from_json(name, json::object()));
      } else {
        for (const auto& [name, params] : m.items()) {
          cfg.methods.push_back(method_from_json(name, params));
        }
      }
    } else {
      for (const char* name : {"saliency", "integrated_gradients", "rise", "lime"}) {
        cfg.methods.push_back(method_from_json(name, json::object()));
      }
    }
    if (j.contains("evaluation")) {
      const json& e = j["evaluation"];
      check_keys(e, {"ssa_lengths", "rnd_draws", "rnd_seed", "explain_seed", "normalize_cs",
                     "ssa_use_abs"},
                 "evaluation");
      EvaluationConfig& ec = cfg.evaluation;
      ec.ssa_lengths = e.value("ssa_lengths", ec.ssa_lengths);
      ec.rnd_draws = e.value("rnd_draws", ec.rnd_draws);
      ec.rnd_seed = e.value("rnd_seed", ec.rnd_seed);
      ec.explain_seed = e.value("explain_seed", ec.explain_seed);
      ec.normalize_cs = e.value("normalize_cs", ec.normalize_cs);
      ec.ssa_use_abs = e.value("ssa_use_abs", ec.ssa_use_abs);
    }
    if (j.contains("cache_dir")) cfg.cache_dir = j["cache_dir"].get<std::string>();
    if (j.contains("report")) cfg.report_path = j["report"].get<std::string>();
    if (j.contains("csv_dir")) cfg.csv_dir = j["csv_dir"].get<std::string>();
  } catch (const json::exception& e) {
    throw ValidationError(std::string("pipeline config: ") + e.what());
  }
  return cfg;
}

json to_json(const PipelineConfig& cfg) {
  json data;
  if (cfg.data.synthetic) {
    SyntheticSpec spec = cfg.data.synthetic_spec;
    spec.resolve();
    data = {{"source", "synthetic"}, {"synthetic", to_json(spec)}, {"seed", cfg.data.synthetic_seed}};
  } else {
    data = {{"source", "files"},
            {"train", cfg.data.train_path.string()},
            {"val", cfg.data.val_path.string()},
            {"test", cfg.data.test_path.string()},
            {"format", cfg.data.format ? json(cfg.data.format == DatasetFormat::kCsv ? "csv" : "ndjson")
                                       : json(nullptr)},
            {"num_classes", cfg.data.num_classes ? json(*cfg.data.num_classes) : json(nullptr)}};
  }
  json methods = json::object();
  for (const auto& m : cfg.methods) methods[to_string(m.method)] = method_json(m);
  const auto& e = cfg.evaluation;
  return {{"data", data},
          {"tokenizer",
           {{"patch_length", cfg.tokenizer.patch_length},
            {"alphabet_size", cfg.tokenizer.alphabet_size},
            {"pad_policy", to_string(cfg.tokenizer.pad_policy)}}},
          {"train", train_json(cfg.train)},
          {"seeds", cfg.seeds},
          {"methods", methods},
          {"evaluation",
           {{"ssa_lengths", e.ssa_lengths},
            {"rnd_draws", e.rnd_draws},
            {"rnd_seed", e.rnd_seed},
            {"explain_seed", e.explain_seed},
            {"normalize_cs", e.normalize_cs},
            {"ssa_use_abs", e.ssa_use_abs}}},
          {"cache_dir", cfg.cache_dir.string()},
          {"report", cfg.report_path.string()},
          {"csv_dir", cfg.csv_dir.string()}};
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  const std::string text = read_file(path);
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(path.string() + ": " + e.what());
  }
  return pipeline_config_from_json(j);
}

std::string config_hash(const PipelineConfig& cfg) {
  json j = to_json(cfg);
  j.erase("cache_dir");
  j.erase("report");
  j.erase("csv_dir");
  return sha256_hex(j.dump());
}

namespace {

// Content-addressed stage cache. Disabled when the root is empty.
class StageCache {
 public:
  explicit StageCache(std::filesystem::path root) : root_(std::move(root)) {}

  std::optional<std::string> get(const std::string& stage, const std::string& key,
                                 const std::string& name) const {
    if (root_.empty()) return std::nullopt;
    const auto p = root_ / stage / key / name;
    if (!std::filesystem::exists(p)) return std::nullopt;
    return read_file(p);
  }

  void put(const std::string& stage, const std::string& key, const std::string& name,
           const std::string& content) const {
    if (root_.empty()) return;
    write_file_atomic(root_ / stage / key / name, content);
  }

 private:
  std::filesystem::path root_;
};

StageCache cache_for(const PipelineConfig& cfg) {
  std::filesystem::path root = cfg.cache_dir;
  if (root.empty()) {
    if (const char* env = std::getenv("TSXPLAIN_CACHE_DIR"); env && *env) root = env;
  }
  return StageCache(root);
}

std::string tokens_text(std::span<const TokenSequence> data) {
  std::ostringstream ss;
  write_tokens(ss, data);
  return ss.str();
}

std::vector<TokenSequence> tokens_from_text(const std::string& text, int vocab) {
  std::istringstream ss(text);
  return read_tokens(ss, vocab);
}

std::vector<TokenSequence> tokenize_all(std::span<const TimeSeries> series,
                                        const TokenizerConfig& tok, std::size_t target) {
  std::vector<TokenSequence> out;
  out.reserve(series.size());
  for (const auto& s : series) out.push_back(tokenize(prepare_series(s, tok, target), tok));
  return out;
}

Corpus build_corpus(const PipelineConfig& cfg) {
  Corpus corpus;
  TokenizerConfig tok = cfg.tokenizer;
  if (cfg.data.synthetic) {
    const SyntheticCorpus syn = generate_synthetic(cfg.data.synthetic_spec, cfg.data.synthetic_seed);
    tok.channels = syn.spec.channels;
    corpus.num_classes = syn.spec.num_classes;
    corpus.train = tokenize_all(syn.train.series, tok, syn.spec.length);
    corpus.val = tokenize_all(syn.val.series, tok, syn.spec.length);
    corpus.test = tokenize_all(syn.test.series, tok, syn.spec.length);
    if (tok.patch_length == syn.spec.patch_length) {
      for (std::size_t i = 0; i < syn.test.series.size(); ++i) {
        corpus.test_motif_positions.push_back(motif_token_positions(
            syn.spec, *syn.test.series[i].label, syn.test.motif_start[i]));
      }
    }
  } else {
    LoadOptions opts{cfg.data.num_classes, cfg.tokenizer.pad_policy};
    auto load = [&](const std::filesystem::path& p) {
      return load_dataset(p, cfg.data.format.value_or(detect_dataset_format(p)), opts);
    };
    const Dataset train = load(cfg.data.train_path);
    const Dataset test = load(cfg.data.test_path);
    const Dataset val = cfg.data.val_path.empty() ? Dataset{} : load(cfg.data.val_path);
    if (train.series.empty() || test.series.empty()) {
      throw ValidationError("train and test sets must be non-empty");
    }
    tok.channels = train.channels;
    const std::size_t target = std::max({train.max_length, test.max_length, val.max_length});
    corpus.train = tokenize_all(train.series, tok, target);
    corpus.val = tokenize_all(val.series, tok, target);
    corpus.test = tokenize_all(test.series, tok, target);
    if (cfg.data.num_classes) {
      corpus.num_classes = *cfg.data.num_classes;
    } else {
      int mx = -1;
      for (const auto* set : {&corpus.train, &corpus.test}) {
        for (const auto& s : *set) mx = std::max(mx, s.label.value_or(-1));
      }
      corpus.num_classes = mx + 1;
    }
  }
  corpus.vocab_size = tok.vocab_size();
  corpus.seq_len = corpus.train.empty() ? 0 : corpus.train.front().tokens.size();
  return corpus;
}

}  // namespace

Corpus prepare_corpus(const PipelineConfig& cfg) {
  cfg.validate();
  const StageCache cache = cache_for(cfg);
  json key_src = to_json(cfg);
  key_src = {{"data", key_src["data"]}, {"tokenizer", key_src["tokenizer"]}};
  // File sources are keyed by content as well as path.
  if (!cfg.data.synthetic) {
    for (const auto* p : {&cfg.data.train_path, &cfg.data.val_path, &cfg.data.test_path}) {
      key_src["content"].push_back(p->empty() ? "" : sha256_hex(read_file(*p)));
    }
  }
  const std::string key = sha256_hex(key_src.dump());

  Corpus corpus;
  if (auto meta_text = cache.get("tokens", key, "meta.json")) {
    const json meta = json::parse(*meta_text);
    corpus.vocab_size = meta.at("vocab_size").get<int>();
    corpus.seq_len = meta.at("seq_len").get<std::size_t>();
    corpus.num_classes = meta.at("num_classes").get<int>();
    corpus.test_motif_positions =
        meta.at("test_motif_positions").get<std::vector<std::vector<std::size_t>>>();
    corpus.train = tokens_from_text(*cache.get("tokens", key, "train.ndjson"), corpus.vocab_size);
    corpus.val = tokens_from_text(*cache.get("tokens", key, "val.ndjson"), corpus.vocab_size);
    corpus.test = tokens_from_text(*cache.get("tokens", key, "test.ndjson"), corpus.vocab_size);
  } else {
    corpus = build_corpus(cfg);
    cache.put("tokens", key, "train.ndjson", tokens_text(corpus.train));
    cache.put("tokens", key, "val.ndjson", tokens_text(corpus.val));
    cache.put("tokens", key, "test.ndjson", tokens_text(corpus.test));
    const json meta{{"vocab_size", corpus.vocab_size},
                    {"seq_len", corpus.seq_len},
                    {"num_classes", corpus.num_classes},
                    {"test_motif_positions", corpus.test_motif_positions}};
    cache.put("tokens", key, "meta.json", meta.dump());
  }
  for (const auto& s : corpus.train) {
    if (s.label) ++corpus.label_counts[*s.label];
  }
  if (corpus.num_classes < 2) throw ValidationError("need at least two classes");
  return corpus;
}

std::vector<TrainResult> train_models(const PipelineConfig& cfg, const Corpus& corpus) {
  const StageCache cache = cache_for(cfg);
  const std::string train_fp = corpus_fingerprint(corpus.train);
  std::vector<TrainResult> out;
  for (std::uint64_t seed : cfg.seeds) {
    TrainConfig tc = cfg.train;
    tc.seed = seed;
    json key_src = train_json(tc);
    key_src["seed"] = seed;
    key_src["corpus"] = train_fp;
    key_src["vocab_size"] = corpus.vocab_size;
    key_src["num_classes"] = corpus.num_classes;
    const std::string key = sha256_hex(key_src.dump());
    if (auto text = cache.get("models", key, "model.json")) {
      TrainResult r{model_from_json(json::parse(*text)), {}};
      r.epoch_loss = json::parse(*cache.get("models", key, "loss.json")).get<std::vector<double>>();
      out.push_back(std::move(r));
      continue;
    }
    TrainResult r = train(corpus.train, corpus.vocab_size, corpus.num_classes, tc);
    cache.put("models", key, "model.json", model_to_json(r.model).dump());
    cache.put("models", key, "loss.json", json(r.epoch_loss).dump());
    out.push_back(std::move(r));
  }
  return out;
}

namespace {

json stats(const std::vector<double>& values) {
  if (values.empty()) return {{"mean", nullptr}, {"std", nullptr}, {"values", values}};
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double var = 0.0;
  for (double v : values) var += (v - mean) * (v - mean);
  var /= static_cast<double>(values.size());
  return {{"mean", mean}, {"std", std::sqrt(var)}, {"values", values}};
}

std::string attributions_text(std::span<const AttributionVector> a) {
  std::ostringstream ss;
  write_attributions(ss, a);
  return ss.str();
}

std::vector<AttributionVector> cached_explain(const StageCache& cache, const ClassifierModel& model,
                                              std::span<const TokenSequence> data,
                                              const MethodConfig& method, std::uint64_t seed,
                                              TargetMode mode, const std::string& data_fp) {
  json key_src{{"model", model.parameter_hash()},
               {"method", to_string(method.method)},
               {"params", method_json(method)},
               {"seed", seed},
               {"mode", mode == TargetMode::kLabel ? "label" : "predicted"},
               {"data", data_fp}};
  const std::string key = sha256_hex(key_src.dump());
  if (auto text = cache.get("attributions", key, "attributions.ndjson")) {
    std::istringstream ss(*text);
    return read_attributions(ss);
  }
  auto attrs = explain_batch(model, data, method, seed, mode);
  cache.put("attributions", key, "attributions.ndjson", attributions_text(attrs));
  return attrs;
}

std::string csv_number(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

}  // namespace

json run_pipeline(const PipelineConfig& cfg) {
  cfg.validate();
  const StageCache cache = cache_for(cfg);
  std::string stage = "tokenize";
  try {
    const Corpus corpus = prepare_corpus(cfg);
    const auto& test = corpus.test;
    if (test.empty()) throw ValidationError("test set is empty");
    for (const auto& s : test) {
      if (!s.label) throw ValidationError("test instance '" + s.id + "' has no label");
    }
    const std::string test_fp = corpus_fingerprint(test);

    stage = "train";
    const auto models = train_models(cfg, corpus);

    json report;
    report["config_hash"] = config_hash(cfg);
    report["seeds"] = cfg.seeds;
    report["corpus"] = {{"train", corpus_fingerprint(corpus.train)},
                        {"val", corpus_fingerprint(corpus.val)},
                        {"test", test_fp},
                        {"sizes", {corpus.train.size(), corpus.val.size(), test.size()}},
                        {"vocab_size", corpus.vocab_size},
                        {"seq_len", corpus.seq_len},
                        {"num_classes", corpus.num_classes}};
    json label_counts = json::object();
    for (const auto& [label, count] : corpus.label_counts) {
      label_counts[std::to_string(label)] = count;
    }
    report["corpus"]["train_label_counts"] = label_counts;

    std::vector<int> truth;
    for (const auto& s : test) truth.push_back(*s.label);

    json per_seed_clf = json::array();
    std::vector<double> test_acc;
    std::vector<std::vector<int>> predictions;
    for (std::size_t m = 0; m < models.size(); ++m) {
      const auto& model = models[m].model;
      predictions.push_back(predict_batch(model, test));
      const double acc = accuracy(model, test);
      test_acc.push_back(acc);
      per_seed_clf.push_back(
          {{"seed", cfg.seeds[m]},
           {"parameter_hash", model.parameter_hash()},
           {"config_hash", model.config_hash},
           {"final_train_loss",
            models[m].epoch_loss.empty() ? json(nullptr) : json(models[m].epoch_loss.back())},
           {"val_accuracy", corpus.val.empty() ? json(nullptr) : json(accuracy(model, corpus.val))},
           {"test_accuracy", acc},
           {"test_macro_f1", macro_f1(truth, predictions.back())}});
    }
    report["classifier"] = {{"per_seed", per_seed_clf}, {"test_accuracy", stats(test_acc)}};

    stage = "explain";
    // attrs[method][model], explaining the predicted class.
    std::vector<std::vector<std::vector<AttributionVector>>> attrs(cfg.methods.size());
    for (std::size_t k = 0; k < cfg.methods.size(); ++k) {
      for (const auto& tr : models) {
        attrs[k].push_back(cached_explain(cache, tr.model, test, cfg.methods[k],
                                          cfg.evaluation.explain_seed, TargetMode::kPredicted,
                                          test_fp));
      }
    }

    stage = "perturbation";
    std::ostringstream curves_csv;
    curves_csv << "seed,source,k,f1\n";
    auto emit_curve = [&](std::uint64_t seed, const std::string& source,
                          const std::vector<double>& f1) {
      for (std::size_t k = 0; k < f1.size(); ++k) {
        curves_csv << seed << ',' << source << ',' << k << ',' << csv_number(f1[k]) << '\n';
      }
    };
    std::vector<std::vector<AttributionVector>> rnd_draws;
    for (int r = 0; r < cfg.evaluation.rnd_draws; ++r) {
      rnd_draws.push_back(random_attributions(
          test, derive_seed(cfg.evaluation.rnd_seed, "deletion/" + std::to_string(r))));
    }
    std::vector<AttributionVector> oracle;
    if (corpus.test_motif_positions.size() == test.size()) {
      for (std::size_t i = 0; i < test.size(); ++i) {
        AttributionVector a{std::vector<double>(corpus.seq_len, 0.0), Method::kRandom,
                            *test[i].label, test[i].id, {}};
        for (auto p : corpus.test_motif_positions[i]) a.scores[p] = 1.0;
        oracle.push_back(std::move(a));
      }
    }
    std::vector<double> auc_rnd;
    std::vector<std::vector<double>> auc_method(cfg.methods.size()), gap_method(cfg.methods.size());
    std::vector<double> auc_oracle, gap_oracle;
    for (std::size_t m = 0; m < models.size(); ++m) {
      const auto& model = models[m].model;
      const auto seed = cfg.seeds[m];
      double rnd_sum = 0.0;
      std::vector<double> mean_curve(corpus.seq_len + 1, 0.0);
      for (const auto& draw : rnd_draws) {
        const auto curve = deletion_curve(model, test, draw, "random");
        rnd_sum += auc(curve);
        for (std::size_t k = 0; k < curve.f1.size(); ++k) mean_curve[k] += curve.f1[k];
      }
      for (double& v : mean_curve) v /= static_cast<double>(rnd_draws.size());
      emit_curve(seed, "random", mean_curve);
      const double a_rnd = rnd_sum / static_cast<double>(rnd_draws.size());
      auc_rnd.push_back(a_rnd);
      for (std::size_t k = 0; k < cfg.methods.size(); ++k) {
        const std::string name = to_string(cfg.methods[k].method);
        const auto curve = deletion_curve(model, test, attrs[k][m], name);
        emit_curve(seed, name, curve.f1);
        auc_method[k].push_back(auc(curve));
        gap_method[k].push_back(auc_gap(a_rnd, auc_method[k].back()));
      }
      if (!oracle.empty()) {
        const auto curve = deletion_curve(model, test, oracle, "oracle");
        emit_curve(seed, "oracle", curve.f1);
        auc_oracle.push_back(auc(curve));
        gap_oracle.push_back(auc_gap(a_rnd, auc_oracle.back()));
      }
    }
    json perturbation{{"rnd_draws", cfg.evaluation.rnd_draws}, {"auc_rnd", stats(auc_rnd)}};
    json per_method = json::object();
    for (std::size_t k = 0; k < cfg.methods.size(); ++k) {
      per_method[to_string(cfg.methods[k].method)] = {{"auc", stats(auc_method[k])},
                                                      {"auc_gap", stats(gap_method[k])}};
    }
    perturbation["methods"] = per_method;
    if (!oracle.empty()) {
      perturbation["oracle"] = {{"auc", stats(auc_oracle)}, {"auc_gap", stats(gap_oracle)}};
    }
    report["perturbation"] = perturbation;

    stage = "invariance";
    if (models.size() >= 2) {
      json inv = json::object();
      for (std::size_t k = 0; k < cfg.methods.size(); ++k) {
        const auto r = implementation_invariance(attrs[k], cfg.evaluation.normalize_cs);
        inv[to_string(cfg.methods[k].method)] = {
            {"mean", r.mean}, {"std", r.std}, {"pairs", r.pairs}, {"skipped", r.skipped}};
      }
      report["invariance"] = inv;
    }

    stage = "agreement";
    if (cfg.methods.size() >= 2) {
      const std::size_t nm = cfg.methods.size();
      std::vector<double> summary;
      std::vector<double> mean_matrix(nm * nm, 0.0);
      std::size_t skipped = 0;
      for (std::size_t m = 0; m < models.size(); ++m) {
        std::vector<NamedAttributions> named;
        for (std::size_t k = 0; k < nm; ++k) {
          named.emplace_back(to_string(cfg.methods[k].method), attrs[k][m]);
        }
        const auto am = xai_agreement(named, cfg.evaluation.normalize_cs);
        summary.push_back(am.summary);
        skipped += am.skipped;
        for (std::size_t x = 0; x < nm * nm; ++x) {
          mean_matrix[x] += am.values[x] / static_cast<double>(models.size());
        }
      }
      json names = json::array();
      json matrix = json::array();
      for (std::size_t a = 0; a < nm; ++a) {
        names.push_back(to_string(cfg.methods[a].method));
        matrix.push_back(std::vector<double>(mean_matrix.begin() + static_cast<std::ptrdiff_t>(a * nm),
                                             mean_matrix.begin() + static_cast<std::ptrdiff_t>((a + 1) * nm)));
      }
      report["agreement"] = {
          {"methods", names}, {"matrix", matrix}, {"summary", stats(summary)}, {"skipped", skipped}};
    }

    stage = "ssa";
    std::ostringstream ssa_csv;
    ssa_csv << "seed,method,length,ssa,mean_neighbors\n";
    const auto& lengths = cfg.evaluation.ssa_lengths;
    const SsaOptions ssa_opts{cfg.evaluation.ssa_use_abs};
    auto ssa_entry = [&](const std::vector<SsaResult>& per_seed) {
      std::vector<double> means, neighbors;
      std::vector<std::size_t> undefined;
      std::vector<std::vector<double>> per_class(static_cast<std::size_t>(corpus.num_classes));
      for (const auto& r : per_seed) {
        if (r.mean) means.push_back(*r.mean);
        neighbors.push_back(r.mean_neighbors);
        undefined.push_back(r.undefined_classes);
        for (std::size_t c = 0; c < r.per_class.size(); ++c) {
          if (r.per_class[c]) per_class[c].push_back(*r.per_class[c]);
        }
      }
      json pc = json::array();
      for (const auto& v : per_class) pc.push_back(stats(v)["mean"]);
      return json{{"length", per_seed.front().length},
                  {"ssa", stats(means)},
                  {"mean_neighbors", stats(neighbors)},
                  {"per_class", pc},
                  {"undefined_classes", undefined}};
    };
    // Random SSA depends only on the data, so one sweep serves every seed.
    const auto rnd_ssa_attrs = random_attributions(test, derive_seed(cfg.evaluation.rnd_seed, "ssa"));
    json ssa_report{{"lengths", lengths}};
    json rnd_entries = json::array();
    std::vector<double> rnd_mean_by_length;
    for (std::size_t l : lengths) {
      const auto r = ssa(corpus.train, test, rnd_ssa_attrs, l, corpus.num_classes, "random", ssa_opts);
      rnd_mean_by_length.push_back(r.mean.value_or(std::nan("")));
      for (auto seed : cfg.seeds) {
        ssa_csv << seed << ",random," << l << ','
                << (r.mean ? csv_number(*r.mean) : std::string()) << ','
                << csv_number(r.mean_neighbors) << '\n';
      }
      rnd_entries.push_back(ssa_entry(std::vector<SsaResult>(models.size(), r)));
    }
    ssa_report["random"] = rnd_entries;
    json ssa_methods = json::object();
    for (std::size_t k = 0; k < cfg.methods.size(); ++k) {
      const std::string name = to_string(cfg.methods[k].method);
      std::vector<std::vector<SsaResult>> by_length(lengths.size());
      for (std::size_t m = 0; m < models.size(); ++m) {
        // Ground-truth class attributions: reuse the predicted-class ones where
        // the prediction is correct, explain the rest for their label.
        std::vector<AttributionVector> label_attrs = attrs[k][m];
        std::vector<TokenSequence> wrong;
        std::vector<std::size_t> wrong_idx;
        for (std::size_t i = 0; i < test.size(); ++i) {
          if (predictions[m][i] != *test[i].label) {
            wrong.push_back(test[i]);
            wrong_idx.push_back(i);
          }
        }
        if (!wrong.empty()) {
          const auto fixed = explain_batch(models[m].model, wrong, cfg.methods[k],
                                           cfg.evaluation.explain_seed, TargetMode::kLabel);
          for (std::size_t w = 0; w < wrong_idx.size(); ++w) label_attrs[wrong_idx[w]] = fixed[w];
        }
        for (std::size_t li = 0; li < lengths.size(); ++li) {
          auto r = ssa(corpus.train, test, label_attrs, lengths[li], corpus.num_classes, name, ssa_opts);
          ssa_csv << cfg.seeds[m] << ',' << name << ',' << lengths[li] << ','
                  << (r.mean ? csv_number(*r.mean) : std::string()) << ','
                  << csv_number(r.mean_neighbors) << '\n';
          by_length[li].push_back(std::move(r));
        }
      }
      json entries = json::array();
      for (std::size_t li = 0; li < lengths.size(); ++li) {
        json e = ssa_entry(by_length[li]);
        std::vector<double> delta;
        for (const auto& r : by_length[li]) {
          if (r.mean && !std::isnan(rnd_mean_by_length[li])) {
            delta.push_back(*r.mean - rnd_mean_by_length[li]);
          }
        }
        e["delta_vs_random"] = stats(delta);
        entries.push_back(e);
      }
      ssa_methods[name] = entries;
    }
    ssa_report["methods"] = ssa_methods;
    report["ssa"] = ssa_report;

    stage = "report";
    if (!cfg.report_path.empty()) write_file_atomic(cfg.report_path, report.dump(2) + "\n");
    if (!cfg.csv_dir.empty()) {
      write_file_atomic(cfg.csv_dir / "deletion_curves.csv", curves_csv.str());
      write_file_atomic(cfg.csv_dir / "ssa_vs_length.csv", ssa_csv.str());
    }
    return report;
  } catch (const ValidationError& e) {
    throw ValidationError("stage '" + stage + "': " + e.what());
  } catch (const RuntimeError& e) {
    throw RuntimeError("stage '" + stage + "': " + e.what());
  } catch (const std::exception& e) {
    throw RuntimeError("stage '" + stage + "': " + e.what());
  }
}

}  // namespace tsxplain
