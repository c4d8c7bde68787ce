// tsxplain command line.
//
// Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "CLI11.hpp"
#include "tsxplain/attribution.hpp"
#include "tsxplain/classifier.hpp"
#include "tsxplain/common.hpp"
#include "tsxplain/evaluation.hpp"
#include "tsxplain/io.hpp"
#include "tsxplain/pipeline.hpp"
#include "tsxplain/synthetic.hpp"
#include "tsxplain/tokenizer.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace tsxplain;

namespace {

void emit(const json& j, const std::string& out) {
  const std::string text = j.dump(2) + "\n";
  if (out.empty() || out == "-") {
    std::cout << text;
  } else {
    write_file_atomic(out, text);
  }
}

int infer_num_classes(std::span<const TokenSequence> data) {
  int mx = -1;
  for (const auto& s : data) mx = std::max(mx, s.label.value_or(-1));
  return mx + 1;
}

std::size_t uniform_length(std::span<const TokenSequence> data) {
  if (data.empty()) throw ValidationError("token file is empty");
  return data.front().tokens.size();
}

struct TokenizeArgs {
  std::string input, output, format, pad_policy = "repeat-last";
  std::size_t patch_length = 25;
  int alphabet = 4;
  std::optional<std::size_t> target_length;
  std::optional<int> num_classes;
};

void run_tokenize(const TokenizeArgs& a) {
  const fs::path in = a.input;
  const DatasetFormat fmt = a.format.empty() ? detect_dataset_format(in) : parse_dataset_format(a.format);
  LoadOptions opts{a.num_classes, parse_pad_policy(a.pad_policy)};
  const Dataset ds = load_dataset(in, fmt, opts);
  TokenizerConfig tok{a.patch_length, a.alphabet, ds.channels, opts.pad_policy};
  const std::size_t target = a.target_length.value_or(ds.max_length);
  if (target < ds.max_length) {
    throw ValidationError("target length " + std::to_string(target) +
                          " is shorter than the longest series (" + std::to_string(ds.max_length) + ")");
  }
  std::vector<TokenSequence> out;
  for (const auto& s : ds.series) out.push_back(tokenize(prepare_series(s, tok, target), tok));
  std::ostringstream ss;
  write_tokens(ss, out);
  write_file_atomic(a.output, ss.str());
  json summary{{"instances", out.size()},
               {"vocab_size", tok.vocab_size()},
               {"seq_len", out.empty() ? 0 : out.front().tokens.size()},
               {"channels", ds.channels}};
  json counts = json::object();
  for (const auto& [label, n] : ds.label_counts) counts[std::to_string(label)] = n;
  summary["label_counts"] = counts;
  std::cerr << summary.dump() << "\n";
}

struct TrainArgs {
  std::string tokens, output;
  int vocab_size = 0;
  std::optional<int> num_classes;
  TrainConfig cfg;
};

void run_train(TrainArgs a) {
  const auto data = load_tokens(a.tokens, a.vocab_size);
  const int c = a.num_classes.value_or(infer_num_classes(data));
  const auto result = train(data, a.vocab_size, c, a.cfg);
  write_file_atomic(a.output, model_to_json(result.model).dump() + "\n");
  std::cerr << json{{"train_accuracy", accuracy(result.model, data)},
                    {"epoch_loss", result.epoch_loss},
                    {"parameter_hash", result.model.parameter_hash()}}
                   .dump()
            << "\n";
}

struct ExplainArgs {
  std::string model, tokens, output, method = "saliency", target = "predicted";
  std::uint64_t seed = 11;
  MethodConfig cfg;
  std::optional<double> kernel_width;
};

void run_explain(ExplainArgs a) {
  const auto model = load_model(a.model);
  const auto data = load_tokens(a.tokens, model.vocab_size, static_cast<std::size_t>(model.seq_len));
  a.cfg.method = parse_method(a.method);
  a.cfg.lime.kernel_width = a.kernel_width;
  TargetMode mode;
  if (a.target == "predicted") {
    mode = TargetMode::kPredicted;
  } else if (a.target == "label") {
    mode = TargetMode::kLabel;
  } else {
    throw ValidationError("--target must be 'predicted' or 'label'");
  }
  const auto attrs = explain_batch(model, data, a.cfg, a.seed, mode);
  std::ostringstream ss;
  write_attributions(ss, attrs);
  write_file_atomic(a.output, ss.str());
}

struct EvaluateArgs {
  std::string model, tokens, output;
  std::vector<std::string> attributions;
  int rnd_draws = 5;
  std::uint64_t rnd_seed = 7;
  std::string curves_csv;
};

void run_evaluate(const EvaluateArgs& a) {
  const auto model = load_model(a.model);
  const auto test = load_tokens(a.tokens, model.vocab_size, static_cast<std::size_t>(model.seq_len));
  if (a.rnd_draws < 1) throw ValidationError("--rnd-draws must be >= 1");
  std::ostringstream csv;
  csv << "source,k,f1\n";
  auto emit_curve = [&](const DeletionCurve& c) {
    for (std::size_t k = 0; k < c.f1.size(); ++k) csv << c.source << ',' << k << ',' << c.f1[k] << '\n';
  };
  double auc_rnd = 0.0;
  for (int r = 0; r < a.rnd_draws; ++r) {
    const auto rnd = random_attributions(test, derive_seed(a.rnd_seed, "deletion/" + std::to_string(r)));
    const auto curve = deletion_curve(model, test, rnd, "random/" + std::to_string(r));
    emit_curve(curve);
    auc_rnd += auc(curve);
  }
  auc_rnd /= a.rnd_draws;
  json methods = json::object();
  std::vector<NamedAttributions> named;
  for (const auto& path : a.attributions) {
    auto attrs = load_attributions(path);
    const std::string name = attrs.empty() ? fs::path(path).stem().string() : to_string(attrs.front().method);
    const auto curve = deletion_curve(model, test, attrs, name);
    emit_curve(curve);
    const double v = auc(curve);
    methods[name] = {{"auc", v}, {"auc_gap", auc_gap(auc_rnd, v)}, {"file", path}};
    // Agreement compares instances in test-set order.
    const auto aligned = align_attributions(test, attrs);
    std::vector<AttributionVector> ordered;
    for (const auto* p : aligned) ordered.push_back(*p);
    named.emplace_back(name, std::move(ordered));
  }
  json report{{"auc_rnd", auc_rnd}, {"rnd_draws", a.rnd_draws}, {"methods", methods}};
  if (named.size() >= 2) {
    const auto am = xai_agreement(named);
    json matrix = json::array();
    for (std::size_t i = 0; i < am.methods.size(); ++i) {
      std::vector<double> row;
      for (std::size_t j = 0; j < am.methods.size(); ++j) row.push_back(am.at(i, j));
      matrix.push_back(row);
    }
    report["agreement"] = {{"methods", am.methods}, {"matrix", matrix}, {"summary", am.summary}};
  }
  if (!a.curves_csv.empty()) write_file_atomic(a.curves_csv, csv.str());
  emit(report, a.output);
}

struct SsaArgs {
  std::string train_tokens, tokens, attributions, output;
  int vocab_size = 0;
  std::optional<int> num_classes;
  std::vector<std::size_t> lengths{1, 2, 3};
  std::uint64_t rnd_seed = 7;
  bool use_abs = false;
};

void run_ssa(const SsaArgs& a) {
  const auto train_set = load_tokens(a.train_tokens, a.vocab_size);
  const auto test = load_tokens(a.tokens, a.vocab_size, uniform_length(train_set));
  const auto attrs = load_attributions(a.attributions);
  const auto aligned = align_attributions(test, attrs);
  std::vector<AttributionVector> ordered;
  for (const auto* p : aligned) ordered.push_back(*p);
  const int c = a.num_classes.value_or(std::max(infer_num_classes(train_set), infer_num_classes(test)));
  const std::string name = attrs.empty() ? "unknown" : to_string(attrs.front().method);
  const auto sweep = ssa_sweep(train_set, test, ordered, a.lengths, c, name, a.rnd_seed, SsaOptions{a.use_abs});
  auto result_json = [](const SsaResult& r) {
    json pc = json::array();
    for (const auto& v : r.per_class) pc.push_back(v ? json(*v) : json(nullptr));
    return json{{"length", r.length},
                {"ssa", r.mean ? json(*r.mean) : json(nullptr)},
                {"per_class", pc},
                {"undefined_classes", r.undefined_classes},
                {"mean_neighbors", r.mean_neighbors}};
  };
  json methods = json::array(), random = json::array();
  for (const auto& r : sweep.method) methods.push_back(result_json(r));
  for (const auto& r : sweep.random) random.push_back(result_json(r));
  emit({{"method", name}, {"results", methods}, {"random", random}}, a.output);
}

struct SynthArgs {
  std::string out_dir, spec_file;
  std::uint64_t seed = 2024;
  SyntheticSpec spec;
  bool csv = false;
};

void run_synth(SynthArgs a) {
  SyntheticSpec spec = a.spec;
  if (!a.spec_file.empty()) {
    try {
      spec = synthetic_spec_from_json(json::parse(read_file(a.spec_file)));
    } catch (const json::exception& e) {
      throw ValidationError(a.spec_file + ": " + e.what());
    }
  }
  const auto corpus = generate_synthetic(spec, a.seed);
  const fs::path dir = a.out_dir;
  for (const auto& [name, split] : {std::pair{"train", &corpus.train}, std::pair{"val", &corpus.val},
                                    std::pair{"test", &corpus.test}}) {
    std::ostringstream ss;
    write_dataset_ndjson(ss, split->series);
    write_file_atomic(dir / (std::string(name) + ".ndjson"), ss.str());
  }
  write_file_atomic(dir / "spec.json", to_json(corpus.spec).dump(2) + "\n");
}

struct PipelineArgs {
  std::string config, cache_dir, report, csv_dir;
  std::vector<std::uint64_t> seeds;
  std::vector<std::string> methods;
  std::optional<int> epochs;
  std::optional<std::size_t> n;
  std::optional<std::uint64_t> data_seed;
  bool print = false;
};

void run_pipeline_cmd(const PipelineArgs& a) {
  // Flags form the base layer; the config file is patched over them.
  json flags = json::object();
  if (!a.seeds.empty()) flags["seeds"] = a.seeds;
  if (!a.methods.empty()) flags["methods"] = a.methods;
  if (a.epochs) flags["train"]["epochs"] = *a.epochs;
  if (a.n) flags["data"]["synthetic"]["n"] = *a.n;
  if (a.data_seed) flags["data"]["seed"] = *a.data_seed;
  if (!a.cache_dir.empty()) flags["cache_dir"] = a.cache_dir;
  if (!a.report.empty()) flags["report"] = a.report;
  if (!a.csv_dir.empty()) flags["csv_dir"] = a.csv_dir;
  if (!a.config.empty()) {
    json file;
    try {
      file = json::parse(read_file(a.config));
    } catch (const json::exception& e) {
      throw ValidationError(a.config + ": " + e.what());
    }
    if (!file.is_object()) throw ValidationError(a.config + ": top level must be an object");
    // Methods given as a list in one layer and an object in the other cannot
    // be merged key-wise; the file wins outright.
    if (file.contains("methods")) flags.erase("methods");
    flags.merge_patch(file);
  }
  const PipelineConfig cfg = pipeline_config_from_json(flags);
  const json report = run_pipeline(cfg);
  if (a.print || cfg.report_path.empty()) std::cout << report.dump(2) << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tokenized time-series classification and attribution evaluation"};
  app.require_subcommand(1);

  TokenizeArgs tk;
  auto* tokenize_cmd = app.add_subcommand("tokenize", "SAX-tokenize a CSV or NDJSON dataset");
  tokenize_cmd->add_option("-i,--input", tk.input, "Dataset file")->required()->check(CLI::ExistingFile);
  tokenize_cmd->add_option("-o,--output", tk.output, "Token NDJSON output")->required();
  tokenize_cmd->add_option("--format", tk.format, "csv or ndjson (default: from extension)");
  tokenize_cmd->add_option("--patch-length", tk.patch_length, "Samples per patch")->capture_default_str();
  tokenize_cmd->add_option("--alphabet-size", tk.alphabet, "SAX alphabet size")->capture_default_str();
  tokenize_cmd->add_option("--pad-policy", tk.pad_policy, "repeat-last or zero-after-znorm")->capture_default_str();
  tokenize_cmd->add_option("--target-length", tk.target_length, "Pad to this length instead of the dataset maximum");
  tokenize_cmd->add_option("--num-classes", tk.num_classes, "Reject labels outside [0, C)");

  TrainArgs tr;
  auto* train_cmd = app.add_subcommand("train", "Train a token classifier");
  train_cmd->add_option("--tokens", tr.tokens, "Training token file")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("-o,--output", tr.output, "Model JSON output")->required();
  train_cmd->add_option("--vocab-size", tr.vocab_size, "K = channels * alphabet size")->required();
  train_cmd->add_option("--num-classes", tr.num_classes, "Default: max label + 1");
  train_cmd->add_option("--seed", tr.cfg.seed)->capture_default_str();
  train_cmd->add_option("--epochs", tr.cfg.epochs)->capture_default_str();
  train_cmd->add_option("--batch-size", tr.cfg.batch_size)->capture_default_str();
  train_cmd->add_option("--learning-rate", tr.cfg.learning_rate)->capture_default_str();
  train_cmd->add_option("--p-unk", tr.cfg.p_unk, "UNK injection probability")->capture_default_str();
  train_cmd->add_option("--embed-dim", tr.cfg.embed_dim)->capture_default_str();
  train_cmd->add_option("--hidden", tr.cfg.hidden_sizes, "Hidden layer widths")->capture_default_str();
  train_cmd->add_flag("--class-weighting", tr.cfg.class_weighting, "Inverse-frequency loss weights");

  ExplainArgs ex;
  auto* explain_cmd = app.add_subcommand("explain", "Compute token attributions");
  explain_cmd->add_option("--model", ex.model)->required()->check(CLI::ExistingFile);
  explain_cmd->add_option("--tokens", ex.tokens)->required()->check(CLI::ExistingFile);
  explain_cmd->add_option("-o,--output", ex.output, "Attribution NDJSON output")->required();
  explain_cmd->add_option("-m,--method", ex.method, "saliency, integrated_gradients, rise, lime or random")
      ->capture_default_str();
  explain_cmd->add_option("--target", ex.target, "predicted or label")->capture_default_str();
  explain_cmd->add_option("--seed", ex.seed)->capture_default_str();
  explain_cmd->add_option("--ig-steps", ex.cfg.ig.steps)->capture_default_str();
  explain_cmd->add_flag("--ig-absolute", ex.cfg.ig.absolute);
  explain_cmd->add_option("--rise-masks", ex.cfg.rise.masks)->capture_default_str();
  explain_cmd->add_option("--rise-p-keep", ex.cfg.rise.p_keep)->capture_default_str();
  explain_cmd->add_flag("--rise-normalize", ex.cfg.rise.normalize_by_pkeep, "Divide RISE scores by p_keep");
  explain_cmd->add_option("--lime-samples", ex.cfg.lime.samples)->capture_default_str();
  explain_cmd->add_option("--lime-kernel-width", ex.kernel_width, "Default 0.75 * sqrt(T)");
  explain_cmd->add_option("--lime-ridge", ex.cfg.lime.ridge)->capture_default_str();

  EvaluateArgs ev;
  auto* evaluate_cmd = app.add_subcommand("evaluate", "Deletion AUC and cross-method agreement");
  evaluate_cmd->add_option("--model", ev.model)->required()->check(CLI::ExistingFile);
  evaluate_cmd->add_option("--tokens", ev.tokens, "Test token file")->required()->check(CLI::ExistingFile);
  evaluate_cmd->add_option("-a,--attributions", ev.attributions, "Attribution files")->required()->check(CLI::ExistingFile);
  evaluate_cmd->add_option("--rnd-draws", ev.rnd_draws)->capture_default_str();
  evaluate_cmd->add_option("--rnd-seed", ev.rnd_seed)->capture_default_str();
  evaluate_cmd->add_option("--curves-csv", ev.curves_csv, "Write deletion curves as CSV");
  evaluate_cmd->add_option("-o,--output", ev.output, "JSON output (default stdout)");

  SsaArgs sa;
  auto* ssa_cmd = app.add_subcommand("ssa", "Similar subsequence accuracy");
  ssa_cmd->add_option("--train-tokens", sa.train_tokens)->required()->check(CLI::ExistingFile);
  ssa_cmd->add_option("--tokens", sa.tokens, "Test token file")->required()->check(CLI::ExistingFile);
  ssa_cmd->add_option("-a,--attributions", sa.attributions, "Label-class attributions")->required()->check(CLI::ExistingFile);
  ssa_cmd->add_option("--vocab-size", sa.vocab_size)->required();
  ssa_cmd->add_option("--num-classes", sa.num_classes);
  ssa_cmd->add_option("--lengths", sa.lengths)->capture_default_str();
  ssa_cmd->add_option("--rnd-seed", sa.rnd_seed)->capture_default_str();
  ssa_cmd->add_flag("--abs", sa.use_abs, "Salient window from |score|");
  ssa_cmd->add_option("-o,--output", sa.output, "JSON output (default stdout)");

  SynthArgs sy;
  auto* synth_cmd = app.add_subcommand("synth", "Generate a planted-motif corpus");
  synth_cmd->add_option("--out-dir", sy.out_dir)->required();
  synth_cmd->add_option("--spec", sy.spec_file, "Synthetic spec JSON")->check(CLI::ExistingFile);
  synth_cmd->add_option("--seed", sy.seed)->capture_default_str();
  synth_cmd->add_option("-n", sy.spec.n)->capture_default_str();
  synth_cmd->add_option("--length", sy.spec.length)->capture_default_str();
  synth_cmd->add_option("--channels", sy.spec.channels)->capture_default_str();
  synth_cmd->add_option("--patch-length", sy.spec.patch_length)->capture_default_str();
  synth_cmd->add_option("--num-classes", sy.spec.num_classes)->capture_default_str();
  synth_cmd->add_option("--noise", sy.spec.noise)->capture_default_str();

  PipelineArgs pa;
  auto* pipeline_cmd = app.add_subcommand("pipeline", "End-to-end run; config file values take precedence over flags");
  pipeline_cmd->add_option("-c,--config", pa.config, "Pipeline config JSON")->check(CLI::ExistingFile);
  pipeline_cmd->add_option("--cache-dir", pa.cache_dir, "Stage cache root (or TSXPLAIN_CACHE_DIR)");
  pipeline_cmd->add_option("--report", pa.report, "Report JSON output");
  pipeline_cmd->add_option("--csv-dir", pa.csv_dir, "Directory for curve CSVs");
  pipeline_cmd->add_option("--seeds", pa.seeds);
  pipeline_cmd->add_option("--methods", pa.methods);
  pipeline_cmd->add_option("--epochs", pa.epochs);
  pipeline_cmd->add_option("-n", pa.n, "Synthetic corpus size");
  pipeline_cmd->add_option("--data-seed", pa.data_seed, "Synthetic corpus seed");
  pipeline_cmd->add_flag("--print", pa.print, "Also print the report");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 1;
  }

  try {
    if (*tokenize_cmd) run_tokenize(tk);
    else if (*train_cmd) run_train(tr);
    else if (*explain_cmd) run_explain(ex);
    else if (*evaluate_cmd) run_evaluate(ev);
    else if (*ssa_cmd) run_ssa(sa);
    else if (*synth_cmd) run_synth(sy);
    else if (*pipeline_cmd) run_pipeline_cmd(pa);
  } catch (const ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
