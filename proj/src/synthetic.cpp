#include "tsxplain/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "tsxplain/common.hpp"

namespace tsxplain {

namespace {

constexpr double kMotifAmplitude = 2.0;

std::vector<double> bump_shape(std::size_t patch_length) {
  std::vector<double> s(patch_length);
  for (std::size_t t = 0; t < patch_length; ++t) {
    s[t] = std::sin(std::numbers::pi * (static_cast<double>(t) + 0.5) /
                    static_cast<double>(patch_length));
  }
  const double scale =
      static_cast<double>(patch_length) / std::accumulate(s.begin(), s.end(), 0.0);
  for (double& v : s) v *= scale;
  return s;
}

// Patch-level template of one motif on its channel.
std::vector<double> motif_template(const Motif& m, std::size_t patches, std::size_t start) {
  std::vector<double> out(patches, 0.0);
  for (std::size_t k = 0; k < m.levels.size(); ++k) out[start + k] = m.levels[k];
  return out;
}

}  // namespace

void SyntheticSpec::resolve() {
  if (class_balance.empty()) {
    class_balance.assign(static_cast<std::size_t>(std::max(num_classes, 0)),
                         1.0 / std::max(num_classes, 1));
  }
  if (motifs.empty() && num_classes > 0 && patch_length > 0) {
    static const std::vector<std::vector<double>> kPatterns = {
        {1.0, -1.0}, {-1.0, 1.0}, {1.0, 1.0}, {-1.0, -1.0}};
    const std::size_t patches = length / patch_length;
    for (int c = 0; c < num_classes; ++c) {
      Motif m;
      for (double v : kPatterns[static_cast<std::size_t>(c) % kPatterns.size()]) {
        m.levels.push_back(kMotifAmplitude * v);
      }
      m.channel = (static_cast<std::size_t>(c) / kPatterns.size()) % std::max<std::size_t>(channels, 1);
      const std::size_t shift = 2 * (static_cast<std::size_t>(c) / (kPatterns.size() * std::max<std::size_t>(channels, 1)));
      m.window_start = (patches >= 2 ? patches / 2 - 1 : 0) + shift;
      m.window_end = m.window_start + m.levels.size();
      motifs.push_back(std::move(m));
    }
  }
  validate();
}

void SyntheticSpec::validate() const {
  if (n == 0) throw ValidationError("synthetic: n must be positive");
  if (channels == 0) throw ValidationError("synthetic: channels must be positive");
  if (patch_length == 0 || length == 0 || length % patch_length != 0) {
    throw ValidationError("synthetic: length must be a positive multiple of patch_length");
  }
  if (num_classes < 2) throw ValidationError("synthetic: need at least two classes");
  if (!(noise >= 0.0)) throw ValidationError("synthetic: noise must be >= 0");
  if (motifs.size() != static_cast<std::size_t>(num_classes)) {
    throw ValidationError("synthetic: one motif per class required");
  }
  if (class_balance.size() != motifs.size()) {
    throw ValidationError("synthetic: one balance entry per class required");
  }
  double total = 0.0;
  for (double b : class_balance) {
    if (!(b >= 0.0)) throw ValidationError("synthetic: negative class balance");
    total += b;
  }
  if (!(total > 0.0)) throw ValidationError("synthetic: class balance sums to zero");
  const std::size_t patches = length / patch_length;
  for (std::size_t c = 0; c < motifs.size(); ++c) {
    const Motif& m = motifs[c];
    if (m.levels.empty()) throw ValidationError("synthetic: empty motif");
    if (m.channel >= channels) throw ValidationError("synthetic: motif channel out of range");
    if (m.window_end > patches || m.window_start + m.levels.size() > m.window_end) {
      throw ValidationError("synthetic: motif window exceeds series length for class " +
                            std::to_string(c));
    }
  }
  // Class-distinct motifs: no two classes may share a placement with an
  // identical template.
  for (std::size_t a = 0; a < motifs.size(); ++a) {
    for (std::size_t b = a + 1; b < motifs.size(); ++b) {
      const Motif& x = motifs[a];
      const Motif& y = motifs[b];
      if (x.channel != y.channel) continue;
      for (std::size_t sa = x.window_start; sa + x.levels.size() <= x.window_end; ++sa) {
        for (std::size_t sb = y.window_start; sb + y.levels.size() <= y.window_end; ++sb) {
          if (motif_template(x, patches, sa) == motif_template(y, patches, sb)) {
            throw ValidationError("synthetic: motifs of classes " + std::to_string(a) +
                                  " and " + std::to_string(b) + " are not distinct");
          }
        }
      }
    }
  }
}

nlohmann::json to_json(const SyntheticSpec& spec) {
  nlohmann::json motifs = nlohmann::json::array();
  for (const auto& m : spec.motifs) {
    motifs.push_back({{"levels", m.levels},
                      {"channel", m.channel},
                      {"window_start", m.window_start},
                      {"window_end", m.window_end}});
  }
  return {{"n", spec.n},
          {"length", spec.length},
          {"channels", spec.channels},
          {"patch_length", spec.patch_length},
          {"num_classes", spec.num_classes},
          {"motifs", motifs},
          {"noise", spec.noise},
          {"class_balance", spec.class_balance}};
}

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& j) {
  SyntheticSpec s;
  try {
    s.n = j.value("n", s.n);
    s.length = j.value("length", s.length);
    s.channels = j.value("channels", s.channels);
    s.patch_length = j.value("patch_length", s.patch_length);
    s.num_classes = j.value("num_classes", s.num_classes);
    s.noise = j.value("noise", s.noise);
    s.class_balance = j.value("class_balance", s.class_balance);
    if (j.contains("motifs")) {
      for (const auto& m : j.at("motifs")) {
        s.motifs.push_back({m.at("levels").get<std::vector<double>>(),
                            m.value("channel", std::size_t{0}),
                            m.at("window_start").get<std::size_t>(),
                            m.at("window_end").get<std::size_t>()});
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("synthetic spec: ") + e.what());
  }
  return s;
}

SyntheticCorpus generate_synthetic(SyntheticSpec spec, std::uint64_t seed) {
  spec.resolve();
  Rng rng(seed);
  const std::size_t C = spec.motifs.size();

  // Largest-remainder apportionment gives exact class counts.
  const double total = std::accumulate(spec.class_balance.begin(), spec.class_balance.end(), 0.0);
  std::vector<std::size_t> counts(C);
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t c = 0; c < C; ++c) {
    const double exact = static_cast<double>(spec.n) * spec.class_balance[c] / total;
    counts[c] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[c];
    remainders.emplace_back(exact - std::floor(exact), c);
  }
  std::stable_sort(remainders.begin(), remainders.end(),
                   [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < spec.n; ++k, ++assigned) ++counts[remainders[k].second];

  std::vector<int> labels;
  for (std::size_t c = 0; c < C; ++c) labels.insert(labels.end(), counts[c], static_cast<int>(c));
  for (std::size_t i = labels.size(); i > 1; --i) {
    std::swap(labels[i - 1], labels[uniform_index(rng, i)]);
  }

  const auto shape = bump_shape(spec.patch_length);
  SyntheticCorpus corpus;
  corpus.spec = spec;
  const std::size_t n_train = spec.n * 70 / 100;
  const std::size_t n_val = spec.n * 15 / 100;
  const std::size_t width = std::to_string(spec.n).size();
  for (std::size_t i = 0; i < spec.n; ++i) {
    const int label = labels[i];
    const Motif& m = spec.motifs[static_cast<std::size_t>(label)];
    std::string id = std::to_string(i);
    id = "syn-" + std::string(width - id.size(), '0') + id;
    TimeSeries s(id, label, spec.channels, spec.length);
    const std::size_t slots = m.window_end - m.window_start - m.levels.size() + 1;
    const std::size_t start = m.window_start + uniform_index(rng, slots);
    const std::size_t motif_begin = start * spec.patch_length;
    const std::size_t motif_end = motif_begin + m.levels.size() * spec.patch_length;
    for (std::size_t f = 0; f < spec.channels; ++f) {
      auto ch = s.channel(f);
      for (std::size_t t = 0; t < spec.length; ++t) {
        if (f == m.channel && t >= motif_begin && t < motif_end) {
          const std::size_t k = (t - motif_begin) / spec.patch_length;
          ch[t] = m.levels[k] * shape[(t - motif_begin) % spec.patch_length];
        } else {
          ch[t] = spec.noise > 0.0 ? spec.noise * standard_normal(rng) : 0.0;
        }
      }
    }
    SyntheticSplit& split = i < n_train ? corpus.train
                            : i < n_train + n_val ? corpus.val
                                                  : corpus.test;
    split.series.push_back(std::move(s));
    split.motif_start.push_back(start);
  }
  return corpus;
}

int rule_based_label(const TimeSeries& series, const SyntheticSpec& spec) {
  const std::size_t patches = spec.length / spec.patch_length;
  int best = -1;
  double best_dist = std::numeric_limits<double>::infinity();
  for (std::size_t c = 0; c < spec.motifs.size(); ++c) {
    const Motif& m = spec.motifs[c];
    const auto means = paa(series.channel(m.channel), spec.patch_length);
    for (std::size_t s = m.window_start; s + m.levels.size() <= m.window_end; ++s) {
      const auto tmpl = motif_template(m, patches, s);
      double d = 0.0;
      for (std::size_t t = 0; t < patches; ++t) d += (means[t] - tmpl[t]) * (means[t] - tmpl[t]);
      if (d < best_dist) {
        best_dist = d;
        best = static_cast<int>(c);
      }
    }
  }
  return best;
}

std::vector<std::size_t> motif_token_positions(const SyntheticSpec& spec, int label,
                                               std::size_t start) {
  const Motif& m = spec.motifs.at(static_cast<std::size_t>(label));
  std::vector<std::size_t> out;
  for (std::size_t k = 0; k < m.levels.size(); ++k) {
    out.push_back((start + k) * spec.channels + m.channel);
  }
  return out;
}

}  // namespace tsxplain
