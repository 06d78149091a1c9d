#include "probefuse/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <unordered_map>

#include "probefuse/error.hpp"

namespace probefuse {

Metrics metrics_from_confusion(const Confusion& c) {
  Metrics m;
  m.confusion = c;
  if (c.positives() > 0)
    m.recall_positive = static_cast<double>(c.tp) / static_cast<double>(c.positives());
  if (c.negatives() > 0)
    m.recall_negative = static_cast<double>(c.tn) / static_cast<double>(c.negatives());
  if (m.recall_positive && m.recall_negative)
    m.uar = 0.5 * (*m.recall_positive + *m.recall_negative);
  return m;
}

Metrics compute_metrics(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.size() != labels.size()) {
    fail(ErrorKind::LengthMismatch, "metrics: " + std::to_string(predictions.size()) +
                                        " predictions for " + std::to_string(labels.size()) +
                                        " labels");
  }
  Confusion c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool pred_pos = predictions[i] > 0;
    if (labels[i] > 0) {
      if (pred_pos) ++c.tp;
      else ++c.fn;
    } else {
      if (pred_pos) ++c.fp;
      else ++c.tn;
    }
  }
  return metrics_from_confusion(c);
}

Metrics uar(std::span<const int> predictions, std::span<const int> labels) {
  Metrics m = compute_metrics(predictions, labels);
  if (!m.uar) fail(ErrorKind::SingleClass, "UAR undefined: labels contain a single class");
  return m;
}

SplitMetrics subgroup_eval(std::span<const int> predictions, std::span<const int> labels,
                           std::span<const std::string> group_of_sample) {
  if (group_of_sample.size() != labels.size())
    fail(ErrorKind::LengthMismatch, "subgroup_eval: group list length differs from labels");
  SplitMetrics out;
  out.overall = compute_metrics(predictions, labels);
  std::map<std::string, std::pair<std::vector<int>, std::vector<int>>> by_group;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (group_of_sample[i].empty())
      fail(ErrorKind::Validation, "subgroup_eval: sample " + std::to_string(i) + " has no group");
    auto& [p, l] = by_group[group_of_sample[i]];
    p.push_back(predictions[i]);
    l.push_back(labels[i]);
  }
  for (const auto& [group, pl] : by_group) out.subgroups[group] = compute_metrics(pl.first, pl.second);
  return out;
}

MeanStd mean_std(std::span<const double> values) {
  MeanStd r;
  r.n = values.size();
  if (values.empty()) return r;
  double sum = 0.0;
  for (double v : values) sum += v;
  r.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (double v : values) ss += (v - r.mean) * (v - r.mean);
    r.std = std::sqrt(ss / static_cast<double>(values.size() - 1));
  }
  return r;
}

EvalReport aggregate_seeds(std::span<const EvalReport> reports) {
  if (reports.empty()) fail(ErrorKind::Validation, "aggregate_seeds needs at least one report");

  auto shape = [](const EvalReport& r) {
    std::set<std::string> keys;
    for (const auto& [split, m] : r.splits) {
      keys.insert(split);
      for (const auto& [g, gm] : m.subgroups) keys.insert(split + "/" + g);
    }
    return keys;
  };
  const auto keys = shape(reports.front());
  for (const auto& r : reports) {
    if (shape(r) != keys)
      fail(ErrorKind::Heterogeneous, "aggregate_seeds: reports differ in split structure");
  }

  EvalReport out;
  for (const auto& r : reports) out.per_seed.push_back(r.splits);

  for (const std::string& key : keys) {
    const auto slash = key.find('/');
    auto metric_of = [&](const EvalReport& r) -> const Metrics& {
      const SplitMetrics& s = r.splits.at(key.substr(0, slash));
      return slash == std::string::npos ? s.overall : s.subgroups.at(key.substr(slash + 1));
    };
    auto collect = [&](auto member) -> std::optional<MeanStd> {
      std::vector<double> values;
      for (const auto& r : reports) {
        const std::optional<double>& v = metric_of(r).*member;
        if (!v) return std::nullopt;
        values.push_back(*v);
      }
      return mean_std(values);
    };
    AggregateMetrics a;
    a.uar = collect(&Metrics::uar);
    a.recall_positive = collect(&Metrics::recall_positive);
    a.recall_negative = collect(&Metrics::recall_negative);
    out.aggregate.emplace(key, a);
  }
  return out;
}

// Word error rate ------------------------------------------------------------------

double WerCounts::wer() const {
  if (reference_words == 0) return 0.0;
  return static_cast<double>(substitutions + deletions + insertions) /
         static_cast<double>(reference_words);
}

WerCounts& WerCounts::operator+=(const WerCounts& o) {
  substitutions += o.substitutions;
  deletions += o.deletions;
  insertions += o.insertions;
  reference_words += o.reference_words;
  return *this;
}

std::string normalize_text(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    const bool keep = c >= 0x80 || std::isalnum(c) || c == '\'';
    if (!keep) {
      pending_space = true;
      continue;
    }
    if (pending_space && !out.empty()) out.push_back(' ');
    pending_space = false;
    out.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
  }
  return out;
}

std::vector<std::string> tokenize_words(std::string_view normalized) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < normalized.size()) {
    while (i < normalized.size() && std::isspace(static_cast<unsigned char>(normalized[i]))) ++i;
    std::size_t j = i;
    while (j < normalized.size() && !std::isspace(static_cast<unsigned char>(normalized[j]))) ++j;
    if (j > i) words.emplace_back(normalized.substr(i, j - i));
    i = j;
  }
  return words;
}

namespace {

WerCounts align_words(const std::vector<std::string>& ref, const std::vector<std::string>& hyp) {
  // Cells minimise (edits, insertions + deletions) lexicographically, i.e.
  // the cheapest alignment with the most substitutions. That fixes S, and
  // with D - I = |ref| - |hyp| also D and I.
  struct Cell {
    std::size_t edits = 0;
    std::size_t indels = 0;
    bool operator<(const Cell& o) const {
      return edits != o.edits ? edits < o.edits : indels < o.indels;
    }
  };
  const std::size_t n = ref.size();
  const std::size_t m = hyp.size();
  std::vector<Cell> prev(m + 1), cur(m + 1);
  for (std::size_t j = 0; j <= m; ++j) prev[j] = {j, j};
  for (std::size_t i = 1; i <= n; ++i) {
    cur[0] = {i, i};
    for (std::size_t j = 1; j <= m; ++j) {
      const bool same = ref[i - 1] == hyp[j - 1];
      Cell best{prev[j - 1].edits + (same ? 0 : 1), prev[j - 1].indels};
      const Cell del{prev[j].edits + 1, prev[j].indels + 1};
      const Cell ins{cur[j - 1].edits + 1, cur[j - 1].indels + 1};
      if (del < best) best = del;
      if (ins < best) best = ins;
      cur[j] = best;
    }
    std::swap(prev, cur);
  }
  const Cell end = prev[m];
  WerCounts w;
  w.reference_words = n;
  w.substitutions = end.edits - end.indels;
  // D + I = indels, D - I = n - m.
  const long long diff = static_cast<long long>(n) - static_cast<long long>(m);
  w.deletions = static_cast<std::size_t>((static_cast<long long>(end.indels) + diff) / 2);
  w.insertions = static_cast<std::size_t>((static_cast<long long>(end.indels) - diff) / 2);
  return w;
}

}  // namespace

WerCounts wer(std::string_view reference, std::string_view hypothesis, const Normalizer& normalizer) {
  const auto ref = tokenize_words(normalizer(reference));
  if (ref.empty()) fail(ErrorKind::Validation, "WER undefined: empty normalized reference");
  return align_words(ref, tokenize_words(normalizer(hypothesis)));
}

WerReport corpus_wer(std::string source_id,
                     std::span<const std::pair<std::string, std::string>> references,
                     std::span<const std::pair<std::string, std::string>> hypotheses,
                     const Normalizer& normalizer) {
  std::unordered_map<std::string, const std::string*> hyp;
  for (const auto& [id, text] : hypotheses) hyp.emplace(id, &text);
  WerReport report;
  report.source_id = std::move(source_id);
  for (const auto& [id, ref_text] : references) {
    const auto ref = tokenize_words(normalizer(ref_text));
    if (ref.empty()) {
      report.skipped.push_back(id);
      continue;
    }
    auto it = hyp.find(id);
    std::vector<std::string> hyp_words;
    if (it == hyp.end()) report.missing.push_back(id);
    else hyp_words = tokenize_words(normalizer(*it->second));
    const WerCounts w = align_words(ref, hyp_words);
    report.total += w;
    report.per_sample.emplace_back(id, w);
  }
  return report;
}

// Serialization -------------------------------------------------------------------

namespace {

OrderedJson opt(const std::optional<double>& v) {
  return v ? OrderedJson(*v) : OrderedJson(nullptr);
}

OrderedJson opt(const std::optional<MeanStd>& v) {
  if (!v) return nullptr;
  return OrderedJson{{"mean", v->mean}, {"std", v->std}, {"n", v->n}};
}

}  // namespace

OrderedJson to_json(const Metrics& m) {
  OrderedJson j;
  j["tp"] = m.confusion.tp;
  j["fp"] = m.confusion.fp;
  j["tn"] = m.confusion.tn;
  j["fn"] = m.confusion.fn;
  j["recall_positive"] = opt(m.recall_positive);
  j["recall_negative"] = opt(m.recall_negative);
  j["uar"] = opt(m.uar);
  return j;
}

OrderedJson to_json(const SplitMetrics& m) {
  OrderedJson j = to_json(m.overall);
  if (!m.subgroups.empty()) {
    OrderedJson groups = OrderedJson::object();
    for (const auto& [g, gm] : m.subgroups) groups[g] = to_json(gm);
    j["subgroups"] = std::move(groups);
  }
  return j;
}

OrderedJson to_json(const EvalReport& r) {
  OrderedJson j = OrderedJson::object();
  if (!r.splits.empty()) {
    OrderedJson splits = OrderedJson::object();
    for (const auto& [name, m] : r.splits) splits[name] = to_json(m);
    j["splits"] = std::move(splits);
  }
  if (!r.per_seed.empty()) {
    OrderedJson seeds = OrderedJson::array();
    for (const auto& s : r.per_seed) {
      OrderedJson one = OrderedJson::object();
      for (const auto& [name, m] : s) one[name] = to_json(m);
      seeds.push_back(std::move(one));
    }
    j["per_seed"] = std::move(seeds);
  }
  if (!r.aggregate.empty()) {
    OrderedJson agg = OrderedJson::object();
    for (const auto& [key, a] : r.aggregate) {
      agg[key] = {{"uar", opt(a.uar)},
                  {"recall_positive", opt(a.recall_positive)},
                  {"recall_negative", opt(a.recall_negative)}};
    }
    j["aggregate"] = std::move(agg);
  }
  return j;
}

OrderedJson to_json(const WerCounts& w) {
  OrderedJson j;
  j["substitutions"] = w.substitutions;
  j["deletions"] = w.deletions;
  j["insertions"] = w.insertions;
  j["reference_words"] = w.reference_words;
  j["wer"] = w.wer();
  return j;
}

OrderedJson to_json(const WerReport& w) {
  OrderedJson j;
  j["source_id"] = w.source_id;
  j["total"] = to_json(w.total);
  j["samples"] = w.per_sample.size();
  j["skipped_empty_reference"] = w.skipped;
  j["missing_hypothesis"] = w.missing;
  return j;
}

std::string format_percent(const std::optional<double>& v) {
  return v ? fixed(100.0 * *v, 2) : "n/a";
}

std::string format_percent(const std::optional<MeanStd>& v) {
  if (!v) return "n/a";
  return fixed(100.0 * v->mean, 2) + " (+-" + fixed(100.0 * v->std, 2) + ")";
}

}  // namespace probefuse
