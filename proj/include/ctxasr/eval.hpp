#pragma once

#include <algorithm>
#include <cstdint>
#include <iostream>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "ctxasr/trainer.hpp"

namespace ctxasr {

struct EditCounts {
  long substitutions = 0;
  long deletions = 0;
  long insertions = 0;
  long reference_length = 0;

  long total_edits() const { return substitutions + deletions + insertions; }
};

// Minimum-edit alignment with unit costs. The total distance is unique; the
// S/D/I split is pinned by the backtrace preference substitution > insertion
// > deletion.
inline EditCounts edit_alignment(std::span<const std::string> ref,
                                 std::span<const std::string> hyp) {
  const std::size_t r = ref.size(), h = hyp.size();
  std::vector<long> d((r + 1) * (h + 1), 0);
  auto at = [&](std::size_t i, std::size_t j) -> long& { return d[i * (h + 1) + j]; };
  for (std::size_t i = 0; i <= r; ++i) at(i, 0) = static_cast<long>(i);
  for (std::size_t j = 0; j <= h; ++j) at(0, j) = static_cast<long>(j);
  for (std::size_t i = 1; i <= r; ++i)
    for (std::size_t j = 1; j <= h; ++j) {
      const long sub = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      const long ins = at(i, j - 1) + 1;
      const long del = at(i - 1, j) + 1;
      at(i, j) = std::min({sub, ins, del});
    }

  EditCounts c;
  c.reference_length = static_cast<long>(r);
  std::size_t i = r, j = h;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0) {
      const long sub = at(i - 1, j - 1) + (ref[i - 1] == hyp[j - 1] ? 0 : 1);
      if (at(i, j) == sub) {
        if (ref[i - 1] != hyp[j - 1]) ++c.substitutions;
        --i;
        --j;
        continue;
      }
      if (at(i, j) == at(i, j - 1) + 1) {
        ++c.insertions;
        --j;
        continue;
      }
      ++c.deletions;
      --i;
      continue;
    }
    if (j > 0) {
      ++c.insertions;
      --j;
    } else {
      ++c.deletions;
      --i;
    }
  }
  return c;
}

inline double error_rate(const EditCounts& c) {
  if (c.reference_length < 1)
    throw DataError("error_rate: undefined for empty reference (N=0)");
  return static_cast<double>(c.total_edits()) / static_cast<double>(c.reference_length);
}

enum class Metric { WER, CER };

inline std::string to_string(Metric m) { return m == Metric::WER ? "WER" : "CER"; }

// CER for the languages without clear word boundaries, WER otherwise.
inline Metric metric_for_language(const std::string& lang) {
  if (!is_known_language(lang))
    throw DataError("metric_for_language: unknown language code \"" + lang + "\"");
  return is_char_level_language(lang) ? Metric::CER : Metric::WER;
}

// Scoring token stream. WER: whitespace tokens (outer punctuation stripped
// under normalization). CER: Unicode scalars with whitespace removed.
// Normalization = lowercase for Latin-script languages; inputs are assumed
// NFC-normalized.
inline std::vector<std::string> scoring_tokens(std::string_view text, const std::string& lang,
                                               Metric metric, bool normalize) {
  std::string prepared(text);
  if (normalize && is_latin_script_language(lang)) prepared = to_lower(prepared);
  std::vector<std::string> out;
  if (metric == Metric::CER) {
    for (auto cp : decode_utf8(prepared)) {
      if (is_space_cp(cp)) continue;
      std::string t;
      append_utf8(t, cp);
      out.push_back(std::move(t));
    }
    return out;
  }
  for (auto& tok : ToyTokenizer::split_whitespace(prepared)) {
    if (normalize) {
      std::string stripped = strip_outer_punct(tok);
      if (!stripped.empty()) out.push_back(std::move(stripped));
    } else {
      out.push_back(std::move(tok));
    }
  }
  return out;
}

struct LanguageRow {
  std::string language;
  Metric metric = Metric::WER;
  double rate = 0.0;
  long n_utts = 0;
  EditCounts counts;
};

struct EvalReport {
  std::string split;
  std::vector<LanguageRow> rows;  // canonical language order
  double average = 0.0;           // unweighted mean of per-language rates
  long skipped_empty_refs = 0;
  bool normalized = true;
};

struct EvalOptions {
  int beam = 2;
  int max_new = 16;
  bool normalize = true;
};

// Decode every utterance with the inference template, strip the trailing
// period token, and score against the ground truth with the language's
// metric. Contexts come from the sources in ctx_cfg (coarse transcripts at
// inference time unless overridden for ablations).
inline EvalReport evaluate(const TrainedModel& tm, const Corpus& corpus,
                           const ContextConfig& ctx_cfg,
                           const std::map<std::string, RareLexicon>& lexicons,
                           const EvalOptions& opts = {}, std::ostream* warnings = nullptr) {
  struct Agg {
    EditCounts counts;
    long n_utts = 0;
  };
  std::map<std::string, Agg> per_language;

  std::vector<std::size_t> order(corpus.dialogues.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return corpus.dialogues[a].dialogue_id < corpus.dialogues[b].dialogue_id;
  });

  EvalReport report;
  report.split = corpus.split;
  report.normalized = opts.normalize;
  const std::uint32_t period = tm.model.tokenizer().period_id();
  for (std::size_t di : order) {
    const auto& d = corpus.dialogues[di];
    const RareLexicon* lex = nullptr;
    if (auto it = lexicons.find(d.language); it != lexicons.end()) lex = &it->second;
    const Metric metric = metric_for_language(d.language);
    for (std::size_t ui = 0; ui < d.utterances.size(); ++ui) {
      const Utterance& u = d.utterances[ui];
      Rng rng(mix_seed(tm.cfg.seed, "ctx", d.dialogue_id, static_cast<std::uint64_t>(ui + 1)));
      const ContextBundle bundle =
          build_bundle(d, static_cast<int>(ui + 1), ctx_cfg, lex, rng);
      const Tensor prefix = inference_prefix(tm.model, u, bundle, ctx_cfg);
      auto ids = beam_decode(tm.model.decoder(), tm.model.embedder(), prefix, opts.beam,
                             opts.max_new, ToyTokenizer::kEos);
      if (!ids.empty() && ids.back() == period) ids.pop_back();
      const std::string hyp_text = tm.model.tokenizer().decode(ids, u.language);

      const auto ref_toks = scoring_tokens(u.transcript, u.language, metric, opts.normalize);
      if (ref_toks.empty()) {
        ++report.skipped_empty_refs;
        if (warnings)
          (*warnings) << "warning: empty reference after normalization, skipping dialogue "
                      << d.dialogue_id << " turn " << (ui + 1) << "\n";
        continue;
      }
      const auto hyp_toks = scoring_tokens(hyp_text, u.language, metric, opts.normalize);
      const EditCounts c = edit_alignment(ref_toks, hyp_toks);
      auto& agg = per_language[d.language];
      agg.counts.substitutions += c.substitutions;
      agg.counts.deletions += c.deletions;
      agg.counts.insertions += c.insertions;
      agg.counts.reference_length += c.reference_length;
      ++agg.n_utts;
    }
  }

  double rate_sum = 0;
  for (const auto& lang : known_languages()) {
    auto it = per_language.find(lang);
    if (it == per_language.end()) continue;
    LanguageRow row;
    row.language = lang;
    row.metric = metric_for_language(lang);
    row.counts = it->second.counts;
    row.n_utts = it->second.n_utts;
    row.rate = error_rate(row.counts);
    rate_sum += row.rate;
    report.rows.push_back(std::move(row));
  }
  if (!report.rows.empty()) report.average = rate_sum / static_cast<double>(report.rows.size());
  return report;
}

// ---------------------------------------------------------------------------
// Report rendering: TSV, aligned table, JSON; plus the multi-run grid.
// ---------------------------------------------------------------------------

inline std::string report_tsv(const EvalReport& r) {
  std::string out = "language\tmetric\terror_rate\tn_utts\n";
  for (const auto& row : r.rows)
    out += row.language + '\t' + to_string(row.metric) + '\t' + fmt_double(row.rate) + '\t' +
           std::to_string(row.n_utts) + '\n';
  out += "Avg.\t-\t" + fmt_double(r.average) + "\t" +
         std::to_string([&] {
           long n = 0;
           for (const auto& row : r.rows) n += row.n_utts;
           return n;
         }()) +
         '\n';
  return out;
}

inline std::string report_table(const EvalReport& r) {
  char line[160];
  std::string out;
  std::snprintf(line, sizeof(line), "%-12s %-6s %10s %8s\n", "language", "metric", "error(%)",
                "n_utts");
  out += line;
  out += std::string(39, '-') + "\n";
  for (const auto& row : r.rows) {
    std::snprintf(line, sizeof(line), "%-12s %-6s %10.2f %8ld\n", row.language.c_str(),
                  to_string(row.metric).c_str(), 100.0 * row.rate, row.n_utts);
    out += line;
  }
  out += std::string(39, '-') + "\n";
  std::snprintf(line, sizeof(line), "%-12s %-6s %10.2f\n", "Avg.", "-", 100.0 * r.average);
  out += line;
  return out;
}

inline nlohmann::json report_json(const EvalReport& r) {
  nlohmann::json j;
  j["split"] = r.split;
  j["normalized"] = r.normalized;
  j["skipped_empty_refs"] = r.skipped_empty_refs;
  j["average"] = r.average;
  j["rows"] = nlohmann::json::array();
  for (const auto& row : r.rows) {
    nlohmann::json rj;
    rj["language"] = row.language;
    rj["metric"] = to_string(row.metric);
    rj["error_rate"] = row.rate;
    rj["n_utts"] = row.n_utts;
    rj["substitutions"] = row.counts.substitutions;
    rj["deletions"] = row.counts.deletions;
    rj["insertions"] = row.counts.insertions;
    rj["reference_length"] = row.counts.reference_length;
    j["rows"].push_back(std::move(rj));
  }
  return j;
}

inline EvalReport report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.split = j.value("split", "");
  r.normalized = j.value("normalized", true);
  r.skipped_empty_refs = j.value("skipped_empty_refs", 0L);
  r.average = j.at("average").get<double>();
  for (const auto& rj : j.at("rows")) {
    LanguageRow row;
    row.language = rj.at("language").get<std::string>();
    row.metric = rj.at("metric").get<std::string>() == "CER" ? Metric::CER : Metric::WER;
    row.rate = rj.at("error_rate").get<double>();
    row.n_utts = rj.at("n_utts").get<long>();
    row.counts.substitutions = rj.value("substitutions", 0L);
    row.counts.deletions = rj.value("deletions", 0L);
    row.counts.insertions = rj.value("insertions", 0L);
    row.counts.reference_length = rj.value("reference_length", 0L);
    r.rows.push_back(std::move(row));
  }
  return r;
}

// Side-by-side comparison of several runs; deltas are against the first
// column, in error-rate percent.
inline std::string report_grid(const std::vector<std::pair<std::string, EvalReport>>& runs) {
  if (runs.empty()) throw UsageError("report_grid: no reports given");
  std::vector<std::string> langs;
  for (const auto& lang : known_languages()) {
    for (const auto& [label, rep] : runs) {
      bool present = false;
      for (const auto& row : rep.rows) present = present || row.language == lang;
      if (present) {
        langs.push_back(lang);
        break;
      }
    }
  }
  auto find_rate = [](const EvalReport& r, const std::string& lang) -> const LanguageRow* {
    for (const auto& row : r.rows)
      if (row.language == lang) return &row;
    return nullptr;
  };

  const int label_w = 18;
  char cell[64];
  std::string out = "language     metric";
  for (const auto& [label, rep] : runs) {
    std::snprintf(cell, sizeof(cell), " %*s", label_w,
                  label.size() > 17 ? label.substr(0, 17).c_str() : label.c_str());
    out += cell;
  }
  out += '\n';
  for (const auto& lang : langs) {
    Metric metric = metric_for_language(lang);
    std::snprintf(cell, sizeof(cell), "%-12s %-6s", lang.c_str(), to_string(metric).c_str());
    out += cell;
    const LanguageRow* base = find_rate(runs[0].second, lang);
    for (std::size_t c = 0; c < runs.size(); ++c) {
      const LanguageRow* row = find_rate(runs[c].second, lang);
      if (!row) {
        std::snprintf(cell, sizeof(cell), " %*s", label_w, "-");
      } else if (c == 0 || !base) {
        std::snprintf(cell, sizeof(cell), " %*.2f", label_w, 100.0 * row->rate);
      } else {
        char tmp[48];
        std::snprintf(tmp, sizeof(tmp), "%.2f (%+.2f)", 100.0 * row->rate,
                      100.0 * (row->rate - base->rate));
        std::snprintf(cell, sizeof(cell), " %*s", label_w, tmp);
      }
      out += cell;
    }
    out += '\n';
  }
  std::snprintf(cell, sizeof(cell), "%-12s %-6s", "Avg.", "-");
  out += cell;
  for (std::size_t c = 0; c < runs.size(); ++c) {
    if (c == 0) {
      std::snprintf(cell, sizeof(cell), " %*.2f", label_w, 100.0 * runs[c].second.average);
    } else {
      char tmp[48];
      std::snprintf(tmp, sizeof(tmp), "%.2f (%+.2f)", 100.0 * runs[c].second.average,
                    100.0 * (runs[c].second.average - runs[0].second.average));
      std::snprintf(cell, sizeof(cell), " %*s", label_w, tmp);
    }
    out += cell;
  }
  out += '\n';
  return out;
}

}  // namespace ctxasr
