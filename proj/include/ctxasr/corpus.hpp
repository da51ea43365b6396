#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "ctxasr/common.hpp"
#include "ctxasr/rng.hpp"
#include "ctxasr/text.hpp"

namespace ctxasr {

// Row-major T x E_a acoustic feature block. Stored as f32 to match the
// on-disk format, so write/load round-trips are bit-exact.
struct FeatureMatrix {
  std::uint32_t frame_count = 0;
  std::uint32_t feature_dim = 0;
  std::vector<float> frames;

  bool operator==(const FeatureMatrix&) const = default;
};

struct Utterance {
  std::string dialogue_id;
  int turn_index = 0;  // 1-based
  std::string language;
  std::string transcript;
  std::optional<std::string> coarse_transcript;
  FeatureMatrix features;

  bool operator==(const Utterance&) const = default;
};

struct Dialogue {
  std::string dialogue_id;
  std::string language;
  std::vector<Utterance> utterances;  // ordered by turn_index, 1..N

  bool operator==(const Dialogue&) const = default;
};

struct Corpus {
  std::vector<Dialogue> dialogues;
  std::string split;  // train | val | test

  std::size_t total_utterances() const {
    std::size_t n = 0;
    for (const auto& d : dialogues) n += d.utterances.size();
    return n;
  }

  bool operator==(const Corpus&) const = default;
};

// ---------------------------------------------------------------------------
// Feature files: magic "CAFM", version u32, T u32, E_a u32, then T*E_a
// little-endian f32, frame-major.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kFeatureFormatVersion = 1;

inline std::string encode_feature_file(const FeatureMatrix& m) {
  std::string buf;
  buf += "CAFM";
  put_u32(buf, kFeatureFormatVersion);
  put_u32(buf, m.frame_count);
  put_u32(buf, m.feature_dim);
  for (float v : m.frames) put_f32(buf, v);
  return buf;
}

inline FeatureMatrix decode_feature_file(std::string_view buf, const std::string& origin) {
  ByteReader r(buf);
  if (buf.size() < 4 || r.raw(4) != "CAFM")
    throw DataError(origin + ": bad feature-file magic (want CAFM)");
  const std::uint32_t version = r.u32();
  if (version != kFeatureFormatVersion)
    throw DataError(origin + ": unsupported feature-file version " + std::to_string(version));
  FeatureMatrix m;
  m.frame_count = r.u32();
  m.feature_dim = r.u32();
  if (m.frame_count == 0 || m.feature_dim == 0)
    throw DataError(origin + ": empty feature matrix");
  const std::size_t n = std::size_t{m.frame_count} * m.feature_dim;
  if (r.remaining() != n * 4)
    throw DataError(origin + ": payload size mismatch, header says " + std::to_string(n) +
                    " floats but file has " + std::to_string(r.remaining() / 4));
  m.frames.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    m.frames[i] = r.f32();
    if (!std::isfinite(m.frames[i]))
      throw DataError(origin + ": non-finite feature value at index " + std::to_string(i));
  }
  return m;
}

inline FeatureMatrix load_feature_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open feature file " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_feature_file(buf, path.string());
}

inline void save_feature_file(const std::filesystem::path& path, const FeatureMatrix& m) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write feature file " + path.string());
  const std::string buf = encode_feature_file(m);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

// ---------------------------------------------------------------------------
// Manifest: UTF-8 JSONL, one object per utterance.
// ---------------------------------------------------------------------------

inline Corpus load_corpus(const std::filesystem::path& manifest_path, std::string split) {
  std::ifstream in(manifest_path);
  if (!in) throw DataError("cannot open manifest " + manifest_path.string());
  const auto base_dir = manifest_path.parent_path();

  struct Row {
    Utterance utt;
    std::size_t line_no;
  };
  std::vector<std::string> dialogue_order;
  std::map<std::string, std::vector<Row>> by_dialogue;

  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::string where = manifest_path.string() + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": malformed JSON: " + e.what());
    }
    auto need = [&](const char* key) -> const nlohmann::json& {
      if (!j.contains(key)) throw DataError(where + ": missing key \"" + key + "\"");
      return j.at(key);
    };
    Utterance u;
    try {
      u.dialogue_id = need("dialogue_id").get<std::string>();
      u.turn_index = need("turn_index").get<int>();
      u.language = need("language").get<std::string>();
      u.transcript = need("transcript").get<std::string>();
      const auto& coarse = need("coarse_transcript");
      if (!coarse.is_null()) u.coarse_transcript = coarse.get<std::string>();
      const std::string rel = need("features_path").get<std::string>();
      u.features = load_feature_file(base_dir / rel);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": bad field type: " + e.what());
    }
    if (u.turn_index < 1) throw DataError(where + ": turn_index must be >= 1");
    if (!is_known_language(u.language))
      throw DataError(where + ": unknown language code \"" + u.language + "\"");
    if (trim(u.transcript).empty()) throw DataError(where + ": empty transcript");

    auto& rows = by_dialogue[u.dialogue_id];
    if (rows.empty()) dialogue_order.push_back(u.dialogue_id);
    for (const auto& r : rows)
      if (r.utt.turn_index == u.turn_index)
        throw DataError(where + ": duplicate (dialogue_id, turn_index) = (" + u.dialogue_id +
                        ", " + std::to_string(u.turn_index) + ")");
    rows.push_back({std::move(u), line_no});
  }

  Corpus corpus;
  corpus.split = std::move(split);
  for (const auto& id : dialogue_order) {
    auto& rows = by_dialogue[id];
    std::sort(rows.begin(), rows.end(),
              [](const Row& a, const Row& b) { return a.utt.turn_index < b.utt.turn_index; });
    Dialogue d;
    d.dialogue_id = id;
    d.language = rows.front().utt.language;
    for (std::size_t i = 0; i < rows.size(); ++i) {
      auto& u = rows[i].utt;
      if (u.turn_index != static_cast<int>(i) + 1)
        throw DataError("dialogue " + id + ": non-consecutive turns (expected turn " +
                        std::to_string(i + 1) + ", found " + std::to_string(u.turn_index) + ")");
      if (u.language != d.language)
        throw DataError("dialogue " + id + ": mixed languages " + d.language + " and " +
                        u.language);
      d.utterances.push_back(std::move(u));
    }
    corpus.dialogues.push_back(std::move(d));
  }
  return corpus;
}

inline std::string sanitize_for_path(std::string_view s) {
  std::string out;
  for (char c : s)
    out += (std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_') ? c : '_';
  return out;
}

// Writes <dir>/<split>.jsonl plus sidecar features under <dir>/features/.
// Returns the manifest path.
inline std::filesystem::path write_corpus(const Corpus& corpus, const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  fs::create_directories(dir / "features");
  const fs::path manifest = dir / (corpus.split + ".jsonl");
  std::ofstream out(manifest, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write manifest " + manifest.string());
  for (const auto& d : corpus.dialogues) {
    for (const auto& u : d.utterances) {
      const std::string rel = "features/" + sanitize_for_path(u.dialogue_id) + "_t" +
                              std::to_string(u.turn_index) + ".fbin";
      save_feature_file(dir / rel, u.features);
      nlohmann::json j;
      j["dialogue_id"] = u.dialogue_id;
      j["turn_index"] = u.turn_index;
      j["language"] = u.language;
      j["transcript"] = u.transcript;
      if (u.coarse_transcript)
        j["coarse_transcript"] = *u.coarse_transcript;
      else
        j["coarse_transcript"] = nullptr;
      j["features_path"] = rel;
      out << j.dump() << "\n";
    }
  }
  return manifest;
}

// ---------------------------------------------------------------------------
// Synthetic corpus generation. Transcripts are toy-vocabulary word sequences;
// features are per-token signature vectors repeated frames_per_token times
// plus Gaussian noise, so token identity is recoverable from features alone.
// ---------------------------------------------------------------------------

struct SynthSpec {
  std::vector<std::string> languages = {"en-us", "de"};
  int dialogues_per_language = 4;
  int min_turns = 3;
  int max_turns = 5;
  int vocab_size = 50;  // V_toy
  int min_tokens = 2;
  int max_tokens = 4;
  int feature_dim = 8;  // E_a
  int frames_per_token = 4;
  double feature_noise = 0.05;      // sigma
  double coarse_corruption = 0.0;   // rho
  std::string split = "train";
};

namespace detail {

// Deterministic toy word surface for index k. Word-delimited languages get
// syllable strings; ja/ko/th get strings of scalars from their own scripts.
inline std::string toy_word(std::string_view lang, int k) {
  if (is_char_level_language(lang)) {
    std::uint32_t base = 0x3042;  // hiragana
    std::uint32_t range = 80;
    if (lang == "ko") {
      base = 0xac00;
      range = 512;
    } else if (lang == "th") {
      base = 0x0e01;
      range = 40;
    }
    std::string w;
    int v = k;
    do {
      append_utf8(w, base + static_cast<std::uint32_t>(v % static_cast<int>(range)));
      v /= static_cast<int>(range);
    } while (v > 0);
    return w;
  }
  static const char* syllables[] = {"ba", "de", "ki", "mo", "lu", "ra", "so",
                                    "ti", "ne", "ga", "po", "vu", "za", "fe",
                                    "hi", "ku", "wa", "ye", "ob", "ax"};
  constexpr int n = 20;
  std::string w;
  int v = k;
  do {
    w += syllables[v % n];
    v /= n;
  } while (v > 0);
  return w;
}

inline std::vector<std::string> toy_vocabulary(std::string_view lang, int vocab_size) {
  std::vector<std::string> words;
  words.reserve(static_cast<std::size_t>(vocab_size));
  for (int k = 0; k < vocab_size; ++k) words.push_back(toy_word(lang, k));
  return words;
}

// Zipf-ish cumulative weights (w_k = 1/(k+1)) over the vocabulary.
inline std::vector<double> zipf_cdf(int vocab_size) {
  std::vector<double> cdf(static_cast<std::size_t>(vocab_size));
  double acc = 0;
  for (int k = 0; k < vocab_size; ++k) {
    acc += 1.0 / (k + 1);
    cdf[static_cast<std::size_t>(k)] = acc;
  }
  for (auto& v : cdf) v /= acc;
  return cdf;
}

inline int draw_zipf(const std::vector<double>& cdf, Rng& rng) {
  const double u = rng.uniform01();
  auto it = std::lower_bound(cdf.begin(), cdf.end(), u);
  if (it == cdf.end()) --it;
  return static_cast<int>(it - cdf.begin());
}

}  // namespace detail

// Fixed per (seed, language, word) signature vector in R^{feature_dim}.
inline std::vector<double> token_signature(std::uint64_t seed, std::string_view lang,
                                           std::string_view word, int feature_dim) {
  Rng rng(mix_seed(seed, "sig", lang, fnv1a64(word)));
  std::vector<double> sig(static_cast<std::size_t>(feature_dim));
  for (auto& v : sig) v = rng.normal();
  return sig;
}

inline FeatureMatrix synth_features(std::uint64_t seed, std::string_view lang,
                                    const std::vector<std::string>& tokens,
                                    const SynthSpec& spec, Rng& noise_rng) {
  FeatureMatrix m;
  m.feature_dim = static_cast<std::uint32_t>(spec.feature_dim);
  m.frame_count = static_cast<std::uint32_t>(tokens.size() * spec.frames_per_token);
  m.frames.reserve(std::size_t{m.frame_count} * m.feature_dim);
  for (const auto& tok : tokens) {
    const auto sig = token_signature(seed, lang, tok, spec.feature_dim);
    for (int f = 0; f < spec.frames_per_token; ++f)
      for (int e = 0; e < spec.feature_dim; ++e)
        m.frames.push_back(static_cast<float>(
            sig[static_cast<std::size_t>(e)] + spec.feature_noise * noise_rng.normal()));
  }
  return m;
}

inline Corpus synth_corpus(const SynthSpec& spec, std::uint64_t seed) {
  if (spec.vocab_size < 1) throw DataError("synth_corpus: empty vocabulary");
  if (spec.min_turns < 1 || spec.max_turns < spec.min_turns)
    throw DataError("synth_corpus: zero turns (bad turns range)");
  if (spec.min_tokens < 1 || spec.max_tokens < spec.min_tokens)
    throw DataError("synth_corpus: bad tokens-per-utterance range");
  if (spec.languages.empty()) throw DataError("synth_corpus: no languages");
  for (const auto& lang : spec.languages)
    if (!is_known_language(lang)) throw DataError("synth_corpus: unknown language " + lang);

  Corpus corpus;
  corpus.split = spec.split;
  const auto cdf = detail::zipf_cdf(spec.vocab_size);
  for (const auto& lang : spec.languages) {
    const auto vocab = detail::toy_vocabulary(lang, spec.vocab_size);
    const bool char_level = is_char_level_language(lang);
    for (int di = 0; di < spec.dialogues_per_language; ++di) {
      Dialogue d;
      d.language = lang;
      {
        char idbuf[16];
        std::snprintf(idbuf, sizeof(idbuf), "d%04d", di);
        d.dialogue_id = lang + "-" + spec.split + "-" + idbuf;
      }
      Rng rng(mix_seed(seed, "dialogue", lang + "/" + spec.split,
                       static_cast<std::uint64_t>(di)));
      const int turns = static_cast<int>(rng.range(spec.min_turns, spec.max_turns));
      for (int t = 1; t <= turns; ++t) {
        Utterance u;
        u.dialogue_id = d.dialogue_id;
        u.turn_index = t;
        u.language = lang;
        const int n_tokens = static_cast<int>(rng.range(spec.min_tokens, spec.max_tokens));
        std::vector<std::string> tokens;
        tokens.reserve(static_cast<std::size_t>(n_tokens));
        for (int k = 0; k < n_tokens; ++k)
          tokens.push_back(vocab[static_cast<std::size_t>(detail::draw_zipf(cdf, rng))]);
        for (std::size_t k = 0; k < tokens.size(); ++k) {
          if (k && !char_level) u.transcript += ' ';
          u.transcript += tokens[k];
        }
        // Coarse transcript: each token independently resampled with prob rho.
        std::string coarse;
        for (std::size_t k = 0; k < tokens.size(); ++k) {
          std::string tok = tokens[k];
          if (rng.uniform01() < spec.coarse_corruption)
            tok = vocab[rng.index(vocab.size())];
          if (k && !char_level) coarse += ' ';
          coarse += tok;
        }
        u.coarse_transcript = coarse;
        u.features = synth_features(seed, lang, tokens, spec, rng);
        d.utterances.push_back(std::move(u));
      }
      corpus.dialogues.push_back(std::move(d));
    }
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// Deterministic batching. Batches hold (dialogue, utterance) index pairs into
// the corpus; every utterance appears exactly once per epoch and the final
// short batch is kept.
// ---------------------------------------------------------------------------

struct Batch {
  std::vector<std::pair<std::size_t, std::size_t>> items;
  std::size_t batch_index = 0;
};

inline std::vector<Batch> batch_iter(const Corpus& corpus, std::size_t batch_size,
                                     std::uint64_t seed, bool shuffle) {
  if (batch_size < 1) throw DataError("batch_iter: batch_size must be >= 1");
  std::vector<std::pair<std::size_t, std::size_t>> refs;
  for (std::size_t di = 0; di < corpus.dialogues.size(); ++di)
    for (std::size_t ui = 0; ui < corpus.dialogues[di].utterances.size(); ++ui)
      refs.emplace_back(di, ui);
  if (shuffle) {
    Rng rng(mix_seed(seed, "batch-shuffle"));
    rng.shuffle(refs);
  }
  std::vector<Batch> batches;
  for (std::size_t i = 0; i < refs.size(); i += batch_size) {
    Batch b;
    b.batch_index = batches.size();
    const std::size_t end = std::min(i + batch_size, refs.size());
    b.items.assign(refs.begin() + static_cast<std::ptrdiff_t>(i),
                   refs.begin() + static_cast<std::ptrdiff_t>(end));
    batches.push_back(std::move(b));
  }
  return batches;
}

}  // namespace ctxasr
