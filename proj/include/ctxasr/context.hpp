#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "ctxasr/corpus.hpp"
#include "ctxasr/rng.hpp"
#include "ctxasr/text.hpp"

namespace ctxasr {

enum class ContextMode { none, history, biasing, all };
enum class ContextSource { ground_truth, coarse };
enum class Phase { train, infer };

inline std::string to_string(ContextMode m) {
  switch (m) {
    case ContextMode::none: return "none";
    case ContextMode::history: return "history";
    case ContextMode::biasing: return "biasing";
    case ContextMode::all: return "all";
  }
  return "?";
}

inline ContextMode parse_context_mode(std::string_view s) {
  if (s == "none") return ContextMode::none;
  if (s == "history") return ContextMode::history;
  if (s == "biasing") return ContextMode::biasing;
  if (s == "all") return ContextMode::all;
  throw UsageError("unknown context mode \"" + std::string(s) + "\"");
}

inline std::string to_string(ContextSource s) {
  return s == ContextSource::ground_truth ? "ground_truth" : "coarse";
}

inline ContextSource parse_context_source(std::string_view s) {
  if (s == "ground_truth") return ContextSource::ground_truth;
  if (s == "coarse") return ContextSource::coarse;
  throw UsageError("unknown context source \"" + std::string(s) + "\"");
}

struct ContextConfig {
  int k_dh = 1;          // dialogue-history window size
  int k_hw = 3;          // max hotword phrases per utterance
  int l_hw = 3;          // max words per hotword phrase
  int k_dt = 1;          // distractor terms per utterance
  int theta_rare = 2;    // unigram-frequency floor for the rare lexicon
  double p_rare = 0.10;  // rare-lexicon tail fraction
  ContextMode mode = ContextMode::none;
  ContextSource history_source = ContextSource::ground_truth;
  ContextSource hotword_source = ContextSource::ground_truth;
};

struct HistoryWindow {
  std::vector<std::string> entries;  // oldest first
  std::size_t available() const { return entries.size(); }
};

struct RareLexicon {
  std::string language;
  std::vector<std::string> words;                // sorted per the tie rule
  std::map<std::string, long> source_freqs;      // retained for audit
};

struct ContextBundle {
  std::optional<HistoryWindow> history;
  std::vector<std::string> hotwords;
  std::vector<std::string> distractors;
  // Rendered prompt pieces; empty string means "not rendered for this mode".
  std::string history_prompt;
  std::string biasing_prompt;
  std::string full_prompt;  // the context portion spliced into the instruction
};

// Prompt literals (byte-exact).
inline constexpr std::string_view kNoHistoryPrompt =
    "There is no conversation history of this speech.";
inline constexpr std::string_view kBiasingPrefix = "The speech might contain following words: ";
inline constexpr std::string_view kInstructionNoContext = "Transcribe the speech to text.";
inline constexpr std::string_view kInstructionContextPrefix =
    "Transcribe the speech to text. The following context information might help:";
inline constexpr std::string_view kSepToken = "[SEP]";

// ---------------------------------------------------------------------------
// Dialogue history
// ---------------------------------------------------------------------------

// Window of up to k_dh prior-turn transcripts: empty at t=1, all prior turns
// while t <= k_dh, else the last k_dh turns.
inline HistoryWindow dialogue_history(const Dialogue& dialogue, int t, const ContextConfig& cfg) {
  const int n = static_cast<int>(dialogue.utterances.size());
  if (t < 1 || t > n)
    throw DataError("dialogue_history: turn " + std::to_string(t) + " out of range 1.." +
                    std::to_string(n) + " in dialogue " + dialogue.dialogue_id);
  const int available = std::min(t - 1, cfg.k_dh);
  HistoryWindow w;
  w.entries.reserve(static_cast<std::size_t>(available));
  for (int i = t - available; i <= t - 1; ++i) {
    const Utterance& u = dialogue.utterances[static_cast<std::size_t>(i - 1)];
    if (cfg.history_source == ContextSource::coarse) {
      if (!u.coarse_transcript)
        throw DataError("dialogue_history: coarse transcript missing for dialogue " +
                        dialogue.dialogue_id + " turn " + std::to_string(i));
      w.entries.push_back(*u.coarse_transcript);
    } else {
      w.entries.push_back(u.transcript);
    }
  }
  return w;
}

inline std::string history_prompt(const HistoryWindow& w) {
  if (w.entries.empty()) return std::string(kNoHistoryPrompt);
  std::string out = "The previous " + std::to_string(w.available()) +
                    " turn(s) of this speech is: ";
  for (std::size_t i = 0; i < w.entries.size(); ++i) {
    if (i) {
      out += ' ';
      out += kSepToken;
      out += ' ';
    }
    out += w.entries[i];
  }
  out += '.';
  return out;
}

// ---------------------------------------------------------------------------
// Rare-word lexicon and biasing words
// ---------------------------------------------------------------------------

// Unigram counts over the corpus transcripts of one language, threshold at
// theta_rare, then keep the lowest-frequency ceil(p_rare * |vocab|) words.
// Ties sort by (count, word).
inline RareLexicon build_rare_lexicon(const Corpus& corpus, const std::string& language,
                                      const ContextConfig& cfg) {
  std::map<std::string, long> freqs;
  bool saw_language = false;
  for (const auto& d : corpus.dialogues) {
    if (d.language != language) continue;
    saw_language = true;
    for (const auto& u : d.utterances)
      for (auto& tok : tokenize(u.transcript, language)) ++freqs[tok];
  }
  if (!saw_language)
    throw DataError("build_rare_lexicon: no utterances in language " + language);

  std::vector<std::pair<std::string, long>> kept;
  for (const auto& [word, count] : freqs)
    if (count >= cfg.theta_rare) kept.emplace_back(word, count);
  if (kept.empty())
    throw DataError("build_rare_lexicon: no words reach the frequency floor theta_rare=" +
                    std::to_string(cfg.theta_rare) + " for language " + language);

  std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second < b.second;
    return a.first < b.first;
  });
  const auto take = static_cast<std::size_t>(
      std::ceil(cfg.p_rare * static_cast<double>(kept.size())));
  RareLexicon lex;
  lex.language = language;
  for (std::size_t i = 0; i < std::min(take, kept.size()); ++i) {
    lex.words.push_back(kept[i].first);
    lex.source_freqs[kept[i].first] = kept[i].second;
  }
  return lex;
}

// Uniformly draws 1..k_hw contiguous word n-gram phrases; per phrase the
// length is uniform over 1..l_hw clamped to the word count. Duplicates
// permitted.
inline std::vector<std::string> sample_hotwords(const std::string& transcript,
                                                const std::string& language,
                                                const ContextConfig& cfg, Rng& rng) {
  const auto words = tokenize(transcript, language);
  if (words.empty())
    throw DataError("sample_hotwords: transcript tokenizes to zero words");
  const long k = rng.range(1, cfg.k_hw);
  std::vector<std::string> phrases;
  phrases.reserve(static_cast<std::size_t>(k));
  for (long i = 0; i < k; ++i) {
    auto len = static_cast<std::size_t>(rng.range(1, cfg.l_hw));
    len = std::min(len, words.size());
    const std::size_t start = rng.index(words.size() - len + 1);
    phrases.push_back(join_tokens(words, start, start + len, language));
  }
  return phrases;
}

// k_dt rare words sampled without replacement, excluding any word of the
// current transcript; a shortfall returns every remaining candidate.
inline std::vector<std::string> sample_distractors(const RareLexicon& lexicon,
                                                   const std::string& transcript,
                                                   const ContextConfig& cfg, Rng& rng) {
  if (lexicon.words.empty()) throw DataError("sample_distractors: empty lexicon");
  const auto toks = tokenize(transcript, lexicon.language);
  const std::set<std::string> exclude(toks.begin(), toks.end());
  std::vector<std::string> candidates;
  for (const auto& w : lexicon.words)
    if (!exclude.count(w)) candidates.push_back(w);
  const auto want = static_cast<std::size_t>(std::max(cfg.k_dt, 0));
  if (candidates.size() <= want) return candidates;
  std::vector<std::string> out;
  out.reserve(want);
  for (std::size_t i = 0; i < want; ++i) {
    const std::size_t j = i + rng.index(candidates.size() - i);
    std::swap(candidates[i], candidates[j]);
    out.push_back(candidates[i]);
  }
  return out;
}

inline std::string biasing_prompt(const std::vector<std::string>& hotwords,
                                  const std::vector<std::string>& distractors) {
  if (hotwords.empty() && distractors.empty())
    throw DataError("biasing_prompt: both hotwords and distractors are empty");
  std::string out(kBiasingPrefix);
  bool first = true;
  for (const auto* list : {&hotwords, &distractors}) {
    for (const auto& item : *list) {
      if (!first) out += ", ";
      out += item;
      first = false;
    }
  }
  out += '.';
  return out;
}

// ---------------------------------------------------------------------------
// Bundle construction and the chat-template assembly
// ---------------------------------------------------------------------------

inline const std::string& source_text(const Utterance& u, ContextSource src,
                                      std::string_view what) {
  if (src == ContextSource::ground_truth) return u.transcript;
  if (!u.coarse_transcript)
    throw DataError(std::string(what) + ": coarse transcript missing for dialogue " +
                    u.dialogue_id + " turn " + std::to_string(u.turn_index));
  return *u.coarse_transcript;
}

// Builds the context pieces an utterance needs under cfg.mode. The rng must
// be a per-utterance stream so bundles are fixed for a given (corpus, seed).
inline ContextBundle build_bundle(const Dialogue& dialogue, int t, const ContextConfig& cfg,
                                  const RareLexicon* lexicon, Rng& rng) {
  ContextBundle b;
  if (cfg.mode == ContextMode::none) return b;
  const Utterance& u = dialogue.utterances.at(static_cast<std::size_t>(t - 1));

  if (cfg.mode == ContextMode::history || cfg.mode == ContextMode::all) {
    b.history = dialogue_history(dialogue, t, cfg);
    b.history_prompt = history_prompt(*b.history);
  }
  if (cfg.mode == ContextMode::biasing || cfg.mode == ContextMode::all) {
    const std::string& src = source_text(u, cfg.hotword_source, "build_bundle");
    b.hotwords = sample_hotwords(src, u.language, cfg, rng);
    if (cfg.k_dt > 0) {
      if (!lexicon)
        throw DataError("build_bundle: biasing mode with k_dt > 0 needs a rare lexicon for " +
                        u.language);
      b.distractors = sample_distractors(*lexicon, src, cfg, rng);
    }
    b.biasing_prompt = biasing_prompt(b.hotwords, b.distractors);
  }
  switch (cfg.mode) {
    case ContextMode::history: b.full_prompt = b.history_prompt; break;
    case ContextMode::biasing: b.full_prompt = b.biasing_prompt; break;
    case ContextMode::all: b.full_prompt = b.history_prompt + " " + b.biasing_prompt; break;
    default: break;
  }
  return b;
}

// The three text segments around the spliced speech embeddings:
//   [speech] + post_speech_user + target
// with target empty at inference.
struct FullPromptParts {
  std::string pre_speech;        // always empty; speech leads the sequence
  std::string post_speech_user;  // " USER: <PROMPT> ASSISTANT: "
  std::string target;            // "<TRANSCRIPTION>." when training
};

inline FullPromptParts assemble_prompt(const ContextConfig& cfg, const ContextBundle& bundle,
                                       Phase phase,
                                       const std::optional<std::string>& transcription = {}) {
  if (phase == Phase::train && !transcription)
    throw DataError("assemble_prompt: training phase requires a transcription");
  std::string prompt;
  if (cfg.mode == ContextMode::none) {
    prompt = kInstructionNoContext;
  } else {
    if ((cfg.mode == ContextMode::history || cfg.mode == ContextMode::all) &&
        bundle.history_prompt.empty())
      throw DataError("assemble_prompt: mode " + to_string(cfg.mode) +
                      " but the bundle has no rendered history prompt");
    if ((cfg.mode == ContextMode::biasing || cfg.mode == ContextMode::all) &&
        bundle.biasing_prompt.empty())
      throw DataError("assemble_prompt: mode " + to_string(cfg.mode) +
                      " but the bundle has no rendered biasing prompt");
    prompt = std::string(kInstructionContextPrefix) + bundle.full_prompt;
  }
  FullPromptParts parts;
  parts.post_speech_user = " USER: " + prompt + " ASSISTANT: ";
  if (phase == Phase::train) parts.target = *transcription + ".";
  return parts;
}

}  // namespace ctxasr
