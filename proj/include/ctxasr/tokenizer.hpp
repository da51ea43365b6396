#pragma once

#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "ctxasr/common.hpp"
#include "ctxasr/context.hpp"
#include "ctxasr/corpus.hpp"
#include "ctxasr/text.hpp"

namespace ctxasr {

// Corpus-built tokenizer for the frozen-backbone stand-ins. Word-delimited
// languages split on whitespace (with a trailing-punctuation fallback for
// out-of-vocabulary forms like "dog," so biasing lists keep their word
// identity); ja/ko/th tokenize every Unicode scalar, including spaces, so
// decode(encode(s)) is exact.
class ToyTokenizer {
 public:
  static constexpr std::uint32_t kPad = 0;
  static constexpr std::uint32_t kBos = 1;
  static constexpr std::uint32_t kEos = 2;
  static constexpr std::uint32_t kUnk = 3;

  static ToyTokenizer build(const Corpus& corpus) {
    std::set<std::string> vocab;
    bool any_word_lang = false, any_char_lang = false;
    auto add_text = [&](std::string_view text, std::string_view lang) {
      if (is_char_level_language(lang)) {
        for (auto cp : decode_utf8(text)) {
          std::string t;
          append_utf8(t, cp);
          vocab.insert(std::move(t));
        }
      } else {
        for (auto& t : split_whitespace(text)) vocab.insert(std::move(t));
      }
    };
    for (const auto& d : corpus.dialogues) {
      (is_char_level_language(d.language) ? any_char_lang : any_word_lang) = true;
      for (const auto& u : d.utterances) {
        add_text(u.transcript, d.language);
        if (u.coarse_transcript) add_text(*u.coarse_transcript, d.language);
      }
    }
    // Prompt-template literals must be embeddable in every mode the corpus uses.
    std::vector<std::string> templates = {
        std::string(kNoHistoryPrompt),
        "The previous turn(s) of this speech is:",
        std::string(kBiasingPrefix),
        std::string(kInstructionNoContext),
        std::string(kInstructionContextPrefix),
        "USER:",
        "ASSISTANT:",
        std::string(kSepToken),
        "0 1 2 3 4 5 6 7 8 9 . ,",
    };
    for (const auto& t : templates) {
      if (any_word_lang) add_text(t, "en-us");
      if (any_char_lang) add_text(t, "ja");
    }
    if (any_char_lang) vocab.insert(" ");

    ToyTokenizer tok;
    tok.tokens_ = {"<pad>", "<s>", "</s>", "<unk>"};
    for (const auto& w : vocab) tok.tokens_.push_back(w);
    for (std::uint32_t i = 0; i < tok.tokens_.size(); ++i) tok.ids_[tok.tokens_[i]] = i;
    return tok;
  }

  std::size_t vocab_size() const { return tokens_.size(); }

  const std::vector<std::string>& tokens() const { return tokens_; }

  std::uint32_t id_of(std::string_view token) const {
    auto it = ids_.find(std::string(token));
    return it == ids_.end() ? kUnk : it->second;
  }

  std::uint32_t period_id() const { return id_of("."); }

  std::vector<std::uint32_t> encode(std::string_view text, std::string_view lang) const {
    std::vector<std::uint32_t> ids;
    if (is_char_level_language(lang)) {
      for (auto cp : decode_utf8(text)) {
        std::string t;
        append_utf8(t, cp);
        ids.push_back(id_of(t));
      }
      return ids;
    }
    for (const auto& w : split_whitespace(text)) encode_word(w, ids);
    return ids;
  }

  // Joins with spaces (word mode) or concatenates (char mode). Specials are
  // skipped except <unk>, which renders literally.
  std::string decode(std::span<const std::uint32_t> ids, std::string_view lang) const {
    const bool char_level = is_char_level_language(lang);
    std::string out;
    bool first = true;
    for (auto id : ids) {
      if (id == kPad || id == kBos || id == kEos) continue;
      if (id >= tokens_.size())
        throw DataError("decode: token id " + std::to_string(id) + " out of range");
      if (!char_level && !first) out += ' ';
      out += tokens_[id];
      first = false;
    }
    return out;
  }

  std::string serialize() const {
    std::string buf;
    put_u32(buf, static_cast<std::uint32_t>(tokens_.size()));
    for (const auto& t : tokens_) put_str(buf, t);
    return buf;
  }

  static ToyTokenizer deserialize(ByteReader& r) {
    ToyTokenizer tok;
    const std::uint32_t n = r.u32();
    tok.tokens_.reserve(n);
    for (std::uint32_t i = 0; i < n; ++i) tok.tokens_.push_back(r.str());
    if (tok.tokens_.size() < 4) throw DataError("tokenizer payload too small");
    for (std::uint32_t i = 0; i < tok.tokens_.size(); ++i) tok.ids_[tok.tokens_[i]] = i;
    return tok;
  }

  std::uint64_t checksum() const { return fnv1a64(serialize()); }

  static std::vector<std::string> split_whitespace(std::string_view text) {
    std::vector<std::string> out;
    std::string cur;
    for (auto cp : decode_utf8(text)) {
      if (is_space_cp(cp)) {
        if (!cur.empty()) out.push_back(std::move(cur)), cur.clear();
      } else {
        append_utf8(cur, cp);
      }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
  }

 private:
  void encode_word(const std::string& w, std::vector<std::uint32_t>& ids) const {
    auto it = ids_.find(w);
    if (it != ids_.end()) {
      ids.push_back(it->second);
      return;
    }
    const char last = w.back();
    if (w.size() > 1 &&
        (last == '.' || last == ',' || last == ':' || last == ';' || last == '!' || last == '?')) {
      encode_word(w.substr(0, w.size() - 1), ids);
      ids.push_back(id_of(std::string(1, last)));
      return;
    }
    ids.push_back(kUnk);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, std::uint32_t> ids_;
};

}  // namespace ctxasr
