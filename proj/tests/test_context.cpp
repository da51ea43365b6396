#include <catch2/catch_amalgamated.hpp>

#include <map>
#include <set>

#include "ctxasr/context.hpp"

using namespace ctxasr;

namespace {

Dialogue make_dialogue(const std::vector<std::string>& transcripts,
                       const std::vector<std::string>& coarse = {}) {
  Dialogue d;
  d.dialogue_id = "d0";
  d.language = "en-us";
  for (std::size_t i = 0; i < transcripts.size(); ++i) {
    Utterance u;
    u.dialogue_id = d.dialogue_id;
    u.turn_index = static_cast<int>(i) + 1;
    u.language = d.language;
    u.transcript = transcripts[i];
    if (i < coarse.size()) u.coarse_transcript = coarse[i];
    u.features = FeatureMatrix{1, 1, {0.0f}};
    d.utterances.push_back(std::move(u));
  }
  return d;
}

Corpus corpus_from_freqs(const std::map<std::string, int>& freqs, const std::string& lang) {
  // One dialogue; each word repeated per its frequency, one word per turn.
  std::vector<std::string> transcripts;
  for (const auto& [word, count] : freqs)
    for (int i = 0; i < count; ++i) transcripts.push_back(word);
  Corpus c;
  c.split = "train";
  Dialogue d = make_dialogue(transcripts);
  d.language = lang;
  for (auto& u : d.utterances) u.language = lang;
  c.dialogues.push_back(std::move(d));
  return c;
}

}  // namespace

TEST_CASE("dialogue_history implements the three window cases") {
  const Dialogue d = make_dialogue({"a", "b", "c", "d"});
  ContextConfig cfg;

  SECTION("t=1 is empty for every window size") {
    for (int kdh : {0, 1, 3, 10}) {
      cfg.k_dh = kdh;
      const auto w = dialogue_history(d, 1, cfg);
      REQUIRE(w.entries.empty());
      REQUIRE(w.available() == 0);
    }
  }
  SECTION("window of one keeps the immediately previous turn") {
    cfg.k_dh = 1;
    const auto w = dialogue_history(d, 3, cfg);
    REQUIRE(w.entries == std::vector<std::string>{"b"});
  }
  SECTION("short dialogues return all prior turns") {
    cfg.k_dh = 5;
    const auto w = dialogue_history(d, 3, cfg);
    REQUIRE(w.entries == std::vector<std::string>{"a", "b"});
    REQUIRE(w.available() == 2);
  }
  SECTION("exhaustive case law: available = min(t-1, k_dh), entries in order") {
    const Dialogue big = make_dialogue(
        {"t1", "t2", "t3", "t4", "t5", "t6", "t7", "t8", "t9", "t10"});
    for (int t = 1; t <= 10; ++t)
      for (int kdh = 0; kdh <= 5; ++kdh) {
        cfg.k_dh = kdh;
        const auto w = dialogue_history(big, t, cfg);
        const int want = std::min(t - 1, kdh);
        REQUIRE(static_cast<int>(w.available()) == want);
        for (int i = 0; i < want; ++i)
          REQUIRE(w.entries[static_cast<std::size_t>(i)] ==
                  "t" + std::to_string(t - want + i));
      }
  }
  SECTION("t out of range") {
    REQUIRE_THROWS_AS(dialogue_history(d, 0, cfg), DataError);
    REQUIRE_THROWS_AS(dialogue_history(d, 5, cfg), DataError);
  }
}

TEST_CASE("dialogue_history draws from the configured source") {
  const Dialogue d = make_dialogue({"gt one", "gt two"}, {"co one", "co two"});
  ContextConfig cfg;
  cfg.k_dh = 1;
  cfg.history_source = ContextSource::coarse;
  REQUIRE(dialogue_history(d, 2, cfg).entries == std::vector<std::string>{"co one"});
  cfg.history_source = ContextSource::ground_truth;
  REQUIRE(dialogue_history(d, 2, cfg).entries == std::vector<std::string>{"gt one"});

  const Dialogue no_coarse = make_dialogue({"x", "y"});
  cfg.history_source = ContextSource::coarse;
  REQUIRE_THROWS_AS(dialogue_history(no_coarse, 2, cfg), DataError);
}

TEST_CASE("history_prompt renders byte-exact templates") {
  HistoryWindow w;
  REQUIRE(history_prompt(w) == "There is no conversation history of this speech.");

  w.entries = {"hello there"};
  REQUIRE(history_prompt(w) == "The previous 1 turn(s) of this speech is: hello there.");

  w.entries = {"a", "b"};
  REQUIRE(history_prompt(w) == "The previous 2 turn(s) of this speech is: a [SEP] b.");

  w.entries = {"x", "y", "z"};
  REQUIRE(history_prompt(w) ==
          "The previous 3 turn(s) of this speech is: x [SEP] y [SEP] z.");
}

TEST_CASE("build_rare_lexicon follows the threshold-then-bottom-fraction rule") {
  ContextConfig cfg;
  SECTION("hand-traced example: {a:5, b:2, c:1}, theta=2, p=0.10") {
    cfg.theta_rare = 2;
    cfg.p_rare = 0.10;
    const Corpus c = corpus_from_freqs({{"a", 5}, {"b", 2}, {"c", 1}}, "en-us");
    const auto lex = build_rare_lexicon(c, "en-us", cfg);
    REQUIRE(lex.words == std::vector<std::string>{"b"});
    REQUIRE(lex.source_freqs.at("b") == 2);
  }
  SECTION("theta=1, p=1.0 keeps the whole vocabulary") {
    cfg.theta_rare = 1;
    cfg.p_rare = 1.0;
    const Corpus c = corpus_from_freqs({{"a", 3}, {"b", 2}, {"c", 1}}, "en-us");
    const auto lex = build_rare_lexicon(c, "en-us", cfg);
    REQUIRE(lex.words.size() == 3);
  }
  SECTION("all counts below theta is an error, not an empty lexicon") {
    cfg.theta_rare = 5;
    const Corpus c = corpus_from_freqs({{"a", 2}, {"b", 1}}, "en-us");
    REQUIRE_THROWS_AS(build_rare_lexicon(c, "en-us", cfg), DataError);
  }
  SECTION("missing language is an error") {
    const Corpus c = corpus_from_freqs({{"a", 3}}, "en-us");
    REQUIRE_THROWS_AS(build_rare_lexicon(c, "fr", cfg), DataError);
  }
  SECTION("ties break by word order after count") {
    cfg.theta_rare = 1;
    cfg.p_rare = 0.5;  // keep ceil(0.5*4)=2 of 4
    const Corpus c = corpus_from_freqs({{"zz", 1}, {"aa", 1}, {"mm", 1}, {"bb", 2}}, "en-us");
    const auto lex = build_rare_lexicon(c, "en-us", cfg);
    REQUIRE(lex.words == std::vector<std::string>{"aa", "mm"});
  }
  SECTION("rarity invariant: kept max frequency <= excluded min frequency") {
    cfg.theta_rare = 1;
    cfg.p_rare = 0.4;
    const std::map<std::string, int> freqs = {{"a", 9}, {"b", 7}, {"c", 5},
                                              {"d", 3}, {"e", 2}, {"f", 1}};
    const Corpus c = corpus_from_freqs(freqs, "en-us");
    const auto lex = build_rare_lexicon(c, "en-us", cfg);
    REQUIRE(lex.words.size() == 3);  // ceil(0.4 * 6)
    long kept_max = 0;
    for (const auto& w : lex.words) kept_max = std::max(kept_max, lex.source_freqs.at(w));
    const std::set<std::string> kept(lex.words.begin(), lex.words.end());
    long excluded_min = 1'000'000;
    for (const auto& [w, f] : freqs)
      if (!kept.count(w)) excluded_min = std::min(excluded_min, static_cast<long>(f));
    REQUIRE(kept_max <= excluded_min);
  }
}

TEST_CASE("sample_hotwords contracts") {
  ContextConfig cfg;  // paper defaults k_hw=3, l_hw=3
  SECTION("single-word transcript forces that word") {
    Rng rng(1);
    for (int i = 0; i < 20; ++i) {
      const auto hw = sample_hotwords("w", "en-us", cfg, rng);
      for (const auto& p : hw) REQUIRE(p == "w");
    }
  }
  SECTION("phrase count within [1, k_hw]") {
    Rng rng(2);
    for (int i = 0; i < 200; ++i) {
      const auto hw = sample_hotwords("one two three four five", "en-us", cfg, rng);
      REQUIRE(hw.size() >= 1);
      REQUIRE(hw.size() <= 3);
    }
  }
  SECTION("deterministic for a fixed seed") {
    Rng r1(77), r2(77);
    REQUIRE(sample_hotwords("a b c d", "en-us", cfg, r1) ==
            sample_hotwords("a b c d", "en-us", cfg, r2));
  }
  SECTION("every phrase is a contiguous n-gram of the source") {
    Rng rng(3);
    const std::string text = "alpha beta gamma delta epsilon";
    const auto words = tokenize(text, "en-us");
    for (int i = 0; i < 200; ++i) {
      for (const auto& phrase : sample_hotwords(text, "en-us", cfg, rng)) {
        const auto pw = tokenize(phrase, "en-us");
        bool found = false;
        for (std::size_t s = 0; s + pw.size() <= words.size() && !found; ++s) {
          found = std::equal(pw.begin(), pw.end(), words.begin() + static_cast<long>(s));
        }
        REQUIRE(found);
      }
    }
  }
  SECTION("empty transcript is an error") {
    Rng rng(4);
    REQUIRE_THROWS_AS(sample_hotwords("   ", "en-us", cfg, rng), DataError);
  }
}

TEST_CASE("sample_distractors excludes transcript words") {
  ContextConfig cfg;
  RareLexicon lex;
  lex.language = "en-us";
  SECTION("only the non-transcript word is ever returned") {
    lex.words = {"x", "y"};
    Rng rng(5);
    for (int i = 0; i < 50; ++i) {
      const auto dt = sample_distractors(lex, "x q", cfg, rng);
      REQUIRE(dt == std::vector<std::string>{"y"});
    }
  }
  SECTION("k_dt=0 yields an empty list") {
    lex.words = {"x", "y"};
    cfg.k_dt = 0;
    Rng rng(6);
    REQUIRE(sample_distractors(lex, "q", cfg, rng).empty());
  }
  SECTION("lexicon fully covered by transcript yields empty, not error") {
    lex.words = {"x", "y"};
    Rng rng(7);
    REQUIRE(sample_distractors(lex, "x y z", cfg, rng).empty());
  }
  SECTION("samples without replacement") {
    lex.words = {"a", "b", "c", "d", "e"};
    cfg.k_dt = 4;
    Rng rng(8);
    for (int i = 0; i < 50; ++i) {
      const auto dt = sample_distractors(lex, "zz", cfg, rng);
      REQUIRE(dt.size() == 4);
      REQUIRE(std::set<std::string>(dt.begin(), dt.end()).size() == 4);
    }
  }
}

TEST_CASE("biasing_prompt renders byte-exact") {
  REQUIRE(biasing_prompt({"big dog"}, {"ox"}) ==
          "The speech might contain following words: big dog, ox.");
  REQUIRE(biasing_prompt({"a"}, {}) == "The speech might contain following words: a.");
  REQUIRE_THROWS_AS(biasing_prompt({}, {}), DataError);
}

TEST_CASE("assemble_prompt renders the chat template") {
  ContextConfig cfg;
  ContextBundle bundle;

  SECTION("no context, inference") {
    cfg.mode = ContextMode::none;
    const auto parts = assemble_prompt(cfg, bundle, Phase::infer);
    REQUIRE(parts.pre_speech.empty());
    REQUIRE(parts.post_speech_user == " USER: Transcribe the speech to text. ASSISTANT: ");
    REQUIRE(parts.target.empty());
  }
  SECTION("training target appends a period") {
    cfg.mode = ContextMode::none;
    const auto parts = assemble_prompt(cfg, bundle, Phase::train, std::string("hi"));
    REQUIRE(parts.target == "hi.");
  }
  SECTION("history mode splices the context after the colon") {
    cfg.mode = ContextMode::history;
    bundle.history = HistoryWindow{{"prev turn"}};
    bundle.history_prompt = history_prompt(*bundle.history);
    bundle.full_prompt = bundle.history_prompt;
    const auto parts = assemble_prompt(cfg, bundle, Phase::infer);
    REQUIRE(parts.post_speech_user ==
            " USER: Transcribe the speech to text. The following context information might "
            "help:The previous 1 turn(s) of this speech is: prev turn. ASSISTANT: ");
  }
  SECTION("mode all concatenates history then biasing with one space") {
    cfg.mode = ContextMode::all;
    bundle.history = HistoryWindow{{"p"}};
    bundle.history_prompt = history_prompt(*bundle.history);
    bundle.biasing_prompt = biasing_prompt({"hw"}, {"dt"});
    bundle.full_prompt = bundle.history_prompt + " " + bundle.biasing_prompt;
    const auto parts = assemble_prompt(cfg, bundle, Phase::infer);
    REQUIRE(parts.post_speech_user.find(
                "help:The previous 1 turn(s) of this speech is: p. The speech might contain "
                "following words: hw, dt. ASSISTANT: ") != std::string::npos);
  }
  SECTION("missing context piece errors") {
    cfg.mode = ContextMode::history;
    ContextBundle empty;
    REQUIRE_THROWS_AS(assemble_prompt(cfg, empty, Phase::infer), DataError);
  }
  SECTION("train phase needs a transcription") {
    cfg.mode = ContextMode::none;
    REQUIRE_THROWS_AS(assemble_prompt(cfg, bundle, Phase::train), DataError);
  }
}

TEST_CASE("build_bundle wires sources and modes together") {
  Dialogue d = make_dialogue({"alpha beta", "gamma delta"}, {"alpha beta", "gamma delta"});
  ContextConfig cfg;
  RareLexicon lex;
  lex.language = "en-us";
  lex.words = {"rare1", "rare2"};

  SECTION("mode none renders nothing") {
    cfg.mode = ContextMode::none;
    Rng rng(1);
    const auto b = build_bundle(d, 1, cfg, &lex, rng);
    REQUIRE_FALSE(b.history.has_value());
    REQUIRE(b.full_prompt.empty());
  }
  SECTION("mode history renders only history") {
    cfg.mode = ContextMode::history;
    Rng rng(1);
    const auto b = build_bundle(d, 2, cfg, nullptr, rng);
    REQUIRE(b.history.has_value());
    REQUIRE(b.full_prompt == "The previous 1 turn(s) of this speech is: alpha beta.");
    REQUIRE(b.biasing_prompt.empty());
  }
  SECTION("mode biasing renders hotwords plus distractors") {
    cfg.mode = ContextMode::biasing;
    Rng rng(1);
    const auto b = build_bundle(d, 1, cfg, &lex, rng);
    REQUIRE_FALSE(b.hotwords.empty());
    REQUIRE(b.distractors.size() == 1);
    REQUIRE(b.full_prompt == b.biasing_prompt);
  }
  SECTION("mode all joins both pieces") {
    cfg.mode = ContextMode::all;
    Rng rng(1);
    const auto b = build_bundle(d, 2, cfg, &lex, rng);
    REQUIRE(b.full_prompt == b.history_prompt + " " + b.biasing_prompt);
  }
  SECTION("train/infer symmetry: coarse source uses the same code path") {
    cfg.mode = ContextMode::all;
    cfg.history_source = ContextSource::coarse;
    cfg.hotword_source = ContextSource::coarse;
    Rng r1(9), r2(9);
    const auto coarse = build_bundle(d, 2, cfg, &lex, r1);
    cfg.history_source = ContextSource::ground_truth;
    cfg.hotword_source = ContextSource::ground_truth;
    const auto truth = build_bundle(d, 2, cfg, &lex, r2);
    // Coarse equals ground truth here, so the bundles must match exactly.
    REQUIRE(coarse.full_prompt == truth.full_prompt);
    REQUIRE(coarse.hotwords == truth.hotwords);
  }
}
