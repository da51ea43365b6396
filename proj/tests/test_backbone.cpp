#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "ctxasr/backbone.hpp"
#include "ctxasr/corpus.hpp"

using namespace ctxasr;

namespace {

Corpus tiny_corpus() {
  SynthSpec spec;
  spec.languages = {"en-us"};
  spec.dialogues_per_language = 2;
  spec.min_turns = 2;
  spec.max_turns = 3;
  spec.vocab_size = 8;
  spec.min_tokens = 1;
  spec.max_tokens = 3;
  spec.feature_dim = 4;
  spec.frames_per_token = 2;
  return synth_corpus(spec, 17);
}

}  // namespace

TEST_CASE("tokenizer round trips in-vocabulary text") {
  const Corpus c = tiny_corpus();
  const auto tok = ToyTokenizer::build(c);
  for (const auto& d : c.dialogues)
    for (const auto& u : d.utterances) {
      const auto ids = tok.encode(u.transcript, u.language);
      REQUIRE(tok.decode(ids, u.language) == u.transcript);
      for (auto id : ids) REQUIRE(id != ToyTokenizer::kUnk);
    }
}

TEST_CASE("tokenizer covers the prompt templates") {
  const auto tok = ToyTokenizer::build(tiny_corpus());
  const auto ids = tok.encode(
      " USER: Transcribe the speech to text. The following context information might help:"
      "The previous 1 turn(s) of this speech is: ba de. ASSISTANT: ",
      "en-us");
  std::size_t unk = 0;
  for (auto id : ids) unk += id == ToyTokenizer::kUnk ? 1 : 0;
  // Only the fused "help:The" token lacks a vocabulary entry.
  REQUIRE(unk <= 1);
  REQUIRE(tok.period_id() != ToyTokenizer::kUnk);
}

TEST_CASE("tokenizer splits trailing punctuation of OOV forms") {
  const auto tok = ToyTokenizer::build(tiny_corpus());
  // "ba," is not a vocab entry, but "ba" and "," are.
  const auto ids = tok.encode("ba, de.", "en-us");
  REQUIRE(ids.size() == 4);
  REQUIRE(tok.decode(ids, "en-us") == "ba , de.");
  for (auto id : ids) REQUIRE(id != ToyTokenizer::kUnk);
}

TEST_CASE("tokenizer char mode round trips ja text") {
  SynthSpec spec;
  spec.languages = {"ja"};
  spec.dialogues_per_language = 1;
  spec.min_turns = 2;
  spec.max_turns = 2;
  spec.vocab_size = 10;
  spec.min_tokens = 2;
  spec.max_tokens = 4;
  spec.feature_dim = 4;
  const Corpus c = synth_corpus(spec, 3);
  const auto tok = ToyTokenizer::build(c);
  const auto& u = c.dialogues[0].utterances[0];
  REQUIRE(tok.decode(tok.encode(u.transcript, "ja"), "ja") == u.transcript);
}

TEST_CASE("tokenizer serialization round trips") {
  const auto tok = ToyTokenizer::build(tiny_corpus());
  const std::string bytes = tok.serialize();
  ByteReader r(bytes);
  const auto back = ToyTokenizer::deserialize(r);
  REQUIRE(back.tokens() == tok.tokens());
  REQUIRE(back.checksum() == tok.checksum());
}

TEST_CASE("encoder is deterministic and differentiable pass-through") {
  FrozenEncoder enc(4, 6, 42);
  FeatureMatrix m{3, 4, {0.1f, -0.2f, 0.3f, 0.4f, 0, 0, 0, 0, 1, 1, -1, -1}};
  const Tensor a = enc.encode(m);
  const Tensor b = enc.encode(m);
  REQUIRE(a.shape() == Shape{3, 6});
  REQUIRE(a.data() == b.data());

  // Zero frame maps to the tanh(bias) row, identical across calls.
  FeatureMatrix zero{1, 4, {0, 0, 0, 0}};
  const Tensor z1 = enc.encode(zero);
  const Tensor z2 = enc.encode(zero);
  REQUIRE(z1.data() == z2.data());
  bool nonzero = false;
  for (double v : z1.data()) nonzero = nonzero || v != 0.0;
  REQUIRE(nonzero);

  FrozenEncoder other(4, 6, 43);
  REQUIRE(other.checksum() != enc.checksum());
  REQUIRE(FrozenEncoder(4, 6, 42).checksum() == enc.checksum());

  FeatureMatrix bad{1, 3, {0, 0, 0}};
  REQUIRE_THROWS_AS(enc.encode(bad), ShapeError);
}

TEST_CASE("embedder looks up frozen rows") {
  FrozenEmbedder emb(10, 4, 7);
  const std::vector<std::uint32_t> ids = {3, 3, 9};
  const Tensor e = emb.embed(ids);
  REQUIRE(e.shape() == Shape{3, 4});
  for (std::size_t j = 0; j < 4; ++j) REQUIRE(e.data()[j] == e.data()[4 + j]);

  REQUIRE_THROWS_AS(emb.embed(std::vector<std::uint32_t>{}), DataError);
  REQUIRE_THROWS_AS(emb.embed(std::vector<std::uint32_t>{10}), DataError);
  REQUIRE(FrozenEmbedder(10, 4, 7).checksum() == emb.checksum());
}

TEST_CASE("decoder logits are causal, frozen, and vocabulary-wide") {
  FrozenDecoder dec(8, 12, 64, 5);
  Rng rng(9);
  std::vector<double> x(5 * 8);
  for (auto& v : x) v = rng.normal();
  const Tensor in = Tensor::from({5, 8}, x);
  const Tensor z1 = dec.logits(in);
  REQUIRE(z1.shape() == Shape{5, 12});
  REQUIRE(dec.logits(in).data() == z1.data());

  // Perturb position p: logits strictly before p must not change.
  for (std::size_t p = 1; p < 5; ++p) {
    auto xp = x;
    for (std::size_t j = 0; j < 8; ++j) xp[p * 8 + j] += 0.37 * static_cast<double>(j + 1);
    const Tensor z2 = dec.logits(Tensor::from({5, 8}, xp));
    for (std::size_t i = 0; i < p; ++i)
      for (std::size_t j = 0; j < 12; ++j)
        REQUIRE(z2.data()[i * 12 + j] == z1.data()[i * 12 + j]);
    bool at_or_after_changed = false;
    for (std::size_t i = p; i < 5; ++i)
      for (std::size_t j = 0; j < 12; ++j)
        at_or_after_changed =
            at_or_after_changed || z2.data()[i * 12 + j] != z1.data()[i * 12 + j];
    REQUIRE(at_or_after_changed);
  }

  REQUIRE_THROWS_AS(dec.logits(Tensor::zeros({65, 8})), DataError);
  REQUIRE(FrozenDecoder(8, 12, 64, 5).checksum() == dec.checksum());
}

TEST_CASE("beam=1 equals argmax greedy") {
  FrozenDecoder dec(6, 9, 64, 11);
  FrozenEmbedder emb(9, 6, 12);
  Rng rng(13);
  std::vector<double> p(3 * 6);
  for (auto& v : p) v = rng.normal();
  const Tensor prefix = Tensor::from({3, 6}, p);
  const std::uint32_t eos = 2;

  const auto beam1 = beam_decode(dec, emb, prefix, 1, 6, eos);

  // Hand-rolled greedy.
  std::vector<std::uint32_t> greedy;
  for (int step = 0; step < 6; ++step) {
    Tensor x = greedy.empty() ? prefix : concat_rows({prefix, emb.embed(greedy)});
    const Tensor z = dec.logits(x);
    const std::size_t last = z.dim(0) - 1;
    std::uint32_t best = 0;
    double best_v = z.data()[last * 9];
    for (std::uint32_t t = 1; t < 9; ++t) {
      const double v = z.data()[last * 9 + t];
      if (v > best_v) {
        best_v = v;
        best = t;
      }
    }
    if (best == eos) break;
    greedy.push_back(best);
  }
  REQUIRE(beam1 == greedy);
}

TEST_CASE("beam search matches exhaustive search when the beam covers it") {
  // V=6, max_new=4: beam 1296 keeps every candidate alive.
  FrozenDecoder dec(6, 6, 64, 21);
  FrozenEmbedder emb(6, 6, 22);
  Rng rng(23);
  std::vector<double> p(2 * 6);
  for (auto& v : p) v = rng.normal();
  const Tensor prefix = Tensor::from({2, 6}, p);
  const std::uint32_t eos = 2;
  const int max_new = 4;

  const auto wide = beam_decode(dec, emb, prefix, 1296, max_new, eos);

  // Exhaustive enumeration with the same termination and scoring rules.
  struct Best {
    std::vector<std::uint32_t> tokens;
    double score = -1e300;
    bool set = false;
  } best;
  struct Frame {
    std::vector<std::uint32_t> tokens;
    double lp;
  };
  std::vector<Frame> stack{{{}, 0.0}};
  while (!stack.empty()) {
    Frame f = stack.back();
    stack.pop_back();
    Tensor x = f.tokens.empty() ? prefix : concat_rows({prefix, emb.embed(f.tokens)});
    const Tensor z = dec.logits(x);
    const auto lp = detail::log_softmax_row(z, z.dim(0) - 1);
    for (std::uint32_t t = 0; t < 6; ++t) {
      const double total = f.lp + lp[t];
      const std::size_t emitted = f.tokens.size() + 1;
      if (t == eos || static_cast<int>(emitted) == max_new) {
        const double score = total / static_cast<double>(emitted);
        std::vector<std::uint32_t> toks = f.tokens;
        if (t != eos) toks.push_back(t);
        if (!best.set || score > best.score ||
            (score == best.score && toks < best.tokens)) {
          best.tokens = toks;
          best.score = score;
          best.set = true;
        }
      } else {
        Frame nf;
        nf.tokens = f.tokens;
        nf.tokens.push_back(t);
        nf.lp = total;
        stack.push_back(std::move(nf));
      }
    }
  }
  REQUIRE(wide == best.tokens);
}

TEST_CASE("beam=2 final score is at least the greedy score on pinned instances") {
  for (std::uint64_t seed : {31, 32, 33, 34}) {
    FrozenDecoder dec(6, 8, 64, seed);
    FrozenEmbedder emb(8, 6, seed + 100);
    Rng rng(seed + 200);
    std::vector<double> p(2 * 6);
    for (auto& v : p) v = rng.normal();
    const Tensor prefix = Tensor::from({2, 6}, p);
    const std::uint32_t eos = 2;

    auto norm_score = [&](const std::vector<std::uint32_t>& toks) {
      // Recompute the length-normalized log-probability of a decode result,
      // accounting for the EOS emission when it terminated the sequence.
      double lp = 0;
      std::vector<std::uint32_t> prefix_toks;
      for (std::size_t i = 0; i <= toks.size(); ++i) {
        Tensor x = prefix_toks.empty() ? prefix : concat_rows({prefix, emb.embed(prefix_toks)});
        const Tensor z = dec.logits(x);
        const auto row = detail::log_softmax_row(z, z.dim(0) - 1);
        if (i < toks.size()) {
          lp += row[toks[i]];
          prefix_toks.push_back(toks[i]);
        } else if (static_cast<int>(toks.size()) < 5) {
          lp += row[eos];  // terminated by EOS
          return lp / static_cast<double>(toks.size() + 1);
        }
      }
      return lp / static_cast<double>(std::max<std::size_t>(toks.size(), 1));
    };

    const auto g = beam_decode(dec, emb, prefix, 1, 5, eos);
    const auto b2 = beam_decode(dec, emb, prefix, 2, 5, eos);
    REQUIRE(norm_score(b2) >= norm_score(g) - 1e-12);
  }
}

TEST_CASE("features_tensor preserves values") {
  FeatureMatrix m{2, 2, {1.5f, -2.5f, 3.0f, 0.25f}};
  const Tensor t = features_tensor(m);
  REQUIRE(t.shape() == Shape{2, 2});
  REQUIRE(t.data() == std::vector<double>{1.5, -2.5, 3.0, 0.25});
}
