#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ctxasr/corpus.hpp"
#include "ctxasr/rng.hpp"
#include "ctxasr/tensor.hpp"
#include "ctxasr/tokenizer.hpp"

namespace ctxasr {

namespace detail {

inline Tensor seeded_uniform(Shape shape, double bound, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<double> v(numel(shape));
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor::from(std::move(shape), std::move(v), /*requires_grad=*/false);
}

inline Tensor seeded_xavier(std::size_t fan_in, std::size_t fan_out, std::uint64_t seed) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  return seeded_uniform({fan_in, fan_out}, bound, seed);
}

inline std::uint64_t weights_checksum(std::initializer_list<const Tensor*> ws) {
  std::string bytes;
  for (const auto* w : ws)
    for (double v : w->data()) put_f64(bytes, v);
  return fnv1a64(bytes);
}

inline void serialize_tensor(std::string& buf, const Tensor& t) {
  put_u32(buf, static_cast<std::uint32_t>(t.rank()));
  for (std::size_t i = 0; i < t.rank(); ++i) put_u64(buf, t.dim(i));
  for (double v : t.data()) put_f64(buf, v);
}

inline Tensor deserialize_tensor(ByteReader& r, bool requires_grad = false) {
  const std::uint32_t rank = r.u32();
  Shape shape(rank);
  for (auto& d : shape) d = r.u64();
  std::vector<double> data(numel(shape));
  for (auto& v : data) v = r.f64();
  return Tensor::from(std::move(shape), std::move(data), requires_grad);
}

}  // namespace detail

// Tensor view of an acoustic feature block (leaf, no gradient: features are
// inputs, not parameters).
inline Tensor features_tensor(const FeatureMatrix& m) {
  std::vector<double> v(m.frames.begin(), m.frames.end());
  return Tensor::from({m.frame_count, m.feature_dim}, std::move(v));
}

// Frozen seeded affine + tanh stand-in for the pretrained speech encoder.
class FrozenEncoder {
 public:
  FrozenEncoder(std::size_t f_in, std::size_t e_a, std::uint64_t seed)
      : f_in_(f_in),
        e_a_(e_a),
        w_(detail::seeded_xavier(f_in, e_a, mix_seed(seed, "enc-w"))),
        b_(detail::seeded_uniform({e_a}, 0.5, mix_seed(seed, "enc-b"))) {}

  std::size_t input_dim() const { return f_in_; }
  std::size_t output_dim() const { return e_a_; }

  Tensor encode(const Tensor& features) const {
    if (features.rank() != 2 || features.dim(1) != f_in_)
      throw ShapeError("encode_speech: features " + shape_str(features.shape()) +
                       " do not match encoder input dim " + std::to_string(f_in_));
    return tanh(add(matmul(features, w_), b_));
  }

  Tensor encode(const FeatureMatrix& m) const { return encode(features_tensor(m)); }

  std::uint64_t checksum() const { return detail::weights_checksum({&w_, &b_}); }

 private:
  std::size_t f_in_, e_a_;
  Tensor w_, b_;
};

// Frozen seeded token-embedding table standing in for the LLM input layer.
class FrozenEmbedder {
 public:
  FrozenEmbedder(std::size_t vocab, std::size_t e_t, std::uint64_t seed)
      : vocab_(vocab), e_t_(e_t) {
    Rng rng(mix_seed(seed, "emb-table"));
    std::vector<double> v(vocab * e_t);
    const double scale = 1.0 / std::sqrt(static_cast<double>(e_t));
    for (auto& x : v) x = rng.normal() * scale;
    table_ = Tensor::from({vocab, e_t}, std::move(v));
  }

  std::size_t vocab_size() const { return vocab_; }
  std::size_t embed_dim() const { return e_t_; }

  Tensor embed(std::span<const std::uint32_t> ids) const {
    if (ids.empty()) throw DataError("embed_tokens: empty token sequence");
    std::vector<double> out;
    out.reserve(ids.size() * e_t_);
    for (auto id : ids) {
      if (id >= vocab_)
        throw DataError("embed_tokens: token id " + std::to_string(id) +
                        " out of range (vocab " + std::to_string(vocab_) + ")");
      const double* row = table_.data().data() + std::size_t{id} * e_t_;
      out.insert(out.end(), row, row + e_t_);
    }
    return Tensor::from({ids.size(), e_t_}, std::move(out));
  }

  std::uint64_t checksum() const { return detail::weights_checksum({&table_}); }

 private:
  std::size_t vocab_, e_t_;
  Tensor table_;
};

// Frozen one-block causal decoder: single-head self-attention with residual,
// position-wise feed-forward with residual, output projection to the
// vocabulary. Sinusoidal position encodings are added to the input.
class FrozenDecoder {
 public:
  FrozenDecoder(std::size_t e_t, std::size_t vocab, std::size_t max_len, std::uint64_t seed)
      : e_t_(e_t),
        vocab_(vocab),
        max_len_(max_len),
        wq_(detail::seeded_xavier(e_t, e_t, mix_seed(seed, "dec-wq"))),
        wk_(detail::seeded_xavier(e_t, e_t, mix_seed(seed, "dec-wk"))),
        wv_(detail::seeded_xavier(e_t, e_t, mix_seed(seed, "dec-wv"))),
        w_ff1_(detail::seeded_xavier(e_t, 4 * e_t, mix_seed(seed, "dec-ff1"))),
        b_ff1_(Tensor::zeros({4 * e_t})),
        w_ff2_(detail::seeded_xavier(4 * e_t, e_t, mix_seed(seed, "dec-ff2"))),
        b_ff2_(Tensor::zeros({e_t})),
        w_out_(detail::seeded_xavier(e_t, vocab, mix_seed(seed, "dec-out"))),
        b_out_(Tensor::zeros({vocab})) {
    // Positions scaled down to sit at the embedding tables' magnitude.
    pos_enc_.resize(max_len * e_t);
    for (std::size_t p = 0; p < max_len; ++p)
      for (std::size_t i = 0; i < e_t; ++i) {
        const double rate =
            std::pow(10000.0, -static_cast<double>(i / 2 * 2) / static_cast<double>(e_t));
        const double angle = static_cast<double>(p) * rate;
        pos_enc_[p * e_t + i] = 0.2 * ((i % 2 == 0) ? std::sin(angle) : std::cos(angle));
      }
  }

  std::size_t embed_dim() const { return e_t_; }
  std::size_t vocab_size() const { return vocab_; }
  std::size_t max_len() const { return max_len_; }

  // Logits for every position of the spliced input sequence; [S,E_t] -> [S,V].
  Tensor logits(const Tensor& input_embeds) const {
    if (input_embeds.rank() != 2 || input_embeds.dim(1) != e_t_)
      throw ShapeError("decode_logits: input " + shape_str(input_embeds.shape()) +
                       " does not match embed dim " + std::to_string(e_t_));
    const std::size_t s = input_embeds.dim(0);
    if (s > max_len_)
      throw DataError("decode_logits: sequence length " + std::to_string(s) +
                      " exceeds max_len " + std::to_string(max_len_));
    Tensor x = add(input_embeds, position_slice(s));
    Tensor q = matmul(x, wq_), k = matmul(x, wk_), v = matmul(x, wv_);
    Tensor scores = scale(matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(e_t_)));
    scores = add(scores, causal_mask(s));
    Tensor h = add(x, matmul(softmax_last_dim(scores), v));
    Tensor ff = add(matmul(gelu(add(matmul(h, w_ff1_), b_ff1_)), w_ff2_), b_ff2_);
    Tensor h2 = add(h, ff);
    return add(matmul(h2, w_out_), b_out_);
  }

  // Logits restricted to [first, first + count) — the target-aligned rows.
  Tensor logits_rows(const Tensor& input_embeds, std::size_t first, std::size_t count) const {
    return slice_rows(logits(input_embeds), first, first + count);
  }

  std::uint64_t checksum() const {
    return detail::weights_checksum(
        {&wq_, &wk_, &wv_, &w_ff1_, &b_ff1_, &w_ff2_, &b_ff2_, &w_out_, &b_out_});
  }

 private:
  Tensor position_slice(std::size_t s) const {
    std::vector<double> v(pos_enc_.begin(), pos_enc_.begin() + static_cast<std::ptrdiff_t>(s * e_t_));
    return Tensor::from({s, e_t_}, std::move(v));
  }

  static Tensor causal_mask(std::size_t s) {
    std::vector<double> m(s * s, 0.0);
    for (std::size_t i = 0; i < s; ++i)
      for (std::size_t j = i + 1; j < s; ++j) m[i * s + j] = -1e30;
    return Tensor::from({s, s}, std::move(m));
  }

  std::size_t e_t_, vocab_, max_len_;
  Tensor wq_, wk_, wv_, w_ff1_, b_ff1_, w_ff2_, b_ff2_, w_out_, b_out_;
  std::vector<double> pos_enc_;
};

// ---------------------------------------------------------------------------
// Length-normalized beam search. Per step all candidates share a length, so
// ranking uses cumulative log-probability; the final hypothesis choice uses
// sum / generated-length (EOS counts as a generated token). Ties break
// toward the lexicographically smaller token sequence.
// ---------------------------------------------------------------------------

namespace detail {

struct BeamHyp {
  std::vector<std::uint32_t> tokens;  // emitted tokens, EOS excluded
  double log_prob = 0.0;
  std::size_t emitted = 0;  // includes the EOS emission once finished
};

inline double beam_score(const BeamHyp& h) {
  return h.log_prob / static_cast<double>(std::max<std::size_t>(h.emitted, 1));
}

inline std::vector<double> log_softmax_row(const Tensor& logits, std::size_t row) {
  const std::size_t v = logits.dim(1);
  const double* z = logits.data().data() + row * v;
  double mx = z[0];
  for (std::size_t i = 1; i < v; ++i) mx = std::max(mx, z[i]);
  double sum = 0;
  for (std::size_t i = 0; i < v; ++i) sum += std::exp(z[i] - mx);
  const double lse = mx + std::log(sum);
  std::vector<double> out(v);
  for (std::size_t i = 0; i < v; ++i) out[i] = z[i] - lse;
  return out;
}

}  // namespace detail

inline std::vector<std::uint32_t> beam_decode(const FrozenDecoder& dec, const FrozenEmbedder& emb,
                                              const Tensor& prefix_embeds, int beam, int max_new,
                                              std::uint32_t eos_id) {
  if (beam < 1) throw UsageError("beam_decode: beam must be >= 1");
  using detail::BeamHyp;
  std::vector<BeamHyp> alive{BeamHyp{}};
  std::vector<BeamHyp> finished;

  for (int step = 0; step < max_new && !alive.empty(); ++step) {
    struct Cand {
      std::size_t hyp;
      std::uint32_t token;
      double log_prob;
    };
    std::vector<Cand> cands;
    for (std::size_t h = 0; h < alive.size(); ++h) {
      Tensor x = prefix_embeds;
      if (!alive[h].tokens.empty())
        x = concat_rows({prefix_embeds, emb.embed(alive[h].tokens)});
      const Tensor z = dec.logits(x);
      const auto lp = detail::log_softmax_row(z, z.dim(0) - 1);
      for (std::uint32_t t = 0; t < lp.size(); ++t)
        cands.push_back({h, t, alive[h].log_prob + lp[t]});
    }
    std::stable_sort(cands.begin(), cands.end(), [&](const Cand& a, const Cand& b) {
      if (a.log_prob != b.log_prob) return a.log_prob > b.log_prob;
      if (a.hyp != b.hyp) return alive[a.hyp].tokens < alive[b.hyp].tokens;
      return a.token < b.token;
    });
    // Consume exactly the top `beam` candidates; EOS candidates retire their
    // hypothesis, so the live set may shrink. With beam=1 this is greedy.
    std::vector<BeamHyp> next;
    const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(beam), cands.size());
    for (std::size_t i = 0; i < take; ++i) {
      const Cand& c = cands[i];
      BeamHyp h = alive[c.hyp];
      h.log_prob = c.log_prob;
      ++h.emitted;
      if (c.token == eos_id) {
        finished.push_back(std::move(h));
      } else {
        h.tokens.push_back(c.token);
        next.push_back(std::move(h));
      }
    }
    alive = std::move(next);
  }
  for (auto& h : alive) finished.push_back(std::move(h));
  if (finished.empty()) return {};
  const BeamHyp* best = &finished[0];
  for (const auto& h : finished) {
    const double s = detail::beam_score(h), bs = detail::beam_score(*best);
    if (s > bs || (s == bs && h.tokens < best->tokens)) best = &h;
  }
  return best->tokens;
}

}  // namespace ctxasr
