#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ctxasr/alignment.hpp"
#include "ctxasr/backbone.hpp"
#include "ctxasr/connector.hpp"
#include "ctxasr/context.hpp"
#include "ctxasr/corpus.hpp"
#include "ctxasr/objective.hpp"
#include "ctxasr/tokenizer.hpp"

namespace ctxasr {

struct ModelDims {
  std::size_t feature_dim = 8;  // encoder input width (corpus E_a)
  std::size_t e_a = 8;          // encoder output width
  std::size_t e_t = 16;         // decoder embedding width
  std::size_t k_down = 4;       // frame-stacking factor
  std::size_t h_hid = 0;        // projector hidden width; 0 -> e_a * k_down
  std::size_t max_len = 256;    // decoder position budget
};

struct BackboneSeeds {
  std::uint64_t encoder = 0;
  std::uint64_t embedder = 0;
  std::uint64_t decoder = 0;
  std::uint64_t projector = 0;

  static BackboneSeeds derive(std::uint64_t master) {
    return {mix_seed(master, "encoder"), mix_seed(master, "embedder"),
            mix_seed(master, "decoder"), mix_seed(master, "projector")};
  }
};

// Frozen encoder/embedder/decoder around the one trainable projector.
class Model {
 public:
  Model(ModelDims dims, ToyTokenizer tokenizer, BackboneSeeds seeds)
      : dims_(dims),
        seeds_(seeds),
        tokenizer_(std::move(tokenizer)),
        encoder_(dims.feature_dim, dims.e_a, seeds.encoder),
        embedder_(tokenizer_.vocab_size(), dims.e_t, seeds.embedder),
        decoder_(dims.e_t, tokenizer_.vocab_size(), dims.max_len, seeds.decoder),
        projector_(init_projector(dims.e_a, dims.k_down, dims.h_hid, dims.e_t, seeds.projector)) {}

  const ModelDims& dims() const { return dims_; }
  const BackboneSeeds& seeds() const { return seeds_; }
  const ToyTokenizer& tokenizer() const { return tokenizer_; }
  const FrozenEncoder& encoder() const { return encoder_; }
  const FrozenEmbedder& embedder() const { return embedder_; }
  const FrozenDecoder& decoder() const { return decoder_; }
  ProjectorParams& projector() { return projector_; }
  const ProjectorParams& projector() const { return projector_; }

  std::size_t vocab_size() const { return tokenizer_.vocab_size(); }

  // Projected speech embeddings for one utterance: encode, stack, project.
  Tensor speech_embeddings(const Utterance& u) const {
    return project(downsample_stack(encoder_.encode(u.features), dims_.k_down), projector_);
  }

  // Target token sequence: transcript tokens, the trailing period, EOS.
  std::vector<std::uint32_t> target_ids(const Utterance& u) const {
    auto ids = tokenizer_.encode(u.transcript, u.language);
    ids.push_back(tokenizer_.period_id());
    ids.push_back(ToyTokenizer::kEos);
    return ids;
  }

 private:
  ModelDims dims_;
  BackboneSeeds seeds_;
  ToyTokenizer tokenizer_;
  FrozenEncoder encoder_;
  FrozenEmbedder embedder_;
  FrozenDecoder decoder_;
  ProjectorParams projector_;
};

struct ItemForward {
  Tensor ce;  // scalar masked cross-entropy over the target positions
  Tensor speech_vec;
  Tensor ctx_vec;
  bool has_ctx = false;
};

// Teacher-forced forward for one utterance. Input sequence is
// [speech][prompt][target[0..L-2]]; the logits at positions P-1 .. P+L-2
// predict target[0..L-1], so exactly the transcription tokens are scored.
inline ItemForward forward_item(const Model& m, const Utterance& u, const ContextBundle& bundle,
                                const ContextConfig& ctx_cfg, bool want_ctx_vec) {
  const Tensor h_spe = m.speech_embeddings(u);
  const auto parts = assemble_prompt(ctx_cfg, bundle, Phase::train, u.transcript);
  const auto prompt_ids = m.tokenizer().encode(parts.post_speech_user, u.language);
  const auto targets = m.target_ids(u);
  const std::size_t l = targets.size();

  std::vector<Tensor> rows = {h_spe, m.embedder().embed(prompt_ids)};
  if (l > 1)
    rows.push_back(
        m.embedder().embed(std::span<const std::uint32_t>(targets.data(), l - 1)));
  const Tensor x = concat_rows(rows);
  const std::size_t p = h_spe.dim(0) + prompt_ids.size();
  const Tensor z = m.decoder().logits_rows(x, p - 1, l);

  ItemForward out;
  out.ce = cross_entropy(z, targets, std::vector<bool>(l, true));
  if (want_ctx_vec && ctx_cfg.mode != ContextMode::none) {
    out.speech_vec = pool_normalize(h_spe);
    const auto ctx_ids = m.tokenizer().encode(bundle.full_prompt, u.language);
    out.ctx_vec = pool_normalize(m.embedder().embed(ctx_ids));
    out.has_ctx = true;
  }
  return out;
}

// Spliced prefix for autoregressive decoding: [speech][prompt].
inline Tensor inference_prefix(const Model& m, const Utterance& u, const ContextBundle& bundle,
                               const ContextConfig& ctx_cfg) {
  const Tensor h_spe = m.speech_embeddings(u);
  const auto parts = assemble_prompt(ctx_cfg, bundle, Phase::infer);
  const auto prompt_ids = m.tokenizer().encode(parts.post_speech_user, u.language);
  return concat_rows({h_spe, m.embedder().embed(prompt_ids)});
}

}  // namespace ctxasr
