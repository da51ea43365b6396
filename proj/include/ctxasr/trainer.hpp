#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "ctxasr/model.hpp"

namespace ctxasr {

struct TrainConfig {
  int epochs = 2;
  int batch_size = 8;
  double base_lr = 1e-4;
  double weight_decay = 1e-6;
  int warmup_steps = 1000;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 1;
  ContextConfig context;
  bool contrastive_enabled = false;
  AlignmentConfig alignment;
  ObjectiveConfig objective;
  ModelDims dims;
  bool shuffle = true;
};

// Linear warmup to base_lr, constant afterwards.
inline double lr_at(long step, const TrainConfig& cfg) {
  if (step < 1) throw DataError("lr_at: step must be >= 1");
  if (cfg.warmup_steps <= 0) return cfg.base_lr;
  return cfg.base_lr *
         std::min(1.0, static_cast<double>(step) / static_cast<double>(cfg.warmup_steps));
}

// ---------------------------------------------------------------------------
// AdamW with decoupled weight decay.
// ---------------------------------------------------------------------------

struct AdamWState {
  struct Slot {
    std::vector<double> m, v;
  };
  std::vector<Slot> slots;
  long t = 0;

  std::string serialize() const {
    std::string buf;
    put_i64(buf, t);
    put_u32(buf, static_cast<std::uint32_t>(slots.size()));
    for (const auto& s : slots) {
      put_u64(buf, s.m.size());
      for (double x : s.m) put_f64(buf, x);
      for (double x : s.v) put_f64(buf, x);
    }
    return buf;
  }

  static AdamWState deserialize(ByteReader& r) {
    AdamWState st;
    st.t = r.i64();
    const std::uint32_t n = r.u32();
    st.slots.resize(n);
    for (auto& s : st.slots) {
      const std::size_t len = r.u64();
      s.m.resize(len);
      s.v.resize(len);
      for (auto& x : s.m) x = r.f64();
      for (auto& x : s.v) x = r.f64();
    }
    return st;
  }
};

// Bias-corrected update with decoupled decay:
//   p <- p - lr * mhat / (sqrt(vhat) + eps) - lr * wd * p
inline void optimizer_step(std::vector<Tensor*> params, const std::vector<std::string>& names,
                           AdamWState& state, double lr, const TrainConfig& cfg) {
  if (state.slots.empty()) {
    state.slots.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.slots[i].m.assign(params[i]->size(), 0.0);
      state.slots[i].v.assign(params[i]->size(), 0.0);
    }
  }
  // Validate every gradient before touching any parameter so a failed step
  // leaves the model intact.
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& g = params[i]->grad();
    for (double gv : g)
      if (!std::isfinite(gv))
        throw NumericError("optimizer_step: non-finite gradient in parameter " +
                           (i < names.size() ? names[i] : std::to_string(i)));
  }
  ++state.t;
  const double bc1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i]->mutable_data();
    const auto& g = params[i]->grad();
    auto& slot = state.slots[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      slot.m[j] = cfg.adam_beta1 * slot.m[j] + (1.0 - cfg.adam_beta1) * g[j];
      slot.v[j] = cfg.adam_beta2 * slot.v[j] + (1.0 - cfg.adam_beta2) * g[j] * g[j];
      const double mhat = slot.m[j] / bc1;
      const double vhat = slot.v[j] / bc2;
      p[j] -= lr * (mhat / (std::sqrt(vhat) + cfg.adam_eps)) + lr * cfg.weight_decay * p[j];
    }
  }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct MetricsRow {
  long step = 0;
  double lr = 0, l_ce = 0, l_cl = 0, alpha = 0, total = 0;
};

inline std::string metrics_csv(const std::vector<MetricsRow>& rows) {
  std::string out = "step,lr,l_ce,l_cl,alpha,total\n";
  for (const auto& r : rows) {
    out += std::to_string(r.step) + ',' + fmt_double(r.lr) + ',' + fmt_double(r.l_ce) + ',' +
           fmt_double(r.l_cl) + ',' + fmt_double(r.alpha) + ',' + fmt_double(r.total) + '\n';
  }
  return out;
}

struct TrainedModel {
  TrainConfig cfg;
  Model model;
  AdamWState opt;
  long step = 0;
  int epochs_done = 0;
};

namespace detail {

inline void validate_train_config(const TrainConfig& cfg) {
  if (cfg.epochs < 1) throw UsageError("train: epochs must be >= 1");
  if (cfg.batch_size < 1) throw UsageError("train: batch_size must be >= 1");
  if (cfg.base_lr <= 0 || cfg.adam_eps <= 0) throw UsageError("train: rates must be positive");
  if (cfg.objective.beta <= 0) throw UsageError("train: beta must be positive");
  if (cfg.alignment.tau <= 0) throw UsageError("train: tau must be positive");
  if ((cfg.context.mode == ContextMode::history || cfg.context.mode == ContextMode::all) &&
      cfg.context.k_dh <= 0)
    throw UsageError("train: mode " + to_string(cfg.context.mode) +
                     " contradicts K_DH=" + std::to_string(cfg.context.k_dh));
}

}  // namespace detail

// Per-language rare lexicons for the biasing modes. Keyed by language.
inline std::map<std::string, RareLexicon> build_lexicons(const Corpus& corpus,
                                                         const ContextConfig& cfg) {
  std::map<std::string, RareLexicon> out;
  for (const auto& d : corpus.dialogues)
    if (!out.count(d.language)) out[d.language] = build_rare_lexicon(corpus, d.language, cfg);
  return out;
}

// Context bundles are fixed per (utterance, seed): one rng stream per
// utterance, tagged by dialogue id and turn.
inline std::vector<std::vector<ContextBundle>> build_all_bundles(
    const Corpus& corpus, const ContextConfig& cfg,
    const std::map<std::string, RareLexicon>& lexicons, std::uint64_t seed) {
  std::vector<std::vector<ContextBundle>> bundles(corpus.dialogues.size());
  for (std::size_t di = 0; di < corpus.dialogues.size(); ++di) {
    const auto& d = corpus.dialogues[di];
    const RareLexicon* lex = nullptr;
    if (auto it = lexicons.find(d.language); it != lexicons.end()) lex = &it->second;
    bundles[di].reserve(d.utterances.size());
    for (std::size_t ui = 0; ui < d.utterances.size(); ++ui) {
      Rng rng(mix_seed(seed, "ctx", d.dialogue_id, static_cast<std::uint64_t>(ui + 1)));
      bundles[di].push_back(
          build_bundle(d, static_cast<int>(ui + 1), cfg, lex, rng));
    }
  }
  return bundles;
}

// Runs `epochs` additional epochs on tm, appending metrics rows. Only the
// projector parameters are updated; the contrastive term is active when
// enabled and the context mode provides a prompt to align against.
inline std::vector<MetricsRow> run_epochs(TrainedModel& tm, const Corpus& corpus, int epochs) {
  const TrainConfig& cfg = tm.cfg;
  std::map<std::string, RareLexicon> lexicons;
  if ((cfg.context.mode == ContextMode::biasing || cfg.context.mode == ContextMode::all) &&
      cfg.context.k_dt > 0)
    lexicons = build_lexicons(corpus, cfg.context);
  const auto bundles = build_all_bundles(corpus, cfg.context, lexicons, cfg.seed);

  const bool contrastive = cfg.contrastive_enabled && cfg.context.mode != ContextMode::none;
  std::vector<Tensor*> params = tm.model.projector().tensors();
  std::vector<std::string> param_names = {"projector.w1", "projector.b1", "projector.w2",
                                          "projector.b2"};
  std::vector<MetricsRow> metrics;

  for (int e = 0; e < epochs; ++e) {
    const auto batches =
        batch_iter(corpus, static_cast<std::size_t>(cfg.batch_size),
                   mix_seed(cfg.seed, "order", static_cast<std::uint64_t>(tm.epochs_done)),
                   cfg.shuffle);
    for (const auto& batch : batches) {
      ++tm.step;
      const double lr = lr_at(tm.step, cfg);

      Tensor ce_sum;
      std::vector<Tensor> speech_vecs, ctx_vecs;
      for (const auto& [di, ui] : batch.items) {
        const auto& d = corpus.dialogues[di];
        const auto fwd =
            forward_item(tm.model, d.utterances[ui], bundles[di][ui], cfg.context, contrastive);
        ce_sum = ce_sum.defined() ? add(ce_sum, fwd.ce) : fwd.ce;
        if (fwd.has_ctx) {
          speech_vecs.push_back(fwd.speech_vec);
          ctx_vecs.push_back(fwd.ctx_vec);
        }
      }
      const Tensor l_ce = scale(ce_sum, 1.0 / static_cast<double>(batch.items.size()));
      Tensor l_cl = Tensor::scalar(0.0);
      if (contrastive && !speech_vecs.empty()) {
        const auto sim = similarity_matrix(concat_rows(speech_vecs), concat_rows(ctx_vecs),
                                           cfg.alignment.tau);
        l_cl = infonce(sim);
      }
      const LossBreakdown lb = combined_loss(l_ce, l_cl, cfg.objective);
      if (!std::isfinite(lb.total))
        throw NumericError("train: non-finite loss at step " + std::to_string(tm.step) +
                           " (l_ce=" + std::to_string(lb.l_ce) +
                           ", l_cl=" + std::to_string(lb.l_cl) + ")");
      backward(lb.total_node);
      optimizer_step(params, param_names, tm.opt, lr, cfg);
      metrics.push_back({tm.step, lr, lb.l_ce, lb.l_cl, lb.alpha, lb.total});
    }
    ++tm.epochs_done;
  }
  return metrics;
}

struct TrainResult {
  TrainedModel model;
  std::vector<MetricsRow> metrics;
};

inline TrainResult train(const Corpus& corpus, TrainConfig cfg) {
  detail::validate_train_config(cfg);
  if (corpus.dialogues.empty()) throw DataError("train: empty corpus");
  if (cfg.dims.feature_dim == 0)
    cfg.dims.feature_dim = corpus.dialogues.front().utterances.front().features.feature_dim;

  TrainedModel tm{cfg,
                  Model(cfg.dims, ToyTokenizer::build(corpus), BackboneSeeds::derive(cfg.seed)),
                  AdamWState{},
                  0,
                  0};
  auto metrics = run_epochs(tm, corpus, cfg.epochs);
  return {std::move(tm), std::move(metrics)};
}

// ---------------------------------------------------------------------------
// Checkpoints: magic "CACK", version, section table with per-section FNV-1a
// checksums. Sections: config, tokenizer, backbone, projector, optimizer,
// trainstate.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline std::string serialize_context_config(const ContextConfig& c) {
  std::string buf;
  put_i64(buf, c.k_dh);
  put_i64(buf, c.k_hw);
  put_i64(buf, c.l_hw);
  put_i64(buf, c.k_dt);
  put_i64(buf, c.theta_rare);
  put_f64(buf, c.p_rare);
  put_u32(buf, static_cast<std::uint32_t>(c.mode));
  put_u32(buf, static_cast<std::uint32_t>(c.history_source));
  put_u32(buf, static_cast<std::uint32_t>(c.hotword_source));
  return buf;
}

inline ContextConfig deserialize_context_config(ByteReader& r) {
  ContextConfig c;
  c.k_dh = static_cast<int>(r.i64());
  c.k_hw = static_cast<int>(r.i64());
  c.l_hw = static_cast<int>(r.i64());
  c.k_dt = static_cast<int>(r.i64());
  c.theta_rare = static_cast<int>(r.i64());
  c.p_rare = r.f64();
  c.mode = static_cast<ContextMode>(r.u32());
  c.history_source = static_cast<ContextSource>(r.u32());
  c.hotword_source = static_cast<ContextSource>(r.u32());
  return c;
}

inline std::string serialize_train_config(const TrainConfig& c) {
  std::string buf;
  put_i64(buf, c.epochs);
  put_i64(buf, c.batch_size);
  put_f64(buf, c.base_lr);
  put_f64(buf, c.weight_decay);
  put_i64(buf, c.warmup_steps);
  put_f64(buf, c.adam_beta1);
  put_f64(buf, c.adam_beta2);
  put_f64(buf, c.adam_eps);
  put_u64(buf, c.seed);
  buf += serialize_context_config(c.context);
  put_u32(buf, c.contrastive_enabled ? 1 : 0);
  put_f64(buf, c.alignment.tau);
  put_f64(buf, c.objective.beta);
  put_u32(buf, c.objective.alpha_stop_gradient ? 1 : 0);
  put_u64(buf, c.dims.feature_dim);
  put_u64(buf, c.dims.e_a);
  put_u64(buf, c.dims.e_t);
  put_u64(buf, c.dims.k_down);
  put_u64(buf, c.dims.h_hid);
  put_u64(buf, c.dims.max_len);
  put_u32(buf, c.shuffle ? 1 : 0);
  return buf;
}

inline TrainConfig deserialize_train_config(ByteReader& r) {
  TrainConfig c;
  c.epochs = static_cast<int>(r.i64());
  c.batch_size = static_cast<int>(r.i64());
  c.base_lr = r.f64();
  c.weight_decay = r.f64();
  c.warmup_steps = static_cast<int>(r.i64());
  c.adam_beta1 = r.f64();
  c.adam_beta2 = r.f64();
  c.adam_eps = r.f64();
  c.seed = r.u64();
  c.context = deserialize_context_config(r);
  c.contrastive_enabled = r.u32() != 0;
  c.alignment.tau = r.f64();
  c.objective.beta = r.f64();
  c.objective.alpha_stop_gradient = r.u32() != 0;
  c.dims.feature_dim = r.u64();
  c.dims.e_a = r.u64();
  c.dims.e_t = r.u64();
  c.dims.k_down = r.u64();
  c.dims.h_hid = r.u64();
  c.dims.max_len = r.u64();
  c.shuffle = r.u32() != 0;
  return c;
}

}  // namespace detail

inline std::string encode_checkpoint(const TrainedModel& tm) {
  std::vector<std::pair<std::string, std::string>> sections;
  sections.emplace_back("config", detail::serialize_train_config(tm.cfg));
  sections.emplace_back("tokenizer", tm.model.tokenizer().serialize());
  {
    std::string backbone;
    put_u64(backbone, tm.model.seeds().encoder);
    put_u64(backbone, tm.model.seeds().embedder);
    put_u64(backbone, tm.model.seeds().decoder);
    put_u64(backbone, tm.model.seeds().projector);
    sections.emplace_back("backbone", std::move(backbone));
  }
  sections.emplace_back("projector", tm.model.projector().serialize());
  sections.emplace_back("optimizer", tm.opt.serialize());
  {
    std::string state;
    put_i64(state, tm.step);
    put_i64(state, tm.epochs_done);
    sections.emplace_back("trainstate", std::move(state));
  }

  std::string buf;
  buf += "CACK";
  put_u32(buf, kCheckpointVersion);
  put_u32(buf, static_cast<std::uint32_t>(sections.size()));
  for (const auto& [name, payload] : sections) {
    put_str(buf, name);
    put_u64(buf, payload.size());
    put_u64(buf, fnv1a64(payload));
    buf += payload;
  }
  return buf;
}

inline TrainedModel decode_checkpoint(std::string_view buf) {
  ByteReader r(buf);
  if (buf.size() < 4 || r.raw(4) != "CACK")
    throw DataError("checkpoint: bad magic (want CACK)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion)
    throw DataError("checkpoint: version mismatch (file v" + std::to_string(version) +
                    ", tool v" + std::to_string(kCheckpointVersion) + ")");
  const std::uint32_t n = r.u32();
  std::map<std::string, std::string> sections;
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::string name = r.str();
    const std::uint64_t len = r.u64();
    const std::uint64_t sum = r.u64();
    const std::string payload(r.raw(len));
    if (fnv1a64(payload) != sum)
      throw DataError("checkpoint: corrupt payload in section \"" + name + "\"");
    sections[name] = payload;
  }
  auto section = [&](const char* name) -> const std::string& {
    auto it = sections.find(name);
    if (it == sections.end())
      throw DataError("checkpoint: missing section \"" + std::string(name) + "\"");
    return it->second;
  };

  ByteReader cfg_r(section("config"));
  const TrainConfig cfg = detail::deserialize_train_config(cfg_r);
  ByteReader tok_r(section("tokenizer"));
  ToyTokenizer tok = ToyTokenizer::deserialize(tok_r);
  ByteReader bb_r(section("backbone"));
  BackboneSeeds seeds;
  seeds.encoder = bb_r.u64();
  seeds.embedder = bb_r.u64();
  seeds.decoder = bb_r.u64();
  seeds.projector = bb_r.u64();

  TrainedModel tm{cfg, Model(cfg.dims, std::move(tok), seeds), AdamWState{}, 0, 0};
  ByteReader proj_r(section("projector"));
  tm.model.projector() = ProjectorParams::deserialize(proj_r);
  ByteReader opt_r(section("optimizer"));
  tm.opt = AdamWState::deserialize(opt_r);
  ByteReader st_r(section("trainstate"));
  tm.step = st_r.i64();
  tm.epochs_done = static_cast<int>(st_r.i64());
  return tm;
}

inline void save_checkpoint(const TrainedModel& tm, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  const std::string buf = encode_checkpoint(tm);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
}

inline TrainedModel load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open checkpoint " + path.string());
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(buf);
}

}  // namespace ctxasr
