#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ctxasr/tensor.hpp"

namespace ctxasr {

struct ObjectiveConfig {
  double beta = 1.0;               // fixed CE weight
  bool alpha_stop_gradient = true; // treat alpha as a measured constant
};

// Mean negative log-likelihood over the scored positions of [L,V] logits.
// Unscored rows (prompt/speech-aligned) contribute nothing; gradient is
// (softmax - onehot) / n_scored on scored rows.
inline Tensor cross_entropy(const Tensor& logits, std::span<const std::uint32_t> targets,
                            const std::vector<bool>& mask) {
  if (logits.rank() != 2)
    throw ShapeError("cross_entropy: want [L,V] logits, got " + shape_str(logits.shape()));
  const std::size_t l = logits.dim(0), v = logits.dim(1);
  if (targets.size() != l || mask.size() != l)
    throw DataError("cross_entropy: got " + std::to_string(l) + " logit rows, " +
                    std::to_string(targets.size()) + " targets, " + std::to_string(mask.size()) +
                    " mask flags");
  std::size_t scored = 0;
  for (std::size_t i = 0; i < l; ++i) scored += mask[i] ? 1 : 0;
  if (scored == 0) throw DataError("cross_entropy: empty mask (no scored positions)");

  double loss = 0;
  for (std::size_t i = 0; i < l; ++i) {
    if (!mask[i]) continue;
    if (targets[i] >= v)
      throw DataError("cross_entropy: target id " + std::to_string(targets[i]) +
                      " out of range at position " + std::to_string(i));
    const double* row = logits.data().data() + i * v;
    double mx = row[0];
    for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
    double sum = 0;
    for (std::size_t j = 0; j < v; ++j) sum += std::exp(row[j] - mx);
    loss += (mx + std::log(sum)) - row[targets[i]];
  }
  loss /= static_cast<double>(scored);

  auto ln = logits.node();
  std::vector<std::uint32_t> tgt(targets.begin(), targets.end());
  std::vector<char> keep(l);
  for (std::size_t i = 0; i < l; ++i) keep[i] = mask[i] ? 1 : 0;
  auto node = detail::make_node(
      {1}, {loss}, {ln}, [ln, tgt, keep, l, v, scored](Tensor::Node& self) {
        detail::ensure_grad(*ln);
        const double g = self.grad[0] / static_cast<double>(scored);
        for (std::size_t i = 0; i < l; ++i) {
          if (!keep[i]) continue;
          const double* row = ln->value.data() + i * v;
          double mx = row[0];
          for (std::size_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
          double sum = 0;
          for (std::size_t j = 0; j < v; ++j) sum += std::exp(row[j] - mx);
          for (std::size_t j = 0; j < v; ++j) {
            const double p = std::exp(row[j] - mx) / sum;
            ln->grad[i * v + j] += g * (p - (j == tgt[i] ? 1.0 : 0.0));
          }
        }
      });
  return Tensor::wrap(node);
}

struct LossBreakdown {
  double l_ce = 0;
  double l_cl = 0;
  double alpha = 0;
  double total = 0;
  Tensor total_node;  // differentiable combination for backward
};

// L = beta * L_CE + alpha * L_CL with alpha = L_CL / (L_CE + L_CL), taken as
// 0 when both losses are 0. With alpha_stop_gradient the weight is a plain
// measured scalar; otherwise the balance term itself is differentiated.
inline LossBreakdown combined_loss(const Tensor& l_ce, const Tensor& l_cl,
                                   const ObjectiveConfig& cfg) {
  const double ce = l_ce.item();
  const double cl = l_cl.item();
  if (ce < 0 || cl < 0)
    throw NumericError("combined_loss: negative loss input (l_ce=" + std::to_string(ce) +
                       ", l_cl=" + std::to_string(cl) + ")");
  LossBreakdown out;
  out.l_ce = ce;
  out.l_cl = cl;
  out.alpha = (ce + cl) > 0 ? cl / (ce + cl) : 0.0;
  out.total = cfg.beta * ce + out.alpha * cl;
  if (cfg.alpha_stop_gradient || ce + cl <= 0) {
    out.total_node = add(scale(l_ce, cfg.beta), scale(l_cl, out.alpha));
  } else {
    out.total_node = add(scale(l_ce, cfg.beta), mul(div(l_cl, add(l_ce, l_cl)), l_cl));
  }
  return out;
}

}  // namespace ctxasr
