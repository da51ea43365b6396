#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "ctxasr/tensor.hpp"

namespace ctxasr {

struct AlignmentConfig {
  double tau = 0.07;  // temperature
};

struct SimilarityMatrix {
  Tensor s;  // [B,B]
  double tau = 0.07;
};

// Masked mean over time followed by L2 normalization; [T,E] -> unit [E].
inline Tensor pool_normalize(const Tensor& h, const std::vector<bool>* mask = nullptr) {
  return l2_normalize_last_dim(mean_pool_time(h, mask));
}

// S[t,q] = speech_t . ctx_q / tau over unit-normalized rows.
inline SimilarityMatrix similarity_matrix(const Tensor& speech_vecs, const Tensor& ctx_vecs,
                                          double tau) {
  if (tau <= 0) throw NumericError("similarity_matrix: tau must be positive");
  check_shapes(speech_vecs.rank() == 2 && ctx_vecs.rank() == 2 &&
                   speech_vecs.shape() == ctx_vecs.shape(),
               "similarity_matrix", speech_vecs.shape(), ctx_vecs.shape());
  auto check_unit = [](const Tensor& m, const char* which) {
    const std::size_t rows = m.dim(0), cols = m.dim(1);
    for (std::size_t i = 0; i < rows; ++i) {
      double ss = 0;
      for (std::size_t j = 0; j < cols; ++j) {
        const double v = m.data()[i * cols + j];
        ss += v * v;
      }
      if (std::fabs(std::sqrt(ss) - 1.0) > 1e-6)
        throw NumericError(std::string("similarity_matrix: ") + which + " row " +
                           std::to_string(i) + " is not unit-norm (|x|=" +
                           std::to_string(std::sqrt(ss)) + ")");
    }
  };
  check_unit(speech_vecs, "speech");
  check_unit(ctx_vecs, "context");
  return {scale(matmul_nt(speech_vecs, ctx_vecs), 1.0 / tau), tau};
}

// Speech-anchored InfoNCE with log-sum-exp stabilization:
//   L = -(1/B) sum_t log( exp(S[t,t]) / sum_q exp(S[t,q]) ).
// B=1 gives exactly 0. Gradient: dL/dS[t,q] = (softmax(S_t)_q - [t==q]) / B.
inline Tensor infonce(const Tensor& s) {
  if (s.rank() != 2 || s.dim(0) != s.dim(1))
    throw ShapeError("infonce: want square similarity matrix, got " + shape_str(s.shape()));
  const std::size_t b = s.dim(0);
  double loss = 0;
  for (std::size_t t = 0; t < b; ++t) {
    const double* row = s.data().data() + t * b;
    double mx = row[0];
    for (std::size_t q = 1; q < b; ++q) mx = std::max(mx, row[q]);
    double sum = 0;
    for (std::size_t q = 0; q < b; ++q) sum += std::exp(row[q] - mx);
    loss += (mx + std::log(sum)) - row[t];
  }
  loss /= static_cast<double>(b);

  auto sn = s.node();
  auto node = detail::make_node({1}, {loss}, {sn}, [sn, b](Tensor::Node& self) {
    detail::ensure_grad(*sn);
    const double g = self.grad[0] / static_cast<double>(b);
    for (std::size_t t = 0; t < b; ++t) {
      const double* row = sn->value.data() + t * b;
      double mx = row[0];
      for (std::size_t q = 1; q < b; ++q) mx = std::max(mx, row[q]);
      double sum = 0;
      for (std::size_t q = 0; q < b; ++q) sum += std::exp(row[q] - mx);
      for (std::size_t q = 0; q < b; ++q) {
        const double p = std::exp(row[q] - mx) / sum;
        sn->grad[t * b + q] += g * (p - (q == t ? 1.0 : 0.0));
      }
    }
  });
  return Tensor::wrap(node);
}

inline Tensor infonce(const SimilarityMatrix& s) { return infonce(s.s); }

}  // namespace ctxasr
