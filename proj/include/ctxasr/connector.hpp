#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "ctxasr/backbone.hpp"
#include "ctxasr/rng.hpp"
#include "ctxasr/tensor.hpp"

namespace ctxasr {

// The only trainable state: two affine layers bridging the stacked encoder
// features into the decoder embedding space.
struct ProjectorParams {
  std::size_t e_a = 0, k_down = 0, h_hid = 0, e_t = 0;
  Tensor w1, b1, w2, b2;

  std::vector<Tensor*> tensors() { return {&w1, &b1, &w2, &b2}; }
  std::vector<const Tensor*> tensors() const { return {&w1, &b1, &w2, &b2}; }

  static const char* name_of(std::size_t i) {
    static const char* names[] = {"w1", "b1", "w2", "b2"};
    return names[i];
  }

  std::uint64_t checksum() const { return detail::weights_checksum({&w1, &b1, &w2, &b2}); }

  std::string serialize() const {
    std::string buf;
    put_u64(buf, e_a);
    put_u64(buf, k_down);
    put_u64(buf, h_hid);
    put_u64(buf, e_t);
    for (const auto* t : tensors()) detail::serialize_tensor(buf, *t);
    return buf;
  }

  static ProjectorParams deserialize(ByteReader& r) {
    ProjectorParams p;
    p.e_a = r.u64();
    p.k_down = r.u64();
    p.h_hid = r.u64();
    p.e_t = r.u64();
    p.w1 = detail::deserialize_tensor(r, /*requires_grad=*/true);
    p.b1 = detail::deserialize_tensor(r, /*requires_grad=*/true);
    p.w2 = detail::deserialize_tensor(r, /*requires_grad=*/true);
    p.b2 = detail::deserialize_tensor(r, /*requires_grad=*/true);
    return p;
  }
};

// Xavier-uniform weights, zero biases. h_hid == 0 selects the default hidden
// width E_a * K_down.
inline ProjectorParams init_projector(std::size_t e_a, std::size_t k_down, std::size_t h_hid,
                                      std::size_t e_t, std::uint64_t seed) {
  if (e_a == 0 || k_down == 0 || e_t == 0) throw DataError("init_projector: zero dimension");
  if (h_hid == 0) h_hid = e_a * k_down;
  ProjectorParams p;
  p.e_a = e_a;
  p.k_down = k_down;
  p.h_hid = h_hid;
  p.e_t = e_t;
  const std::size_t in = e_a * k_down;
  p.w1 = detail::seeded_xavier(in, h_hid, mix_seed(seed, "proj-w1"));
  p.b1 = Tensor::zeros({h_hid});
  p.w2 = detail::seeded_xavier(h_hid, e_t, mix_seed(seed, "proj-w2"));
  p.b2 = Tensor::zeros({e_t});
  for (auto* t : p.tensors()) {
    auto n = t->node();
    n->requires_grad = true;
  }
  return p;
}

// Frame stacking by k_down with zero-padded tail: [T,E_a] -> [ceil(T/k), E_a*k].
inline Tensor downsample_stack(const Tensor& h_raw, std::size_t k_down) {
  return stack_frames(h_raw, k_down);
}

// H_spe = gelu(H_stacked W1 + b1) W2 + b2.
inline Tensor project(const Tensor& h_stacked, const ProjectorParams& p) {
  return add(matmul(gelu(add(matmul(h_stacked, p.w1), p.b1)), p.w2), p.b2);
}

}  // namespace ctxasr
