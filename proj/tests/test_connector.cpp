#include <catch2/catch_amalgamated.hpp>

#include "ctxasr/connector.hpp"
#include "ctxasr/gradcheck.hpp"

using namespace ctxasr;

TEST_CASE("downsample_stack shapes and padding") {
  SECTION("paper shape: T=8, E_a=2, K=4 -> 2 x 8") {
    Tensor x = Tensor::zeros({8, 2});
    REQUIRE(downsample_stack(x, 4).shape() == Shape{2, 8});
  }
  SECTION("concatenation order") {
    Tensor x = Tensor::from({4, 1}, {1, 2, 3, 4});
    REQUIRE(downsample_stack(x, 4).data() == std::vector<double>{1, 2, 3, 4});
  }
  SECTION("T=5, K=4: second group is the fifth frame plus zeros") {
    Tensor x = Tensor::from({5, 1}, {1, 2, 3, 4, 5});
    const Tensor y = downsample_stack(x, 4);
    REQUIRE(y.shape() == Shape{2, 4});
    REQUIRE(y.data() == std::vector<double>{1, 2, 3, 4, 5, 0, 0, 0});
  }
  SECTION("time-length law: ceil(T/K) for all T") {
    for (std::size_t t = 1; t <= 17; ++t)
      REQUIRE(downsample_stack(Tensor::zeros({t, 3}), 4).dim(0) == (t + 3) / 4);
  }
  SECTION("group locality: frame i only touches group floor((i-1)/K)") {
    Rng rng(4);
    std::vector<double> base(9 * 2);
    for (auto& v : base) v = rng.normal();
    const Tensor y0 = downsample_stack(Tensor::from({9, 2}, base), 4);
    for (std::size_t frame = 0; frame < 9; ++frame) {
      auto mod = base;
      mod[frame * 2] += 1.0;
      const Tensor y1 = downsample_stack(Tensor::from({9, 2}, mod), 4);
      const std::size_t want_group = frame / 4;
      for (std::size_t g = 0; g < y0.dim(0); ++g) {
        bool changed = false;
        for (std::size_t j = 0; j < y0.dim(1); ++j)
          changed = changed || y0.data()[g * y0.dim(1) + j] != y1.data()[g * y1.dim(1) + j];
        REQUIRE(changed == (g == want_group));
      }
    }
  }
}

TEST_CASE("init_projector: seeded Xavier weights, zero biases") {
  const auto p = init_projector(4, 2, 0, 6, 9);
  REQUIRE(p.h_hid == 8);  // default E_a * K_down
  REQUIRE(p.w1.shape() == Shape{8, 8});
  REQUIRE(p.w2.shape() == Shape{8, 6});
  for (double v : p.b1.data()) REQUIRE(v == 0.0);
  for (double v : p.b2.data()) REQUIRE(v == 0.0);

  const double bound1 = std::sqrt(6.0 / (8 + 8));
  for (double v : p.w1.data()) {
    REQUIRE(v <= bound1);
    REQUIRE(v >= -bound1);
  }
  const auto q = init_projector(4, 2, 0, 6, 9);
  REQUIRE(q.w1.data() == p.w1.data());
  REQUIRE(q.w2.data() == p.w2.data());
  REQUIRE(init_projector(4, 2, 0, 6, 10).w1.data() != p.w1.data());
  for (const auto* t : p.tensors()) REQUIRE(t->requires_grad());
}

TEST_CASE("project: zero input with zero biases gives zero output") {
  auto p = init_projector(3, 2, 5, 4, 1);
  const Tensor out = project(Tensor::zeros({2, 6}), p);
  for (double v : out.data()) REQUIRE(v == 0.0);
  REQUIRE(out.shape() == Shape{2, 4});
}

TEST_CASE("project composition sanity with identity-like weights") {
  ProjectorParams p;
  p.e_a = 2;
  p.k_down = 1;
  p.h_hid = 2;
  p.e_t = 2;
  p.w1 = Tensor::from({2, 2}, {1, 0, 0, 1});
  p.b1 = Tensor::zeros({2});
  p.w2 = Tensor::from({2, 2}, {1, 0, 0, 1});
  p.b2 = Tensor::from({2}, {0.5, -0.5});
  const Tensor x = Tensor::from({1, 2}, {1.0, -1.0});
  const Tensor out = project(x, p);
  const Tensor g = gelu(x);
  REQUIRE(out.data()[0] == Catch::Approx(g.data()[0] + 0.5).margin(1e-12));
  REQUIRE(out.data()[1] == Catch::Approx(g.data()[1] - 0.5).margin(1e-12));
}

TEST_CASE("project gradients pass finite differences for all four params") {
  auto p = init_projector(3, 2, 4, 5, 2);
  Rng rng(3);
  std::vector<double> xv(4 * 6);
  for (auto& v : xv) v = rng.normal();
  const Tensor x = Tensor::from({4, 6}, xv);

  auto check_param = [&](Tensor& param) {
    auto f = [&](const Tensor&) { return sum(project(x, p)); };
    return grad_check(f, param, 1e-5).max_rel_err;
  };
  REQUIRE(check_param(p.w1) < 1e-4);
  REQUIRE(check_param(p.b1) < 1e-4);
  REQUIRE(check_param(p.w2) < 1e-4);
  REQUIRE(check_param(p.b2) < 1e-4);
}

TEST_CASE("projector serialization round trips") {
  const auto p = init_projector(3, 4, 0, 5, 77);
  const std::string bytes = p.serialize();
  ByteReader r(bytes);
  const auto q = ProjectorParams::deserialize(r);
  REQUIRE(q.e_a == p.e_a);
  REQUIRE(q.k_down == p.k_down);
  REQUIRE(q.h_hid == p.h_hid);
  REQUIRE(q.e_t == p.e_t);
  REQUIRE(q.w1.data() == p.w1.data());
  REQUIRE(q.b2.data() == p.b2.data());
  REQUIRE(q.w1.requires_grad());
  REQUIRE(q.checksum() == p.checksum());
}
