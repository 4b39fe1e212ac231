#include <doctest.h>

#include <cmath>

#include "sfv/autograd.hpp"
#include "sfv/diffusion_math.hpp"
#include "sfv/losses.hpp"
#include "sfv/nets.hpp"
#include "objectives_fixture.hpp"
#include "test_util.hpp"

using namespace sfv;
using namespace sfv::testing;

namespace {

Tensor vec(std::vector<double> v) {
  const auto n = static_cast<std::int64_t>(v.size());
  return Tensor::from_doubles({n}, std::move(v));
}

// Per-sample sum -> [B].
Tensor row_sum(const Tensor& x) {
  const std::int64_t b = x.size(0);
  return reshape(sum_axis(reshape(x, {b, -1}), 1), {b});
}

}  // namespace

TEST_CASE("dsm_loss") {
  Rng rng = make_rng(1);
  const Tensor x0 = randn({4, 2, 1, 3, 3}, rng, DType::f64);
  const Tensor eps = randn(x0.shape(), rng, DType::f64);
  const Conditioning cond;
  const std::vector<double> sig{0.3, 1.0, 2.0, 7.0};

  DenoiseFn perfect = [&](const Tensor&, std::span<const double>, const Conditioning&) { return x0; };
  CHECK(dsm_loss(perfect, x0, sig, eps, cond).item() == 0.0);

  // Identity denoiser at sigma = 1: lambda * E|eps|^2 = 2 per element.
  DenoiseFn identity = [](const Tensor& x, std::span<const double>, const Conditioning&) { return x; };
  const Tensor big = randn({8, 1, 1, 250, 250}, rng, DType::f64);
  const Tensor big_eps = randn(big.shape(), rng, DType::f64);
  const std::vector<double> ones(8, 1.0);
  const double v = dsm_loss(identity, big, ones, big_eps, cond).item();
  MESSAGE("identity dsm at sigma 1: " << v);
  CHECK(std::abs(v - 2.0) <= 0.04);

  // Matches the direct per-element evaluation with per-sample weights.
  DenoiseFn half = [](const Tensor& x, std::span<const double>, const Conditioning&) { return x * 0.5; };
  double ref = 0.0;
  const std::int64_t per = x0.numel() / 4;
  for (std::int64_t b = 0; b < 4; ++b) {
    const double s = sig[b];
    for (std::int64_t i = 0; i < per; ++i) {
      const double x = x0.flat(b * per + i), e = eps.flat(b * per + i);
      const double r = 0.5 * (x + s * e) - x;
      ref += (s * s + 1.0) / (s * s) * r * r;
    }
  }
  ref /= static_cast<double>(x0.numel());
  const double got = dsm_loss(half, x0, sig, eps, cond).item();
  CHECK(got >= 0.0);
  CHECK(std::abs(got - ref) <= 1e-12 * ref);

  const std::vector<double> bad{1.0, 0.0, 1.0, 1.0};
  CHECK_THROWS_AS(dsm_loss(identity, x0, bad, eps, cond), Error);
  const std::vector<double> negative{1.0, -0.5, 1.0, 1.0};
  CHECK_THROWS_AS(dsm_loss(identity, x0, negative, eps, cond), Error);
}

TEST_CASE("hinge_g_loss") {
  CHECK(hinge_g_loss(vec({2.0, -2.0})).item() == 0.0);
  CHECK(hinge_g_loss(vec({-3.0})).item() == -3.0);
  CHECK_THROWS_AS(hinge_g_loss(Tensor::zeros({0}, DType::f64)), Error);

  Tensor s = vec({0.3, -1.7, 2.2, 5.0});
  s.requires_grad_(true);
  autograd::GradMode on(true);
  const Tensor g = autograd::grad(hinge_g_loss(s), {s})[0];
  for (std::int64_t i = 0; i < 4; ++i) CHECK(g.flat(i) == doctest::Approx(0.25).epsilon(1e-15));
  const auto fd = grad_check([&] { return hinge_g_loss(s); }, {s});
  CHECK(fd.rel_err <= 1e-8);
}

TEST_CASE("hinge_d_loss") {
  const Tensor zero = Tensor::scalar(0.0, DType::f64);
  CHECK(hinge_d_loss(vec({-1.0}), vec({1.0}), zero, 0.01).item() == 0.0);
  CHECK(hinge_d_loss(vec({0.0}), vec({0.0}), zero, 0.0).item() == 2.0);
  const double v = hinge_d_loss(vec({-2.0}), vec({0.5}), Tensor::scalar(4.0, DType::f64), 0.01).item();
  CHECK(std::abs(v - 0.54) <= 1e-15);
  CHECK_THROWS_AS(hinge_d_loss(vec({0.0}), vec({0.0}), zero, -1e-3), Error);

  const HingeTerms h = hinge_d_terms(vec({-0.5, 0.5}), vec({0.0, 3.0}), Tensor::scalar(2.0, DType::f64), 0.1);
  CHECK(h.real.item() == doctest::Approx(1.0));
  CHECK(h.fake.item() == doctest::Approx(0.5));
  CHECK(h.total.item() == doctest::Approx(1.7));

  // Non-increasing in each fake score and in each negated real score.
  Rng rng = make_rng(4);
  std::normal_distribution<double> n(0.0, 2.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> r{n(rng), n(rng), n(rng)}, f{n(rng), n(rng), n(rng)};
    const double base = hinge_d_loss(vec(r), vec(f), zero, 0.0).item();
    CHECK(base >= 0.0);
    auto f2 = f;
    f2[trial % 3] += 0.7;
    auto r2 = r;
    r2[trial % 3] -= 0.7;
    CHECK(hinge_d_loss(vec(r), vec(f2), zero, 0.0).item() <= base);
    CHECK(hinge_d_loss(vec(r2), vec(f), zero, 0.0).item() <= base);
  }
}

TEST_CASE("r1_penalty") {
  Tensor w = Tensor::from_doubles({1, 2}, {3.0, 4.0});
  ScoreFn linear = [&](const Tensor& x) { return row_sum(x * w); };
  const Tensor x = Tensor::from_doubles({1, 2}, {0.7, -1.1});
  CHECK(r1_penalty(linear, x).item() == doctest::Approx(25.0).epsilon(1e-14));

  ScoreFn constant = [](const Tensor& x) { return row_sum(x * 0.0) + 1.5; };
  CHECK(r1_penalty(constant, x).item() == 0.0);
  ScoreFn detached = [](const Tensor& x) { return Tensor::full({x.size(0)}, 2.0, DType::f64); };
  CHECK(r1_penalty(detached, x).item() == 0.0);

  // Quadratic: grad 2x per sample, penalty = mean_b 4|x_b|^2.
  Rng rng = make_rng(5);
  Tensor xq = randn({3, 2, 1, 2, 2}, rng, DType::f64);
  ScoreFn quad = [](const Tensor& x) { return row_sum(square(x)); };
  double ref = 0.0;
  for (std::int64_t i = 0; i < xq.numel(); ++i) ref += 4.0 * xq.flat(i) * xq.flat(i);
  ref /= 3.0;
  CHECK(r1_penalty(quad, xq).item() == doctest::Approx(ref).epsilon(1e-13));

  const double fd = fd_penalty(quad, xq);
  CHECK(std::abs(r1_penalty(quad, xq).item() - fd) <= 1e-4 * fd);

  // Penalty shares the forward pass with the returned scores.
  const ScoredR1 sr = score_with_r1(quad, xq);
  autograd::NoGrad off;
  CHECK(max_abs_diff(sr.scores, quad(xq)) == 0.0);

  ScoreFn blowup = [](const Tensor& x) { return row_sum(x * std::numeric_limits<double>::infinity()); };
  CHECK_THROWS_AS(r1_penalty(blowup, x), Error);
}

TEST_CASE("pseudo_huber") {
  Rng rng = make_rng(6);
  const Tensor a = randn({2, 3, 1, 4, 4}, rng, DType::f64);
  CHECK(pseudo_huber(a, a, 0.5).item() == 0.0);
  CHECK(pseudo_huber(a, a, 1e-9).item() == 0.0);

  const Tensor ones = Tensor::from_doubles({1, 3}, {1.0, 1.0, 1.0});
  const Tensor zeros = Tensor::zeros({1, 3}, DType::f64);
  CHECK(pseudo_huber(ones, zeros, 1.0).item() == doctest::Approx(1.0).epsilon(1e-15));

  // Large residual: approaches |r| - c, so the offset from |r| itself is c / |r|.
  const Tensor big = Tensor::from_doubles({1, 2}, {600.0, 800.0});
  const Tensor z2 = Tensor::zeros({1, 2}, DType::f64);
  const double ph = pseudo_huber(big, z2, 0.03).item();
  CHECK(std::abs(ph - (1000.0 - 0.03)) / 1000.0 < 1e-6);
  CHECK(std::abs(ph - 1000.0) / 1000.0 <= 0.03 / 1000.0);
  // Ratios 1e3 and 1e-3 of c.
  const double c = 0.2;
  const Tensor r_large = Tensor::from_doubles({1, 1}, {1e3 * c});
  const Tensor r_small = Tensor::from_doubles({1, 1}, {1e-3 * c});
  const Tensor z1 = Tensor::zeros({1, 1}, DType::f64);
  CHECK(std::abs(pseudo_huber(r_large, z1, c).item() / (1e3 * c) - 1.0) < 1.1e-3);
  const double small_ref = 0.5 * (1e-3 * c) * (1e-3 * c) / c;
  CHECK(std::abs(pseudo_huber(r_small, z1, c).item() / small_ref - 1.0) < 1e-6);

  CHECK_THROWS_AS(pseudo_huber(a, a, 0.0), Error);
  CHECK_THROWS_AS(pseudo_huber(a, a, -1.0), Error);
  CHECK_THROWS_AS(pseudo_huber(a, zeros, 1.0), Error);

  // Per-sample norm, then batch mean.
  const Tensor b = randn(a.shape(), rng, DType::f64);
  double ref = 0.0;
  const std::int64_t per = a.numel() / 2;
  for (std::int64_t s = 0; s < 2; ++s) {
    double n2 = 0.0;
    for (std::int64_t i = 0; i < per; ++i) n2 += std::pow(a.flat(s * per + i) - b.flat(s * per + i), 2);
    ref += std::sqrt(n2 + 0.09) - 0.3;
  }
  CHECK(pseudo_huber(a, b, 0.3).item() == doctest::Approx(ref / 2.0).epsilon(1e-14));
  CHECK(pseudo_huber_c(a) == doctest::Approx(0.03 * std::sqrt(48.0)));

  Tensor bb = big.clone();
  bb.requires_grad_(true);
  CHECK(grad_check([&] { return pseudo_huber(bb, z2, 0.03); }, {bb}, 1e-4).rel_err <= 1e-6);
  Tensor aa = a.clone();
  aa.requires_grad_(true);
  CHECK(grad_check([&] { return pseudo_huber(aa, b, 0.3); }, {aa}).rel_err <= 1e-6);
}

TEST_CASE("generator_total") {
  const auto s = [](double v) { return Tensor::scalar(v, DType::f64); };
  CHECK(generator_total(s(1.0), s(2.0), 0.1).item() == doctest::Approx(1.2).epsilon(1e-15));
  CHECK(generator_total(s(-0.7), s(5.0), 0.0).item() == -0.7);
  CHECK_THROWS_AS(generator_total(s(1.0), s(1.0), -0.1), Error);

  // Gradient splits additively between the two terms on a stub graph.
  Tensor p = Tensor::from_doubles({3}, {0.4, -1.2, 2.0});
  p.requires_grad_(true);
  auto adv = [&] { return sum(p * p * p); };
  auto rec = [&] { return sum(sqrt(p * p + 1.0)); };
  autograd::GradMode on(true);
  const Tensor g_tot = autograd::grad(generator_total(adv(), rec(), 0.1), {p})[0];
  const Tensor g_adv = autograd::grad(adv(), {p})[0];
  const Tensor g_rec = autograd::grad(rec(), {p})[0];
  for (std::int64_t i = 0; i < 3; ++i) CHECK(g_tot.flat(i) == doctest::Approx(g_adv.flat(i) + 0.1 * g_rec.flat(i)));
  CHECK(grad_check([&] { return generator_total(adv(), rec(), 0.1); }, {p}).rel_err <= 1e-8);
}


TEST_CASE("generator loss gradient through heads, backbone and generator") {
  ObjectivesSetup s;
  CHECK(s.gen.parameter_count() <= 1000);
  const auto g = grad_check([&] { return s.loss_g(); }, leaf_params(s.gen.parameters()));
  MESSAGE("L_G generator params: rel err " << g.rel_err << " over " << g.checked << ", |g| " << g.analytic_norm);
  CHECK(g.analytic_norm > 0.0);
  CHECK(g.rel_err <= 1e-4);

  // The adversarial part alone reaches the generator through the frozen
  // discriminator.
  const auto adv_only = grad_check(
      [&] {
        const Tensor x_hat = s.fake();
        return hinge_g_loss(s.disc.score(forward_diffuse(x_hat, s.sigma_d, s.eps_d), s.sigma_d, s.cond));
      },
      leaf_params(s.gen.parameters()), 1e-6, 7);
  CHECK(adv_only.analytic_norm > 0.0);
  CHECK(adv_only.rel_err <= 1e-4);

  // Heads are trainable leaves, the backbone is frozen.
  for (const auto& [n, t] : s.disc.head_parameters()) CHECK(t.requires_grad());
  for (const auto& [n, t] : s.disc.backbone_parameters()) CHECK_FALSE(t.requires_grad());
}

TEST_CASE("discriminator loss gradient including R1") {
  ObjectivesSetup s;
  Tensor fake;
  {
    autograd::NoGrad off;
    fake = s.fake();
  }
  const auto heads = leaf_params(s.disc.head_parameters());
  const auto gd = grad_check([&] { return s.loss_d(fake, 0.01); }, heads);
  MESSAGE("L_D head params: rel err " << gd.rel_err << " over " << gd.checked);
  CHECK(gd.analytic_norm > 0.0);
  CHECK(gd.rel_err <= 1e-4);

  // R1 alone (large gamma makes it dominate), which exercises the double backward.
  const auto gr = grad_check(
      [&] {
        const Tensor real_pre = forward_diffuse(s.x0, s.sigma_d, s.eps_real) * s.scale();
        ScoreFn score = [&](const Tensor& x) { return s.disc.score_preconditioned(x, s.sigma_d, s.cond); };
        return r1_penalty(score, real_pre, true);
      },
      heads);
  MESSAGE("R1 head params: rel err " << gr.rel_err << ", |g| " << gr.analytic_norm);
  CHECK(gr.analytic_norm > 0.0);
  CHECK(gr.rel_err <= 1e-4);

  // Backbone rules, checked by temporarily making the frozen weights trainable.
  const auto backbone = leaf_params(s.disc.backbone_parameters());
  for (Tensor t : backbone) t.requires_grad_(true);
  const auto gb = grad_check([&] { return s.loss_d(fake, 0.01); }, backbone, 1e-6, 3);
  MESSAGE("L_D backbone params: rel err " << gb.rel_err << " over " << gb.checked);
  CHECK(gb.analytic_norm > 0.0);
  CHECK(gb.rel_err <= 1e-4);
  const auto gbg = grad_check([&] { return s.loss_g(); }, backbone, 1e-6, 3);
  CHECK(gbg.rel_err <= 1e-4);
  for (Tensor t : backbone) t.requires_grad_(false);

  // The penalty value against finite-difference input gradients.
  const Tensor real_pre = forward_diffuse(s.x0, s.sigma_d, s.eps_real) * s.scale();
  ScoreFn score = [&](const Tensor& x) { return s.disc.score_preconditioned(x, s.sigma_d, s.cond); };
  const double fd = fd_penalty(score, real_pre);
  const double r1 = r1_penalty(score, real_pre).item();
  MESSAGE("R1 " << r1 << " vs finite differences " << fd);
  CHECK(fd > 0.0);
  CHECK(std::abs(r1 - fd) <= 1e-4 * fd);
}

TEST_CASE("losses stay finite on a random mini configuration") {
  ObjectivesSetup s;
  autograd::NoGrad off;
  const double lg = s.loss_g().item();
  CHECK(std::isfinite(lg));
  const double ld = s.loss_d(s.fake(), 0.01).item();
  CHECK(std::isfinite(ld));
  CHECK(ld >= 0.0);
}
