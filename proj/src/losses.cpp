#include "sfv/losses.hpp"

#include <cmath>

#include "sfv/autograd.hpp"
#include "sfv/diffusion_math.hpp"

namespace sfv {

namespace {

Tensor per_sample_sum(const Tensor& x) {
  const std::int64_t b = x.size(0);
  return reshape(sum_axis(reshape(x, {b, -1}), 1), {b});
}

void require_finite(const Tensor& t, const char* what) {
  for (double v : t.to_vector()) {
    if (!std::isfinite(v)) fail(ErrorCode::diverged, std::string(what) + " is not finite");
  }
}

}  // namespace

Tensor dsm_loss(const DenoiseFn& denoiser, const Tensor& x0, std::span<const double> sigma, const Tensor& eps,
                const Conditioning& cond) {
  std::vector<double> weight;
  for (double s : sigma) {
    require(s > 0.0 && std::isfinite(s), "dsm_loss needs positive sigma");
    weight.push_back((s * s + 1.0) / (s * s));
  }
  Tensor x = forward_diffuse(x0, sigma, eps);
  Tensor r = denoiser(x, sigma, cond) - x0;
  return mean(square(r) * per_sample(weight, x0.rank(), x0.dtype()));
}

Tensor hinge_g_loss(const Tensor& fake_scores) {
  require(fake_scores.defined() && fake_scores.numel() > 0, "hinge_g_loss needs scores");
  return mean(fake_scores);
}

HingeTerms hinge_d_terms(const Tensor& real_scores, const Tensor& fake_scores, const Tensor& r1, double gamma) {
  require(gamma >= 0.0, "R1 weight gamma must be non-negative");
  require(real_scores.numel() > 0 && fake_scores.numel() > 0, "hinge_d_loss needs scores");
  HingeTerms h;
  h.real = mean(relu(real_scores + 1.0));
  h.fake = mean(relu(1.0 - fake_scores));
  h.total = h.real + r1 * gamma + h.fake;
  return h;
}

Tensor hinge_d_loss(const Tensor& real_scores, const Tensor& fake_scores, const Tensor& r1, double gamma) {
  return hinge_d_terms(real_scores, fake_scores, r1, gamma).total;
}

ScoredR1 score_with_r1(const ScoreFn& score, const Tensor& x_pre, bool create_graph) {
  Tensor x = x_pre.detach();
  x.requires_grad_(true);
  ScoredR1 out;
  Tensor g;
  {
    autograd::GradMode on(true);
    out.scores = score(x);
    const Tensor& s = out.scores;
    require(s.rank() == 1 && s.size(0) == x.size(0), "score must be one value per sample");
    if (!s.requires_grad()) {
      out.penalty = Tensor::scalar(0.0, x.dtype());
      return out;
    }
    // Each score depends only on its own sample, so the gradient of the summed
    // score holds every per-sample gradient.
    g = autograd::grad(sum(s), {x}, create_graph)[0];
  }
  require_finite(g, "R1 gradient");
  autograd::GradMode keep(create_graph);
  out.penalty = mean(per_sample_sum(square(g)));
  return out;
}

Tensor r1_penalty(const ScoreFn& score, const Tensor& x_pre, bool create_graph) {
  return score_with_r1(score, x_pre, create_graph).penalty;
}

Tensor pseudo_huber(const Tensor& x_hat, const Tensor& x0, double c) {
  require(c > 0.0, "pseudo-Huber constant must be positive");
  require(x_hat.shape() == x0.shape(), "pseudo_huber shape mismatch");
  Tensor n2 = per_sample_sum(square(x_hat - x0));
  return mean(sqrt(n2 + c * c) - c);
}

double pseudo_huber_c(const Tensor& x0) {
  return 0.03 * std::sqrt(static_cast<double>(x0.numel() / x0.size(0)));
}

Tensor generator_total(const Tensor& adv_g, const Tensor& recon, double lambda) {
  require(lambda >= 0.0, "lambda must be non-negative");
  return adv_g + recon * lambda;
}

}  // namespace sfv
