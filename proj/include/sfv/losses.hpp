#pragma once

#include <functional>
#include <span>

#include "sfv/nets.hpp"
#include "sfv/tensor.hpp"

namespace sfv {

struct LossBreakdown {
  double adv_g = 0.0;
  double recon = 0.0;
  double total_g = 0.0;
  double adv_d_real = 0.0;
  double adv_d_fake = 0.0;
  double r1 = 0.0;
  double total_d = 0.0;
};

// Denoiser D(x; sigma, c) with per-sample sigma.
using DenoiseFn = std::function<Tensor(const Tensor& x, std::span<const double> sigma, const Conditioning& cond)>;
// Per-sample discriminator score of an already preconditioned input -> [B].
using ScoreFn = std::function<Tensor(const Tensor& x_pre)>;

// Weighted squared error lambda(s) |D(x0 + s eps) - x0|^2, lambda(s) = (s^2+1)/s^2,
// averaged over batch and elements.
Tensor dsm_loss(const DenoiseFn& denoiser, const Tensor& x0, std::span<const double> sigma, const Tensor& eps,
                const Conditioning& cond);

// Mean fake score; the generator minimizes it.
Tensor hinge_g_loss(const Tensor& fake_scores);

struct HingeTerms {
  Tensor real;   // mean relu(1 + real)
  Tensor fake;   // mean relu(1 - fake)
  Tensor total;  // real + gamma * r1 + fake
};
HingeTerms hinge_d_terms(const Tensor& real_scores, const Tensor& fake_scores, const Tensor& r1, double gamma);
Tensor hinge_d_loss(const Tensor& real_scores, const Tensor& fake_scores, const Tensor& r1, double gamma);

// Batch mean of the per-sample squared gradient norm of the score at x_pre.
Tensor r1_penalty(const ScoreFn& score, const Tensor& x_pre, bool create_graph = true);

// Scores at x_pre together with their R1 penalty, sharing one forward pass.
struct ScoredR1 {
  Tensor scores;
  Tensor penalty;
};
ScoredR1 score_with_r1(const ScoreFn& score, const Tensor& x_pre, bool create_graph = true);

// sqrt(|x_hat - x0|^2 + c^2) - c per sample, then batch mean.
Tensor pseudo_huber(const Tensor& x_hat, const Tensor& x0, double c);
// c = 0.03 * sqrt(elements per sample).
double pseudo_huber_c(const Tensor& x0);

Tensor generator_total(const Tensor& adv_g, const Tensor& recon, double lambda);

}  // namespace sfv
