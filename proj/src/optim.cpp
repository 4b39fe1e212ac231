#include "sfv/optim.hpp"

#include <cmath>

namespace sfv {

Adam::Adam(NamedTensors params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  require(cfg_.lr > 0.0, "learning rate must be positive");
  require(cfg_.beta1 >= 0.0 && cfg_.beta1 < 1.0 && cfg_.beta2 >= 0.0 && cfg_.beta2 < 1.0,
          "Adam betas must lie in [0, 1)");
  for (const auto& [name, p] : params_) {
    m_.emplace_back(name, Tensor::zeros(p.shape(), p.dtype()));
    v_.emplace_back(name, Tensor::zeros(p.shape(), p.dtype()));
  }
}

void Adam::step(const std::vector<Tensor>& grads) {
  require(grads.size() == params_.size(), "gradient count does not match parameter count");
  ++t_;
  const double b1 = cfg_.beta1, b2 = cfg_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Tensor p = params_[i].second;
    Tensor m = m_[i].second, v = v_[i].second;
    Tensor g = grads[i].dtype() == p.dtype() ? grads[i] : grads[i].to(p.dtype());
    require(g.shape() == p.shape(), "gradient shape mismatch for " + params_[i].first);
    dispatch(p.dtype(), [&]<class T>() {
      T* pp = p.data<T>();
      T* pm = m.data<T>();
      T* pv = v.data<T>();
      const T* pg = g.data<T>();
      for (std::int64_t j = 0; j < p.numel(); ++j) {
        const double gj = pg[j];
        const double mj = b1 * pm[j] + (1.0 - b1) * gj;
        const double vj = b2 * pv[j] + (1.0 - b2) * gj * gj;
        pm[j] = static_cast<T>(mj);
        pv[j] = static_cast<T>(vj);
        pp[j] = static_cast<T>(pp[j] - cfg_.lr * (mj / c1) / (std::sqrt(vj / c2) + cfg_.eps));
      }
    });
  }
}

void ema_update(const NamedTensors& shadow, const NamedTensors& params, double rate) {
  require(rate >= 0.0 && rate < 1.0, "EMA rate must lie in [0, 1)");
  require(shadow.size() == params.size(), "EMA table size mismatch");
  for (std::size_t i = 0; i < shadow.size(); ++i) {
    Tensor s = shadow[i].second;
    const Tensor& p = params[i].second;
    require(s.shape() == p.shape() && s.dtype() == p.dtype(), "EMA shape mismatch for " + shadow[i].first);
    dispatch(s.dtype(), [&]<class T>() {
      T* ps = s.data<T>();
      const T* pp = p.data<T>();
      for (std::int64_t j = 0; j < s.numel(); ++j) {
        ps[j] = static_cast<T>(rate * ps[j] + (1.0 - rate) * pp[j]);
      }
    });
  }
}

std::vector<Tensor> tensors_of(const NamedTensors& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& [name, t] : params) out.push_back(t);
  return out;
}

}  // namespace sfv
