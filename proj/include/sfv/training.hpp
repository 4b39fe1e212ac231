#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>

#include "sfv/config.hpp"
#include "sfv/diffusion_math.hpp"
#include "sfv/losses.hpp"
#include "sfv/nets.hpp"
#include "sfv/optim.hpp"

namespace sfv {

struct TeacherConfig {
  std::int64_t steps = 20000;
  std::int64_t batch = 8;
  double lr = 2e-4;
  double ema_rate = 0.999;
  double p_mean = -1.2;  // log-sigma mean of the training noise levels
  double p_std = 1.2;
  double cond_dropout = 0.1;  // zeroed conditioning image, enables CFG
  std::uint64_t seed = 0;

  void validate() const;
  void store(KeyValues& kv) const;
  static TeacherConfig from(const KeyValues& kv);
};

struct DistillConfig {
  int t_g = 4;
  int t_d = 1000;
  double p_mean = -1.0;
  double p_std = -1.0;  // only the magnitude is used
  double lambda = 0.1;
  double gamma = 0.01;
  double lr_g = 1e-5;
  double lr_d = 1e-4;
  double ema_rate = 0.95;
  std::int64_t batch = 8;
  std::int64_t grad_accum = 4;
  std::int64_t steps = 10000;
  std::uint64_t seed = 0;
  HeadMode heads = HeadMode::both;
  bool adversarial = true;  // false drops the adversarial term (regression only)
  ScheduleParams schedule;

  void validate() const;
  void store(KeyValues& kv) const;
  static DistillConfig from(const KeyValues& kv);
};

void store_net_config(const NetConfig& cfg, KeyValues& kv);
NetConfig net_config_from(const KeyValues& kv);

enum class ModelKind { teacher, student };

struct ModelState {
  ModelKind kind = ModelKind::teacher;
  NetConfig net;
  std::unique_ptr<GeneratorNet> generator;
  std::unique_ptr<GeneratorNet> ema;
  std::unique_ptr<DiscriminatorNet> disc;  // students only
  std::unique_ptr<Adam> opt_g;
  std::unique_ptr<Adam> opt_d;
  std::int64_t step = 0;
  KeyValues meta;  // run configuration carried into checkpoints

  // Network used for sampling: the EMA shadow.
  const GeneratorNet& sampler_net() const { return *ema; }
};

ModelState init_teacher(const NetConfig& net, const TeacherConfig& cfg);
// Generator, EMA and discriminator backbone all copy the teacher's EMA weights.
ModelState init_student(const ModelState& teacher, const DistillConfig& cfg);

void copy_parameters(const NamedTensors& dst, const NamedTensors& src);

using TeacherLogFn = std::function<void(std::int64_t step, double loss)>;
using DistillLogFn = std::function<void(std::int64_t step, const LossBreakdown& losses)>;

// One DSM update on clips [B, N, C, H, W]; returns the loss.
double teacher_step(ModelState& state, const Tensor& clips, const TeacherConfig& cfg, Rng& rng);
// Runs from state.step up to cfg.steps, drawing batches from `dataset`.
void pretrain_teacher(ModelState& state, const Tensor& dataset, const TeacherConfig& cfg,
                      const TeacherLogFn& log = {});

// One alternating generator / head update plus EMA. `clips` holds
// batch * grad_accum clips, processed in micro-batches of `batch`.
LossBreakdown distill_step(ModelState& state, const Tensor& clips, const DistillConfig& cfg, Rng& rng);
void distill(ModelState& state, const Tensor& dataset, const DistillConfig& cfg, const DistillLogFn& log = {});

// Per-step stream so that resumed runs see the same randomness.
Rng step_rng(std::uint64_t seed, std::int64_t step, std::uint64_t stream);

}  // namespace sfv
