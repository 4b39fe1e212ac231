#include "sfv.h"

#include <cstdlib>
#include <cstring>
#include <new>
#include <sstream>
#include <string>

#include "sfv/checkpoint.hpp"
#include "sfv/config.hpp"
#include "sfv/data.hpp"
#include "sfv/eval.hpp"
#include "sfv/nets.hpp"
#include "sfv/pipeline.hpp"
#include "sfv/png.hpp"
#include "sfv/training.hpp"

struct sfv_config {
  sfv::KeyValues kv;
};

struct sfv_dataset {
  sfv::Tensor clips;  // f32
};

struct sfv_model {
  sfv::ModelState state;
};

namespace {

thread_local std::string g_last_error;

// Thrown to stop training when the progress callback asks for it.
struct StopRequested {};

template <class F>
sfv_status guarded(F&& fn) {
  try {
    fn();
    g_last_error.clear();
    return SFV_OK;
  } catch (const sfv::Error& e) {
    g_last_error = e.what();
    return static_cast<sfv_status>(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
    return SFV_ERR_INTERNAL;
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return SFV_ERR_INTERNAL;
  }
}

void need(const void* p, const char* what) {
  if (!p) sfv::fail(sfv::ErrorCode::invalid_argument, std::string(what) + " is null");
}

char* dup_string(const std::string& s) {
  char* out = static_cast<char*>(std::malloc(s.size() + 1));
  if (!out) throw std::bad_alloc();
  std::memcpy(out, s.c_str(), s.size() + 1);
  return out;
}

std::string fmt(double v) { return sfv::format_double(v); }

}  // namespace

extern "C" {

const char* sfv_version(void) {
  static const std::string v = std::string(SFV_VERSION) + "+" + SFV_GIT_REV;
  return v.c_str();
}

const char* sfv_last_error(void) { return g_last_error.c_str(); }

void sfv_string_free(char* s) { std::free(s); }

sfv_status sfv_config_new(sfv_config** out) {
  return guarded([&] {
    need(out, "out");
    *out = new sfv_config();
  });
}

sfv_status sfv_config_load(sfv_config* cfg, const char* path) {
  return guarded([&] {
    need(cfg, "config");
    need(path, "path");
    cfg->kv.merge(sfv::KeyValues::load(path));
  });
}

sfv_status sfv_config_parse(sfv_config* cfg, const char* text) {
  return guarded([&] {
    need(cfg, "config");
    need(text, "text");
    cfg->kv.merge(sfv::KeyValues::parse(text));
  });
}

sfv_status sfv_config_set(sfv_config* cfg, const char* key, const char* value) {
  return guarded([&] {
    need(cfg, "config");
    need(key, "key");
    need(value, "value");
    cfg->kv.set(key, std::string(value));
  });
}

sfv_status sfv_config_get(const sfv_config* cfg, const char* key, char** out) {
  return guarded([&] {
    need(cfg, "config");
    need(key, "key");
    need(out, "out");
    if (!cfg->kv.has(key)) sfv::fail(sfv::ErrorCode::invalid_argument, std::string("no key ") + key);
    *out = dup_string(cfg->kv.get(key, ""));
  });
}

sfv_status sfv_config_dump(const sfv_config* cfg, char** out) {
  return guarded([&] {
    need(cfg, "config");
    need(out, "out");
    *out = dup_string(cfg->kv.dump());
  });
}

sfv_status sfv_config_resolve(const sfv_config* cfg, char** out) {
  return guarded([&] {
    need(cfg, "config");
    need(out, "out");
    sfv::KeyValues full;
    sfv::store_net_config(sfv::net_config_from(cfg->kv), full);
    sfv::TeacherConfig::from(cfg->kv).store(full);
    sfv::DistillConfig::from(cfg->kv).store(full);
    sfv::store_scene_spec(sfv::scene_spec_from(cfg->kv), full);
    sfv::KeyValues merged = cfg->kv;
    merged.merge(full);
    *out = dup_string(merged.dump());
  });
}

void sfv_config_free(sfv_config* cfg) { delete cfg; }

sfv_status sfv_dataset_generate(const sfv_config* cfg, int64_t count, uint64_t seed, sfv_dataset** out) {
  return guarded([&] {
    need(out, "out");
    const sfv::KeyValues kv = cfg ? cfg->kv : sfv::KeyValues();
    const sfv::SceneSpec spec = sfv::scene_spec_from(kv);
    auto* ds = new sfv_dataset();
    try {
      ds->clips = sfv::make_videos(spec, count, seed);
    } catch (...) {
      delete ds;
      throw;
    }
    *out = ds;
  });
}

sfv_status sfv_dataset_read(const char* path, sfv_dataset** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    sfv::Tensor t = sfv::read_dataset(path);
    *out = new sfv_dataset{std::move(t)};
  });
}

sfv_status sfv_dataset_write(const sfv_dataset* ds, const char* path) {
  return guarded([&] {
    need(ds, "dataset");
    need(path, "path");
    sfv::write_dataset(ds->clips, path);
  });
}

sfv_status sfv_dataset_from_data(const int64_t dims[5], const float* data, sfv_dataset** out) {
  return guarded([&] {
    need(dims, "dims");
    need(data, "data");
    need(out, "out");
    sfv::Shape shape(dims, dims + 5);
    for (auto d : shape) sfv::require(d >= 1, "dataset dims must be positive");
    const std::int64_t n = sfv::numel_of(shape);
    std::vector<float> values(data, data + n);
    *out = new sfv_dataset{sfv::Tensor::from_floats(shape, std::move(values))};
  });
}

sfv_status sfv_dataset_slice(const sfv_dataset* ds, int64_t start, int64_t count, sfv_dataset** out) {
  return guarded([&] {
    need(ds, "dataset");
    need(out, "out");
    sfv::require(start >= 0 && count >= 1 && start + count <= ds->clips.size(0), "slice out of range");
    *out = new sfv_dataset{sfv::slice(ds->clips, 0, start, count)};
  });
}

sfv_status sfv_dataset_dims(const sfv_dataset* ds, int64_t dims[5]) {
  return guarded([&] {
    need(ds, "dataset");
    need(dims, "dims");
    for (int i = 0; i < 5; ++i) dims[i] = ds->clips.size(i);
  });
}

const float* sfv_dataset_data(const sfv_dataset* ds) { return ds ? ds->clips.data<float>() : nullptr; }

sfv_status sfv_dataset_stats_get(const sfv_dataset* ds, sfv_dataset_stats* out) {
  return guarded([&] {
    need(ds, "dataset");
    need(out, "out");
    const sfv::DatasetStats s = sfv::dataset_stats(ds->clips);
    *out = {s.mean, s.stddev, s.min, s.max, s.frame_diff};
  });
}

void sfv_dataset_free(sfv_dataset* ds) { delete ds; }

sfv_status sfv_pretrain(const sfv_config* cfg, const sfv_dataset* data, const sfv_model* resume,
                        sfv_progress_fn progress, void* user, sfv_model** out) {
  return guarded([&] {
    need(data, "dataset");
    need(out, "out");
    const sfv::KeyValues kv = cfg ? cfg->kv : sfv::KeyValues();
    const sfv::TeacherConfig tc = sfv::TeacherConfig::from(kv);
    auto model = std::make_unique<sfv_model>();
    if (resume) {
      sfv::require(resume->state.kind == sfv::ModelKind::teacher, "resume model is not a teacher");
      model->state = sfv::state_from_checkpoint(sfv::state_to_checkpoint(resume->state));
      tc.store(model->state.meta);
    } else {
      sfv::NetConfig nc = sfv::net_config_from(kv);
      sfv::require(nc.video_shape(1)[1] == data->clips.size(1) && nc.channels == data->clips.size(2) &&
                       nc.height == data->clips.size(3) && nc.width == data->clips.size(4),
                   "net.* shape does not match the dataset");
      model->state = sfv::init_teacher(nc, tc);
    }
    try {
      sfv::pretrain_teacher(model->state, data->clips, tc, [&](std::int64_t step, double loss) {
        if (!progress) return;
        const std::string line = std::to_string(step) + "," + fmt(loss);
        if (progress(user, step, line.c_str()) != 0) throw StopRequested{};
      });
    } catch (const StopRequested&) {
    }
    *out = model.release();
  });
}

sfv_status sfv_distill(const sfv_config* cfg, const sfv_model* start, const sfv_dataset* data,
                       sfv_progress_fn progress, void* user, sfv_model** out) {
  return guarded([&] {
    need(start, "start model");
    need(data, "dataset");
    need(out, "out");
    const sfv::KeyValues kv = cfg ? cfg->kv : sfv::KeyValues();
    const sfv::DistillConfig dc = sfv::DistillConfig::from(kv);
    auto model = std::make_unique<sfv_model>();
    if (start->state.kind == sfv::ModelKind::teacher) {
      model->state = sfv::init_student(start->state, dc);
    } else {
      model->state = sfv::state_from_checkpoint(sfv::state_to_checkpoint(start->state));
      dc.store(model->state.meta);
    }
    try {
      sfv::distill(model->state, data->clips, dc, [&](std::int64_t step, const sfv::LossBreakdown& l) {
        if (!progress) return;
        std::ostringstream os;
        os << step << ',' << fmt(l.adv_g) << ',' << fmt(l.recon) << ',' << fmt(l.total_g) << ','
           << fmt(l.adv_d_real) << ',' << fmt(l.adv_d_fake) << ',' << fmt(l.r1) << ',' << fmt(l.total_d);
        if (progress(user, step, os.str().c_str()) != 0) throw StopRequested{};
      });
    } catch (const StopRequested&) {
    }
    *out = model.release();
  });
}

sfv_status sfv_model_load(const char* path, sfv_model** out) {
  return guarded([&] {
    need(path, "path");
    need(out, "out");
    auto model = std::make_unique<sfv_model>();
    model->state = sfv::load_checkpoint(path);
    *out = model.release();
  });
}

sfv_status sfv_model_save(const sfv_model* model, const char* path) {
  return guarded([&] {
    need(model, "model");
    need(path, "path");
    sfv::save_checkpoint(model->state, path);
  });
}

sfv_model_kind sfv_model_get_kind(const sfv_model* model) {
  return model && model->state.kind == sfv::ModelKind::student ? SFV_MODEL_STUDENT : SFV_MODEL_TEACHER;
}

int64_t sfv_model_step(const sfv_model* model) { return model ? model->state.step : -1; }

int64_t sfv_model_parameter_count(const sfv_model* model) {
  return model ? model->state.generator->parameter_count() : -1;
}

sfv_status sfv_model_meta(const sfv_model* model, char** out) {
  return guarded([&] {
    need(model, "model");
    need(out, "out");
    sfv::KeyValues meta = model->state.meta;
    meta.set("kind", std::string(model->state.kind == sfv::ModelKind::teacher ? "teacher" : "student"));
    meta.set("step", static_cast<std::int64_t>(model->state.step));
    *out = dup_string(meta.dump());
  });
}

void sfv_model_free(sfv_model* model) { delete model; }

sfv_status sfv_sample(const sfv_model* model, const sfv_dataset* cond_source, int steps, double cfg_scale,
                      uint64_t seed, int64_t batch, sfv_dataset** out, int64_t* forwards_per_clip) {
  return guarded([&] {
    need(model, "model");
    need(cond_source, "conditioning dataset");
    need(out, "out");
    const sfv::DistillConfig dc = sfv::DistillConfig::from(model->state.meta);
    sfv::SampleResult r = sfv::sample_clips(model->state, cond_source->clips, steps, cfg_scale, seed, batch, dc.schedule);
    if (forwards_per_clip) *forwards_per_clip = r.forwards_per_clip;
    *out = new sfv_dataset{std::move(r.clips)};
  });
}

sfv_status sfv_eval(const sfv_dataset* generated, const sfv_dataset* real, const sfv_dataset* cond_source, char** json) {
  return guarded([&] {
    need(generated, "generated dataset");
    need(real, "real dataset");
    need(json, "out");
    const sfv::Tensor& src = cond_source ? cond_source->clips : generated->clips;
    *json = dup_string(sfv::evaluate_clips(generated->clips, real->clips, src).to_json());
  });
}

sfv_status sfv_bench(const sfv_model* teacher, const sfv_model* student, const sfv_dataset* cond_source,
                     int repetitions, int warmup, uint64_t seed, char** json) {
  return guarded([&] {
    need(teacher, "teacher");
    need(student, "student");
    need(cond_source, "conditioning dataset");
    need(json, "out");
    const sfv::Conditioning cond = sfv::Conditioning::first_frame(cond_source->clips);
    const auto rows = sfv::latency_bench(teacher->state.sampler_net(), student->state.sampler_net(),
                                         sfv::default_bench_configs(), cond.image, repetitions, warmup, seed);
    *json = dup_string(sfv::bench_to_json(rows));
  });
}

sfv_status sfv_write_contact_sheet(const sfv_dataset* ds, const char* path, int scale, int64_t max_clips) {
  return guarded([&] {
    need(ds, "dataset");
    need(path, "path");
    sfv::write_contact_sheet(ds->clips, path, scale, max_clips);
  });
}

}  // extern "C"
