// sfv: command-line front end over the C API.

#include <sfv.h>

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

using json = nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitRuntime = 2;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct RuntimeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

void check(sfv_status st, const std::string& what) {
  if (st == SFV_OK) return;
  std::string msg = what + ": " + sfv_last_error();
  if (st == SFV_ERR_INVALID_ARGUMENT) throw UsageError(msg);
  throw RuntimeError(msg);
}

std::string take_string(char* s) {
  std::string out = s ? s : "";
  sfv_string_free(s);
  return out;
}

template <class T, void (*Free)(T*)>
struct Handle {
  T* p = nullptr;
  Handle() = default;
  Handle(const Handle&) = delete;
  Handle& operator=(const Handle&) = delete;
  ~Handle() {
    if (p) Free(p);
  }
  T** out() { return &p; }
  T* get() const { return p; }
};
using Config = Handle<sfv_config, sfv_config_free>;
using Dataset = Handle<sfv_dataset, sfv_dataset_free>;
using Model = Handle<sfv_model, sfv_model_free>;

bool deterministic_mode() {
  const char* v = std::getenv("SFV_DETERMINISTIC");
  return v && std::string(v) == "1";
}

// Options shared by every command.
struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::string manifest;
  std::vector<std::string> argv;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config_path, "key=value config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.sets, "extra key=value override (repeatable)");
  cmd->add_option("--manifest", c.manifest, "manifest path (default: <out>.manifest.json)");
}

// Config file first, then --set entries, then flags (applied by the caller).
void load_config(const Common& c, Config& cfg) {
  check(sfv_config_new(cfg.out()), "config");
  if (!c.config_path.empty()) check(sfv_config_load(cfg.get(), c.config_path.c_str()), "config " + c.config_path);
  for (const auto& s : c.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw UsageError("--set expects key=value, got " + s);
    check(sfv_config_set(cfg.get(), s.substr(0, eq).c_str(), s.substr(eq + 1).c_str()), "--set " + s);
  }
}

void set_key(Config& cfg, const std::string& key, const std::string& value) {
  check(sfv_config_set(cfg.get(), key.c_str(), value.c_str()), key);
}

std::map<std::string, std::string> config_map(const sfv_config* cfg, bool resolve = false) {
  char* text = nullptr;
  check(resolve ? sfv_config_resolve(cfg, &text) : sfv_config_dump(cfg, &text), "config dump");
  std::map<std::string, std::string> out;
  std::string all = take_string(text);
  std::size_t pos = 0;
  while (pos < all.size()) {
    auto nl = all.find('\n', pos);
    if (nl == std::string::npos) nl = all.size();
    const std::string line = all.substr(pos, nl - pos);
    const auto eq = line.find('=');
    if (eq != std::string::npos) out[line.substr(0, eq)] = line.substr(eq + 1);
    pos = nl + 1;
  }
  return out;
}

std::map<std::string, std::string> model_meta(const sfv_model* m) {
  char* text = nullptr;
  check(sfv_model_meta(m, &text), "model meta");
  Config tmp;
  check(sfv_config_new(tmp.out()), "config");
  const std::string s = take_string(text);
  check(sfv_config_parse(tmp.get(), s.c_str()), "model meta");
  return config_map(tmp.get());
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw RuntimeError("cannot write " + path);
  f << text;
  if (!f) throw RuntimeError("write failed: " + path);
}

void write_manifest(const Common& c, const std::string& out_path, const std::string& command, json body) {
  json m;
  m["command"] = command;
  m["version"] = sfv_version();
  m["deterministic"] = deterministic_mode();
  m["argv"] = c.argv;
  for (auto& [k, v] : body.items()) m[k] = v;
  const std::string path = c.manifest.empty() ? out_path + ".manifest.json" : c.manifest;
  write_text(path, m.dump(2) + "\n");
}

json stats_json(const sfv_dataset* ds) {
  int64_t dims[5];
  check(sfv_dataset_dims(ds, dims), "dims");
  sfv_dataset_stats s{};
  check(sfv_dataset_stats_get(ds, &s), "stats");
  return {{"dims", std::vector<int64_t>(dims, dims + 5)},
          {"mean", s.mean},
          {"stddev", s.stddev},
          {"min", s.min},
          {"max", s.max},
          {"frame_diff", s.frame_diff}};
}

// Writes CSV lines and echoes every `every`-th step to stderr.
struct ProgressSink {
  std::ofstream csv;
  int64_t every = 100;
  int64_t last = 0;

  ProgressSink(const std::string& path, const char* header, int64_t log_every) : csv(path), every(log_every) {
    if (!csv) throw RuntimeError("cannot write " + path);
    csv << header << '\n';
  }
  static int callback(void* user, int64_t step, const char* line) {
    auto* self = static_cast<ProgressSink*>(user);
    self->csv << line << '\n';
    self->last = step;
    if (self->every > 0 && step % self->every == 0) std::fprintf(stderr, "%s\n", line);
    return 0;
  }
};

// ---------------------------------------------------------------------------

struct GenDataArgs {
  Common common;
  int64_t count = 4096;
  std::optional<int64_t> frames, size, channels;
  uint64_t seed = 0;
  std::string out;
  std::string png;
};

int run_gen_data(GenDataArgs& a) {
  Config cfg;
  load_config(a.common, cfg);
  if (a.frames) set_key(cfg, "data.frames", std::to_string(*a.frames));
  if (a.size) set_key(cfg, "data.size", std::to_string(*a.size));
  if (a.channels) set_key(cfg, "data.channels", std::to_string(*a.channels));
  auto effective = config_map(cfg.get());
  if (effective.count("data.size")) {
    const std::string& size = effective["data.size"];
    if (std::stoll(size) % 8 != 0) throw UsageError("--size must be divisible by 8, got " + size);
  }
  Dataset ds;
  check(sfv_dataset_generate(cfg.get(), a.count, a.seed, ds.out()), "gen-data");
  check(sfv_dataset_write(ds.get(), a.out.c_str()), "write " + a.out);
  if (!a.png.empty()) check(sfv_write_contact_sheet(ds.get(), a.png.c_str(), 2, 16), "png");
  json stats = stats_json(ds.get());
  std::printf("%s\n%s\n", a.out.c_str(), stats.dump().c_str());
  write_manifest(a.common, a.out, "gen-data",
                 {{"seed", a.seed}, {"count", a.count}, {"config", config_map(cfg.get(), true)}, {"stats", stats}});
  return kExitOk;
}

struct PretrainArgs {
  Common common;
  std::string data;
  std::string out;
  std::string resume;
  std::string csv;
  std::optional<int64_t> steps, batch;
  std::optional<double> lr;
  std::optional<uint64_t> seed;
  std::string widths;
  int64_t log_every = 100;
};

int run_pretrain(PretrainArgs& a) {
  Config cfg;
  load_config(a.common, cfg);
  if (a.steps) set_key(cfg, "teacher.steps", std::to_string(*a.steps));
  if (a.batch) set_key(cfg, "teacher.batch", std::to_string(*a.batch));
  if (a.lr) set_key(cfg, "teacher.lr", CLI::detail::to_string(*a.lr));
  if (a.seed) set_key(cfg, "teacher.seed", std::to_string(*a.seed));
  if (!a.widths.empty()) set_key(cfg, "net.widths", a.widths);

  Dataset data;
  check(sfv_dataset_read(a.data.c_str(), data.out()), "dataset " + a.data);
  int64_t dims[5];
  check(sfv_dataset_dims(data.get(), dims), "dims");
  set_key(cfg, "net.frames", std::to_string(dims[1]));
  set_key(cfg, "net.channels", std::to_string(dims[2]));
  set_key(cfg, "net.height", std::to_string(dims[3]));
  set_key(cfg, "net.width", std::to_string(dims[4]));

  Model resume;
  if (!a.resume.empty()) check(sfv_model_load(a.resume.c_str(), resume.out()), "resume " + a.resume);

  const std::string csv_path = a.csv.empty() ? a.out + ".loss.csv" : a.csv;
  ProgressSink sink(csv_path, SFV_TEACHER_CSV_HEADER, a.log_every);
  Model model;
  check(sfv_pretrain(cfg.get(), data.get(), resume.get(), &ProgressSink::callback, &sink, model.out()), "pretrain");
  check(sfv_model_save(model.get(), a.out.c_str()), "save " + a.out);
  std::printf("%s step=%lld params=%lld\n", a.out.c_str(), static_cast<long long>(sfv_model_step(model.get())),
              static_cast<long long>(sfv_model_parameter_count(model.get())));
  auto effective = config_map(cfg.get());
  write_manifest(a.common, a.out, "pretrain",
                 {{"seed", effective.count("teacher.seed") ? effective["teacher.seed"] : "0"},
                  {"data", a.data},
                  {"resume", a.resume},
                  {"loss_csv", csv_path},
                  {"config", config_map(cfg.get(), true)},
                  {"model_meta", model_meta(model.get())}});
  return kExitOk;
}

struct DistillArgs {
  Common common;
  std::string teacher;
  std::string resume;
  std::string data;
  std::string out;
  std::string csv;
  std::string heads;
  std::string p_mean, p_std;
  std::optional<int64_t> steps, batch, grad_accum;
  std::optional<double> lambda, gamma, lr_g, lr_d;
  std::optional<uint64_t> seed;
  int64_t log_every = 100;
};

int run_distill(DistillArgs& a) {
  Config cfg;
  load_config(a.common, cfg);
  json verbatim = json::object();
  if (!a.heads.empty()) set_key(cfg, "distill.heads", a.heads);
  if (!a.p_mean.empty()) {
    set_key(cfg, "distill.p_mean", a.p_mean);
    verbatim["p_mean"] = a.p_mean;
  }
  if (!a.p_std.empty()) {
    set_key(cfg, "distill.p_std", a.p_std);
    verbatim["p_std"] = a.p_std;
  }
  if (a.steps) set_key(cfg, "distill.steps", std::to_string(*a.steps));
  if (a.batch) set_key(cfg, "distill.batch", std::to_string(*a.batch));
  if (a.grad_accum) set_key(cfg, "distill.grad_accum", std::to_string(*a.grad_accum));
  if (a.lambda) set_key(cfg, "distill.lambda", CLI::detail::to_string(*a.lambda));
  if (a.gamma) set_key(cfg, "distill.gamma", CLI::detail::to_string(*a.gamma));
  if (a.lr_g) set_key(cfg, "distill.lr_g", CLI::detail::to_string(*a.lr_g));
  if (a.lr_d) set_key(cfg, "distill.lr_d", CLI::detail::to_string(*a.lr_d));
  if (a.seed) set_key(cfg, "distill.seed", std::to_string(*a.seed));

  Model start;
  const std::string start_path = a.resume.empty() ? a.teacher : a.resume;
  check(sfv_model_load(start_path.c_str(), start.out()), "load " + start_path);
  if (a.resume.empty() && sfv_model_get_kind(start.get()) != SFV_MODEL_TEACHER)
    throw UsageError("--teacher " + a.teacher + " is not a teacher checkpoint");
  Dataset data;
  check(sfv_dataset_read(a.data.c_str(), data.out()), "dataset " + a.data);

  const std::string csv_path = a.csv.empty() ? a.out + ".loss.csv" : a.csv;
  ProgressSink sink(csv_path, SFV_DISTILL_CSV_HEADER, a.log_every);
  Model model;
  check(sfv_distill(cfg.get(), start.get(), data.get(), &ProgressSink::callback, &sink, model.out()), "distill");
  check(sfv_model_save(model.get(), a.out.c_str()), "save " + a.out);
  std::printf("%s step=%lld\n", a.out.c_str(), static_cast<long long>(sfv_model_step(model.get())));
  auto effective = config_map(cfg.get());
  write_manifest(a.common, a.out, "distill",
                 {{"seed", effective.count("distill.seed") ? effective["distill.seed"] : "0"},
                  {"teacher", a.teacher},
                  {"resume", a.resume},
                  {"data", a.data},
                  {"loss_csv", csv_path},
                  {"flags_verbatim", verbatim},
                  {"config", config_map(cfg.get(), true)},
                  {"model_meta", model_meta(model.get())}});
  return kExitOk;
}

struct SampleArgs {
  Common common;
  std::string model;
  std::string cond;
  std::string out;
  std::string png;
  int steps = 1;
  double cfg = 1.0;
  uint64_t seed = 0;
  int64_t batch = 16;
  int64_t count = 0;
  int scale = 2;
};

int run_sample(SampleArgs& a) {
  if (a.steps < 1) throw UsageError("--steps must be >= 1");
  Model model;
  check(sfv_model_load(a.model.c_str(), model.out()), "load " + a.model);
  Dataset src;
  check(sfv_dataset_read(a.cond.c_str(), src.out()), "dataset " + a.cond);
  Dataset cond;
  const sfv_dataset* cond_ds = src.get();
  if (a.count > 0) {
    check(sfv_dataset_slice(src.get(), 0, a.count, cond.out()), "--count");
    cond_ds = cond.get();
  }
  Dataset out;
  int64_t forwards = 0;
  check(sfv_sample(model.get(), cond_ds, a.steps, a.cfg, a.seed, a.batch, out.out(), &forwards), "sample");
  check(sfv_dataset_write(out.get(), a.out.c_str()), "write " + a.out);
  if (!a.png.empty()) check(sfv_write_contact_sheet(out.get(), a.png.c_str(), a.scale, 16), "png");
  std::printf("%s forwards_per_clip=%lld\n", a.out.c_str(), static_cast<long long>(forwards));
  write_manifest(a.common, a.out, "sample",
                 {{"seed", a.seed},
                  {"model", a.model},
                  {"cond", a.cond},
                  {"steps", a.steps},
                  {"cfg", a.cfg},
                  {"batch", a.batch},
                  {"count", a.count},
                  {"forwards_per_clip", forwards},
                  {"model_meta", model_meta(model.get())}});
  return kExitOk;
}

struct EvalArgs {
  Common common;
  std::string generated, real, cond, out;
};

int run_eval(EvalArgs& a) {
  Dataset gen, real, cond;
  check(sfv_dataset_read(a.generated.c_str(), gen.out()), "dataset " + a.generated);
  check(sfv_dataset_read(a.real.c_str(), real.out()), "dataset " + a.real);
  const sfv_dataset* cond_ds = nullptr;
  Dataset cond_head;
  if (!a.cond.empty()) {
    check(sfv_dataset_read(a.cond.c_str(), cond.out()), "dataset " + a.cond);
    cond_ds = cond.get();
    // `sample --count n` conditions on the first n clips.
    int64_t gd[5], cd[5];
    check(sfv_dataset_dims(gen.get(), gd), "dims");
    check(sfv_dataset_dims(cond.get(), cd), "dims");
    if (cd[0] > gd[0]) {
      check(sfv_dataset_slice(cond.get(), 0, gd[0], cond_head.out()), "cond");
      cond_ds = cond_head.get();
    }
  }
  char* text = nullptr;
  check(sfv_eval(gen.get(), real.get(), cond_ds, &text), "eval");
  const std::string report = take_string(text);
  std::printf("%s\n", report.c_str());
  if (!a.out.empty()) {
    write_text(a.out, report + "\n");
    write_manifest(a.common, a.out, "eval", {{"generated", a.generated}, {"real", a.real}, {"cond", a.cond}});
  }
  return kExitOk;
}

struct BenchArgs {
  Common common;
  std::string teacher, student, cond, out;
  int64_t clips = 8;
  int reps = 5;
  int warmup = 1;
  uint64_t seed = 0;
};

int run_bench(BenchArgs& a) {
  Model teacher, student;
  check(sfv_model_load(a.teacher.c_str(), teacher.out()), "load " + a.teacher);
  check(sfv_model_load(a.student.c_str(), student.out()), "load " + a.student);
  Dataset src, cond;
  check(sfv_dataset_read(a.cond.c_str(), src.out()), "dataset " + a.cond);
  check(sfv_dataset_slice(src.get(), 0, a.clips, cond.out()), "--clips");
  char* text = nullptr;
  check(sfv_bench(teacher.get(), student.get(), cond.get(), a.reps, a.warmup, a.seed, &text), "bench");
  const std::string report = take_string(text);
  std::printf("%s\n", report.c_str());
  if (!a.out.empty()) {
    write_text(a.out, report + "\n");
    write_manifest(a.common, a.out, "bench",
                   {{"seed", a.seed},
                    {"teacher", a.teacher},
                    {"student", a.student},
                    {"cond", a.cond},
                    {"clips", a.clips},
                    {"repetitions", a.reps},
                    {"warmup", a.warmup}});
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Toy one-step video distillation: data, teacher, student, sampling, evaluation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(sfv_version()));

  std::vector<std::string> all_args(argv, argv + argc);

  GenDataArgs gd;
  auto* c_gen = app.add_subcommand("gen-data", "write a bouncing-shapes dataset");
  add_common(c_gen, gd.common);
  c_gen->add_option("--count", gd.count, "number of clips")->check(CLI::PositiveNumber);
  c_gen->add_option("--frames", gd.frames, "frames per clip (default 8)")->check(CLI::Range(2, 1024));
  c_gen->add_option("--size", gd.size, "height and width, divisible by 8 (default 32)")->check(CLI::PositiveNumber);
  c_gen->add_option("--channels", gd.channels, "channels (default 1)")->check(CLI::PositiveNumber);
  c_gen->add_option("--seed", gd.seed, "seed");
  c_gen->add_option("--out", gd.out, "output .sfvd")->required();
  c_gen->add_option("--png", gd.png, "contact sheet of the first clips");

  PretrainArgs pt;
  auto* c_pre = app.add_subcommand("pretrain", "train the multi-step teacher");
  add_common(c_pre, pt.common);
  c_pre->add_option("--data", pt.data, "training .sfvd")->required()->check(CLI::ExistingFile);
  c_pre->add_option("--out", pt.out, "output checkpoint")->required();
  c_pre->add_option("--resume", pt.resume, "continue from a teacher checkpoint")->check(CLI::ExistingFile);
  c_pre->add_option("--csv", pt.csv, "loss curve (default: <out>.loss.csv)");
  c_pre->add_option("--steps", pt.steps, "total steps");
  c_pre->add_option("--batch", pt.batch, "batch size");
  c_pre->add_option("--lr", pt.lr, "learning rate");
  c_pre->add_option("--seed", pt.seed, "seed");
  c_pre->add_option("--widths", pt.widths, "four comma-separated channel widths");
  c_pre->add_option("--log-every", pt.log_every, "echo every n-th step");

  DistillArgs ds;
  auto* c_dis = app.add_subcommand("distill", "adversarially distill a one-step student");
  add_common(c_dis, ds.common);
  auto* opt_teacher = c_dis->add_option("--teacher", ds.teacher, "teacher checkpoint")->required();
  c_dis->add_option("--resume", ds.resume, "continue a student checkpoint")->check(CLI::ExistingFile);
  c_dis->add_option("--data", ds.data, "training .sfvd")->required()->check(CLI::ExistingFile);
  c_dis->add_option("--out", ds.out, "output checkpoint")->required();
  c_dis->add_option("--csv", ds.csv, "loss curve (default: <out>.loss.csv)");
  c_dis->add_option("--heads", ds.heads, "discriminator heads")->check(CLI::IsMember({"spatial", "temporal", "both"}));
  c_dis->add_option("--p-mean", ds.p_mean, "log-sigma mean of the discriminator noise levels");
  c_dis->add_option("--p-std", ds.p_std, "log-sigma std (magnitude used)");
  c_dis->add_option("--steps", ds.steps, "total steps");
  c_dis->add_option("--batch", ds.batch, "micro-batch size");
  c_dis->add_option("--grad-accum", ds.grad_accum, "micro-batches per step");
  c_dis->add_option("--lambda", ds.lambda, "reconstruction weight");
  c_dis->add_option("--gamma", ds.gamma, "R1 weight");
  c_dis->add_option("--lr-g", ds.lr_g, "generator learning rate");
  c_dis->add_option("--lr-d", ds.lr_d, "head learning rate");
  c_dis->add_option("--seed", ds.seed, "seed");
  c_dis->add_option("--log-every", ds.log_every, "echo every n-th step");
  opt_teacher->check(CLI::ExistingFile);

  SampleArgs sa;
  auto* c_smp = app.add_subcommand("sample", "generate clips from a checkpoint");
  add_common(c_smp, sa.common);
  c_smp->add_option("--model", sa.model, "teacher or student checkpoint")->required()->check(CLI::ExistingFile);
  c_smp->add_option("--cond", sa.cond, ".sfvd whose first frames condition generation")
      ->required()
      ->check(CLI::ExistingFile);
  c_smp->add_option("--out", sa.out, "output .sfvd")->required();
  c_smp->add_option("--png", sa.png, "contact sheet");
  c_smp->add_option("--scale", sa.scale, "contact sheet pixel scale")->check(CLI::Range(1, 16));
  c_smp->add_option("--steps", sa.steps, "1 = one-step, >= 2 = Euler");
  c_smp->add_option("--cfg", sa.cfg, "guidance scale for Euler sampling")->check(CLI::NonNegativeNumber);
  c_smp->add_option("--seed", sa.seed, "seed");
  c_smp->add_option("--batch", sa.batch, "clips per forward")->check(CLI::PositiveNumber);
  c_smp->add_option("--count", sa.count, "use only the first n conditioning clips")->check(CLI::NonNegativeNumber);

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "toy-FVD and collapse metrics");
  add_common(c_ev, ev.common);
  c_ev->add_option("--generated", ev.generated, "generated .sfvd")->required()->check(CLI::ExistingFile);
  c_ev->add_option("--real", ev.real, "held-out real .sfvd")->required()->check(CLI::ExistingFile);
  c_ev->add_option("--cond", ev.cond, "clips whose first frames conditioned generation")->check(CLI::ExistingFile);
  c_ev->add_option("--out", ev.out, "report JSON");

  BenchArgs bn;
  auto* c_bn = app.add_subcommand("bench", "denoising latency of teacher and student");
  add_common(c_bn, bn.common);
  c_bn->add_option("--teacher", bn.teacher, "teacher checkpoint")->required()->check(CLI::ExistingFile);
  c_bn->add_option("--student", bn.student, "student checkpoint")->required()->check(CLI::ExistingFile);
  c_bn->add_option("--cond", bn.cond, "conditioning .sfvd")->required()->check(CLI::ExistingFile);
  c_bn->add_option("--clips", bn.clips, "batch size")->check(CLI::PositiveNumber);
  c_bn->add_option("--reps", bn.reps, "timed repetitions")->check(CLI::Range(3, 1000));
  c_bn->add_option("--warmup", bn.warmup, "discarded runs")->check(CLI::Range(1, 1000));
  c_bn->add_option("--seed", bn.seed, "seed");
  c_bn->add_option("--out", bn.out, "report JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  for (Common* c : {&gd.common, &pt.common, &ds.common, &sa.common, &ev.common, &bn.common}) c->argv = all_args;

  try {
    if (c_gen->parsed()) return run_gen_data(gd);
    if (c_pre->parsed()) return run_pretrain(pt);
    if (c_dis->parsed()) return run_distill(ds);
    if (c_smp->parsed()) return run_sample(sa);
    if (c_ev->parsed()) return run_eval(ev);
    if (c_bn->parsed()) return run_bench(bn);
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitRuntime;
  }
  return kExitUsage;
}
