#include "sfv/checkpoint.hpp"

#include <cstring>
#include <limits>
#include <unordered_map>

#include "sfv/binio.hpp"

namespace sfv {

namespace {

constexpr char kMagic[4] = {'S', 'F', 'V', 'C'};
constexpr std::uint32_t kVersion = 1;

void add_prefixed(NamedTensors& out, const std::string& prefix, const NamedTensors& src) {
  for (const auto& [name, t] : src) out.emplace_back(prefix + name, t);
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const CheckpointData& data) {
  binio::Writer w;
  w.bytes(kMagic, 4);
  w.u32(kVersion);
  const std::string blob = data.meta.dump();
  require(blob.size() <= std::numeric_limits<std::uint32_t>::max(), "config blob too large");
  w.u32(static_cast<std::uint32_t>(blob.size()));
  w.str(blob);
  require(data.tensors.size() <= std::numeric_limits<std::uint32_t>::max(), "too many tensors");
  w.u32(static_cast<std::uint32_t>(data.tensors.size()));
  for (const auto& [name, t] : data.tensors) {
    require(name.size() <= std::numeric_limits<std::uint16_t>::max(), "tensor name too long");
    require(t.rank() <= 255, "tensor rank too large");
    w.u16(static_cast<std::uint16_t>(name.size()));
    w.str(name);
    w.u8(static_cast<std::uint8_t>(t.rank()));
    for (auto d : t.shape()) {
      require(d <= std::numeric_limits<std::uint32_t>::max(), "tensor dimension exceeds u32");
      w.u32(static_cast<std::uint32_t>(d));
    }
    w.u8(static_cast<std::uint8_t>(t.dtype()));
    w.tensor_data(t);
  }
  binio::append_crc(w.buffer(), 4);
  return std::move(w.buffer());
}

CheckpointData decode_checkpoint(const std::vector<std::uint8_t>& bytes, const std::string& what) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kMagic, 4) != 0) {
    fail(ErrorCode::format, what + ": not a checkpoint (bad magic)");
  }
  // Integrity first, so a damaged file never yields a partial state.
  binio::check_crc(bytes, 4, what);
  binio::Reader r(bytes.data() + 4, bytes.size() - 8);
  const std::uint32_t version = r.u32();
  if (version != kVersion) fail(ErrorCode::version, what + ": unsupported checkpoint version " + std::to_string(version));
  CheckpointData out;
  out.meta = KeyValues::parse(r.str(r.u32()));
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str(r.u16());
    const std::uint8_t rank = r.u8();
    Shape shape(rank);
    std::uint64_t n = 1;
    for (auto& d : shape) {
      d = r.u32();
      n *= static_cast<std::uint64_t>(d);
      if (n > r.remaining()) fail(ErrorCode::format, what + ": tensor " + name + " overruns the file");
    }
    const std::uint8_t code = r.u8();
    if (code > 1) fail(ErrorCode::format, what + ": unknown dtype code " + std::to_string(code));
    const DType dt = static_cast<DType>(code);
    Tensor t(shape, dt);
    dispatch(dt, [&]<class T>() {
      if (n * sizeof(T) > r.remaining()) fail(ErrorCode::format, what + ": truncated tensor " + name);
      r.bytes(t.data<T>(), static_cast<std::size_t>(n) * sizeof(T));
    });
    out.tensors.emplace_back(std::move(name), std::move(t));
  }
  if (r.remaining() != 0) fail(ErrorCode::format, what + ": trailing bytes after tensor table");
  return out;
}

void write_checkpoint(const CheckpointData& data, const std::string& path) {
  binio::write_file(path, encode_checkpoint(data));
}

CheckpointData read_checkpoint(const std::string& path) { return decode_checkpoint(binio::read_file(path), path); }

CheckpointData state_to_checkpoint(const ModelState& s) {
  require(s.generator && s.ema && s.opt_g, "incomplete model state");
  CheckpointData d;
  d.meta = s.meta;
  d.meta.set("kind", std::string(s.kind == ModelKind::teacher ? "teacher" : "student"));
  d.meta.set("step", s.step);
  d.meta.set("opt.gen.steps", s.opt_g->steps());
  store_net_config(s.net, d.meta);
  add_prefixed(d.tensors, "gen.", s.generator->parameters());
  add_prefixed(d.tensors, "ema.", s.ema->parameters());
  add_prefixed(d.tensors, "opt.gen.m.", s.opt_g->first_moments());
  add_prefixed(d.tensors, "opt.gen.v.", s.opt_g->second_moments());
  if (s.kind == ModelKind::student) {
    require(s.disc && s.opt_d, "student state lacks a discriminator");
    d.meta.set("opt.disc.steps", s.opt_d->steps());
    d.meta.set("disc.heads", std::string(head_mode_name(s.disc->mode())));
    add_prefixed(d.tensors, "disc.", s.disc->backbone_parameters());
    add_prefixed(d.tensors, "disc.", s.disc->head_parameters());
    add_prefixed(d.tensors, "opt.disc.m.", s.opt_d->first_moments());
    add_prefixed(d.tensors, "opt.disc.v.", s.opt_d->second_moments());
  }
  return d;
}

ModelState state_from_checkpoint(const CheckpointData& d) {
  const std::string kind = d.meta.get("kind", "");
  require(kind == "teacher" || kind == "student", "checkpoint has unknown kind '" + kind + "'");
  std::unordered_map<std::string, const Tensor*> table;
  for (const auto& [name, t] : d.tensors) {
    if (!table.emplace(name, &t).second) fail(ErrorCode::format, "duplicate tensor " + name);
  }
  std::size_t used = 0;
  auto fill = [&](const std::string& prefix, const NamedTensors& dst) {
    for (const auto& [name, t] : dst) {
      auto it = table.find(prefix + name);
      if (it == table.end()) fail(ErrorCode::format, "checkpoint lacks tensor " + prefix + name);
      const Tensor& src = *it->second;
      if (src.shape() != t.shape() || src.dtype() != t.dtype()) {
        fail(ErrorCode::format, "tensor " + prefix + name + " has shape " + shape_str(src.shape()) + ", expected " +
                                    shape_str(t.shape()));
      }
      Tensor dstt = t;
      dstt.assign(src);
      ++used;
    }
  };

  ModelState s;
  s.meta = d.meta;
  s.net = net_config_from(d.meta);
  s.kind = kind == "teacher" ? ModelKind::teacher : ModelKind::student;
  s.step = d.meta.get_int("step", 0);
  s.generator = std::make_unique<GeneratorNet>(s.net, 0);
  s.ema = std::make_unique<GeneratorNet>(s.net, 0);
  fill("gen.", s.generator->parameters());
  fill("ema.", s.ema->parameters());
  if (s.kind == ModelKind::teacher) {
    const TeacherConfig tc = TeacherConfig::from(d.meta);
    s.opt_g = std::make_unique<Adam>(s.generator->parameters(), AdamConfig{tc.lr, 0.9, 0.999, 1e-8});
  } else {
    const DistillConfig dc = DistillConfig::from(d.meta);
    s.opt_g = std::make_unique<Adam>(s.generator->parameters(), AdamConfig{dc.lr_g, 0.5, 0.999, 1e-8});
    s.disc = std::make_unique<DiscriminatorNet>(s.net, 0, parse_head_mode(d.meta.get("disc.heads", "both")));
    fill("disc.", s.disc->backbone_parameters());
    fill("disc.", s.disc->head_parameters());
    s.opt_d = std::make_unique<Adam>(s.disc->head_parameters(), AdamConfig{dc.lr_d, 0.5, 0.999, 1e-8});
    fill("opt.disc.m.", s.opt_d->first_moments());
    fill("opt.disc.v.", s.opt_d->second_moments());
    s.opt_d->set_steps(d.meta.get_int("opt.disc.steps", 0));
  }
  fill("opt.gen.m.", s.opt_g->first_moments());
  fill("opt.gen.v.", s.opt_g->second_moments());
  s.opt_g->set_steps(d.meta.get_int("opt.gen.steps", 0));
  if (used != d.tensors.size()) fail(ErrorCode::format, "checkpoint holds unexpected tensors");
  return s;
}

void save_checkpoint(const ModelState& state, const std::string& path) {
  write_checkpoint(state_to_checkpoint(state), path);
}

ModelState load_checkpoint(const std::string& path) { return state_from_checkpoint(read_checkpoint(path)); }

}  // namespace sfv
