#include "agd/checkpoint.hpp"

#include <string_view>
#include <utility>

#include "agd/binary_io.hpp"
#include "agd/errors.hpp"
#include "agd/hash.hpp"

namespace agd::checkpoint {

using nn::Matrix;

namespace {

constexpr std::string_view kBaseMagic = "AGDB";
constexpr std::string_view kAdapterMagic = "AGDA";
constexpr std::uint16_t kVersion = 1;

void finish(io::Writer& w, const std::filesystem::path& path) {
  w.u64(fnv1a(w.buffer()));
  io::write_file(path, w.buffer());
}

/// Verifies the trailing checksum and returns the payload size.
std::size_t verified_payload(const std::vector<std::byte>& bytes, const std::string& what) {
  if (bytes.size() < 12) throw IoError(what + " is truncated");
  const std::size_t payload = bytes.size() - 8;
  io::Reader tail(bytes.data() + payload, 8);
  if (tail.u64() != fnv1a(std::span(bytes.data(), payload))) {
    throw IoError(what + ": checksum mismatch");
  }
  return payload;
}

void expect_magic(io::Reader& r, std::string_view magic, const std::string& what) {
  if (r.bytes(4) != magic) throw IoError(what + " has the wrong file type");
  const std::uint16_t v = r.u16();
  if (v != kVersion) throw CompatibilityError(what + ": unsupported version " + std::to_string(v));
}

template <class Params>
void write_tensors(io::Writer& w, const Params& params) {
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const nn::Parameter* p : params) {
    w.str(p->name);
    w.matrix(p->value);
  }
}

std::vector<Matrix> read_tensors(io::Reader& r, const std::vector<const nn::Parameter*>& expect,
                                 const std::string& what) {
  const std::uint32_t n = r.u32();
  if (n != expect.size()) throw CompatibilityError(what + ": tensor count mismatch");
  std::vector<Matrix> out;
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::string name = r.str();
    if (name != expect[i]->name) {
      throw CompatibilityError(what + ": expected tensor " + expect[i]->name + ", found " + name);
    }
    out.push_back(r.matrix());
  }
  return out;
}

void write_denoiser_config(io::Writer& w, const diffusion::DenoiserConfig& c) {
  w.i64(c.num_classes);
  w.u64(c.embed_dim);
  w.u64(c.hidden);
  w.u64(c.depth);
  w.u64(c.time_frequencies);
  w.f64(c.time_scale);
  w.f64(c.sigma_data);
  w.u8(static_cast<std::uint8_t>(c.activation));
}

diffusion::DenoiserConfig read_denoiser_config(io::Reader& r) {
  diffusion::DenoiserConfig c;
  c.num_classes = static_cast<int>(r.i64());
  c.embed_dim = r.u64();
  c.hidden = r.u64();
  c.depth = r.u64();
  c.time_frequencies = r.u64();
  c.time_scale = r.f64();
  c.sigma_data = r.f64();
  const std::uint8_t act = r.u8();
  if (act > 2) throw IoError("unknown activation tag");
  c.activation = static_cast<nn::Activation>(act);
  if (c.num_classes <= 0 || c.num_classes > 1 << 20 || c.hidden > 1 << 20 ||
      c.embed_dim > 1 << 20 || c.depth > 1024 || c.time_frequencies > 1 << 20) {
    throw IoError("implausible denoiser configuration in checkpoint");
  }
  return c;
}

}  // namespace

void save_base(const std::filesystem::path& path, const diffusion::Denoiser& model,
               std::uint64_t config_hash,
               const std::map<std::string, std::vector<std::byte>>& sections) {
  io::Writer w;
  w.bytes(kBaseMagic);
  w.u16(kVersion);
  w.u64(config_hash);
  w.u64(model.schedule_hash());
  write_denoiser_config(w, model.config());
  w.matrix(model.time_encoder().frequencies());
  write_tensors(w, model.parameters());
  w.u32(static_cast<std::uint32_t>(sections.size()));
  for (const auto& [tag, bytes] : sections) {
    w.str(tag);
    w.u64(bytes.size());
    for (std::byte b : bytes) w.u8(std::to_integer<std::uint8_t>(b));
  }
  finish(w, path);
}

BaseFile load_base(const std::filesystem::path& path) {
  const std::string what = "'" + path.string() + "'";
  const auto bytes = io::read_file(path);
  io::Reader r(bytes.data(), verified_payload(bytes, what));
  expect_magic(r, kBaseMagic, what);
  BaseFile f;
  f.config_hash = r.u64();
  const std::uint64_t schedule_hash = r.u64();
  const auto cfg = read_denoiser_config(r);
  Matrix freqs = r.matrix();
  f.model = diffusion::Denoiser(cfg, 0);
  if (freqs.rows() != cfg.time_frequencies || freqs.cols() != 1) {
    throw IoError(what + ": time encoder shape mismatch");
  }
  f.model.set_time_encoder(nn::FourierEncoder(std::move(freqs)));
  f.model.load_values(read_tensors(r, f.model.parameters(), what));
  f.model.set_schedule_hash(schedule_hash);
  const std::uint32_t nsec = r.u32();
  for (std::uint32_t i = 0; i < nsec; ++i) {
    const std::string tag = r.str();
    const std::uint64_t len = r.u64();
    if (len > r.remaining()) throw IoError(what + ": section larger than file");
    const std::string raw = r.bytes(len);
    std::vector<std::byte> sec(raw.size());
    for (std::size_t k = 0; k < raw.size(); ++k) sec[k] = static_cast<std::byte>(raw[k]);
    f.sections[tag] = std::move(sec);
  }
  if (r.remaining() != 0) throw IoError(what + ": trailing bytes");
  return f;
}

std::vector<std::byte> encode_adapters(const adapters::AdapterStack& stack,
                                       std::uint64_t config_hash) {
  const auto& c = stack.config();
  io::Writer w;
  w.bytes(kAdapterMagic);
  w.u16(kVersion);
  w.u64(config_hash);
  w.u64(stack.base_hash());
  w.u8(static_cast<std::uint8_t>(c.arch));
  w.u64(c.width);
  w.u64(c.tokens);
  w.u64(c.mlp_hidden);
  w.u8(static_cast<std::uint8_t>(c.init));
  w.f64(c.dropout);
  w.u64(c.omega_frequencies);
  w.f64(c.omega_scale);
  w.u64(c.position_frequencies);
  w.u8(static_cast<std::uint8_t>(c.activation));
  w.u64(c.seed);
  w.matrix(stack.encoder().omega_fourier.frequencies());
  write_tensors(w, stack.parameters());
  w.u64(fnv1a(w.buffer()));
  return w.buffer();
}

AdapterFile decode_adapters(const std::vector<std::byte>& bytes, const diffusion::Denoiser& base) {
  const std::string what = "adapter payload";
  io::Reader r(bytes.data(), verified_payload(bytes, what));
  expect_magic(r, kAdapterMagic, what);
  AdapterFile f;
  f.config_hash = r.u64();
  const std::uint64_t base_hash = r.u64();
  if (base_hash != base.parameter_hash()) {
    throw CompatibilityError("adapters were trained on a different base model");
  }
  adapters::AdapterConfig c;
  const std::uint8_t arch = r.u8();
  if (arch > 3) throw IoError("unknown adapter architecture tag");
  c.arch = static_cast<adapters::Architecture>(arch);
  c.width = r.u64();
  c.tokens = r.u64();
  c.mlp_hidden = r.u64();
  const std::uint8_t init = r.u8();
  if (init > 1) throw IoError("unknown init tag");
  c.init = static_cast<nn::InitScheme>(init);
  c.dropout = r.f64();
  c.omega_frequencies = r.u64();
  c.omega_scale = r.f64();
  c.position_frequencies = r.u64();
  const std::uint8_t act = r.u8();
  if (act > 2) throw IoError("unknown activation tag");
  c.activation = static_cast<nn::Activation>(act);
  c.seed = r.u64();
  if (c.width > 1 << 16 || c.tokens > 1 << 16 || c.mlp_hidden > 1 << 16 ||
      c.omega_frequencies > 1 << 16 || c.position_frequencies > 1 << 16) {
    throw IoError("implausible adapter configuration");
  }
  Matrix freqs = r.matrix();
  f.stack = adapters::AdapterStack(c, base);
  if (freqs.rows() != c.omega_frequencies || freqs.cols() != 1) {
    throw IoError("omega encoder shape mismatch");
  }
  f.stack.mutable_encoder().omega_fourier = nn::FourierEncoder(std::move(freqs));
  f.stack.load_values(read_tensors(r, std::as_const(f.stack).parameters(), what));
  if (r.remaining() != 0) throw IoError(what + ": trailing bytes");
  return f;
}

void save_adapters(const std::filesystem::path& path, const adapters::AdapterStack& stack,
                   std::uint64_t config_hash) {
  io::write_file(path, encode_adapters(stack, config_hash));
}

AdapterFile load_adapters(const std::filesystem::path& path, const diffusion::Denoiser& base) {
  return decode_adapters(io::read_file(path), base);
}

void save_gd(const std::filesystem::path& path, const distill::GdModel& model,
             std::uint64_t config_hash) {
  const auto& p = model.pathway();
  io::Writer w;
  w.matrix(p.fourier.frequencies());
  std::vector<const nn::Parameter*> params;
  p.collect(params);
  write_tensors(w, params);
  save_base(path, model.network(), config_hash, {{kOmegaPathwaySection, w.buffer()}});
}

GdFile load_gd(const std::filesystem::path& path) {
  BaseFile base = load_base(path);
  const auto it = base.sections.find(kOmegaPathwaySection);
  if (it == base.sections.end()) {
    throw CompatibilityError("'" + path.string() + "' has no omega pathway section");
  }
  io::Reader r(it->second.data(), it->second.size());
  Matrix freqs = r.matrix();
  distill::OmegaPathwayConfig pc;
  pc.frequencies = freqs.rows();
  distill::OmegaPathway pathway = distill::OmegaPathway::make(pc, base.model.config().embed_dim);
  pathway.fourier = nn::FourierEncoder(std::move(freqs));
  std::vector<const nn::Parameter*> expect;
  pathway.collect(expect);
  const auto values = read_tensors(r, expect, "omega pathway");
  std::vector<nn::Parameter*> params;
  pathway.collect(params);
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (values[i].rows() != params[i]->value.rows() ||
        values[i].cols() != params[i]->value.cols()) {
      throw CompatibilityError("omega pathway: shape mismatch for " + params[i]->name);
    }
    params[i]->value = values[i];
  }
  GdFile f;
  f.config_hash = base.config_hash;
  f.model = distill::GdModel(std::move(base.model), std::move(pathway));
  return f;
}

std::uint64_t peek_config_hash(const std::filesystem::path& path) {
  const auto bytes = io::read_file(path);
  io::Reader r(bytes.data(), bytes.size());
  const std::string magic = r.bytes(4);
  r.u16();
  if (magic == kBaseMagic || magic == kAdapterMagic) return r.u64();
  if (magic == "AGDT") {
    r.u32();
    r.u32();
    r.u64();
    r.u64();
    r.u64();
    return r.u64();
  }
  throw IoError("'" + path.string() + "' is not an artifact of this tool");
}

}  // namespace agd::checkpoint
