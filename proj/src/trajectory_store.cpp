#include "agd/trajectory_store.hpp"

#include <cmath>
#include <string>

#include <spdlog/spdlog.h>

#include "agd/binary_io.hpp"
#include "agd/errors.hpp"
#include "agd/hash.hpp"
#include "agd/metrics.hpp"

namespace agd::store {

using diffusion::Point;

namespace {

constexpr std::string_view kMagic = "AGDT";

void write_payload(io::Writer& w, const StoreHeader& h, const std::vector<TrajectoryRecord>& recs) {
  w.bytes(kMagic);
  w.u16(h.version);
  w.u32(h.data_dim);
  w.u32(h.steps);
  w.u64(h.trajectories);
  w.u64(h.schedule_hash);
  w.u64(h.teacher_hash);
  w.u64(h.config_hash);
  w.f64(h.omega_lo);
  w.f64(h.omega_hi);
  w.u8(static_cast<std::uint8_t>(h.kind));
  w.u8(static_cast<std::uint8_t>(h.source));
  w.u64(recs.size());
  for (const auto& r : recs) {
    w.f64(r.x[0]);
    w.f64(r.x[1]);
    w.f64(r.sigma);
    w.f64(static_cast<double>(r.cls));
    w.f64(r.omega);
    w.f64(r.eps_target[0]);
    w.f64(r.eps_target[1]);
    w.f64(static_cast<double>(r.trajectory_id));
    w.f64(static_cast<double>(r.step));
  }
}

void check_options(const GenerationOptions& opt, const diffusion::Denoiser& teacher) {
  if (!teacher.frozen()) throw PreconditionError("trajectory generation requires a frozen teacher");
  if (!(opt.omega_lo >= 1.0) || !(opt.omega_hi >= opt.omega_lo)) {
    throw InputError("omega range must satisfy 1 <= lo <= hi");
  }
}

StoreHeader make_header(const diffusion::Denoiser& teacher,
                        const diffusion::NoiseSchedule& schedule, const GenerationOptions& opt,
                        Source source) {
  StoreHeader h;
  h.steps = static_cast<std::uint32_t>(schedule.steps());
  h.schedule_hash = schedule.hash();
  h.teacher_hash = teacher.parameter_hash();
  h.config_hash = opt.config_hash;
  h.omega_lo = opt.omega_lo;
  h.omega_hi = opt.omega_hi;
  h.kind = opt.kind;
  h.source = source;
  return h;
}

}  // namespace

Source parse_source(const std::string& s) {
  if (s == "guided") return Source::guided;
  if (s == "diffusion") return Source::diffusion;
  throw InputError("unknown trajectory source '" + s + "'");
}

std::string to_string(Source s) { return s == Source::guided ? "guided" : "diffusion"; }

TrajectoryStore::TrajectoryStore(StoreHeader header, std::vector<TrajectoryRecord> records)
    : header_(header), records_(std::move(records)) {
  if (header_.steps == 0 || records_.size() != header_.trajectories * header_.steps) {
    throw InputError("trajectory store: record count must equal trajectories x steps");
  }
}

std::uint64_t TrajectoryStore::checksum() const {
  io::Writer w;
  write_payload(w, header_, records_);
  return fnv1a(w.buffer());
}

std::pair<TrajectoryStore, TrajectoryStore> TrajectoryStore::split_holdout(
    std::uint64_t modulus) const {
  if (modulus == 0) throw InputError("holdout modulus must be positive");
  std::vector<TrajectoryRecord> train, held;
  for (const auto& r : records_) (r.trajectory_id % modulus == 0 ? held : train).push_back(r);
  StoreHeader ht = header_, hh = header_;
  ht.trajectories = train.size() / header_.steps;
  hh.trajectories = held.size() / header_.steps;
  std::pair<TrajectoryStore, TrajectoryStore> out;
  out.first.header_ = ht;
  out.first.records_ = std::move(train);
  out.second.header_ = hh;
  out.second.records_ = std::move(held);
  return out;
}

std::vector<Point> TrajectoryStore::states_at(std::uint32_t step) const {
  std::vector<Point> out;
  for (const auto& r : records_) {
    if (r.step == step) out.push_back(r.x);
  }
  return out;
}

void TrajectoryStore::write(const std::filesystem::path& path) const {
  io::Writer w;
  write_payload(w, header_, records_);
  w.u64(fnv1a(w.buffer()));
  io::write_file(path, w.buffer());
}

TrajectoryStore TrajectoryStore::read(const std::filesystem::path& path,
                                      std::optional<std::uint64_t> expected_schedule_hash) {
  const auto bytes = io::read_file(path);
  if (bytes.size() < 8) throw IoError("'" + path.string() + "' is too short to be a store");
  const std::size_t payload = bytes.size() - 8;
  io::Reader tail(bytes.data() + payload, 8);
  if (tail.u64() != fnv1a(std::span(bytes.data(), payload))) {
    throw IoError("'" + path.string() + "': checksum mismatch");
  }
  io::Reader r(bytes.data(), payload);
  if (r.bytes(4) != kMagic) throw IoError("'" + path.string() + "' is not an AGDT store");
  StoreHeader h;
  h.version = r.u16();
  if (h.version != StoreHeader::kVersion) {
    throw CompatibilityError("unsupported store version " + std::to_string(h.version));
  }
  h.data_dim = r.u32();
  if (h.data_dim != diffusion::kDataDim) throw CompatibilityError("store data_dim must be 2");
  h.steps = r.u32();
  h.trajectories = r.u64();
  h.schedule_hash = r.u64();
  h.teacher_hash = r.u64();
  h.config_hash = r.u64();
  h.omega_lo = r.f64();
  h.omega_hi = r.f64();
  const std::uint8_t kind = r.u8();
  const std::uint8_t source = r.u8();
  if (kind > 1 || source > 1) throw IoError("store header has an unknown enum value");
  h.kind = static_cast<diffusion::SamplerKind>(kind);
  h.source = static_cast<Source>(source);
  const std::uint64_t n = r.u64();
  if (n != h.trajectories * h.steps || r.remaining() != n * 9 * 8) {
    throw IoError("'" + path.string() + "': record count disagrees with header");
  }
  if (expected_schedule_hash && *expected_schedule_hash != h.schedule_hash) {
    throw CompatibilityError("store schedule hash differs from the active schedule");
  }
  std::vector<TrajectoryRecord> recs(n);
  for (auto& rec : recs) {
    rec.x = {r.f64(), r.f64()};
    rec.sigma = r.f64();
    rec.cls = static_cast<int>(r.f64());
    rec.omega = r.f64();
    rec.eps_target = {r.f64(), r.f64()};
    rec.trajectory_id = static_cast<std::uint64_t>(r.f64());
    rec.step = static_cast<std::uint32_t>(r.f64());
  }
  return TrajectoryStore(h, std::move(recs));
}

TrajectoryDraw draw_trajectory(const GenerationOptions& opt, int num_classes, std::size_t index) {
  TrajectoryDraw d;
  d.noise_seed = Rng(opt.seed, 0x7a1).split(index).next_u64();
  d.cls = opt.stratified
              ? static_cast<int>(index % static_cast<std::size_t>(num_classes))
              : static_cast<int>(Rng(opt.seed, 0xc1a55).split(index).below(
                    static_cast<std::uint64_t>(num_classes)));
  d.omega = opt.omega_lo +
            (opt.omega_hi - opt.omega_lo) * Rng(opt.seed, 0x0e6a).split(index).uniform();
  return d;
}

TrajectoryStore generate_guided_trajectories(const diffusion::Denoiser& teacher,
                                             const diffusion::NoiseSchedule& schedule,
                                             const GenerationOptions& opt) {
  check_options(opt, teacher);
  std::vector<diffusion::SampleSpec> specs(opt.count);
  for (std::size_t i = 0; i < opt.count; ++i) {
    const TrajectoryDraw d = draw_trajectory(opt, teacher.num_classes(), i);
    specs[i] = {d.noise_seed, d.cls, d.omega};
  }
  const diffusion::CfgModel cfg(teacher);
  const auto set = diffusion::sample_batch(cfg, schedule, opt.kind, specs, true);

  std::vector<TrajectoryRecord> recs;
  recs.reserve(opt.count * schedule.steps());
  std::uint64_t kept = 0;
  for (std::size_t i = 0; i < opt.count; ++i) {
    if (set.diverged[i]) {
      spdlog::warn("trajectory {} diverged and was skipped", i);
      continue;
    }
    ++kept;
    const auto& traj = set.trajectories[i];
    for (std::size_t j = 0; j < traj.size(); ++j) {
      recs.push_back({traj[j].x, traj[j].sigma, specs[i].cls, specs[i].omega, traj[j].eps, i,
                      static_cast<std::uint32_t>(j)});
    }
  }
  StoreHeader h = make_header(teacher, schedule, opt, Source::guided);
  h.trajectories = kept;
  return TrajectoryStore(h, std::move(recs));
}

TrajectoryStore generate_diffusion_pairs(const diffusion::Denoiser& teacher,
                                         const diffusion::ToyDataset& data,
                                         const diffusion::NoiseSchedule& schedule,
                                         const GenerationOptions& opt) {
  check_options(opt, teacher);
  if (data.class_count() != teacher.num_classes()) {
    throw CompatibilityError("dataset and teacher disagree on the class count");
  }
  const std::size_t n = opt.count;
  const std::size_t steps = schedule.steps();
  std::vector<TrajectoryDraw> draws(n);
  for (std::size_t i = 0; i < n; ++i) draws[i] = draw_trajectory(opt, teacher.num_classes(), i);

  std::vector<TrajectoryRecord> recs(n * steps);
  const diffusion::CfgModel cfg(teacher);
  nn::Matrix x(n, diffusion::kDataDim);
  std::vector<double> sigma(n), omega(n);
  std::vector<int> classes(n);
  for (std::size_t j = 0; j < steps; ++j) {
    const double s = schedule.at(j);
    for (std::size_t i = 0; i < n; ++i) {
      Rng rng = Rng(opt.seed, 0xd1ff).split(i * steps + j);
      const Point clean = data.sample(draws[i].cls, rng);
      const auto [xt, eps] = diffusion::forward_perturb(clean, s, rng);
      x(i, 0) = xt[0];
      x(i, 1) = xt[1];
      sigma[i] = s;
      omega[i] = draws[i].omega;
      classes[i] = draws[i].cls;
    }
    const nn::Matrix target = cfg.predict(x, sigma, classes, omega);
    for (std::size_t i = 0; i < n; ++i) {
      recs[i * steps + j] = {{x(i, 0), x(i, 1)}, s, classes[i], omega[i],
                             {target(i, 0), target(i, 1)}, i, static_cast<std::uint32_t>(j)};
    }
  }
  StoreHeader h = make_header(teacher, schedule, opt, Source::diffusion);
  h.trajectories = n;
  return TrajectoryStore(h, std::move(recs));
}

std::vector<TrajectoryRecord> sample_minibatch(const TrajectoryStore& store, std::size_t batch,
                                               std::uint64_t seed) {
  if (store.empty()) throw PreconditionError("cannot sample from an empty store");
  Rng rng(seed, 0x3b);
  std::vector<TrajectoryRecord> out;
  out.reserve(batch);
  for (std::size_t b = 0; b < batch; ++b) out.push_back(store.records()[rng.below(store.size())]);
  return out;
}

std::vector<double> trajectory_divergence(const TrajectoryStore& a, const TrajectoryStore& b) {
  if (a.header().schedule_hash != b.header().schedule_hash ||
      a.header().steps != b.header().steps) {
    throw CompatibilityError("trajectory stores were built on different schedules");
  }
  std::vector<double> curve(a.header().steps);
  for (std::uint32_t j = 0; j < a.header().steps; ++j) {
    const auto sa = a.states_at(j);
    const auto sb = b.states_at(j);
    curve[j] = eval::energy_distance(sa, sb);
  }
  return curve;
}

}  // namespace agd::store
