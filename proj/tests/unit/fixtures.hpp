#pragma once

#include "agd/dataset.hpp"
#include "agd/denoiser.hpp"
#include "agd/schedule.hpp"
#include "agd/train_base.hpp"

namespace agd::testing {

inline diffusion::RingSpec small_ring() {
  diffusion::RingSpec r;
  r.classes = 3;
  return r;
}

inline diffusion::DenoiserConfig small_model() {
  diffusion::DenoiserConfig m;
  m.num_classes = 3;
  m.embed_dim = 8;
  m.hidden = 16;
  m.depth = 2;
  return m;
}

inline diffusion::ScheduleConfig small_schedule() {
  diffusion::ScheduleConfig s;
  s.steps = 16;
  return s;
}

/// A briefly trained three-class base on a 16-step schedule, shared by the
/// suites that need a teacher. Frozen.
struct SmallWorld {
  diffusion::ToyDataset data = diffusion::ToyDataset::ring(small_ring());
  diffusion::NoiseSchedule schedule{small_schedule()};
  diffusion::Denoiser base;

  SmallWorld() {
    diffusion::BaseTrainConfig cfg;
    cfg.steps = 300;
    cfg.batch = 64;
    cfg.seed = 5;
    base = diffusion::train_base(data, schedule, small_model(), cfg).model;
    base.set_frozen(true);
  }

  static const SmallWorld& get() {
    static const SmallWorld w;
    return w;
  }
};

}  // namespace agd::testing
