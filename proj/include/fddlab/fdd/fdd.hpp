#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "fddlab/fdd/disc.hpp"
#include "fddlab/models/compose.hpp"
#include "fddlab/worldgen/dataset.hpp"

namespace fddlab::fdd {

enum class SdsSampling { Independent, Shared };
enum class Weighting { Unit, Snr };  // c(t) = 1 or c(t) = snr(t) / (1 + snr(t))
enum class Init { Pretrained, Random };

struct FddConfig {
  int k = 3;
  double alpha = 0.5;
  double beta = 0.5;
  double lambda = 2.5;
  int warmup_sds_iters = 1000;
  int adversarial_iters = 500;
  SdsSampling sds_t_sampling = SdsSampling::Independent;
  GLossForm g_loss_form = GLossForm::Paper;
  Weighting weighting = Weighting::Unit;
  bool kbin = true;
  Init init = Init::Pretrained;
  double lr = 1e-4;
  double disc_lr = 1e-4;
  int batch = 4;  // clips per step
  int teacher_steps = 16;
  int checkpoint_every = 0;
  std::size_t tape_limit = 0;  // 0: unbounded
  DiscConfig disc;
  std::uint64_t seed = 0;

  int total_iters() const { return warmup_sds_iters + adversarial_iters; }
};

enum class Preset { Full, RandomInit, NoAlignment, NoSds, NoDisc, NoKbin };
Preset parse_preset(const std::string& name);
std::string to_string(Preset p);
/// Applies an ablation to `base`, keeping the total iteration count.
FddConfig apply_preset(FddConfig base, Preset p);

const char* to_string(GLossForm f);
GLossForm parse_g_loss_form(const std::string& name);

/// Student steps for one generation: a k-bin draw, or the fixed uniform
/// steps when kbin is off.
std::vector<int> student_steps(const FddConfig& cfg, int T, num::Rng& rng);

/// k-step DDIM chain of phi from `noise`, recorded on the active tape.
/// Tape overflow is reported with k.
Tensor student_generate(const models::ModelSet& student, const models::ConditionPack& pack, const Tensor& noise,
                        const std::vector<int>& steps, const diffusion::NoiseSchedule& sched);

/// Per-frame psi edits of one clip's frames, detached. c_vid is [F,C,H,W].
Tensor teacher_sample_psi(const models::ModelSet& teacher, const Tensor& c_vid, const std::vector<int>& c_out,
                          const std::vector<int>& c_instruct, int steps, const diffusion::NoiseSchedule& sched,
                          num::Rng& rng);
/// rho generation of F frames from c_out and a first frame [1,C,H,W], detached.
Tensor teacher_sample_rho(const models::ModelSet& teacher, const std::vector<int>& c_out, const Tensor& first,
                          int frames, int steps, const diffusion::NoiseSchedule& sched, num::Rng& rng);

double sds_weight(Weighting w, const diffusion::NoiseSchedule& sched, int t);

/// L = mean(c(t) * sg(eps_hat - eps) * x0). psi (Variant::Psi) scores every
/// frame with its input frame, c_instruct and c_out; rho (Variant::Rho) the
/// whole clip with c_out and the pack's first frame. `t` holds one step per
/// clip of x0.
Tensor sds_loss(models::Variant teacher_variant, const models::ModelSet& teacher, const Tensor& x0,
                const models::ConditionPack& pack, const std::vector<int>& t, const Tensor& eps,
                const diffusion::NoiseSchedule& sched, Weighting w = Weighting::Unit);

/// Detached teacher samples for one training item.
struct PoolEntry {
  Tensor psi;  // [F,C,H,W]
  Tensor rho;  // [F,C,H,W], generated from psi frame 0
};

/// Teacher samples for every item of the unsupervised set. With a cache
/// directory the pool is reused when the teachers, step count and seed match.
std::vector<PoolEntry> build_teacher_pool(const models::ModelSet& teacher, const worldgen::Subset& triplets,
                                          const diffusion::NoiseSchedule& sched, int steps, std::uint64_t seed,
                                          const std::filesystem::path& cache_dir = {});

struct FddBatch {
  models::ConditionPack pack;  // c_vid, c_out, c_instruct, first_frame = psi frame 0
  Tensor real_psi;             // [B*F,C,H,W]
  Tensor real_rho;
};
FddBatch make_batch(const worldgen::Subset& triplets, const std::vector<PoolEntry>& pool, const std::vector<int>& idx);

struct FddState {
  ParamSet d_e{"D_e"};
  ParamSet d_v{"D_v"};
  std::map<std::string, num::AdamState> adam_student;  // by component tag
  num::AdamState adam_e, adam_v;
};
FddState make_state(const models::ModelSet& teacher, const FddConfig& cfg);

struct StepRecord {
  int iter = 0;
  double sds_edit = 0, sds_video = 0, g_edit = 0, g_video = 0, d_edit = 0, d_video = 0;
  std::string phase;  // "sds" or "adv"
};

/// Student parameters updated by FDD: theta_align, or the whole student
/// under random init.
std::vector<ParamSet*> student_trainables(models::ModelSet& student, const FddConfig& cfg);

/// One iteration: during warmup only the lambda-weighted SDS terms; after it
/// one discriminator step and then one generator step.
StepRecord fdd_train_step(const models::ModelSet& teacher, models::ModelSet& student, FddState& st,
                          const FddBatch& batch, const FddConfig& cfg, const diffusion::NoiseSchedule& sched,
                          int iter, num::Rng rng);

/// The student at FDD iteration 0: teacher components plus theta_align, or
/// fresh adapters over a copy of theta under random init.
models::ModelSet make_student(const models::ModelSet& teacher, const FddConfig& cfg);

struct FddRun {
  models::ModelSet student;
  FddState state;
  std::vector<StepRecord> records;
  double seconds = 0.0;
};

/// Full training run. Writes fdd.csv (and checkpoints) under out_dir when set.
FddRun train_fdd(const models::ModelSet& teacher, const worldgen::Subset& triplets,
                 const std::vector<PoolEntry>& pool, const FddConfig& cfg, const diffusion::NoiseSchedule& sched,
                 const std::filesystem::path& out_dir = {});

}  // namespace fddlab::fdd
