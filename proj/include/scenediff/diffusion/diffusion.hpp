#pragma once

#include <functional>
#include <vector>

#include "scenediff/common.hpp"
#include "scenediff/denoiser/model.hpp"
#include "scenediff/diffusion/schedule.hpp"
#include "scenediff/scene/scene.hpp"

namespace scenediff::diffusion {

// Fixed action normalization: the diffusion noise space carries actions in
// units of these scales so the Gaussian corruption operates near unit
// variance. Trajectory blocks always carry physical units.
inline constexpr double kAccScale = 2.0;      // m/s^2
inline constexpr double kYawRateScale = 0.5;  // rad/s

DenseArray normalize_actions(const DenseArray& physical);
DenseArray denormalize_actions(const DenseArray& normalized);
Var denormalize_actions(Graph& g, Var normalized);

// Trained-model handle: parameters plus inference options.
struct DenoiserParamsRef {
  const denoiser::DenoiserParams* params = nullptr;
  bool ablate_edges = false;
};

// tau^k_a = sqrt(alpha_bar_k) tau^0_a + sqrt(1 - alpha_bar_k) eps. Inputs and
// output live in the normalized action space. Throws on k outside 1..K.
DenseArray corrupt(const DenseArray& tau0_a, std::int64_t k,
                   const DenseArray& eps, const NoiseSchedule& schedule);

// Full 6-channel agent-centric block from normalized actions: state channels
// are the rollout of the denormalized actions from each agent's frame start.
SceneTrajectory assemble_block(const DenseArray& actions_norm, const Scene& scene);
Var assemble_block(Graph& g, Var actions_norm, const Scene& scene);

// mu = (sqrt(ab_{k-1}) beta_k)/(1-ab_k) tau0_hat + (sqrt(a_k)(1-ab_{k-1}))/(1-ab_k) tau_k
DenseArray predicted_mean(const DenseArray& tau0_hat_a, const DenseArray& tau_k_a,
                          std::int64_t k, const NoiseSchedule& schedule);

// Optional hook replacing the predicted mean before noise is added; receives
// and returns normalized action blocks. Used by guidance.
using MeanPerturber =
    std::function<DenseArray(const DenseArray& mu, std::int64_t k)>;

// One reverse step on the normalized action block. z = 0 at k = 1. The rng
// stream is forked per k, so a perturber never disturbs the noise sequence.
DenseArray denoise_action_step(const DenseArray& tau_k_a, std::int64_t k,
                               const Scene& scene, const DenoiserParamsRef& model,
                               const NoiseSchedule& schedule, const Prng& chain_rng,
                               const MeanPerturber& perturb = nullptr);

// Convenience wrapper operating on 6-channel SceneTrajectory blocks.
SceneTrajectory denoise_step(const SceneTrajectory& tau_k, std::int64_t k,
                             const Scene& scene, const DenoiserParamsRef& model,
                             const NoiseSchedule& schedule, const Prng& chain_rng);

// Full K-step reverse chain from Gaussian noise; N parallel samples.
// Deterministic per seed.
SceneTrajectory sample(const Scene& scene, const DenoiserParamsRef& model,
                       const NoiseSchedule& schedule, std::int64_t N,
                       std::uint64_t seed, const MeanPerturber& perturb = nullptr);

struct TrainConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam moments per parameter array, in ParamSet order.
struct AdamState {
  std::vector<DenseArray> m;
  std::vector<DenseArray> v;
  std::int64_t t = 0;
};

// One training step over a batch of scenes: corrupt, predict, rollout, MSE
// over all 6 channels, single Adam update. Returns the batch loss. Throws
// NumericError when the loss is non-finite (no update applied).
double train_step(const std::vector<SceneRecord>& batch,
                  denoiser::DenoiserParams& params, const NoiseSchedule& schedule,
                  AdamState& opt, Prng& rng, const TrainConfig& cfg = {});

// Agent-frame 6-channel target block [states = f(s0, a); actions] built from
// the expert actions of a record.
SceneTrajectory training_target(const SceneRecord& record);

}  // namespace scenediff::diffusion
