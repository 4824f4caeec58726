#pragma once

#include <cstdint>
#include <optional>

#include "scenediff/diffusion/diffusion.hpp"
#include "scenediff/guidance/loss.hpp"

namespace scenediff::guidance {

struct GuidanceConfig {
  double alpha = 0.05;      // inner Adam step scale
  std::int64_t W = 5;       // inner gradient steps
  std::int64_t N = 4;       // samples per scene for filtration
  std::int64_t l = 5;       // actions executed before replanning (2 Hz at dt 0.1)
  bool clip_enabled = true; // clamp total mean displacement to +-beta_k

  void validate() const;
};

// W Adam descent steps on J evaluated on the full rolled-out trajectory of
// mu (normalized action block); after every step the total displacement from
// mu0 is clamped elementwise to [-beta_k, beta_k] and re-anchored. A
// non-finite gradient skips that inner step.
DenseArray perturb_mean(const DenseArray& mu0, const GuidanceLoss& J,
                        const Scene& scene, std::int64_t k,
                        const diffusion::NoiseSchedule& schedule,
                        const GuidanceConfig& cfg);

// Perturber hook for the diffusion chain; null when J is invalid or W == 0 so
// the degenerate path is byte-identical to unguided sampling.
diffusion::MeanPerturber make_perturber(const GuidanceLoss& J, const Scene& scene,
                                        const diffusion::NoiseSchedule& schedule,
                                        const GuidanceConfig& cfg);

// One guided reverse step (unguided denoise_step with the perturbed mean).
SceneTrajectory guided_denoise_step(const SceneTrajectory& tau_k, std::int64_t k,
                                    const Scene& scene,
                                    const diffusion::DenoiserParamsRef& model,
                                    const diffusion::NoiseSchedule& schedule,
                                    const GuidanceLoss& J,
                                    const GuidanceConfig& cfg,
                                    const Prng& chain_rng);

struct FiltrationResult {
  std::int64_t index = 0;          // argmin over samples, ties -> lowest
  SceneTrajectory trajectory;      // (B, 1, T, 6)
  DenseArray per_sample_loss;      // (N)
};

// Per-scene selection: aggregate J over agents, pick the sample minimizing it.
FiltrationResult filtrate(const SceneTrajectory& samples, const GuidanceLoss& J,
                          const Scene& scene);

// K guided steps over N parallel samples, then filtration.
FiltrationResult guided_sample(const Scene& scene,
                               const diffusion::DenoiserParamsRef& model,
                               const diffusion::NoiseSchedule& schedule,
                               const GuidanceLoss& J, const GuidanceConfig& cfg,
                               std::uint64_t seed);

}  // namespace scenediff::guidance
