#include "scenediff/guidance/guidance.hpp"

#include <cmath>
#include <iostream>
#include <stdexcept>

namespace scenediff {

Var aggregate_per_sample(Graph& g, Var loss) {
  const auto& s = g.shape(loss);
  if (s.size() == 1) return loss;
  if (s.size() == 2) return reduce_mean(loss, {0});
  throw std::invalid_argument("guidance loss must have shape (N) or (B, N), got " +
                              shape_to_string(s));
}

}  // namespace scenediff

namespace scenediff::guidance {

void GuidanceConfig::validate() const {
  if (W < 0) throw std::invalid_argument("guidance: W must be >= 0");
  if (N < 1) throw std::invalid_argument("guidance: N must be >= 1");
  if (l < 1) throw std::invalid_argument("guidance: l must be >= 1");
  if (!(alpha > 0)) throw std::invalid_argument("guidance: alpha must be > 0");
}

DenseArray perturb_mean(const DenseArray& mu0, const GuidanceLoss& J,
                        const Scene& scene, std::int64_t k,
                        const diffusion::NoiseSchedule& schedule,
                        const GuidanceConfig& cfg) {
  cfg.validate();
  if (!J.valid() || cfg.W == 0) return mu0;
  const double bound = schedule.beta[k];

  DenseArray mu = mu0;
  // fresh Adam state per denoising step
  DenseArray m(mu.shape()), v(mu.shape());
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  for (std::int64_t j = 1; j <= cfg.W; ++j) {
    Graph g;
    Var leaf = g.leaf(mu);
    Var block = diffusion::assemble_block(g, leaf, scene);
    Var loss = J.eval(g, block, scene);
    Var scalar = reduce_sum(aggregate_per_sample(g, loss), {0});
    g.backward(scalar);
    const DenseArray& grad = g.grad(leaf);
    if (!grad.all_finite()) {
      std::cerr << "guidance: non-finite gradient at k=" << k << " step " << j
                << ", perturbation skipped\n";
      continue;
    }
    const double bc1 = 1.0 - std::pow(b1, static_cast<double>(j));
    const double bc2 = 1.0 - std::pow(b2, static_cast<double>(j));
    for (std::int64_t i = 0; i < mu.size(); ++i) {
      m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
      v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
      mu[i] -= cfg.alpha * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps);
    }
    if (cfg.clip_enabled) {
      for (std::int64_t i = 0; i < mu.size(); ++i) {
        double delta = mu[i] - mu0[i];
        if (delta > bound) delta = bound;
        if (delta < -bound) delta = -bound;
        double cand = mu0[i] + delta;
        // the addition may round just past the bound; the invariant on the
        // recovered difference is exact, so nudge back inside
        while (std::abs(cand - mu0[i]) > bound) {
          cand = std::nextafter(cand, mu0[i]);
        }
        mu[i] = cand;
      }
    }
  }
  return mu;
}

diffusion::MeanPerturber make_perturber(const GuidanceLoss& J, const Scene& scene,
                                        const diffusion::NoiseSchedule& schedule,
                                        const GuidanceConfig& cfg) {
  if (!J.valid() || cfg.W == 0) return nullptr;
  return [&J, &scene, &schedule, cfg](const DenseArray& mu, std::int64_t k) {
    return perturb_mean(mu, J, scene, k, schedule, cfg);
  };
}

SceneTrajectory guided_denoise_step(const SceneTrajectory& tau_k, std::int64_t k,
                                    const Scene& scene,
                                    const diffusion::DenoiserParamsRef& model,
                                    const diffusion::NoiseSchedule& schedule,
                                    const GuidanceLoss& J,
                                    const GuidanceConfig& cfg,
                                    const Prng& chain_rng) {
  const DenseArray& blk = tau_k.block;
  const std::int64_t B = blk.dim(0), N = blk.dim(1), T = blk.dim(2);
  DenseArray actions({B, N, T, 2});
  for (std::int64_t r = 0; r < B * N * T; ++r) {
    actions[r * 2 + 0] = blk[r * 6 + kChAcc];
    actions[r * 2 + 1] = blk[r * 6 + kChYawVel];
  }
  DenseArray next = diffusion::denoise_action_step(
      diffusion::normalize_actions(actions), k, scene, model, schedule,
      chain_rng, make_perturber(J, scene, schedule, cfg));
  return diffusion::assemble_block(next, scene);
}

FiltrationResult filtrate(const SceneTrajectory& samples, const GuidanceLoss& J,
                          const Scene& scene) {
  const std::int64_t B = samples.block.dim(0);
  const std::int64_t N = samples.block.dim(1);
  const std::int64_t T = samples.block.dim(2);

  FiltrationResult res;
  if (J.valid()) {
    Graph g(/*recording=*/false);
    Var block = g.constant(samples.block);
    Var agg = aggregate_per_sample(g, J.eval(g, block, scene));
    res.per_sample_loss = g.value(agg);
  } else {
    res.per_sample_loss = DenseArray({N});
  }
  std::int64_t best = 0;
  for (std::int64_t n = 1; n < N; ++n) {
    if (res.per_sample_loss[n] < res.per_sample_loss[best]) best = n;
  }
  res.index = best;
  res.trajectory.frame = samples.frame;
  res.trajectory.block = DenseArray({B, 1, T, kNumChannels});
  for (std::int64_t b = 0; b < B; ++b) {
    for (std::int64_t t = 0; t < T; ++t) {
      for (std::int64_t c = 0; c < kNumChannels; ++c) {
        res.trajectory.block.at({b, 0, t, c}) = samples.block.at({b, best, t, c});
      }
    }
  }
  return res;
}

FiltrationResult guided_sample(const Scene& scene,
                               const diffusion::DenoiserParamsRef& model,
                               const diffusion::NoiseSchedule& schedule,
                               const GuidanceLoss& J, const GuidanceConfig& cfg,
                               std::uint64_t seed) {
  cfg.validate();
  SceneTrajectory samples = diffusion::sample(
      scene, model, schedule, cfg.N, seed, make_perturber(J, scene, schedule, cfg));
  return filtrate(samples, J, scene);
}

}  // namespace scenediff::guidance
