#include "scenediff/diffusion/diffusion.hpp"

#include <cmath>
#include <stdexcept>

#include "scenediff/dynamics/unicycle.hpp"
#include "scenediff/tensor/kernels.hpp"

namespace scenediff::diffusion {

namespace dyn = scenediff::dynamics;

namespace {

void check_action_block(const DenseArray& a, const char* who) {
  if (a.ndim() != 4 || a.dim(3) != 2) {
    throw std::invalid_argument(std::string(who) +
                                ": expected (B, N, T, 2), got " + a.shape_str());
  }
}

void check_k(std::int64_t k, const NoiseSchedule& s, const char* who) {
  if (k < 1 || k > s.K) {
    throw std::invalid_argument(std::string(who) + ": k = " + std::to_string(k) +
                                " outside 1.." + std::to_string(s.K));
  }
}

}  // namespace

DenseArray normalize_actions(const DenseArray& physical) {
  check_action_block(physical, "normalize_actions");
  DenseArray out = physical;
  for (std::int64_t i = 0; i < out.size(); i += 2) {
    out[i] /= kAccScale;
    out[i + 1] /= kYawRateScale;
  }
  return out;
}

DenseArray denormalize_actions(const DenseArray& normalized) {
  check_action_block(normalized, "denormalize_actions");
  DenseArray out = normalized;
  for (std::int64_t i = 0; i < out.size(); i += 2) {
    out[i] *= kAccScale;
    out[i + 1] *= kYawRateScale;
  }
  return out;
}

Var denormalize_actions(Graph& g, Var normalized) {
  check_action_block(g.value(normalized), "denormalize_actions");
  Var scale = g.constant(DenseArray({2}, {kAccScale, kYawRateScale}));
  return mul(normalized, scale);
}

DenseArray corrupt(const DenseArray& tau0_a, std::int64_t k,
                   const DenseArray& eps, const NoiseSchedule& schedule) {
  check_k(k, schedule, "corrupt");
  if (!tau0_a.same_shape(eps)) {
    throw std::invalid_argument("corrupt: eps shape " + eps.shape_str() +
                                " does not match " + tau0_a.shape_str());
  }
  const double a = std::sqrt(schedule.alpha_bar[k]);
  const double b = std::sqrt(1.0 - schedule.alpha_bar[k]);
  DenseArray out = tau0_a;
  for (std::int64_t i = 0; i < out.size(); ++i) {
    out[i] = a * tau0_a[i] + b * eps[i];
  }
  return out;
}

SceneTrajectory assemble_block(const DenseArray& actions_norm, const Scene& scene) {
  check_action_block(actions_norm, "assemble_block");
  DenseArray phys = denormalize_actions(actions_norm);
  DenseArray states = dyn::rollout(dyn::agent_frame_starts(scene), phys, scene.dt);
  const std::int64_t B = phys.dim(0), N = phys.dim(1), T = phys.dim(2);
  SceneTrajectory traj;
  traj.frame = Frame::agent_centric;
  traj.block = DenseArray({B, N, T, kNumChannels});
  for (std::int64_t r = 0; r < B * N * T; ++r) {
    for (int c = 0; c < 4; ++c) traj.block[r * 6 + c] = states[r * 4 + c];
    traj.block[r * 6 + 4] = phys[r * 2 + 0];
    traj.block[r * 6 + 5] = phys[r * 2 + 1];
  }
  return traj;
}

Var assemble_block(Graph& g, Var actions_norm, const Scene& scene) {
  Var phys = denormalize_actions(g, actions_norm);
  Var states = dyn::rollout(g, dyn::agent_frame_starts(scene), phys, scene.dt);
  return concat({states, phys}, 3);
}

DenseArray predicted_mean(const DenseArray& tau0_hat_a, const DenseArray& tau_k_a,
                          std::int64_t k, const NoiseSchedule& schedule) {
  check_k(k, schedule, "predicted_mean");
  if (!tau0_hat_a.same_shape(tau_k_a)) {
    throw std::invalid_argument("predicted_mean: shapes disagree: " +
                                tau0_hat_a.shape_str() + " vs " +
                                tau_k_a.shape_str());
  }
  const double ab_k = schedule.alpha_bar[k];
  const double ab_prev = schedule.alpha_bar[k - 1];
  const double beta_k = schedule.beta[k];
  const double alpha_k = 1.0 - beta_k;
  const double c0 = std::sqrt(ab_prev) * beta_k / (1.0 - ab_k);
  const double ck = std::sqrt(alpha_k) * (1.0 - ab_prev) / (1.0 - ab_k);
  DenseArray out = tau0_hat_a;
  for (std::int64_t i = 0; i < out.size(); ++i) {
    out[i] = c0 * tau0_hat_a[i] + ck * tau_k_a[i];
  }
  return out;
}

namespace {

DenseArray denoise_core(const DenseArray& tau_k_a, std::int64_t k,
                        const Scene& scene, const denoiser::ForwardContext& ctx,
                        const DenoiserParamsRef& model,
                        const NoiseSchedule& schedule, const Prng& chain_rng,
                        const MeanPerturber& perturb) {
  SceneTrajectory block = assemble_block(tau_k_a, scene);
  DenseArray out_phys =
      denoiser::forward_eval(block.block, k, ctx, *model.params);
  DenseArray tau0_hat = normalize_actions(out_phys);
  DenseArray mu = predicted_mean(tau0_hat, tau_k_a, k, schedule);
  if (perturb) mu = perturb(mu, k);
  if (k > 1) {
    Prng step_rng = chain_rng.fork(static_cast<std::uint64_t>(k));
    const double s = schedule.sigma[k];
    for (std::int64_t i = 0; i < mu.size(); ++i) {
      mu[i] += s * step_rng.gaussian();
    }
  }
  return mu;
}

denoiser::ForwardContext inference_ctx(const Scene& scene,
                                       const DenoiserParamsRef& model,
                                       std::int64_t T) {
  denoiser::ForwardContext ctx;
  ctx.scene = &scene;
  ctx.edge_states = denoiser::edge_states_inference(
      scene, model.params->dims.t_hist, T);
  ctx.ablate_edges = model.ablate_edges;
  return ctx;
}

}  // namespace

DenseArray denoise_action_step(const DenseArray& tau_k_a, std::int64_t k,
                               const Scene& scene, const DenoiserParamsRef& model,
                               const NoiseSchedule& schedule, const Prng& chain_rng,
                               const MeanPerturber& perturb) {
  check_action_block(tau_k_a, "denoise_action_step");
  check_k(k, schedule, "denoise_action_step");
  denoiser::ForwardContext ctx = inference_ctx(scene, model, tau_k_a.dim(2));
  return denoise_core(tau_k_a, k, scene, ctx, model, schedule, chain_rng, perturb);
}

SceneTrajectory denoise_step(const SceneTrajectory& tau_k, std::int64_t k,
                             const Scene& scene, const DenoiserParamsRef& model,
                             const NoiseSchedule& schedule, const Prng& chain_rng) {
  const DenseArray& blk = tau_k.block;
  const std::int64_t B = blk.dim(0), N = blk.dim(1), T = blk.dim(2);
  DenseArray actions({B, N, T, 2});
  for (std::int64_t r = 0; r < B * N * T; ++r) {
    actions[r * 2 + 0] = blk[r * 6 + kChAcc];
    actions[r * 2 + 1] = blk[r * 6 + kChYawVel];
  }
  DenseArray next = denoise_action_step(normalize_actions(actions), k, scene,
                                        model, schedule, chain_rng);
  return assemble_block(next, scene);
}

SceneTrajectory sample(const Scene& scene, const DenoiserParamsRef& model,
                       const NoiseSchedule& schedule, std::int64_t N,
                       std::uint64_t seed, const MeanPerturber& perturb) {
  if (N < 1) throw std::invalid_argument("sample: N must be >= 1");
  const std::int64_t B = scene.num_agents();
  const std::int64_t T = model.params->dims.horizon;
  Prng chain(seed);
  Prng init = chain.fork(0);
  DenseArray tau({B, N, T, 2});
  for (std::int64_t i = 0; i < tau.size(); ++i) tau[i] = init.gaussian();

  denoiser::ForwardContext ctx = inference_ctx(scene, model, T);
  for (std::int64_t k = schedule.K; k >= 1; --k) {
    tau = denoise_core(tau, k, scene, ctx, model, schedule, chain, perturb);
  }
  return assemble_block(tau, scene);
}

SceneTrajectory training_target(const SceneRecord& record) {
  if (!record.expert) {
    throw std::invalid_argument("training_target: record has no expert track");
  }
  const DenseArray& acts = record.expert->actions;  // (B, T, 2)
  const std::int64_t B = acts.dim(0), T = acts.dim(1);
  DenseArray a4 = acts.reshaped({B, 1, T, 2});
  SceneTrajectory traj;
  traj.frame = Frame::agent_centric;
  DenseArray states =
      dyn::rollout(dyn::agent_frame_starts(record.scene), a4, record.scene.dt);
  traj.block = DenseArray({B, 1, T, kNumChannels});
  for (std::int64_t r = 0; r < B * T; ++r) {
    for (int c = 0; c < 4; ++c) traj.block[r * 6 + c] = states[r * 4 + c];
    traj.block[r * 6 + 4] = a4[r * 2 + 0];
    traj.block[r * 6 + 5] = a4[r * 2 + 1];
  }
  return traj;
}

double train_step(const std::vector<SceneRecord>& batch,
                  denoiser::DenoiserParams& params, const NoiseSchedule& schedule,
                  AdamState& opt, Prng& rng, const TrainConfig& cfg) {
  if (batch.empty()) throw std::invalid_argument("train_step: empty batch");

  Graph g;
  denoiser::ParamVars pv(g, params, /*trainable=*/true);
  Var total = g.constant_scalar(0.0);
  for (const SceneRecord& rec : batch) {
    if (!rec.expert) throw std::invalid_argument("train_step: record lacks expert");
    const Scene& scene = rec.scene;
    const DenseArray& acts = rec.expert->actions;
    const std::int64_t B = acts.dim(0), T = acts.dim(1);

    const std::int64_t k =
        1 + static_cast<std::int64_t>(rng.uniform_index(
                static_cast<std::uint64_t>(schedule.K)));
    DenseArray eps({B, 1, T, 2});
    for (std::int64_t i = 0; i < eps.size(); ++i) eps[i] = rng.gaussian();

    DenseArray a0n = normalize_actions(acts.reshaped({B, 1, T, 2}));
    DenseArray tau_k_a = corrupt(a0n, k, eps, schedule);
    SceneTrajectory block_k = assemble_block(tau_k_a, scene);

    denoiser::ForwardContext ctx;
    ctx.scene = &scene;
    ctx.edge_states = denoiser::edge_states_training(scene, rec.expert->states,
                                                     params.dims.t_hist);
    Var out = denoiser::forward(g, g.constant(block_k.block), k, ctx, params, pv);
    Var states_hat =
        dyn::rollout(g, dyn::agent_frame_starts(scene), out, scene.dt);
    Var pred6 = concat({states_hat, out}, 3);

    SceneTrajectory target = training_target(rec);
    Var err = sub(pred6, g.constant(target.block));
    total = add(total, reduce_mean(mul(err, err), {0, 1, 2, 3}));
  }
  Var loss = divide(total, static_cast<double>(batch.size()));
  const double loss_value = g.value(loss)[0];
  if (!std::isfinite(loss_value)) {
    throw NumericError("train_step: non-finite loss, step aborted");
  }
  g.backward(loss);

  if (opt.m.empty()) {
    opt.m.resize(params.set.size());
    opt.v.resize(params.set.size());
    for (std::size_t i = 0; i < params.set.size(); ++i) {
      opt.m[i] = DenseArray(params.set.item(i).second.shape());
      opt.v[i] = DenseArray(params.set.item(i).second.shape());
    }
  }
  opt.t += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(opt.t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(opt.t));
  for (std::size_t i = 0; i < params.set.size(); ++i) {
    const DenseArray& grad = g.grad(pv.items()[i].second);
    DenseArray& p = params.set.item(i).second;
    DenseArray& m = opt.m[i];
    DenseArray& v = opt.v[i];
    for (std::int64_t j = 0; j < p.size(); ++j) {
      m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * grad[j];
      v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * grad[j] * grad[j];
      p[j] -= cfg.lr * (m[j] / bc1) / (std::sqrt(v[j] / bc2) + cfg.eps);
    }
  }
  return loss_value;
}

}  // namespace scenediff::diffusion
