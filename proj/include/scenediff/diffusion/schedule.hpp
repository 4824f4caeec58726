#pragma once

#include <cstdint>
#include <vector>

namespace scenediff::diffusion {

// Tables for K diffusion steps. beta and sigma are 1-indexed (entry 0 unused);
// alpha_bar runs 0..K with alpha_bar[0] == 1. sigma[1] == 0 by convention
// (no noise is added at the final reverse step).
struct NoiseSchedule {
  std::int64_t K = 0;
  std::vector<double> beta;
  std::vector<double> alpha_bar;
  std::vector<double> sigma;

  void validate() const;
};

// alpha_bar[k] = f(k)/f(0), f(k) = cos^2(((k/K + s)/(1 + s)) * pi/2), s = 0.008;
// beta_k = 1 - alpha_bar[k]/alpha_bar[k-1] clipped to <= 0.999;
// sigma_k^2 = beta_k * (1 - alpha_bar[k-1]) / (1 - alpha_bar[k]).
NoiseSchedule cosine_schedule(std::int64_t K);

}  // namespace scenediff::diffusion
