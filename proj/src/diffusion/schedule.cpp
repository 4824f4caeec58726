#include "scenediff/diffusion/schedule.hpp"

#include <cmath>
#include <stdexcept>

#include "scenediff/common.hpp"

namespace scenediff::diffusion {

void NoiseSchedule::validate() const {
  if (K < 1) throw std::invalid_argument("schedule: K must be >= 1");
  if (static_cast<std::int64_t>(alpha_bar.size()) != K + 1 ||
      static_cast<std::int64_t>(beta.size()) != K + 1 ||
      static_cast<std::int64_t>(sigma.size()) != K + 1) {
    throw std::invalid_argument("schedule: table sizes inconsistent with K");
  }
  if (alpha_bar[0] != 1.0) {
    throw std::invalid_argument("schedule: alpha_bar[0] must be 1");
  }
  for (std::int64_t k = 1; k <= K; ++k) {
    if (!(alpha_bar[k] < alpha_bar[k - 1])) {
      throw std::invalid_argument("schedule: alpha_bar must strictly decrease");
    }
    if (!(beta[k] > 0.0 && beta[k] <= 0.999)) {
      throw std::invalid_argument("schedule: beta out of (0, 0.999]");
    }
    if (k >= 2 && !(sigma[k] > 0.0)) {
      throw std::invalid_argument("schedule: sigma must be > 0 for k >= 2");
    }
  }
}

NoiseSchedule cosine_schedule(std::int64_t K) {
  if (K < 1) throw std::invalid_argument("cosine_schedule: K must be >= 1");
  constexpr double s = 0.008;
  auto f = [&](double k) {
    double x = ((k / static_cast<double>(K) + s) / (1.0 + s)) * kPi / 2.0;
    double c = std::cos(x);
    return c * c;
  };
  NoiseSchedule sch;
  sch.K = K;
  sch.alpha_bar.resize(K + 1);
  sch.beta.assign(K + 1, 0.0);
  sch.sigma.assign(K + 1, 0.0);
  const double f0 = f(0.0);
  for (std::int64_t k = 0; k <= K; ++k) {
    sch.alpha_bar[k] = f(static_cast<double>(k)) / f0;
  }
  for (std::int64_t k = 1; k <= K; ++k) {
    sch.beta[k] =
        std::min(0.999, 1.0 - sch.alpha_bar[k] / sch.alpha_bar[k - 1]);
    if (k >= 2) {
      sch.sigma[k] = std::sqrt(sch.beta[k] * (1.0 - sch.alpha_bar[k - 1]) /
                               (1.0 - sch.alpha_bar[k]));
    }
  }
  sch.validate();
  return sch;
}

}  // namespace scenediff::diffusion
