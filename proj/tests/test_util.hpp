#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "ipdfer/graph.hpp"
#include "ipdfer/rng.hpp"

namespace testutil {

inline ipdfer::Tensor random_tensor(std::vector<int> dims, ipdfer::Rng& rng, double scale = 0.5) {
  ipdfer::Tensor t(std::move(dims));
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = scale * rng.gaussian();
  return t;
}

struct GradCheck {
  int tested = 0;
  int failed = 0;
  double worst_rel = 0.0;
};

/// Central finite differences on randomly sampled entries of each parameter.
/// Expects p->grad to already hold the analytic gradient of loss_value().
inline GradCheck check_gradients(const std::vector<ipdfer::Parameter*>& params,
                                 const std::function<double()>& loss_value, int per_param, double h,
                                 double rtol, ipdfer::Rng& rng, double abs_floor = 1e-9) {
  GradCheck res;
  for (ipdfer::Parameter* p : params) {
    for (int rep = 0; rep < per_param; ++rep) {
      const std::int64_t i =
          static_cast<std::int64_t>(rng.next_u64() % static_cast<std::uint64_t>(p->value.size()));
      const double keep = p->value[i];
      p->value[i] = keep + h;
      const double fp = loss_value();
      p->value[i] = keep - h;
      const double fm = loss_value();
      p->value[i] = keep;
      const double fd = (fp - fm) / (2.0 * h);
      const double an = p->grad[i];
      const double err = std::abs(fd - an);
      const double rel = err / std::max({std::abs(fd), std::abs(an), 1e-12});
      ++res.tested;
      if (rel > rtol && err > abs_floor) {
        ++res.failed;
        res.worst_rel = std::max(res.worst_rel, rel);
      }
    }
  }
  return res;
}

}  // namespace testutil
