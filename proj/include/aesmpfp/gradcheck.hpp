#pragma once

#include "tape.hpp"

namespace aesmpfp {

// Central finite-difference check of analytic gradients.
//
// loss_fn must rebuild the scalar loss from the current parameter values on a
// fresh tape each call.  When max_coords_per_param > 0 only that many
// coordinates per parameter are probed (chosen by the supplied rng), which
// keeps large composed losses affordable.
template <typename F>
double gradcheck_max_rel_err(const std::vector<Param*>& params, F&& loss_fn,
                             double h = 1e-4, size_t max_coords_per_param = 0,
                             RngStream* rng = nullptr) {
  for (Param* p : params) p->zero_grad();
  {
    Tape tape;
    Var loss = loss_fn(tape);
    tape.backward(loss);
  }

  auto eval = [&]() {
    Tape tape;
    Var loss = loss_fn(tape);
    return tape.value(loss).value();
  };

  double worst = 0.0;
  for (Param* p : params) {
    const size_t n = p->value.numel();
    std::vector<size_t> coords;
    if (max_coords_per_param == 0 || n <= max_coords_per_param) {
      coords.resize(n);
      for (size_t i = 0; i < n; ++i) coords[i] = i;
    } else {
      for (size_t c = 0; c < max_coords_per_param; ++c)
        coords.push_back(rng ? rng->uniform_index(n) : c * (n / max_coords_per_param));
    }
    for (size_t i : coords) {
      const double saved = p->value[i];
      p->value[i] = saved + h;
      const double lp = eval();
      p->value[i] = saved - h;
      const double lm = eval();
      p->value[i] = saved;
      const double numeric = (lp - lm) / (2.0 * h);
      const double analytic = p->grad[i];
      const double denom = std::max({1.0, std::abs(numeric), std::abs(analytic)});
      worst = std::max(worst, std::abs(numeric - analytic) / denom);
    }
  }
  return worst;
}

}  // namespace aesmpfp
