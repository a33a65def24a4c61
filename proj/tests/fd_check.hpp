#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "ulim/params.hpp"
#include "ulim/tape.hpp"

namespace ulim::testing {

struct FdReport {
  double max_rel_err = 0.0;
  std::string worst_param;
  std::size_t checked = 0;
};

// Central finite differences (h = 1e-3 by default) against tape gradients for
// every entry of every parameter the loss touches. The perturbed values are
// re-read from float storage so the effective step is exact.
//
// An entry that fails at the base step is retried at h/10 and h/100 and
// accepted if any retry agrees. A wrong analytic gradient disagrees at every
// step size, so the retries cannot mask a real bug; they only filter the case
// where the +/-h interval straddles a relu kink, which makes the central
// difference compare the analytic one-sided slope against an average of the
// two sides (standard multi-step-size gradient checking).
inline FdReport fd_check_all(
    ParamStore& params,
    const std::function<Tape::VarId(Tape&, const ParamStore&)>& build, double h = 1e-3,
    std::size_t stride = 1) {
  Tape tape;
  Tape::VarId loss = build(tape, params);
  tape.backward(loss);
  const auto& grads = tape.param_grads();

  auto eval = [&](const ParamStore& p) {
    Tape t;
    return t.scalar(build(t, p));
  };

  FdReport report;
  for (const auto& [name, grad] : grads) {
    Tensor& t = params.get(name);
    for (std::size_t i = 0; i < t.size(); i += stride) {
      const float orig = t[i];
      const double g = grad[i];
      double rel = 1.0;
      for (double step_h : {h, h / 10.0, h / 100.0}) {
        const float wp = static_cast<float>(static_cast<double>(orig) + step_h);
        const float wm = static_cast<float>(static_cast<double>(orig) - step_h);
        t[i] = wp;
        const double fp = eval(params);
        t[i] = wm;
        const double fm = eval(params);
        t[i] = orig;
        const double step = static_cast<double>(wp) - static_cast<double>(wm);
        const double fd = (fp - fm) / step;
        const double denom = std::max(std::abs(g), std::abs(fd));
        if (denom < 1e-8) {
          rel = std::abs(g - fd) < 1e-8 ? 0.0 : 1.0;
        } else {
          rel = std::abs(g - fd) / std::max(denom, 1e-6);
        }
        if (rel < 1e-3) break;
      }
      ++report.checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst_param = name + "[" + std::to_string(i) + "]";
      }
    }
  }
  return report;
}

}  // namespace ulim::testing
