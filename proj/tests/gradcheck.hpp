#pragma once

#include <cmath>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "gliclass/tensor.hpp"

namespace gradcheck {

struct Report {
  int checked = 0;
  bool ok = true;
  double worst_abs = 0.0;
  std::string first_failure;
};

// Central finite differences against tape gradients. `f` must map the inputs
// to a scalar tensor and be side-effect free; inputs flagged requires_grad
// are perturbed elementwise. Tolerance: |a - n| <= max(rel * max(|a|,|n|), abs).
inline Report check_gradients(const std::function<gliclass::Tensor(const std::vector<gliclass::Tensor>&)>& f,
                              const std::vector<gliclass::Tensor>& inputs, double h = 1e-5,
                              double rel = 1e-4, double abs = 1e-6) {
  using namespace gliclass;
  Report rep;

  for (const Tensor& t : inputs) {
    if (t.has_grad()) t.zero_grad();
  }
  Tape tape;
  std::vector<std::vector<double>> analytic(inputs.size());
  {
    TapeScope scope(tape);
    Tensor out = f(inputs);
    tape.backward(out);
  }
  for (size_t i = 0; i < inputs.size(); ++i) {
    if (inputs[i].requires_grad()) analytic[i] = inputs[i].grad();
  }

  for (size_t i = 0; i < inputs.size(); ++i) {
    if (!inputs[i].requires_grad()) continue;
    auto& vals = inputs[i].values();
    for (size_t j = 0; j < vals.size(); ++j) {
      const double orig = vals[j];
      vals[j] = orig + h;
      const double fp = f(inputs).item();
      vals[j] = orig - h;
      const double fm = f(inputs).item();
      vals[j] = orig;
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[i][j];
      const double err = std::fabs(a - numeric);
      const double tol = std::max(rel * std::max(std::fabs(a), std::fabs(numeric)), abs);
      rep.checked += 1;
      rep.worst_abs = std::max(rep.worst_abs, err);
      if (err > tol && rep.ok) {
        rep.ok = false;
        std::ostringstream os;
        os << "input " << i << " elem " << j << ": analytic " << a << " vs numeric " << numeric;
        rep.first_failure = os.str();
      }
    }
  }
  return rep;
}

}  // namespace gradcheck
