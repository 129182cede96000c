#include "tad/gradcheck.hpp"

#include <cmath>
#include <sstream>

#include "tad/tape.hpp"

namespace tad {

std::string CheckReport::describe() const {
  std::ostringstream os;
  os << (pass ? "pass" : "FAIL") << " max_rel=" << max_rel << " max_abs=" << max_abs;
  if (worst_input >= 0)
    os << " at input " << worst_input << " flat " << worst_flat;
  return os.str();
}

CheckReport grad_check(const ScalarFn& f, std::vector<Tensor> inputs, double eps,
                       double tol_rel) {
  // independent copies so callers' tensors are untouched
  for (Tensor& t : inputs) {
    t = t.clone();
    t.set_requires_grad(true);
  }

  std::vector<Tensor> analytic;
  {
    Tape tape;
    Tensor loss;
    {
      TapeScope scope(tape);
      loss = f(inputs);
    }
    if (!loss.defined() || loss.numel() != 1)
      throw ShapeError("grad_check: function must return a scalar");
    tape.backward(loss);
    for (Tensor& t : inputs) {
      Tensor g = t.grad_tensor();
      analytic.push_back(g.defined() ? g : Tensor::zeros(t.shape()));
      t.zero_grad();
    }
  }

  CheckReport rep;
  rep.pass = true;
  NoGradScope ng;
  for (size_t i = 0; i < inputs.size(); ++i) {
    double* p = inputs[i].mut_data();
    for (int64_t j = 0; j < inputs[i].numel(); ++j) {
      double saved = p[j];
      p[j] = saved + eps;
      double fp = f(inputs).item();
      p[j] = saved - eps;
      double fm = f(inputs).item();
      p[j] = saved;
      double num = (fp - fm) / (2.0 * eps);
      double ana = analytic[i].data()[j];
      double abs_err = std::fabs(num - ana);
      double denom = std::max({std::fabs(num), std::fabs(ana), 1e-6});
      double rel = abs_err / denom;
      if (rel > rep.max_rel) {
        rep.max_rel = rel;
        rep.max_abs = abs_err;
        rep.worst_input = int(i);
        rep.worst_flat = j;
      }
    }
  }
  rep.pass = rep.max_rel <= tol_rel;
  return rep;
}

}  // namespace tad
