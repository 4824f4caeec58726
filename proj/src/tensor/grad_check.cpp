#include "scenediff/tensor/grad_check.hpp"

#include <cmath>
#include <stdexcept>

namespace scenediff {

namespace {

double evaluate(const ScalarFn& f, const DenseArray& x) {
  Graph g(/*recording=*/false);
  Var xv = g.leaf(x);
  Var loss = f(g, xv);
  const DenseArray& v = g.value(loss);
  if (v.size() != 1) {
    throw std::invalid_argument("grad_check: f must return a scalar");
  }
  return v[0];
}

}  // namespace

double grad_check(const ScalarFn& f, const DenseArray& x, double eps) {
  Graph g;
  Var xv = g.leaf(x);
  Var loss = f(g, xv);
  g.backward(loss);
  DenseArray analytic = g.grad(xv);

  double max_rel = 0.0;
  DenseArray xp = x;
  for (std::int64_t i = 0; i < x.size(); ++i) {
    const double orig = xp[i];
    xp[i] = orig + eps;
    double fp = evaluate(f, xp);
    xp[i] = orig - eps;
    double fm = evaluate(f, xp);
    xp[i] = orig;
    double numeric = (fp - fm) / (2.0 * eps);
    double rel = std::abs(analytic[i] - numeric) /
                 std::max(1e-8, std::abs(numeric));
    max_rel = std::max(max_rel, rel);
  }
  return max_rel;
}

}  // namespace scenediff
