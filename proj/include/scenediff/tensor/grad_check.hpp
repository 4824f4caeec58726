#pragma once

#include <functional>

#include "scenediff/tensor/graph.hpp"

namespace scenediff {

// Builds a scalar loss from a leaf for `x`; called once per evaluation.
using ScalarFn = std::function<Var(Graph&, Var)>;

// Max over coordinates of |analytic - numeric| / max(1e-8, |numeric|), with
// numeric from central differences at +-eps. Independent of the autodiff
// path: the numeric side only uses forward evaluations.
double grad_check(const ScalarFn& f, const DenseArray& x, double eps);

}  // namespace scenediff
