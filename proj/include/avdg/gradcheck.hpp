#pragma once

#include <functional>
#include <span>
#include <vector>

#include "avdg/tensor.hpp"

namespace avdg {

// Builds a scalar expression on `tape` from leaf variables bound to the inputs.
using ScalarFn = std::function<Var(Tape& tape, std::span<const Var> inputs)>;

// Max over all elements of all inputs of
//   |analytic - central| / max(|analytic|, |central|, 1e-8)
// where `central` is the central finite difference with the given step.
// Throws DiagnosticError when two evaluations of f at the same point differ.
double grad_check(const ScalarFn& f, std::vector<Tensor> inputs, double step = 1e-5);

// Single-input convenience form.
double grad_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double step = 1e-5);

}  // namespace avdg
