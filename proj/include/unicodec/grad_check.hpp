#pragma once

#include <cstddef>
#include <functional>
#include <vector>

#include "unicodec/tensor.hpp"

namespace unicodec {

struct CoordinateCheck {
  std::size_t index = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_error = 0;
};

struct GradCheckReport {
  std::vector<CoordinateCheck> coordinates;
  // Coordinates where x +/- h changed a discrete decision (top-k set, argmin,
  // sign of an abs argument); the function is not differentiable there.
  std::vector<std::size_t> nondifferentiable;
  double max_rel_error = 0;
  bool passed = true;
};

struct GradCheckOptions {
  double step = 1e-4;
  double tolerance = 1e-4;
  // Relative error is |a - n| / max(|a|, |n|, abs_floor).
  double abs_floor = 1e-7;
  // 0 checks every coordinate; otherwise an evenly strided subset.
  std::size_t max_coordinates = 0;
};

template <typename S>
using TapeFunction = std::function<Var<S>(Tape<S>&, Var<S>)>;

// Compares the tape gradient of scalar f at x to central differences.
template <typename S>
GradCheckReport grad_check(const TapeFunction<S>& f, const Matrix<S>& x, const GradCheckOptions& opt = {});

// Same check against a model parameter that f reads through tape.param(p).
template <typename S>
GradCheckReport grad_check_parameter(const std::function<Var<S>(Tape<S>&)>& f, Parameter<S>& p,
                                     const GradCheckOptions& opt = {});

}  // namespace unicodec
