#include "unicodec/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace unicodec {
namespace {

struct Evaluation {
  double value;
  std::uint64_t signature;
};

std::vector<std::size_t> pick_coordinates(std::size_t n, std::size_t max_coords) {
  std::vector<std::size_t> idx;
  if (max_coords == 0 || max_coords >= n) {
    idx.resize(n);
    for (std::size_t i = 0; i < n; ++i) idx[i] = i;
    return idx;
  }
  const double stride = static_cast<double>(n) / static_cast<double>(max_coords);
  for (std::size_t i = 0; i < max_coords; ++i) idx.push_back(static_cast<std::size_t>(i * stride));
  return idx;
}

template <typename S, typename Eval>
GradCheckReport compare(const Matrix<S>& analytic, Matrix<S> x, std::uint64_t base_signature,
                        const GradCheckOptions& opt, Eval eval) {
  GradCheckReport report;
  const auto coords = pick_coordinates(static_cast<std::size_t>(x.size()), opt.max_coordinates);
  for (std::size_t i : coords) {
    const S orig = x.data()[i];
    x.data()[i] = orig + static_cast<S>(opt.step);
    const Evaluation plus = eval(x);
    x.data()[i] = orig - static_cast<S>(opt.step);
    const Evaluation minus = eval(x);
    x.data()[i] = orig;
    if (plus.signature != base_signature || minus.signature != base_signature) {
      report.nondifferentiable.push_back(i);
      continue;
    }
    CoordinateCheck c;
    c.index = i;
    c.analytic = static_cast<double>(analytic.data()[i]);
    c.numeric = (plus.value - minus.value) / (2.0 * opt.step);
    const double denom = std::max({std::abs(c.analytic), std::abs(c.numeric), opt.abs_floor});
    c.rel_error = std::abs(c.analytic - c.numeric) / denom;
    report.max_rel_error = std::max(report.max_rel_error, c.rel_error);
    report.coordinates.push_back(c);
  }
  report.passed = report.max_rel_error < opt.tolerance;
  return report;
}

}  // namespace

template <typename S>
GradCheckReport grad_check(const TapeFunction<S>& f, const Matrix<S>& x, const GradCheckOptions& opt) {
  Matrix<S> analytic;
  std::uint64_t signature = 0;
  {
    Tape<S> tape;
    Var<S> xv = tape.leaf(x);
    Var<S> loss = f(tape, xv);
    tape.backward(loss);
    analytic = tape.grad(xv);
    signature = tape.decision_signature();
  }
  return compare<S>(analytic, x, signature, opt, [&](const Matrix<S>& xp) {
    Tape<S> tape;
    Var<S> loss = f(tape, tape.constant(xp));
    return Evaluation{static_cast<double>(loss.item()), tape.decision_signature()};
  });
}

template <typename S>
GradCheckReport grad_check_parameter(const std::function<Var<S>(Tape<S>&)>& f, Parameter<S>& p,
                                     const GradCheckOptions& opt) {
  const Matrix<S> original = p.value;
  std::uint64_t signature = 0;
  p.zero_grad();
  {
    Tape<S> tape;
    Var<S> loss = f(tape);
    tape.backward(loss);
    signature = tape.decision_signature();
  }
  const Matrix<S> analytic = p.grad;
  auto report = compare<S>(analytic, original, signature, opt, [&](const Matrix<S>& xp) {
    p.value = xp;
    Tape<S> tape;
    Var<S> loss = f(tape);
    return Evaluation{static_cast<double>(loss.item()), tape.decision_signature()};
  });
  p.value = original;
  p.zero_grad();
  return report;
}

template GradCheckReport grad_check<float>(const TapeFunction<float>&, const Matrix<float>&,
                                           const GradCheckOptions&);
template GradCheckReport grad_check<double>(const TapeFunction<double>&, const Matrix<double>&,
                                            const GradCheckOptions&);
template GradCheckReport grad_check_parameter<float>(const std::function<Var<float>(Tape<float>&)>&,
                                                     Parameter<float>&, const GradCheckOptions&);
template GradCheckReport grad_check_parameter<double>(const std::function<Var<double>(Tape<double>&)>&,
                                                      Parameter<double>&, const GradCheckOptions&);

}  // namespace unicodec
