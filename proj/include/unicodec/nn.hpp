#pragma once

// Small parameterized building blocks shared by encoder and decoder.

#include <cmath>
#include <random>
#include <string>

#include "unicodec/ops.hpp"

namespace unicodec {

using InitRng = std::mt19937_64;

template <typename S>
Matrix<S> gaussian(InitRng& rng, Eigen::Index rows, Eigen::Index cols, double stddev) {
  std::normal_distribution<double> dist(0.0, stddev);
  Matrix<S> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<S>(dist(rng));
  return m;
}

template <typename S>
struct Linear {
  Parameter<S> weight;  // out x in
  Parameter<S> bias;    // 1 x out

  Linear() = default;
  Linear(const std::string& name, int in, int out, InitRng& rng, double gain = 1.0)
      : weight(name + ".weight", gaussian<S>(rng, out, in, gain / std::sqrt(static_cast<double>(in)))),
        bias(name + ".bias", Matrix<S>::Zero(1, out), 1) {}

  Var<S> operator()(Tape<S>& t, Var<S> x) { return ad::linear(x, t.param(weight), t.param(bias)); }

  template <typename F>
  void for_each_parameter(F&& f) {
    f(weight);
    f(bias);
  }
};

template <typename S>
struct LayerNorm {
  Parameter<S> gain;
  Parameter<S> bias;

  LayerNorm() = default;
  LayerNorm(const std::string& name, int dim)
      : gain(name + ".gain", Matrix<S>::Ones(1, dim), 1), bias(name + ".bias", Matrix<S>::Zero(1, dim), 1) {}

  Var<S> operator()(Tape<S>& t, Var<S> x) { return ad::layer_norm(x, t.param(gain), t.param(bias)); }

  template <typename F>
  void for_each_parameter(F&& f) {
    f(gain);
    f(bias);
  }
};

// Two-layer GELU MLP: out(gelu(in(x))).
template <typename S>
struct FeedForward {
  Linear<S> in;
  Linear<S> out;

  FeedForward() = default;
  FeedForward(const std::string& name, int dim, int hidden, InitRng& rng)
      : in(name + ".in", dim, hidden, rng), out(name + ".out", hidden, dim, rng, 0.5) {}

  Var<S> operator()(Tape<S>& t, Var<S> x) { return out(t, ad::gelu(in(t, x))); }

  template <typename F>
  void for_each_parameter(F&& f) {
    in.for_each_parameter(f);
    out.for_each_parameter(f);
  }
};

}  // namespace unicodec
