#pragma once

// Reverse-mode differentiation over dense row-major Eigen matrices.
//
// A Tape records every value produced during one forward pass in creation
// order, which is a topological order by construction. backward() walks the
// nodes in exact reverse order. Tapes are single-threaded; build one per
// forward pass and discard it afterwards.

#include <Eigen/Dense>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "unicodec/errors.hpp"

namespace unicodec {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

std::string shape_string(Eigen::Index rows, Eigen::Index cols);

template <typename Derived>
std::string shape_of(const Eigen::EigenBase<Derived>& m) {
  return shape_string(m.rows(), m.cols());
}

// A named trainable tensor owned by a model. `rank` is the logical rank used
// when serializing (biases and gains are rank 1 even though they are stored
// as 1 x n rows).
template <typename Scalar>
struct Parameter {
  std::string name;
  Matrix<Scalar> value;
  Matrix<Scalar> grad;
  bool trainable = true;
  int rank = 2;

  Parameter() = default;
  Parameter(std::string n, Matrix<Scalar> v, int r = 2, bool train = true)
      : name(std::move(n)), value(std::move(v)), trainable(train), rank(r) {
    grad = Matrix<Scalar>::Zero(value.rows(), value.cols());
  }

  void zero_grad() { grad = Matrix<Scalar>::Zero(value.rows(), value.cols()); }
};

template <typename Scalar>
class Tape;

// Handle to a node on a tape. Cheap to copy; only valid while its tape lives.
template <typename Scalar>
struct Var {
  Tape<Scalar>* tape = nullptr;
  std::size_t id = 0;

  const Matrix<Scalar>& value() const;
  Eigen::Index rows() const { return value().rows(); }
  Eigen::Index cols() const { return value().cols(); }
  Scalar item() const;
};

template <typename Scalar>
class Tape {
 public:
  using Mat = Matrix<Scalar>;
  using Backward = std::function<void(Tape&, const Mat&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> constant(Mat value);
  // Leaf whose gradient can be read back with grad().
  Var<Scalar> leaf(Mat value);
  // Leaf bound to a model parameter; backward() accumulates into p.grad.
  // Frozen parameters enter as constants.
  Var<Scalar> param(Parameter<Scalar>& p);

  // Appends an op result. `needs_grad` is normally the OR of the inputs'
  // needs_grad flags; when false the backward rule is dropped. Non-finite
  // values raise NonFiniteError naming `op`.
  Var<Scalar> record(const char* op, Mat value, bool needs_grad, Backward backward);

  void backward(Var<Scalar> loss);

  const Mat& value(std::size_t id) const { return nodes_[id].value; }
  const Mat& value(Var<Scalar> v) const { return nodes_[v.id].value; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }
  bool needs_grad(Var<Scalar> v) const { return nodes_[v.id].needs_grad; }

  // Gradient of the last backward() w.r.t. v (zeros if v never received one).
  Mat grad(Var<Scalar> v) const;

  template <typename Derived>
  void accumulate(std::size_t id, const Eigen::MatrixBase<Derived>& g) {
    Node& n = nodes_[id];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  // Discrete choices made during the forward pass (top-k sets, argmin ids,
  // sign patterns) fold into one signature. Two evaluations with equal
  // signatures took the same differentiable branch.
  void note_decision(std::uint64_t v);
  std::uint64_t decision_signature() const { return signature_; }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Mat value;
    Mat grad;
    bool needs_grad = false;
    Backward backward;
  };
  std::vector<Node> nodes_;
  std::uint64_t signature_ = 1469598103934665603ULL;
};

template <typename Scalar>
const Matrix<Scalar>& Var<Scalar>::value() const {
  return tape->value(id);
}

template <typename Scalar>
Scalar Var<Scalar>::item() const {
  const auto& v = value();
  if (v.size() != 1) throw DimensionError("item() on non-scalar of shape " + shape_of(v));
  return v(0, 0);
}

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace unicodec
