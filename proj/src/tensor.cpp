#include "unicodec/tensor.hpp"

namespace unicodec {

std::string shape_string(Eigen::Index rows, Eigen::Index cols) {
  return "[" + std::to_string(rows) + ", " + std::to_string(cols) + "]";
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::constant(Mat value) {
  return record("constant", std::move(value), false, nullptr);
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::leaf(Mat value) {
  return record("leaf", std::move(value), true, nullptr);
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::param(Parameter<Scalar>& p) {
  if (!p.trainable) return record(p.name.c_str(), p.value, false, nullptr);
  Parameter<Scalar>* target = &p;
  return record(p.name.c_str(), p.value, true, [target](Tape&, const Mat& g) {
    if (target->grad.rows() != g.rows() || target->grad.cols() != g.cols()) {
      target->grad = Mat::Zero(g.rows(), g.cols());
    }
    target->grad += g;
  });
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::record(const char* op, Mat value, bool needs_grad, Backward backward) {
  if (!value.allFinite()) {
    throw NonFiniteError(std::string("non-finite value produced by ") + op + " " +
                         shape_of(value));
  }
  Node n;
  n.value = std::move(value);
  n.needs_grad = needs_grad;
  if (needs_grad) n.backward = std::move(backward);
  nodes_.push_back(std::move(n));
  return Var<Scalar>{this, nodes_.size() - 1};
}

template <typename Scalar>
void Tape<Scalar>::backward(Var<Scalar> loss) {
  if (loss.tape != this) throw InputError("backward() on a handle from another tape");
  const Mat& v = nodes_[loss.id].value;
  if (v.size() != 1) {
    throw DimensionError("backward() requires a scalar loss, got " + shape_of(v));
  }
  for (auto& n : nodes_) n.grad.resize(0, 0);
  if (!nodes_[loss.id].needs_grad) return;
  nodes_[loss.id].grad = Mat::Ones(1, 1);
  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.size() == 0 || !n.backward) continue;
    n.backward(*this, n.grad);
  }
}

template <typename Scalar>
typename Tape<Scalar>::Mat Tape<Scalar>::grad(Var<Scalar> v) const {
  const Node& n = nodes_[v.id];
  if (n.grad.size() == 0) return Mat::Zero(n.value.rows(), n.value.cols());
  return n.grad;
}

template <typename Scalar>
void Tape<Scalar>::note_decision(std::uint64_t v) {
  // FNV-1a over the 8 bytes of v
  for (int i = 0; i < 8; ++i) {
    signature_ ^= (v >> (8 * i)) & 0xffU;
    signature_ *= 1099511628211ULL;
  }
}

template class Tape<float>;
template class Tape<double>;

}  // namespace unicodec
