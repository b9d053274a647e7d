#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

namespace vsteer::ad {

// Dense row-major array of 64-bit floats.
struct Array {
  std::vector<size_t> shape;
  std::vector<double> data;

  Array() = default;
  Array(std::vector<size_t> s, double fill = 0.0);
  static Array scalar(double v);
  static Array row(std::vector<double> v);

  size_t size() const { return data.size(); }
  size_t rows() const { return shape.empty() ? 1 : shape[0]; }
  size_t cols() const { return shape.size() < 2 ? size() : shape[1]; }
  double& at(size_t r, size_t c) { return data[r * cols() + c]; }
  double at(size_t r, size_t c) const { return data[r * cols() + c]; }
  std::string shape_str() const;
};

// Reverse-mode tape over primitive array operations. Single-writer; create
// one per forward/backward evaluation.
class Tape {
 public:
  using Node = int;

  Node input(Array value, bool requires_grad);
  Node constant(Array value) { return input(std::move(value), false); }

  Node add(Node a, Node b);
  Node mul(Node a, Node b);  // elementwise; either side may be a scalar
  Node matmul(Node a, Node b);
  Node transpose(Node a);
  Node embedding_lookup(Node table, std::vector<int> rows);
  Node layer_norm(Node x, Node gain, Node bias, double eps = 1e-5);
  Node tanh_act(Node x);
  Node log_softmax(Node x);  // normalizes along the last dimension
  // -(sum_t mask[t] * logp[t, target[t]]) / sum(mask)
  Node cross_entropy_from_logprobs(Node logp, std::vector<int> targets, std::vector<double> mask);
  // sum_t mask[t] * logp[t, target[t]]
  Node gather_sum(Node logp, std::vector<int> targets, std::vector<double> mask);
  Node concat_cols(Node a, Node b);
  Node slice_cols(Node x, size_t start, size_t len);
  Node slice_rows(Node x, size_t start, size_t len);
  Node reshape_rows(Node x, size_t rows, size_t cols);  // same data, new view
  Node flatten(Node x);
  Node stack_scalars(const std::vector<Node>& parts);
  Node sum(Node x);  // scalar sum of all entries
  Node pick(Node vec, size_t index);
  Node scale(Node x, double s);
  Node bias_add(Node x, Node bias);  // [T,F] + [F]
  Node exp_act(Node x);
  Node log_act(Node x);
  Node add_constant(Node x, Array offset);  // offset is not differentiated

  // Seeds d(loss)=1 and accumulates gradients for every node that needs
  // them; leaves not on a path to the loss keep zero gradients.
  void backward(Node loss);

  const Array& value(Node n) const { return recs_[n].value; }
  const Array& gradient(Node n) const { return recs_[n].grad; }
  size_t node_count() const { return recs_.size(); }

 private:
  struct Record {
    Array value;
    Array grad;
    bool needs_grad = false;
    std::function<void(Tape&)> back;  // empty for leaves
  };
  std::vector<Record> recs_;

  Node emit(Array value, bool needs, std::function<void(Tape&)> back);
  Array& grad_buf(Node n) { return recs_[n].grad; }
  bool needs(Node n) const { return recs_[n].needs_grad; }
};

// Raw matmul kernels shared by forward and adjoint passes.
void matmul_nn(const Array& a, const Array& b, Array& out);  // out += a * b
void matmul_nt(const Array& a, const Array& b, Array& out);  // out += a * b^T
void matmul_tn(const Array& a, const Array& b, Array& out);  // out += a^T * b

}  // namespace vsteer::ad
