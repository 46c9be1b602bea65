#pragma once

#include <cstdint>
#include <vector>

#include "drivesim/tensor.hpp"

namespace drivesim::ad {

class Tape;

// Handle to a node on a tape. Cheap to copy; not valid across tapes.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor& val() const;
  // Value of a one-element node; throws on larger shapes.
  double scalar() const;
};

enum class Op : std::uint8_t {
  kLeaf,
  kConst,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kNeg,
  kScale,     // x * c0
  kAddC,      // x + c0
  kMatmul,
  kConcat,
  kGatherRow,  // matrix row -> vector
  kPick,       // flat element -> scalar
  kSlice,      // vector [start, start+len)
  kSliceRows,
  kSliceCols,
  kTanh,
  kRelu,
  kSigmoid,
  kExp,
  kLog,
  kSqrt,
  kSin,
  kCos,
  kTan,
  kAtan,
  kAtan2,  // atan2(a, b)
  kSquare,
  kSoftmax,
  kLogSoftmax,
  kSum,
  kMean,
  kMin,
  kMax,
  kColMax,
  kNorm2,
  kClamp,  // [c0, c1]
  kCMin,   // min(x, c0)
  kCMax,   // max(x, c0)
  kHuber,  // transition at c0
  kStOneHot,
  kReshape,
  kTranspose,
};

const char* op_name(Op op);

// Reverse-mode tape over dense double tensors. Single-threaded by design: one
// tape per rollout, replayed deterministically. Backward visits nodes in
// reverse insertion order exactly once; a node consumed several times receives
// the sum of its consumers' contributions.
class Tape {
 public:
  struct Node {
    Op op;
    int a = -1;
    int b = -1;
    std::vector<int> rest;     // extra inputs (concat)
    Tensor val;
    std::vector<double> grad;  // lazily sized
    double c0 = 0.0;
    double c1 = 0.0;
    std::vector<int> iaux;  // saved indices (slices, arg rows, one-hot pick)
    std::vector<double> daux;  // saved values (straight-through probabilities)
    bool needs_grad = false;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void reserve(std::size_t n) { nodes_.reserve(n); }
  std::size_t size() const { return nodes_.size(); }

  Var leaf(Tensor value);
  Var constant(Tensor value);
  Var scalar_leaf(double value) { return leaf(Tensor::scalar(value)); }
  Var scalar_const(double value) { return constant(Tensor::scalar(value)); }

  const Tensor& value(Var v) const;
  // Gradient accumulated at a node by the latest backward call (zeros if the
  // node was never reached).
  Tensor grad(Var v) const;

  // Clears all gradient buffers, seeds `output` and propagates. The seed shape
  // must match the output shape; the scalar overload seeds 1.
  void backward(Var output);
  void backward(Var output, const Tensor& seed);

  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

 private:
  friend Var make_op(Tape& t, Tape::Node&& n);
  std::vector<Node> nodes_;

  void clear_grads();
  void ensure_grad(int id);
  void backprop_node(int id);
};

// Op builders. Binary elementwise ops broadcast a one-element operand over the
// other, and a length-n vector over the rows of an (m x n) matrix.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double c);
Var add_const(Var a, double c);
Var matmul(Var a, Var b);
Var concat(const std::vector<Var>& parts);
Var gather_row(Var m, int row);
Var pick(Var x, int flat_index);
Var slice(Var v, int start, int len);
Var slice_rows(Var m, int start, int len);
Var slice_cols(Var m, int start, int len);
Var tanh(Var a);
Var relu(Var a);
Var sigmoid(Var a);
Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var sin(Var a);
Var cos(Var a);
Var tan(Var a);
Var atan(Var a);
Var atan2(Var y, Var x);
Var square(Var a);
Var softmax(Var a);
Var log_softmax(Var a);
Var sum(Var a);
Var mean(Var a);
// Reductions break ties toward the lowest flat index (left subgradient).
Var min_all(Var a);
Var max_all(Var a);
Var col_max(Var m);
Var norm2(Var a);
Var clamp(Var a, double lo, double hi);
Var cmin(Var a, double c);
Var cmax(Var a, double c);
Var huber(Var a, double delta);
// Hard one-hot of the argmax in the forward pass; the backward pass applies
// the temperature-1 softmax Jacobian at the same input (straight-through).
Var st_onehot(Var logits);
Var reshape(Var a, std::vector<int> shape);
Var transpose(Var m);
// Rows (equal-length vectors) stacked into a matrix, and the column version.
Var stack_rows(const std::vector<Var>& rows);
Var stack_cols(const std::vector<Var>& cols);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return neg(a); }

}  // namespace drivesim::ad
