#include "drivesim/tape.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace drivesim::ad {

const char* op_name(Op op) {
  switch (op) {
    case Op::kLeaf: return "leaf";
    case Op::kConst: return "const";
    case Op::kAdd: return "add";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kDiv: return "div";
    case Op::kNeg: return "neg";
    case Op::kScale: return "scale";
    case Op::kAddC: return "add_const";
    case Op::kMatmul: return "matmul";
    case Op::kConcat: return "concat";
    case Op::kGatherRow: return "gather_row";
    case Op::kPick: return "pick";
    case Op::kSlice: return "slice";
    case Op::kSliceRows: return "slice_rows";
    case Op::kSliceCols: return "slice_cols";
    case Op::kTanh: return "tanh";
    case Op::kRelu: return "relu";
    case Op::kSigmoid: return "sigmoid";
    case Op::kExp: return "exp";
    case Op::kLog: return "log";
    case Op::kSqrt: return "sqrt";
    case Op::kSin: return "sin";
    case Op::kCos: return "cos";
    case Op::kTan: return "tan";
    case Op::kAtan: return "atan";
    case Op::kAtan2: return "atan2";
    case Op::kSquare: return "square";
    case Op::kSoftmax: return "softmax";
    case Op::kLogSoftmax: return "log_softmax";
    case Op::kSum: return "sum";
    case Op::kMean: return "mean";
    case Op::kMin: return "min";
    case Op::kMax: return "max";
    case Op::kColMax: return "col_max";
    case Op::kNorm2: return "norm2";
    case Op::kClamp: return "clamp";
    case Op::kCMin: return "cmin";
    case Op::kCMax: return "cmax";
    case Op::kHuber: return "huber";
    case Op::kStOneHot: return "st_onehot";
    case Op::kReshape: return "reshape";
    case Op::kTranspose: return "transpose";
  }
  return "?";
}

namespace {

[[noreturn]] void op_error(Op op, const std::string& detail) {
  throw std::invalid_argument(std::string(op_name(op)) + ": " + detail);
}

void check_same_tape(Op op, Var a, Var b) {
  if (a.tape == nullptr || b.tape == nullptr || a.tape != b.tape)
    op_error(op, "operands live on different tapes");
}

// How a binary elementwise op pairs its operands.
enum class BKind { kEqual, kAScalar, kBScalar, kARow, kBRow };

BKind broadcast_kind(Op op, const Tensor& a, const Tensor& b) {
  if (a.same_shape(b)) return BKind::kEqual;
  if (b.size() == 1) return BKind::kBScalar;
  if (a.size() == 1) return BKind::kAScalar;
  if (a.rank() == 2 && b.rank() == 1 && b.dim(0) == a.dim(1)) return BKind::kBRow;
  if (b.rank() == 2 && a.rank() == 1 && a.dim(0) == b.dim(1)) return BKind::kARow;
  op_error(op, "shape mismatch " + a.shape_str() + " vs " + b.shape_str());
}

}  // namespace

Var make_op(Tape& t, Tape::Node&& n) {
  bool needs = false;
  if (n.op == Op::kLeaf) needs = true;
  auto check_input = [&](int id) {
    if (id < 0) return;
    if (static_cast<std::size_t>(id) >= t.nodes_.size())
      op_error(n.op, "input id out of range");
    needs = needs || t.nodes_[static_cast<std::size_t>(id)].needs_grad;
  };
  check_input(n.a);
  check_input(n.b);
  for (int id : n.rest) check_input(id);
  n.needs_grad = needs;
  t.nodes_.push_back(std::move(n));
  return Var{&t, static_cast<int>(t.nodes_.size()) - 1};
}

const Tensor& Var::val() const {
  if (!valid()) throw std::invalid_argument("var: invalid handle");
  return tape->value(*this);
}

double Var::scalar() const {
  const Tensor& t = val();
  if (t.size() != 1) throw std::invalid_argument("var: scalar() on shape " + t.shape_str());
  return t[0];
}

Var Tape::leaf(Tensor value) {
  Node n;
  n.op = Op::kLeaf;
  n.val = std::move(value);
  return make_op(*this, std::move(n));
}

Var Tape::constant(Tensor value) {
  Node n;
  n.op = Op::kConst;
  n.val = std::move(value);
  return make_op(*this, std::move(n));
}

const Tensor& Tape::value(Var v) const {
  if (v.tape != this || v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
    throw std::invalid_argument("tape: value() on foreign or invalid var");
  return nodes_[static_cast<std::size_t>(v.id)].val;
}

Tensor Tape::grad(Var v) const {
  const Tensor& val = value(v);
  const Node& n = nodes_[static_cast<std::size_t>(v.id)];
  if (n.grad.empty()) return Tensor::zeros(val.shape());
  return Tensor(val.shape(), n.grad);
}

void Tape::clear_grads() {
  for (auto& n : nodes_) n.grad.clear();
}

void Tape::ensure_grad(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.empty()) n.grad.assign(n.val.size(), 0.0);
}

void Tape::backward(Var output) { backward(output, Tensor::scalar(1.0)); }

void Tape::backward(Var output, const Tensor& seed) {
  if (output.tape != this) throw std::invalid_argument("backward: var from another tape");
  const Tensor& out_val = value(output);
  if (!seed.same_shape(out_val))
    throw std::invalid_argument("backward: seed shape " + seed.shape_str() + " does not match output " +
                                out_val.shape_str());
  clear_grads();
  ensure_grad(output.id);
  nodes_[static_cast<std::size_t>(output.id)].grad = seed.vec();
  for (int i = output.id; i >= 0; --i) {
    const Node& n = nodes_[static_cast<std::size_t>(i)];
    if (n.grad.empty() || !n.needs_grad) continue;
    backprop_node(i);
  }
}

namespace {

Tensor forward_broadcast(Op op, const Tensor& a, const Tensor& b, BKind kind) {
  auto apply = [op](double x, double y) {
    switch (op) {
      case Op::kAdd: return x + y;
      case Op::kSub: return x - y;
      case Op::kMul: return x * y;
      case Op::kDiv: return x / y;
      default: op_error(op, "not a broadcast op");
    }
  };
  switch (kind) {
    case BKind::kEqual: {
      Tensor out = Tensor::zeros(a.shape());
      for (std::size_t i = 0; i < a.size(); ++i) out[i] = apply(a[i], b[i]);
      return out;
    }
    case BKind::kBScalar: {
      Tensor out = Tensor::zeros(a.shape());
      for (std::size_t i = 0; i < a.size(); ++i) out[i] = apply(a[i], b[0]);
      return out;
    }
    case BKind::kAScalar: {
      Tensor out = Tensor::zeros(b.shape());
      for (std::size_t i = 0; i < b.size(); ++i) out[i] = apply(a[0], b[i]);
      return out;
    }
    case BKind::kBRow: {
      Tensor out = Tensor::zeros(a.shape());
      std::size_t cols = static_cast<std::size_t>(a.dim(1));
      for (std::size_t i = 0; i < a.size(); ++i) out[i] = apply(a[i], b[i % cols]);
      return out;
    }
    case BKind::kARow: {
      Tensor out = Tensor::zeros(b.shape());
      std::size_t cols = static_cast<std::size_t>(b.dim(1));
      for (std::size_t i = 0; i < b.size(); ++i) out[i] = apply(a[i % cols], b[i]);
      return out;
    }
  }
  op_error(op, "unreachable broadcast kind");
}

Var binary_op(Op op, Var a, Var b) {
  check_same_tape(op, a, b);
  const Tensor& av = a.val();
  const Tensor& bv = b.val();
  BKind kind = broadcast_kind(op, av, bv);
  Tape::Node n;
  n.op = op;
  n.a = a.id;
  n.b = b.id;
  n.val = forward_broadcast(op, av, bv, kind);
  return make_op(*a.tape, std::move(n));
}

Var unary_op(Op op, Var a, double c0 = 0.0, double c1 = 0.0) {
  if (a.tape == nullptr) op_error(op, "invalid operand");
  const Tensor& av = a.val();
  Tensor out = Tensor::zeros(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) {
    double x = av[i];
    double y = 0.0;
    switch (op) {
      case Op::kNeg: y = -x; break;
      case Op::kScale: y = x * c0; break;
      case Op::kAddC: y = x + c0; break;
      case Op::kTanh: y = std::tanh(x); break;
      case Op::kRelu: y = x > 0.0 ? x : 0.0; break;
      case Op::kSigmoid: y = 1.0 / (1.0 + std::exp(-x)); break;
      case Op::kExp: y = std::exp(x); break;
      case Op::kLog: y = std::log(x); break;
      case Op::kSqrt: y = std::sqrt(x); break;
      case Op::kSin: y = std::sin(x); break;
      case Op::kCos: y = std::cos(x); break;
      case Op::kTan: y = std::tan(x); break;
      case Op::kAtan: y = std::atan(x); break;
      case Op::kSquare: y = x * x; break;
      case Op::kClamp: y = std::min(std::max(x, c0), c1); break;
      case Op::kCMin: y = std::min(x, c0); break;
      case Op::kCMax: y = std::max(x, c0); break;
      case Op::kHuber: {
        double ax = std::fabs(x);
        y = ax <= c0 ? 0.5 * x * x : c0 * (ax - 0.5 * c0);
        break;
      }
      default: op_error(op, "not a unary op");
    }
    out[i] = y;
  }
  Tape::Node n;
  n.op = op;
  n.a = a.id;
  n.c0 = c0;
  n.c1 = c1;
  n.val = std::move(out);
  return make_op(*a.tape, std::move(n));
}

struct MatmulDims {
  int m, k, n;
  bool a_vec, b_vec;
};

MatmulDims matmul_dims(const Tensor& a, const Tensor& b) {
  MatmulDims d{};
  d.a_vec = a.rank() == 1;
  d.b_vec = b.rank() == 1;
  d.m = d.a_vec ? 1 : a.dim(0);
  d.k = d.a_vec ? a.dim(0) : a.dim(1);
  int bk = d.b_vec ? b.dim(0) : b.dim(0);
  d.n = d.b_vec ? 1 : b.dim(1);
  if (d.k != bk) op_error(Op::kMatmul, "inner dims disagree " + a.shape_str() + " x " + b.shape_str());
  return d;
}

}  // namespace

Var add(Var a, Var b) { return binary_op(Op::kAdd, a, b); }
Var sub(Var a, Var b) { return binary_op(Op::kSub, a, b); }
Var mul(Var a, Var b) { return binary_op(Op::kMul, a, b); }
Var div(Var a, Var b) { return binary_op(Op::kDiv, a, b); }
Var neg(Var a) { return unary_op(Op::kNeg, a); }
Var scale(Var a, double c) { return unary_op(Op::kScale, a, c); }
Var add_const(Var a, double c) { return unary_op(Op::kAddC, a, c); }
Var tanh(Var a) { return unary_op(Op::kTanh, a); }
Var relu(Var a) { return unary_op(Op::kRelu, a); }
Var sigmoid(Var a) { return unary_op(Op::kSigmoid, a); }
Var exp(Var a) { return unary_op(Op::kExp, a); }
Var log(Var a) { return unary_op(Op::kLog, a); }
Var sqrt(Var a) { return unary_op(Op::kSqrt, a); }
Var sin(Var a) { return unary_op(Op::kSin, a); }
Var cos(Var a) { return unary_op(Op::kCos, a); }
Var tan(Var a) { return unary_op(Op::kTan, a); }
Var atan(Var a) { return unary_op(Op::kAtan, a); }
Var square(Var a) { return unary_op(Op::kSquare, a); }
Var clamp(Var a, double lo, double hi) { return unary_op(Op::kClamp, a, lo, hi); }
Var cmin(Var a, double c) { return unary_op(Op::kCMin, a, c); }
Var cmax(Var a, double c) { return unary_op(Op::kCMax, a, c); }
Var huber(Var a, double delta) { return unary_op(Op::kHuber, a, delta); }

Var atan2(Var y, Var x) {
  check_same_tape(Op::kAtan2, y, x);
  const Tensor& yv = y.val();
  const Tensor& xv = x.val();
  if (!yv.same_shape(xv))
    op_error(Op::kAtan2, "shape mismatch " + yv.shape_str() + " vs " + xv.shape_str());
  Tensor out = Tensor::zeros(yv.shape());
  for (std::size_t i = 0; i < yv.size(); ++i) out[i] = std::atan2(yv[i], xv[i]);
  Tape::Node n;
  n.op = Op::kAtan2;
  n.a = y.id;
  n.b = x.id;
  n.val = std::move(out);
  return make_op(*y.tape, std::move(n));
}

Var matmul(Var a, Var b) {
  check_same_tape(Op::kMatmul, a, b);
  const Tensor& av = a.val();
  const Tensor& bv = b.val();
  if (av.rank() > 2 || bv.rank() > 2) op_error(Op::kMatmul, "rank > 2 unsupported");
  MatmulDims d = matmul_dims(av, bv);
  std::vector<double> out(static_cast<std::size_t>(d.m) * static_cast<std::size_t>(d.n), 0.0);
  for (int i = 0; i < d.m; ++i)
    for (int kk = 0; kk < d.k; ++kk) {
      double aik = av[static_cast<std::size_t>(i) * d.k + kk];
      if (aik == 0.0) continue;
      const double* brow = bv.data() + static_cast<std::size_t>(kk) * d.n;
      double* orow = out.data() + static_cast<std::size_t>(i) * d.n;
      for (int j = 0; j < d.n; ++j) orow[j] += aik * brow[j];
    }
  std::vector<int> shape;
  if (d.a_vec && d.b_vec) shape = {1};
  else if (d.a_vec) shape = {d.n};
  else if (d.b_vec) shape = {d.m};
  else shape = {d.m, d.n};
  Tape::Node n;
  n.op = Op::kMatmul;
  n.a = a.id;
  n.b = b.id;
  n.val = Tensor(std::move(shape), std::move(out));
  return make_op(*a.tape, std::move(n));
}

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) op_error(Op::kConcat, "no inputs");
  Tape* tape = parts[0].tape;
  std::size_t total = 0;
  for (const Var& p : parts) {
    if (p.tape != tape) op_error(Op::kConcat, "operands live on different tapes");
    if (p.val().rank() != 1) op_error(Op::kConcat, "inputs must be vectors, got " + p.val().shape_str());
    total += p.val().size();
  }
  std::vector<double> out;
  out.reserve(total);
  for (const Var& p : parts) {
    const auto& v = p.val().vec();
    out.insert(out.end(), v.begin(), v.end());
  }
  Tape::Node n;
  n.op = Op::kConcat;
  for (const Var& p : parts) n.rest.push_back(p.id);
  n.val = Tensor::vector(std::move(out));
  return make_op(*tape, std::move(n));
}

Var gather_row(Var m, int row) {
  const Tensor& mv = m.val();
  if (mv.rank() != 2) op_error(Op::kGatherRow, "needs a matrix, got " + mv.shape_str());
  if (row < 0 || row >= mv.dim(0)) op_error(Op::kGatherRow, "row " + std::to_string(row) + " out of range");
  int cols = mv.dim(1);
  std::vector<double> out(mv.data() + static_cast<std::size_t>(row) * cols,
                          mv.data() + static_cast<std::size_t>(row + 1) * cols);
  Tape::Node n;
  n.op = Op::kGatherRow;
  n.a = m.id;
  n.iaux = {row};
  n.val = Tensor::vector(std::move(out));
  return make_op(*m.tape, std::move(n));
}

Var pick(Var x, int flat_index) {
  const Tensor& xv = x.val();
  if (flat_index < 0 || static_cast<std::size_t>(flat_index) >= xv.size())
    op_error(Op::kPick, "index " + std::to_string(flat_index) + " out of range for " + xv.shape_str());
  Tape::Node n;
  n.op = Op::kPick;
  n.a = x.id;
  n.iaux = {flat_index};
  n.val = Tensor::scalar(xv[static_cast<std::size_t>(flat_index)]);
  return make_op(*x.tape, std::move(n));
}

Var slice(Var v, int start, int len) {
  const Tensor& xv = v.val();
  if (xv.rank() != 1) op_error(Op::kSlice, "needs a vector, got " + xv.shape_str());
  if (start < 0 || len < 1 || start + len > xv.dim(0)) op_error(Op::kSlice, "range out of bounds");
  std::vector<double> out(xv.data() + start, xv.data() + start + len);
  Tape::Node n;
  n.op = Op::kSlice;
  n.a = v.id;
  n.iaux = {start};
  n.val = Tensor::vector(std::move(out));
  return make_op(*v.tape, std::move(n));
}

Var slice_rows(Var m, int start, int len) {
  const Tensor& mv = m.val();
  if (mv.rank() != 2) op_error(Op::kSliceRows, "needs a matrix, got " + mv.shape_str());
  if (start < 0 || len < 1 || start + len > mv.dim(0)) op_error(Op::kSliceRows, "range out of bounds");
  int cols = mv.dim(1);
  std::vector<double> out(mv.data() + static_cast<std::size_t>(start) * cols,
                          mv.data() + static_cast<std::size_t>(start + len) * cols);
  Tape::Node n;
  n.op = Op::kSliceRows;
  n.a = m.id;
  n.iaux = {start};
  n.val = Tensor::matrix(len, cols, std::move(out));
  return make_op(*m.tape, std::move(n));
}

Var slice_cols(Var m, int start, int len) {
  const Tensor& mv = m.val();
  if (mv.rank() != 2) op_error(Op::kSliceCols, "needs a matrix, got " + mv.shape_str());
  if (start < 0 || len < 1 || start + len > mv.dim(1)) op_error(Op::kSliceCols, "range out of bounds");
  int rows = mv.dim(0), cols = mv.dim(1);
  std::vector<double> out(static_cast<std::size_t>(rows) * len);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < len; ++c)
      out[static_cast<std::size_t>(r) * len + c] = mv[static_cast<std::size_t>(r) * cols + start + c];
  Tape::Node n;
  n.op = Op::kSliceCols;
  n.a = m.id;
  n.iaux = {start};
  n.val = Tensor::matrix(rows, len, std::move(out));
  return make_op(*m.tape, std::move(n));
}

namespace {

std::vector<double> stable_softmax(const Tensor& x) {
  double mx = x[0];
  for (std::size_t i = 1; i < x.size(); ++i) mx = std::max(mx, x[i]);
  std::vector<double> p(x.size());
  double z = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    p[i] = std::exp(x[i] - mx);
    z += p[i];
  }
  for (auto& v : p) v /= z;
  return p;
}

}  // namespace

Var softmax(Var a) {
  const Tensor& av = a.val();
  if (av.rank() != 1) op_error(Op::kSoftmax, "needs a vector, got " + av.shape_str());
  Tape::Node n;
  n.op = Op::kSoftmax;
  n.a = a.id;
  n.val = Tensor::vector(stable_softmax(av));
  return make_op(*a.tape, std::move(n));
}

Var log_softmax(Var a) {
  const Tensor& av = a.val();
  if (av.rank() != 1) op_error(Op::kLogSoftmax, "needs a vector, got " + av.shape_str());
  double mx = av[0];
  for (std::size_t i = 1; i < av.size(); ++i) mx = std::max(mx, av[i]);
  double z = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) z += std::exp(av[i] - mx);
  double lz = std::log(z) + mx;
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] - lz;
  Tape::Node n;
  n.op = Op::kLogSoftmax;
  n.a = a.id;
  n.val = Tensor::vector(std::move(out));
  return make_op(*a.tape, std::move(n));
}

Var sum(Var a) {
  const Tensor& av = a.val();
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i];
  Tape::Node n;
  n.op = Op::kSum;
  n.a = a.id;
  n.val = Tensor::scalar(s);
  return make_op(*a.tape, std::move(n));
}

Var mean(Var a) {
  const Tensor& av = a.val();
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i];
  Tape::Node n;
  n.op = Op::kMean;
  n.a = a.id;
  n.val = Tensor::scalar(s / static_cast<double>(av.size()));
  return make_op(*a.tape, std::move(n));
}

namespace {

Var reduce_arg(Op op, Var a) {
  const Tensor& av = a.val();
  std::size_t arg = 0;
  double best = av[0];
  for (std::size_t i = 1; i < av.size(); ++i) {
    if (op == Op::kMin ? av[i] < best : av[i] > best) {
      best = av[i];
      arg = i;
    }
  }
  Tape::Node n;
  n.op = op;
  n.a = a.id;
  n.iaux = {static_cast<int>(arg)};
  n.val = Tensor::scalar(best);
  return make_op(*a.tape, std::move(n));
}

}  // namespace

Var min_all(Var a) { return reduce_arg(Op::kMin, a); }
Var max_all(Var a) { return reduce_arg(Op::kMax, a); }

Var col_max(Var m) {
  const Tensor& mv = m.val();
  if (mv.rank() != 2) op_error(Op::kColMax, "needs a matrix, got " + mv.shape_str());
  int rows = mv.dim(0), cols = mv.dim(1);
  std::vector<double> out(static_cast<std::size_t>(cols));
  std::vector<int> args(static_cast<std::size_t>(cols), 0);
  for (int c = 0; c < cols; ++c) {
    double best = mv[static_cast<std::size_t>(c)];
    int arg = 0;
    for (int r = 1; r < rows; ++r) {
      double v = mv[static_cast<std::size_t>(r) * cols + c];
      if (v > best) {
        best = v;
        arg = r;
      }
    }
    out[static_cast<std::size_t>(c)] = best;
    args[static_cast<std::size_t>(c)] = arg;
  }
  Tape::Node n;
  n.op = Op::kColMax;
  n.a = m.id;
  n.iaux = std::move(args);
  n.val = Tensor::vector(std::move(out));
  return make_op(*m.tape, std::move(n));
}

Var norm2(Var a) {
  const Tensor& av = a.val();
  double s = 0.0;
  for (std::size_t i = 0; i < av.size(); ++i) s += av[i] * av[i];
  Tape::Node n;
  n.op = Op::kNorm2;
  n.a = a.id;
  n.val = Tensor::scalar(std::sqrt(s));
  return make_op(*a.tape, std::move(n));
}

Var st_onehot(Var logits) {
  const Tensor& lv = logits.val();
  if (lv.rank() != 1) op_error(Op::kStOneHot, "needs a vector, got " + lv.shape_str());
  std::size_t arg = 0;
  for (std::size_t i = 1; i < lv.size(); ++i)
    if (lv[i] > lv[arg]) arg = i;
  Tensor out = Tensor::zeros(lv.shape());
  out[arg] = 1.0;
  Tape::Node n;
  n.op = Op::kStOneHot;
  n.a = logits.id;
  n.iaux = {static_cast<int>(arg)};
  n.daux = stable_softmax(lv);
  n.val = std::move(out);
  return make_op(*logits.tape, std::move(n));
}

Var reshape(Var a, std::vector<int> shape) {
  const Tensor& av = a.val();
  Tensor out(std::move(shape), av.vec());
  if (out.size() != av.size()) op_error(Op::kReshape, "element count mismatch for " + av.shape_str());
  Tape::Node n;
  n.op = Op::kReshape;
  n.a = a.id;
  n.val = std::move(out);
  return make_op(*a.tape, std::move(n));
}

Var transpose(Var m) {
  const Tensor& mv = m.val();
  if (mv.rank() != 2) op_error(Op::kTranspose, "needs a matrix, got " + mv.shape_str());
  int rows = mv.dim(0), cols = mv.dim(1);
  std::vector<double> out(mv.size());
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c)
      out[static_cast<std::size_t>(c) * rows + r] = mv[static_cast<std::size_t>(r) * cols + c];
  Tape::Node n;
  n.op = Op::kTranspose;
  n.a = m.id;
  n.val = Tensor::matrix(cols, rows, std::move(out));
  return make_op(*m.tape, std::move(n));
}

Var stack_rows(const std::vector<Var>& rows) {
  if (rows.empty()) op_error(Op::kConcat, "stack_rows: no inputs");
  int cols = rows[0].val().dim(0);
  for (const Var& r : rows)
    if (r.val().rank() != 1 || r.val().dim(0) != cols)
      op_error(Op::kConcat, "stack_rows: row shape mismatch " + r.val().shape_str());
  return reshape(concat(rows), {static_cast<int>(rows.size()), cols});
}

Var stack_cols(const std::vector<Var>& cols) {
  return transpose(stack_rows(cols));
}

void Tape::backprop_node(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  const std::vector<double>& g = n.grad;
  auto in_val = [&](int vid) -> const Tensor& { return nodes_[static_cast<std::size_t>(vid)].val; };
  auto in_grad = [&](int vid) -> std::vector<double>* {
    Node& m = nodes_[static_cast<std::size_t>(vid)];
    if (!m.needs_grad) return nullptr;
    if (m.grad.empty()) m.grad.assign(m.val.size(), 0.0);
    return &m.grad;
  };

  switch (n.op) {
    case Op::kLeaf:
    case Op::kConst:
      return;

    case Op::kAdd:
    case Op::kSub:
    case Op::kMul:
    case Op::kDiv: {
      const Tensor& av = in_val(n.a);
      const Tensor& bv = in_val(n.b);
      BKind kind = broadcast_kind(n.op, av, bv);
      std::vector<double>* ga = in_grad(n.a);
      std::vector<double>* gb = in_grad(n.b);
      std::size_t cols = 0;
      if (kind == BKind::kBRow) cols = static_cast<std::size_t>(av.dim(1));
      if (kind == BKind::kARow) cols = static_cast<std::size_t>(bv.dim(1));
      for (std::size_t i = 0; i < g.size(); ++i) {
        std::size_t ia = i, ib = i;
        switch (kind) {
          case BKind::kEqual: break;
          case BKind::kBScalar: ib = 0; break;
          case BKind::kAScalar: ia = 0; break;
          case BKind::kBRow: ib = i % cols; break;
          case BKind::kARow: ia = i % cols; break;
        }
        double x = av[ia], y = bv[ib], gi = g[i];
        switch (n.op) {
          case Op::kAdd:
            if (ga) (*ga)[ia] += gi;
            if (gb) (*gb)[ib] += gi;
            break;
          case Op::kSub:
            if (ga) (*ga)[ia] += gi;
            if (gb) (*gb)[ib] -= gi;
            break;
          case Op::kMul:
            if (ga) (*ga)[ia] += gi * y;
            if (gb) (*gb)[ib] += gi * x;
            break;
          case Op::kDiv:
            if (ga) (*ga)[ia] += gi / y;
            if (gb) (*gb)[ib] -= gi * x / (y * y);
            break;
          default: break;
        }
      }
      return;
    }

    case Op::kNeg:
    case Op::kScale:
    case Op::kAddC:
    case Op::kTanh:
    case Op::kRelu:
    case Op::kSigmoid:
    case Op::kExp:
    case Op::kLog:
    case Op::kSqrt:
    case Op::kSin:
    case Op::kCos:
    case Op::kTan:
    case Op::kAtan:
    case Op::kSquare:
    case Op::kClamp:
    case Op::kCMin:
    case Op::kCMax:
    case Op::kHuber: {
      std::vector<double>* ga = in_grad(n.a);
      if (!ga) return;
      const Tensor& av = in_val(n.a);
      for (std::size_t i = 0; i < g.size(); ++i) {
        double x = av[i], y = n.val[i], d = 0.0;
        switch (n.op) {
          case Op::kNeg: d = -1.0; break;
          case Op::kScale: d = n.c0; break;
          case Op::kAddC: d = 1.0; break;
          case Op::kTanh: d = 1.0 - y * y; break;
          // Kinked ops use the left subgradient at the kink.
          case Op::kRelu: d = x > 0.0 ? 1.0 : 0.0; break;
          case Op::kSigmoid: d = y * (1.0 - y); break;
          case Op::kExp: d = y; break;
          case Op::kLog: d = 1.0 / x; break;
          case Op::kSqrt: d = 0.5 / y; break;
          case Op::kSin: d = std::cos(x); break;
          case Op::kCos: d = -std::sin(x); break;
          case Op::kTan: d = 1.0 + y * y; break;
          case Op::kAtan: d = 1.0 / (1.0 + x * x); break;
          case Op::kSquare: d = 2.0 * x; break;
          case Op::kClamp: d = (x > n.c0 && x <= n.c1) ? 1.0 : 0.0; break;
          case Op::kCMin: d = x <= n.c0 ? 1.0 : 0.0; break;
          case Op::kCMax: d = x > n.c0 ? 1.0 : 0.0; break;
          case Op::kHuber: d = std::fabs(x) <= n.c0 ? x : (x > 0.0 ? n.c0 : -n.c0); break;
          default: break;
        }
        (*ga)[i] += g[i] * d;
      }
      return;
    }

    case Op::kAtan2: {
      const Tensor& yv = in_val(n.a);
      const Tensor& xv = in_val(n.b);
      std::vector<double>* gy = in_grad(n.a);
      std::vector<double>* gx = in_grad(n.b);
      for (std::size_t i = 0; i < g.size(); ++i) {
        double r2 = xv[i] * xv[i] + yv[i] * yv[i];
        if (gy) (*gy)[i] += g[i] * xv[i] / r2;
        if (gx) (*gx)[i] -= g[i] * yv[i] / r2;
      }
      return;
    }

    case Op::kMatmul: {
      const Tensor& av = in_val(n.a);
      const Tensor& bv = in_val(n.b);
      MatmulDims d = matmul_dims(av, bv);
      std::vector<double>* ga = in_grad(n.a);
      std::vector<double>* gb = in_grad(n.b);
      // dA = G B^T, dB = A^T G with G lifted to (m x n).
      if (ga) {
        for (int i = 0; i < d.m; ++i)
          for (int kk = 0; kk < d.k; ++kk) {
            double acc = 0.0;
            const double* grow = g.data() + static_cast<std::size_t>(i) * d.n;
            const double* brow = bv.data() + static_cast<std::size_t>(kk) * d.n;
            for (int j = 0; j < d.n; ++j) acc += grow[j] * brow[j];
            (*ga)[static_cast<std::size_t>(i) * d.k + kk] += acc;
          }
      }
      if (gb) {
        for (int kk = 0; kk < d.k; ++kk)
          for (int i = 0; i < d.m; ++i) {
            double aik = av[static_cast<std::size_t>(i) * d.k + kk];
            if (aik == 0.0) continue;
            const double* grow = g.data() + static_cast<std::size_t>(i) * d.n;
            double* brow = gb->data() + static_cast<std::size_t>(kk) * d.n;
            for (int j = 0; j < d.n; ++j) brow[j] += aik * grow[j];
          }
      }
      return;
    }

    case Op::kConcat: {
      std::size_t off = 0;
      for (int vid : n.rest) {
        std::size_t len = in_val(vid).size();
        if (std::vector<double>* gi = in_grad(vid)) {
          for (std::size_t i = 0; i < len; ++i) (*gi)[i] += g[off + i];
        }
        off += len;
      }
      return;
    }

    case Op::kGatherRow: {
      if (std::vector<double>* ga = in_grad(n.a)) {
        std::size_t cols = g.size();
        std::size_t off = static_cast<std::size_t>(n.iaux[0]) * cols;
        for (std::size_t i = 0; i < cols; ++i) (*ga)[off + i] += g[i];
      }
      return;
    }

    case Op::kPick: {
      if (std::vector<double>* ga = in_grad(n.a)) (*ga)[static_cast<std::size_t>(n.iaux[0])] += g[0];
      return;
    }

    case Op::kSlice: {
      if (std::vector<double>* ga = in_grad(n.a)) {
        std::size_t start = static_cast<std::size_t>(n.iaux[0]);
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[start + i] += g[i];
      }
      return;
    }

    case Op::kSliceRows: {
      if (std::vector<double>* ga = in_grad(n.a)) {
        std::size_t cols = static_cast<std::size_t>(n.val.dim(1));
        std::size_t off = static_cast<std::size_t>(n.iaux[0]) * cols;
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[off + i] += g[i];
      }
      return;
    }

    case Op::kSliceCols: {
      if (std::vector<double>* ga = in_grad(n.a)) {
        const Tensor& av = in_val(n.a);
        int rows = av.dim(0), acols = av.dim(1), len = n.val.dim(1), start = n.iaux[0];
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < len; ++c)
            (*ga)[static_cast<std::size_t>(r) * acols + start + c] += g[static_cast<std::size_t>(r) * len + c];
      }
      return;
    }

    case Op::kSoftmax: {
      if (std::vector<double>* ga = in_grad(n.a)) {
        double dot = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * n.val[i];
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += n.val[i] * (g[i] - dot);
      }
      return;
    }

    case Op::kLogSoftmax: {
      if (std::vector<double>* ga = in_grad(n.a)) {
        double gsum = 0.0;
        for (double gi : g) gsum += gi;
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i] - std::exp(n.val[i]) * gsum;
      }
      return;
    }

    case Op::kSum: {
      if (std::vector<double>* ga = in_grad(n.a))
        for (auto& v : *ga) v += g[0];
      return;
    }

    case Op::kMean: {
      if (std::vector<double>* ga = in_grad(n.a)) {
        double w = g[0] / static_cast<double>(ga->size());
        for (auto& v : *ga) v += w;
      }
      return;
    }

    case Op::kMin:
    case Op::kMax: {
      if (std::vector<double>* ga = in_grad(n.a)) (*ga)[static_cast<std::size_t>(n.iaux[0])] += g[0];
      return;
    }

    case Op::kColMax: {
      if (std::vector<double>* ga = in_grad(n.a)) {
        std::size_t cols = g.size();
        for (std::size_t c = 0; c < cols; ++c)
          (*ga)[static_cast<std::size_t>(n.iaux[c]) * cols + c] += g[c];
      }
      return;
    }

    case Op::kNorm2: {
      if (std::vector<double>* ga = in_grad(n.a)) {
        double y = n.val[0];
        if (y == 0.0) return;  // subgradient 0 at the origin
        const Tensor& av = in_val(n.a);
        for (std::size_t i = 0; i < ga->size(); ++i) (*ga)[i] += g[0] * av[i] / y;
      }
      return;
    }

    case Op::kStOneHot: {
      if (std::vector<double>* ga = in_grad(n.a)) {
        double dot = 0.0;
        for (std::size_t i = 0; i < g.size(); ++i) dot += g[i] * n.daux[i];
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += n.daux[i] * (g[i] - dot);
      }
      return;
    }

    case Op::kReshape: {
      if (std::vector<double>* ga = in_grad(n.a))
        for (std::size_t i = 0; i < g.size(); ++i) (*ga)[i] += g[i];
      return;
    }

    case Op::kTranspose: {
      if (std::vector<double>* ga = in_grad(n.a)) {
        int rows = n.val.dim(0), cols = n.val.dim(1);  // shape of the transposed value
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < cols; ++c)
            (*ga)[static_cast<std::size_t>(c) * rows + r] += g[static_cast<std::size_t>(r) * cols + c];
      }
      return;
    }
  }
}

}  // namespace drivesim::ad
