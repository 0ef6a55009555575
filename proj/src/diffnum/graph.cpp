#include "dcvae/diffnum/graph.hpp"

#include <algorithm>
#include <cmath>

#include "dcvae/errors.hpp"

namespace dcvae::diffnum {

// ---------------------------------------------------------------------------
// Gradients

Tensor& Gradients::slot(const Parameter& p) {
  for (auto& [key, grad] : entries_) {
    if (key == &p) return grad;
  }
  entries_.emplace_back(&p, Tensor(p.value.shape(), 0.0));
  return entries_.back().second;
}

const Tensor* Gradients::find(const Parameter& p) const {
  for (const auto& [key, grad] : entries_) {
    if (key == &p) return &grad;
  }
  return nullptr;
}

const Tensor& Gradients::at(const Parameter& p) const {
  const Tensor* t = find(p);
  if (!t) throw ContractViolation("no gradient recorded for parameter '" + p.name + "'");
  return *t;
}

void Gradients::zero() {
  for (auto& entry : entries_) entry.second.fill(0.0);
}

void Gradients::add(const Gradients& other) {
  for (const auto& [key, grad] : other.entries_) {
    Tensor& mine = slot(*key);
    for (std::size_t i = 0; i < mine.size(); ++i) mine[i] += grad[i];
  }
}

void Gradients::scale(double factor) {
  for (auto& entry : entries_) {
    for (double& v : entry.second.values()) v *= factor;
  }
}

// ---------------------------------------------------------------------------
// Graph

const char* op_name(Op op) noexcept {
  switch (op) {
    case Op::Constant: return "constant";
    case Op::Param: return "param";
    case Op::Add: return "add";
    case Op::Sub: return "sub";
    case Op::Mul: return "mul";
    case Op::MatVec: return "matvec";
    case Op::Tanh: return "tanh";
    case Op::Exp: return "exp";
    case Op::Log: return "log";
    case Op::Square: return "square";
    case Op::Sum: return "sum";
    case Op::Mean: return "mean";
    case Op::Sigmoid: return "sigmoid";
    case Op::LogSigmoid: return "log_sigmoid";
    case Op::Scale: return "scale";
    case Op::Clamp: return "clamp";
    case Op::Slice: return "slice";
    case Op::Concat: return "concat";
  }
  return "?";
}

namespace {

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_log_sigmoid(double x) {
  if (x >= 0.0) return -std::log1p(std::exp(-x));
  return x - std::log1p(std::exp(x));
}

}  // namespace

const Graph::Node& Graph::node(Var v) const {
  if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size()) {
    throw ContractViolation("variable does not belong to this graph");
  }
  return nodes_[static_cast<std::size_t>(v.id)];
}

const double* Graph::vptr(const Node& n) const {
  return n.param ? n.param->value.data() : values_.data() + n.offset;
}

Var Graph::push(Node n) {
  n.offset = static_cast<std::uint32_t>(values_.size());
  values_.resize(values_.size() + n.size);
  nodes_.push_back(n);
  return Var{static_cast<std::int32_t>(nodes_.size() - 1)};
}

std::string Graph::describe(std::size_t id) const {
  std::string s = std::string(op_name(nodes_[id].op)) + " node #" + std::to_string(id);
  for (const auto& [node_id, name] : labels_) {
    if (static_cast<std::size_t>(node_id) == id) s += " '" + name + "'";
  }
  if (nodes_[id].param) s += " (parameter '" + nodes_[id].param->name + "')";
  return s;
}

void Graph::check_finite(Var v) {
  const Node& n = nodes_[static_cast<std::size_t>(v.id)];
  const double* p = vptr(n);
  for (std::uint32_t i = 0; i < n.size; ++i) {
    if (!std::isfinite(p[i])) {
      throw NumericError("non-finite value produced by " +
                         describe(static_cast<std::size_t>(v.id)));
    }
  }
}

void Graph::label(Var v, std::string name) {
  node(v);
  labels_.emplace_back(v.id, std::move(name));
}

Var Graph::constant(std::span<const double> values, std::size_t rows) {
  Node n{.op = Op::Constant};
  n.size = static_cast<std::uint32_t>(values.size());
  n.rows = static_cast<std::uint32_t>(rows);
  Var v = push(n);
  std::copy(values.begin(), values.end(), out_ptr(v));
  check_finite(v);
  return v;
}

Var Graph::constant(double v) { return constant(std::span<const double>(&v, 1)); }

Var Graph::param(const Parameter& p) {
  Node n{.op = Op::Param};
  n.size = static_cast<std::uint32_t>(p.value.size());
  n.rows = static_cast<std::uint32_t>(p.value.rows());
  n.param = &p;
  Var v = push(n);
  check_finite(v);
  return v;
}

Var Graph::unary(Op op, Var a) {
  Node n{.op = op, .a = a.id};
  n.size = node(a).size;
  Var v = push(n);
  const double* x = vptr(a.id);
  double* y = out_ptr(v);
  const std::uint32_t size = n.size;
  switch (op) {
    case Op::Tanh:
      for (std::uint32_t i = 0; i < size; ++i) y[i] = std::tanh(x[i]);
      break;
    case Op::Exp:
      for (std::uint32_t i = 0; i < size; ++i) y[i] = std::exp(x[i]);
      break;
    case Op::Log:
      for (std::uint32_t i = 0; i < size; ++i) y[i] = std::log(x[i]);
      break;
    case Op::Square:
      for (std::uint32_t i = 0; i < size; ++i) y[i] = x[i] * x[i];
      break;
    case Op::Sigmoid:
      for (std::uint32_t i = 0; i < size; ++i) y[i] = stable_sigmoid(x[i]);
      break;
    case Op::LogSigmoid:
      for (std::uint32_t i = 0; i < size; ++i) y[i] = stable_log_sigmoid(x[i]);
      break;
    default:
      throw ContractViolation("not a unary op");
  }
  check_finite(v);
  return v;
}

Var Graph::add(Var a, Var b) {
  if (node(a).size != node(b).size) throw ContractViolation("add: size mismatch");
  Node n{.op = Op::Add, .a = a.id, .b = b.id};
  n.size = node(a).size;
  Var v = push(n);
  const double* x = vptr(a.id);
  const double* z = vptr(b.id);
  double* y = out_ptr(v);
  for (std::uint32_t i = 0; i < n.size; ++i) y[i] = x[i] + z[i];
  check_finite(v);
  return v;
}

Var Graph::sub(Var a, Var b) {
  if (node(a).size != node(b).size) throw ContractViolation("sub: size mismatch");
  Node n{.op = Op::Sub, .a = a.id, .b = b.id};
  n.size = node(a).size;
  Var v = push(n);
  const double* x = vptr(a.id);
  const double* z = vptr(b.id);
  double* y = out_ptr(v);
  for (std::uint32_t i = 0; i < n.size; ++i) y[i] = x[i] - z[i];
  check_finite(v);
  return v;
}

Var Graph::mul(Var a, Var b) {
  if (node(a).size != node(b).size) throw ContractViolation("mul: size mismatch");
  Node n{.op = Op::Mul, .a = a.id, .b = b.id};
  n.size = node(a).size;
  Var v = push(n);
  const double* x = vptr(a.id);
  const double* z = vptr(b.id);
  double* y = out_ptr(v);
  for (std::uint32_t i = 0; i < n.size; ++i) y[i] = x[i] * z[i];
  check_finite(v);
  return v;
}

Var Graph::matvec(Var matrix, Var vec) {
  const Node& m = node(matrix);
  const std::uint32_t rows = m.rows;
  if (rows == 0 || m.size % rows != 0) throw ContractViolation("matvec: bad matrix shape");
  const std::uint32_t cols = m.size / rows;
  if (node(vec).size != cols) {
    throw ContractViolation("matvec: matrix has " + std::to_string(cols) +
                            " columns but vector has " + std::to_string(node(vec).size) +
                            " entries");
  }
  Node n{.op = Op::MatVec, .a = matrix.id, .b = vec.id};
  n.size = rows;
  Var v = push(n);
  const double* w = vptr(matrix.id);
  const double* x = vptr(vec.id);
  double* y = out_ptr(v);
  for (std::uint32_t r = 0; r < rows; ++r) {
    const double* row = w + static_cast<std::size_t>(r) * cols;
    double acc = 0.0;
    for (std::uint32_t c = 0; c < cols; ++c) acc += row[c] * x[c];
    y[r] = acc;
  }
  check_finite(v);
  return v;
}

Var Graph::tanh(Var a) { return unary(Op::Tanh, a); }
Var Graph::exp(Var a) { return unary(Op::Exp, a); }
Var Graph::log(Var a) { return unary(Op::Log, a); }
Var Graph::square(Var a) { return unary(Op::Square, a); }
Var Graph::sigmoid(Var a) { return unary(Op::Sigmoid, a); }
Var Graph::log_sigmoid(Var a) { return unary(Op::LogSigmoid, a); }

Var Graph::sum(Var a) {
  Node n{.op = Op::Sum, .a = a.id};
  n.size = 1;
  const std::uint32_t count = node(a).size;
  Var v = push(n);
  const double* x = vptr(a.id);
  double acc = 0.0;
  for (std::uint32_t i = 0; i < count; ++i) acc += x[i];
  *out_ptr(v) = acc;
  check_finite(v);
  return v;
}

Var Graph::mean(Var a) {
  const std::uint32_t count = node(a).size;
  if (count == 0) throw ContractViolation("mean of an empty vector");
  Node n{.op = Op::Mean, .a = a.id};
  n.size = 1;
  Var v = push(n);
  const double* x = vptr(a.id);
  double acc = 0.0;
  for (std::uint32_t i = 0; i < count; ++i) acc += x[i];
  *out_ptr(v) = acc / static_cast<double>(count);
  check_finite(v);
  return v;
}

Var Graph::scale(Var a, double factor) {
  Node n{.op = Op::Scale, .a = a.id, .aux0 = factor};
  n.size = node(a).size;
  Var v = push(n);
  const double* x = vptr(a.id);
  double* y = out_ptr(v);
  for (std::uint32_t i = 0; i < n.size; ++i) y[i] = x[i] * factor;
  check_finite(v);
  return v;
}

Var Graph::clamp(Var a, double lo, double hi) {
  if (!(lo < hi)) throw ContractViolation("clamp: empty interval");
  Node n{.op = Op::Clamp, .a = a.id, .aux0 = lo, .aux1 = hi};
  n.size = node(a).size;
  Var v = push(n);
  const double* x = vptr(a.id);
  double* y = out_ptr(v);
  for (std::uint32_t i = 0; i < n.size; ++i) y[i] = std::clamp(x[i], lo, hi);
  check_finite(v);
  return v;
}

Var Graph::slice(Var a, std::size_t offset, std::size_t length) {
  if (offset + length > node(a).size || length == 0) {
    throw ContractViolation("slice [" + std::to_string(offset) + ", " +
                            std::to_string(offset + length) + ") out of range for size " +
                            std::to_string(node(a).size));
  }
  Node n{.op = Op::Slice, .a = a.id, .b = static_cast<std::int32_t>(offset)};
  n.size = static_cast<std::uint32_t>(length);
  Var v = push(n);
  const double* x = vptr(a.id);
  std::copy(x + offset, x + offset + length, out_ptr(v));
  return v;
}

Var Graph::concat(std::span<const Var> parts) {
  if (parts.empty()) throw ContractViolation("concat of nothing");
  Node n{.op = Op::Concat};
  n.a = static_cast<std::int32_t>(concat_inputs_.size());
  n.b = static_cast<std::int32_t>(parts.size());
  std::uint32_t total = 0;
  for (Var p : parts) {
    total += node(p).size;
    concat_inputs_.push_back(p.id);
  }
  n.size = total;
  Var v = push(n);
  double* y = out_ptr(v);
  for (Var p : parts) {
    const Node& src = nodes_[static_cast<std::size_t>(p.id)];
    const double* x = vptr(src);
    y = std::copy(x, x + src.size, y);
  }
  return v;
}

std::span<const double> Graph::value(Var v) const {
  const Node& n = node(v);
  return {vptr(n), n.size};
}

double Graph::scalar(Var v) const {
  const Node& n = node(v);
  if (n.size != 1) throw ContractViolation("scalar() on a node of size " + std::to_string(n.size));
  return *vptr(n);
}

std::size_t Graph::size(Var v) const { return node(v).size; }

Gradients Graph::backward(Var output) {
  Gradients g;
  backward(output, g);
  return g;
}

void Graph::backward(Var output, Gradients& into) {
  const Node& out = node(output);
  if (out.size != 1) {
    throw ContractViolation("backward() needs a scalar output, got size " +
                            std::to_string(out.size));
  }
  grads_.assign(values_.size(), 0.0);
  grads_[out.offset] = 1.0;

  for (std::int32_t id = output.id; id >= 0; --id) {
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    const double* g = grads_.data() + n.offset;
    for (std::uint32_t i = 0; i < n.size; ++i) {
      if (!std::isfinite(g[i])) {
        throw NumericError("non-finite gradient at " + describe(static_cast<std::size_t>(id)));
      }
    }
    switch (n.op) {
      case Op::Constant:
        break;
      case Op::Param: {
        Tensor& acc = into.slot(*n.param);
        for (std::uint32_t i = 0; i < n.size; ++i) acc[i] += g[i];
        break;
      }
      case Op::Add: {
        double* ga = grads_.data() + nodes_[n.a].offset;
        double* gb = grads_.data() + nodes_[n.b].offset;
        for (std::uint32_t i = 0; i < n.size; ++i) ga[i] += g[i];
        for (std::uint32_t i = 0; i < n.size; ++i) gb[i] += g[i];
        break;
      }
      case Op::Sub: {
        double* ga = grads_.data() + nodes_[n.a].offset;
        double* gb = grads_.data() + nodes_[n.b].offset;
        for (std::uint32_t i = 0; i < n.size; ++i) ga[i] += g[i];
        for (std::uint32_t i = 0; i < n.size; ++i) gb[i] -= g[i];
        break;
      }
      case Op::Mul: {
        double* ga = grads_.data() + nodes_[n.a].offset;
        double* gb = grads_.data() + nodes_[n.b].offset;
        const double* xa = vptr(n.a);
        const double* xb = vptr(n.b);
        for (std::uint32_t i = 0; i < n.size; ++i) ga[i] += g[i] * xb[i];
        for (std::uint32_t i = 0; i < n.size; ++i) gb[i] += g[i] * xa[i];
        break;
      }
      case Op::MatVec: {
        const Node& m = nodes_[n.a];
        const std::uint32_t rows = n.size;
        const std::uint32_t cols = m.size / rows;
        double* gw = grads_.data() + m.offset;
        double* gx = grads_.data() + nodes_[n.b].offset;
        const double* w = vptr(m);
        const double* x = vptr(n.b);
        for (std::uint32_t r = 0; r < rows; ++r) {
          const double gr = g[r];
          double* gw_row = gw + static_cast<std::size_t>(r) * cols;
          const double* w_row = w + static_cast<std::size_t>(r) * cols;
          for (std::uint32_t c = 0; c < cols; ++c) {
            gw_row[c] += gr * x[c];
            gx[c] += w_row[c] * gr;
          }
        }
        break;
      }
      case Op::Tanh: {
        double* ga = grads_.data() + nodes_[n.a].offset;
        const double* y = vptr(n);
        for (std::uint32_t i = 0; i < n.size; ++i) ga[i] += g[i] * (1.0 - y[i] * y[i]);
        break;
      }
      case Op::Exp: {
        double* ga = grads_.data() + nodes_[n.a].offset;
        const double* y = vptr(n);
        for (std::uint32_t i = 0; i < n.size; ++i) ga[i] += g[i] * y[i];
        break;
      }
      case Op::Log: {
        double* ga = grads_.data() + nodes_[n.a].offset;
        const double* x = vptr(n.a);
        for (std::uint32_t i = 0; i < n.size; ++i) ga[i] += g[i] / x[i];
        break;
      }
      case Op::Square: {
        double* ga = grads_.data() + nodes_[n.a].offset;
        const double* x = vptr(n.a);
        for (std::uint32_t i = 0; i < n.size; ++i) ga[i] += 2.0 * g[i] * x[i];
        break;
      }
      case Op::Sum:
      case Op::Mean: {
        const Node& src = nodes_[n.a];
        double* ga = grads_.data() + src.offset;
        const double gi = n.op == Op::Sum ? g[0] : g[0] / static_cast<double>(src.size);
        for (std::uint32_t i = 0; i < src.size; ++i) ga[i] += gi;
        break;
      }
      case Op::Sigmoid: {
        double* ga = grads_.data() + nodes_[n.a].offset;
        const double* y = vptr(n);
        for (std::uint32_t i = 0; i < n.size; ++i) ga[i] += g[i] * y[i] * (1.0 - y[i]);
        break;
      }
      case Op::LogSigmoid: {
        double* ga = grads_.data() + nodes_[n.a].offset;
        const double* x = vptr(n.a);
        for (std::uint32_t i = 0; i < n.size; ++i) ga[i] += g[i] * stable_sigmoid(-x[i]);
        break;
      }
      case Op::Scale: {
        double* ga = grads_.data() + nodes_[n.a].offset;
        for (std::uint32_t i = 0; i < n.size; ++i) ga[i] += g[i] * n.aux0;
        break;
      }
      case Op::Clamp: {
        double* ga = grads_.data() + nodes_[n.a].offset;
        const double* x = vptr(n.a);
        for (std::uint32_t i = 0; i < n.size; ++i) {
          if (x[i] > n.aux0 && x[i] < n.aux1) ga[i] += g[i];
        }
        break;
      }
      case Op::Slice: {
        double* ga = grads_.data() + nodes_[n.a].offset + n.b;
        for (std::uint32_t i = 0; i < n.size; ++i) ga[i] += g[i];
        break;
      }
      case Op::Concat: {
        std::uint32_t pos = 0;
        for (std::int32_t k = 0; k < n.b; ++k) {
          const Node& src = nodes_[concat_inputs_[n.a + k]];
          double* ga = grads_.data() + src.offset;
          for (std::uint32_t i = 0; i < src.size; ++i) ga[i] += g[pos + i];
          pos += src.size;
        }
        break;
      }
    }
  }
}

void Graph::clear() {
  nodes_.clear();
  values_.clear();
  grads_.clear();
  concat_inputs_.clear();
  labels_.clear();
}

}  // namespace dcvae::diffnum
