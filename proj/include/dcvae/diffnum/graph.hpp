#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "dcvae/diffnum/tensor.hpp"

namespace dcvae::diffnum {

/// Handle to a node recorded on a Graph. Only meaningful for the graph
/// that produced it and only until that graph is cleared.
struct Var {
  std::int32_t id = -1;
  bool valid() const noexcept { return id >= 0; }
};

/// Gradient accumulator keyed by parameter address.
class Gradients {
 public:
  /// Returns the accumulator for `p`, creating a zero tensor on first use.
  Tensor& slot(const Parameter& p);
  const Tensor* find(const Parameter& p) const;
  const Tensor& at(const Parameter& p) const;
  bool contains(const Parameter& p) const { return find(p) != nullptr; }

  void zero();
  std::size_t size() const noexcept { return entries_.size(); }
  const std::vector<std::pair<const Parameter*, Tensor>>& entries() const noexcept {
    return entries_;
  }

  /// this += other, entry by entry; entries missing here are created.
  void add(const Gradients& other);
  void scale(double factor);

 private:
  std::vector<std::pair<const Parameter*, Tensor>> entries_;
};

enum class Op : std::uint8_t {
  Constant,
  Param,
  Add,
  Sub,
  Mul,
  MatVec,
  Tanh,
  Exp,
  Log,
  Square,
  Sum,
  Mean,
  Sigmoid,
  LogSigmoid,
  Scale,
  Clamp,
  Slice,
  Concat,
};

const char* op_name(Op op) noexcept;

/// Reverse-mode tape over flat float64 values.
///
/// Nodes are appended in evaluation order and values are computed eagerly,
/// so the tape is already topologically sorted for backward(). Storage is
/// an arena that survives clear(), which lets one Graph per thread be
/// reused across records without reallocating.
///
/// Shapes: every value is a flat vector; matvec() reads the row count from
/// the matrix operand. Binary elementwise ops require equal sizes.
class Graph {
 public:
  Var constant(std::span<const double> values, std::size_t rows = 1);
  Var constant(const Tensor& t) { return constant(t.values(), t.rows()); }
  Var constant(double v);
  Var param(const Parameter& p);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var matvec(Var matrix, Var vec);
  Var tanh(Var a);
  Var exp(Var a);
  Var log(Var a);
  Var square(Var a);
  Var sum(Var a);
  Var mean(Var a);
  Var sigmoid(Var a);
  Var log_sigmoid(Var a);
  Var scale(Var a, double factor);
  /// Gradient passes only where lo < a < hi.
  Var clamp(Var a, double lo, double hi);
  Var slice(Var a, std::size_t offset, std::size_t length);
  Var element(Var a, std::size_t index) { return slice(a, index, 1); }
  Var concat(std::span<const Var> parts);

  std::span<const double> value(Var v) const;
  double scalar(Var v) const;
  std::size_t size(Var v) const;
  std::size_t node_count() const noexcept { return nodes_.size(); }

  /// Attaches a label used in numeric error messages.
  void label(Var v, std::string name);

  /// d(output)/d(p) for every parameter recorded on this graph.
  Gradients backward(Var output);
  /// Accumulating form: adds d(output)/d(p) into `into`.
  void backward(Var output, Gradients& into);

  /// Drops all nodes; keeps arena capacity.
  void clear();

 private:
  struct Node {
    Op op;
    std::int32_t a = -1;
    std::int32_t b = -1;
    std::uint32_t offset = 0;  // into values_/grads_
    std::uint32_t size = 0;
    std::uint32_t rows = 1;
    double aux0 = 0.0;
    double aux1 = 0.0;
    const Parameter* param = nullptr;
  };

  Var push(Node node);
  const double* vptr(const Node& n) const;
  const double* vptr(std::int32_t id) const { return vptr(nodes_[static_cast<std::size_t>(id)]); }
  double* out_ptr(Var v) { return values_.data() + nodes_[static_cast<std::size_t>(v.id)].offset; }
  const Node& node(Var v) const;
  void check_finite(Var v);
  std::string describe(std::size_t id) const;
  Var unary(Op op, Var a);

  std::vector<Node> nodes_;
  std::vector<double> values_;
  std::vector<double> grads_;
  std::vector<std::int32_t> concat_inputs_;
  std::vector<std::pair<std::int32_t, std::string>> labels_;
};

}  // namespace dcvae::diffnum
