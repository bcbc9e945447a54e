#pragma once

#include <functional>
#include <vector>

#include "dexfit/tensor.hpp"

namespace dexfit {

class Tape;

/// Handle to a tape node. Vars are cheap value types; the tensor they name
/// is immutable once created.
struct Var {
  Tape* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor& value() const;
};

/// Reverse-mode gradient tape. Nodes are appended in evaluation order, so
/// creation order is a topological order; backward walks it in reverse.
/// A Tape is confined to a single thread.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, int self, const Tensor& gout)>;

  /// Leaf with gradient tracking (optimization variable or weight).
  Var input(Tensor value);
  /// Leaf treated as data; gradients are never requested for it.
  Var constant(Tensor value);
  /// Registers an op result. `parents` are the node ids the backward
  /// function will accumulate into; `op` names the primitive for errors.
  Var node(Tensor value, std::vector<int> parents, BackwardFn backward,
           const char* op);

  const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  const char* op_name(int id) const { return nodes_[static_cast<std::size_t>(id)].op; }
  std::size_t size() const { return nodes_.size(); }
  void clear();

  /// Reverse accumulation from a scalar objective. Vars not reachable from
  /// the objective get zero gradients. Raises NotScalarError otherwise.
  std::vector<Tensor> gradient(const Var& objective,
                               const std::vector<Var>& wrt);

  /// Adds g into the gradient slot of node id (backward functions only).
  void accumulate(int id, const Tensor& g);

 private:
  struct Node {
    Tensor value;
    std::vector<int> parents;
    BackwardFn backward;
    const char* op;
  };
  std::vector<Node> nodes_;
  std::vector<Tensor> grads_;
  std::vector<char> has_grad_;
};

// Arithmetic primitives. Binary elementwise ops require identical shapes or
// one scalar operand; there is no other implicit broadcasting.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);
Var neg(Var a);
Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var square(Var a);
Var sin(Var a);
Var cos(Var a);
Var asin(Var a);
Var atan2(Var y, Var x);
/// max(a, 0); derivative 0 at the kink (flat side).
Var hinge(Var a);
/// Elementwise max; gradient routes to the larger input (ties: first).
Var vmax(Var a, Var b);
Var sum(Var a);
Var mean(Var a);
Var matmul(Var a, Var b);
Var transpose(Var a);
Var reshape(Var a, std::vector<std::int64_t> shape);
/// Concatenation along axis 0 (vectors or matrices with equal column count).
Var concat(const std::vector<Var>& parts);
/// Rank-1: slice(a, {r0}, {nr}); rank-2: slice(a, {r0,c0}, {nr,nc}).
Var slice(Var a, std::vector<std::int64_t> offsets,
          std::vector<std::int64_t> sizes);
/// Rows of a rank-2 tensor by index list; backward scatter-adds.
Var gather_rows(Var a, std::vector<std::int64_t> indices);
/// mat (r,c) + row (c) broadcast over rows (explicit, not implicit).
Var add_rows(Var mat, Var row);

// Scalar-literal conveniences.
Var add(Var a, double b);
Var sub(Var a, double b);
Var sub(double a, Var b);
Var mul(Var a, double b);
Var div(Var a, double b);
Var div(double a, Var b);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator+(Var a, double b) { return add(a, b); }
inline Var operator+(double a, Var b) { return add(b, a); }
inline Var operator-(Var a, double b) { return sub(a, b); }
inline Var operator-(double a, Var b) { return sub(a, b); }
inline Var operator-(Var a) { return neg(a); }
inline Var operator*(Var a, double b) { return mul(a, b); }
inline Var operator*(double a, Var b) { return mul(b, a); }
inline Var operator/(Var a, double b) { return div(a, b); }
inline Var operator/(double a, Var b) { return div(a, b); }

}  // namespace dexfit
