#include "dexfit/tape.hpp"

#include <cmath>
#include <utility>

#include "dexfit/kernels.hpp"

namespace dexfit {

namespace {

void check_finite(const Tensor& t, const char* op, std::size_t id) {
  for (double v : t.data)
    if (!std::isfinite(v))
      throw NonFiniteValueError(std::string(op) + " (node " +
                                std::to_string(id) +
                                ") produced a non-finite value");
}

void require_valid(const Var& v, const char* op) {
  if (!v.valid())
    throw ShapeMismatchError(std::string(op) + ": invalid Var handle");
}

void require_same_tape(const Var& a, const Var& b, const char* op) {
  require_valid(a, op);
  require_valid(b, op);
  if (a.tape != b.tape)
    throw ShapeMismatchError(std::string(op) + ": Vars from different tapes");
}

Tensor sum_to_scalar(const Tensor& g) {
  return Tensor::scalar(det_sum_serial(g.data.data(), g.numel()));
}

/// Broadcast layout for binary elementwise ops: equal shapes, or exactly one
/// scalar operand.
enum class Bin { Same, ScalarLeft, ScalarRight };

Bin bin_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.same_shape(b)) return Bin::Same;
  // When both operands are single-element (e.g. {1} against a rank-0
  // literal) the right side collapses, so the left shape survives.
  if (b.is_scalar()) return Bin::ScalarRight;
  if (a.is_scalar()) return Bin::ScalarLeft;
  throw ShapeMismatchError(std::string(op) + ": " +
                           Tensor::shape_str(a.shape) + " vs " +
                           Tensor::shape_str(b.shape) +
                           " (only scalar broadcasting is supported)");
}

template <typename F>
Tensor bin_forward(const Tensor& a, const Tensor& b, Bin kind, F&& f) {
  const Tensor& base = kind == Bin::ScalarLeft ? b : a;
  Tensor out = Tensor::zeros(base.shape);
  const std::int64_t n = out.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    const double x = kind == Bin::ScalarLeft ? a.data[0] : a.at(i);
    const double y = kind == Bin::ScalarRight ? b.data[0] : b.at(i);
    out.at(i) = f(x, y);
  }
  return out;
}

/// Accumulates an elementwise gradient into a parent that may be the scalar
/// side of a broadcast.
void accum_bin(Tape& t, int parent, Bin kind, bool left, const Tensor& g) {
  const bool scalar_side = (left && kind == Bin::ScalarLeft) ||
                           (!left && kind == Bin::ScalarRight);
  if (!scalar_side) {
    t.accumulate(parent, g);
    return;
  }
  // The scalar side may have rank 0 or shape {1}; match its stored shape.
  Tensor gs = g.is_scalar() ? g : sum_to_scalar(g);
  gs.shape = t.value(parent).shape;
  t.accumulate(parent, gs);
}

template <typename F>
Tensor map_unary(const Tensor& a, F&& f) {
  Tensor out = Tensor::zeros(a.shape);
  for (std::int64_t i = 0; i < a.numel(); ++i) out.at(i) = f(a.at(i));
  return out;
}

}  // namespace

const Tensor& Var::value() const {
  if (!valid()) throw ShapeMismatchError("value(): invalid Var handle");
  return tape->value(id);
}

Var Tape::input(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, "input"});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::constant(Tensor value) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, "constant"});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::node(Tensor value, std::vector<int> parents, BackwardFn backward,
               const char* op) {
  check_finite(value, op, nodes_.size());
  for (int p : parents)
    if (p < 0 || p >= static_cast<int>(nodes_.size()))
      throw ShapeMismatchError(std::string(op) + ": parent id out of range");
  nodes_.push_back(Node{std::move(value), std::move(parents),
                        std::move(backward), op});
  return Var{this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::clear() {
  nodes_.clear();
  grads_.clear();
  has_grad_.clear();
}

void Tape::accumulate(int id, const Tensor& g) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!g.same_shape(n.value))
    throw ShapeMismatchError(std::string("gradient for ") + n.op +
                             " has shape " + Tensor::shape_str(g.shape) +
                             ", value has " + Tensor::shape_str(n.value.shape));
  if (!has_grad_[static_cast<std::size_t>(id)]) {
    grads_[static_cast<std::size_t>(id)] = g;
    has_grad_[static_cast<std::size_t>(id)] = 1;
    return;
  }
  Tensor& dst = grads_[static_cast<std::size_t>(id)];
  for (std::int64_t i = 0; i < g.numel(); ++i) dst.at(i) += g.at(i);
}

std::vector<Tensor> Tape::gradient(const Var& objective,
                                   const std::vector<Var>& wrt) {
  require_valid(objective, "gradient");
  if (objective.tape != this)
    throw ShapeMismatchError("gradient: objective from another tape");
  if (!value(objective.id).is_scalar())
    throw NotScalarError(
        "gradient: objective has shape " +
        Tensor::shape_str(value(objective.id).shape));
  grads_.assign(nodes_.size(), Tensor());
  has_grad_.assign(nodes_.size(), 0);
  grads_[static_cast<std::size_t>(objective.id)] = Tensor::scalar(1.0);
  has_grad_[static_cast<std::size_t>(objective.id)] = 1;
  for (int id = objective.id; id >= 0; --id) {
    if (!has_grad_[static_cast<std::size_t>(id)]) continue;
    const Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.backward) n.backward(*this, id, grads_[static_cast<std::size_t>(id)]);
  }
  std::vector<Tensor> out;
  out.reserve(wrt.size());
  for (const Var& v : wrt) {
    require_valid(v, "gradient");
    if (v.tape != this)
      throw ShapeMismatchError("gradient: wrt Var from another tape");
    if (has_grad_[static_cast<std::size_t>(v.id)])
      out.push_back(grads_[static_cast<std::size_t>(v.id)]);
    else
      out.push_back(Tensor::zeros(value(v.id).shape));
  }
  grads_.clear();
  has_grad_.clear();
  return out;
}

Var add(Var a, Var b) {
  require_same_tape(a, b, "add");
  const Bin kind = bin_kind(a.value(), b.value(), "add");
  Tensor out = bin_forward(a.value(), b.value(), kind,
                           [](double x, double y) { return x + y; });
  const int pa = a.id, pb = b.id;
  return a.tape->node(
      std::move(out), {pa, pb},
      [pa, pb, kind](Tape& t, int, const Tensor& g) {
        accum_bin(t, pa, kind, true, g);
        accum_bin(t, pb, kind, false, g);
      },
      "add");
}

Var sub(Var a, Var b) {
  require_same_tape(a, b, "sub");
  const Bin kind = bin_kind(a.value(), b.value(), "sub");
  Tensor out = bin_forward(a.value(), b.value(), kind,
                           [](double x, double y) { return x - y; });
  const int pa = a.id, pb = b.id;
  return a.tape->node(
      std::move(out), {pa, pb},
      [pa, pb, kind](Tape& t, int, const Tensor& g) {
        accum_bin(t, pa, kind, true, g);
        Tensor ng = map_unary(g, [](double v) { return -v; });
        accum_bin(t, pb, kind, false, ng);
      },
      "sub");
}

Var mul(Var a, Var b) {
  require_same_tape(a, b, "mul");
  const Bin kind = bin_kind(a.value(), b.value(), "mul");
  Tensor out = bin_forward(a.value(), b.value(), kind,
                           [](double x, double y) { return x * y; });
  const int pa = a.id, pb = b.id;
  return a.tape->node(
      std::move(out), {pa, pb},
      [pa, pb, kind](Tape& t, int, const Tensor& g) {
        const Tensor& va = t.value(pa);
        const Tensor& vb = t.value(pb);
        Tensor ga = Tensor::zeros(g.shape);
        Tensor gb = Tensor::zeros(g.shape);
        for (std::int64_t i = 0; i < g.numel(); ++i) {
          const double x = kind == Bin::ScalarLeft ? va.data[0] : va.at(i);
          const double y = kind == Bin::ScalarRight ? vb.data[0] : vb.at(i);
          ga.at(i) = g.at(i) * y;
          gb.at(i) = g.at(i) * x;
        }
        accum_bin(t, pa, kind, true, ga);
        accum_bin(t, pb, kind, false, gb);
      },
      "mul");
}

Var div(Var a, Var b) {
  require_same_tape(a, b, "div");
  const Bin kind = bin_kind(a.value(), b.value(), "div");
  Tensor out = bin_forward(a.value(), b.value(), kind,
                           [](double x, double y) { return x / y; });
  const int pa = a.id, pb = b.id;
  return a.tape->node(
      std::move(out), {pa, pb},
      [pa, pb, kind](Tape& t, int, const Tensor& g) {
        const Tensor& va = t.value(pa);
        const Tensor& vb = t.value(pb);
        Tensor ga = Tensor::zeros(g.shape);
        Tensor gb = Tensor::zeros(g.shape);
        for (std::int64_t i = 0; i < g.numel(); ++i) {
          const double x = kind == Bin::ScalarLeft ? va.data[0] : va.at(i);
          const double y = kind == Bin::ScalarRight ? vb.data[0] : vb.at(i);
          ga.at(i) = g.at(i) / y;
          gb.at(i) = -g.at(i) * x / (y * y);
        }
        accum_bin(t, pa, kind, true, ga);
        accum_bin(t, pb, kind, false, gb);
      },
      "div");
}

namespace {

template <typename FwdF, typename BwdF>
Var unary_op(Var a, const char* op, FwdF&& fwd, BwdF&& dfd) {
  require_valid(a, op);
  Tensor out = map_unary(a.value(), fwd);
  const int pa = a.id;
  return a.tape->node(
      std::move(out), {pa},
      [pa, dfd](Tape& t, int self, const Tensor& g) {
        const Tensor& x = t.value(pa);
        const Tensor& y = t.value(self);
        Tensor ga = Tensor::zeros(g.shape);
        for (std::int64_t i = 0; i < g.numel(); ++i)
          ga.at(i) = g.at(i) * dfd(x.at(i), y.at(i));
        t.accumulate(pa, ga);
      },
      op);
}

}  // namespace

Var neg(Var a) {
  return unary_op(a, "neg", [](double x) { return -x; },
                  [](double, double) { return -1.0; });
}

Var exp(Var a) {
  return unary_op(a, "exp", [](double x) { return std::exp(x); },
                  [](double, double y) { return y; });
}

Var log(Var a) {
  return unary_op(a, "log", [](double x) { return std::log(x); },
                  [](double x, double) { return 1.0 / x; });
}

Var sqrt(Var a) {
  return unary_op(a, "sqrt", [](double x) { return std::sqrt(x); },
                  [](double, double y) { return 0.5 / y; });
}

Var square(Var a) {
  return unary_op(a, "square", [](double x) { return x * x; },
                  [](double x, double) { return 2.0 * x; });
}

Var sin(Var a) {
  return unary_op(a, "sin", [](double x) { return std::sin(x); },
                  [](double x, double) { return std::cos(x); });
}

Var cos(Var a) {
  return unary_op(a, "cos", [](double x) { return std::cos(x); },
                  [](double x, double) { return -std::sin(x); });
}

Var asin(Var a) {
  return unary_op(a, "asin", [](double x) { return std::asin(x); },
                  [](double x, double) {
                    return 1.0 / std::sqrt(1.0 - x * x);
                  });
}

Var hinge(Var a) {
  return unary_op(a, "hinge", [](double x) { return x > 0 ? x : 0.0; },
                  [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var atan2(Var y, Var x) {
  require_same_tape(y, x, "atan2");
  require_same_shape(y.value(), x.value(), "atan2");
  Tensor out = Tensor::zeros(y.value().shape);
  for (std::int64_t i = 0; i < out.numel(); ++i)
    out.at(i) = std::atan2(y.value().at(i), x.value().at(i));
  const int py = y.id, px = x.id;
  return y.tape->node(
      std::move(out), {py, px},
      [py, px](Tape& t, int, const Tensor& g) {
        const Tensor& vy = t.value(py);
        const Tensor& vx = t.value(px);
        Tensor gy = Tensor::zeros(g.shape);
        Tensor gx = Tensor::zeros(g.shape);
        for (std::int64_t i = 0; i < g.numel(); ++i) {
          const double d = vx.at(i) * vx.at(i) + vy.at(i) * vy.at(i);
          gy.at(i) = g.at(i) * vx.at(i) / d;
          gx.at(i) = -g.at(i) * vy.at(i) / d;
        }
        t.accumulate(py, gy);
        t.accumulate(px, gx);
      },
      "atan2");
}

Var vmax(Var a, Var b) {
  require_same_tape(a, b, "vmax");
  const Bin kind = bin_kind(a.value(), b.value(), "vmax");
  Tensor out = bin_forward(a.value(), b.value(), kind,
                           [](double x, double y) { return x >= y ? x : y; });
  const int pa = a.id, pb = b.id;
  return a.tape->node(
      std::move(out), {pa, pb},
      [pa, pb, kind](Tape& t, int, const Tensor& g) {
        const Tensor& va = t.value(pa);
        const Tensor& vb = t.value(pb);
        Tensor ga = Tensor::zeros(g.shape);
        Tensor gb = Tensor::zeros(g.shape);
        for (std::int64_t i = 0; i < g.numel(); ++i) {
          const double x = kind == Bin::ScalarLeft ? va.data[0] : va.at(i);
          const double y = kind == Bin::ScalarRight ? vb.data[0] : vb.at(i);
          (x >= y ? ga : gb).at(i) = g.at(i);
        }
        accum_bin(t, pa, kind, true, ga);
        accum_bin(t, pb, kind, false, gb);
      },
      "vmax");
}

Var sum(Var a) {
  require_valid(a, "sum");
  Tensor out = Tensor::scalar(
      det_sum_serial(a.value().data.data(), a.value().numel()));
  const int pa = a.id;
  return a.tape->node(
      std::move(out), {pa},
      [pa](Tape& t, int, const Tensor& g) {
        t.accumulate(pa, Tensor::full(t.value(pa).shape, g.data[0]));
      },
      "sum");
}

Var mean(Var a) {
  require_valid(a, "mean");
  const std::int64_t n = a.value().numel();
  if (n == 0) throw ShapeMismatchError("mean of an empty tensor");
  Tensor out = Tensor::scalar(
      det_sum_serial(a.value().data.data(), n) / static_cast<double>(n));
  const int pa = a.id;
  return a.tape->node(
      std::move(out), {pa},
      [pa, n](Tape& t, int, const Tensor& g) {
        t.accumulate(
            pa, Tensor::full(t.value(pa).shape,
                             g.data[0] / static_cast<double>(n)));
      },
      "mean");
}

Var matmul(Var a, Var b) {
  require_same_tape(a, b, "matmul");
  const Tensor& va = a.value();
  const Tensor& vb = b.value();
  if (va.rank() != 2 || vb.rank() != 2 || va.shape[1] != vb.shape[0])
    throw ShapeMismatchError("matmul: " + Tensor::shape_str(va.shape) +
                             " x " + Tensor::shape_str(vb.shape));
  const std::int64_t m = va.shape[0], k = va.shape[1], n = vb.shape[1];
  Tensor out = Tensor::zeros({m, n});
  matmul_nn(out.data.data(), va.data.data(), vb.data.data(), m, k, n);
  const int pa = a.id, pb = b.id;
  return a.tape->node(
      std::move(out), {pa, pb},
      [pa, pb, m, k, n](Tape& t, int, const Tensor& g) {
        const Tensor& A = t.value(pa);
        const Tensor& B = t.value(pb);
        Tensor ga = Tensor::zeros({m, k});
        Tensor gb = Tensor::zeros({k, n});
        matmul_nt(ga.data.data(), g.data.data(), B.data.data(), m, n, k);
        matmul_tn(gb.data.data(), A.data.data(), g.data.data(), k, m, n);
        t.accumulate(pa, ga);
        t.accumulate(pb, gb);
      },
      "matmul");
}

Var transpose(Var a) {
  require_valid(a, "transpose");
  const Tensor& va = a.value();
  if (va.rank() != 2)
    throw ShapeMismatchError("transpose: rank-2 tensor required");
  const std::int64_t r = va.shape[0], c = va.shape[1];
  Tensor out = Tensor::zeros({c, r});
  for (std::int64_t i = 0; i < r; ++i)
    for (std::int64_t j = 0; j < c; ++j) out.at(j, i) = va.at(i, j);
  const int pa = a.id;
  return a.tape->node(
      std::move(out), {pa},
      [pa, r, c](Tape& t, int, const Tensor& g) {
        Tensor ga = Tensor::zeros({r, c});
        for (std::int64_t i = 0; i < c; ++i)
          for (std::int64_t j = 0; j < r; ++j) ga.at(j, i) = g.at(i, j);
        t.accumulate(pa, ga);
      },
      "transpose");
}

Var reshape(Var a, std::vector<std::int64_t> shape) {
  require_valid(a, "reshape");
  if (Tensor::numel_of(shape) != a.value().numel())
    throw ShapeMismatchError("reshape: element count mismatch");
  Tensor out(shape, a.value().data);
  const int pa = a.id;
  return a.tape->node(
      std::move(out), {pa},
      [pa](Tape& t, int, const Tensor& g) {
        t.accumulate(pa, Tensor(t.value(pa).shape, g.data));
      },
      "reshape");
}

Var concat(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeMismatchError("concat: no inputs");
  require_valid(parts[0], "concat");
  Tape* tape = parts[0].tape;
  const int rank = parts[0].value().rank();
  if (rank < 1 || rank > 2)
    throw ShapeMismatchError("concat: rank-1 or rank-2 tensors required");
  const std::int64_t c = parts[0].value().cols();
  std::int64_t rows = 0;
  std::vector<int> ids;
  for (const Var& p : parts) {
    require_valid(p, "concat");
    if (p.tape != tape)
      throw ShapeMismatchError("concat: Vars from different tapes");
    if (p.value().rank() != rank || p.value().cols() != c)
      throw ShapeMismatchError("concat: incompatible part shapes");
    rows += p.value().rows();
    ids.push_back(p.id);
  }
  Tensor out = rank == 1 ? Tensor::zeros({rows * c})
                         : Tensor::zeros({rows, c});
  std::int64_t off = 0;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    for (std::int64_t i = 0; i < v.numel(); ++i) out.at(off + i) = v.at(i);
    off += v.numel();
  }
  return tape->node(
      std::move(out), ids,
      [ids](Tape& t, int, const Tensor& g) {
        std::int64_t off = 0;
        for (int id : ids) {
          const Tensor& v = t.value(id);
          Tensor gi = Tensor::zeros(v.shape);
          for (std::int64_t i = 0; i < v.numel(); ++i) gi.at(i) = g.at(off + i);
          off += v.numel();
          t.accumulate(id, gi);
        }
      },
      "concat");
}

Var slice(Var a, std::vector<std::int64_t> offsets,
          std::vector<std::int64_t> sizes) {
  require_valid(a, "slice");
  const Tensor& va = a.value();
  if (offsets.size() != sizes.size() ||
      static_cast<int>(offsets.size()) != va.rank())
    throw ShapeMismatchError("slice: offsets/sizes must match tensor rank");
  for (std::size_t d = 0; d < offsets.size(); ++d)
    if (offsets[d] < 0 || sizes[d] < 0 ||
        offsets[d] + sizes[d] > va.shape[d])
      throw ShapeMismatchError("slice: window out of bounds");
  Tensor out = Tensor::zeros(sizes);
  if (va.rank() == 1) {
    for (std::int64_t i = 0; i < sizes[0]; ++i) out.at(i) = va.at(offsets[0] + i);
  } else {
    for (std::int64_t i = 0; i < sizes[0]; ++i)
      for (std::int64_t j = 0; j < sizes[1]; ++j)
        out.at(i, j) = va.at(offsets[0] + i, offsets[1] + j);
  }
  const int pa = a.id;
  return a.tape->node(
      std::move(out), {pa},
      [pa, offsets, sizes](Tape& t, int, const Tensor& g) {
        Tensor ga = Tensor::zeros(t.value(pa).shape);
        if (ga.rank() == 1) {
          for (std::int64_t i = 0; i < sizes[0]; ++i)
            ga.at(offsets[0] + i) = g.at(i);
        } else {
          for (std::int64_t i = 0; i < sizes[0]; ++i)
            for (std::int64_t j = 0; j < sizes[1]; ++j)
              ga.at(offsets[0] + i, offsets[1] + j) = g.at(i, j);
        }
        t.accumulate(pa, ga);
      },
      "slice");
}

Var gather_rows(Var a, std::vector<std::int64_t> indices) {
  require_valid(a, "gather_rows");
  const Tensor& va = a.value();
  if (va.rank() != 2)
    throw ShapeMismatchError("gather_rows: rank-2 tensor required");
  const std::int64_t c = va.shape[1];
  for (std::int64_t idx : indices)
    if (idx < 0 || idx >= va.shape[0])
      throw ShapeMismatchError("gather_rows: index out of range");
  Tensor out = Tensor::zeros({static_cast<std::int64_t>(indices.size()), c});
  for (std::size_t i = 0; i < indices.size(); ++i)
    for (std::int64_t j = 0; j < c; ++j)
      out.at(static_cast<std::int64_t>(i), j) = va.at(indices[i], j);
  const int pa = a.id;
  return a.tape->node(
      std::move(out), {pa},
      [pa, indices, c](Tape& t, int, const Tensor& g) {
        Tensor ga = Tensor::zeros(t.value(pa).shape);
        for (std::size_t i = 0; i < indices.size(); ++i)
          for (std::int64_t j = 0; j < c; ++j)
            ga.at(indices[i], j) += g.at(static_cast<std::int64_t>(i), j);
        t.accumulate(pa, ga);
      },
      "gather_rows");
}

Var add_rows(Var mat, Var row) {
  require_same_tape(mat, row, "add_rows");
  const Tensor& vm = mat.value();
  const Tensor& vr = row.value();
  if (vm.rank() != 2 || vr.rank() != 1 || vr.shape[0] != vm.shape[1])
    throw ShapeMismatchError("add_rows: " + Tensor::shape_str(vm.shape) +
                             " + row " + Tensor::shape_str(vr.shape));
  const std::int64_t r = vm.shape[0], c = vm.shape[1];
  Tensor out = Tensor::zeros({r, c});
  for (std::int64_t i = 0; i < r; ++i)
    for (std::int64_t j = 0; j < c; ++j) out.at(i, j) = vm.at(i, j) + vr.at(j);
  const int pm = mat.id, pr = row.id;
  return mat.tape->node(
      std::move(out), {pm, pr},
      [pm, pr, r, c](Tape& t, int, const Tensor& g) {
        t.accumulate(pm, g);
        Tensor gr = Tensor::zeros({c});
        for (std::int64_t i = 0; i < r; ++i)
          for (std::int64_t j = 0; j < c; ++j) gr.at(j) += g.at(i, j);
        t.accumulate(pr, gr);
      },
      "add_rows");
}

Var add(Var a, double b) { return add(a, a.tape->constant(Tensor::scalar(b))); }
Var sub(Var a, double b) { return sub(a, a.tape->constant(Tensor::scalar(b))); }
Var sub(double a, Var b) { return sub(b.tape->constant(Tensor::scalar(a)), b); }
Var mul(Var a, double b) { return mul(a, a.tape->constant(Tensor::scalar(b))); }
Var div(Var a, double b) { return div(a, a.tape->constant(Tensor::scalar(b))); }
Var div(double a, Var b) { return div(b.tape->constant(Tensor::scalar(a)), b); }

}  // namespace dexfit
