#include "dexfit/fdcheck.hpp"

#include <algorithm>
#include <cmath>

#include "dexfit/diffgeom.hpp"
#include "dexfit/rotations.hpp"

namespace dexfit {

namespace {

using Rng = std::mt19937_64;

double runif(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

Tensor rand_tensor(Rng& rng, std::vector<std::int64_t> shape, double lo,
                   double hi) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data) v = runif(rng, lo, hi);
  return t;
}

/// Entries with magnitude in [lo, hi] and random sign.
Tensor rand_signed(Rng& rng, std::vector<std::int64_t> shape, double lo,
                   double hi) {
  Tensor t = Tensor::zeros(std::move(shape));
  for (double& v : t.data)
    v = runif(rng, lo, hi) * (runif(rng, -1, 1) < 0 ? -1.0 : 1.0);
  return t;
}

Tensor rand_rotation(Rng& rng, double min_angle, double max_angle) {
  Vec3 axis = {runif(rng, -1, 1), runif(rng, -1, 1), runif(rng, -1, 1)};
  double n = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] +
                       axis[2] * axis[2]);
  if (n < 1e-6) {
    axis = {1, 0, 0};
    n = 1;
  }
  const double ang = runif(rng, min_angle, max_angle);
  const Mat3 R = aa_to_matrix(
      {axis[0] / n * ang, axis[1] / n * ang, axis[2] / n * ang});
  return Tensor({3, 3}, std::vector<double>(R.begin(), R.end()));
}

double eval_contracted(const GraphFn& fn, const std::vector<Tensor>& inputs,
                       const Tensor& cotangent) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& t : inputs) vars.push_back(tape.input(t));
  const Var y = fn(tape, vars);
  return sum(mul(y, tape.constant(cotangent))).value().scalar_value();
}

struct FdCase {
  GraphFn fn;
  std::vector<Tensor> inputs;
};

/// make(rng, sample_index) -> case; max_rel_err aggregated over all samples.
FdResult run_samples(const std::string& name, int n, Rng& rng,
                     const std::function<FdCase(Rng&, int)>& make, double step,
                     double tol, double floor) {
  FdResult agg{name, 0.0, tol, n, false};
  for (int s = 0; s < n; ++s) {
    FdCase c = make(rng, s);
    FdResult one = fd_check(name, c.fn, c.inputs, rng, step, tol, floor);
    agg.max_rel_err = std::max(agg.max_rel_err, one.max_rel_err);
  }
  agg.pass = agg.max_rel_err < tol;
  return agg;
}

}  // namespace

FdResult fd_check(const std::string& name, const GraphFn& fn,
                  const std::vector<Tensor>& inputs, std::mt19937_64& rng,
                  double step, double tol, double floor) {
  Tape tape;
  std::vector<Var> vars;
  vars.reserve(inputs.size());
  for (const Tensor& t : inputs) vars.push_back(tape.input(t));
  const Var y = fn(tape, vars);
  Tensor cot = rand_tensor(rng, y.value().shape, -1.0, 1.0);
  const Var loss = sum(mul(y, tape.constant(cot)));
  const std::vector<Tensor> grads = tape.gradient(loss, vars);

  FdResult res{name, 0.0, tol, 1, false};
  std::vector<Tensor> work = inputs;
  for (std::size_t i = 0; i < work.size(); ++i) {
    for (std::size_t j = 0; j < work[i].data.size(); ++j) {
      const double orig = work[i].data[j];
      work[i].data[j] = orig + step;
      const double fp = eval_contracted(fn, work, cot);
      work[i].data[j] = orig - step;
      const double fm = eval_contracted(fn, work, cot);
      work[i].data[j] = orig;
      const double fd = (fp - fm) / (2.0 * step);
      const double an = grads[i].data[j];
      const double denom = std::max({floor, std::abs(fd), std::abs(an)});
      res.max_rel_err = std::max(res.max_rel_err, std::abs(fd - an) / denom);
    }
  }
  res.pass = res.max_rel_err < tol;
  return res;
}

std::vector<FdResult> run_primitive_fd_suite(std::uint64_t seed,
                                             int samples_per_op) {
  Rng rng(seed);
  const double step = 1e-5, tol = 1e-5, floor = 1e-2;
  std::vector<FdResult> out;
  auto run = [&](const std::string& name,
                 const std::function<FdCase(Rng&, int)>& make) {
    out.push_back(run_samples(name, samples_per_op, rng, make, step, tol,
                              floor));
  };

  // Binary elementwise ops cycle through same-shape, scalar-left and
  // scalar-right operand layouts.
  auto binary = [&](Var (*op)(Var, Var), double lo, double hi, bool mag) {
    return [op, lo, hi, mag](Rng& rng, int s) {
      auto draw = [&](std::vector<std::int64_t> shape) {
        return mag ? rand_signed(rng, std::move(shape), lo, hi)
                   : rand_tensor(rng, std::move(shape), lo, hi);
      };
      FdCase c;
      if (s % 3 == 1)
        c.inputs = {draw({}), draw({2, 3})};
      else if (s % 3 == 2)
        c.inputs = {draw({2, 3}), draw({})};
      else
        c.inputs = {draw({2, 3}), draw({2, 3})};
      c.fn = [op](Tape&, const std::vector<Var>& v) { return op(v[0], v[1]); };
      return c;
    };
  };
  run("add", binary(&add, -2, 2, false));
  run("sub", binary(&sub, -2, 2, false));
  run("mul", binary(&mul, -2, 2, false));
  run("div", binary(&div, 0.3, 2, true));

  auto unary = [&](Var (*op)(Var), double lo, double hi, bool mag) {
    return [op, lo, hi, mag](Rng& rng, int) {
      FdCase c;
      c.inputs = {mag ? rand_signed(rng, {2, 3}, lo, hi)
                      : rand_tensor(rng, {2, 3}, lo, hi)};
      c.fn = [op](Tape&, const std::vector<Var>& v) { return op(v[0]); };
      return c;
    };
  };
  run("neg", unary(&neg, -2, 2, false));
  run("exp", unary(&exp, -2, 2, false));
  run("log", unary(&log, 0.1, 3, false));
  run("sqrt", unary(&sqrt, 0.1, 4, false));
  run("square", unary(&square, -2, 2, false));
  run("sin", unary(&sin, -3, 3, false));
  run("cos", unary(&cos, -3, 3, false));
  run("asin", unary(&asin, -0.9, 0.9, false));
  run("hinge", unary(&hinge, 0.05, 2, true));
  run("sum", unary(&sum, -2, 2, false));
  run("mean", unary(&mean, -2, 2, false));

  run("atan2", [](Rng& rng, int) {
    Tensor y = Tensor::zeros({2, 3}), x = Tensor::zeros({2, 3});
    for (std::size_t i = 0; i < y.data.size(); ++i) {
      const double phi = runif(rng, -3.1, 3.1);
      const double r = runif(rng, 0.3, 2.0);
      y.data[i] = r * std::sin(phi);
      x.data[i] = r * std::cos(phi);
    }
    FdCase c;
    c.inputs = {y, x};
    c.fn = [](Tape&, const std::vector<Var>& v) { return atan2(v[0], v[1]); };
    return c;
  });

  run("vmax", [](Rng& rng, int) {
    Tensor a = rand_tensor(rng, {2, 3}, -2, 2);
    Tensor b = a;
    for (double& v : b.data)
      v += runif(rng, 0.05, 1.0) * (runif(rng, -1, 1) < 0 ? -1.0 : 1.0);
    FdCase c;
    c.inputs = {a, b};
    c.fn = [](Tape&, const std::vector<Var>& v) { return vmax(v[0], v[1]); };
    return c;
  });

  run("matmul", [](Rng& rng, int) {
    FdCase c;
    c.inputs = {rand_tensor(rng, {2, 3}, -2, 2),
                rand_tensor(rng, {3, 4}, -2, 2)};
    c.fn = [](Tape&, const std::vector<Var>& v) { return matmul(v[0], v[1]); };
    return c;
  });

  run("transpose", [](Rng& rng, int) {
    FdCase c;
    c.inputs = {rand_tensor(rng, {3, 4}, -2, 2)};
    c.fn = [](Tape&, const std::vector<Var>& v) { return transpose(v[0]); };
    return c;
  });

  run("reshape", [](Rng& rng, int) {
    FdCase c;
    c.inputs = {rand_tensor(rng, {2, 6}, -2, 2)};
    c.fn = [](Tape&, const std::vector<Var>& v) {
      return reshape(v[0], {3, 4});
    };
    return c;
  });

  run("concat", [](Rng& rng, int s) {
    FdCase c;
    if (s % 2 == 0) {
      c.inputs = {rand_tensor(rng, {2, 3}, -2, 2),
                  rand_tensor(rng, {1, 3}, -2, 2),
                  rand_tensor(rng, {3, 3}, -2, 2)};
    } else {
      c.inputs = {rand_tensor(rng, {3}, -2, 2), rand_tensor(rng, {2}, -2, 2)};
    }
    c.fn = [](Tape&, const std::vector<Var>& v) {
      return concat({v[0], v[1], v.size() > 2 ? v[2] : v[0]});
    };
    return c;
  });

  run("slice", [](Rng& rng, int s) {
    FdCase c;
    if (s % 2 == 0) {
      c.inputs = {rand_tensor(rng, {4, 5}, -2, 2)};
      c.fn = [](Tape&, const std::vector<Var>& v) {
        return slice(v[0], {1, 2}, {2, 3});
      };
    } else {
      c.inputs = {rand_tensor(rng, {7}, -2, 2)};
      c.fn = [](Tape&, const std::vector<Var>& v) {
        return slice(v[0], {2}, {4});
      };
    }
    return c;
  });

  run("gather_rows", [](Rng& rng, int) {
    std::vector<std::int64_t> idx(6);
    for (auto& i : idx)
      i = static_cast<std::int64_t>(runif(rng, 0, 4.9999));
    FdCase c;
    c.inputs = {rand_tensor(rng, {5, 3}, -2, 2)};
    c.fn = [idx](Tape&, const std::vector<Var>& v) {
      return gather_rows(v[0], idx);
    };
    return c;
  });

  run("add_rows", [](Rng& rng, int) {
    FdCase c;
    c.inputs = {rand_tensor(rng, {4, 3}, -2, 2),
                rand_tensor(rng, {3}, -2, 2)};
    c.fn = [](Tape&, const std::vector<Var>& v) {
      return add_rows(v[0], v[1]);
    };
    return c;
  });

  run("rodrigues", [](Rng& rng, int) {
    Vec3 ax = {runif(rng, -1, 1), runif(rng, -1, 1), runif(rng, -1, 1)};
    double n = std::sqrt(ax[0] * ax[0] + ax[1] * ax[1] + ax[2] * ax[2]);
    if (n < 1e-6) {
      ax = {0, 1, 0};
      n = 1;
    }
    const double ang = runif(rng, 0.05, 3.0);
    FdCase c;
    c.inputs = {Tensor(
        {3}, {ax[0] / n * ang, ax[1] / n * ang, ax[2] / n * ang})};
    c.fn = [](Tape&, const std::vector<Var>& v) { return rodrigues(v[0]); };
    return c;
  });

  // Projection backward is the exact polar adjoint, valid for any full-rank
  // input; cycle orthogonal, perturbed, and rescaled base points.
  run("project_rotation", [](Rng& rng, int s) {
    FdCase c;
    Tensor m = rand_rotation(rng, 0.0, 3.0);
    if (s % 3 == 1)
      for (double& v : m.data) v += runif(rng, -0.15, 0.15);
    if (s % 3 == 2) {
      const double k = runif(rng, 0.5, 1.8);
      for (double& v : m.data) v = k * v + runif(rng, -0.05, 0.05);
    }
    c.inputs = {std::move(m)};
    c.fn = [](Tape&, const std::vector<Var>& v) {
      return project_rotation(v[0]);
    };
    return c;
  });

  // rotation_log's backward is the manifold-tangent adjoint; it is exercised
  // through compositions whose inputs reach it on the manifold.
  run("rotation_log(rodrigues)", [](Rng& rng, int) {
    Vec3 ax = {runif(rng, -1, 1), runif(rng, -1, 1), runif(rng, -1, 1)};
    double n = std::sqrt(ax[0] * ax[0] + ax[1] * ax[1] + ax[2] * ax[2]);
    if (n < 1e-6) {
      ax = {0, 0, 1};
      n = 1;
    }
    const double ang = runif(rng, 0.1, 2.9);
    FdCase c;
    c.inputs = {Tensor(
        {3}, {ax[0] / n * ang, ax[1] / n * ang, ax[2] / n * ang})};
    c.fn = [](Tape&, const std::vector<Var>& v) {
      return rotation_log(rodrigues(v[0]));
    };
    return c;
  });

  run("rotation_log(project)", [](Rng& rng, int) {
    FdCase c;
    c.inputs = {rand_rotation(rng, 0.1, 2.9)};
    c.fn = [](Tape&, const std::vector<Var>& v) {
      return rotation_log(project_rotation(v[0]));
    };
    return c;
  });

  run("euler_angles", [](Rng& rng, int s) {
    static const EulerOrder orders[] = {EulerOrder::XYZ, EulerOrder::XZY,
                                        EulerOrder::YXZ, EulerOrder::YZX,
                                        EulerOrder::ZXY, EulerOrder::ZYX};
    const EulerOrder order = orders[s % 6];
    const Mat3 R = euler_to_matrix(runif(rng, -3, 3), runif(rng, -1.3, 1.3),
                                   runif(rng, -3, 3), order);
    FdCase c;
    c.inputs = {Tensor({3, 3}, std::vector<double>(R.begin(), R.end()))};
    c.fn = [order](Tape&, const std::vector<Var>& v) {
      return euler_angles(v[0], order);
    };
    return c;
  });

  run("matvec3", [](Rng& rng, int) {
    FdCase c;
    c.inputs = {rand_tensor(rng, {3, 3}, -2, 2),
                rand_tensor(rng, {3}, -2, 2)};
    c.fn = [](Tape&, const std::vector<Var>& v) {
      return matvec3(v[0], v[1]);
    };
    return c;
  });

  run("dot3", [](Rng& rng, int) {
    FdCase c;
    c.inputs = {rand_tensor(rng, {3}, -2, 2), rand_tensor(rng, {3}, -2, 2)};
    c.fn = [](Tape&, const std::vector<Var>& v) { return dot3(v[0], v[1]); };
    return c;
  });

  run("norm3", [](Rng& rng, int) {
    Tensor a = rand_tensor(rng, {3}, -1, 1);
    double n = std::sqrt(a.data[0] * a.data[0] + a.data[1] * a.data[1] +
                         a.data[2] * a.data[2]);
    if (n < 0.3) {
      a.data[0] += 0.5;
      n = 1;
    }
    FdCase c;
    c.inputs = {a};
    c.fn = [](Tape&, const std::vector<Var>& v) { return norm3(v[0]); };
    return c;
  });

  return out;
}

}  // namespace dexfit
