#include "dexfit/lbfgs.hpp"

#include <algorithm>
#include <cmath>
#include <deque>

namespace dexfit {

namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double max_norm(const std::vector<double>& a) {
  double m = 0.0;
  for (double v : a) m = std::max(m, std::abs(v));
  return m;
}

struct Pair {
  std::vector<double> s, y;
  double rho;
};

/// d = -H g via the standard two-loop recursion; H0 = gamma I.
std::vector<double> two_loop(const std::deque<Pair>& hist, double gamma,
                             const std::vector<double>& g) {
  std::vector<double> q = g;
  std::vector<double> alpha(hist.size());
  for (std::size_t i = hist.size(); i-- > 0;) {
    alpha[i] = hist[i].rho * dot(hist[i].s, q);
    for (std::size_t j = 0; j < q.size(); ++j)
      q[j] -= alpha[i] * hist[i].y[j];
  }
  for (double& v : q) v *= gamma;
  for (std::size_t i = 0; i < hist.size(); ++i) {
    const double beta = hist[i].rho * dot(hist[i].y, q);
    for (std::size_t j = 0; j < q.size(); ++j)
      q[j] += (alpha[i] - beta) * hist[i].s[j];
  }
  for (double& v : q) v = -v;
  return q;
}

struct LinePoint {
  double a, phi, dphi;
};

/// Cubic Hermite minimizer on [lo.a, hi.a]; bisects when the formula is
/// ill-conditioned or the step leaves the safeguarded interior.
double interp_step(const LinePoint& lo, const LinePoint& hi) {
  const double d1 =
      lo.dphi + hi.dphi - 3.0 * (lo.phi - hi.phi) / (lo.a - hi.a);
  const double disc = d1 * d1 - lo.dphi * hi.dphi;
  const double mid = 0.5 * (lo.a + hi.a);
  if (!(disc >= 0.0)) return mid;
  const double sgn = hi.a >= lo.a ? 1.0 : -1.0;
  const double d2 = sgn * std::sqrt(disc);
  const double denom = hi.dphi - lo.dphi + 2.0 * d2;
  if (denom == 0.0) return mid;
  double a = hi.a - (hi.a - lo.a) * (hi.dphi + d2 - d1) / denom;
  const double w = std::abs(hi.a - lo.a);
  const double amin = std::min(lo.a, hi.a) + 0.05 * w;
  const double amax = std::max(lo.a, hi.a) - 0.05 * w;
  if (!std::isfinite(a) || a < amin || a > amax) return mid;
  return a;
}

struct LineSearchResult {
  bool ok = false;
  double a = 0.0;
  double f = 0.0;
  std::vector<double> x, g;
  int evals = 0;
};

}  // namespace

LbfgsResult lbfgs_minimize(const ObjectiveFn& fg, std::vector<double> x0,
                           const LbfgsSettings& settings) {
  const std::size_t n = x0.size();
  LbfgsResult res;
  res.x = std::move(x0);
  res.grad.assign(n, 0.0);
  res.objective = fg(res.x, res.grad);
  res.trace.push_back(res.objective);
  if (max_norm(res.grad) < settings.grad_tolerance) {
    res.converged = true;
    return res;
  }

  const double c1 = settings.wolfe_c1, c2 = settings.wolfe_c2;
  std::deque<Pair> hist;
  double gamma = 1.0;

  // Strong-Wolfe search along d from the current iterate (bracket + zoom).
  auto line_search = [&](const std::vector<double>& x0v, double f0,
                         const std::vector<double>& g0,
                         const std::vector<double>& d) {
    LineSearchResult out;
    const double dphi0 = dot(g0, d);
    if (dphi0 >= 0.0) return out;

    std::vector<double> xt(n), gt(n);
    auto eval = [&](double a) {
      for (std::size_t i = 0; i < n; ++i) xt[i] = x0v[i] + a * d[i];
      const double f = fg(xt, gt);
      ++out.evals;
      return LinePoint{a, f, dot(gt, d)};
    };
    auto accept = [&](const LinePoint& p) {
      out.ok = true;
      out.a = p.a;
      out.f = p.phi;
      out.x = xt;
      out.g = gt;
    };

    const LinePoint start{0.0, f0, dphi0};
    auto wolfe = [&](const LinePoint& p) {
      return p.phi <= f0 + c1 * p.a * dphi0 && std::abs(p.dphi) <= -c2 * dphi0;
    };

    auto zoom = [&](LinePoint lo, LinePoint hi) {
      for (int it = 0; it < settings.max_line_search; ++it) {
        if (std::abs(hi.a - lo.a) < 1e-16 * std::max(1.0, std::abs(lo.a))) {
          if (wolfe(lo) && lo.a > 0.0) {
            eval(lo.a);
            accept(lo);
          }
          return;
        }
        LinePoint p = eval(interp_step(lo, hi));
        if (p.phi > f0 + c1 * p.a * dphi0 || p.phi >= lo.phi) {
          hi = p;
          continue;
        }
        if (std::abs(p.dphi) <= -c2 * dphi0) {
          accept(p);
          return;
        }
        if (p.dphi * (hi.a - lo.a) >= 0.0) hi = lo;
        lo = p;
      }
    };

    LinePoint prev = start;
    double a = 1.0;
    for (int it = 0; it < settings.max_line_search; ++it) {
      LinePoint p = eval(a);
      if (!std::isfinite(p.phi)) {
        zoom(prev, p);
        return out;
      }
      if (p.phi > f0 + c1 * p.a * dphi0 || (it > 0 && p.phi >= prev.phi)) {
        zoom(prev, p);
        return out;
      }
      if (std::abs(p.dphi) <= -c2 * dphi0) {
        accept(p);
        return out;
      }
      if (p.dphi >= 0.0) {
        zoom(p, prev);
        return out;
      }
      prev = p;
      a *= 2.0;
    }
    return out;
  };

  for (int iter = 0; iter < settings.max_iterations; ++iter) {
    std::vector<double> d = two_loop(hist, gamma, res.grad);
    if (dot(d, res.grad) >= 0.0) {
      // Stale curvature produced a non-descent direction; restart steepest.
      hist.clear();
      gamma = 1.0;
      d = res.grad;
      for (double& v : d) v = -v;
    }

    const LineSearchResult ls =
        line_search(res.x, res.objective, res.grad, d);
    if (!ls.ok) {
      res.line_search_failed = true;
      break;
    }

    Pair pr;
    pr.s.resize(n);
    pr.y.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      pr.s[i] = ls.x[i] - res.x[i];
      pr.y[i] = ls.g[i] - res.grad[i];
    }
    const double sy = dot(pr.s, pr.y);
    const double yy = dot(pr.y, pr.y);
    if (sy > 1e-12 * std::sqrt(dot(pr.s, pr.s)) * std::sqrt(yy) && yy > 0.0) {
      pr.rho = 1.0 / sy;
      hist.push_back(std::move(pr));
      if (static_cast<int>(hist.size()) > settings.history) hist.pop_front();
      gamma = sy / yy;
    }

    res.x = ls.x;
    res.grad = ls.g;
    res.objective = ls.f;
    res.trace.push_back(ls.f);
    res.iterations = iter + 1;
    if (max_norm(res.grad) < settings.grad_tolerance) {
      res.converged = true;
      break;
    }
  }
  return res;
}

}  // namespace dexfit
