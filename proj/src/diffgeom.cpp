#include "dexfit/diffgeom.hpp"

#include <cmath>

namespace dexfit {

namespace {

Mat3 mat3_of(const Tensor& t) {
  Mat3 m;
  for (int i = 0; i < 9; ++i) m[static_cast<std::size_t>(i)] = t.at(i);
  return m;
}

Vec3 vec3_of(const Tensor& t) { return {t.at(0), t.at(1), t.at(2)}; }

Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2],
          a[0] * b[1] - a[1] * b[0]};
}

double dot(const Vec3& a, const Vec3& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

/// (G[2,1]-G[1,2], G[0,2]-G[2,0], G[1,0]-G[0,1]); the adjoint of w -> [w]x.
Vec3 vee_adj(const Mat3& G) {
  return {G[7] - G[5], G[2] - G[6], G[3] - G[1]};
}

void require_shape(const Var& v, std::vector<std::int64_t> shape,
                   const char* op) {
  if (!v.valid())
    throw ShapeMismatchError(std::string(op) + ": invalid Var handle");
  if (v.value().shape != shape)
    throw ShapeMismatchError(std::string(op) + ": expected " +
                             Tensor::shape_str(shape) + ", got " +
                             Tensor::shape_str(v.value().shape));
}

}  // namespace

Var rodrigues(Var aa) {
  require_shape(aa, {3}, "rodrigues");
  const Mat3 R = aa_to_matrix(vec3_of(aa.value()));
  Tensor out({3, 3}, std::vector<double>(R.begin(), R.end()));
  const int pa = aa.id;
  return aa.tape->node(
      std::move(out), {pa},
      [pa](Tape& t, int self, const Tensor& gout) {
        const Vec3 v = vec3_of(t.value(pa));
        const Mat3 R = mat3_of(t.value(self));
        const Mat3 Gm = mat3_of(gout);
        // G = gout * R^T, reduced to the two inner products used below.
        Mat3 G;
        for (int r = 0; r < 3; ++r)
          for (int c = 0; c < 3; ++c) {
            double s = 0;
            for (int l = 0; l < 3; ++l)
              s += Gm[static_cast<std::size_t>(3 * r + l)] *
                   R[static_cast<std::size_t>(3 * c + l)];
            G[static_cast<std::size_t>(3 * r + c)] = s;
          }
        const Vec3 g = vee_adj(G);
        const double th2 = dot(v, v);
        Tensor ga = Tensor::zeros({3});
        if (th2 < 1e-16) {
          const Vec3 gr = vee_adj(Gm);
          for (int i = 0; i < 3; ++i) ga.at(i) = gr[static_cast<std::size_t>(i)];
        } else {
          const double vg = dot(v, g);
          for (int i = 0; i < 3; ++i) {
            // u_i = v x (e_i - R e_i); grad_i = (v_i (v.g) + u_i.g) / |v|^2.
            Vec3 col = {R[static_cast<std::size_t>(i)],
                        R[static_cast<std::size_t>(3 + i)],
                        R[static_cast<std::size_t>(6 + i)]};
            Vec3 e = {0, 0, 0};
            e[static_cast<std::size_t>(i)] = 1;
            const Vec3 u = cross(v, {e[0] - col[0], e[1] - col[1], e[2] - col[2]});
            ga.at(i) = (v[static_cast<std::size_t>(i)] * vg + dot(u, g)) / th2;
          }
        }
        t.accumulate(pa, ga);
      },
      "rodrigues");
}

Var rotation_log(Var R) {
  require_shape(R, {3, 3}, "rotation_log");
  const Vec3 aa = matrix_to_aa(mat3_of(R.value()));
  Tensor out({3}, {aa[0], aa[1], aa[2]});
  const int pr = R.id;
  return R.tape->node(
      std::move(out), {pr},
      [pr](Tape& t, int self, const Tensor& gout) {
        const Mat3 R = mat3_of(t.value(pr));
        const Vec3 a = vec3_of(t.value(self));
        const double th = std::sqrt(dot(a, a));
        // omega_bar = Jr^{-T}(a) * a_bar with
        // Jr^{-1} = I + [a]x/2 + k2(th) [a]x^2.
        double k2;
        if (th < 1e-4) {
          k2 = 1.0 / 12.0 + th * th / 720.0;
        } else {
          k2 = 1.0 / (th * th) -
               (1.0 + std::cos(th)) / (2.0 * th * std::sin(th));
        }
        const Vec3 ab = vec3_of(gout);
        const Vec3 axab = cross(a, ab);
        const Vec3 axaxab = cross(a, axab);
        Vec3 w;
        for (int i = 0; i < 3; ++i)
          w[static_cast<std::size_t>(i)] =
              ab[static_cast<std::size_t>(i)] -
              0.5 * axab[static_cast<std::size_t>(i)] +
              k2 * axaxab[static_cast<std::size_t>(i)];
        // R_bar = R [w]x / 2.
        const Mat3 W = {0,     -w[2], w[1],  //
                        w[2],  0,     -w[0], //
                        -w[1], w[0],  0};
        Tensor gr = Tensor::zeros({3, 3});
        for (int r = 0; r < 3; ++r)
          for (int c = 0; c < 3; ++c) {
            double s = 0;
            for (int l = 0; l < 3; ++l)
              s += R[static_cast<std::size_t>(3 * r + l)] *
                   W[static_cast<std::size_t>(3 * l + c)];
            gr.at(r, c) = 0.5 * s;
          }
        t.accumulate(pr, gr);
      },
      "rotation_log");
}

namespace {

/// H = sym(U^T M), the polar stretch given the special polar factor U.
Mat3 polar_stretch(const Mat3& U, const Mat3& M) {
  Mat3 H;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) {
      double s = 0, st = 0;
      for (int l = 0; l < 3; ++l) {
        s += U[static_cast<std::size_t>(3 * l + r)] *
             M[static_cast<std::size_t>(3 * l + c)];
        st += U[static_cast<std::size_t>(3 * l + c)] *
              M[static_cast<std::size_t>(3 * l + r)];
      }
      H[static_cast<std::size_t>(3 * r + c)] = 0.5 * (s + st);
    }
  return H;
}

Mat3 polar_derivative_matrix(const Mat3& H) {
  const double trH = H[0] + H[4] + H[8];
  Mat3 G;
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      G[static_cast<std::size_t>(3 * r + c)] =
          (r == c ? trH : 0.0) - H[static_cast<std::size_t>(3 * r + c)];
  return G;
}

}  // namespace

Var project_rotation(Var M) {
  require_shape(M, {3, 3}, "project_rotation");
  const Mat3 raw = mat3_of(M.value());
  const Mat3 P = project_to_rotation(raw);
  // The special polar factor stops being differentiable when the two
  // smallest singular values can swap sign roles; det(tr(H) I - H) is the
  // product of their pairwise sums and detects that pinch.
  if (!(std::abs(det3(polar_derivative_matrix(polar_stretch(P, raw)))) >
        1e-9))
    throw DegenerateMatrixError(
        "project_rotation: input rank < 2 or reflection-degenerate");
  Tensor out({3, 3}, std::vector<double>(P.begin(), P.end()));
  const int pm = M.id;
  return M.tape->node(
      std::move(out), {pm},
      [pm](Tape& t, int self, const Tensor& gout) {
        const Mat3 U = mat3_of(t.value(self));
        const Mat3 Min = mat3_of(t.value(pm));
        const Mat3 Pb = mat3_of(gout);
        auto at = [](const Mat3& A, int r, int c) {
          return A[static_cast<std::size_t>(3 * r + c)];
        };
        // Polar stretch H = sym(U^T M); solve (tr(H) I - H) q =
        // vee_adj(U^T P_bar), then M_bar = U [q]x. Exact for any input
        // inside the guard, not just orthogonal ones.
        const Mat3 G = polar_derivative_matrix(polar_stretch(U, Min));
        Mat3 B;
        for (int r = 0; r < 3; ++r)
          for (int c = 0; c < 3; ++c) {
            double s = 0;
            for (int l = 0; l < 3; ++l) s += at(U, l, r) * at(Pb, l, c);
            B[static_cast<std::size_t>(3 * r + c)] = s;
          }
        const Vec3 b = {at(B, 2, 1) - at(B, 1, 2), at(B, 0, 2) - at(B, 2, 0),
                        at(B, 1, 0) - at(B, 0, 1)};
        const double dg = det3(G);
        if (!(std::abs(dg) > 1e-9))
          throw DegenerateMatrixError(
              "project_rotation: singular polar derivative");
        Mat3 adj;
        for (int r = 0; r < 3; ++r)
          for (int c = 0; c < 3; ++c) {
            const int r1 = (c + 1) % 3, r2 = (c + 2) % 3;
            const int c1 = (r + 1) % 3, c2 = (r + 2) % 3;
            adj[static_cast<std::size_t>(3 * r + c)] =
                at(G, r1, c1) * at(G, r2, c2) - at(G, r1, c2) * at(G, r2, c1);
          }
        Vec3 q = {0, 0, 0};
        for (int r = 0; r < 3; ++r)
          for (int c = 0; c < 3; ++c)
            q[static_cast<std::size_t>(r)] +=
                adj[static_cast<std::size_t>(3 * r + c)] *
                b[static_cast<std::size_t>(c)] / dg;
        const Mat3 Qx = {0,     -q[2], q[1],  //
                         q[2],  0,     -q[0], //
                         -q[1], q[0],  0};
        Tensor gm = Tensor::zeros({3, 3});
        for (int r = 0; r < 3; ++r)
          for (int c = 0; c < 3; ++c) {
            double s = 0;
            for (int l = 0; l < 3; ++l)
              s += at(U, r, l) * at(Qx, l, c);
            gm.at(r, c) = s;
          }
        t.accumulate(pm, gm);
      },
      "project_rotation");
}

Var euler_angles(Var R, EulerOrder order) {
  require_shape(R, {3, 3}, "euler_angles");
  const EulerOrderInfo o = euler_order_info(order);
  auto elem = [&](int r, int c) {
    return reshape(slice(R, {r, c}, {1, 1}), {1});
  };
  Var sb = elem(o.i, o.k) * o.eps;
  Var b = asin(sb);
  Var a = atan2(elem(o.j, o.k) * -o.eps, elem(o.k, o.k));
  Var c = atan2(elem(o.i, o.j) * -o.eps, elem(o.i, o.i));
  return concat({a, b, c});
}

Var matvec3(Var R, Var v) {
  require_shape(R, {3, 3}, "matvec3");
  require_shape(v, {3}, "matvec3");
  return reshape(matmul(R, reshape(v, {3, 1})), {3});
}

Var dot3(Var a, Var b) { return sum(mul(a, b)); }

Var norm3(Var a) { return sqrt(sum(square(a))); }

DiffFk build_fk(Tape& tape, const SkeletonTemplate& tpl,
                const std::vector<Vec3>& rest_joints,
                const std::vector<Var>& rotations, Var root_trans) {
  const int K = tpl.joint_count();
  if (static_cast<int>(rotations.size()) != K)
    throw DimensionMismatchError("build_fk: rotation list size " +
                                 std::to_string(rotations.size()) + " vs " +
                                 std::to_string(K) + " joints");
  if (static_cast<int>(rest_joints.size()) != K)
    throw DimensionMismatchError("build_fk: rest joint count mismatch");

  DiffFk fk;
  fk.world_R.resize(static_cast<std::size_t>(K));
  fk.joints.resize(static_cast<std::size_t>(K));
  fk.skin_R.resize(static_cast<std::size_t>(K));
  fk.skin_t.resize(static_cast<std::size_t>(K));

  const Var ident = tape.constant(
      Tensor({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}));
  auto cvec = [&tape](const Vec3& v) {
    return tape.constant(Tensor({3}, {v[0], v[1], v[2]}));
  };

  for (int k = 0; k < K; ++k) {
    const std::size_t ks = static_cast<std::size_t>(k);
    const int p = tpl.parents[ks];
    const Var Rk = rotations[ks];
    if (p < 0) {
      fk.world_R[ks] = Rk.valid() ? Rk : ident;
      Var base = cvec(rest_joints[ks]);
      fk.joints[ks] = root_trans.valid() ? add(base, root_trans) : base;
    } else {
      const std::size_t ps = static_cast<std::size_t>(p);
      fk.world_R[ks] = Rk.valid() ? matmul(fk.world_R[ps], Rk)
                                  : fk.world_R[ps];
      const Vec3 off = {rest_joints[ks][0] - rest_joints[ps][0],
                        rest_joints[ks][1] - rest_joints[ps][1],
                        rest_joints[ks][2] - rest_joints[ps][2]};
      fk.joints[ks] = add(matvec3(fk.world_R[ps], cvec(off)), fk.joints[ps]);
    }
    fk.skin_R[ks] = fk.world_R[ks];
    fk.skin_t[ks] =
        sub(fk.joints[ks], matvec3(fk.world_R[ks], cvec(rest_joints[ks])));
  }
  return fk;
}

DiffVertices lbs_vertices(Tape& tape, const SkeletonTemplate& tpl,
                          const std::vector<double>& shaped_vertices,
                          const DiffFk& fk) {
  const int K = tpl.joint_count();
  const std::int64_t N = tpl.vertex_count;
  if (shaped_vertices.size() != static_cast<std::size_t>(N) * 3)
    throw DimensionMismatchError("lbs_vertices: vertex buffer size mismatch");

  std::vector<Var> rot_rows, trans_rows;
  rot_rows.reserve(static_cast<std::size_t>(K));
  trans_rows.reserve(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k) {
    rot_rows.push_back(reshape(fk.skin_R[static_cast<std::size_t>(k)], {1, 9}));
    trans_rows.push_back(
        reshape(fk.skin_t[static_cast<std::size_t>(k)], {1, 3}));
  }
  const Var Gr = concat(rot_rows);   // {K,9}
  const Var Gt = concat(trans_rows); // {K,3}

  std::vector<double> xs(static_cast<std::size_t>(N)),
      ys(static_cast<std::size_t>(N)), zs(static_cast<std::size_t>(N));
  for (std::int64_t v = 0; v < N; ++v) {
    xs[static_cast<std::size_t>(v)] = shaped_vertices[static_cast<std::size_t>(3 * v)];
    ys[static_cast<std::size_t>(v)] = shaped_vertices[static_cast<std::size_t>(3 * v + 1)];
    zs[static_cast<std::size_t>(v)] = shaped_vertices[static_cast<std::size_t>(3 * v + 2)];
  }
  const Var X = tape.constant(Tensor({N, 1}, std::move(xs)));
  const Var Y = tape.constant(Tensor({N, 1}, std::move(ys)));
  const Var Z = tape.constant(Tensor({N, 1}, std::move(zs)));

  DiffVertices out;
  out.count = N;
  for (int s = 0; s < 4; ++s) {
    std::vector<std::int64_t> idx(static_cast<std::size_t>(N));
    std::vector<double> w(static_cast<std::size_t>(N));
    bool any = false;
    for (std::int64_t v = 0; v < N; ++v) {
      const int j = tpl.weight_joints[static_cast<std::size_t>(4 * v + s)];
      idx[static_cast<std::size_t>(v)] = j < 0 ? 0 : j;
      w[static_cast<std::size_t>(v)] =
          j < 0 ? 0.0 : tpl.weight_values[static_cast<std::size_t>(4 * v + s)];
      any = any || j >= 0;
    }
    if (!any) continue;
    const Var Rs = gather_rows(Gr, idx);
    const Var Ts = gather_rows(Gt, idx);
    const Var W = tape.constant(Tensor({N, 1}, std::move(w)));
    auto col = [&](const Var& m, std::int64_t c) {
      return slice(m, {0, c}, {N, 1});
    };
    const Var px = add(add(add(mul(col(Rs, 0), X), mul(col(Rs, 1), Y)),
                           mul(col(Rs, 2), Z)),
                       col(Ts, 0));
    const Var py = add(add(add(mul(col(Rs, 3), X), mul(col(Rs, 4), Y)),
                           mul(col(Rs, 5), Z)),
                       col(Ts, 1));
    const Var pz = add(add(add(mul(col(Rs, 6), X), mul(col(Rs, 7), Y)),
                           mul(col(Rs, 8), Z)),
                       col(Ts, 2));
    out.x = out.x.valid() ? add(out.x, mul(W, px)) : mul(W, px);
    out.y = out.y.valid() ? add(out.y, mul(W, py)) : mul(W, py);
    out.z = out.z.valid() ? add(out.z, mul(W, pz)) : mul(W, pz);
  }
  return out;
}

DiffPixel project_point(Tape& tape, const Camera& cam, Var point) {
  require_shape(point, {3}, "project_point");
  const Var Rc = tape.constant(
      Tensor({3, 3}, std::vector<double>(cam.rotation.begin(),
                                         cam.rotation.end())));
  const Var tc = tape.constant(Tensor(
      {3}, {cam.translation[0], cam.translation[1], cam.translation[2]}));
  const Var pc = add(matvec3(Rc, point), tc);
  const Var Xc = slice(pc, {0}, {1});
  const Var Yc = slice(pc, {1}, {1});
  const Var Zc = slice(pc, {2}, {1});
  DiffPixel px;
  px.x = add(mul(div(Xc, Zc), cam.fx), cam.cx);
  px.y = add(mul(div(Yc, Zc), cam.fy), cam.cy);
  px.depth = Zc;
  return px;
}

}  // namespace dexfit
