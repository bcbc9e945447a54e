#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>

#include "dexfit/body_model.hpp"
#include "dexfit/diffgeom.hpp"
#include "dexfit/fdcheck.hpp"
#include "dexfit/rotations.hpp"
#include "dexfit/tape.hpp"

using namespace dexfit;

namespace {

PoseParams random_pose(const SkeletonTemplate& tpl, std::mt19937_64& rng,
                       double max_angle) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  PoseParams pose = PoseParams::zeros(tpl);
  for (int k = 0; k < tpl.joint_count(); ++k) {
    Vec3& aa = pose.joint_rotation(k, tpl);
    aa = {u(rng) * max_angle, u(rng) * max_angle, u(rng) * max_angle};
  }
  pose.root_trans = {0.1 * u(rng), 0.1 * u(rng), 0.1 * u(rng)};
  return pose;
}

/// Places the whole toy body in front of the image plane.
Camera test_camera() {
  Camera cam;
  cam.fx = cam.fy = 1000.0;
  cam.cx = cam.cy = 500.0;
  cam.translation = {0.0, -0.9, 3.0};
  return cam;
}

/// aa inputs -> rodrigues -> FK graph over the whole skeleton.
struct FkGraph {
  std::vector<Var> aa_vars;
  DiffFk fk;
};

FkGraph build_pose_graph(Tape& tape, const SkeletonTemplate& tpl,
                         const PoseParams& pose,
                         const std::vector<Vec3>& rest_joints) {
  FkGraph g;
  std::vector<Var> rots;
  for (int k = 0; k < tpl.joint_count(); ++k) {
    const Vec3& aa = pose.joint_rotation(k, tpl);
    Var v = tape.input(Tensor({3}, {aa[0], aa[1], aa[2]}));
    g.aa_vars.push_back(v);
    rots.push_back(rodrigues(v));
  }
  Var rt = tape.input(Tensor(
      {3}, {pose.root_trans[0], pose.root_trans[1], pose.root_trans[2]}));
  g.aa_vars.push_back(rt);
  g.fk = build_fk(tape, tpl, rest_joints, rots, rt);
  return g;
}

}  // namespace

TEST_CASE("sum of squares closed form") {
  Tape tape;
  Var x = tape.input(Tensor::vector({1, 2, 3}));
  Var f = sum(square(x));
  CHECK(f.value().scalar_value() == 14.0);
  auto g = tape.gradient(f, {x});
  CHECK(g[0].at(0) == 2.0);
  CHECK(g[0].at(1) == 4.0);
  CHECK(g[0].at(2) == 6.0);
}

TEST_CASE("linear map gradient is the transposed matrix") {
  Tape tape;
  Var A = tape.constant(Tensor::matrix(2, 3, {1, 2, -1, 0, 3, 2}));
  Var B = tape.constant(Tensor::matrix(3, 3, {2, 0, 1, -1, 1, 0, 0, 2, 1}));
  Var x = tape.input(Tensor::matrix(3, 1, {1, -2, 3}));
  Var y = matmul(A, matmul(B, x));
  Var c = tape.constant(Tensor::matrix(2, 1, {2, -1}));
  Var loss = sum(mul(y, c));
  auto g = tape.gradient(loss, {x});
  // AB = [[0, 0, 0], [-3, 7, 2]] against weights (2, -1) gives (AB)^T c.
  double AB[2][3] = {{0, 0, 0}, {0, 0, 0}};
  const double Ad[2][3] = {{1, 2, -1}, {0, 3, 2}};
  const double Bd[3][3] = {{2, 0, 1}, {-1, 1, 0}, {0, 2, 1}};
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j)
      for (int l = 0; l < 3; ++l) AB[i][j] += Ad[i][l] * Bd[l][j];
  for (int j = 0; j < 3; ++j)
    CHECK(g[0].at(j) == 2.0 * AB[0][j] - 1.0 * AB[1][j]);
}

TEST_CASE("hinge gradient matches the one-sided rule") {
  auto grad_at = [](double xv, double cv) {
    Tape tape;
    Var x = tape.input(Tensor::scalar(xv));
    Var f = square(hinge(sub(x, cv)));
    auto g = tape.gradient(f, {x});
    return g[0].scalar_value();
  };
  CHECK(grad_at(1.0, 2.0) == 0.0);
  CHECK(grad_at(2.0, 2.0) == 0.0);
  CHECK(grad_at(5.0, 2.0) == 2.0 * 3.0);
}

TEST_CASE("vmax ties route the gradient to the first input") {
  Tape tape;
  Var a = tape.input(Tensor::vector({1.0, -2.0, 0.5}));
  Var b = tape.input(Tensor::vector({1.0, 3.0, 0.25}));
  Var f = sum(vmax(a, b));
  auto g = tape.gradient(f, {a, b});
  CHECK(g[0].at(0) == 1.0);
  CHECK(g[1].at(0) == 0.0);
  CHECK(g[0].at(1) == 0.0);
  CHECK(g[1].at(1) == 1.0);
  CHECK(g[0].at(2) == 1.0);
  CHECK(g[1].at(2) == 0.0);
}

TEST_CASE("constant objective and unreached inputs give zero gradients") {
  Tape tape;
  Var x = tape.input(Tensor::vector({1, 2}));
  Var y = tape.input(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  Var f = sum(square(x));
  auto g = tape.gradient(f, {x, y});
  CHECK(g[1].shape == y.value().shape);
  for (double v : g[1].data) CHECK(v == 0.0);
}

TEST_CASE("gradient linearity") {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  for (int trial = 0; trial < 20; ++trial) {
    Tensor xv = Tensor::zeros({4});
    for (double& v : xv.data) v = u(rng);
    const double a = u(rng), b = u(rng);

    auto grad_of = [&](int which) {
      Tape tape;
      Var x = tape.input(xv);
      Var f = sum(square(x));
      Var g2 = sum(mul(sin(x), exp(mul(x, 0.3))));
      Var obj = which == 0 ? f : which == 1 ? g2
                                            : add(mul(f, a), mul(g2, b));
      return tape.gradient(obj, {x})[0];
    };
    Tensor gf = grad_of(0), gg = grad_of(1), gc = grad_of(2);
    for (int i = 0; i < 4; ++i)
      CHECK(gc.at(i) ==
            doctest::Approx(a * gf.at(i) + b * gg.at(i)).epsilon(1e-12));
  }
}

TEST_CASE("identical graphs give bit-identical values and gradients") {
  auto build = [](std::vector<Tensor>& grads) {
    Tape tape;
    Var x = tape.input(Tensor::vector({0.3, -1.2, 0.7}));
    Var R = rodrigues(x);
    Var e = euler_angles(R, EulerOrder::ZYX);
    Var f = add(sum(square(e)), sum(mul(R, R)));
    grads = tape.gradient(f, {x});
    return f.value().scalar_value();
  };
  std::vector<Tensor> g1, g2;
  const double f1 = build(g1), f2 = build(g2);
  CHECK(std::memcmp(&f1, &f2, sizeof(double)) == 0);
  REQUIRE(g1.size() == g2.size());
  CHECK(std::memcmp(g1[0].data.data(), g2[0].data.data(),
                    g1[0].data.size() * sizeof(double)) == 0);
}

TEST_CASE("shape and scalar errors") {
  Tape tape;
  Var a = tape.input(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  Var b = tape.input(Tensor::matrix(3, 2, {1, 2, 3, 4, 5, 6}));
  CHECK_THROWS_AS(add(a, b), ShapeMismatchError);
  CHECK_THROWS_AS(matmul(a, a), ShapeMismatchError);
  CHECK_THROWS_AS(reshape(a, {4, 2}), ShapeMismatchError);
  CHECK_THROWS_AS(slice(a, {1, 2}, {2, 3}), ShapeMismatchError);
  CHECK_THROWS_AS(tape.gradient(a, {a}), NotScalarError);
  CHECK_THROWS_AS(Tensor::matrix(2, 2, {1, 2, 3}), ShapeMismatchError);
  (void)b;
}

TEST_CASE("non-finite values raise with the op name") {
  Tape tape;
  Var x = tape.input(Tensor::vector({-1.0, 4.0}));
  CHECK_THROWS_AS(log(x), NonFiniteValueError);
  Var z = tape.input(Tensor::scalar(0.0));
  Var one = tape.input(Tensor::scalar(1.0));
  CHECK_THROWS_WITH_AS(div(one, z),
                       doctest::Contains("div"), NonFiniteValueError);
  CHECK_THROWS_WITH_AS(div(one, z),
                       doctest::Contains("node"), NonFiniteValueError);
}

TEST_CASE("rodrigues gradient at zero matches the skew closed form") {
  Tape tape;
  Var v = tape.input(Tensor::vector({0, 0, 0}));
  Var R = rodrigues(v);
  Tensor C = Tensor::matrix(3, 3, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Var loss = sum(mul(R, tape.constant(C)));
  auto g = tape.gradient(loss, {v});
  CHECK(g[0].at(0) == C.at(2, 1) - C.at(1, 2));
  CHECK(g[0].at(1) == C.at(0, 2) - C.at(2, 0));
  CHECK(g[0].at(2) == C.at(1, 0) - C.at(0, 1));
}

TEST_CASE("primitive finite-difference suite") {
  const auto rows = run_primitive_fd_suite(20250825, 120);
  CHECK(rows.size() >= 25);
  for (const auto& r : rows) {
    INFO(r.name, ": max rel err ", r.max_rel_err, " over ", r.samples,
         " samples");
    CHECK(r.samples >= 100);
    CHECK(r.pass);
  }
}

TEST_CASE("finite-difference suite is deterministic in the seed") {
  const auto a = run_primitive_fd_suite(99, 3);
  const auto b = run_primitive_fd_suite(99, 3);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].name == b[i].name);
    CHECK(std::memcmp(&a[i].max_rel_err, &b[i].max_rel_err,
                      sizeof(double)) == 0);
  }
}

TEST_CASE("fk graph reproduces the reference kinematics") {
  const SkeletonTemplate tpl = make_toy_template();
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 3; ++trial) {
    const PoseParams pose = random_pose(tpl, rng, 0.6);
    const FkResult ref = forward_kinematics(tpl, pose);

    std::vector<double> shaped;
    std::vector<Vec3> rest;
    shaped_template(tpl, pose.shape, shaped, rest);

    Tape tape;
    FkGraph g = build_pose_graph(tape, tpl, pose, rest);
    for (int k = 0; k < tpl.joint_count(); ++k) {
      const std::size_t ks = static_cast<std::size_t>(k);
      const Tensor& jp = g.fk.joints[ks].value();
      const Tensor& wr = g.fk.world_R[ks].value();
      const Tensor& st = g.fk.skin_t[ks].value();
      for (int c = 0; c < 3; ++c) {
        CHECK(jp.at(c) == doctest::Approx(ref.joints[ks][c]).epsilon(1e-12));
        CHECK(st.at(c) ==
              doctest::Approx(ref.skinning[ks].t[c]).epsilon(1e-12));
      }
      for (int i = 0; i < 9; ++i)
        CHECK(wr.at(i) == doctest::Approx(
                              ref.world[ks].R[static_cast<std::size_t>(i)])
                              .epsilon(1e-12));
    }
  }
}

TEST_CASE("rest pose fk graph returns rest joints exactly") {
  const SkeletonTemplate tpl = make_toy_template();
  PoseParams pose = PoseParams::zeros(tpl);
  std::vector<double> shaped;
  std::vector<Vec3> rest;
  shaped_template(tpl, pose.shape, shaped, rest);

  Tape tape;
  std::vector<Var> rots(static_cast<std::size_t>(tpl.joint_count()));
  DiffFk fk = build_fk(tape, tpl, rest, rots, Var{});
  for (int k = 0; k < tpl.joint_count(); ++k) {
    const Tensor& jp = fk.joints[static_cast<std::size_t>(k)].value();
    for (int c = 0; c < 3; ++c)
      CHECK(std::abs(jp.at(c) - rest[static_cast<std::size_t>(k)][c]) <
            1e-12);
  }
}

TEST_CASE("lbs graph reproduces the reference skinning") {
  const SkeletonTemplate tpl = make_toy_template();
  std::mt19937_64 rng(13);
  const PoseParams pose = random_pose(tpl, rng, 0.5);
  const std::vector<double> ref = skin_vertices(tpl, pose);

  std::vector<double> shaped;
  std::vector<Vec3> rest;
  shaped_template(tpl, pose.shape, shaped, rest);
  Tape tape;
  FkGraph g = build_pose_graph(tape, tpl, pose, rest);
  DiffVertices verts = lbs_vertices(tape, tpl, shaped, g.fk);
  REQUIRE(verts.count == tpl.vertex_count);
  for (std::int64_t v = 0; v < tpl.vertex_count; ++v) {
    CHECK(verts.x.value().at(v, 0) ==
          doctest::Approx(ref[static_cast<std::size_t>(3 * v)]).epsilon(1e-12));
    CHECK(verts.y.value().at(v, 0) ==
          doctest::Approx(ref[static_cast<std::size_t>(3 * v + 1)])
              .epsilon(1e-12));
    CHECK(verts.z.value().at(v, 0) ==
          doctest::Approx(ref[static_cast<std::size_t>(3 * v + 2)])
              .epsilon(1e-12));
  }
}

TEST_CASE("projection graph matches the reference camera") {
  const SkeletonTemplate tpl = make_toy_template();
  const Camera cam = test_camera();
  std::mt19937_64 rng(17);
  const PoseParams pose = random_pose(tpl, rng, 0.4);
  const FkResult ref = forward_kinematics(tpl, pose);
  const std::vector<Pixel> px = project(cam, ref.joints);

  std::vector<double> shaped;
  std::vector<Vec3> rest;
  shaped_template(tpl, pose.shape, shaped, rest);
  Tape tape;
  FkGraph g = build_pose_graph(tape, tpl, pose, rest);
  for (int k = 0; k < tpl.joint_count(); ++k) {
    const std::size_t ks = static_cast<std::size_t>(k);
    DiffPixel dp = project_point(tape, cam, g.fk.joints[ks]);
    CHECK(dp.x.value().at(0) == doctest::Approx(px[ks].x).epsilon(1e-10));
    CHECK(dp.y.value().at(0) == doctest::Approx(px[ks].y).epsilon(1e-10));
    CHECK(dp.depth.value().at(0) > 0.0);
  }
}

TEST_CASE("fk chain and projection gradients match finite differences") {
  const SkeletonTemplate tpl = make_toy_template();
  const Camera cam = test_camera();
  std::vector<double> shaped;
  std::vector<Vec3> rest;
  shaped_template(tpl, std::vector<double>(tpl.shape_dim, 0.0), shaped, rest);

  const int elbow = tpl.find_joint("left_elbow");
  const int shoulder = tpl.find_joint("left_shoulder");
  const int wrist = tpl.find_joint("left_wrist");
  REQUIRE(elbow >= 0);
  REQUIRE(shoulder >= 0);
  REQUIRE(wrist >= 0);

  GraphFn fn = [&](Tape& tape, const std::vector<Var>& v) {
    std::vector<Var> rots(static_cast<std::size_t>(tpl.joint_count()));
    rots[static_cast<std::size_t>(shoulder)] = rodrigues(v[0]);
    rots[static_cast<std::size_t>(elbow)] = rodrigues(v[1]);
    DiffFk fk = build_fk(tape, tpl, rest, rots, v[2]);
    DiffPixel dp =
        project_point(tape, cam, fk.joints[static_cast<std::size_t>(wrist)]);
    return concat({dp.x, dp.y});
  };

  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<Tensor> inputs = {
        Tensor({3}, {u(rng), u(rng), u(rng)}),
        Tensor({3}, {u(rng), u(rng), u(rng)}),
        Tensor({3}, {0.1 * u(rng), 0.1 * u(rng), 0.1 * u(rng)})};
    // Pixel-scale outputs: the projection chain carries values of order 1e2.
    FdResult r = fd_check("fk+projection", fn, inputs, rng, 1e-5, 1e-5, 1.0);
    INFO("trial ", trial, " max rel err ", r.max_rel_err);
    CHECK(r.pass);
  }
}

TEST_CASE("lbs gradients match finite differences") {
  const SkeletonTemplate tpl = make_toy_template();
  std::vector<double> shaped;
  std::vector<Vec3> rest;
  shaped_template(tpl, std::vector<double>(tpl.shape_dim, 0.0), shaped, rest);

  const int shoulder = tpl.find_joint("right_shoulder");
  const int elbow = tpl.find_joint("right_elbow");
  const int wristj = tpl.find_joint("right_wrist");
  REQUIRE(shoulder >= 0);

  GraphFn fn = [&](Tape& tape, const std::vector<Var>& v) {
    std::vector<Var> rots(static_cast<std::size_t>(tpl.joint_count()));
    rots[static_cast<std::size_t>(shoulder)] = rodrigues(v[0]);
    rots[static_cast<std::size_t>(elbow)] = rodrigues(v[1]);
    rots[static_cast<std::size_t>(wristj)] = rodrigues(v[2]);
    DiffFk fk = build_fk(tape, tpl, rest, rots, Var{});
    DiffVertices verts = lbs_vertices(tape, tpl, shaped, fk);
    return concat({verts.x, verts.y, verts.z});
  };

  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  std::vector<Tensor> inputs = {Tensor({3}, {u(rng), u(rng), u(rng)}),
                                Tensor({3}, {u(rng), u(rng), u(rng)}),
                                Tensor({3}, {u(rng), u(rng), u(rng)})};
  FdResult r = fd_check("lbs", fn, inputs, rng, 1e-5, 1e-5, 1e-2);
  INFO("max rel err ", r.max_rel_err);
  CHECK(r.pass);
}

TEST_CASE("project_rotation guards degenerate inputs only") {
  Tape tape;
  // Rank 1: no nearest rotation.
  Var rank1 = tape.input(Tensor::matrix(3, 3, {1, 0, 0, 0, 0, 0, 0, 0, 0}));
  CHECK_THROWS_AS(project_rotation(rank1), DegenerateMatrixError);
  // A pure reflection sits on the cut locus of the projection.
  Var refl = tape.input(Tensor::matrix(3, 3, {1, 0, 0, 0, 1, 0, 0, 0, -1}));
  CHECK_THROWS_AS(project_rotation(refl), DegenerateMatrixError);
  // Full-rank inputs far from the manifold still project cleanly.
  Var scaled = tape.input(Tensor::matrix(3, 3, {2, 0, 0, 0, 2, 0, 0, 0, 2}));
  Var Ps = project_rotation(scaled);
  for (int i = 0; i < 9; ++i)
    CHECK(Ps.value().at(i) == doctest::Approx(i % 4 == 0 ? 1.0 : 0.0));
  Var near = tape.input(Tensor::matrix(
      3, 3, {1.01, 0, 0, 0, 0.99, 0.02, 0, -0.02, 0.99}));
  Var P = project_rotation(near);
  CHECK(is_rotation(
      {P.value().at(0), P.value().at(1), P.value().at(2), P.value().at(3),
       P.value().at(4), P.value().at(5), P.value().at(6), P.value().at(7),
       P.value().at(8)}));
}
