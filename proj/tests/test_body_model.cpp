#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "dexfit/body_model.hpp"
#include "dexfit/jsonio.hpp"

using namespace dexfit;

namespace {

const SkeletonTemplate& tpl() {
  static SkeletonTemplate t = make_toy_template();
  return t;
}

double dist(const Vec3& a, const Vec3& b) {
  return std::sqrt((a[0] - b[0]) * (a[0] - b[0]) + (a[1] - b[1]) * (a[1] - b[1]) +
                   (a[2] - b[2]) * (a[2] - b[2]));
}

}  // namespace

TEST_CASE("toy template satisfies structural invariants") {
  const auto& t = tpl();
  t.validate();
  CHECK(t.joint_count() == 52);
  CHECK(t.vertex_count == 600);
  CHECK(t.body_height() > 1.4);
  CHECK(t.body_height() < 2.0);
  for (const char* r : {"FBody", "UBody", "UBody-H", "UBody-F", "LHand", "RHand"})
    CHECK(t.regions.count(r) == 1);
  CHECK(t.regions.at("LHand").joints.size() == 15);
  CHECK(t.regions.at("UBody").joints.size() ==
        t.regions.at("UBody-H").joints.size() + 2);
}

TEST_CASE("shaped template: zero, unit and superposed shapes") {
  const auto& t = tpl();
  std::vector<double> v0, v1, v2, v12;
  std::vector<Vec3> j0, j1, j2, j12;
  std::vector<double> beta(static_cast<std::size_t>(t.shape_dim), 0.0);
  shaped_template(t, beta, v0, j0);
  for (std::int64_t i = 0; i < t.vertex_count * 3; ++i) CHECK(v0[i] == t.vertices[i]);

  beta[0] = 1.0;
  shaped_template(t, beta, v1, j1);
  for (std::int64_t v = 0; v < t.vertex_count; ++v)
    for (int c = 0; c < 3; ++c) {
      const double want = t.vertices[3 * v + c] +
                          t.shape_dirs[(static_cast<std::size_t>(v) * 3 + c) * t.shape_dim];
      CHECK(v1[3 * v + c] == doctest::Approx(want).epsilon(1e-14));
    }

  const double a = 0.7, b = -1.3;
  beta.assign(static_cast<std::size_t>(t.shape_dim), 0.0);
  beta[1] = 1.0;
  shaped_template(t, beta, v2, j2);
  beta[0] = a;
  beta[1] = b;
  shaped_template(t, beta, v12, j12);
  for (std::int64_t i = 0; i < t.vertex_count * 3; ++i) {
    const double want = t.vertices[i] + a * (v1[i] - t.vertices[i]) + b * (v2[i] - t.vertices[i]);
    CHECK(v12[i] == doctest::Approx(want).epsilon(1e-10));
  }

  std::vector<double> bad(static_cast<std::size_t>(t.shape_dim) + 1, 0.0);
  std::vector<double> vv;
  std::vector<Vec3> jj;
  CHECK_THROWS_AS(shaped_template(t, bad, vv, jj), DimensionMismatchError);
}

TEST_CASE("FK: zero pose reproduces rest joints") {
  const auto& t = tpl();
  const PoseParams pose = PoseParams::zeros(t);
  const FkResult fk = forward_kinematics(t, pose);
  for (int k = 0; k < t.joint_count(); ++k)
    CHECK(dist(fk.joints[static_cast<std::size_t>(k)],
               fk.rest_joints[static_cast<std::size_t>(k)]) < 1e-12);
}

TEST_CASE("FK: two-bone elbow flexion oracle") {
  const auto& t = tpl();
  const int elbow = t.find_joint("left_elbow");
  const int wrist = t.find_joint("left_wrist");
  REQUIRE(elbow > 0);
  PoseParams pose = PoseParams::zeros(t);
  const Vec3 aa = {0, 0, M_PI / 2};
  pose.joint_rotation(elbow, t) = aa;
  const FkResult fk = forward_kinematics(t, pose);
  const Mat3 R = aa_to_matrix(aa);
  const Vec3 je = fk.rest_joints[static_cast<std::size_t>(elbow)];
  const Vec3 jw = fk.rest_joints[static_cast<std::size_t>(wrist)];
  const Vec3 d = {jw[0] - je[0], jw[1] - je[1], jw[2] - je[2]};
  const Vec3 rd = apply3(R, d);
  const Vec3 want = {je[0] + rd[0], je[1] + rd[1], je[2] + rd[2]};
  CHECK(dist(fk.joints[static_cast<std::size_t>(wrist)], want) < 1e-12);
}

TEST_CASE("FK: root rotation is a rigid motion about the root") {
  const auto& t = tpl();
  PoseParams pose = PoseParams::zeros(t);
  pose.root_orient = {0.3, -0.8, 0.5};
  pose.root_trans = {0.1, 0.2, -0.4};
  const FkResult fk = forward_kinematics(t, pose);
  const Mat3 R = aa_to_matrix(pose.root_orient);
  const FkResult rest = forward_kinematics(t, PoseParams::zeros(t));
  const Vec3 j0 = rest.rest_joints[0];
  for (int k = 0; k < t.joint_count(); ++k) {
    const Vec3 jk = rest.rest_joints[static_cast<std::size_t>(k)];
    const Vec3 d = {jk[0] - j0[0], jk[1] - j0[1], jk[2] - j0[2]};
    const Vec3 rd = apply3(R, d);
    const Vec3 want = {j0[0] + rd[0] + pose.root_trans[0], j0[1] + rd[1] + pose.root_trans[1],
                       j0[2] + rd[2] + pose.root_trans[2]};
    CHECK(dist(fk.joints[static_cast<std::size_t>(k)], want) < 1e-9);
  }
}

TEST_CASE("FK equivariance under root pre-rotation") {
  const auto& t = tpl();
  std::mt19937 rng(21);
  std::normal_distribution<double> g(0.0, 0.3);
  PoseParams pose = PoseParams::zeros(t);
  for (auto& v : pose.body_pose) v = {g(rng), g(rng), g(rng)};
  const FkResult base = forward_kinematics(t, pose);

  const Vec3 extra = {0.2, 0.7, -0.4};
  const Mat3 Re = aa_to_matrix(extra);
  PoseParams rotated = pose;
  rotated.root_orient = matrix_to_aa(matmul3(Re, aa_to_matrix(pose.root_orient)));
  const FkResult rot = forward_kinematics(t, rotated);

  const Vec3 j0 = base.rest_joints[0];
  for (int k = 0; k < t.joint_count(); ++k) {
    const Vec3 jk = base.joints[static_cast<std::size_t>(k)];
    const Vec3 d = {jk[0] - j0[0], jk[1] - j0[1], jk[2] - j0[2]};
    const Vec3 rd = apply3(Re, d);
    const Vec3 want = {j0[0] + rd[0], j0[1] + rd[1], j0[2] + rd[2]};
    CHECK(dist(rot.joints[static_cast<std::size_t>(k)], want) < 1e-9);
  }
}

TEST_CASE("skinning: zero pose is the identity") {
  const auto& t = tpl();
  PoseParams pose = PoseParams::zeros(t);
  pose.shape[2] = 0.8;
  std::vector<double> shaped;
  std::vector<Vec3> rest;
  shaped_template(t, pose.shape, shaped, rest);
  const std::vector<double> skinned = skin_vertices(t, pose);
  for (std::int64_t i = 0; i < t.vertex_count * 3; ++i)
    CHECK(std::abs(skinned[i] - shaped[i]) < 1e-12);
}

TEST_CASE("skinning: rigid and blended vertices match transform oracle") {
  const auto& t = tpl();
  std::mt19937 rng(31);
  std::normal_distribution<double> g(0.0, 0.4);
  PoseParams pose = PoseParams::zeros(t);
  pose.root_orient = {g(rng), g(rng), g(rng)};
  for (auto& v : pose.body_pose) v = {g(rng), g(rng), g(rng)};
  for (auto& v : pose.left_hand_pose) v = {g(rng), g(rng), g(rng)};
  const FkResult fk = forward_kinematics(t, pose);
  std::vector<double> shaped;
  std::vector<Vec3> rest;
  shaped_template(t, pose.shape, shaped, rest);
  const std::vector<double> skinned = skin_vertices(t, shaped, fk.skinning);

  int rigid_checked = 0, blend_checked = 0;
  for (std::int64_t v = 0; v < t.vertex_count && (rigid_checked < 5 || blend_checked < 5); ++v) {
    const Vec3 p = {shaped[3 * v], shaped[3 * v + 1], shaped[3 * v + 2]};
    const Vec3 got = {skinned[3 * v], skinned[3 * v + 1], skinned[3 * v + 2]};
    const int ja = t.weight_joints[4 * v], jb = t.weight_joints[4 * v + 1];
    if (jb < 0 && rigid_checked < 5) {
      CHECK(dist(got, apply(fk.skinning[static_cast<std::size_t>(ja)], p)) < 1e-12);
      ++rigid_checked;
    } else if (jb >= 0 && t.weight_values[4 * v + 1] > 0.2 && blend_checked < 5) {
      const Vec3 qa = apply(fk.skinning[static_cast<std::size_t>(ja)], p);
      const Vec3 qb = apply(fk.skinning[static_cast<std::size_t>(jb)], p);
      const double wa = t.weight_values[4 * v], wb = t.weight_values[4 * v + 1];
      const Vec3 want = {wa * qa[0] + wb * qb[0], wa * qa[1] + wb * qb[1],
                         wa * qa[2] + wb * qb[2]};
      CHECK(dist(got, want) < 1e-12);
      ++blend_checked;
    }
  }
  CHECK(rigid_checked == 5);
  CHECK(blend_checked == 5);
}

TEST_CASE("projection examples and behind-camera error") {
  Camera cam;
  cam.fx = cam.fy = 1000;
  cam.cx = cam.cy = 500;
  auto px = project(cam, {{0, 0, 1}});
  CHECK(px[0].x == doctest::Approx(500.0));
  CHECK(px[0].y == doctest::Approx(500.0));
  px = project(cam, {{0.1, 0, 1}});
  CHECK(px[0].x == doctest::Approx(600.0));
  CHECK(px[0].y == doctest::Approx(500.0));
  CHECK_THROWS_AS(project(cam, {{0, 0, -1}}), BehindCameraError);

  for (double lambda : {2.0, 7.5, 0.3})
    CHECK(project(cam, {{0.2 * lambda, -0.1 * lambda, 1.5 * lambda}})[0].x ==
          doctest::Approx(project(cam, {{0.2, -0.1, 1.5}})[0].x).epsilon(1e-12));

  std::vector<Pixel> pixels;
  std::vector<std::uint8_t> valid;
  project_masked(cam, {{0, 0, 1}, {0, 0, -1}}, pixels, valid);
  CHECK(valid[0] == 1);
  CHECK(valid[1] == 0);
  CHECK(pixels[1].x == 0.0);
}

TEST_CASE("pose flat round trip") {
  const auto& t = tpl();
  std::mt19937 rng(5);
  std::normal_distribution<double> g(0.0, 1.0);
  PoseParams pose = PoseParams::zeros(t);
  pose.root_orient = {g(rng), g(rng), g(rng)};
  pose.root_trans = {g(rng), g(rng), g(rng)};
  for (auto& v : pose.body_pose) v = {g(rng), g(rng), g(rng)};
  for (auto& v : pose.left_hand_pose) v = {g(rng), g(rng), g(rng)};
  for (auto& v : pose.right_hand_pose) v = {g(rng), g(rng), g(rng)};
  for (auto& s : pose.shape) s = g(rng);
  const auto x = pose.flat();
  CHECK(x.size() == 6u + 3u * 51u + 10u);
  const PoseParams back = PoseParams::from_flat(x, t);
  CHECK(back.flat() == x);
}

TEST_CASE("template JSON round trip") {
  const auto& t = tpl();
  const json j = template_to_json(t);
  const SkeletonTemplate back = template_from_json(j);
  CHECK(back.vertex_count == t.vertex_count);
  CHECK(back.joint_names == t.joint_names);
  CHECK(back.vertices == t.vertices);
  CHECK(back.shape_dirs == t.shape_dirs);
  CHECK(back.weight_values == t.weight_values);
  CHECK(back.joint_regressor == t.joint_regressor);
  CHECK(back.regions.at("UBody").vertices == t.regions.at("UBody").vertices);

  json broken = j;
  broken["schema_version"] = 999;
  CHECK_THROWS_AS(template_from_json(broken), ParseError);
}

TEST_CASE("camera and pose JSON round trip") {
  Camera cam;
  cam.fx = 1234.5;
  cam.rotation = aa_to_matrix({0.1, 0.2, 0.3});
  cam.translation = {0.4, -0.5, 3.0};
  const Camera back = camera_from_json(camera_to_json(cam));
  CHECK(back.fx == cam.fx);
  CHECK(back.rotation == cam.rotation);

  const auto& t = tpl();
  PoseParams pose = PoseParams::zeros(t);
  pose.body_pose[3] = {0.1, -0.2, 0.3};
  const PoseParams pback = pose_from_json(pose_to_json(pose), t);
  CHECK(pback.flat() == pose.flat());

  json bad = camera_to_json(cam);
  bad["fx"] = -1.0;
  CHECK_THROWS_AS(camera_from_json(bad), ParseError);
}
