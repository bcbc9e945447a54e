#include "dexfit/body_model.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "dexfit/kernels.hpp"

namespace dexfit {

Transform compose(const Transform& A, const Transform& B) {
  Transform C;
  C.R = matmul3(A.R, B.R);
  const Vec3 rt = apply3(A.R, B.t);
  C.t = {rt[0] + A.t[0], rt[1] + A.t[1], rt[2] + A.t[2]};
  return C;
}

Vec3 apply(const Transform& T, const Vec3& p) {
  const Vec3 rp = apply3(T.R, p);
  return {rp[0] + T.t[0], rp[1] + T.t[1], rp[2] + T.t[2]};
}

int SkeletonTemplate::find_joint(const std::string& name) const {
  for (std::size_t i = 0; i < joint_names.size(); ++i)
    if (joint_names[i] == name) return static_cast<int>(i);
  return -1;
}

double SkeletonTemplate::body_height() const {
  double lo = 1e300, hi = -1e300;
  for (std::int64_t v = 0; v < vertex_count; ++v) {
    lo = std::min(lo, vertices[3 * v + 1]);
    hi = std::max(hi, vertices[3 * v + 1]);
  }
  return hi - lo;
}

void SkeletonTemplate::validate() const {
  const int K = joint_count();
  if (K != 1 + body_joint_count + 2 * hand_joint_count)
    throw DimensionMismatchError("template: joint count does not match layout");
  if (static_cast<int>(joint_names.size()) != K ||
      static_cast<int>(rest_offsets.size()) != K)
    throw DimensionMismatchError("template: joint arrays disagree");
  if (parents[0] != -1) throw ParseError("template: joint 0 must be the root");
  for (int k = 1; k < K; ++k)
    if (parents[k] < 0 || parents[k] >= k)
      throw ParseError("template: parents must be topologically sorted");
  const std::int64_t N = vertex_count;
  if (static_cast<std::int64_t>(vertices.size()) != N * 3 ||
      static_cast<std::int64_t>(weight_joints.size()) != N * 4 ||
      static_cast<std::int64_t>(weight_values.size()) != N * 4 ||
      static_cast<std::int64_t>(shape_dirs.size()) != N * 3 * shape_dim ||
      static_cast<std::int64_t>(joint_regressor.size()) !=
          static_cast<std::int64_t>(K) * N)
    throw DimensionMismatchError("template: array sizes disagree");
  for (std::int64_t v = 0; v < N; ++v) {
    double s = 0.0;
    for (int j = 0; j < 4; ++j) {
      const int idx = weight_joints[4 * v + j];
      const double w = weight_values[4 * v + j];
      if (idx < -1 || idx >= K) throw ParseError("template: weight joint out of range");
      if (idx == -1 && w != 0.0) throw ParseError("template: padded weight not zero");
      s += w;
    }
    if (std::abs(s - 1.0) > 1e-9)
      throw ParseError("template: skin weight row does not sum to 1");
  }
  for (const auto& [name, region] : regions) {
    if (region.joints.empty() && region.vertices.empty())
      throw ParseError("template: region '" + name + "' is empty");
    for (int j : region.joints)
      if (j < 0 || j >= K) throw ParseError("template: region joint out of range");
    for (std::int64_t v : region.vertices)
      if (v < 0 || v >= N) throw ParseError("template: region vertex out of range");
  }
}

PoseParams PoseParams::zeros(const SkeletonTemplate& tpl) {
  PoseParams p;
  p.body_pose.assign(tpl.body_joint_count, Vec3{0, 0, 0});
  p.left_hand_pose.assign(tpl.hand_joint_count, Vec3{0, 0, 0});
  p.right_hand_pose.assign(tpl.hand_joint_count, Vec3{0, 0, 0});
  p.shape.assign(tpl.shape_dim, 0.0);
  return p;
}

std::vector<double> PoseParams::flat() const {
  std::vector<double> x;
  x.reserve(6 + 3 * (body_pose.size() + left_hand_pose.size() +
                     right_hand_pose.size()) + shape.size());
  auto push3 = [&](const Vec3& v) { x.insert(x.end(), v.begin(), v.end()); };
  push3(root_orient);
  push3(root_trans);
  for (const auto& v : body_pose) push3(v);
  for (const auto& v : left_hand_pose) push3(v);
  for (const auto& v : right_hand_pose) push3(v);
  x.insert(x.end(), shape.begin(), shape.end());
  return x;
}

PoseParams PoseParams::from_flat(const std::vector<double>& x,
                                 const SkeletonTemplate& tpl) {
  const std::size_t want = 6 + 3 * (tpl.body_joint_count + 2 * tpl.hand_joint_count) +
                           tpl.shape_dim;
  if (x.size() != want)
    throw DimensionMismatchError("PoseParams::from_flat: wrong length");
  PoseParams p = zeros(tpl);
  std::size_t i = 0;
  auto take3 = [&]() {
    Vec3 v = {x[i], x[i + 1], x[i + 2]};
    i += 3;
    return v;
  };
  p.root_orient = take3();
  p.root_trans = take3();
  for (auto& v : p.body_pose) v = take3();
  for (auto& v : p.left_hand_pose) v = take3();
  for (auto& v : p.right_hand_pose) v = take3();
  for (auto& s : p.shape) s = x[i++];
  return p;
}

const Vec3& PoseParams::joint_rotation(int k, const SkeletonTemplate& tpl) const {
  return const_cast<PoseParams*>(this)->joint_rotation(k, tpl);
}

Vec3& PoseParams::joint_rotation(int k, const SkeletonTemplate& tpl) {
  if (k == 0) return root_orient;
  if (k < tpl.left_hand_start()) return body_pose[static_cast<std::size_t>(k - 1)];
  if (k < tpl.right_hand_start())
    return left_hand_pose[static_cast<std::size_t>(k - tpl.left_hand_start())];
  return right_hand_pose[static_cast<std::size_t>(k - tpl.right_hand_start())];
}

void shaped_template(const SkeletonTemplate& tpl, const std::vector<double>& shape,
                     std::vector<double>& vertices_out,
                     std::vector<Vec3>& rest_joints_out) {
  if (static_cast<int>(shape.size()) != tpl.shape_dim)
    throw DimensionMismatchError("shaped_template: |shape| != shape_dim");
  const std::int64_t N = tpl.vertex_count;
  vertices_out = tpl.vertices;
  for (std::int64_t v = 0; v < N; ++v)
    for (int c = 0; c < 3; ++c) {
      double d = 0.0;
      const double* dirs = tpl.shape_dirs.data() + (v * 3 + c) * tpl.shape_dim;
      for (int b = 0; b < tpl.shape_dim; ++b) d += dirs[b] * shape[b];
      vertices_out[3 * v + c] += d;
    }
  const int K = tpl.joint_count();
  std::vector<double> J(static_cast<std::size_t>(K) * 3);
  matmul_nn(J.data(), tpl.joint_regressor.data(), vertices_out.data(), K, N, 3);
  rest_joints_out.resize(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k)
    rest_joints_out[static_cast<std::size_t>(k)] = {J[3 * k], J[3 * k + 1], J[3 * k + 2]};
}

FkResult forward_kinematics(const SkeletonTemplate& tpl, const PoseParams& pose) {
  std::vector<double> shaped;
  FkResult out;
  shaped_template(tpl, pose.shape, shaped, out.rest_joints);
  const int K = tpl.joint_count();
  out.world.resize(static_cast<std::size_t>(K));
  out.joints.resize(static_cast<std::size_t>(K));
  out.skinning.resize(static_cast<std::size_t>(K));
  const auto& j = out.rest_joints;
  for (int k = 0; k < K; ++k) {
    const Mat3 R = aa_to_matrix(pose.joint_rotation(k, tpl));
    Transform local;
    if (k == 0) {
      local.R = R;
      local.t = {j[0][0] + pose.root_trans[0], j[0][1] + pose.root_trans[1],
                 j[0][2] + pose.root_trans[2]};
      out.world[0] = local;
    } else {
      const int p = tpl.parents[k];
      local.R = R;
      local.t = {j[k][0] - j[p][0], j[k][1] - j[p][1], j[k][2] - j[p][2]};
      out.world[k] = compose(out.world[p], local);
    }
    out.joints[k] = out.world[k].t;
    const Vec3 rj = apply3(out.world[k].R, j[k]);
    out.skinning[k].R = out.world[k].R;
    out.skinning[k].t = {out.world[k].t[0] - rj[0], out.world[k].t[1] - rj[1],
                         out.world[k].t[2] - rj[2]};
  }
  return out;
}

std::vector<double> skin_vertices(const SkeletonTemplate& tpl,
                                  const std::vector<double>& shaped_vertices,
                                  const std::vector<Transform>& skinning) {
  const std::int64_t N = tpl.vertex_count;
  std::vector<double> out(static_cast<std::size_t>(N) * 3);
  parallel_for(N, [&](std::int64_t v) {
    const Vec3 p = {shaped_vertices[3 * v], shaped_vertices[3 * v + 1],
                    shaped_vertices[3 * v + 2]};
    double ox = 0, oy = 0, oz = 0;
    for (int s = 0; s < 4; ++s) {
      const int k = tpl.weight_joints[4 * v + s];
      if (k < 0) continue;
      const double w = tpl.weight_values[4 * v + s];
      const Vec3 q = apply(skinning[static_cast<std::size_t>(k)], p);
      ox += w * q[0];
      oy += w * q[1];
      oz += w * q[2];
    }
    out[3 * v] = ox;
    out[3 * v + 1] = oy;
    out[3 * v + 2] = oz;
  });
  return out;
}

std::vector<double> skin_vertices(const SkeletonTemplate& tpl,
                                  const PoseParams& pose) {
  std::vector<double> shaped;
  std::vector<Vec3> rest;
  shaped_template(tpl, pose.shape, shaped, rest);
  const FkResult fk = forward_kinematics(tpl, pose);
  return skin_vertices(tpl, shaped, fk.skinning);
}

std::vector<Pixel> project(const Camera& cam, const std::vector<Vec3>& points) {
  std::vector<Pixel> px(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Vec3 p = apply3(cam.rotation, points[i]);
    const double z = p[2] + cam.translation[2];
    if (z <= kMinCameraDepth)
      throw BehindCameraError("project: point " + std::to_string(i) +
                              " has camera depth " + std::to_string(z));
    px[i].x = cam.fx * (p[0] + cam.translation[0]) / z + cam.cx;
    px[i].y = cam.fy * (p[1] + cam.translation[1]) / z + cam.cy;
  }
  return px;
}

void project_masked(const Camera& cam, const std::vector<Vec3>& points,
                    std::vector<Pixel>& pixels, std::vector<std::uint8_t>& valid) {
  pixels.assign(points.size(), Pixel{});
  valid.assign(points.size(), 0);
  for (std::size_t i = 0; i < points.size(); ++i) {
    const Vec3 p = apply3(cam.rotation, points[i]);
    const double z = p[2] + cam.translation[2];
    if (z <= kMinCameraDepth) continue;
    pixels[i].x = cam.fx * (p[0] + cam.translation[0]) / z + cam.cx;
    pixels[i].y = cam.fy * (p[1] + cam.translation[1]) / z + cam.cy;
    valid[i] = 1;
  }
}

namespace {

Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 addv(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
Vec3 scalev(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }
double normv(const Vec3& a) { return std::sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]); }

void orthobasis(const Vec3& axis, Vec3& e1, Vec3& e2) {
  const Vec3 ref = std::abs(axis[1]) < 0.9 ? Vec3{0, 1, 0} : Vec3{1, 0, 0};
  Vec3 u = {axis[1] * ref[2] - axis[2] * ref[1], axis[2] * ref[0] - axis[0] * ref[2],
            axis[0] * ref[1] - axis[1] * ref[0]};
  const double nu = normv(u);
  e1 = scalev(u, 1.0 / nu);
  Vec3 w = {axis[1] * e1[2] - axis[2] * e1[1], axis[2] * e1[0] - axis[0] * e1[2],
            axis[0] * e1[1] - axis[1] * e1[0]};
  const double nw = normv(w);
  e2 = scalev(w, 1.0 / nw);
}

double smooth01(double x) {
  x = std::clamp(x, 0.0, 1.0);
  return x * x * (3.0 - 2.0 * x);
}

}  // namespace

SkeletonTemplate make_toy_template(const ToyTemplateConfig& cfg) {
  SkeletonTemplate tpl;
  tpl.shape_dim = cfg.shape_dim;
  tpl.seed = cfg.seed;

  std::vector<Vec3> P;
  auto add = [&](const std::string& name, int parent, Vec3 p) {
    tpl.joint_names.push_back(name);
    tpl.parents.push_back(parent);
    P.push_back(p);
    return static_cast<int>(P.size()) - 1;
  };

  const int pelvis = add("pelvis", -1, {0, 0.95, 0});
  const int spine1 = add("spine1", pelvis, {0, 1.06, 0});
  const int spine2 = add("spine2", spine1, {0, 1.18, 0});
  const int spine3 = add("spine3", spine2, {0, 1.30, 0});
  const int neck = add("neck", spine3, {0, 1.44, 0});
  add("head", neck, {0, 1.53, 0});
  const int lclav = add("left_clavicle", spine3, {0.07, 1.40, 0});
  const int lsho = add("left_shoulder", lclav, {0.20, 1.42, 0});
  const int lelb = add("left_elbow", lsho, {0.48, 1.42, 0});
  const int lwri = add("left_wrist", lelb, {0.74, 1.42, 0});
  const int rclav = add("right_clavicle", spine3, {-0.07, 1.40, 0});
  const int rsho = add("right_shoulder", rclav, {-0.20, 1.42, 0});
  const int relb = add("right_elbow", rsho, {-0.48, 1.42, 0});
  const int rwri = add("right_wrist", relb, {-0.74, 1.42, 0});
  const int lhip = add("left_hip", pelvis, {0.09, 0.90, 0});
  const int lknee = add("left_knee", lhip, {0.10, 0.50, 0});
  const int lankle = add("left_ankle", lknee, {0.11, 0.08, 0});
  add("left_foot", lankle, {0.11, 0.02, 0.12});
  const int rhip = add("right_hip", pelvis, {-0.09, 0.90, 0});
  const int rknee = add("right_knee", rhip, {-0.10, 0.50, 0});
  const int rankle = add("right_ankle", rknee, {-0.11, 0.08, 0});
  add("right_foot", rankle, {-0.11, 0.02, 0.12});

  const char* fingers[5] = {"thumb", "index", "middle", "ring", "pinky"};
  const Vec3 finger_offsets[5][3] = {
      {{0.030, -0.010, 0.025}, {0.055, -0.015, 0.045}, {0.075, -0.020, 0.060}},
      {{0.090, 0.005, 0.022}, {0.125, 0.005, 0.024}, {0.155, 0.005, 0.025}},
      {{0.095, 0.010, 0.000}, {0.135, 0.010, 0.000}, {0.165, 0.010, 0.000}},
      {{0.090, 0.008, -0.020}, {0.125, 0.008, -0.022}, {0.153, 0.008, -0.023}},
      {{0.080, 0.005, -0.040}, {0.110, 0.004, -0.043}, {0.132, 0.003, -0.045}}};
  for (int side = 0; side < 2; ++side) {
    const int wrist = side == 0 ? lwri : rwri;
    const double sx = side == 0 ? 1.0 : -1.0;
    const std::string prefix = side == 0 ? "left_" : "right_";
    for (int f = 0; f < 5; ++f) {
      int parent = wrist;
      for (int seg = 0; seg < 3; ++seg) {
        const Vec3 o = finger_offsets[f][seg];
        parent = add(prefix + fingers[f] + std::to_string(seg + 1), parent,
                     addv(P[static_cast<std::size_t>(wrist)], {sx * o[0], o[1], o[2]}));
      }
    }
  }

  const int K = tpl.joint_count();
  tpl.rest_offsets.resize(static_cast<std::size_t>(K));
  for (int k = 0; k < K; ++k)
    tpl.rest_offsets[static_cast<std::size_t>(k)] =
        tpl.parents[k] < 0 ? P[static_cast<std::size_t>(k)]
                           : sub(P[static_cast<std::size_t>(k)],
                                 P[static_cast<std::size_t>(tpl.parents[k])]);

  // Segments: one capsule per non-root joint (parent -> joint) plus a head
  // cap. Per-vertex bookkeeping records the controlling joints for regions.
  struct Seg {
    int a, b;        // controlling joints (a = parent side)
    Vec3 pa, pb;
    double radius;
  };
  std::vector<Seg> segs;
  const int head = 5;
  auto radius_of = [&](int k) {
    if (k >= tpl.left_hand_start()) return 0.009;
    const std::string& n = tpl.joint_names[static_cast<std::size_t>(k)];
    if (n == "head" || n == "neck") return 0.055;
    if (n.find("clavicle") != std::string::npos) return 0.05;
    if (n.find("spine") != std::string::npos) return 0.10;
    if (n.find("shoulder") != std::string::npos) return 0.05;
    if (n.find("elbow") != std::string::npos || n.find("wrist") != std::string::npos)
      return 0.04;
    if (n.find("hip") != std::string::npos || n.find("knee") != std::string::npos)
      return 0.07;
    if (n.find("ankle") != std::string::npos || n.find("foot") != std::string::npos)
      return 0.04;
    return 0.05;
  };
  for (int k = 1; k < K; ++k) {
    const int p = tpl.parents[k];
    segs.push_back({p, k, P[static_cast<std::size_t>(p)], P[static_cast<std::size_t>(k)],
                    radius_of(k)});
  }
  segs.push_back({head, head, P[head], addv(P[head], {0, 0.17, 0}), 0.085});

  const std::int64_t n_rings = static_cast<std::int64_t>(K) * 4;
  if (cfg.vertex_count < n_rings + static_cast<std::int64_t>(segs.size()))
    throw DimensionMismatchError("make_toy_template: vertex_count too small");
  const std::int64_t n_capsule = cfg.vertex_count - n_rings;

  tpl.vertex_count = cfg.vertex_count;
  tpl.vertices.reserve(static_cast<std::size_t>(cfg.vertex_count) * 3);
  tpl.weight_joints.assign(static_cast<std::size_t>(cfg.vertex_count) * 4, -1);
  tpl.weight_values.assign(static_cast<std::size_t>(cfg.vertex_count) * 4, 0.0);

  std::vector<int> vert_joint_a, vert_joint_b;  // controlling joints per vertex
  std::vector<std::uint8_t> vert_is_head_front;

  std::int64_t vid = 0;
  auto push_vertex = [&](const Vec3& pos, int ja, double wa, int jb, double wb,
                         int tag_a, int tag_b) {
    tpl.vertices.insert(tpl.vertices.end(), pos.begin(), pos.end());
    tpl.weight_joints[4 * vid] = ja;
    tpl.weight_values[4 * vid] = wa;
    if (jb >= 0) {
      tpl.weight_joints[4 * vid + 1] = jb;
      tpl.weight_values[4 * vid + 1] = wb;
    }
    vert_joint_a.push_back(tag_a);
    vert_joint_b.push_back(tag_b);
    vert_is_head_front.push_back(
        (tag_a == head && tag_b == head && pos[2] > P[head][2] + 0.01) ? 1 : 0);
    ++vid;
  };

  // Joint rings: 4 vertices in symmetric +-pairs, mean equal to the joint.
  for (int k = 0; k < K; ++k) {
    const Vec3 axis_raw = tpl.parents[k] < 0
                              ? Vec3{0, 1, 0}
                              : sub(P[static_cast<std::size_t>(k)],
                                    P[static_cast<std::size_t>(tpl.parents[k])]);
    const double an = normv(axis_raw);
    const Vec3 axis = an > 1e-12 ? scalev(axis_raw, 1.0 / an) : Vec3{0, 1, 0};
    Vec3 e1, e2;
    orthobasis(axis, e1, e2);
    const double r = k >= tpl.left_hand_start() ? 0.003 : 0.008;
    const Vec3 p = P[static_cast<std::size_t>(k)];
    push_vertex(addv(p, scalev(e1, r)), k, 1.0, -1, 0.0, k, k);
    push_vertex(sub(p, scalev(e1, r)), k, 1.0, -1, 0.0, k, k);
    push_vertex(addv(p, scalev(e2, r)), k, 1.0, -1, 0.0, k, k);
    push_vertex(sub(p, scalev(e2, r)), k, 1.0, -1, 0.0, k, k);
  }

  // Capsule samples, allocated by length*radius.
  std::vector<double> score(segs.size());
  double total_score = 0.0;
  for (std::size_t s = 0; s < segs.size(); ++s) {
    score[s] = std::max(normv(sub(segs[s].pb, segs[s].pa)), 0.01) * segs[s].radius;
    total_score += score[s];
  }
  std::vector<std::int64_t> alloc(segs.size());
  std::int64_t assigned = 0;
  for (std::size_t s = 0; s < segs.size(); ++s) {
    alloc[s] = std::max<std::int64_t>(
        1, static_cast<std::int64_t>(std::floor(n_capsule * score[s] / total_score)));
    assigned += alloc[s];
  }
  std::size_t grow = 0;
  while (assigned < n_capsule) {
    alloc[grow % segs.size()] += 1;
    ++assigned;
    ++grow;
  }
  while (assigned > n_capsule) {
    std::size_t biggest = 0;
    for (std::size_t s = 1; s < segs.size(); ++s)
      if (alloc[s] > alloc[biggest]) biggest = s;
    alloc[biggest] -= 1;
    --assigned;
  }

  std::mt19937 rng(cfg.seed);
  std::uniform_real_distribution<double> jitter(-0.002, 0.002);
  const double golden = 2.399963229728653;
  for (std::size_t s = 0; s < segs.size(); ++s) {
    const Seg& seg = segs[s];
    const Vec3 d = sub(seg.pb, seg.pa);
    const double len = normv(d);
    const Vec3 axis = len > 1e-12 ? scalev(d, 1.0 / len) : Vec3{0, 1, 0};
    Vec3 e1, e2;
    orthobasis(axis, e1, e2);
    for (std::int64_t i = 0; i < alloc[s]; ++i) {
      const double u = (static_cast<double>(i) + 0.5) / static_cast<double>(alloc[s]);
      const double phi = static_cast<double>(i) * golden;
      Vec3 pos = addv(seg.pa, scalev(d, u));
      pos = addv(pos, scalev(e1, seg.radius * std::cos(phi)));
      pos = addv(pos, scalev(e2, seg.radius * std::sin(phi)));
      pos = addv(pos, {jitter(rng), jitter(rng), jitter(rng)});
      if (seg.a == seg.b) {
        push_vertex(pos, seg.a, 1.0, -1, 0.0, seg.a, seg.b);
      } else {
        const double wb = 0.85 * smooth01((u - 0.55) / 0.45);
        push_vertex(pos, seg.a, 1.0 - wb, seg.b, wb, seg.a, seg.b);
      }
    }
  }

  // Joint regressor: 1/4 over each joint's ring (rings were pushed first,
  // in joint order).
  tpl.joint_regressor.assign(static_cast<std::size_t>(K) * cfg.vertex_count, 0.0);
  for (int k = 0; k < K; ++k)
    for (int j = 0; j < 4; ++j)
      tpl.joint_regressor[static_cast<std::size_t>(k) * cfg.vertex_count + 4 * k + j] =
          0.25;

  // Shape directions: scale, height, arm length, then smooth sinusoidal fields.
  tpl.shape_dirs.assign(static_cast<std::size_t>(cfg.vertex_count) * 3 * cfg.shape_dim,
                        0.0);
  std::uniform_real_distribution<double> uphase(0.0, 2.0 * M_PI);
  std::uniform_real_distribution<double> ufreq(2.0, 6.0);
  std::normal_distribution<double> gdir(0.0, 1.0);
  std::vector<double> field_param;
  for (int b = 3; b < cfg.shape_dim; ++b) {
    Vec3 dir = {gdir(rng), gdir(rng), gdir(rng)};
    const double nd = normv(dir);
    dir = scalev(dir, 1.0 / std::max(nd, 1e-9));
    field_param.push_back(dir[0]);
    field_param.push_back(dir[1]);
    field_param.push_back(dir[2]);
    field_param.push_back(ufreq(rng));
    field_param.push_back(uphase(rng));
  }
  const Vec3 pelvis_p = P[pelvis];
  for (std::int64_t v = 0; v < cfg.vertex_count; ++v) {
    const Vec3 pos = {tpl.vertices[3 * v], tpl.vertices[3 * v + 1], tpl.vertices[3 * v + 2]};
    auto at = [&](int c, int b) -> double& {
      return tpl.shape_dirs[(static_cast<std::size_t>(v) * 3 + c) * cfg.shape_dim + b];
    };
    if (cfg.shape_dim > 0)
      for (int c = 0; c < 3; ++c) at(c, 0) = 0.06 * (pos[c] - pelvis_p[c]);
    if (cfg.shape_dim > 1) at(1, 1) = 0.05 * (pos[1] - pelvis_p[1]);
    if (cfg.shape_dim > 2 && std::abs(pos[0]) > 0.18)
      at(0, 2) = 0.04 * (std::abs(pos[0]) - 0.18) * (pos[0] > 0 ? 1.0 : -1.0);
    for (int b = 3; b < cfg.shape_dim; ++b) {
      const double* fp = field_param.data() + static_cast<std::size_t>(b - 3) * 5;
      const double phase = fp[3] * (pos[0] * fp[0] + pos[1] * fp[1] + pos[2] * fp[2]) + fp[4];
      at(0, b) = 0.008 * std::sin(phase);
      at(1, b) = 0.008 * std::sin(phase + 2.1);
      at(2, b) = 0.008 * std::sin(phase + 4.2);
    }
  }

  // Joint groups for masking and staging.
  tpl.joint_groups["lower_body"] = {lhip, lknee, lankle, lhip + 3,
                                    rhip, rknee, rankle, rhip + 3};
  tpl.joint_groups["left_arm"] = {lsho, lelb, lwri};
  tpl.joint_groups["right_arm"] = {rsho, relb, rwri};
  std::vector<int> lh, rh;
  for (int k = tpl.left_hand_start(); k < tpl.right_hand_start(); ++k) lh.push_back(k);
  for (int k = tpl.right_hand_start(); k < K; ++k) rh.push_back(k);
  tpl.joint_groups["left_hand"] = lh;
  tpl.joint_groups["right_hand"] = rh;
  tpl.joint_groups["torso"] = {pelvis, spine1, spine2, spine3, neck, head, lclav, rclav};
  tpl.joint_groups["constrained_body"] = {lsho, lelb, lwri, rsho, relb, rwri};

  // Regions. Vertex membership follows the controlling joints recorded at
  // generation time.
  auto in_set = [](const std::vector<int>& set, int k) {
    return std::find(set.begin(), set.end(), k) != set.end();
  };
  std::vector<int> ubody_joints;
  for (int k = 1; k < K; ++k)
    if (!in_set(tpl.joint_groups["lower_body"], k)) ubody_joints.push_back(k);
  std::vector<int> ubody_minus_head = ubody_joints;
  ubody_minus_head.erase(std::remove_if(ubody_minus_head.begin(), ubody_minus_head.end(),
                                        [&](int k) { return k == neck || k == head; }),
                         ubody_minus_head.end());

  Region fbody, ubody, ubody_h, ubody_f, lhand, rhand;
  for (int k = 0; k < K; ++k) fbody.joints.push_back(k);
  ubody.joints = ubody_joints;
  ubody_h.joints = ubody_minus_head;
  ubody_f.joints = ubody_joints;
  lhand.joints = lh;
  rhand.joints = rh;
  for (std::int64_t v = 0; v < cfg.vertex_count; ++v) {
    const int a = vert_joint_a[static_cast<std::size_t>(v)];
    const int b = vert_joint_b[static_cast<std::size_t>(v)];
    fbody.vertices.push_back(v);
    const bool lower = in_set(tpl.joint_groups["lower_body"], a) ||
                       in_set(tpl.joint_groups["lower_body"], b) || (a == pelvis && b == pelvis);
    const bool headish = (a == neck || a == head || b == neck || b == head);
    const bool lhand_v = a >= tpl.left_hand_start() && a < tpl.right_hand_start();
    const bool rhand_v = a >= tpl.right_hand_start() ||
                         (b >= tpl.right_hand_start() && b < K);
    if (!lower) {
      ubody.vertices.push_back(v);
      if (!headish) ubody_h.vertices.push_back(v);
      if (!vert_is_head_front[static_cast<std::size_t>(v)]) ubody_f.vertices.push_back(v);
    }
    if (lhand_v || (b >= tpl.left_hand_start() && b < tpl.right_hand_start()))
      lhand.vertices.push_back(v);
    if (rhand_v) rhand.vertices.push_back(v);
  }
  tpl.regions["FBody"] = fbody;
  tpl.regions["UBody"] = ubody;
  tpl.regions["UBody-H"] = ubody_h;
  tpl.regions["UBody-F"] = ubody_f;
  tpl.regions["LHand"] = lhand;
  tpl.regions["RHand"] = rhand;

  tpl.validate();
  return tpl;
}

}  // namespace dexfit
