#include "dexfit/fitting.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <string>
#include <utility>
#include <vector>

namespace dexfit {
namespace {

constexpr double kSegEps = 1e-12;
constexpr double kFailedEval = 1e30;

double clamp01(double v) { return std::min(1.0, std::max(0.0, v)); }

double gm_scalar(double sq_norm, double sigma) {
  const double s2 = sigma * sigma;
  return s2 * sq_norm / (s2 + sq_norm);
}

Tensor vec3_tensor(const Vec3& v) { return Tensor({3}, {v[0], v[1], v[2]}); }

Tensor mat3_tensor(const Mat3& m) {
  return Tensor({3, 3}, std::vector<double>(m.begin(), m.end()));
}

Vec3 vec3_of(const Var& v) {
  const Tensor& t = v.value();
  return {t.data[0], t.data[1], t.data[2]};
}

bool left_active(Handedness h) { return h != Handedness::OneHandedRight; }
bool right_active(Handedness h) { return h != Handedness::OneHandedLeft; }

/// Variable packing order: zbar, eps (active sides), root orient/trans,
/// refinement deltas (active sides, shoulder/elbow/wrist).
struct Layout {
  int d_b = 0, d_h = 0;
  bool left = false, right = false, refine = false;

  std::size_t size() const {
    std::size_t n = static_cast<std::size_t>(d_b) + 6;
    if (left) n += static_cast<std::size_t>(d_h);
    if (right) n += static_cast<std::size_t>(d_h);
    if (refine) n += 9 * (static_cast<std::size_t>(left) + right);
    return n;
  }
};

Layout make_layout(const FitInputs& in, const FitWeights& w) {
  Layout lay;
  lay.d_b = in.body_prior->config.latent_dim;
  lay.d_h = in.hand_prior->config.latent_dim;
  lay.left = left_active(in.frame.handedness);
  lay.right = right_active(in.frame.handedness);
  lay.refine = w.limb_refinement;
  return lay;
}

std::vector<double> pack(const FitState& s, const Layout& lay) {
  std::vector<double> x;
  x.reserve(lay.size());
  x.insert(x.end(), s.zbar.begin(), s.zbar.end());
  if (lay.left) x.insert(x.end(), s.eps_left.begin(), s.eps_left.end());
  if (lay.right) x.insert(x.end(), s.eps_right.begin(), s.eps_right.end());
  for (int i = 0; i < 3; ++i) x.push_back(s.root_orient[i]);
  for (int i = 0; i < 3; ++i) x.push_back(s.root_trans[i]);
  if (lay.refine) {
    if (lay.left)
      for (const Vec3& d : s.delta_left) x.insert(x.end(), d.begin(), d.end());
    if (lay.right)
      for (const Vec3& d : s.delta_right) x.insert(x.end(), d.begin(), d.end());
  }
  return x;
}

FitState unpack(const std::vector<double>& x, FitState base, const Layout& lay) {
  if (x.size() != lay.size())
    throw DimensionMismatchError("fit state vector has " +
                                 std::to_string(x.size()) + " entries, expected " +
                                 std::to_string(lay.size()));
  std::size_t p = 0;
  base.zbar.assign(x.begin(), x.begin() + lay.d_b);
  p += static_cast<std::size_t>(lay.d_b);
  if (lay.left) {
    base.eps_left.assign(x.begin() + static_cast<std::ptrdiff_t>(p),
                         x.begin() + static_cast<std::ptrdiff_t>(p) + lay.d_h);
    p += static_cast<std::size_t>(lay.d_h);
  }
  if (lay.right) {
    base.eps_right.assign(x.begin() + static_cast<std::ptrdiff_t>(p),
                          x.begin() + static_cast<std::ptrdiff_t>(p) + lay.d_h);
    p += static_cast<std::size_t>(lay.d_h);
  }
  for (int i = 0; i < 3; ++i) base.root_orient[i] = x[p++];
  for (int i = 0; i < 3; ++i) base.root_trans[i] = x[p++];
  if (lay.refine) {
    if (lay.left)
      for (Vec3& d : base.delta_left)
        for (int i = 0; i < 3; ++i) d[i] = x[p++];
    if (lay.right)
      for (Vec3& d : base.delta_right)
        for (int i = 0; i < 3; ++i) d[i] = x[p++];
  }
  return base;
}

/// Body joint index -> refinement slot (0 shoulder, 1 elbow, 2 wrist) per
/// side, or -1.
struct RefineMap {
  std::array<int, 3> left = {-1, -1, -1};
  std::array<int, 3> right = {-1, -1, -1};

  static RefineMap of(const SkeletonTemplate& tpl) {
    RefineMap m;
    const auto l = tpl.joint_groups.find("left_arm");
    const auto r = tpl.joint_groups.find("right_arm");
    if (l != tpl.joint_groups.end())
      for (int i = 0; i < 3 && i < static_cast<int>(l->second.size()); ++i)
        m.left[static_cast<std::size_t>(i)] = l->second[static_cast<std::size_t>(i)];
    if (r != tpl.joint_groups.end())
      for (int i = 0; i < 3 && i < static_cast<int>(r->second.size()); ++i)
        m.right[static_cast<std::size_t>(i)] = r->second[static_cast<std::size_t>(i)];
    return m;
  }
};

bool is_zero3(const Vec3& v) { return v[0] == 0 && v[1] == 0 && v[2] == 0; }

double sq_norm(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return s;
}

void check_priors(const FitInputs& in) {
  if (in.body_prior->config.kind != PriorKind::Body)
    throw KindMismatchError("fit: body prior has kind " +
                            std::string(prior_kind_name(in.body_prior->config.kind)));
  if (in.hand_prior->config.kind != PriorKind::Hand)
    throw KindMismatchError("fit: hand prior has kind " +
                            std::string(prior_kind_name(in.hand_prior->config.kind)));
  if (in.body_prior->config.input_joints != in.tpl->body_joint_count)
    throw DimensionMismatchError("fit: body prior covers " +
                                 std::to_string(in.body_prior->config.input_joints) +
                                 " joints, template has " +
                                 std::to_string(in.tpl->body_joint_count));
  if (in.hand_prior->config.input_joints != in.tpl->hand_joint_count)
    throw DimensionMismatchError("fit: hand prior covers " +
                                 std::to_string(in.hand_prior->config.input_joints) +
                                 " joints, template has " +
                                 std::to_string(in.tpl->hand_joint_count));
}

}  // namespace

const char* handedness_name(Handedness h) {
  switch (h) {
    case Handedness::TwoHanded: return "two-handed";
    case Handedness::OneHandedLeft: return "one-handed-left";
    case Handedness::OneHandedRight: return "one-handed-right";
  }
  return "two-handed";
}

Handedness parse_handedness(const std::string& name) {
  if (name == "two-handed") return Handedness::TwoHanded;
  if (name == "one-handed-left") return Handedness::OneHandedLeft;
  if (name == "one-handed-right") return Handedness::OneHandedRight;
  throw ParseError("unknown handedness '" + name + "'");
}

void KeypointFrame::validate(const SkeletonTemplate& tpl) const {
  std::set<int> seen;
  for (const Keypoint& kp : joints) {
    if (kp.joint < 0 || kp.joint >= tpl.joint_count())
      throw DimensionMismatchError("keypoint joint index " +
                                   std::to_string(kp.joint) + " out of range");
    if (!seen.insert(kp.joint).second)
      throw DimensionMismatchError("keypoint joint " +
                                   tpl.joint_names[static_cast<std::size_t>(kp.joint)] +
                                   " observed twice");
    if (!(kp.confidence >= 0 && kp.confidence <= 1))
      throw DimensionMismatchError("confidence outside [0,1] for joint " +
                                   std::to_string(kp.joint));
    if (!(kp.weight > 0))
      throw DimensionMismatchError("non-positive weight for joint " +
                                   std::to_string(kp.joint));
  }
}

void FitWeights::validate() const {
  const double lam[] = {lambda_bprior, lambda_hprior, lambda_pen,
                        lambda_temp,   lambda_bbio,   lambda_hbio,
                        lambda_zbar,   lambda_eps_left, lambda_eps_right};
  for (double l : lam)
    if (!(l >= 0)) throw DimensionMismatchError("negative fit weight");
  if (!(sigma_joint > 0) || !(sigma_prior > 0) || !(sigma_temp > 0))
    throw DimensionMismatchError("robustifier scale must be positive");
  if (lbfgs.max_iterations < 1)
    throw DimensionMismatchError("solver needs at least one iteration");
}

std::vector<std::pair<int, int>> CollisionProxies::candidate_pairs() const {
  std::vector<std::pair<int, int>> pairs;
  for (std::size_t i = 0; i < capsules.size(); ++i)
    for (std::size_t j = i + 1; j < capsules.size(); ++j) {
      const Capsule& a = capsules[i];
      const Capsule& b = capsules[j];
      if (a.joint_a == b.joint_a || a.joint_a == b.joint_b ||
          a.joint_b == b.joint_a || a.joint_b == b.joint_b)
        continue;
      pairs.emplace_back(static_cast<int>(i), static_cast<int>(j));
    }
  return pairs;
}

void CollisionProxies::validate(const SkeletonTemplate& tpl) const {
  for (const Capsule& c : capsules) {
    if (c.joint_a < 0 || c.joint_a >= tpl.joint_count() || c.joint_b < 0 ||
        c.joint_b >= tpl.joint_count())
      throw DimensionMismatchError("capsule endpoint out of range");
    if (c.joint_a == c.joint_b)
      throw DimensionMismatchError("capsule endpoints coincide");
    if (!(c.radius > 0)) throw DimensionMismatchError("capsule radius must be positive");
  }
}

CollisionProxies default_proxies(const SkeletonTemplate& tpl) {
  CollisionProxies px;
  auto joint = [&](const std::string& name) {
    const int k = tpl.find_joint(name);
    if (k < 0) throw DimensionMismatchError("proxy joint '" + name + "' missing");
    return k;
  };
  px.capsules.push_back({joint("pelvis"), joint("neck"), 0.10});
  for (const char* side : {"left", "right"}) {
    const std::string s(side);
    px.capsules.push_back({joint(s + "_elbow"), joint(s + "_wrist"), 0.03});
    for (const char* finger : {"thumb", "index", "middle", "ring", "pinky"}) {
      const std::string f = s + "_" + finger;
      px.capsules.push_back({joint(f + "1"), joint(f + "2"), 0.006});
      px.capsules.push_back({joint(f + "2"), joint(f + "3"), 0.006});
    }
  }
  px.validate(tpl);
  return px;
}

double geman_mcclure(const std::vector<double>& e, double sigma) {
  return gm_scalar(sq_norm(e), sigma);
}

Var geman_mcclure(Tape& tape, Var residual, double sigma) {
  (void)tape;
  const double s2 = sigma * sigma;
  const Var s = sum(square(residual));
  return mul(div(s, add(s, s2)), s2);
}

std::vector<double> decision_mask(Handedness h, const SkeletonTemplate& tpl) {
  std::vector<double> mask(static_cast<std::size_t>(tpl.joint_count()), 1.0);
  auto zero_group = [&](const std::string& name) {
    const auto it = tpl.joint_groups.find(name);
    if (it == tpl.joint_groups.end()) return;
    for (int k : it->second) mask[static_cast<std::size_t>(k)] = 0.0;
  };
  zero_group("lower_body");
  if (h == Handedness::OneHandedLeft) {
    zero_group("right_arm");
    zero_group("right_hand");
  } else if (h == Handedness::OneHandedRight) {
    zero_group("left_arm");
    zero_group("left_hand");
  }
  return mask;
}

void apply_decision_mask(KeypointFrame& frame, const std::vector<double>& mask) {
  for (Keypoint& kp : frame.joints) {
    if (kp.joint < 0 || static_cast<std::size_t>(kp.joint) >= mask.size())
      throw DimensionMismatchError("mask does not cover joint " +
                                   std::to_string(kp.joint));
    kp.confidence *= mask[static_cast<std::size_t>(kp.joint)];
  }
}

double joint_loss(const PoseParams& pose, const Camera& cam,
                  const SkeletonTemplate& tpl, const KeypointFrame& frame,
                  const std::vector<double>& mask, double sigma_joint,
                  std::vector<std::string>* log) {
  if (frame.joints.empty()) return 0.0;
  if (mask.size() != static_cast<std::size_t>(tpl.joint_count()))
    throw DimensionMismatchError("mask covers " + std::to_string(mask.size()) +
                                 " joints, template has " +
                                 std::to_string(tpl.joint_count()));
  const FkResult fk = forward_kinematics(tpl, pose);
  double acc = 0;
  for (const Keypoint& kp : frame.joints) {
    const double w = kp.weight * kp.confidence * mask[static_cast<std::size_t>(kp.joint)];
    if (w <= 0) continue;
    const Vec3& p = fk.joints[static_cast<std::size_t>(kp.joint)];
    Vec3 pc;
    for (int r = 0; r < 3; ++r)
      pc[r] = cam.rotation[3 * r] * p[0] + cam.rotation[3 * r + 1] * p[1] +
              cam.rotation[3 * r + 2] * p[2] + cam.translation[r];
    if (pc[2] <= kMinCameraDepth) {
      acc += w * sigma_joint * sigma_joint;
      if (log)
        log->push_back("joint '" + tpl.joint_names[static_cast<std::size_t>(kp.joint)] +
                       "' behind camera; robustifier cap substituted");
      continue;
    }
    const double ex = cam.fx * pc[0] / pc[2] + cam.cx - kp.x;
    const double ey = cam.fy * pc[1] / pc[2] + cam.cy - kp.y;
    acc += w * gm_scalar(ex * ex + ey * ey, sigma_joint);
  }
  return acc / static_cast<double>(frame.joints.size());
}

double segment_distance(const Vec3& a0, const Vec3& a1, const Vec3& b0,
                        const Vec3& b1, double* s_out, double* t_out) {
  const Vec3 d1 = {a1[0] - a0[0], a1[1] - a0[1], a1[2] - a0[2]};
  const Vec3 d2 = {b1[0] - b0[0], b1[1] - b0[1], b1[2] - b0[2]};
  const Vec3 r = {a0[0] - b0[0], a0[1] - b0[1], a0[2] - b0[2]};
  const double A = d1[0] * d1[0] + d1[1] * d1[1] + d1[2] * d1[2];
  const double e = d2[0] * d2[0] + d2[1] * d2[1] + d2[2] * d2[2];
  const double f = d2[0] * r[0] + d2[1] * r[1] + d2[2] * r[2];
  double s = 0, t = 0;
  if (A <= kSegEps && e <= kSegEps) {
    s = t = 0;
  } else if (A <= kSegEps) {
    t = clamp01(f / e);
  } else {
    const double c = d1[0] * r[0] + d1[1] * r[1] + d1[2] * r[2];
    if (e <= kSegEps) {
      s = clamp01(-c / A);
    } else {
      const double b = d1[0] * d2[0] + d1[1] * d2[1] + d1[2] * d2[2];
      const double denom = A * e - b * b;
      s = denom > kSegEps ? clamp01((b * f - c * e) / denom) : 0.0;
      t = (b * s + f) / e;
      if (t < 0) {
        t = 0;
        s = clamp01(-c / A);
      } else if (t > 1) {
        t = 1;
        s = clamp01((b - c) / A);
      }
    }
  }
  if (s_out) *s_out = s;
  if (t_out) *t_out = t;
  const Vec3 diff = {a0[0] + s * d1[0] - b0[0] - t * d2[0],
                     a0[1] + s * d1[1] - b0[1] - t * d2[1],
                     a0[2] + s * d1[2] - b0[2] - t * d2[2]};
  return std::sqrt(diff[0] * diff[0] + diff[1] * diff[1] + diff[2] * diff[2]);
}

double penetration_loss(const PoseParams& pose, const SkeletonTemplate& tpl,
                        const CollisionProxies& proxies) {
  const auto pairs = proxies.candidate_pairs();
  if (pairs.empty()) return 0.0;
  const FkResult fk = forward_kinematics(tpl, pose);
  auto at = [&](int k) { return fk.joints[static_cast<std::size_t>(k)]; };
  double acc = 0;
  for (const auto& [i, j] : pairs) {
    const Capsule& a = proxies.capsules[static_cast<std::size_t>(i)];
    const Capsule& b = proxies.capsules[static_cast<std::size_t>(j)];
    const double dist = segment_distance(at(a.joint_a), at(a.joint_b),
                                         at(b.joint_a), at(b.joint_b));
    const double depth = std::max(0.0, a.radius + b.radius - dist);
    acc += depth * depth;
  }
  return acc / static_cast<double>(pairs.size());
}

double temporal_loss(const PoseParams& pose, const PoseParams* prev,
                     double sigma_temp) {
  if (!prev) return 0.0;
  if (prev->body_pose.size() != pose.body_pose.size())
    throw DimensionMismatchError("temporal: body pose sizes differ");
  double s = 0;
  for (std::size_t j = 0; j < pose.body_pose.size(); ++j)
    for (int i = 0; i < 3; ++i) {
      const double d = pose.body_pose[j][i] - prev->body_pose[j][i];
      s += d * d;
    }
  return gm_scalar(s, sigma_temp);
}

double bprior_loss(const std::vector<Vec3>& theta_b_init,
                   const LatentCode& zbar, const PriorModel& body_prior,
                   double lambda_zbar, double sigma_prior) {
  if (zbar.kind != PriorKind::Body || body_prior.config.kind != PriorKind::Body)
    throw KindMismatchError("bprior_loss expects body-kind latent and model");
  const DecodeResult dec = decode(body_prior, zbar.z);
  if (dec.axis_angles.size() != theta_b_init.size())
    throw DimensionMismatchError("bprior: decoded pose covers " +
                                 std::to_string(dec.axis_angles.size()) +
                                 " joints, init has " +
                                 std::to_string(theta_b_init.size()));
  double s = 0;
  for (std::size_t j = 0; j < dec.axis_angles.size(); ++j)
    for (int i = 0; i < 3; ++i) {
      const double d = dec.axis_angles[j][i] - theta_b_init[j][i];
      s += d * d;
    }
  return gm_scalar(s, sigma_prior) + lambda_zbar * sq_norm(zbar.z);
}

double hprior_loss(const std::vector<Vec3>& left_init,
                   const std::vector<Vec3>& right_init,
                   const LatentCode& eps_left, const LatentCode& eps_right,
                   const PriorModel& hand_prior, double lambda_eps_left,
                   double lambda_eps_right, double sigma_prior,
                   bool left_side_active, bool right_side_active) {
  if (hand_prior.config.kind != PriorKind::Hand)
    throw KindMismatchError("hprior_loss expects a hand-kind model");
  double total = 0;
  auto side_term = [&](const std::vector<Vec3>& init, const LatentCode& eps,
                       double lambda, bool mirrored) {
    if (eps.kind != PriorKind::Hand)
      throw KindMismatchError("hprior_loss expects hand-kind latents");
    const DecodeResult dec = decode(hand_prior, eps.z);
    const std::vector<Vec3> aa =
        mirrored ? mirror_hand_pose(dec.axis_angles) : dec.axis_angles;
    if (aa.size() != init.size())
      throw DimensionMismatchError("hprior: decoded pose covers " +
                                   std::to_string(aa.size()) + " joints, init has " +
                                   std::to_string(init.size()));
    double s = 0;
    for (std::size_t j = 0; j < aa.size(); ++j)
      for (int i = 0; i < 3; ++i) {
        const double d = aa[j][i] - init[j][i];
        s += d * d;
      }
    return gm_scalar(s, sigma_prior) + lambda * sq_norm(eps.z);
  };
  if (left_side_active) total += side_term(left_init, eps_left, lambda_eps_left, true);
  if (right_side_active)
    total += side_term(right_init, eps_right, lambda_eps_right, false);
  return total;
}

void FitInputs::validate() const {
  if (!tpl || !cam || !body_prior || !hand_prior || !rom || !proxies)
    throw DimensionMismatchError("fit inputs are incomplete");
  if (static_cast<int>(init_pose.body_pose.size()) != tpl->body_joint_count ||
      static_cast<int>(init_pose.left_hand_pose.size()) != tpl->hand_joint_count ||
      static_cast<int>(init_pose.right_hand_pose.size()) != tpl->hand_joint_count)
    throw DimensionMismatchError("init pose does not match the template layout");
  check_priors(*this);
  frame.validate(*tpl);
  proxies->validate(*tpl);
}

double FitTerms::weighted_total(const FitWeights& w) const {
  return joint + w.lambda_bprior * bprior + w.lambda_hprior * hprior +
         w.lambda_pen * pen + w.lambda_temp * temporal + w.lambda_bbio * bbio +
         w.lambda_hbio * hbio;
}

FitTerms read_terms(const ObjectiveGraph& g) {
  auto val = [](const Var& v) { return v.valid() ? v.value().scalar_value() : 0.0; };
  FitTerms t;
  t.joint = val(g.joint);
  t.bprior = val(g.bprior);
  t.hprior = val(g.hprior);
  t.pen = val(g.pen);
  t.temporal = val(g.temporal);
  t.bbio = val(g.bbio);
  t.hbio = val(g.hbio);
  return t;
}

PoseParams assemble_pose(const FitState& state, const FitInputs& inputs,
                         const FitWeights& weights) {
  (void)weights;
  const SkeletonTemplate& tpl = *inputs.tpl;
  PoseParams pose = inputs.init_pose;
  pose.root_orient = state.root_orient;
  pose.root_trans = state.root_trans;
  const DecodeResult bd = decode(*inputs.body_prior, state.zbar);
  pose.body_pose = bd.axis_angles;
  const RefineMap ref = RefineMap::of(tpl);
  for (int slot = 0; slot < 3; ++slot) {
    const std::size_t si = static_cast<std::size_t>(slot);
    if (ref.left[si] > 0)
      for (int i = 0; i < 3; ++i)
        pose.body_pose[static_cast<std::size_t>(ref.left[si] - 1)][i] +=
            state.delta_left[si][i];
    if (ref.right[si] > 0)
      for (int i = 0; i < 3; ++i)
        pose.body_pose[static_cast<std::size_t>(ref.right[si] - 1)][i] +=
            state.delta_right[si][i];
  }
  if (left_active(inputs.frame.handedness))
    pose.left_hand_pose =
        mirror_hand_pose(decode(*inputs.hand_prior, state.eps_left).axis_angles);
  if (right_active(inputs.frame.handedness))
    pose.right_hand_pose = decode(*inputs.hand_prior, state.eps_right).axis_angles;
  return pose;
}

ObjectiveGraph build_objective(Tape& tape, const FitState& state,
                               const FitInputs& inputs,
                               const FitWeights& weights) {
  const SkeletonTemplate& tpl = *inputs.tpl;
  const Layout lay = make_layout(inputs, weights);
  if (static_cast<int>(state.zbar.size()) != lay.d_b ||
      (lay.left && static_cast<int>(state.eps_left.size()) != lay.d_h) ||
      (lay.right && static_cast<int>(state.eps_right.size()) != lay.d_h))
    throw DimensionMismatchError("fit state latents do not match the priors");

  ObjectiveGraph g;
  const Var vz = tape.input(Tensor({lay.d_b}, state.zbar));
  g.vars.push_back(vz);
  Var vel, ver;
  if (lay.left) {
    vel = tape.input(Tensor({lay.d_h}, state.eps_left));
    g.vars.push_back(vel);
  }
  if (lay.right) {
    ver = tape.input(Tensor({lay.d_h}, state.eps_right));
    g.vars.push_back(ver);
  }
  const Var vro = tape.input(vec3_tensor(state.root_orient));
  const Var vrt = tape.input(vec3_tensor(state.root_trans));
  g.vars.push_back(vro);
  g.vars.push_back(vrt);

  const RefineMap ref = RefineMap::of(tpl);
  std::array<Var, 3> dl, dr;
  for (int slot = 0; slot < 3; ++slot) {
    const std::size_t si = static_cast<std::size_t>(slot);
    if (lay.refine && lay.left) {
      dl[si] = tape.input(vec3_tensor(state.delta_left[si]));
      g.vars.push_back(dl[si]);
    } else if (!is_zero3(state.delta_left[si])) {
      dl[si] = tape.constant(vec3_tensor(state.delta_left[si]));
    }
  }
  for (int slot = 0; slot < 3; ++slot) {
    const std::size_t si = static_cast<std::size_t>(slot);
    if (lay.refine && lay.right) {
      dr[si] = tape.input(vec3_tensor(state.delta_right[si]));
      g.vars.push_back(dr[si]);
    } else if (!is_zero3(state.delta_right[si])) {
      dr[si] = tape.constant(vec3_tensor(state.delta_right[si]));
    }
  }

  const PriorDecode bd = decode_graph(tape, *inputs.body_prior, vz);
  std::vector<Var> body_aa = bd.axis_angles;
  for (int slot = 0; slot < 3; ++slot) {
    const std::size_t si = static_cast<std::size_t>(slot);
    if (ref.left[si] > 0 && dl[si].valid())
      body_aa[static_cast<std::size_t>(ref.left[si] - 1)] =
          add(body_aa[static_cast<std::size_t>(ref.left[si] - 1)], dl[si]);
    if (ref.right[si] > 0 && dr[si].valid())
      body_aa[static_cast<std::size_t>(ref.right[si] - 1)] =
          add(body_aa[static_cast<std::size_t>(ref.right[si] - 1)], dr[si]);
  }

  const int K = tpl.joint_count();
  std::vector<Var> rotations(static_cast<std::size_t>(K));
  rotations[0] = rodrigues(vro);
  for (int k = 1; k <= tpl.body_joint_count; ++k)
    rotations[static_cast<std::size_t>(k)] =
        rodrigues(body_aa[static_cast<std::size_t>(k - 1)]);

  const int lh0 = tpl.left_hand_start();
  const int rh0 = tpl.right_hand_start();
  std::vector<Var> left_aa(static_cast<std::size_t>(tpl.hand_joint_count));
  std::vector<Var> right_aa(static_cast<std::size_t>(tpl.hand_joint_count));
  if (lay.left) {
    const PriorDecode hd = decode_graph(tape, *inputs.hand_prior, vel);
    const Var flip = tape.constant(Tensor({3}, {1, -1, -1}));
    for (int j = 0; j < tpl.hand_joint_count; ++j) {
      const std::size_t sj = static_cast<std::size_t>(j);
      left_aa[sj] = mul(hd.axis_angles[sj], flip);
      rotations[static_cast<std::size_t>(lh0 + j)] = rodrigues(left_aa[sj]);
    }
  } else {
    for (int j = 0; j < tpl.hand_joint_count; ++j)
      rotations[static_cast<std::size_t>(lh0 + j)] = tape.constant(
          mat3_tensor(aa_to_matrix(inputs.init_pose.left_hand_pose[static_cast<std::size_t>(j)])));
  }
  if (lay.right) {
    const PriorDecode hd = decode_graph(tape, *inputs.hand_prior, ver);
    for (int j = 0; j < tpl.hand_joint_count; ++j) {
      const std::size_t sj = static_cast<std::size_t>(j);
      right_aa[sj] = hd.axis_angles[sj];
      rotations[static_cast<std::size_t>(rh0 + j)] = hd.projected[sj];
    }
  } else {
    for (int j = 0; j < tpl.hand_joint_count; ++j)
      rotations[static_cast<std::size_t>(rh0 + j)] = tape.constant(
          mat3_tensor(aa_to_matrix(inputs.init_pose.right_hand_pose[static_cast<std::size_t>(j)])));
  }

  std::vector<double> shaped_verts;
  std::vector<Vec3> rest_joints;
  shaped_template(tpl, inputs.init_pose.shape, shaped_verts, rest_joints);
  const DiffFk fk = build_fk(tape, tpl, rest_joints, rotations, vrt);

  g.pose = inputs.init_pose;
  g.pose.root_orient = state.root_orient;
  g.pose.root_trans = state.root_trans;
  for (int j = 0; j < tpl.body_joint_count; ++j)
    g.pose.body_pose[static_cast<std::size_t>(j)] =
        vec3_of(body_aa[static_cast<std::size_t>(j)]);
  if (lay.left)
    for (int j = 0; j < tpl.hand_joint_count; ++j)
      g.pose.left_hand_pose[static_cast<std::size_t>(j)] =
          vec3_of(left_aa[static_cast<std::size_t>(j)]);
  if (lay.right)
    for (int j = 0; j < tpl.hand_joint_count; ++j)
      g.pose.right_hand_pose[static_cast<std::size_t>(j)] =
          vec3_of(right_aa[static_cast<std::size_t>(j)]);

  const std::vector<double> mask = decision_mask(inputs.frame.handedness, tpl);
  {
    Var acc;
    const double sj2 = weights.sigma_joint * weights.sigma_joint;
    for (const Keypoint& kp : inputs.frame.joints) {
      const double w =
          kp.weight * kp.confidence * mask[static_cast<std::size_t>(kp.joint)];
      if (w <= 0) continue;
      const DiffPixel px =
          project_point(tape, *inputs.cam, fk.joints[static_cast<std::size_t>(kp.joint)]);
      Var contrib;
      if (px.depth.value().scalar_value() <= kMinCameraDepth) {
        contrib = tape.constant(Tensor::scalar(w * sj2));
        g.notes.push_back("joint '" +
                          tpl.joint_names[static_cast<std::size_t>(kp.joint)] +
                          "' behind camera; robustifier cap substituted");
      } else {
        const Var res = concat({sub(px.x, kp.x), sub(px.y, kp.y)});
        contrib = mul(geman_mcclure(tape, res, weights.sigma_joint), w);
      }
      acc = acc.valid() ? add(acc, contrib) : contrib;
    }
    g.joint = acc.valid()
                  ? div(acc, static_cast<double>(inputs.frame.joints.size()))
                  : tape.constant(Tensor::scalar(0.0));
  }

  if (weights.lambda_bprior > 0) {
    std::vector<Var> res;
    res.reserve(static_cast<std::size_t>(tpl.body_joint_count));
    for (int j = 0; j < tpl.body_joint_count; ++j)
      res.push_back(sub(bd.axis_angles[static_cast<std::size_t>(j)],
                        tape.constant(vec3_tensor(
                            inputs.init_pose.body_pose[static_cast<std::size_t>(j)]))));
    const Var gm = geman_mcclure(tape, concat(res), weights.sigma_prior);
    g.bprior = add(gm, mul(sum(square(vz)), weights.lambda_zbar));
  }

  if (weights.lambda_hprior > 0) {
    Var acc;
    auto side_term = [&](const std::vector<Var>& aa, const std::vector<Vec3>& init,
                         Var eps, double lambda) {
      std::vector<Var> res;
      res.reserve(aa.size());
      for (std::size_t j = 0; j < aa.size(); ++j)
        res.push_back(sub(aa[j], tape.constant(vec3_tensor(init[j]))));
      const Var gm = geman_mcclure(tape, concat(res), weights.sigma_prior);
      return add(gm, mul(sum(square(eps)), lambda));
    };
    if (lay.left)
      acc = side_term(left_aa, inputs.init_pose.left_hand_pose, vel,
                      weights.lambda_eps_left);
    if (lay.right) {
      const Var rt = side_term(right_aa, inputs.init_pose.right_hand_pose, ver,
                               weights.lambda_eps_right);
      acc = acc.valid() ? add(acc, rt) : rt;
    }
    g.hprior = acc.valid() ? acc : tape.constant(Tensor::scalar(0.0));
  }

  if (weights.lambda_pen > 0) {
    const auto pairs = inputs.proxies->candidate_pairs();
    if (!pairs.empty()) {
      Var acc;
      for (const auto& [i, j] : pairs) {
        const Capsule& a = inputs.proxies->capsules[static_cast<std::size_t>(i)];
        const Capsule& b = inputs.proxies->capsules[static_cast<std::size_t>(j)];
        const Var a0 = fk.joints[static_cast<std::size_t>(a.joint_a)];
        const Var a1 = fk.joints[static_cast<std::size_t>(a.joint_b)];
        const Var b0 = fk.joints[static_cast<std::size_t>(b.joint_a)];
        const Var b1 = fk.joints[static_cast<std::size_t>(b.joint_b)];
        double s = 0, t = 0;
        segment_distance(vec3_of(a0), vec3_of(a1), vec3_of(b0), vec3_of(b1), &s, &t);
        // Closest-point parameters enter as constants; by the envelope
        // theorem the distance gradient does not need their sensitivities.
        const Var pa = s == 0 ? a0 : add(a0, mul(sub(a1, a0), s));
        const Var pb = t == 0 ? b0 : add(b0, mul(sub(b1, b0), t));
        const Var dist = sqrt(add(sum(square(sub(pa, pb))), 1e-18));
        const Var depth = hinge(sub(a.radius + b.radius, dist));
        acc = acc.valid() ? add(acc, square(depth)) : square(depth);
      }
      g.pen = div(acc, static_cast<double>(pairs.size()));
    } else {
      g.pen = tape.constant(Tensor::scalar(0.0));
    }
  }

  if (weights.lambda_temp > 0 && inputs.prev_pose) {
    if (inputs.prev_pose->body_pose.size() !=
        static_cast<std::size_t>(tpl.body_joint_count))
      throw DimensionMismatchError("temporal: previous pose does not match template");
    std::vector<Var> res;
    res.reserve(static_cast<std::size_t>(tpl.body_joint_count));
    for (int j = 0; j < tpl.body_joint_count; ++j)
      res.push_back(sub(body_aa[static_cast<std::size_t>(j)],
                        tape.constant(vec3_tensor(
                            inputs.prev_pose->body_pose[static_cast<std::size_t>(j)]))));
    g.temporal = geman_mcclure(tape, concat(res), weights.sigma_temp);
  }

  auto rom_penalty = [&](const std::vector<RomEntry>& entries, Var& out) {
    Var acc;
    for (const RomEntry& e : entries) {
      const int k = tpl.find_joint(e.joint);
      if (k < 0)
        throw DimensionMismatchError("rom joint '" + e.joint + "' missing");
      const Var euler = euler_angles(rotations[static_cast<std::size_t>(k)], e.convention);
      const Var lo = tape.constant(Tensor(
          {3}, {e.axes[0].min_rad, e.axes[1].min_rad, e.axes[2].min_rad}));
      const Var hi = tape.constant(Tensor(
          {3}, {e.axes[0].max_rad, e.axes[1].max_rad, e.axes[2].max_rad}));
      const Var pe = add(sum(square(hinge(sub(euler, hi)))),
                         sum(square(hinge(sub(lo, euler)))));
      acc = acc.valid() ? add(acc, pe) : pe;
    }
    out = acc.valid() ? acc : tape.constant(Tensor::scalar(0.0));
  };
  if (weights.lambda_bbio > 0) rom_penalty(inputs.rom->body, g.bbio);
  if (weights.lambda_hbio > 0) {
    Var lh, rh;
    if (lay.left) rom_penalty(inputs.rom->left_hand, lh);
    if (lay.right) rom_penalty(inputs.rom->right_hand, rh);
    if (lh.valid() && rh.valid())
      g.hbio = add(lh, rh);
    else if (lh.valid() || rh.valid())
      g.hbio = lh.valid() ? lh : rh;
    else
      g.hbio = tape.constant(Tensor::scalar(0.0));
  }

  Var total = g.joint;
  if (g.bprior.valid()) total = add(total, mul(g.bprior, weights.lambda_bprior));
  if (g.hprior.valid()) total = add(total, mul(g.hprior, weights.lambda_hprior));
  if (g.pen.valid()) total = add(total, mul(g.pen, weights.lambda_pen));
  if (g.temporal.valid()) total = add(total, mul(g.temporal, weights.lambda_temp));
  if (g.bbio.valid()) total = add(total, mul(g.bbio, weights.lambda_bbio));
  if (g.hbio.valid()) total = add(total, mul(g.hbio, weights.lambda_hbio));
  g.total = total;
  return g;
}

namespace {

FitState initial_state(const FitInputs& in) {
  FitState st;
  st.zbar = encode_pose(*in.body_prior, in.init_pose.body_pose).mu;
  st.eps_left =
      encode_pose(*in.hand_prior, mirror_hand_pose(in.init_pose.left_hand_pose)).mu;
  st.eps_right = encode_pose(*in.hand_prior, in.init_pose.right_hand_pose).mu;
  st.root_orient = in.init_pose.root_orient;
  st.root_trans = in.init_pose.root_trans;
  return st;
}

/// Root-only pre-alignment on the torso keypoints; articulation is held at
/// the pose implied by the current state.
void align_root(FitState& st, const FitInputs& in, const FitWeights& w,
                std::vector<std::string>& notes) {
  const SkeletonTemplate& tpl = *in.tpl;
  const auto torso_it = tpl.joint_groups.find("torso");
  if (torso_it == tpl.joint_groups.end()) {
    notes.push_back("no torso joint group; root pre-alignment skipped");
    return;
  }
  const std::set<int> torso(torso_it->second.begin(), torso_it->second.end());
  const std::vector<double> mask = decision_mask(in.frame.handedness, tpl);
  KeypointFrame torso_frame = in.frame;
  torso_frame.joints.clear();
  for (const Keypoint& kp : in.frame.joints)
    if (torso.count(kp.joint) &&
        kp.weight * kp.confidence * mask[static_cast<std::size_t>(kp.joint)] > 0)
      torso_frame.joints.push_back(kp);
  if (torso_frame.joints.empty()) {
    notes.push_back("no usable torso keypoints; root pre-alignment skipped");
    return;
  }

  const PoseParams fixed = assemble_pose(st, in, w);
  std::vector<Vec3> rest_joints;
  std::vector<double> shaped_verts;
  shaped_template(tpl, in.init_pose.shape, shaped_verts, rest_joints);

  auto fg = [&](const std::vector<double>& x, std::vector<double>& grad) {
    grad.assign(x.size(), 0.0);
    Tape tape;
    try {
      const Var vro = tape.input(Tensor({3}, {x[0], x[1], x[2]}));
      const Var vrt = tape.input(Tensor({3}, {x[3], x[4], x[5]}));
      std::vector<Var> rotations(static_cast<std::size_t>(tpl.joint_count()));
      rotations[0] = rodrigues(vro);
      for (int k = 1; k < tpl.joint_count(); ++k)
        rotations[static_cast<std::size_t>(k)] =
            tape.constant(mat3_tensor(aa_to_matrix(fixed.joint_rotation(k, tpl))));
      const DiffFk fk = build_fk(tape, tpl, rest_joints, rotations, vrt);
      Var acc;
      const double sj2 = w.sigma_joint * w.sigma_joint;
      for (const Keypoint& kp : torso_frame.joints) {
        const double kw = kp.weight * kp.confidence;
        const DiffPixel px =
            project_point(tape, *in.cam, fk.joints[static_cast<std::size_t>(kp.joint)]);
        Var contrib;
        if (px.depth.value().scalar_value() <= kMinCameraDepth)
          contrib = tape.constant(Tensor::scalar(kw * sj2));
        else
          contrib = mul(geman_mcclure(tape, concat({sub(px.x, kp.x), sub(px.y, kp.y)}),
                                      w.sigma_joint),
                        kw);
        acc = acc.valid() ? add(acc, contrib) : contrib;
      }
      const Var obj = div(acc, static_cast<double>(torso_frame.joints.size()));
      const auto gr = tape.gradient(obj, {vro, vrt});
      for (int i = 0; i < 3; ++i) {
        grad[static_cast<std::size_t>(i)] = gr[0].data[static_cast<std::size_t>(i)];
        grad[static_cast<std::size_t>(i) + 3] = gr[1].data[static_cast<std::size_t>(i)];
      }
      return obj.value().scalar_value();
    } catch (const Error&) {
      return kFailedEval;
    }
  };
  std::vector<double> x0 = {st.root_orient[0], st.root_orient[1], st.root_orient[2],
                            st.root_trans[0], st.root_trans[1], st.root_trans[2]};
  const LbfgsResult res = lbfgs_minimize(fg, x0, w.lbfgs);
  st.root_orient = {res.x[0], res.x[1], res.x[2]};
  st.root_trans = {res.x[3], res.x[4], res.x[5]};
}

}  // namespace

FitResult fit_frame(const FitInputs& inputs, const FitWeights& weights,
                    const FitState* warm) {
  inputs.validate();
  weights.validate();
  FitState st = warm ? *warm : initial_state(inputs);
  const Layout lay = make_layout(inputs, weights);

  FitResult out;
  align_root(st, inputs, weights, out.notes);

  auto fg = [&](const std::vector<double>& x, std::vector<double>& grad) {
    grad.assign(x.size(), 0.0);
    const FitState s = unpack(x, st, lay);
    Tape tape;
    try {
      const ObjectiveGraph g = build_objective(tape, s, inputs, weights);
      const auto gr = tape.gradient(g.total, g.vars);
      std::size_t p = 0;
      for (const Tensor& t : gr)
        for (double v : t.data) grad[p++] = v;
      return g.total.value().scalar_value();
    } catch (const Error&) {
      return kFailedEval;
    }
  };

  const LbfgsResult res = lbfgs_minimize(fg, pack(st, lay), weights.lbfgs);
  st = unpack(res.x, st, lay);

  Tape tape;
  const ObjectiveGraph g = build_objective(tape, st, inputs, weights);
  out.pose = g.pose;
  out.zbar = st.zbar;
  out.eps_left = st.eps_left;
  out.eps_right = st.eps_right;
  out.state = st;
  out.terms = read_terms(g);
  out.objective = g.total.value().scalar_value();
  out.trace = res.trace;
  out.iterations = res.iterations;
  out.converged = res.converged;
  out.notes.insert(out.notes.end(), g.notes.begin(), g.notes.end());
  return out;
}

std::vector<FitResult> fit_sequence(const std::vector<KeypointFrame>& frames,
                                    const SkeletonTemplate& tpl,
                                    const Camera& cam,
                                    const PriorModel& body_prior,
                                    const PriorModel& hand_prior,
                                    const RomTable& rom,
                                    const CollisionProxies& proxies,
                                    const FitWeights& weights,
                                    const std::vector<PoseParams>& init) {
  if (init.empty())
    throw DimensionMismatchError("fit_sequence needs at least one init pose");
  if (init.size() != 1 && init.size() != frames.size())
    throw DimensionMismatchError("init poses: expected 1 or " +
                                 std::to_string(frames.size()) + ", got " +
                                 std::to_string(init.size()));
  std::vector<FitResult> results;
  results.reserve(frames.size());
  FitState warm;
  bool have_warm = false;
  PoseParams prev;
  bool have_prev = false;
  for (std::size_t t = 0; t < frames.size(); ++t) {
    FitInputs in;
    in.tpl = &tpl;
    in.cam = &cam;
    in.body_prior = &body_prior;
    in.hand_prior = &hand_prior;
    in.rom = &rom;
    in.proxies = &proxies;
    in.init_pose = init.size() == 1 ? init[0] : init[t];
    in.prev_pose = have_prev ? &prev : nullptr;
    in.frame = frames[t];
    try {
      FitResult r = fit_frame(in, weights, have_warm ? &warm : nullptr);
      warm = r.state;
      have_warm = true;
      prev = r.pose;
      have_prev = true;
      results.push_back(std::move(r));
    } catch (const Error& e) {
      FitResult r;
      r.pose = have_prev ? prev : in.init_pose;
      r.converged = false;
      r.notes.push_back("frame " + std::to_string(frames[t].index) +
                        " failed: " + e.what());
      results.push_back(std::move(r));
    }
  }
  return results;
}

}  // namespace dexfit
