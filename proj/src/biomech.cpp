#include "dexfit/biomech.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace dexfit {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kDegToRad = kPi / 180.0;
/// Slack applied when comparing an angle against its bounds, so exact
/// boundary values are accepted.
constexpr double kBoundTol = 1e-12;
/// Rectifier clamps strictly inside the bounds by this margin so the
/// recomposed matrix re-decomposes to in-range angles exactly.
constexpr double kClampMargin = 1e-9;

std::string fmt(double v) {
  std::ostringstream os;
  os.precision(6);
  os << v;
  return os.str();
}

double clamp_axis(double theta, const RomAxis& ax) {
  double lo = ax.min_rad + kClampMargin;
  double hi = ax.max_rad - kClampMargin;
  if (lo > hi) lo = hi = 0.5 * (ax.min_rad + ax.max_rad);
  return std::clamp(theta, lo, hi);
}

double axis_violation(double theta, const RomAxis& ax) {
  return std::max({theta - ax.max_rad, ax.min_rad - theta, 0.0});
}

struct ClinicalEntry {
  const char* joint;
  const char* convention;
  Side side;
  std::array<ClinicalAxis, 3> axes;
};

RomEntry build_entry(const std::string& joint, const std::string& convention,
                     Side side, const std::array<ClinicalAxis, 3>& clinical) {
  RomEntry e;
  e.joint = joint;
  e.convention = parse_euler_order(convention);
  e.side = side;
  e.axes = normalize_rom(clinical, side, convention);
  return e;
}

/// Canonical right-side clinical ranges. Hand joints use intrinsic Z-Y-X
/// (bend, splay, twist): bend is the curl axis perpendicular to finger and
/// palm normal, splay moves fingertips laterally in the palm plane, twist
/// rolls about the finger. Flexion of the right hand is +Z; the left side is
/// generated by mirroring the sign-sensitive axes.
std::array<ClinicalAxis, 3> hand_clinical(int segment, bool thumb) {
  auto ax = [](const char* label, double pos, double neg, bool mirror) {
    return ClinicalAxis{label, pos, neg, mirror};
  };
  if (thumb) {
    switch (segment) {
      case 0: return {ax("bend", 55, 35, true), ax("splay", 40, 10, true),
                      ax("twist", 15, 15, false)};
      case 1: return {ax("bend", 60, 5, true), ax("splay", 8, 8, true),
                      ax("twist", 8, 8, false)};
      default: return {ax("bend", 85, 10, true), ax("splay", 5, 5, true),
                       ax("twist", 5, 5, false)};
    }
  }
  switch (segment) {
    case 0: return {ax("bend", 90, 30, true), ax("splay", 20, 20, true),
                    ax("twist", 8, 8, false)};
    case 1: return {ax("bend", 110, 5, true), ax("splay", 5, 5, true),
                    ax("twist", 5, 5, false)};
    default: return {ax("bend", 80, 5, true), ax("splay", 5, 5, true),
                     ax("twist", 5, 5, false)};
  }
}

}  // namespace

Side parse_side(const std::string& s) {
  if (s == "central") return Side::Central;
  if (s == "left") return Side::Left;
  if (s == "right") return Side::Right;
  throw ParseError("unknown side: " + s);
}

std::string side_name(Side side) {
  switch (side) {
    case Side::Central: return "central";
    case Side::Left: return "left";
    default: return "right";
  }
}

std::array<RomAxis, 3> normalize_rom(const std::array<ClinicalAxis, 3>& clinical,
                                     Side side, const std::string& convention) {
  parse_euler_order(convention);
  std::array<RomAxis, 3> out;
  for (int i = 0; i < 3; ++i) {
    const ClinicalAxis& c = clinical[static_cast<std::size_t>(i)];
    if (c.positive_deg < 0 || c.negative_deg < 0)
      throw ParseError("clinical range for axis '" + c.label +
                       "' must be unsigned degrees");
    RomAxis& a = out[static_cast<std::size_t>(i)];
    a.min_rad = -c.negative_deg * kDegToRad;
    a.max_rad = c.positive_deg * kDegToRad;
    a.mirror = c.mirror;
    a.label = c.label;
    if (side == Side::Left && c.mirror) {
      const double lo = -a.max_rad;
      a.max_rad = -a.min_rad;
      a.min_rad = lo;
    }
  }
  return out;
}

std::array<RomAxis, 3> mirror_axes(const std::array<RomAxis, 3>& axes) {
  std::array<RomAxis, 3> out = axes;
  for (auto& a : out) {
    if (!a.mirror) continue;
    const double lo = -a.max_rad;
    a.max_rad = -a.min_rad;
    a.min_rad = lo;
  }
  return out;
}

const RomEntry* RomTable::find(const std::string& joint) const {
  for (const auto* list : {&body, &left_hand, &right_hand})
    for (const RomEntry& e : *list)
      if (e.joint == joint) return &e;
  return nullptr;
}

void RomTable::validate() const {
  if (body.size() != 6)
    throw ParseError("rom table expects 6 body entries, got " +
                     std::to_string(body.size()));
  if (left_hand.size() != 15 || right_hand.size() != 15)
    throw ParseError("rom table expects 15 entries per hand");
  auto check_axes = [](const RomEntry& e) {
    for (const RomAxis& a : e.axes)
      if (!(a.min_rad <= a.max_rad))
        throw ParseError("rom entry " + e.joint + " has min > max");
    const RomAxis& mid = e.axes[1];
    if (std::max(std::abs(mid.min_rad), std::abs(mid.max_rad)) >
        kPi / 2 - 1e-3)
      throw ParseError("rom entry " + e.joint +
                       " middle-axis bound too close to pi/2");
  };
  auto check_mirror_pair = [](const RomEntry& l, const RomEntry& r) {
    if (l.convention != r.convention)
      throw ParseError("mirrored pair " + l.joint + "/" + r.joint +
                       " disagrees on convention");
    const auto mirrored = mirror_axes(r.axes);
    for (int i = 0; i < 3; ++i) {
      const RomAxis& a = l.axes[static_cast<std::size_t>(i)];
      const RomAxis& b = mirrored[static_cast<std::size_t>(i)];
      if (std::abs(a.min_rad - b.min_rad) > 1e-12 ||
          std::abs(a.max_rad - b.max_rad) > 1e-12 || a.mirror != b.mirror)
        throw ParseError("mirrored pair " + l.joint + "/" + r.joint +
                         " violates the mirror invariant on axis " +
                         std::to_string(i));
    }
  };
  for (const auto* list : {&body, &left_hand, &right_hand}) {
    for (const RomEntry& e : *list) {
      check_axes(e);
      if (e.side != Side::Left) continue;
      std::string counterpart = e.joint;
      const auto pos = counterpart.find("left");
      if (pos == std::string::npos)
        throw ParseError("left rom entry " + e.joint + " lacks 'left' in name");
      counterpart.replace(pos, 4, "right");
      const RomEntry* r = find(counterpart);
      if (r == nullptr)
        throw ParseError("rom entry " + e.joint + " has no right counterpart");
      check_mirror_pair(e, *r);
    }
  }
  if (!(space.lateral_halfwidths > 0) ||
      !(space.vertical_high_torso > space.vertical_low_torso) ||
      !(space.depth_far_torso > space.depth_near_torso))
    throw ParseError("signer space bounds are not ordered");
}

RomTable default_rom() {
  auto ax = [](const char* label, double pos, double neg, bool mirror) {
    return ClinicalAxis{label, pos, neg, mirror};
  };

  // Body conventions keep the large-range motion on the first axis and the
  // smallest on the middle axis, away from the pi/2 singularity.
  // Shoulder Z-X-Y: elevation (arm down is +Z on the right), twist about the
  // upper arm, then horizontal flexion (arm forward is +Y on the right).
  const std::array<ClinicalAxis, 3> shoulder = {
      ax("bend", 100, 85, true), ax("twist", 60, 60, false),
      ax("splay", 130, 40, true)};
  // Elbow Y-Z-X: flexion (right flexion is +Y), a small carry tolerance, and
  // forearm pronation/supination.
  const std::array<ClinicalAxis, 3> elbow = {
      ax("bend", 150, 5, true), ax("tolerance", 8, 8, true),
      ax("twist", 80, 80, false)};
  // Wrist Z-Y-X: flexion/extension (right flexion is +Z), radial/ulnar
  // deviation, then twist.
  const std::array<ClinicalAxis, 3> wrist = {
      ax("bend", 80, 70, true), ax("splay", 30, 20, true),
      ax("twist", 25, 25, false)};

  RomTable t;
  t.body.push_back(build_entry("left_shoulder", "ZXY", Side::Left, shoulder));
  t.body.push_back(build_entry("left_elbow", "YZX", Side::Left, elbow));
  t.body.push_back(build_entry("left_wrist", "ZYX", Side::Left, wrist));
  t.body.push_back(build_entry("right_shoulder", "ZXY", Side::Right, shoulder));
  t.body.push_back(build_entry("right_elbow", "YZX", Side::Right, elbow));
  t.body.push_back(build_entry("right_wrist", "ZYX", Side::Right, wrist));

  const char* fingers[5] = {"thumb", "index", "middle", "ring", "pinky"};
  for (int side = 0; side < 2; ++side) {
    auto& hand = side == 0 ? t.left_hand : t.right_hand;
    const Side s = side == 0 ? Side::Left : Side::Right;
    const std::string prefix = side == 0 ? "left_" : "right_";
    for (int f = 0; f < 5; ++f)
      for (int seg = 0; seg < 3; ++seg)
        hand.push_back(build_entry(
            prefix + fingers[f] + std::to_string(seg + 1), "ZYX", s,
            hand_clinical(seg, f == 0)));
  }
  t.space = SignerSpace{};
  t.validate();
  return t;
}

double biomech_penalty(const std::vector<EulerTriple>& pose_angles,
                       const std::vector<RomEntry>& entries) {
  if (pose_angles.size() != entries.size())
    throw DimensionMismatchError(
        "biomech_penalty: " + std::to_string(pose_angles.size()) +
        " triples vs " + std::to_string(entries.size()) + " rom entries");
  double total = 0;
  for (std::size_t j = 0; j < entries.size(); ++j) {
    const EulerTriple& t = pose_angles[j];
    const RomEntry& e = entries[j];
    if (t.convention != e.convention)
      throw ConventionMismatchError(
          "biomech_penalty: joint " + e.joint + " expects " +
          euler_order_name(e.convention) + ", got " +
          euler_order_name(t.convention));
    for (int i = 0; i < 3; ++i) {
      const double v = axis_violation(t.angles[static_cast<std::size_t>(i)],
                                      e.axes[static_cast<std::size_t>(i)]);
      total += v * v;
    }
  }
  return total;
}

EulerTriple euler_of(const Vec3& axis_angle, EulerOrder convention) {
  const EulerAngles e = matrix_to_euler(aa_to_matrix(axis_angle), convention);
  return EulerTriple{{e.a, e.b, e.c}, convention};
}

FilterResult filter_body_frame(const PoseParams& pose, const RomTable& rom,
                               const SignerSpace& space,
                               const SkeletonTemplate& tpl) {
  FilterResult res;
  auto reject = [&res](const std::string& why) {
    res.accept = false;
    res.reasons.push_back(why);
  };

  for (const RomEntry& e : rom.body) {
    const int k = tpl.find_joint(e.joint);
    if (k < 0) throw ParseError("rom joint not in template: " + e.joint);
    const Mat3 R = aa_to_matrix(pose.joint_rotation(k, tpl));
    const EulerAngles ang = matrix_to_euler(R, e.convention);
    if (ang.gimbal_lock) {
      reject(e.joint + ": gimbal-locked decomposition");
      continue;
    }
    const double theta[3] = {ang.a, ang.b, ang.c};
    for (int i = 0; i < 3; ++i) {
      const RomAxis& a = e.axes[static_cast<std::size_t>(i)];
      if (theta[i] < a.min_rad - kBoundTol || theta[i] > a.max_rad + kBoundTol)
        reject(e.joint + " " + a.label + " angle " + fmt(theta[i]) +
               " outside [" + fmt(a.min_rad) + ", " + fmt(a.max_rad) + "]");
    }
  }

  const FkResult fk = forward_kinematics(tpl, pose);
  const int spine3 = tpl.find_joint("spine3");
  const int pelvis = tpl.find_joint("pelvis");
  const int lsho = tpl.find_joint("left_shoulder");
  const int rsho = tpl.find_joint("right_shoulder");
  const int lelb = tpl.find_joint("left_elbow");
  const int relb = tpl.find_joint("right_elbow");
  const int lwri = tpl.find_joint("left_wrist");
  const int rwri = tpl.find_joint("right_wrist");
  if (spine3 < 0 || pelvis < 0 || lsho < 0 || rsho < 0 || lelb < 0 ||
      relb < 0 || lwri < 0 || rwri < 0)
    throw ParseError("template lacks the joints required by the body filter");

  const Mat3& torso = fk.world[static_cast<std::size_t>(spine3)].R;
  const Vec3 lateral = {torso[0], torso[3], torso[6]};
  const Vec3 up = {torso[1], torso[4], torso[7]};
  const Vec3 forward = {torso[2], torso[5], torso[8]};
  auto dot = [](const Vec3& x, const Vec3& y) {
    return x[0] * y[0] + x[1] * y[1] + x[2] * y[2];
  };
  auto diff = [](const Vec3& x, const Vec3& y) {
    return Vec3{x[0] - y[0], x[1] - y[1], x[2] - y[2]};
  };
  auto norm = [&dot](const Vec3& x) { return std::sqrt(dot(x, x)); };

  const Vec3& sl = fk.joints[static_cast<std::size_t>(lsho)];
  const Vec3& sr = fk.joints[static_cast<std::size_t>(rsho)];
  const Vec3 origin = {0.5 * (sl[0] + sr[0]), 0.5 * (sl[1] + sr[1]),
                       0.5 * (sl[2] + sr[2])};
  const double half_width = 0.5 * norm(diff(sl, sr));
  const double torso_len =
      norm(diff(origin, fk.joints[static_cast<std::size_t>(pelvis)]));
  const Vec3& chest = fk.joints[static_cast<std::size_t>(spine3)];

  auto check_wrist = [&](const char* name, int k) {
    const Vec3 o = diff(fk.joints[static_cast<std::size_t>(k)], origin);
    const double lat = dot(o, lateral);
    const double vert = dot(o, up);
    const double depth =
        dot(diff(fk.joints[static_cast<std::size_t>(k)], chest), forward);
    const double lat_cap = space.lateral_halfwidths * half_width;
    if (std::abs(lat) > lat_cap + kBoundTol)
      reject(std::string(name) + " lateral offset " + fmt(lat) +
             " outside signer space (cap " + fmt(lat_cap) + ")");
    const double vlo = space.vertical_low_torso * torso_len;
    const double vhi = space.vertical_high_torso * torso_len;
    if (vert < vlo - kBoundTol || vert > vhi + kBoundTol)
      reject(std::string(name) + " vertical offset " + fmt(vert) +
             " outside signer space [" + fmt(vlo) + ", " + fmt(vhi) + "]");
    const double dlo = space.depth_near_torso * torso_len;
    const double dhi = space.depth_far_torso * torso_len;
    if (depth < dlo - kBoundTol || depth > dhi + kBoundTol)
      reject(std::string(name) + " depth " + fmt(depth) +
             " outside signer space [" + fmt(dlo) + ", " + fmt(dhi) + "]");
  };
  check_wrist("left_wrist", lwri);
  check_wrist("right_wrist", rwri);

  auto check_shoulder = [&](const char* name, int sho, int elb, double sign) {
    const Vec3 u = diff(fk.joints[static_cast<std::size_t>(elb)],
                        fk.joints[static_cast<std::size_t>(sho)]);
    const double outward = sign * dot(u, lateral);
    const double fwd = dot(u, forward);
    const double h = std::hypot(outward, fwd);
    // A near-vertical upper arm has no meaningful horizontal direction.
    if (h <= 0.2 * norm(u)) return;
    const double phi = std::atan2(fwd, outward);
    if (phi < -space.abduction_cap_rad - kBoundTol)
      reject(std::string(name) + " horizontal abduction " + fmt(-phi) +
             " behind the torso (cap " + fmt(space.abduction_cap_rad) + ")");
    else if (phi > space.adduction_cap_rad + kBoundTol)
      reject(std::string(name) + " horizontal adduction " + fmt(phi) +
             " beyond cap " + fmt(space.adduction_cap_rad));
  };
  check_shoulder("left_shoulder", lsho, lelb, 1.0);
  check_shoulder("right_shoulder", rsho, relb, -1.0);

  return res;
}

std::vector<Vec3> rectify_hand_frame(const std::vector<Vec3>& hand_pose,
                                     const std::vector<RomEntry>& hand_entries) {
  if (hand_pose.size() != hand_entries.size())
    throw DimensionMismatchError(
        "rectify_hand_frame: " + std::to_string(hand_pose.size()) +
        " joints vs " + std::to_string(hand_entries.size()) + " rom entries");
  std::vector<Vec3> out(hand_pose.size());
  for (std::size_t j = 0; j < hand_pose.size(); ++j) {
    const RomEntry& e = hand_entries[j];
    const Mat3 R = aa_to_matrix(hand_pose[j]);
    const EulerAngles ang = matrix_to_euler(R, e.convention);
    const double theta[3] = {ang.a, ang.b, ang.c};
    double clamped[3];
    bool changed = false;
    for (int i = 0; i < 3; ++i) {
      clamped[i] = clamp_axis(theta[i], e.axes[static_cast<std::size_t>(i)]);
      changed = changed || clamped[i] != theta[i];
    }
    out[j] = changed
                 ? matrix_to_aa(euler_to_matrix(clamped[0], clamped[1],
                                                clamped[2], e.convention))
                 : hand_pose[j];
  }
  return out;
}

}  // namespace dexfit
