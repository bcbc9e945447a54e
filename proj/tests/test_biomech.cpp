#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <random>

#include "dexfit/biomech.hpp"
#include "dexfit/jsonio.hpp"

using namespace dexfit;

namespace {

constexpr double kPi = 3.14159265358979323846;

double deg(double d) { return d * kPi / 180.0; }

std::array<ClinicalAxis, 3> wrist_clinical() {
  return {ClinicalAxis{"bend", 90, 90, true}, ClinicalAxis{"splay", 30, 20, true},
          ClinicalAxis{"twist", 25, 25, false}};
}

Vec3 aa_from_euler(double a, double b, double c, EulerOrder order) {
  return matrix_to_aa(euler_to_matrix(a, b, c, order));
}

std::vector<EulerTriple> decompose_hand(const std::vector<Vec3>& pose,
                                        const std::vector<RomEntry>& entries) {
  std::vector<EulerTriple> out;
  for (std::size_t j = 0; j < pose.size(); ++j)
    out.push_back(euler_of(pose[j], entries[j].convention));
  return out;
}

std::vector<EulerTriple> decompose_body(const PoseParams& pose,
                                        const RomTable& rom,
                                        const SkeletonTemplate& tpl) {
  std::vector<EulerTriple> out;
  for (const RomEntry& e : rom.body)
    out.push_back(euler_of(pose.joint_rotation(tpl.find_joint(e.joint), tpl),
                           e.convention));
  return out;
}

struct BoxOracle {
  Vec3 origin, lateral, up, forward, chest;
  double half_width = 0, torso_len = 0;
};

BoxOracle box_oracle(const SkeletonTemplate& tpl, const PoseParams& pose) {
  const FkResult fk = forward_kinematics(tpl, pose);
  BoxOracle b;
  const Vec3& sl = fk.joints[static_cast<std::size_t>(tpl.find_joint("left_shoulder"))];
  const Vec3& sr = fk.joints[static_cast<std::size_t>(tpl.find_joint("right_shoulder"))];
  const Vec3& pe = fk.joints[static_cast<std::size_t>(tpl.find_joint("pelvis"))];
  const Mat3& R = fk.world[static_cast<std::size_t>(tpl.find_joint("spine3"))].R;
  b.origin = {0.5 * (sl[0] + sr[0]), 0.5 * (sl[1] + sr[1]), 0.5 * (sl[2] + sr[2])};
  b.lateral = {R[0], R[3], R[6]};
  b.up = {R[1], R[4], R[7]};
  b.forward = {R[2], R[5], R[8]};
  b.chest = fk.joints[static_cast<std::size_t>(tpl.find_joint("spine3"))];
  const Vec3 d = {sl[0] - sr[0], sl[1] - sr[1], sl[2] - sr[2]};
  b.half_width = 0.5 * std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]);
  const Vec3 e = {b.origin[0] - pe[0], b.origin[1] - pe[1], b.origin[2] - pe[2]};
  b.torso_len = std::sqrt(e[0] * e[0] + e[1] * e[1] + e[2] * e[2]);
  return b;
}

double dotv(const Vec3& a, const Vec3& b) {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

/// In-test reimplementation of the box and horizontal-cap checks, applied
/// with a safety margin so sampled poses sit strictly inside.
bool strictly_in_signer_space(const SkeletonTemplate& tpl, const PoseParams& pose,
                              const SignerSpace& s, double margin) {
  const FkResult fk = forward_kinematics(tpl, pose);
  const BoxOracle b = box_oracle(tpl, pose);
  for (const char* w : {"left_wrist", "right_wrist"}) {
    const Vec3& p = fk.joints[static_cast<std::size_t>(tpl.find_joint(w))];
    const Vec3 o = {p[0] - b.origin[0], p[1] - b.origin[1], p[2] - b.origin[2]};
    const Vec3 oc = {p[0] - b.chest[0], p[1] - b.chest[1], p[2] - b.chest[2]};
    if (std::abs(dotv(o, b.lateral)) > s.lateral_halfwidths * b.half_width - margin)
      return false;
    const double v = dotv(o, b.up);
    if (v < s.vertical_low_torso * b.torso_len + margin ||
        v > s.vertical_high_torso * b.torso_len - margin)
      return false;
    const double d = dotv(oc, b.forward);
    if (d < s.depth_near_torso * b.torso_len + margin ||
        d > s.depth_far_torso * b.torso_len - margin)
      return false;
  }
  const FkResult& f = fk;
  for (int side = 0; side < 2; ++side) {
    const char* sho = side == 0 ? "left_shoulder" : "right_shoulder";
    const char* elb = side == 0 ? "left_elbow" : "right_elbow";
    const Vec3& a = f.joints[static_cast<std::size_t>(tpl.find_joint(sho))];
    const Vec3& e = f.joints[static_cast<std::size_t>(tpl.find_joint(elb))];
    const Vec3 u = {e[0] - a[0], e[1] - a[1], e[2] - a[2]};
    const double outward = (side == 0 ? 1.0 : -1.0) * dotv(u, b.lateral);
    const double fwd = dotv(u, b.forward);
    const double h = std::hypot(outward, fwd);
    if (h <= 0.25 * std::sqrt(dotv(u, u))) continue;
    const double phi = std::atan2(fwd, outward);
    if (phi < -s.abduction_cap_rad + margin || phi > s.adduction_cap_rad - margin)
      return false;
  }
  return true;
}

/// Base signing pose: arms lowered and bent so both wrists rest in front of
/// the chest. Angles are well inside the default ROM.
PoseParams signing_pose(const SkeletonTemplate& tpl) {
  PoseParams p = PoseParams::zeros(tpl);
  const int lsho = tpl.find_joint("left_shoulder");
  const int rsho = tpl.find_joint("right_shoulder");
  const int lelb = tpl.find_joint("left_elbow");
  const int relb = tpl.find_joint("right_elbow");
  // Shoulder convention Z-X-Y; on the left, arm-down and arm-forward are the
  // negative directions. Elbow convention Y-Z-X with left flexion negative.
  p.joint_rotation(lsho, tpl) =
      aa_from_euler(deg(-75), 0, deg(-30), EulerOrder::ZXY);
  p.joint_rotation(rsho, tpl) =
      aa_from_euler(deg(75), 0, deg(30), EulerOrder::ZXY);
  p.joint_rotation(lelb, tpl) =
      aa_from_euler(deg(-100), 0, 0, EulerOrder::YZX);
  p.joint_rotation(relb, tpl) =
      aa_from_euler(deg(100), 0, 0, EulerOrder::YZX);
  return p;
}

}  // namespace

TEST_CASE("normalize_rom converts clinical degrees to signed bounds") {
  const auto right = normalize_rom(wrist_clinical(), Side::Right, "ZYX");
  CHECK(right[0].min_rad == doctest::Approx(-kPi / 2).epsilon(1e-15));
  CHECK(right[0].max_rad == doctest::Approx(kPi / 2).epsilon(1e-15));
  CHECK(right[1].min_rad == doctest::Approx(-deg(20)));
  CHECK(right[1].max_rad == doctest::Approx(deg(30)));

  const auto left = normalize_rom(wrist_clinical(), Side::Left, "ZYX");
  // Mirror-sensitive axes flip sign; the twist axis does not.
  CHECK(left[0].min_rad == doctest::Approx(-kPi / 2));
  CHECK(left[0].max_rad == doctest::Approx(kPi / 2));
  CHECK(left[1].min_rad == doctest::Approx(-deg(30)));
  CHECK(left[1].max_rad == doctest::Approx(deg(20)));
  CHECK(left[2].min_rad == right[2].min_rad);
  CHECK(left[2].max_rad == right[2].max_rad);

  CHECK_THROWS_AS(normalize_rom(wrist_clinical(), Side::Right, "XYX"),
                  UnknownConventionError);
  auto bad = wrist_clinical();
  bad[0].positive_deg = -10;
  CHECK_THROWS_AS(normalize_rom(bad, Side::Right, "ZYX"), ParseError);
}

TEST_CASE("mirroring twice is the identity") {
  const auto right = normalize_rom(wrist_clinical(), Side::Right, "ZYX");
  const auto twice = mirror_axes(mirror_axes(right));
  for (int i = 0; i < 3; ++i) {
    CHECK(twice[static_cast<std::size_t>(i)].min_rad ==
          right[static_cast<std::size_t>(i)].min_rad);
    CHECK(twice[static_cast<std::size_t>(i)].max_rad ==
          right[static_cast<std::size_t>(i)].max_rad);
  }
  const auto left = normalize_rom(wrist_clinical(), Side::Left, "ZYX");
  const auto mirrored = mirror_axes(right);
  for (int i = 0; i < 3; ++i) {
    CHECK(mirrored[static_cast<std::size_t>(i)].min_rad ==
          doctest::Approx(left[static_cast<std::size_t>(i)].min_rad));
    CHECK(mirrored[static_cast<std::size_t>(i)].max_rad ==
          doctest::Approx(left[static_cast<std::size_t>(i)].max_rad));
  }
}

TEST_CASE("default table is valid and matches the template layout") {
  const RomTable rom = default_rom();
  rom.validate();
  const SkeletonTemplate tpl = make_toy_template();
  REQUIRE(rom.body.size() == 6);
  for (const RomEntry& e : rom.body) CHECK(tpl.find_joint(e.joint) >= 0);
  REQUIRE(rom.left_hand.size() == 15);
  REQUIRE(rom.right_hand.size() == 15);
  for (int j = 0; j < 15; ++j) {
    CHECK(rom.left_hand[static_cast<std::size_t>(j)].joint ==
          tpl.joint_names[static_cast<std::size_t>(tpl.left_hand_start() + j)]);
    CHECK(rom.right_hand[static_cast<std::size_t>(j)].joint ==
          tpl.joint_names[static_cast<std::size_t>(tpl.right_hand_start() + j)]);
  }
  CHECK(rom.find("left_wrist") != nullptr);
  CHECK(rom.find("left_wrist")->convention == EulerOrder::ZYX);
  CHECK(rom.find("nope") == nullptr);
}

TEST_CASE("penalty is zero inside bounds and exactly quadratic outside") {
  const RomTable rom = default_rom();
  const auto& entries = rom.right_hand;
  std::mt19937 rng(7);

  std::vector<EulerTriple> inside;
  for (const RomEntry& e : entries) {
    EulerTriple t;
    t.convention = e.convention;
    for (int i = 0; i < 3; ++i) {
      const RomAxis& a = e.axes[static_cast<std::size_t>(i)];
      std::uniform_real_distribution<double> u(a.min_rad, a.max_rad);
      t.angles[static_cast<std::size_t>(i)] = u(rng);
    }
    inside.push_back(t);
  }
  CHECK(biomech_penalty(inside, entries) == 0.0);

  // One axis pushed past its max: penalty(max + 2d) = 4 * penalty(max + d).
  const double d = 0.05;
  auto bump = [&](double delta) {
    auto t = inside;
    t[3].angles[0] = entries[3].axes[0].max_rad + delta;
    return biomech_penalty(t, entries);
  };
  CHECK(bump(d) == doctest::Approx(d * d).epsilon(1e-12));
  CHECK(bump(2 * d) == doctest::Approx(4.0 * bump(d)).epsilon(1e-12));

  auto low = inside;
  low[8].angles[2] = entries[8].axes[2].min_rad - 0.1;
  CHECK(biomech_penalty(low, entries) == doctest::Approx(0.01).epsilon(1e-12));

  auto wrong = inside;
  wrong[0].convention = EulerOrder::XYZ;
  CHECK_THROWS_AS(biomech_penalty(wrong, entries), ConventionMismatchError);
  auto short_list = inside;
  short_list.pop_back();
  CHECK_THROWS_AS(biomech_penalty(short_list, entries), DimensionMismatchError);
}

TEST_CASE("rectifier is idempotent with zero post-penalty") {
  const RomTable rom = default_rom();
  std::mt19937 rng(11);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const auto start = std::chrono::steady_clock::now();
  int changed_count = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const bool left = trial % 2 == 0;
    const auto& entries = left ? rom.left_hand : rom.right_hand;
    std::vector<Vec3> pose;
    bool expect_valid = true;
    for (const RomEntry& e : entries) {
      double abc[3];
      for (int i = 0; i < 3; ++i) {
        const RomAxis& a = e.axes[static_cast<std::size_t>(i)];
        if (trial % 3 == 2 && unit(rng) < 0.25) {
          // Violation: push up to 0.6 rad outside either bound.
          const bool high = unit(rng) < 0.5;
          abc[i] = high ? a.max_rad + 0.01 + 0.6 * unit(rng)
                        : a.min_rad - 0.01 - 0.6 * unit(rng);
          expect_valid = false;
        } else {
          const double lo = a.min_rad + 0.01;
          const double hi = a.max_rad - 0.01;
          abc[i] = lo + (hi - lo) * unit(rng);
        }
      }
      pose.push_back(aa_from_euler(abc[0], abc[1], abc[2], e.convention));
    }

    const auto fixed = rectify_hand_frame(pose, entries);
    CHECK(biomech_penalty(decompose_hand(fixed, entries), entries) == 0.0);

    const auto twice = rectify_hand_frame(fixed, entries);
    for (std::size_t j = 0; j < fixed.size(); ++j)
      for (int i = 0; i < 3; ++i)
        CHECK(std::abs(twice[j][static_cast<std::size_t>(i)] -
                       fixed[j][static_cast<std::size_t>(i)]) < 1e-12);

    double max_change = 0;
    for (std::size_t j = 0; j < pose.size(); ++j)
      for (int i = 0; i < 3; ++i)
        max_change = std::max(max_change,
                              std::abs(fixed[j][static_cast<std::size_t>(i)] -
                                       pose[j][static_cast<std::size_t>(i)]));
    if (expect_valid) {
      CHECK(max_change < 1e-8);
    } else {
      CHECK(max_change > 1e-4);
      ++changed_count;
    }
  }
  CHECK(changed_count > 100);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start)
          .count();
  CHECK(secs < 30.0);
}

TEST_CASE("rectifier clamps a gimbal-locked decomposition") {
  const RomTable rom = default_rom();
  const auto& entries = rom.right_hand;
  std::vector<Vec3> pose(15, Vec3{0, 0, 0});
  // Middle (splay) angle exactly at pi/2, far outside every splay bound.
  pose[4] = aa_from_euler(0.3, kPi / 2, 0.0, entries[4].convention);
  const auto fixed = rectify_hand_frame(pose, entries);
  CHECK(biomech_penalty(decompose_hand(fixed, entries), entries) == 0.0);
  const auto twice = rectify_hand_frame(fixed, entries);
  for (int i = 0; i < 3; ++i)
    CHECK(twice[4][static_cast<std::size_t>(i)] ==
          doctest::Approx(fixed[4][static_cast<std::size_t>(i)]).epsilon(1e-12));
}

TEST_CASE("filter accepts a compliant signing set") {
  const SkeletonTemplate tpl = make_toy_template();
  const RomTable rom = default_rom();
  std::mt19937 rng(23);
  std::uniform_real_distribution<double> u(-1.0, 1.0);

  const PoseParams base = signing_pose(tpl);
  REQUIRE(strictly_in_signer_space(tpl, base, rom.space, 1e-4));
  const FilterResult fr = filter_body_frame(base, rom, rom.space, tpl);
  CHECK(fr.accept);
  CHECK(fr.reasons.empty());
  // Accepted frames have zero body penalty.
  CHECK(biomech_penalty(decompose_body(base, rom, tpl), rom.body) == 0.0);

  int accepted = 0, generated = 0;
  for (int trial = 0; trial < 4000 && accepted < 120; ++trial) {
    PoseParams p = base;
    auto perturb = [&](const char* joint, double a_deg, double b_deg,
                       double c_deg, EulerOrder order) {
      const int k = tpl.find_joint(joint);
      const EulerAngles e =
          matrix_to_euler(aa_to_matrix(p.joint_rotation(k, tpl)), order);
      p.joint_rotation(k, tpl) =
          aa_from_euler(e.a + deg(a_deg) * u(rng), e.b + deg(b_deg) * u(rng),
                        e.c + deg(c_deg) * u(rng), order);
    };
    perturb("left_shoulder", 10, 8, 10, EulerOrder::ZXY);
    perturb("right_shoulder", 10, 8, 10, EulerOrder::ZXY);
    perturb("left_elbow", 15, 4, 15, EulerOrder::YZX);
    perturb("right_elbow", 15, 4, 15, EulerOrder::YZX);
    perturb("left_wrist", 20, 10, 10, EulerOrder::ZYX);
    perturb("right_wrist", 20, 10, 10, EulerOrder::ZYX);
    // Keep only samples our independent geometry check says are valid.
    if (!strictly_in_signer_space(tpl, p, rom.space, 1e-4)) continue;
    if (biomech_penalty(decompose_body(p, rom, tpl), rom.body) != 0.0) continue;
    ++generated;
    const FilterResult r = filter_body_frame(p, rom, rom.space, tpl);
    if (r.accept) ++accepted;
  }
  REQUIRE(generated >= 120);
  CHECK(accepted == generated);
}

TEST_CASE("filter rejects a constructed violation set with named reasons") {
  const SkeletonTemplate tpl = make_toy_template();
  const RomTable rom = default_rom();
  const PoseParams base = signing_pose(tpl);

  int rejected = 0, total = 0;
  auto expect_reject = [&](const PoseParams& p, const std::string& needle) {
    ++total;
    const FilterResult r = filter_body_frame(p, rom, rom.space, tpl);
    if (!r.accept) ++rejected;
    CHECK(!r.accept);
    bool found = needle.empty();
    for (const std::string& why : r.reasons) {
      CHECK(!why.empty());
      if (!needle.empty() && why.find(needle) != std::string::npos) found = true;
    }
    CHECK(found);
  };

  // T-pose: wrists far outside the signing box.
  expect_reject(PoseParams::zeros(tpl), "signer space");

  // Arms hanging at the sides: below and behind the box.
  {
    PoseParams p = PoseParams::zeros(tpl);
    p.joint_rotation(tpl.find_joint("left_shoulder"), tpl) =
        aa_from_euler(deg(-88), 0, 0, EulerOrder::ZXY);
    p.joint_rotation(tpl.find_joint("right_shoulder"), tpl) =
        aa_from_euler(deg(88), 0, 0, EulerOrder::ZXY);
    expect_reject(p, "signer space");
  }

  // Elbow hyperextension past the ROM bound.
  {
    PoseParams p = base;
    p.joint_rotation(tpl.find_joint("left_elbow"), tpl) =
        aa_from_euler(deg(30), 0, 0, EulerOrder::YZX);
    expect_reject(p, "left_elbow bend");
  }

  // Wrist bent far past flexion range.
  {
    PoseParams p = base;
    p.joint_rotation(tpl.find_joint("left_wrist"), tpl) =
        aa_from_euler(deg(-120), 0, 0, EulerOrder::ZYX);
    expect_reject(p, "left_wrist bend");
  }

  // Overly elevated arm.
  {
    PoseParams p = base;
    p.joint_rotation(tpl.find_joint("left_shoulder"), tpl) =
        aa_from_euler(deg(88), 0, deg(-30), EulerOrder::ZXY);
    expect_reject(p, "left_shoulder bend");
  }

  // Horizontal arm pulled behind the torso.
  {
    PoseParams p = base;
    p.joint_rotation(tpl.find_joint("left_shoulder"), tpl) =
        aa_from_euler(deg(-20), 0, deg(35), EulerOrder::ZXY);
    expect_reject(p, "abduction");
  }

  // Gimbal-locked shoulder decomposition is rejected conservatively.
  {
    PoseParams p = base;
    p.joint_rotation(tpl.find_joint("right_shoulder"), tpl) =
        aa_from_euler(0.4, kPi / 2, 0.0, EulerOrder::ZXY);
    expect_reject(p, "gimbal");
  }

  // Randomized single-joint ROM violations.
  std::mt19937 rng(31);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int trial = 0; trial < 60; ++trial) {
    PoseParams p = base;
    const RomEntry& e = rom.body[static_cast<std::size_t>(trial % 6)];
    const int axis = trial % 3;
    const RomAxis& a = e.axes[static_cast<std::size_t>(axis)];
    double abc[3] = {0, 0, 0};
    const EulerAngles cur = matrix_to_euler(
        aa_to_matrix(base.joint_rotation(tpl.find_joint(e.joint), tpl)),
        e.convention);
    abc[0] = cur.a;
    abc[1] = cur.b;
    abc[2] = cur.c;
    const bool high = unit(rng) < 0.5;
    // Keep the middle axis clear of the pi/2 band while still violating.
    const double bump = 0.05 + 0.2 * unit(rng);
    abc[axis] = high ? a.max_rad + bump : a.min_rad - bump;
    p.joint_rotation(tpl.find_joint(e.joint), tpl) =
        aa_from_euler(abc[0], abc[1], abc[2], e.convention);
    expect_reject(p, e.joint);
  }

  CHECK(rejected == total);
}

TEST_CASE("rom json round trip and shipped default file") {
  const RomTable rom = default_rom();
  const json j = rom_to_json(rom);
  const RomTable back = rom_from_json(j);

  auto same = [](const RomTable& x, const RomTable& y) {
    auto eq_list = [](const std::vector<RomEntry>& a,
                      const std::vector<RomEntry>& b) {
      REQUIRE(a.size() == b.size());
      for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].joint == b[i].joint);
        CHECK(a[i].convention == b[i].convention);
        CHECK(a[i].side == b[i].side);
        for (int k = 0; k < 3; ++k) {
          CHECK(std::abs(a[i].axes[static_cast<std::size_t>(k)].min_rad -
                         b[i].axes[static_cast<std::size_t>(k)].min_rad) < 1e-9);
          CHECK(std::abs(a[i].axes[static_cast<std::size_t>(k)].max_rad -
                         b[i].axes[static_cast<std::size_t>(k)].max_rad) < 1e-9);
          CHECK(a[i].axes[static_cast<std::size_t>(k)].mirror ==
                b[i].axes[static_cast<std::size_t>(k)].mirror);
          CHECK(a[i].axes[static_cast<std::size_t>(k)].label ==
                b[i].axes[static_cast<std::size_t>(k)].label);
        }
      }
    };
    eq_list(x.body, y.body);
    eq_list(x.left_hand, y.left_hand);
    eq_list(x.right_hand, y.right_hand);
    CHECK(x.space.lateral_halfwidths == doctest::Approx(y.space.lateral_halfwidths));
    CHECK(x.space.vertical_low_torso == doctest::Approx(y.space.vertical_low_torso));
    CHECK(x.space.vertical_high_torso == doctest::Approx(y.space.vertical_high_torso));
    CHECK(x.space.depth_near_torso == doctest::Approx(y.space.depth_near_torso));
    CHECK(x.space.depth_far_torso == doctest::Approx(y.space.depth_far_torso));
    CHECK(x.space.abduction_cap_rad ==
          doctest::Approx(y.space.abduction_cap_rad).epsilon(1e-12));
    CHECK(x.space.adduction_cap_rad ==
          doctest::Approx(y.space.adduction_cap_rad).epsilon(1e-12));
  };
  same(rom, back);

  const char* dir = std::getenv("DEXFIT_DATA_DIR");
  REQUIRE(dir != nullptr);
  const RomTable shipped =
      rom_from_json(load_json_file(std::string(dir) + "/rom_default.json"));
  same(rom, shipped);

  json bad = j;
  bad["schema_version"] = 99;
  CHECK_THROWS_AS(rom_from_json(bad), ParseError);
  json missing = j;
  missing.erase("signer_space");
  CHECK_THROWS_AS(rom_from_json(missing), ParseError);
}
