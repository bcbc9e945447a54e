#pragma once

#include <array>
#include <string>
#include <vector>

#include "dexfit/body_model.hpp"

namespace dexfit {

enum class Side { Central, Left, Right };

Side parse_side(const std::string& s);
std::string side_name(Side side);

/// Unsigned clinical range for one rotation axis, as authored in config.
struct ClinicalAxis {
  std::string label;        // bend | splay | twist | tolerance
  double positive_deg = 0;  // magnitude of the +axis motion (right/central side)
  double negative_deg = 0;  // magnitude of the -axis motion
  bool mirror = false;      // axis flips sign across the sagittal plane
};

/// Signed bounds for one rotation axis, radians.
struct RomAxis {
  double min_rad = 0;
  double max_rad = 0;
  bool mirror = false;
  std::string label;
};

struct RomEntry {
  std::string joint;  // template joint name
  EulerOrder convention = EulerOrder::XYZ;
  Side side = Side::Central;
  std::array<RomAxis, 3> axes;  // in convention order
};

/// Converts unsigned clinical magnitudes to signed right-hand-rule bounds;
/// Side::Left mirrors the mirror-sensitive axes. Raises
/// UnknownConventionError for an invalid convention string.
std::array<RomAxis, 3> normalize_rom(const std::array<ClinicalAxis, 3>& clinical,
                                     Side side, const std::string& convention);

/// Sign-flips every mirror-sensitive axis ([min,max] -> [-max,-min]).
std::array<RomAxis, 3> mirror_axes(const std::array<RomAxis, 3>& axes);

/// Euler decomposition tagged with its convention.
struct EulerTriple {
  Vec3 angles = {0, 0, 0};
  EulerOrder convention = EulerOrder::XYZ;
};

/// Torso-anchored signer-space box, in template proportions, plus shoulder
/// horizontal-plane caps. Defaults follow the shipped config; they are
/// configuration, not anatomical ground truth.
struct SignerSpace {
  double lateral_halfwidths = 1.2;   // multiples of shoulder half-width
  double vertical_low_torso = -0.3;  // torso lengths below the shoulder line
  double vertical_high_torso = 0.65; // torso lengths above the shoulder line
  double depth_near_torso = 0.05;    // torso lengths in front of the chest
  double depth_far_torso = 0.8;
  double abduction_cap_rad = 0.0;    // horizontal abduction behind the torso
  double adduction_cap_rad = 2.2689280275926285;  // 130 degrees
};

struct RomTable {
  std::vector<RomEntry> body;        // 6 constrained joints
  std::vector<RomEntry> left_hand;   // 15 joints, template order
  std::vector<RomEntry> right_hand;  // 15 joints, template order
  SignerSpace space;

  const RomEntry* find(const std::string& joint) const;
  /// Checks sizes, min <= max, and the left/right mirror invariant.
  void validate() const;
};

/// Built-in default table matching data/rom_default.json.
RomTable default_rom();

/// Eq.-style quadratic penalty: sum_j ||max(theta - max, min - theta, 0)||^2.
/// Raises ConventionMismatchError when triple j and entry j disagree.
double biomech_penalty(const std::vector<EulerTriple>& pose_angles,
                       const std::vector<RomEntry>& entries);

/// Decomposes one joint rotation under the entry's convention.
EulerTriple euler_of(const Vec3& axis_angle, EulerOrder convention);

struct FilterResult {
  bool accept = true;
  std::vector<std::string> reasons;
};

/// Accepts a frame iff the 6 constrained body joints are inside ROM, both
/// wrists are inside the signer-space box, and both shoulders respect the
/// horizontal abduction/adduction caps. Gimbal-locked decompositions are
/// rejected conservatively.
FilterResult filter_body_frame(const PoseParams& pose, const RomTable& rom,
                               const SignerSpace& space,
                               const SkeletonTemplate& tpl);

/// Per-axis Euler clamping of 15 hand joints; idempotent, and the result
/// always has zero biomech penalty.
std::vector<Vec3> rectify_hand_frame(const std::vector<Vec3>& hand_pose,
                                     const std::vector<RomEntry>& hand_entries);

}  // namespace dexfit
