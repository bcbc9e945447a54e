#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dexfit/rotations.hpp"

namespace dexfit {

/// Rigid transform: x -> R x + t.
struct Transform {
  Mat3 R = identity3();
  Vec3 t = {0, 0, 0};
};

Transform compose(const Transform& A, const Transform& B);
Vec3 apply(const Transform& T, const Vec3& p);

/// Named joint/vertex index sets used by metrics and masking.
struct Region {
  std::vector<int> joints;
  std::vector<std::int64_t> vertices;
};

/// Articulated template: kinematic tree, rest vertices, skinning weights,
/// shape blendshapes and joint regressor. Layout is fixed: root, 21 body
/// joints, 15 left-hand joints, 15 right-hand joints.
struct SkeletonTemplate {
  std::vector<std::string> joint_names;
  std::vector<int> parents;                 // parent[k] < k, root has -1
  std::vector<Vec3> rest_offsets;           // offset from parent at zero shape
  int body_joint_count = 21;
  int hand_joint_count = 15;
  int shape_dim = 10;
  std::int64_t vertex_count = 0;
  std::vector<double> vertices;             // N*3 rest positions, meters
  std::vector<int> weight_joints;           // N*4, -1 padded
  std::vector<double> weight_values;        // N*4, row sums to 1
  std::vector<double> shape_dirs;           // N*3*shape_dim
  std::vector<double> joint_regressor;      // K*N
  std::map<std::string, Region> regions;    // FBody, UBody, UBody-H, UBody-F,
                                            // LHand, RHand
  std::map<std::string, std::vector<int>> joint_groups;
                                            // lower_body, left_arm, right_arm,
                                            // left_hand, right_hand, torso
  unsigned seed = 0;

  int joint_count() const { return static_cast<int>(parents.size()); }
  int left_hand_start() const { return 1 + body_joint_count; }
  int right_hand_start() const { return 1 + body_joint_count + hand_joint_count; }
  int find_joint(const std::string& name) const;  // -1 when absent

  /// Vertical extent of the rest vertices, meters.
  double body_height() const;

  /// Raises ShapeError / ParseError when a structural invariant is broken.
  void validate() const;
};

/// Pose and shape state; the flat serialization order is fixed as
/// (root_orient, root_trans, body, left hand, right hand, shape).
struct PoseParams {
  Vec3 root_orient = {0, 0, 0};
  Vec3 root_trans = {0, 0, 0};
  std::vector<Vec3> body_pose;        // body_joint_count entries
  std::vector<Vec3> left_hand_pose;   // hand_joint_count entries
  std::vector<Vec3> right_hand_pose;  // hand_joint_count entries
  std::vector<double> shape;          // shape_dim entries

  static PoseParams zeros(const SkeletonTemplate& tpl);
  std::vector<double> flat() const;
  static PoseParams from_flat(const std::vector<double>& x,
                              const SkeletonTemplate& tpl);

  /// Axis-angle of joint k (root = root_orient).
  const Vec3& joint_rotation(int k, const SkeletonTemplate& tpl) const;
  Vec3& joint_rotation(int k, const SkeletonTemplate& tpl);
};

/// Pinhole camera with rigid extrinsics.
struct Camera {
  double fx = 1000, fy = 1000, cx = 500, cy = 500;
  Mat3 rotation = identity3();
  Vec3 translation = {0, 0, 0};
};

struct Pixel {
  double x = 0, y = 0;
};

/// vertices = T_bar + S * beta; rest_joints = regressor * vertices.
void shaped_template(const SkeletonTemplate& tpl, const std::vector<double>& shape,
                     std::vector<double>& vertices_out,
                     std::vector<Vec3>& rest_joints_out);

struct FkResult {
  std::vector<Vec3> joints;        // world joint positions
  std::vector<Transform> world;    // per-joint world transform A_k
  std::vector<Transform> skinning; // G_k = A_k * translate(-rest joint)
  std::vector<Vec3> rest_joints;
};

FkResult forward_kinematics(const SkeletonTemplate& tpl, const PoseParams& pose);

/// Linear blend skinning; zero pose reproduces the shaped template exactly.
std::vector<double> skin_vertices(const SkeletonTemplate& tpl,
                                  const PoseParams& pose);
std::vector<double> skin_vertices(const SkeletonTemplate& tpl,
                                  const std::vector<double>& shaped_vertices,
                                  const std::vector<Transform>& skinning);

constexpr double kMinCameraDepth = 1e-6;

/// Strict projection: raises BehindCameraError naming the first bad point.
std::vector<Pixel> project(const Camera& cam, const std::vector<Vec3>& points);

/// Masked projection: valid[i] = 0 when point i has camera depth <= 1e-6;
/// such pixels are left at (0, 0).
void project_masked(const Camera& cam, const std::vector<Vec3>& points,
                    std::vector<Pixel>& pixels, std::vector<std::uint8_t>& valid);

struct ToyTemplateConfig {
  std::int64_t vertex_count = 600;
  int shape_dim = 10;
  unsigned seed = 1;
};

/// Deterministic procedural humanoid (T-pose, meters, +Y up, +Z forward,
/// +X subject's left). Each joint carries a 4-vertex ring whose mean is the
/// joint position, so the regressor reproduces joints exactly; remaining
/// vertices sample per-bone capsules with distance-falloff weights.
SkeletonTemplate make_toy_template(const ToyTemplateConfig& cfg = {});

}  // namespace dexfit
