#pragma once

#include <vector>

#include "dexfit/body_model.hpp"
#include "dexfit/tape.hpp"

namespace dexfit {

/// Rodrigues map as a differentiable primitive: {3} axis-angle -> {3,3}.
Var rodrigues(Var aa);

/// Log map {3,3} -> {3} (canonical angle in [0, pi]). The backward pass is
/// the exact adjoint on the rotation manifold; off-manifold inputs should
/// pass through project_rotation first.
Var rotation_log(Var R);

/// Nearest-rotation projection {3,3} -> {3,3}. Backward uses the
/// orthogonal-case closed form and raises NotARotationError when the input
/// squared orthogonality defect is not < 1e-2.
Var project_rotation(Var M);

/// Differentiable intrinsic Tait-Bryan extraction; valid away from the
/// gimbal band (|middle angle| near pi/2 makes asin ill-conditioned).
Var euler_angles(Var R, EulerOrder order);

/// R {3,3} times v {3} -> {3}.
Var matvec3(Var R, Var v);

Var dot3(Var a, Var b);
Var norm3(Var a);

/// Kinematic chain as tape nodes. rotations[k] may be an invalid Var, which
/// means a constant identity (that joint is not optimized and its world
/// transform aliases the parent's).
struct DiffFk {
  std::vector<Var> world_R;  // K entries, {3,3}
  std::vector<Var> joints;   // K entries, {3}
  std::vector<Var> skin_R;   // K entries, {3,3}
  std::vector<Var> skin_t;   // K entries, {3}
};

DiffFk build_fk(Tape& tape, const SkeletonTemplate& tpl,
                const std::vector<Vec3>& rest_joints,
                const std::vector<Var>& rotations, Var root_trans);

/// Skinned vertex coordinates as three {N,1} columns.
struct DiffVertices {
  Var x, y, z;
  std::int64_t count = 0;
};

DiffVertices lbs_vertices(Tape& tape, const SkeletonTemplate& tpl,
                          const std::vector<double>& shaped_vertices,
                          const DiffFk& fk);

/// Pinhole projection of one point; each field is a {1} tensor. The caller
/// must check depth.value() before using x/y (behind-camera handling is a
/// fitting-level policy).
struct DiffPixel {
  Var x, y, depth;
};

DiffPixel project_point(Tape& tape, const Camera& cam, Var point);

}  // namespace dexfit
