#pragma once

#include <array>
#include <string>

#include "dexfit/common.hpp"

namespace dexfit {

/// 3x3 rotation matrix, row-major.
using Mat3 = std::array<double, 9>;
/// 3-vector (axis-angle, position, Euler triple).
using Vec3 = std::array<double, 3>;

/// The six intrinsic Tait-Bryan orders. "XYZ" means: rotate about the body
/// X axis, then the new Y axis, then the new Z axis.
enum class EulerOrder { XYZ, XZY, YXZ, YZX, ZXY, ZYX };

EulerOrder parse_euler_order(const std::string& s);
std::string euler_order_name(EulerOrder order);

/// Axis indices (first, second, third) and permutation sign of an order;
/// eps is +1 for XYZ/YZX/ZXY and -1 for the odd permutations.
struct EulerOrderInfo {
  int i, j, k;
  double eps;
};
EulerOrderInfo euler_order_info(EulerOrder order);

struct EulerAngles {
  double a = 0.0;  ///< first rotation, radians
  double b = 0.0;  ///< second rotation, in [-pi/2, pi/2]
  double c = 0.0;  ///< third rotation
  bool gimbal_lock = false;
};

Mat3 identity3();
Mat3 matmul3(const Mat3& A, const Mat3& B);
Mat3 transpose3(const Mat3& M);
Vec3 apply3(const Mat3& M, const Vec3& v);
double det3(const Mat3& M);

/// Squared Frobenius norm of M M^T - I. Zero iff M is orthogonal.
double orthogonality_defect(const Mat3& M);

/// sqrt(orthogonality_defect) <= tol and det(M) > 0.
bool is_rotation(const Mat3& M, double tol = 1e-6);

/// Rodrigues map. Stable at theta -> 0 via series expansion.
Mat3 aa_to_matrix(const Vec3& aa);

/// Equivalent axis-angle with angle in [0, pi] (flips the axis when the
/// reduced angle is negative).
Vec3 canonicalize_aa(const Vec3& aa);

/// Log map, canonical angle in [0, pi]. At pi the axis sign is chosen
/// deterministically. Raises NotARotationError when the orthogonality
/// defect exceeds tol or det <= 0.
Vec3 matrix_to_aa(const Mat3& R, double tol = 1e-4);

/// Rotation about a single coordinate axis (0 = X, 1 = Y, 2 = Z).
Mat3 axis_rotation(int axis, double angle);

Mat3 euler_to_matrix(double a, double b, double c, EulerOrder order);
Mat3 euler_to_matrix(const Vec3& abc, EulerOrder order);

/// Extracts intrinsic Tait-Bryan angles. When the middle angle is within
/// 1e-6 of +-pi/2 the third angle is fixed to zero, the remaining freedom
/// folded into the first, and gimbal_lock is set. Raises NotARotationError
/// when the orthogonality defect exceeds tol or det <= 0.
EulerAngles matrix_to_euler(const Mat3& R, EulerOrder order, double tol = 1e-4);

/// Nearest rotation in Frobenius norm (special orthogonal Procrustes with
/// determinant correction). Raises DegenerateMatrixError when rank(M) < 2.
Mat3 project_to_rotation(const Mat3& M);

/// Angle of A^T B, in [0, pi].
double geodesic_angle(const Mat3& A, const Mat3& B);

}  // namespace dexfit
