#include "dexfit/rotations.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

namespace dexfit {

namespace {

using OrderInfo = EulerOrderInfo;

OrderInfo order_info(EulerOrder order) {
  switch (order) {
    case EulerOrder::XYZ: return {0, 1, 2, +1.0};
    case EulerOrder::XZY: return {0, 2, 1, -1.0};
    case EulerOrder::YXZ: return {1, 0, 2, -1.0};
    case EulerOrder::YZX: return {1, 2, 0, +1.0};
    case EulerOrder::ZXY: return {2, 0, 1, +1.0};
    case EulerOrder::ZYX: return {2, 1, 0, -1.0};
  }
  throw UnknownConventionError("invalid EulerOrder enum value");
}

constexpr double kGimbalBand = 1e-6;  // radians from +-pi/2

double clamp1(double x) { return std::clamp(x, -1.0, 1.0); }

// Maps atan2's -pi edge into the canonical (-pi, pi] range.
double wrap_half_open(double a) { return a == -M_PI ? M_PI : a; }

void check_rotation(const Mat3& R, double tol, const char* where) {
  const double d = orthogonality_defect(R);
  if (!(d <= tol) || det3(R) <= 0.0) {
    throw NotARotationError(std::string(where) + ": orthogonality defect " +
                            std::to_string(d) + " exceeds tolerance " +
                            std::to_string(tol) + " or det <= 0");
  }
}

}  // namespace

EulerOrder parse_euler_order(const std::string& s) {
  if (s == "XYZ") return EulerOrder::XYZ;
  if (s == "XZY") return EulerOrder::XZY;
  if (s == "YXZ") return EulerOrder::YXZ;
  if (s == "YZX") return EulerOrder::YZX;
  if (s == "ZXY") return EulerOrder::ZXY;
  if (s == "ZYX") return EulerOrder::ZYX;
  throw UnknownConventionError("unknown Euler order '" + s + "'");
}

std::string euler_order_name(EulerOrder order) {
  const OrderInfo o = order_info(order);
  const char axis[3] = {'X', 'Y', 'Z'};
  return std::string{axis[o.i], axis[o.j], axis[o.k]};
}

EulerOrderInfo euler_order_info(EulerOrder order) { return order_info(order); }

Mat3 identity3() { return {1, 0, 0, 0, 1, 0, 0, 0, 1}; }

Mat3 matmul3(const Mat3& A, const Mat3& B) {
  Mat3 C{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (int l = 0; l < 3; ++l) acc += A[3 * i + l] * B[3 * l + j];
      C[3 * i + j] = acc;
    }
  return C;
}

Mat3 transpose3(const Mat3& M) {
  return {M[0], M[3], M[6], M[1], M[4], M[7], M[2], M[5], M[8]};
}

Vec3 apply3(const Mat3& M, const Vec3& v) {
  return {M[0] * v[0] + M[1] * v[1] + M[2] * v[2],
          M[3] * v[0] + M[4] * v[1] + M[5] * v[2],
          M[6] * v[0] + M[7] * v[1] + M[8] * v[2]};
}

double det3(const Mat3& M) {
  return M[0] * (M[4] * M[8] - M[5] * M[7]) -
         M[1] * (M[3] * M[8] - M[5] * M[6]) +
         M[2] * (M[3] * M[7] - M[4] * M[6]);
}

double orthogonality_defect(const Mat3& M) {
  const Mat3 G = matmul3(M, transpose3(M));
  double s = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      const double d = G[3 * i + j] - (i == j ? 1.0 : 0.0);
      s += d * d;
    }
  return s;
}

bool is_rotation(const Mat3& M, double tol) {
  return std::sqrt(orthogonality_defect(M)) <= tol && det3(M) > 0.0;
}

Mat3 aa_to_matrix(const Vec3& aa) {
  const double t2 = aa[0] * aa[0] + aa[1] * aa[1] + aa[2] * aa[2];
  const double t = std::sqrt(t2);
  double A, B;  // sin(t)/t, (1-cos(t))/t^2
  if (t < 1e-4) {
    A = 1.0 - t2 / 6.0 + t2 * t2 / 120.0;
    B = 0.5 - t2 / 24.0 + t2 * t2 / 720.0;
  } else {
    A = std::sin(t) / t;
    B = (1.0 - std::cos(t)) / t2;
  }
  const double wx = aa[0], wy = aa[1], wz = aa[2];
  Mat3 R;
  R[0] = 1.0 - B * (wy * wy + wz * wz);
  R[1] = -A * wz + B * wx * wy;
  R[2] = A * wy + B * wx * wz;
  R[3] = A * wz + B * wx * wy;
  R[4] = 1.0 - B * (wx * wx + wz * wz);
  R[5] = -A * wx + B * wy * wz;
  R[6] = -A * wy + B * wx * wz;
  R[7] = A * wx + B * wy * wz;
  R[8] = 1.0 - B * (wx * wx + wy * wy);
  return R;
}

Vec3 canonicalize_aa(const Vec3& aa) {
  double t = std::sqrt(aa[0] * aa[0] + aa[1] * aa[1] + aa[2] * aa[2]);
  if (t == 0.0) return {0.0, 0.0, 0.0};
  double r = std::fmod(t, 2.0 * M_PI);
  if (r > M_PI) r -= 2.0 * M_PI;  // in (-pi, pi]; negative means flipped axis
  const double scale = r / t;
  return {aa[0] * scale, aa[1] * scale, aa[2] * scale};
}

Vec3 matrix_to_aa(const Mat3& R, double tol) {
  check_rotation(R, tol, "matrix_to_aa");
  // Via unit quaternion (Shepperd's branch selection), robust near 0 and pi.
  const double tr = R[0] + R[4] + R[8];
  double qw, qx, qy, qz;
  if (tr > 0.0) {
    const double s = std::sqrt(tr + 1.0) * 2.0;
    qw = 0.25 * s;
    qx = (R[7] - R[5]) / s;
    qy = (R[2] - R[6]) / s;
    qz = (R[3] - R[1]) / s;
  } else if (R[0] > R[4] && R[0] > R[8]) {
    const double s = std::sqrt(1.0 + R[0] - R[4] - R[8]) * 2.0;
    qw = (R[7] - R[5]) / s;
    qx = 0.25 * s;
    qy = (R[1] + R[3]) / s;
    qz = (R[2] + R[6]) / s;
  } else if (R[4] > R[8]) {
    const double s = std::sqrt(1.0 + R[4] - R[0] - R[8]) * 2.0;
    qw = (R[2] - R[6]) / s;
    qx = (R[1] + R[3]) / s;
    qy = 0.25 * s;
    qz = (R[5] + R[7]) / s;
  } else {
    const double s = std::sqrt(1.0 + R[8] - R[0] - R[4]) * 2.0;
    qw = (R[3] - R[1]) / s;
    qx = (R[2] + R[6]) / s;
    qy = (R[5] + R[7]) / s;
    qz = 0.25 * s;
  }
  if (qw < 0.0) {
    qw = -qw;
    qx = -qx;
    qy = -qy;
    qz = -qz;
  }
  const double vn = std::sqrt(qx * qx + qy * qy + qz * qz);
  const double theta = 2.0 * std::atan2(vn, qw);
  if (vn < 1e-300) return {0.0, 0.0, 0.0};
  const double scale = theta / vn;
  return {qx * scale, qy * scale, qz * scale};
}

Mat3 axis_rotation(int axis, double angle) {
  const double c = std::cos(angle), s = std::sin(angle);
  switch (axis) {
    case 0: return {1, 0, 0, 0, c, -s, 0, s, c};
    case 1: return {c, 0, s, 0, 1, 0, -s, 0, c};
    case 2: return {c, -s, 0, s, c, 0, 0, 0, 1};
    default: throw UnknownConventionError("axis_rotation: axis must be 0, 1 or 2");
  }
}

Mat3 euler_to_matrix(double a, double b, double c, EulerOrder order) {
  const OrderInfo o = order_info(order);
  return matmul3(matmul3(axis_rotation(o.i, a), axis_rotation(o.j, b)),
                 axis_rotation(o.k, c));
}

Mat3 euler_to_matrix(const Vec3& abc, EulerOrder order) {
  return euler_to_matrix(abc[0], abc[1], abc[2], order);
}

EulerAngles matrix_to_euler(const Mat3& R, EulerOrder order, double tol) {
  check_rotation(R, tol, "matrix_to_euler");
  const OrderInfo o = order_info(order);
  auto at = [&](int r, int c) { return R[3 * r + c]; };

  EulerAngles out;
  const double sb = clamp1(o.eps * at(o.i, o.k));
  out.b = std::asin(sb);
  if (M_PI / 2.0 - std::abs(out.b) < kGimbalBand) {
    // First and third axes are (nearly) aligned; only one combination of
    // (a, c) is observable. Fix c = 0 and fold the combination into a.
    out.c = 0.0;
    const double sgn = sb > 0.0 ? 1.0 : -1.0;
    out.a = wrap_half_open(std::atan2(sgn * at(o.j, o.i), at(o.j, o.j)));
    out.gimbal_lock = true;
    return out;
  }
  out.a = wrap_half_open(std::atan2(-o.eps * at(o.j, o.k), at(o.k, o.k)));
  out.c = wrap_half_open(std::atan2(-o.eps * at(o.i, o.j), at(o.i, o.i)));
  out.gimbal_lock = false;
  return out;
}

Mat3 project_to_rotation(const Mat3& M) {
  Eigen::Matrix3d A;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) A(i, j) = M[3 * i + j];
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(A, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::Vector3d sv = svd.singularValues();
  const double flip = (svd.matrixU() * svd.matrixV().transpose()).determinant();
  if (sv(1) <= 1e-12 * std::max(sv(0), 1.0)) {
    throw DegenerateMatrixError("project_to_rotation: input rank < 2");
  }
  Eigen::Matrix3d D = Eigen::Matrix3d::Identity();
  if (flip < 0.0) D(2, 2) = -1.0;
  const Eigen::Matrix3d Rm = svd.matrixU() * D * svd.matrixV().transpose();
  Mat3 R;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) R[3 * i + j] = Rm(i, j);
  return R;
}

double geodesic_angle(const Mat3& A, const Mat3& B) {
  const Mat3 C = matmul3(transpose3(A), B);
  const double tr = C[0] + C[4] + C[8];
  return std::acos(clamp1((tr - 1.0) / 2.0));
}

}  // namespace dexfit
