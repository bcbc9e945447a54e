#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <random>

#include "dexfit/rotations.hpp"

using namespace dexfit;

namespace {

double frob_diff(const Mat3& A, const Mat3& B) {
  double s = 0.0;
  for (int i = 0; i < 9; ++i) s += (A[i] - B[i]) * (A[i] - B[i]);
  return std::sqrt(s);
}

// Haar-uniform rotation from a random unit quaternion, independent of the
// axis-angle code under test.
Mat3 random_rotation(std::mt19937& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  double q[4] = {g(rng), g(rng), g(rng), g(rng)};
  double n = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]);
  for (auto& v : q) v /= n;
  const double w = q[0], x = q[1], y = q[2], z = q[3];
  return {1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
          2 * (x * y + w * z),     1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
          2 * (x * z - w * y),     2 * (y * z + w * x), 1 - 2 * (x * x + y * y)};
}

const EulerOrder kOrders[] = {EulerOrder::XYZ, EulerOrder::XZY, EulerOrder::YXZ,
                              EulerOrder::YZX, EulerOrder::ZXY, EulerOrder::ZYX};

}  // namespace

TEST_CASE("axis-angle of elementary rotations") {
  const Mat3 I = aa_to_matrix({0, 0, 0});
  CHECK(frob_diff(I, identity3()) == doctest::Approx(0.0).epsilon(1e-15));

  const Mat3 half_x = aa_to_matrix({M_PI, 0, 0});
  const Mat3 half_x_ref = {1, 0, 0, 0, -1, 0, 0, 0, -1};
  CHECK(frob_diff(half_x, half_x_ref) < 1e-12);

  const Mat3 quarter_z = aa_to_matrix({0, 0, M_PI / 2});
  const Mat3 quarter_z_ref = {0, -1, 0, 1, 0, 0, 0, 0, 1};
  CHECK(frob_diff(quarter_z, quarter_z_ref) < 1e-12);
}

TEST_CASE("axis-angle matches frozen oracle matrices") {
  const Mat3 got1 = aa_to_matrix({0.1, 0.2, 0.3});
  const Mat3 ref1 = {
      0.93575480327791882,  -0.28316496056507368, 0.21019170595074282,
      0.30293271340263705,  0.95058061790609139,  -0.068031316404940007,
      -0.1805400766943977,  0.12733457491763026,  0.97529030895304569};
  CHECK(frob_diff(got1, ref1) < 1e-14);

  const Mat3 got2 = aa_to_matrix({-1.2, 0.7, 2.1});
  const Mat3 ref2 = {
      -0.40024701508911975, -0.72711435835915439, -0.5577696986931121,
      0.24702966747145627,  -0.67172347719823478, 0.69840096904976745,
      -0.88248437396998225, 0.14174724000370426,  0.44847413487306109};
  CHECK(frob_diff(got2, ref2) < 1e-13);
}

TEST_CASE("euler composition matches frozen oracle matrices") {
  const Mat3 g1 = euler_to_matrix(0.3, 0.5, -0.7, EulerOrder::XYZ);
  const Mat3 r1 = {
      0.6712121661589574,   0.5653542083811437,    0.47942553860420301,
      -0.50708187275444627, 0.82195436950412726,   -0.25934338005223073,
      -0.54068678763591338, -0.069033568057884756, 0.83838664359420334};
  CHECK(frob_diff(g1, r1) < 1e-14);

  const Mat3 g2 = euler_to_matrix(0.4, -0.9, 1.3, EulerOrder::ZYX);
  const Mat3 r2 = {
      0.57254069525747986, -0.7993683397647926,   0.18222900333306036,
      0.24206632340649498, -0.047542850501493539, -0.96909420204573238,
      0.78332690962748341, 0.59895737306412011,   0.16627993837376975};
  CHECK(frob_diff(g2, r2) < 1e-14);

  const Mat3 g3 = euler_to_matrix(-0.2, 1.1, 0.6, EulerOrder::YZX);
  const Mat3 r3 = {
      0.44455439844762579,  -0.83306038437548469, 0.32921388610603752,
      0.89120736006143519,  0.37436903379742392,  -0.25611963592413267,
      0.090115637894854744, 0.40725694901100551,  0.90885694654827298};
  CHECK(frob_diff(g3, r3) < 1e-14);
}

TEST_CASE("small-angle Rodrigues is series-stable") {
  const Vec3 tiny = {1e-9, -2e-9, 5e-10};
  const Mat3 R = aa_to_matrix(tiny);
  CHECK(orthogonality_defect(R) < 1e-28);
  const Vec3 back = matrix_to_aa(R);
  for (int i = 0; i < 3; ++i) CHECK(back[i] == doctest::Approx(tiny[i]).epsilon(1e-6));
}

TEST_CASE("orthogonality defect closed forms") {
  std::mt19937 rng(4);
  CHECK(orthogonality_defect(random_rotation(rng)) < 1e-28);
  Mat3 twoI{};
  twoI[0] = twoI[4] = twoI[8] = 2.0;
  CHECK(orthogonality_defect(twoI) == doctest::Approx(27.0).epsilon(1e-14));

  // Direct-summation oracle on a random matrix.
  std::normal_distribution<double> g(0.0, 1.0);
  Mat3 M;
  for (auto& v : M) v = g(rng);
  double want = 0.0;
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double e = -(i == j ? 1.0 : 0.0);
      for (int l = 0; l < 3; ++l) e += M[3 * i + l] * M[3 * j + l];
      want += e * e;
    }
  CHECK(orthogonality_defect(M) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("axis-angle canonicalization and transpose symmetry") {
  std::mt19937 rng(5);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int s = 0; s < 200; ++s) {
    Vec3 v = {g(rng), g(rng), g(rng)};
    const double scale = std::abs(g(rng)) * 3.0;
    for (auto& x : v) x *= scale;
    const Vec3 c = canonicalize_aa(v);
    CHECK(std::sqrt(c[0] * c[0] + c[1] * c[1] + c[2] * c[2]) <= M_PI + 1e-12);
    CHECK(frob_diff(aa_to_matrix(v), aa_to_matrix(c)) < 1e-12);

    const Vec3 neg = {-v[0], -v[1], -v[2]};
    CHECK(frob_diff(aa_to_matrix(neg), transpose3(aa_to_matrix(v))) < 1e-12);
  }
}

TEST_CASE("aa round trip over 10k Haar rotations") {
  std::mt19937 rng(12345);
  double worst = 0.0;
  for (int s = 0; s < 10000; ++s) {
    const Mat3 R = random_rotation(rng);
    const Vec3 aa = matrix_to_aa(R);
    const Mat3 R2 = aa_to_matrix(aa);
    worst = std::max(worst, frob_diff(R, R2));
    const double theta = std::sqrt(aa[0] * aa[0] + aa[1] * aa[1] + aa[2] * aa[2]);
    CHECK(theta <= M_PI + 1e-12);
  }
  CHECK(worst <= 1e-9);
}

TEST_CASE("vector-level aa round trip away from pi") {
  std::mt19937 rng(2468);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> ang(1e-6, M_PI - 1e-3);
  double worst = 0.0;
  for (int s = 0; s < 10000; ++s) {
    Vec3 axis = {g(rng), g(rng), g(rng)};
    const double n = std::sqrt(axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]);
    const double theta = ang(rng);
    for (auto& v : axis) v *= theta / n;
    const Vec3 back = matrix_to_aa(aa_to_matrix(axis));
    for (int i = 0; i < 3; ++i) worst = std::max(worst, std::abs(back[i] - axis[i]));
  }
  CHECK(worst <= 1e-9);
}

TEST_CASE("euler round trip over 10k Haar rotations per order") {
  std::mt19937 rng(54321);
  for (EulerOrder order : kOrders) {
    double worst = 0.0;
    for (int s = 0; s < 10000; ++s) {
      const Mat3 R = random_rotation(rng);
      const EulerAngles e = matrix_to_euler(R, order);
      const Mat3 R2 = euler_to_matrix(e.a, e.b, e.c, order);
      worst = std::max(worst, frob_diff(R, R2));
      CHECK(std::abs(e.b) <= M_PI / 2 + 1e-12);
    }
    INFO("order ", euler_order_name(order));
    CHECK(worst <= 1e-9);
  }
}

TEST_CASE("exact gimbal lock round-trips and sets the flag") {
  std::mt19937 rng(777);
  std::uniform_real_distribution<double> u(-M_PI, M_PI);
  for (EulerOrder order : kOrders) {
    for (double sign : {1.0, -1.0}) {
      for (int s = 0; s < 50; ++s) {
        const double a = u(rng), c = u(rng);
        const Mat3 R = euler_to_matrix(a, sign * M_PI / 2, c, order);
        const EulerAngles e = matrix_to_euler(R, order);
        CHECK(e.gimbal_lock);
        CHECK(e.c == 0.0);
        CHECK(std::abs(e.b) == doctest::Approx(M_PI / 2).epsilon(1e-12));
        const Mat3 R2 = euler_to_matrix(e.a, e.b, e.c, order);
        CHECK(frob_diff(R, R2) < 1e-9);
      }
    }
  }
}

TEST_CASE("gimbal band edges") {
  // Inside the 1e-6 band: flagged. Just outside: unflagged and recomposes
  // within the 1e-8 contract.
  const Mat3 inside = euler_to_matrix(0.4, M_PI / 2 - 1e-7, 0.9, EulerOrder::XYZ);
  CHECK(matrix_to_euler(inside, EulerOrder::XYZ).gimbal_lock);

  const Mat3 outside = euler_to_matrix(0.4, M_PI / 2 - 1e-4, 0.9, EulerOrder::XYZ);
  const EulerAngles e = matrix_to_euler(outside, EulerOrder::XYZ);
  CHECK_FALSE(e.gimbal_lock);
  CHECK(frob_diff(outside, euler_to_matrix(e.a, e.b, e.c, EulerOrder::XYZ)) < 1e-8);
}

TEST_CASE("single-axis quarter turn about the first axis") {
  for (EulerOrder order : kOrders) {
    const Mat3 R = euler_to_matrix(M_PI / 2, 0, 0, order);
    const EulerAngles e = matrix_to_euler(R, order);
    CHECK(e.a == doctest::Approx(M_PI / 2).epsilon(1e-12));
    CHECK(e.b == doctest::Approx(0.0));
    CHECK(e.c == doctest::Approx(0.0));
    CHECK_FALSE(e.gimbal_lock);
  }
}

TEST_CASE("matrix_to_euler rejects non-rotations") {
  Mat3 bad = identity3();
  bad[0] = 1.1;
  CHECK_THROWS_AS(matrix_to_euler(bad, EulerOrder::XYZ), NotARotationError);
  CHECK_THROWS_AS(matrix_to_aa(bad), NotARotationError);
  Mat3 reflect = {1, 0, 0, 0, 1, 0, 0, 0, -1};
  CHECK_THROWS_AS(matrix_to_aa(reflect), NotARotationError);
}

TEST_CASE("projection is idempotent on rotations") {
  std::mt19937 rng(99);
  for (int s = 0; s < 200; ++s) {
    const Mat3 R = random_rotation(rng);
    const Mat3 P = project_to_rotation(R);
    CHECK(frob_diff(R, P) < 1e-12);
  }
}

TEST_CASE("projection minimizes Frobenius distance") {
  std::mt19937 rng(100);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int s = 0; s < 50; ++s) {
    Mat3 M = random_rotation(rng);
    for (auto& v : M) v += 0.2 * g(rng);
    const Mat3 P = project_to_rotation(M);
    CHECK(is_rotation(P, 1e-9));
    const double dp = frob_diff(M, P);
    // Random-search witness: no sampled rotation may beat the projection.
    for (int t = 0; t < 200; ++t) {
      const Mat3 Q = random_rotation(rng);
      CHECK(dp <= frob_diff(M, Q) + 1e-12);
    }
    // Local witness: small geodesic perturbations of P are no better.
    for (int t = 0; t < 50; ++t) {
      const Vec3 d = {1e-3 * g(rng), 1e-3 * g(rng), 1e-3 * g(rng)};
      const Mat3 Q = matmul3(P, aa_to_matrix(d));
      CHECK(dp <= frob_diff(M, Q) + 1e-12);
    }
  }
}

TEST_CASE("projection rejects rank-deficient inputs") {
  const Mat3 rank1 = {1, 0, 0, 0, 0, 0, 0, 0, 0};
  CHECK_THROWS_AS(project_to_rotation(rank1), DegenerateMatrixError);
  const Mat3 zero{};
  CHECK_THROWS_AS(project_to_rotation(zero), DegenerateMatrixError);
}

TEST_CASE("projection of scaled identity and reflections") {
  Mat3 twoI{};
  twoI[0] = twoI[4] = twoI[8] = 2.0;
  CHECK(frob_diff(project_to_rotation(twoI), identity3()) < 1e-12);

  // Reflection with distinct singular values: unique minimizer.
  const Mat3 M = {2, 0, 0, 0, 1, 0, 0, 0, -0.5};
  const Mat3 P = project_to_rotation(M);
  CHECK(is_rotation(P, 1e-9));
  CHECK(frob_diff(P, identity3()) < 1e-12);

  // Full-rank reflection with tied singular values: still succeeds (rank 3)
  // and returns some member of the minimizing set.
  const Mat3 tied = {1, 0, 0, 0, 1, 0, 0, 0, -1};
  const Mat3 Q = project_to_rotation(tied);
  CHECK(is_rotation(Q, 1e-9));
  CHECK(frob_diff(tied, Q) <= frob_diff(tied, identity3()) + 1e-12);
}

TEST_CASE("geodesic_angle basic values") {
  const Mat3 I = identity3();
  CHECK(geodesic_angle(I, I) == doctest::Approx(0.0));
  const Mat3 R = aa_to_matrix({0, 0.75, 0});
  CHECK(geodesic_angle(I, R) == doctest::Approx(0.75).epsilon(1e-12));
}

TEST_CASE("euler order parsing") {
  CHECK(parse_euler_order("XZY") == EulerOrder::XZY);
  CHECK(euler_order_name(EulerOrder::ZXY) == "ZXY");
  CHECK_THROWS_AS(parse_euler_order("XYX"), UnknownConventionError);
  CHECK_THROWS_AS(parse_euler_order("xyz"), UnknownConventionError);
}
