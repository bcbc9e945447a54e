#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace dexfit {

/// Base class for all errors raised by the library.
struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

/// Tensor operands have incompatible shapes.
struct ShapeMismatchError : Error {
  using Error::Error;
};

/// Model/parameter dimensions do not line up (e.g. shape vector vs blendshapes).
struct DimensionMismatchError : Error {
  using Error::Error;
};

/// A matrix expected to be a rotation is too far from SO(3).
struct NotARotationError : Error {
  using Error::Error;
};

/// A matrix required to be full enough rank for the operation is degenerate.
struct DegenerateMatrixError : Error {
  using Error::Error;
};

/// An Euler convention string is not one of the six Tait-Bryan orders.
struct UnknownConventionError : Error {
  using Error::Error;
};

/// Euler angles compared under different conventions.
struct ConventionMismatchError : Error {
  using Error::Error;
};

/// A prior model of the wrong kind (body vs hand) was supplied.
struct KindMismatchError : Error {
  using Error::Error;
};

/// gradient() called on a non-scalar objective.
struct NotScalarError : Error {
  using Error::Error;
};

/// A non-finite value appeared during evaluation.
struct NonFiniteValueError : Error {
  using Error::Error;
};

/// Training loss became non-finite.
struct DivergedTrainingError : Error {
  using Error::Error;
};

/// A point lies behind the camera during strict projection.
struct BehindCameraError : Error {
  using Error::Error;
};

/// Metric region names or sizes do not match.
struct RegionMismatchError : Error {
  using Error::Error;
};

/// Input file or JSON payload does not match the expected schema.
struct ParseError : Error {
  using Error::Error;
};

/// Thread count used by the parallel kernel backend.
/// Resolution order: explicit set_num_threads(), DEXFIT_THREADS env var,
/// OpenMP default. Always 1 when built without OpenMP.
int num_threads();

/// Override the kernel thread count for the current process. n <= 0 resets
/// to the environment/OpenMP default.
void set_num_threads(int n);

/// True when the parallel backend is compiled in.
bool has_parallel_backend();

}  // namespace dexfit
