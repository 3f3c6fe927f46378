// Shared scalar typedefs, error type and seeding helpers.

#ifndef ATTRIQ_CORE_HPP
#define ATTRIQ_CORE_HPP

#include <Eigen/Dense>

#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace attriq {

using Scalar = double;
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
using RowMatrix =
    Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using VectorRef = Eigen::Ref<Vector>;
using ConstVectorRef = Eigen::Ref<const Vector>;
using ConstMatrixRef = Eigen::Ref<const Matrix>;

inline constexpr Scalar kUndefined = std::numeric_limits<Scalar>::quiet_NaN();

enum class ErrorKind {
  kShapeMismatch,
  kNonFiniteInput,
  kClassOutOfRange,
  kNotDifferentiable,
  kLayerNotConvolutional,
  kTooManyFeatures,
  kSingularSystem,
  kInvalidArgument,
  kPatchLargerThanImage,
  kEmptyDataset,
  kParseError,
  kRaggedRow,
  kNonNumericCell,
  kBadMagic,
  kUnsupportedDtype,
  kFortranOrderUnsupported,
  kSchemaViolation,
  kIo,
  kConfig,
};

std::string_view ErrorKindName(ErrorKind kind);

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(std::string(ErrorKindName(kind)) + ": " + message),
        kind_(kind),
        detail_(message) {}

  ErrorKind kind() const { return kind_; }
  const std::string& detail() const { return detail_; }  // message without the kind

 private:
  ErrorKind kind_;
  std::string detail_;
};

// splitmix64 finalizer; used to derive independent stream seeds from
// (seed, instance, method) so that parallel and serial runs agree.
constexpr std::uint64_t MixSeed(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t DeriveSeed(std::uint64_t seed, std::uint64_t a,
                                   std::uint64_t b = 0) {
  return MixSeed(MixSeed(MixSeed(seed) ^ a) ^ b);
}

// FNV-1a; stable across platforms, used to turn method names into stream ids.
constexpr std::uint64_t HashName(std::string_view name) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : name) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

using Rng = std::mt19937_64;

// Fills `out` with standard normal draws scaled elementwise by `scale`.
template <typename Derived, typename ScaleDerived>
void FillGaussian(Rng& rng, Eigen::MatrixBase<Derived>& out,
                  const Eigen::MatrixBase<ScaleDerived>& scale) {
  std::normal_distribution<Scalar> normal(0.0, 1.0);
  for (Eigen::Index i = 0; i < out.size(); ++i) {
    out(i) = normal(rng) * scale(i);
  }
}

inline bool AllFinite(ConstVectorRef v) { return v.array().isFinite().all(); }

}  // namespace attriq

#endif  // ATTRIQ_CORE_HPP
