#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace heteo {

template <typename Scalar> using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar> using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowMatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

using Eigen::MatrixXd;
using Eigen::VectorXd;
using Eigen::VectorXi;

// Error hierarchy. Each subclass names a failure category callers may want to
// distinguish; the message carries the specifics.
class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

#define HETEO_DEFINE_ERROR(Name)                                                                   \
  class Name : public Error {                                                                      \
  public:                                                                                          \
    using Error::Error;                                                                            \
  }

HETEO_DEFINE_ERROR(SchemaError);
HETEO_DEFINE_ERROR(AlignmentError);
HETEO_DEFINE_ERROR(DomainError);
HETEO_DEFINE_ERROR(FormatError);
HETEO_DEFINE_ERROR(TruncationError);
HETEO_DEFINE_ERROR(IoError);
HETEO_DEFINE_ERROR(ShapeError);
HETEO_DEFINE_ERROR(SpecError);
HETEO_DEFINE_ERROR(RankError);
HETEO_DEFINE_ERROR(DegenerateDesignError);
HETEO_DEFINE_ERROR(ContractError);
HETEO_DEFINE_ERROR(SampleSizeError);
HETEO_DEFINE_ERROR(FoldError);
HETEO_DEFINE_ERROR(BoundsError);
HETEO_DEFINE_ERROR(WeightError);
HETEO_DEFINE_ERROR(PipelineDriftError);
HETEO_DEFINE_ERROR(ComparisonError);
HETEO_DEFINE_ERROR(ValidationError);

#undef HETEO_DEFINE_ERROR

class ConvergenceError : public Error {
public:
  ConvergenceError(const std::string& what, double kkt_residual)
      : Error(what), kkt_residual_(kkt_residual) {}
  double kkt_residual() const { return kkt_residual_; }

private:
  double kkt_residual_;
};

class SingularDesignError : public Error {
public:
  SingularDesignError(const std::string& what, std::vector<std::string> collinear)
      : Error(what), collinear_(std::move(collinear)) {}
  const std::vector<std::string>& collinear_columns() const { return collinear_; }

private:
  std::vector<std::string> collinear_;
};

/// SplitMix64 finalizer; used to derive independent RNG streams.
inline std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t index) {
  return mix64(mix64(seed) ^ mix64(index + 0x632be59bd9b4e019ULL));
}

inline std::uint64_t stream_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return stream_seed(stream_seed(seed, a), b);
}

using Rng = std::mt19937_64;

inline Rng make_rng(std::uint64_t seed, std::uint64_t index) { return Rng(stream_seed(seed, index)); }

/// FNV-1a over raw bytes.
std::uint64_t fnv1a(const void* data, std::size_t len, std::uint64_t h = 0xcbf29ce484222325ULL);
std::string hex64(std::uint64_t v);

/// Thread cap: HETEO_THREADS if set, otherwise hardware concurrency.
std::size_t thread_count();
void set_thread_override(std::size_t n);  // 0 clears the override

/// Runs body(i) for i in [0, n). Work is split into contiguous static chunks;
/// each index runs exactly once and writes only to its own slot, so results do
/// not depend on the number of threads.
void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body);

}  // namespace heteo
