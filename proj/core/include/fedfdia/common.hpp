#pragma once

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

#include <Eigen/Dense>

namespace fedfdia {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;
using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Random engine used everywhere. All streams are derived from one master seed.
using Rng = std::mt19937_64;

/// Invalid configuration, malformed input file, or I/O failure.
class ConfigError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Operands whose shapes do not agree.
class DimensionError : public std::invalid_argument {
  public:
    using std::invalid_argument::invalid_argument;
};

/// A linear system that cannot be solved (unobservable H, singular gain matrix).
class RankError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Training produced non-finite values.
class DivergenceError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// 64-bit FNV-1a over raw bytes.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);

/// Derives an independent seed for the named sub-stream `index` of `master`.
///
/// Every consumer of randomness (corpus, init, dropout, partition, attack, ...)
/// gets its own stream so that changing one component never perturbs another.
std::uint64_t derive_seed(std::uint64_t master, std::string_view stream, std::uint64_t index = 0);

inline Rng make_rng(std::uint64_t master, std::string_view stream, std::uint64_t index = 0) {
    return Rng(derive_seed(master, stream, index));
}

/// Shortest decimal text that parses back to the identical double.
std::string format_double(double value);

/// Strict full-string parse; throws ConfigError naming `what` on failure.
double parse_double(std::string_view text, std::string_view what);
long long parse_int(std::string_view text, std::string_view what);

}  // namespace fedfdia
