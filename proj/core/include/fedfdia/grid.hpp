#pragma once

#include <cstddef>
#include <filesystem>
#include <istream>
#include <string>
#include <variant>
#include <vector>

#include "fedfdia/common.hpp"

namespace fedfdia::grid {

/// A transmission line in the DC model. Bus indices are 1-based.
struct Branch {
    int from_bus = 0;
    int to_bus = 0;
    double reactance = 0.0;  // p.u., > 0
};

/// Network topology. Immutable and validated on construction:
/// connected, 1 <= slack <= n_bus, positive reactances, no self-loops.
class BusSystem {
  public:
    BusSystem(int n_bus, int slack_bus, std::vector<Branch> branches);

    int n_bus() const { return n_bus_; }
    int slack_bus() const { return slack_bus_; }
    const std::vector<Branch>& branches() const { return branches_; }

    /// Number of state variables (angles of non-slack buses).
    int n_states() const { return n_bus_ - 1; }

    /// Column of bus `bus` in the state vector, or -1 for the slack bus.
    int state_index(int bus) const;

    /// Bus whose angle is state `column`.
    int bus_of_state(int column) const;

  private:
    int n_bus_;
    int slack_bus_;
    std::vector<Branch> branches_;
};

/// Parses the grid-config text format:
///
///     buses N slack S
///     branch FROM TO X
///     ...
///
/// Blank lines and `#` comments are ignored. Errors carry `source:line`.
BusSystem parse_bus_system(std::istream& in, const std::string& source = "<input>");
BusSystem load_bus_system(const std::filesystem::path& path);

/// Canonical text form; parse_bus_system(format_bus_system(s)) == s.
std::string format_bus_system(const BusSystem& system);

struct Injection {
    int bus = 0;
};

struct LineFlow {
    int branch = 0;        // 1-based index into BusSystem::branches()
    bool forward = true;   // from_bus -> to_bus when true
};

using Measurement = std::variant<Injection, LineFlow>;

struct MeasurementConfig {
    std::vector<Measurement> entries;

    std::size_t size() const { return entries.size(); }
};

/// Injections at every bus, then forward flows on the first five branches
/// (fewer if the system has fewer branches). 19 meters on the IEEE 14-bus case.
MeasurementConfig default_measurement_config(const BusSystem& system);

/// One entry per line: `inj BUS` or `flow BRANCH fwd|rev`.
MeasurementConfig parse_measurement_config(std::istream& in, const std::string& source = "<input>");
MeasurementConfig load_measurement_config(const std::filesystem::path& path);
std::string format_measurement_config(const MeasurementConfig& config);

/// Human-readable label such as "inj 3" or "flow 2 fwd".
std::string describe(const Measurement& m);

/// Linear measurement model y = H theta for the DC approximation.
/// Rows follow MeasurementConfig order; columns are non-slack bus angles.
class HMatrix {
  public:
    HMatrix(Matrix values, int rank);

    const Matrix& values() const { return values_; }
    Eigen::Index rows() const { return values_.rows(); }
    Eigen::Index cols() const { return values_.cols(); }
    int rank() const { return rank_; }

  private:
    Matrix values_;
    int rank_;
};

/// DC sensitivity row of a single measurement, length n_states.
Vector measurement_row(const BusSystem& system, const Measurement& m);

/// Builds H and checks observability. Throws RankError("unobservable
/// configuration: rank R < J") when H lacks full column rank.
HMatrix build_h(const BusSystem& system, const MeasurementConfig& config);

/// Active-power operating point used by the data generator (p.u.).
struct InjectionProfile {
    Vector load;        // per bus, length n_bus
    Vector generation;  // per bus, length n_bus; ignored at the slack bus
};

/// `load BUS P` and `gen BUS P` lines; unlisted buses are zero.
InjectionProfile parse_injection_profile(std::istream& in, const BusSystem& system,
                                         const std::string& source = "<input>");
InjectionProfile load_injection_profile(const std::filesystem::path& path, const BusSystem& system);

/// Stable hash of topology plus meter layout, stored in dataset metadata.
std::uint64_t grid_hash(const BusSystem& system, const MeasurementConfig& config);

}  // namespace fedfdia::grid
