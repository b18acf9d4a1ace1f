#include "fedfdia/grid.hpp"

#include <fstream>
#include <numeric>
#include <sstream>

#include "text_util.hpp"

namespace fedfdia::grid {

namespace {

int find_root(std::vector<int>& parent, int x) {
    while (parent[x] != x) {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    return x;
}

}  // namespace

BusSystem::BusSystem(int n_bus, int slack_bus, std::vector<Branch> branches)
    : n_bus_(n_bus), slack_bus_(slack_bus), branches_(std::move(branches)) {
    if (n_bus_ < 2) {
        throw ConfigError("bus system needs at least 2 buses");
    }
    if (slack_bus_ < 1 || slack_bus_ > n_bus_) {
        throw ConfigError("slack bus " + std::to_string(slack_bus_) + " outside 1.." + std::to_string(n_bus_));
    }
    std::vector<int> parent(static_cast<std::size_t>(n_bus_) + 1);
    std::iota(parent.begin(), parent.end(), 0);
    for (std::size_t k = 0; k < branches_.size(); ++k) {
        const Branch& b = branches_[k];
        const std::string where = "branch " + std::to_string(k + 1);
        if (b.from_bus < 1 || b.from_bus > n_bus_ || b.to_bus < 1 || b.to_bus > n_bus_) {
            throw ConfigError(where + ": bus index out of range");
        }
        if (b.from_bus == b.to_bus) {
            throw ConfigError(where + ": from and to bus are equal");
        }
        if (!(b.reactance > 0.0)) {
            throw ConfigError(where + ": non-positive reactance");
        }
        parent[find_root(parent, b.from_bus)] = find_root(parent, b.to_bus);
    }
    const int root = find_root(parent, 1);
    for (int bus = 2; bus <= n_bus_; ++bus) {
        if (find_root(parent, bus) != root) {
            throw ConfigError("disconnected graph: bus " + std::to_string(bus) + " is not reachable from bus 1");
        }
    }
}

int BusSystem::state_index(int bus) const {
    if (bus == slack_bus_) {
        return -1;
    }
    return bus < slack_bus_ ? bus - 1 : bus - 2;
}

int BusSystem::bus_of_state(int column) const {
    const int bus = column + 1;
    return bus < slack_bus_ ? bus : bus + 1;
}

BusSystem parse_bus_system(std::istream& in, const std::string& source) {
    int n_bus = -1;
    int slack = -1;
    int header_line = 0;
    std::vector<Branch> branches;
    std::vector<int> branch_lines;

    detail::LineReader reader(in, source);
    std::vector<std::string_view> tok;
    while (reader.next(tok)) {
        if (tok[0] == "buses") {
            if (n_bus >= 0) {
                throw ConfigError(reader.where() + ": duplicate 'buses' header");
            }
            if (tok.size() != 4 || tok[2] != "slack") {
                throw ConfigError(reader.where() + ": expected 'buses N slack S'");
            }
            n_bus = static_cast<int>(reader.integer(tok[1], "bus count"));
            slack = static_cast<int>(reader.integer(tok[3], "slack bus"));
            header_line = reader.line();
        } else if (tok[0] == "branch") {
            if (n_bus < 0) {
                throw ConfigError(reader.where() + ": 'branch' before 'buses' header");
            }
            if (tok.size() != 4) {
                throw ConfigError(reader.where() + ": expected 'branch FROM TO X'");
            }
            Branch b;
            b.from_bus = static_cast<int>(reader.integer(tok[1], "from bus"));
            b.to_bus = static_cast<int>(reader.integer(tok[2], "to bus"));
            b.reactance = reader.number(tok[3], "reactance");
            if (!(b.reactance > 0.0)) {
                throw ConfigError(reader.where() + ": non-positive reactance");
            }
            if (b.from_bus < 1 || b.from_bus > n_bus || b.to_bus < 1 || b.to_bus > n_bus) {
                throw ConfigError(reader.where() + ": bus index out of range");
            }
            if (b.from_bus == b.to_bus) {
                throw ConfigError(reader.where() + ": from and to bus are equal");
            }
            branches.push_back(b);
            branch_lines.push_back(reader.line());
        } else {
            throw ConfigError(reader.where() + ": unknown record '" + std::string(tok[0]) + "'");
        }
    }
    if (n_bus < 0) {
        throw ConfigError(source + ": missing 'buses N slack S' header");
    }
    try {
        return BusSystem(n_bus, slack, std::move(branches));
    } catch (const ConfigError& e) {
        throw ConfigError(source + ":" + std::to_string(header_line) + ": " + e.what());
    }
}

BusSystem load_bus_system(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("grid file not found: " + path.string());
    }
    return parse_bus_system(in, path.string());
}

std::string format_bus_system(const BusSystem& system) {
    std::ostringstream out;
    out << "buses " << system.n_bus() << " slack " << system.slack_bus() << '\n';
    for (const Branch& b : system.branches()) {
        out << "branch " << b.from_bus << ' ' << b.to_bus << ' ' << format_double(b.reactance) << '\n';
    }
    return out.str();
}

MeasurementConfig default_measurement_config(const BusSystem& system) {
    MeasurementConfig config;
    for (int bus = 1; bus <= system.n_bus(); ++bus) {
        config.entries.emplace_back(Injection{bus});
    }
    const int n_flows = std::min<int>(5, static_cast<int>(system.branches().size()));
    for (int k = 1; k <= n_flows; ++k) {
        config.entries.emplace_back(LineFlow{k, true});
    }
    return config;
}

MeasurementConfig parse_measurement_config(std::istream& in, const std::string& source) {
    MeasurementConfig config;
    detail::LineReader reader(in, source);
    std::vector<std::string_view> tok;
    while (reader.next(tok)) {
        if (tok[0] == "inj") {
            if (tok.size() != 2) {
                throw ConfigError(reader.where() + ": expected 'inj BUS'");
            }
            config.entries.emplace_back(Injection{static_cast<int>(reader.integer(tok[1], "bus"))});
        } else if (tok[0] == "flow") {
            if (tok.size() != 3 || (tok[2] != "fwd" && tok[2] != "rev")) {
                throw ConfigError(reader.where() + ": expected 'flow BRANCH fwd|rev'");
            }
            config.entries.emplace_back(LineFlow{static_cast<int>(reader.integer(tok[1], "branch")), tok[2] == "fwd"});
        } else {
            throw ConfigError(reader.where() + ": unknown measurement '" + std::string(tok[0]) + "'");
        }
    }
    if (config.entries.empty()) {
        throw ConfigError(source + ": no measurements");
    }
    return config;
}

MeasurementConfig load_measurement_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("measurement file not found: " + path.string());
    }
    return parse_measurement_config(in, path.string());
}

std::string describe(const Measurement& m) {
    if (const auto* inj = std::get_if<Injection>(&m)) {
        return "inj " + std::to_string(inj->bus);
    }
    const auto& flow = std::get<LineFlow>(m);
    return "flow " + std::to_string(flow.branch) + (flow.forward ? " fwd" : " rev");
}

std::string format_measurement_config(const MeasurementConfig& config) {
    std::string out;
    for (const auto& m : config.entries) {
        out += describe(m);
        out += '\n';
    }
    return out;
}

HMatrix::HMatrix(Matrix values, int rank) : values_(std::move(values)), rank_(rank) {}

namespace {

// Adds the flow row of branch b (from -> to) scaled by `sign` into `row`.
void add_flow(const BusSystem& system, const Branch& b, double sign, Vector& row) {
    const double y = 1.0 / b.reactance;
    if (int c = system.state_index(b.from_bus); c >= 0) {
        row[c] += sign * y;
    }
    if (int c = system.state_index(b.to_bus); c >= 0) {
        row[c] -= sign * y;
    }
}

}  // namespace

Vector measurement_row(const BusSystem& system, const Measurement& m) {
    Vector row = Vector::Zero(system.n_states());
    if (const auto* inj = std::get_if<Injection>(&m)) {
        if (inj->bus < 1 || inj->bus > system.n_bus()) {
            throw ConfigError("injection meter at unknown bus " + std::to_string(inj->bus));
        }
        for (const Branch& b : system.branches()) {
            if (b.from_bus == inj->bus) {
                add_flow(system, b, 1.0, row);
            } else if (b.to_bus == inj->bus) {
                add_flow(system, b, -1.0, row);
            }
        }
        return row;
    }
    const auto& flow = std::get<LineFlow>(m);
    if (flow.branch < 1 || flow.branch > static_cast<int>(system.branches().size())) {
        throw ConfigError("flow meter on unknown branch " + std::to_string(flow.branch));
    }
    add_flow(system, system.branches()[static_cast<std::size_t>(flow.branch) - 1], flow.forward ? 1.0 : -1.0, row);
    return row;
}

HMatrix build_h(const BusSystem& system, const MeasurementConfig& config) {
    const auto n_rows = static_cast<Eigen::Index>(config.size());
    Matrix h(n_rows, system.n_states());
    for (Eigen::Index i = 0; i < n_rows; ++i) {
        h.row(i) = measurement_row(system, config.entries[static_cast<std::size_t>(i)]).transpose();
    }
    const int rank = n_rows == 0 ? 0 : static_cast<int>(Eigen::ColPivHouseholderQR<Matrix>(h).rank());
    if (rank < system.n_states()) {
        throw RankError("unobservable configuration: rank " + std::to_string(rank) + " < " +
                        std::to_string(system.n_states()));
    }
    return HMatrix(std::move(h), rank);
}

InjectionProfile parse_injection_profile(std::istream& in, const BusSystem& system, const std::string& source) {
    InjectionProfile profile{Vector::Zero(system.n_bus()), Vector::Zero(system.n_bus())};
    detail::LineReader reader(in, source);
    std::vector<std::string_view> tok;
    while (reader.next(tok)) {
        if ((tok[0] != "load" && tok[0] != "gen") || tok.size() != 3) {
            throw ConfigError(reader.where() + ": expected 'load BUS P' or 'gen BUS P'");
        }
        const auto bus = reader.integer(tok[1], "bus");
        if (bus < 1 || bus > system.n_bus()) {
            throw ConfigError(reader.where() + ": bus index out of range");
        }
        const double p = reader.number(tok[2], "power");
        (tok[0] == "load" ? profile.load : profile.generation)[bus - 1] += p;
    }
    return profile;
}

InjectionProfile load_injection_profile(const std::filesystem::path& path, const BusSystem& system) {
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("load profile not found: " + path.string());
    }
    return parse_injection_profile(in, system, path.string());
}

std::uint64_t grid_hash(const BusSystem& system, const MeasurementConfig& config) {
    return fnv1a64(format_bus_system(system) + "--\n" + format_measurement_config(config));
}

}  // namespace fedfdia::grid
