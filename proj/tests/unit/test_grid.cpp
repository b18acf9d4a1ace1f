#include <doctest.h>

#include <sstream>

#include "fedfdia/grid.hpp"
#include "test_support.hpp"

using namespace fedfdia;
using namespace fedfdia::grid;

namespace {

BusSystem parse(const std::string& text) {
    std::istringstream in(text);
    return parse_bus_system(in, "test.grid");
}

std::string error_of(const std::string& text) {
    try {
        parse(text);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

}  // namespace

TEST_SUITE("grid") {

TEST_CASE("bundled IEEE 14-bus case") {
    const BusSystem s = load_bus_system(testing::data_path("ieee14.grid"));
    CHECK(s.n_bus() == 14);
    CHECK(s.branches().size() == 20);
    CHECK(s.slack_bus() == 1);
    CHECK(s.n_states() == 13);
    // first and last lines of the standard branch table
    CHECK(s.branches().front().reactance == doctest::Approx(0.05917));
    CHECK(s.branches().back().from_bus == 13);
    CHECK(s.branches().back().to_bus == 14);
    CHECK(s.branches().back().reactance == doctest::Approx(0.34802));
}

TEST_CASE("smallest connected system") {
    const BusSystem s = parse("buses 2 slack 1\nbranch 1 2 1\n");
    CHECK(s.n_states() == 1);
    CHECK(s.state_index(1) == -1);
    CHECK(s.state_index(2) == 0);
    CHECK(s.bus_of_state(0) == 2);
}

TEST_CASE("validation errors name the offending line") {
    const std::string zero = error_of("buses 2 slack 1\n\n# comment\nbranch 1 2 0\n");
    CHECK(zero.find("non-positive reactance") != std::string::npos);
    CHECK(zero.find("test.grid:4") != std::string::npos);

    CHECK(error_of("buses 3 slack 1\nbranch 1 2 0.1\n").find("disconnected") != std::string::npos);
    CHECK(error_of("buses 3 slack 1\nbranch 1 1 0.1\n").find("from and to bus are equal") != std::string::npos);
    CHECK(error_of("buses 3 slack 1\nbranch 1 4 0.1\n").find("test.grid:2") != std::string::npos);
    CHECK(error_of("buses 3 slack 1\nbranch 1 2 abc\n").find("test.grid:2") != std::string::npos);
    CHECK(error_of("buses 3 slack 9\nbranch 1 2 1\nbranch 2 3 1\n").find("slack") != std::string::npos);
    CHECK(error_of("") != "");
    CHECK(error_of("wires 3\n").find("test.grid:1") != std::string::npos);
}

TEST_CASE("missing grid file") {
    CHECK_THROWS_WITH_AS(load_bus_system("/nonexistent/x.grid"), doctest::Contains("grid file not found"),
                         ConfigError);
}

TEST_CASE("format/parse round trip") {
    const BusSystem s = load_bus_system(testing::data_path("ieee14.grid"));
    const BusSystem t = parse(format_bus_system(s));
    REQUIRE(t.branches().size() == s.branches().size());
    for (std::size_t k = 0; k < s.branches().size(); ++k) {
        CHECK(t.branches()[k].from_bus == s.branches()[k].from_bus);
        CHECK(t.branches()[k].to_bus == s.branches()[k].to_bus);
        CHECK(t.branches()[k].reactance == s.branches()[k].reactance);
    }
    CHECK(format_bus_system(t) == format_bus_system(s));
}

TEST_CASE("measurement config parsing") {
    std::istringstream in("# meters\ninj 3\nflow 2 rev\nflow 1 fwd\n");
    const MeasurementConfig m = parse_measurement_config(in);
    REQUIRE(m.size() == 3);
    CHECK(describe(m.entries[0]) == "inj 3");
    CHECK(describe(m.entries[1]) == "flow 2 rev");
    CHECK(describe(m.entries[2]) == "flow 1 fwd");

    std::istringstream again(format_measurement_config(m));
    CHECK(format_measurement_config(parse_measurement_config(again)) == format_measurement_config(m));

    std::istringstream bad("flow 1 sideways\n");
    CHECK_THROWS_AS(parse_measurement_config(bad), ConfigError);
}

TEST_CASE("bundled meter file equals the default layout") {
    const BusSystem s = load_bus_system(testing::data_path("ieee14.grid"));
    const auto file = load_measurement_config(testing::data_path("ieee14.meas"));
    const auto def = default_measurement_config(s);
    CHECK(file.size() == 19);
    CHECK(format_measurement_config(file) == format_measurement_config(def));
}

TEST_CASE("triangle rows") {
    const BusSystem s = testing::triangle();
    // p12 = (theta1 - theta2) / x with theta1 = 0
    const Vector flow = measurement_row(s, LineFlow{1, true});
    CHECK(flow(0) == -1.0);
    CHECK(flow(1) == 0.0);
    const Vector rev = measurement_row(s, LineFlow{1, false});
    CHECK(rev(0) == 1.0);
    const Vector inj = measurement_row(s, Injection{2});
    CHECK(inj(0) == 2.0);
    CHECK(inj(1) == -1.0);
}

TEST_CASE("IEEE 14 H has full column rank (elimination oracle)") {
    const auto g = testing::load_ieee14();
    CHECK(g.h.rows() == 19);
    CHECK(g.h.cols() == 13);
    CHECK(g.h.rank() == 13);
    CHECK(testing::gauss_rank(g.h.values()) == 13);
}

TEST_CASE("injection rows are sums of incident flow rows") {
    const BusSystem s = load_bus_system(testing::data_path("ieee14.grid"));
    for (int bus = 1; bus <= s.n_bus(); ++bus) {
        Vector sum = Vector::Zero(s.n_states());
        for (std::size_t k = 0; k < s.branches().size(); ++k) {
            const auto& b = s.branches()[k];
            if (b.from_bus == bus) sum += measurement_row(s, LineFlow{static_cast<int>(k + 1), true});
            if (b.to_bus == bus) sum += measurement_row(s, LineFlow{static_cast<int>(k + 1), false});
        }
        CHECK((measurement_row(s, Injection{bus}) - sum).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("unobservable configuration") {
    const BusSystem s = load_bus_system(testing::data_path("ieee14.grid"));
    MeasurementConfig few;
    few.entries = {Injection{2}, Injection{3}, LineFlow{1, true}};
    CHECK_THROWS_WITH_AS(build_h(s, few), doctest::Contains("unobservable configuration: rank 3"), RankError);

    MeasurementConfig bad_ref;
    bad_ref.entries = {Injection{99}};
    CHECK_THROWS_AS(build_h(s, bad_ref), ConfigError);
}

TEST_CASE("injection profile") {
    const BusSystem s = load_bus_system(testing::data_path("ieee14.grid"));
    const auto p = load_injection_profile(testing::data_path("ieee14.loads"), s);
    CHECK(p.load.size() == 14);
    CHECK(p.load(2) == doctest::Approx(0.942));  // bus 3
    CHECK(p.generation(1) == doctest::Approx(0.4));
    CHECK(p.load(0) == 0.0);
    CHECK_THROWS_WITH(load_injection_profile("/nonexistent.loads", s), doctest::Contains("load profile not found"));
}

TEST_CASE("grid hash tracks topology and meters") {
    const auto g = testing::load_ieee14();
    const auto h0 = grid_hash(g.system, g.meas);
    CHECK(h0 == grid_hash(g.system, g.meas));
    auto meas = g.meas;
    meas.entries.pop_back();
    CHECK(grid_hash(g.system, meas) != h0);
    auto branches = g.system.branches();
    branches[0].reactance *= 2;
    CHECK(grid_hash(BusSystem(14, 1, branches), g.meas) != h0);
}

}
