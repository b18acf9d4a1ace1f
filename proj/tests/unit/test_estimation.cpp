#include <doctest.h>

#include <cmath>

#include "fedfdia/dataset.hpp"
#include "fedfdia/estimation.hpp"
#include "test_support.hpp"

using namespace fedfdia;
using namespace fedfdia::estimation;

namespace {

grid::HMatrix make_h(Matrix m) {
    const int rank = testing::gauss_rank(m);
    return grid::HMatrix(std::move(m), rank);
}

double objective(const Matrix& h, const Vector& w, const Vector& y, const Vector& v) {
    const Vector r = y - h * v;
    return (r.array().square() * w.array()).sum();
}

}  // namespace

TEST_SUITE("estimation") {

TEST_CASE("identity H returns the measurements") {
    const auto h = make_h(Matrix::Identity(2, 2));
    Vector y(2);
    y << 0.3, -0.1;
    const Vector v = wls_estimate(h, WeightMatrix(Vector::Ones(2)), y);
    CHECK(v(0) == doctest::Approx(0.3).epsilon(1e-15));
    CHECK(v(1) == doctest::Approx(-0.1).epsilon(1e-15));
}

TEST_CASE("single state, two meters: unweighted mean and residual") {
    Matrix m(2, 1);
    m << 1, 1;
    const auto h = make_h(m);
    Vector y(2);
    y << 1, 3;
    const Vector v = wls_estimate(h, WeightMatrix(Vector::Ones(2)), y);
    CHECK(v(0) == doctest::Approx(2.0));
    CHECK(residual_norm_sq(y, h, v) == doctest::Approx(2.0));
}

TEST_CASE("triangle estimate matches coordinate descent") {
    const auto s = testing::triangle();
    const auto h = grid::build_h(s, grid::default_measurement_config(s));
    std::mt19937_64 rng(11);
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> wd(0.5, 4.0);
    for (int trial = 0; trial < 5; ++trial) {
        Vector y(h.rows()), w(h.rows());
        for (Eigen::Index i = 0; i < y.size(); ++i) {
            y(i) = n(rng);
            w(i) = wd(rng);
        }
        const Vector v = wls_estimate(h, WeightMatrix(w), y);
        const auto oracle = testing::coordinate_descent_wls(h.values(), w, y);
        for (Eigen::Index j = 0; j < v.size(); ++j) {
            CHECK(std::abs(v(j) - oracle[static_cast<std::size_t>(j)]) < 1e-6);
        }
    }
}

TEST_CASE("noise-free measurements give zero residual") {
    const auto g = testing::load_ieee14();
    std::mt19937_64 rng(3);
    std::normal_distribution<double> n(0.0, 0.1);
    Vector v(13);
    for (auto& x : v) x = n(rng);
    const Vector y = g.h.values() * v;
    const Vector est = wls_estimate(g.h, WeightMatrix::from_sigma(19, 0.2), y);
    CHECK((est - v).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(residual_norm_sq(y, g.h, est) < 1e-12);
}

TEST_CASE("residual norms agree with an element-wise sum") {
    const auto g = testing::load_ieee14();
    Rng rng(5);
    const Vector theta = dataset::gen_scenario(rng, g.system, g.profile, 0.2);
    const auto s = dataset::gen_sample(rng, g.h, theta, 0.2, std::nullopt);
    const WeightMatrix w = WeightMatrix::from_sigma(19, 0.2);
    const Vector est = wls_estimate(g.h, w, s.features);
    double plain = 0.0, weighted = 0.0;
    for (Eigen::Index i = 0; i < 19; ++i) {
        double hv = 0.0;
        for (Eigen::Index j = 0; j < 13; ++j) hv += g.h.values()(i, j) * est(j);
        const double r = s.features(i) - hv;
        plain += r * r;
        weighted += r * r / (0.2 * 0.2);
    }
    CHECK(residual_norm_sq(s.features, g.h, est) == doctest::Approx(plain).epsilon(1e-12));
    CHECK(weighted_residual_norm_sq(s.features, g.h, est, w) == doctest::Approx(weighted).epsilon(1e-12));
}

TEST_CASE("WLS optimality properties") {
    const auto g = testing::load_ieee14();
    std::mt19937_64 rng(17);
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> wd(1.0, 30.0);
    Vector y(19), w(19);
    for (Eigen::Index i = 0; i < 19; ++i) {
        y(i) = n(rng);
        w(i) = wd(rng);
    }
    const Vector v = wls_estimate(g.h, WeightMatrix(w), y);

    SUBCASE("weighted residual is orthogonal to the columns of H") {
        const Vector r = y - g.h.values() * v;
        const Vector g_vec = g.h.values().transpose() * w.asDiagonal() * r;
        CHECK(g_vec.cwiseAbs().maxCoeff() < 1e-9);
    }
    SUBCASE("any perturbation increases the objective") {
        const double best = objective(g.h.values(), w, y, v);
        for (int k = 0; k < 50; ++k) {
            Vector d(13);
            for (auto& x : d) x = n(rng) * 1e-3;
            CHECK(objective(g.h.values(), w, y, v + d) > best);
        }
    }
    SUBCASE("scaling W leaves the estimate unchanged") {
        const Vector v2 = wls_estimate(g.h, WeightMatrix(w * 7.5), y);
        CHECK((v2 - v).cwiseAbs().maxCoeff() < 1e-10);
    }
}

TEST_CASE("dimension and rank errors") {
    const auto g = testing::load_ieee14();
    CHECK_THROWS_AS(residual_norm_sq(Vector::Zero(5), g.h, Vector::Zero(13)), DimensionError);
    CHECK_THROWS_AS(residual_norm_sq(Vector::Zero(19), g.h, Vector::Zero(12)), DimensionError);
    CHECK_THROWS_AS(WlsEstimator(g.h, WeightMatrix::from_sigma(18, 0.2)), DimensionError);
    CHECK_THROWS_AS(WeightMatrix(Vector::Zero(3)), ConfigError);

    Matrix m(3, 2);
    m << 1, 0, 2, 0, 3, 0;
    const grid::HMatrix deficient(m, 2);  // rank claim is wrong on purpose
    CHECK_THROWS_WITH_AS(WlsEstimator(deficient, WeightMatrix(Vector::Ones(3))),
                         doctest::Contains("estimation failed: rank"), RankError);
}

TEST_CASE("chi-square thresholds against table values") {
    CHECK(compute_threshold(0.05, 6) == doctest::Approx(12.5916).epsilon(1e-5));
    CHECK(compute_threshold(0.05, 1) == doctest::Approx(1.959963984540054 * 1.959963984540054).epsilon(1e-9));
    CHECK(compute_threshold(0.5, 2) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));
    CHECK(compute_threshold(0.01, 10) == doctest::Approx(23.2093).epsilon(1e-5));
    CHECK(chi_square_cdf(compute_threshold(0.05, 6), 6) == doctest::Approx(0.95).epsilon(1e-12));
    CHECK_THROWS_AS(compute_threshold(0.0, 6), ConfigError);
    CHECK_THROWS_AS(compute_threshold(1.0, 6), ConfigError);
    CHECK_THROWS_AS(compute_threshold(0.05, 0), ConfigError);
}

TEST_CASE("detector verdict is a strict inequality") {
    const BddConfig cfg = BddConfig::make(0.05, 6);
    CHECK_FALSE(bdd_test(0.0, cfg));
    CHECK_FALSE(bdd_test(cfg.threshold, cfg));
    CHECK(bdd_test(std::nextafter(cfg.threshold, 100.0), cfg));
    const auto g = testing::load_ieee14();
    CHECK(BddConfig::for_h(g.h).degrees_of_freedom == 6);
}

TEST_CASE("noise-only flag rate is calibrated") {
    const auto g = testing::load_ieee14();
    const WlsEstimator est(g.h, WeightMatrix::from_sigma(19, 0.2));
    const auto cfg = BddConfig::for_h(g.h, 0.05);
    const dataset::ScenarioGenerator gen(g.system, g.profile);
    int flagged = 0;
    const int n = 10000;
    for (int k = 0; k < n; ++k) {
        Rng rng = make_rng(2024, "calibration", static_cast<std::uint64_t>(k));
        const auto s = dataset::gen_sample(rng, g.h, gen.sample(rng, 0.2), 0.2, std::nullopt);
        flagged += run_bdd(est, s.features, cfg).flagged;
    }
    const double rate = static_cast<double>(flagged) / n;
    CHECK(rate >= 0.04);
    CHECK(rate <= 0.06);
}

}
