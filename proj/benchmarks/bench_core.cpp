#include <benchmark/benchmark.h>

#include "fedfdia/dataset.hpp"
#include "fedfdia/estimation.hpp"
#include "fedfdia/federated.hpp"
#include "fedfdia/grid.hpp"
#include "fedfdia/neural.hpp"

using namespace fedfdia;

namespace {

const std::string kData = FEDFDIA_DATA_DIR;

struct Grid14 {
    grid::BusSystem system = grid::load_bus_system(kData + "/ieee14.grid");
    grid::MeasurementConfig meas = grid::load_measurement_config(kData + "/ieee14.meas");
    grid::InjectionProfile profile = grid::load_injection_profile(kData + "/ieee14.loads", system);
};

const Grid14& grid14() {
    static const Grid14 g;
    return g;
}

Matrix random_batch(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix m(rows, cols);
    for (auto& v : m.reshaped()) v = n(rng);
    return m;
}

}  // namespace

static void BM_BuildH(benchmark::State& state) {
    const auto& g = grid14();
    for (auto _ : state) {
        benchmark::DoNotOptimize(grid::build_h(g.system, g.meas));
    }
}
BENCHMARK(BM_BuildH);

static void BM_WlsEstimate(benchmark::State& state) {
    const auto& g = grid14();
    const auto h = grid::build_h(g.system, g.meas);
    const estimation::WlsEstimator est(h, estimation::WeightMatrix::from_sigma(h.rows(), 0.2));
    const Vector y = random_batch(h.rows(), 1, 1).col(0);
    for (auto _ : state) {
        benchmark::DoNotOptimize(est.estimate(y));
    }
}
BENCHMARK(BM_WlsEstimate);

static void BM_GenSample(benchmark::State& state) {
    const auto& g = grid14();
    const auto h = grid::build_h(g.system, g.meas);
    const dataset::ScenarioGenerator gen(g.system, g.profile);
    Rng rng(2);
    for (auto _ : state) {
        benchmark::DoNotOptimize(dataset::gen_sample(rng, h, gen.sample(rng, 0.2), 0.2, std::nullopt));
    }
}
BENCHMARK(BM_GenSample);

static void BM_ForwardBackward(benchmark::State& state) {
    const neural::Architecture arch;
    Rng rng(3);
    const neural::ModelParams p = neural::init_params(arch, rng);
    const auto batch = state.range(0);
    const Matrix x = random_batch(batch, arch.inputs, 4);
    const Matrix y = (random_batch(batch, arch.outputs, 5).array() > 0.8).cast<double>();
    const neural::TrainConfig cfg;
    for (auto _ : state) {
        auto res = neural::forward(p, x, neural::Mode::Train, &rng, cfg);
        benchmark::DoNotOptimize(neural::backward(p, res.cache, y, cfg));
    }
    state.SetItemsProcessed(state.iterations() * batch);
}
BENCHMARK(BM_ForwardBackward)->Arg(32)->Arg(256);

static void BM_Aggregate(benchmark::State& state) {
    const neural::Architecture arch;
    std::vector<neural::ModelParams> models;
    for (std::uint64_t m = 0; m < static_cast<std::uint64_t>(state.range(0)); ++m) {
        Rng rng(m);
        models.push_back(neural::init_params(arch, rng));
    }
    const std::vector<std::size_t> sizes(models.size(), 4000);
    for (auto _ : state) {
        benchmark::DoNotOptimize(federated::aggregate(models, sizes));
    }
}
BENCHMARK(BM_Aggregate)->Arg(5)->Arg(20);

BENCHMARK_MAIN();
