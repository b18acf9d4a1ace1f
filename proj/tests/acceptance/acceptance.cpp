// End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
// exits non-zero if any criterion fails.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "commands.hpp"
#include "fedfdia/attack.hpp"
#include "fedfdia/dataset.hpp"
#include "fedfdia/estimation.hpp"
#include "fedfdia/federated.hpp"
#include "test_support.hpp"

using namespace fedfdia;

namespace {

struct Verdict {
    bool pass;
    std::string detail;
};

std::string num(double v, int digits = 4) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.*f", digits, v);
    return buf;
}

std::string sci(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.3e", v);
    return buf;
}

int failures = 0;

void criterion(const std::string& name, const std::function<Verdict()>& body) {
    const auto t0 = std::chrono::steady_clock::now();
    Verdict v{false, ""};
    try {
        v = body();
    } catch (const std::exception& e) {
        v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    failures += v.pass ? 0 : 1;
    std::cout << (v.pass ? "PASS" : "FAIL") << "  " << name << "  (" << v.detail << "; " << num(secs, 1) << " s)"
              << std::endl;
}

int run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "fedfdia");
    std::ostringstream out, err;
    const int code = cli::run(args, out, err);
    if (code != 0) {
        std::cerr << err.str();
    }
    return code;
}

// Last data row of rounds.csv as name -> value.
std::map<std::string, double> final_round(const std::filesystem::path& rounds_csv) {
    std::ifstream in(rounds_csv);
    std::string header, line, last;
    std::getline(in, header);
    while (std::getline(in, line)) {
        if (!line.empty()) last = line;
    }
    std::map<std::string, double> row;
    std::stringstream hs(header), ls(last);
    std::string name, value;
    while (std::getline(hs, name, ',') && std::getline(ls, value, ',')) {
        row[name] = std::stod(value);
    }
    return row;
}

Verdict stealth_invariance(const testing::Ieee14& g) {
    const estimation::WlsEstimator est(g.h, estimation::WeightMatrix::from_sigma(19, 0.2));
    const dataset::ScenarioGenerator gen(g.system, g.profile);
    double worst = 0.0;
    bool ok = true;
    for (std::uint64_t k = 0; k < 1000; ++k) {
        Rng rng = make_rng(101, "stealth", k);
        const auto s = dataset::gen_sample(rng, g.h, gen.sample(rng, 0.2), 0.2, std::nullopt);
        const Vector a = attack::make_stealthy(g.h, attack::sample_state_error(rng, 13, attack::AttackParams{}));
        const double before = estimation::run_bdd(est, s.features, estimation::BddConfig::for_h(g.h)).weighted_r_sq;
        const double after =
            estimation::run_bdd(est, s.features + a, estimation::BddConfig::for_h(g.h)).weighted_r_sq;
        const double rel = std::abs(after - before) / (1.0 + before);
        worst = std::max(worst, rel);
        ok = ok && std::abs(after - before) <= 1e-8 * (1.0 + before);
    }
    return {ok, "1000 pairs, max |after-before|/(1+before) = " + sci(worst)};
}

// Noise-only, stealthy and gross-error flag rates over the same 10k noisy samples.
struct Rates {
    double noise = 0.0;
    double stealthy = 0.0;
    double gross = 0.0;
};

Rates flag_rates(const testing::Ieee14& g, int n) {
    const estimation::WlsEstimator est(g.h, estimation::WeightMatrix::from_sigma(19, 0.2));
    const auto cfg = estimation::BddConfig::for_h(g.h, 0.05);
    const dataset::ScenarioGenerator gen(g.system, g.profile);
    int f0 = 0, fs = 0, fg = 0;
    for (int k = 0; k < n; ++k) {
        Rng rng = make_rng(202, "rates", static_cast<std::uint64_t>(k));
        const auto s = dataset::gen_sample(rng, g.h, gen.sample(rng, 0.2), 0.2, std::nullopt);
        const Vector stealthy =
            attack::make_stealthy(g.h, attack::sample_state_error(rng, 13, attack::AttackParams{}));
        const Vector gross = attack::make_unstructured(rng, 19, 50.0, 0.2);
        f0 += estimation::run_bdd(est, s.features, cfg).flagged;
        fs += estimation::run_bdd(est, s.features + stealthy, cfg).flagged;
        fg += estimation::run_bdd(est, s.features + gross, cfg).flagged;
    }
    const double d = n;
    return {f0 / d, fs / d, fg / d};
}

Verdict gradient_check() {
    const neural::Architecture arch{3, {8, 4}, 3};
    Rng rng(303);
    neural::ModelParams p = neural::init_params(arch, rng);
    std::normal_distribution<double> n(0.0, 1.0);
    std::uniform_real_distribution<double> u(0.5, 1.5);
    for (std::size_t l = 0; l < 2; ++l) {
        for (auto& v : p.mutable_tensor(p.layout().gamma(l)).reshaped()) v = u(rng);
        for (auto& v : p.mutable_tensor(p.layout().beta(l)).reshaped()) v = 0.2 * n(rng);
    }
    Matrix x(16, 3), y(16, 3);
    std::bernoulli_distribution b(0.4);
    for (Eigen::Index r = 0; r < 16; ++r) {
        for (Eigen::Index c = 0; c < 3; ++c) {
            x(r, c) = n(rng);
            y(r, c) = b(rng) ? 1.0 : 0.0;
        }
    }
    neural::TrainConfig cfg;
    cfg.dropout_p = 0.0;
    const double err = testing::max_fd_error(p, x, y, cfg);
    return {err <= 1e-4, "3->8->4->3, max relative error " + sci(err)};
}

Verdict fl_algebra() {
    const neural::Architecture arch{19, {128, 64}, 19};
    auto model = [&](std::uint64_t seed) {
        Rng rng(seed);
        return neural::init_params(arch, rng);
    };
    // weights
    const std::vector<std::size_t> sizes{4000, 4001, 3999, 4000, 4000};
    const auto w = federated::aggregation_weights(sizes);
    std::uint64_t num_sum = 0;
    for (const auto& x : w) num_sum += x.numerator;
    const bool weights_ok = num_sum == w.front().denominator;
    // equal shards
    const std::vector<neural::ModelParams> pair{model(1), model(2)};
    const auto mean = federated::aggregate(pair, std::vector<std::size_t>{20000, 20000});
    bool mean_ok = true;
    for (std::size_t k = 0; k < mean.values().size(); ++k) {
        mean_ok = mean_ok && mean.values()[k] == (pair[0].values()[k] + pair[1].values()[k]) / 2.0;
    }
    // cumulative-gradient bookkeeping
    const neural::ModelParams global = model(3);
    std::vector<neural::ModelParams> locals;
    for (std::uint64_t m = 0; m < 5; ++m) locals.push_back(model(10 + m));
    const double eta = 1e-3;
    const auto avg = federated::aggregate(locals, sizes);
    double total = 0.0;
    for (auto s : sizes) total += static_cast<double>(s);
    std::vector<neural::ModelParams> grads;
    for (const auto& l : locals) grads.push_back(federated::cumulative_gradient(global, l, eta));
    double worst = 0.0;
    for (std::size_t k = 0; k < global.values().size(); ++k) {
        double step = 0.0;
        for (std::size_t m = 0; m < locals.size(); ++m) {
            step += static_cast<double>(sizes[m]) / total * grads[m].values()[k];
        }
        worst = std::max(worst, std::abs(global.values()[k] - eta * step - avg.values()[k]));
    }
    const bool ok = weights_ok && mean_ok && worst <= 1e-12;
    return {ok, std::string("weights sum exact: ") + (weights_ok ? "yes" : "no") +
                    ", equal-shard mean exact: " + (mean_ok ? "yes" : "no") + ", bookkeeping gap " + sci(worst)};
}

Verdict single_client_equivalence(const dataset::Dataset& train, const std::vector<dataset::Dataset>& val) {
    federated::FederatedConfig cfg;
    cfg.clients = 1;
    cfg.rounds = 5;
    cfg.local_epochs = 1;
    cfg.seed = 7;
    cfg.deterministic = true;
    const neural::Architecture arch;
    const auto fl = federated::run_training(train, val, arch, cfg);

    // plain loop: same init, same row order, same dropout stream, 5 epochs
    Rng init = make_rng(7, "init");
    neural::ModelParams params = neural::init_params(arch, init);
    Rng part = make_rng(7, "partition");
    const auto order = federated::partition_indices(train.size(), 1, part)[0];
    const dataset::Dataset data = train.subset(order);
    auto adam = neural::AdamState::zeros_like(params);
    Rng rng = make_rng(7, "client", 0);
    for (int e = 0; e < 5; ++e) {
        neural::train_epoch(params, adam, data.features(), data.labels(), cfg.train, cfg.train.lr, rng);
    }
    double worst = 0.0;
    for (std::size_t k = 0; k < params.values().size(); ++k) {
        worst = std::max(worst, std::abs(params.values()[k] - fl.global.params.values()[k]));
    }
    return {worst <= 1e-10, "max |w_fl - w_plain| = " + sci(worst) + " after 5 rounds"};
}

Verdict wls_oracle() {
    std::mt19937_64 rng(404);
    double worst = 0.0;
    for (int t = 0; t < 50; ++t) {
        const int n_bus = 3 + t % 4;
        const auto sys = testing::random_system(rng, n_bus);
        const auto h = grid::build_h(sys.system, sys.meas);
        std::normal_distribution<double> n(0.0, 1.0);
        std::uniform_real_distribution<double> wd(0.5, 25.0);
        Vector y(h.rows()), w(h.rows());
        for (Eigen::Index i = 0; i < h.rows(); ++i) {
            y(i) = n(rng);
            w(i) = wd(rng);
        }
        const Vector v = estimation::wls_estimate(h, estimation::WeightMatrix(w), y);
        const auto oracle = testing::coordinate_descent_wls(h.values(), w, y);
        for (Eigen::Index j = 0; j < v.size(); ++j) {
            worst = std::max(worst, std::abs(v(j) - oracle[static_cast<std::size_t>(j)]));
        }
    }
    return {worst <= 1e-6, "50 systems of 3-6 buses, max deviation " + sci(worst)};
}

}  // namespace

int main() {
    const auto g = testing::load_ieee14();
    criterion("stealth invariance", [&] { return stealth_invariance(g); });

    Rates rates;
    criterion("BDD calibration", [&] {
        rates = flag_rates(g, 10000);
        return Verdict{rates.noise >= 0.04 && rates.noise <= 0.06,
                       "noise-only flag rate " + num(rates.noise) + " over 10000 samples"};
    });
    criterion("detection asymmetry", [&] {
        const bool ok = rates.gross >= 0.99 && std::abs(rates.stealthy - rates.noise) <= 0.02;
        return Verdict{ok, "unstructured 50 sigma " + num(rates.gross) + ", stealthy " + num(rates.stealthy) +
                               " vs noise " + num(rates.noise)};
    });
    criterion("gradient correctness", gradient_check);
    criterion("FL algebra", fl_algebra);

    // desk-profile corpus, shared by the remaining training criteria
    testing::TempDir dir("acceptance");
    const std::string data = (dir / "data").string();
    const bool have_data = run_cli({"gen-data", "--profile", "desk", "--seed", "7", "--out", data}) == 0;

    criterion("centralized equivalence", [&] {
        if (!have_data) return Verdict{false, "corpus generation failed"};
        const auto raw = dataset::load(dir / "data/train.csv");
        const auto scaler = *raw.scaler();
        std::vector<dataset::Dataset> val;
        for (int k = 0; k < 10; ++k) {
            char name[32];
            std::snprintf(name, sizeof(name), "data/val_%02d.csv", k);
            val.push_back(dataset::apply_scaler(dataset::load(dir / name), scaler));
        }
        return single_client_equivalence(dataset::apply_scaler(raw, scaler), val);
    });

    const std::string run_a = (dir / "run-a").string();
    const std::string run_b = (dir / "run-b").string();
    const std::string base = (dir / "baseline").string();
    bool have_run = false;
    criterion("desk-scale detection performance", [&] {
        if (!have_data) return Verdict{false, "corpus generation failed"};
        have_run = run_cli({"train", "--data", data, "--out", run_a, "--seed", "7", "--quiet"}) == 0;
        if (!have_run) return Verdict{false, "train failed"};
        const auto r = final_round(dir / "run-a/rounds.csv");
        const bool ok = r.at("accuracy") >= 0.80 && r.at("f1") >= 0.80;
        return Verdict{ok, "round " + num(r.at("round"), 0) + ": accuracy " + num(r.at("accuracy")) + ", precision " +
                               num(r.at("precision")) + ", recall " + num(r.at("recall")) + ", f1 " + num(r.at("f1"))};
    });
    criterion("collaboration benefit", [&] {
        if (!have_run) return Verdict{false, "federated run missing"};
        if (run_cli({"train", "--data", data, "--out", base, "--seed", "7", "--baseline", "--shard-index", "0",
                 "--quiet"}) != 0) {
            return Verdict{false, "baseline train failed"};
        }
        const double fl = final_round(dir / "run-a/rounds.csv").at("accuracy");
        const double solo = final_round(dir / "baseline/rounds.csv").at("accuracy");
        const double gap = 100.0 * (fl - solo);
        return Verdict{gap >= 5.0, "FL accuracy " + num(fl) + " vs single-shard baseline " + num(solo) + ", gap " +
                                       num(gap, 2) + " points (need >= 5)"};
    });
    criterion("reproducibility", [&] {
        if (!have_run) return Verdict{false, "first run missing"};
        if (run_cli({"train", "--data", data, "--out", run_b, "--seed", "7", "--quiet"}) != 0) {
            return Verdict{false, "second train failed"};
        }
        const bool rounds = testing::read_file(dir / "run-a/rounds.csv") == testing::read_file(dir / "run-b/rounds.csv");
        const bool model = testing::read_file(dir / "run-a/model.bin") == testing::read_file(dir / "run-b/model.bin");
        const bool manifest =
            testing::read_file(dir / "run-a/model.bin.json") == testing::read_file(dir / "run-b/model.bin.json");
        return Verdict{rounds && model && manifest, std::string("rounds.csv identical: ") + (rounds ? "yes" : "no") +
                                                        ", checkpoint identical: " + (model && manifest ? "yes" : "no")};
    });
    criterion("WLS oracle equivalence", wls_oracle);

    std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criterion(s) failed")
              << std::endl;
    return failures == 0 ? 0 : 1;
}
