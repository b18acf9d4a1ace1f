#include <doctest.h>

#include <set>

#include "fedfdia/dataset.hpp"
#include "fedfdia/federated.hpp"
#include "test_support.hpp"

using namespace fedfdia;
using namespace fedfdia::federated;
using neural::ModelParams;

namespace {

const neural::Architecture kSmall{19, {16, 8}, 19};

struct SmallCorpus {
    dataset::Dataset train;
    std::vector<dataset::Dataset> val;
};

SmallCorpus small_corpus(std::size_t n_train = 400, std::size_t n_val = 100, std::size_t subsets = 2) {
    const auto g = testing::load_ieee14();
    dataset::CorpusConfig cc;
    cc.split = dataset::SplitSpec{n_train, n_val, subsets, 0.5};
    cc.seed = 21;
    auto c = dataset::build_corpus(cc, g.system, g.h, g.profile);
    const auto scaler = dataset::fit_scaler(c.train);
    SmallCorpus out{dataset::apply_scaler(c.train, scaler), {}};
    for (const auto& v : c.val) out.val.push_back(dataset::apply_scaler(v, scaler));
    return out;
}

FederatedConfig small_config() {
    FederatedConfig cfg;
    cfg.clients = 3;
    cfg.rounds = 2;
    cfg.local_epochs = 1;
    cfg.deterministic = true;
    return cfg;
}

ModelParams random_params(std::uint64_t seed) {
    Rng rng(seed);
    ModelParams p = neural::init_params(kSmall, rng);
    std::normal_distribution<double> n(0.0, 1.0);
    for (auto& v : p.mutable_values()) v += n(rng);
    return p;
}

}  // namespace

TEST_SUITE("federated") {

TEST_CASE("IID partition") {
    Rng rng(1);
    SUBCASE("paper split sizes") {
        const auto shards = partition_indices(100000, 5, rng);
        REQUIRE(shards.size() == 5);
        for (const auto& s : shards) CHECK(s.size() == 20000);
    }
    SUBCASE("near-equal, disjoint and covering") {
        const auto shards = partition_indices(103, 5, rng);
        std::multiset<std::size_t> all;
        std::size_t lo = 1000, hi = 0;
        for (const auto& s : shards) {
            all.insert(s.begin(), s.end());
            lo = std::min(lo, s.size());
            hi = std::max(hi, s.size());
        }
        CHECK(hi - lo <= 1);
        CHECK(all.size() == 103);
        CHECK(std::set<std::size_t>(all.begin(), all.end()).size() == 103);
        CHECK(*all.rbegin() == 102);
    }
    SUBCASE("single client gets a permutation of everything") {
        const auto c = small_corpus(50, 10, 1);
        const auto shards = partition(c.train, 1, rng);
        REQUIRE(shards.size() == 1);
        auto a = shards[0].ids();
        auto b = c.train.ids();
        CHECK(a != b);
        std::sort(a.begin(), a.end());
        std::sort(b.begin(), b.end());
        CHECK(a == b);
    }
    SUBCASE("too many clients") {
        CHECK_THROWS_AS(partition_indices(3, 4, rng), ConfigError);
        CHECK_THROWS_AS(partition_indices(3, 0, rng), ConfigError);
    }
}

TEST_CASE("label-skew partition covers the data") {
    const auto c = small_corpus(200, 10, 1);
    Rng rng(2);
    const auto shards = partition_label_skew(c.train, 4, 0.9, rng);
    std::set<std::uint64_t> ids;
    std::size_t total = 0;
    for (const auto& s : shards) {
        CHECK(s.size() > 0);
        total += s.size();
        ids.insert(s.ids().begin(), s.ids().end());
    }
    CHECK(total == 200);
    CHECK(ids.size() == 200);
}

TEST_CASE("local training") {
    const auto c = small_corpus(120, 10, 1);
    Rng rng(3);
    const ModelParams global = neural::init_params(kSmall, rng);
    ClientState client{0, c.train, global, neural::AdamState::zeros_like(global), Rng(4)};
    neural::TrainConfig tc;

    SUBCASE("zero epochs rejected") {
        CHECK_THROWS_AS(local_train(client, global, RoundPlan{1, 0, 1e-3}, tc), ConfigError);
    }
    SUBCASE("lr = 0 leaves every trainable tensor unchanged") {
        const LocalResult r = local_train(client, global, RoundPlan{1, 2, 0.0}, tc);
        for (const auto& t : global.layout().tensors()) {
            if (!t.trainable()) continue;
            for (std::size_t k = t.offset; k < t.offset + t.size(); ++k) {
                CHECK(r.params.values()[k] == global.values()[k]);
            }
        }
        CHECK(r.loss > 0.0);
    }
    SUBCASE("full-batch single epoch equals a plain training pass") {
        tc.batch_size = c.train.size();
        const LocalResult r = local_train(client, global, RoundPlan{1, 1, 1e-3}, tc);
        ModelParams plain = global;
        auto adam = neural::AdamState::zeros_like(plain);
        Rng same(4);
        const double loss = neural::train_epoch(plain, adam, c.train.features(), c.train.labels(), tc, 1e-3, same);
        CHECK(r.params == plain);
        CHECK(r.loss == loss);
    }
    SUBCASE("raw features rejected") {
        const auto g = testing::load_ieee14();
        dataset::CorpusConfig cc;
        cc.split = dataset::SplitSpec{20, 10, 1, 0.5};
        const auto raw = dataset::build_corpus(cc, g.system, g.h, g.profile).train;
        ClientState bad{0, raw, global, neural::AdamState::zeros_like(global), Rng(4)};
        CHECK_THROWS_AS(local_train(bad, global, RoundPlan{1, 1, 1e-3}, tc), ConfigError);
    }
}

TEST_CASE("cumulative gradient") {
    const ModelParams w = random_params(5);
    const ModelParams wm = random_params(6);
    const ModelParams same = cumulative_gradient(w, w, 0.1);
    for (double v : same.values()) CHECK(v == 0.0);

    ModelParams one(kSmall), nine(kSmall);
    one.mutable_values()[0] = 1.0;
    nine.mutable_values()[0] = 0.9;
    CHECK(cumulative_gradient(one, nine, 0.1).values()[0] == doctest::Approx(1.0).epsilon(1e-14));

    const ModelParams g = cumulative_gradient(w, wm, 0.1);
    double worst = 0.0;
    for (std::size_t k = 0; k < w.values().size(); ++k) {
        worst = std::max(worst, std::abs(w.values()[k] - 0.1 * g.values()[k] - wm.values()[k]));
    }
    CHECK(worst < 1e-12);
    CHECK_THROWS_AS(cumulative_gradient(w, wm, 0.0), ConfigError);
}

TEST_CASE("aggregation") {
    const ModelParams p = random_params(7);
    const ModelParams q = random_params(8);

    SUBCASE("weights sum to one exactly") {
        const std::vector<std::size_t> sizes{4001, 3999, 4000, 4000, 4000};
        const auto w = aggregation_weights(sizes);
        std::uint64_t num = 0;
        for (const auto& x : w) {
            CHECK(x.denominator == w.front().denominator);
            num += x.numerator;
        }
        CHECK(num == w.front().denominator);
        const auto equal = aggregation_weights(std::vector<std::size_t>{7, 7});
        CHECK(equal[0].numerator == 1);
        CHECK(equal[0].denominator == 2);
    }
    SUBCASE("one model") {
        const std::vector<ModelParams> one{p};
        CHECK(aggregate(one, std::vector<std::size_t>{3}) == p);
    }
    SUBCASE("equal sizes give the arithmetic mean exactly") {
        const std::vector<ModelParams> two{p, q};
        const ModelParams avg = aggregate(two, std::vector<std::size_t>{10, 10});
        for (std::size_t k = 0; k < p.values().size(); ++k) {
            CHECK(avg.values()[k] == (p.values()[k] + q.values()[k]) / 2.0);
        }
    }
    SUBCASE("sizes 1 and 3") {
        const std::vector<ModelParams> two{p, q};
        const ModelParams avg = aggregate(two, std::vector<std::size_t>{1, 3});
        for (std::size_t k = 0; k < p.values().size(); ++k) {
            CHECK(avg.values()[k] == doctest::Approx(0.25 * p.values()[k] + 0.75 * q.values()[k]).epsilon(1e-14));
        }
    }
    SUBCASE("shape mismatch") {
        const std::vector<ModelParams> mixed{p, ModelParams(neural::Architecture{19, {4}, 19})};
        CHECK_THROWS_AS(aggregate(mixed, std::vector<std::size_t>{1, 1}), DimensionError);
        const std::vector<ModelParams> one{p};
        CHECK_THROWS_AS(aggregate(one, std::vector<std::size_t>{0}), ConfigError);
    }
    SUBCASE("gradient bookkeeping matches model averaging") {
        const ModelParams w = random_params(9);
        const std::vector<ModelParams> models{random_params(10), random_params(11), random_params(12)};
        const std::vector<std::size_t> sizes{5, 9, 6};
        const double eta = 1e-3;
        const ModelParams avg = aggregate(models, sizes);
        double worst = 0.0;
        for (std::size_t k = 0; k < w.values().size(); ++k) {
            double step = 0.0;
            for (std::size_t m = 0; m < models.size(); ++m) {
                const ModelParams g = cumulative_gradient(w, models[m], eta);
                step += static_cast<double>(sizes[m]) / 20.0 * g.values()[k];
            }
            worst = std::max(worst, std::abs((w.values()[k] - eta * step) - avg.values()[k]));
        }
        CHECK(worst <= 1e-12);
        const ModelParams via_delta = delta_update(w, models, sizes, 1.0);
        for (std::size_t k = 0; k < w.values().size(); ++k) {
            CHECK(std::abs(via_delta.values()[k] - avg.values()[k]) <= 1e-12);
        }
    }
}

TEST_CASE("federated training loop") {
    const auto c = small_corpus();
    const FederatedConfig cfg = small_config();

    std::vector<int> seen;
    const TrainingResult r = run_training(c.train, c.val, kSmall, cfg, [&](const RoundMetrics& m) {
        seen.push_back(m.round);
    });
    CHECK(seen == std::vector<int>{1, 2});
    CHECK(r.global.history.size() == 2);
    CHECK(r.global.round == 2);
    CHECK_FALSE(r.stopped_early);

    SUBCASE("ledger has one broadcast and one upload per client per round") {
        CHECK(r.ledger.records().size() == 2 * 2 * 3);
        CHECK(r.ledger.count_for_round(1) == 6);
        std::set<std::uint64_t> broadcast;
        for (const auto& t : r.ledger.records()) {
            if (t.round == 1 && t.kind == "broadcast") broadcast.insert(t.payload_hash);
        }
        CHECK(broadcast.size() == 1);
    }
    SUBCASE("reruns are identical, threads included") {
        const TrainingResult again = run_training(c.train, c.val, kSmall, cfg);
        CHECK(again.global.params == r.global.params);
        CHECK(rounds_csv_row(again.global.history[1]) == rounds_csv_row(r.global.history[1]));
        FederatedConfig threaded = cfg;
        threaded.deterministic = false;
        threaded.threads = 3;
        CHECK(run_training(c.train, c.val, kSmall, threaded).global.params == r.global.params);
    }
    SUBCASE("early stop on F1 target") {
        FederatedConfig stop = cfg;
        stop.rounds = 5;
        stop.stop_f1 = 1e-9;
        const TrainingResult s = run_training(c.train, c.val, kSmall, stop);
        CHECK(s.global.history.size() == 1);
        CHECK(s.stopped_early);
    }
    SUBCASE("divergence names the round and client") {
        FederatedConfig bad = cfg;
        bad.train.lr = 1e200;
        CHECK_THROWS_WITH_AS(run_training(c.train, c.val, kSmall, bad), doctest::Contains("round 1"),
                             DivergenceError);
    }
}

TEST_CASE("one client equals centralized training with periodic evaluation") {
    const auto c = small_corpus(200, 40, 2);
    FederatedConfig cfg = small_config();
    cfg.clients = 1;
    cfg.rounds = 3;
    const TrainingResult fl = run_training(c.train, c.val, kSmall, cfg);
    const TrainingResult central = run_baseline(c.train, c.val, kSmall, cfg, std::size_t{0});
    CHECK(fl.global.params == central.global.params);
    for (std::size_t k = 0; k < 3; ++k) {
        CHECK(rounds_csv_row(fl.global.history[k]) == rounds_csv_row(central.global.history[k]));
    }
}

TEST_CASE("baseline schema matches federated runs") {
    const auto c = small_corpus();
    FederatedConfig cfg = small_config();
    const TrainingResult b = run_baseline(c.train, c.val, kSmall, cfg, std::size_t{1});
    CHECK(b.global.history.size() == 2);
    CHECK(b.ledger.records().empty());
    CHECK_THROWS_AS(run_baseline(c.train, c.val, kSmall, cfg, std::size_t{3}), ConfigError);
    const TrainingResult whole = run_baseline(c.train, c.val, kSmall, cfg, std::nullopt);
    CHECK(whole.global.history.size() == 2);
}

TEST_CASE("rounds CSV") {
    RoundMetrics m;
    m.round = 3;
    m.lr = 1e-4;
    m.mean_val_loss = 0.25;
    m.report.accuracy = 0.5;
    CHECK(rounds_csv_header() == "round,lr,mean_val_loss,accuracy,precision,recall,f1,subset_accuracy");
    CHECK(rounds_csv_row(m).rfind("3," + format_double(1e-4) + ",0.25,0.5,", 0) == 0);
    testing::TempDir dir("rounds");
    write_rounds_csv({m, m}, dir / "r.csv");
    const std::string text = testing::read_file(dir / "r.csv");
    CHECK(std::count(text.begin(), text.end(), '\n') == 3);
}

TEST_CASE("config validation") {
    FederatedConfig cfg;
    CHECK_NOTHROW(cfg.validate());
    cfg.clients = 0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = FederatedConfig{};
    cfg.threshold = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
    cfg = FederatedConfig{};
    cfg.train.dropout_p = 1.0;
    CHECK_THROWS_AS(cfg.validate(), ConfigError);
}

}
