#include "fedfdia/federated.hpp"

#include <algorithm>
#include <exception>
#include <fstream>
#include <limits>
#include <numeric>
#include <thread>

namespace fedfdia::federated {

using dataset::Dataset;
using neural::ModelParams;

// ---------------------------------------------------------------------------
// Partitioning

std::vector<std::vector<std::size_t>> partition_indices(std::size_t n, std::size_t m, Rng& rng) {
    if (m < 1) {
        throw ConfigError("need at least one client");
    }
    if (m > n) {
        throw ConfigError("cannot split " + std::to_string(n) + " samples among " + std::to_string(m) + " clients");
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::size_t>> shards(m);
    const std::size_t base = n / m;
    const std::size_t extra = n % m;
    std::size_t pos = 0;
    for (std::size_t k = 0; k < m; ++k) {
        const std::size_t len = base + (k < extra ? 1 : 0);
        shards[k].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                         order.begin() + static_cast<std::ptrdiff_t>(pos + len));
        pos += len;
    }
    return shards;
}

std::vector<Dataset> partition(const Dataset& train, std::size_t m, Rng& rng) {
    std::vector<Dataset> out;
    for (const auto& rows : partition_indices(train.size(), m, rng)) {
        out.push_back(train.subset(rows));
    }
    return out;
}

std::vector<Dataset> partition_label_skew(const Dataset& train, std::size_t m, double skew, Rng& rng) {
    if (m < 1 || m > train.size()) {
        throw ConfigError("invalid client count for label-skew partition");
    }
    if (!(skew >= 0.0 && skew <= 1.0)) {
        throw ConfigError("skew must lie in [0, 1]");
    }
    std::vector<std::vector<std::size_t>> rows(m);
    std::uniform_int_distribution<std::size_t> any_client(0, m - 1);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t r = 0; r < train.size(); ++r) {
        std::size_t target = any_client(rng);
        if (train.attacked(r) && u(rng) < skew) {
            const auto labels = train.labels().row(static_cast<Eigen::Index>(r));
            Eigen::Index first = 0;
            while (labels[first] == 0.0) {
                ++first;
            }
            target = static_cast<std::size_t>(first) % m;
        }
        rows[target].push_back(r);
    }
    std::vector<Dataset> out;
    for (auto& shard : rows) {
        if (shard.empty()) {
            throw ConfigError("label-skew partition left a client without data");
        }
        std::shuffle(shard.begin(), shard.end(), rng);
        out.push_back(train.subset(shard));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Local training and aggregation algebra

LocalResult local_train(ClientState& client, const ModelParams& global, const RoundPlan& plan,
                        const neural::TrainConfig& cfg, OptimizerState optimizer_state) {
    if (plan.local_epochs < 1) {
        throw ConfigError("local epochs must be >= 1");
    }
    if (client.shard.empty()) {
        throw ConfigError("client " + std::to_string(client.id) + " has an empty shard");
    }
    if (!client.shard.standardized()) {
        throw ConfigError("client shards must be standardized with the corpus scaler");
    }
    client.local_params = global;
    if (optimizer_state == OptimizerState::Reset || client.adam.m.size() != global.values().size()) {
        client.adam = neural::AdamState::zeros_like(global);
    }
    double last = 0.0;
    for (int e = 0; e < plan.local_epochs; ++e) {
        last = neural::train_epoch(client.local_params, client.adam, client.shard.features(), client.shard.labels(),
                                   cfg, plan.lr, client.rng);
    }
    return LocalResult{client.local_params, last};
}

ModelParams cumulative_gradient(const ModelParams& global, const ModelParams& local, double eta) {
    if (!(eta != 0.0)) {
        throw ConfigError("cumulative gradient needs a nonzero learning rate");
    }
    if (!global.same_shape(local)) {
        throw DimensionError("cumulative gradient: shape mismatch");
    }
    ModelParams g(global.architecture());
    auto out = g.mutable_values();
    const auto w = global.values();
    const auto wm = local.values();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = (w[i] - wm[i]) / eta;
    }
    return g;
}

std::vector<AggregationWeight> aggregation_weights(std::span<const std::size_t> sizes) {
    if (sizes.empty()) {
        throw ConfigError("aggregation needs at least one model");
    }
    std::uint64_t g = 0;
    for (std::size_t s : sizes) {
        if (s == 0) {
            throw ConfigError("aggregation sizes must be positive");
        }
        g = std::gcd(g, static_cast<std::uint64_t>(s));
    }
    std::uint64_t total = 0;
    for (std::size_t s : sizes) {
        total += s / g;
    }
    std::vector<AggregationWeight> out;
    for (std::size_t s : sizes) {
        out.push_back(AggregationWeight{s / g, total});
    }
    return out;
}

namespace {

void check_models(std::span<const ModelParams> models, std::span<const std::size_t> sizes) {
    if (models.empty() || models.size() != sizes.size()) {
        throw DimensionError("aggregate: need one size per model and at least one model");
    }
    for (const auto& m : models) {
        if (!m.same_shape(models.front())) {
            throw DimensionError("aggregate: models have different shapes");
        }
    }
}

}  // namespace

ModelParams aggregate(std::span<const ModelParams> models, std::span<const std::size_t> sizes) {
    check_models(models, sizes);
    const auto weights = aggregation_weights(sizes);
    const auto denom = static_cast<double>(weights.front().denominator);
    ModelParams out(models.front().architecture());
    auto dst = out.mutable_values();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        const double first = models.front().values()[i];
        bool same = true;
        for (std::size_t m = 1; m < models.size() && same; ++m) {
            same = models[m].values()[i] == first;
        }
        if (same) {
            dst[i] = first;
            continue;
        }
        double acc = 0.0;
        for (std::size_t m = 0; m < models.size(); ++m) {
            acc += static_cast<double>(weights[m].numerator) * models[m].values()[i];
        }
        dst[i] = acc / denom;
    }
    return out;
}

ModelParams delta_update(const ModelParams& global, std::span<const ModelParams> models,
                         std::span<const std::size_t> sizes, double server_lr) {
    check_models(models, sizes);
    if (!global.same_shape(models.front())) {
        throw DimensionError("delta update: global model shape differs");
    }
    const auto weights = aggregation_weights(sizes);
    ModelParams out = global;
    auto dst = out.mutable_values();
    for (std::size_t i = 0; i < dst.size(); ++i) {
        double delta = 0.0;
        for (std::size_t m = 0; m < models.size(); ++m) {
            delta += weights[m].value() * (models[m].values()[i] - global.values()[i]);
        }
        dst[i] += server_lr * delta;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Ledger and CSV

std::size_t CommunicationLedger::count_for_round(int round) const {
    return static_cast<std::size_t>(
        std::count_if(records_.begin(), records_.end(), [round](const TransferRecord& r) { return r.round == round; }));
}

std::size_t CommunicationLedger::total_bytes() const {
    std::size_t total = 0;
    for (const auto& r : records_) {
        total += r.bytes;
    }
    return total;
}

void CommunicationLedger::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ConfigError("cannot write " + path.string());
    }
    out << "round,kind,client,payload_hash,bytes\n";
    char hash[17];
    for (const auto& r : records_) {
        std::snprintf(hash, sizeof(hash), "%016llx", static_cast<unsigned long long>(r.payload_hash));
        out << r.round << ',' << r.kind << ',' << r.client << ',' << hash << ',' << r.bytes << '\n';
    }
}

std::string rounds_csv_header() { return "round,lr,mean_val_loss,accuracy,precision,recall,f1,subset_accuracy"; }

std::string rounds_csv_row(const RoundMetrics& m) {
    return std::to_string(m.round) + ',' + format_double(m.lr) + ',' + format_double(m.mean_val_loss) + ',' +
           format_double(m.report.accuracy) + ',' + format_double(m.report.precision) + ',' +
           format_double(m.report.recall) + ',' + format_double(m.report.f1) + ',' +
           format_double(m.report.subset_accuracy);
}

void write_rounds_csv(const std::vector<RoundMetrics>& history, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ConfigError("cannot write " + path.string());
    }
    out << rounds_csv_header() << '\n';
    for (const auto& m : history) {
        out << rounds_csv_row(m) << '\n';
    }
}

// ---------------------------------------------------------------------------
// Training loops

void FederatedConfig::validate() const {
    train.validate();
    if (clients < 1) {
        throw ConfigError("need at least one client");
    }
    if (rounds < 1) {
        throw ConfigError("need at least one round");
    }
    if (local_epochs < 1) {
        throw ConfigError("local epochs must be >= 1");
    }
    if (!(server_lr > 0.0)) {
        throw ConfigError("server learning rate must be positive");
    }
    if (stop_patience < 0) {
        throw ConfigError("stop patience must be >= 0");
    }
    if (threads < 1) {
        throw ConfigError("threads must be >= 1");
    }
    if (!(threshold > 0.0 && threshold < 1.0)) {
        throw ConfigError("decision threshold must lie in (0, 1)");
    }
    if (!(skew >= 0.0 && skew <= 1.0)) {
        throw ConfigError("skew must lie in [0, 1]");
    }
}

RoundMetrics evaluate(const ModelParams& params, std::span<const Dataset> val, const FederatedConfig& cfg) {
    if (val.empty()) {
        throw ConfigError("evaluation needs at least one validation subset");
    }
    RoundMetrics rm;
    std::vector<metrics::MetricReport> reports;
    const double penalty = neural::l2_penalty(params, cfg.train.l2);
    for (const Dataset& subset : val) {
        if (!subset.standardized()) {
            throw ConfigError("validation subsets must be standardized with the training scaler");
        }
        const Matrix probs = neural::predict(params, subset.features(), cfg.train);
        const Matrix labels = subset.labels();
        rm.mean_val_loss += neural::bce(probs, labels) + penalty;
        reports.push_back(metrics::report(probs, labels, cfg.threshold, cfg.averaging));
    }
    rm.mean_val_loss /= static_cast<double>(val.size());
    rm.report = metrics::average(reports);
    return rm;
}

namespace {

std::vector<Dataset> make_shards(const Dataset& train, const FederatedConfig& cfg) {
    if (!train.standardized()) {
        throw ConfigError("training data must be standardized with the corpus scaler");
    }
    Rng rng = make_rng(cfg.seed, "partition");
    return cfg.partition == PartitionScheme::Iid ? partition(train, cfg.clients, rng)
                                                 : partition_label_skew(train, cfg.clients, cfg.skew, rng);
}

ClientState make_client(std::size_t id, Dataset shard, const ModelParams& global, const FederatedConfig& cfg) {
    return ClientState{id, std::move(shard), global, neural::AdamState::zeros_like(global),
                       make_rng(cfg.seed, "client", id)};
}

// Shared round bookkeeping: scheduler, history, stop rule.
class RoundLoop {
  public:
    RoundLoop(const FederatedConfig& cfg, const RoundCallback& cb)
        : cfg_(cfg),
          cb_(cb),
          lr_(cfg.train.lr),
          scheduler_(cfg.train.plateau_factor, cfg.train.plateau_patience, cfg.train.plateau_min_delta) {}

    double lr() const { return lr_; }

    // Returns true when training should stop after this round.
    bool finish_round(TrainingResult& result, RoundMetrics rm) {
        rm.lr = lr_;
        result.global.round = rm.round;
        result.global.history.push_back(rm);
        if (cb_) {
            cb_(rm);
        }
        if (scheduler_.observe(rm.mean_val_loss)) {
            lr_ *= scheduler_.factor();
        }
        if (rm.mean_val_loss < best_loss_ - cfg_.train.plateau_min_delta) {
            best_loss_ = rm.mean_val_loss;
            since_best_ = 0;
        } else {
            ++since_best_;
        }
        if (cfg_.stop_f1 > 0.0 && rm.report.f1 >= cfg_.stop_f1) {
            result.stopped_early = rm.round < cfg_.rounds;
            result.stop_reason = "validation F1 reached target";
            return true;
        }
        if (cfg_.stop_patience > 0 && since_best_ >= cfg_.stop_patience) {
            result.stopped_early = rm.round < cfg_.rounds;
            result.stop_reason = "validation loss stopped improving";
            return true;
        }
        return false;
    }

  private:
    const FederatedConfig& cfg_;
    const RoundCallback& cb_;
    double lr_;
    neural::PlateauScheduler scheduler_;
    double best_loss_ = std::numeric_limits<double>::infinity();
    int since_best_ = 0;
};

template <typename Fn>
void run_clients(std::size_t n, const FederatedConfig& cfg, Fn&& fn) {
    const auto width = cfg.deterministic ? std::size_t{1} : static_cast<std::size_t>(cfg.threads);
    std::vector<std::exception_ptr> errors(n);
    auto guarded = [&](std::size_t m) {
        try {
            fn(m);
        } catch (...) {
            errors[m] = std::current_exception();
        }
    };
    if (width <= 1) {
        for (std::size_t m = 0; m < n; ++m) {
            guarded(m);
        }
    } else {
        for (std::size_t start = 0; start < n; start += width) {
            std::vector<std::jthread> batch;
            for (std::size_t m = start; m < std::min(n, start + width); ++m) {
                batch.emplace_back(guarded, m);
            }
        }
    }
    for (auto& e : errors) {
        if (e) {
            std::rethrow_exception(e);
        }
    }
}

}  // namespace

TrainingResult run_training(const Dataset& train, std::span<const Dataset> val, const neural::Architecture& arch,
                            const FederatedConfig& cfg, const RoundCallback& on_round) {
    cfg.validate();
    if (train.n_features() != arch.inputs || train.labels().cols() != arch.outputs) {
        throw ConfigError("architecture does not match dataset width");
    }
    Rng init_rng = make_rng(cfg.seed, "init");
    TrainingResult result{GlobalState{neural::init_params(arch, init_rng), 0, {}}, {}, false, {}};

    std::vector<ClientState> clients;
    std::vector<std::size_t> sizes;
    {
        auto shards = make_shards(train, cfg);
        for (std::size_t m = 0; m < shards.size(); ++m) {
            sizes.push_back(shards[m].size());
            clients.push_back(make_client(m, std::move(shards[m]), result.global.params, cfg));
        }
    }

    RoundLoop loop(cfg, on_round);
    std::vector<LocalResult> locals(clients.size(), LocalResult{result.global.params, 0.0});
    for (int k = 1; k <= cfg.rounds; ++k) {
        const std::string broadcast = neural::serialize(result.global.params);
        const std::uint64_t broadcast_hash = fnv1a64(broadcast);
        for (const auto& c : clients) {
            result.ledger.record({k, "broadcast", c.id, broadcast_hash, broadcast.size()});
        }

        const RoundPlan plan{k, cfg.local_epochs, loop.lr()};
        run_clients(clients.size(), cfg, [&](std::size_t m) {
            try {
                locals[m] = local_train(clients[m], result.global.params, plan, cfg.train, cfg.optimizer_state);
            } catch (const DivergenceError& e) {
                throw DivergenceError("round " + std::to_string(k) + ", client " + std::to_string(m) + ": " +
                                      e.what());
            }
        });

        std::vector<ModelParams> models;
        double train_loss = 0.0;
        for (std::size_t m = 0; m < clients.size(); ++m) {
            const std::string upload = neural::serialize(locals[m].params);
            result.ledger.record({k, "upload", m, fnv1a64(upload), upload.size()});
            models.push_back(locals[m].params);
            train_loss += static_cast<double>(sizes[m]) * locals[m].loss;
        }
        result.global.params = cfg.server_update == ServerUpdate::FedAvg
                                    ? aggregate(models, sizes)
                                    : delta_update(result.global.params, models, sizes, cfg.server_lr);
        if (!result.global.params.all_finite()) {
            throw DivergenceError("round " + std::to_string(k) + ": aggregated model is not finite");
        }

        RoundMetrics rm = evaluate(result.global.params, val, cfg);
        rm.round = k;
        rm.train_loss = train_loss / static_cast<double>(train.size());
        if (loop.finish_round(result, rm)) {
            break;
        }
    }
    return result;
}

TrainingResult run_baseline(const Dataset& train, std::span<const Dataset> val, const neural::Architecture& arch,
                            const FederatedConfig& cfg, std::optional<std::size_t> shard_index,
                            const RoundCallback& on_round) {
    cfg.validate();
    if (train.n_features() != arch.inputs || train.labels().cols() != arch.outputs) {
        throw ConfigError("architecture does not match dataset width");
    }
    if (shard_index && *shard_index >= cfg.clients) {
        throw ConfigError("shard index " + std::to_string(*shard_index) + " out of range for " +
                          std::to_string(cfg.clients) + " clients");
    }
    Rng init_rng = make_rng(cfg.seed, "init");
    TrainingResult result{GlobalState{neural::init_params(arch, init_rng), 0, {}}, {}, false, {}};

    Dataset data;
    std::size_t id = 0;
    if (shard_index) {
        auto shards = make_shards(train, cfg);
        data = std::move(shards[*shard_index]);
        id = *shard_index;
    } else {
        if (!train.standardized()) {
            throw ConfigError("training data must be standardized with the corpus scaler");
        }
        data = train;
    }
    ClientState client = make_client(id, std::move(data), result.global.params, cfg);

    RoundLoop loop(cfg, on_round);
    for (int k = 1; k <= cfg.rounds; ++k) {
        const RoundPlan plan{k, cfg.local_epochs, loop.lr()};
        LocalResult local = [&] {
            try {
                return local_train(client, result.global.params, plan, cfg.train, OptimizerState::Persist);
            } catch (const DivergenceError& e) {
                throw DivergenceError("round " + std::to_string(k) + ": " + e.what());
            }
        }();
        result.global.params = std::move(local.params);
        RoundMetrics rm = evaluate(result.global.params, val, cfg);
        rm.round = k;
        rm.train_loss = local.loss;
        if (loop.finish_round(result, rm)) {
            break;
        }
    }
    return result;
}

}  // namespace fedfdia::federated
