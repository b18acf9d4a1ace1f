#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedfdia/dataset.hpp"
#include "fedfdia/metrics.hpp"
#include "fedfdia/neural.hpp"

namespace fedfdia::federated {

/// How the server folds client models into the next global model.
enum class ServerUpdate {
    FedAvg,  // w = sum_m |D_m|/D * w_m
    Delta,   // w = w + server_lr * sum_m |D_m|/D * (w_m - w)
};

enum class PartitionScheme { Iid, LabelSkew };

/// Whether a client's Adam moments survive between rounds.
enum class OptimizerState { Persist, Reset };

/// Shuffled IID split of `n` rows into `m` shards whose sizes differ by at most one.
std::vector<std::vector<std::size_t>> partition_indices(std::size_t n, std::size_t m, Rng& rng);

std::vector<dataset::Dataset> partition(const dataset::Dataset& train, std::size_t m, Rng& rng);

/// Attacked rows go to client (first compromised meter mod m) with
/// probability `skew`, otherwise to a uniformly random client.
std::vector<dataset::Dataset> partition_label_skew(const dataset::Dataset& train, std::size_t m, double skew,
                                                   Rng& rng);

/// An edge server: its data shard, its copy of the model and its private RNG stream.
struct ClientState {
    std::size_t id = 0;
    dataset::Dataset shard;
    neural::ModelParams local_params;
    neural::AdamState adam;
    Rng rng;
};

struct RoundPlan {
    int round = 1;
    int local_epochs = 5;
    double lr = 1e-3;
};

struct LocalResult {
    neural::ModelParams params;
    double loss = 0.0;  // mean loss of the last local epoch
};

/// Starts from `global` and runs plan.local_epochs full passes of mini-batch
/// Adam over the client's shard.
LocalResult local_train(ClientState& client, const neural::ModelParams& global, const RoundPlan& plan,
                        const neural::TrainConfig& cfg, OptimizerState optimizer_state = OptimizerState::Persist);

/// (global - local) / eta, element-wise.
neural::ModelParams cumulative_gradient(const neural::ModelParams& global, const neural::ModelParams& local,
                                        double eta);

/// |D_m| / D as a reduced fraction of counts.
struct AggregationWeight {
    std::uint64_t numerator = 0;
    std::uint64_t denominator = 1;

    double value() const { return static_cast<double>(numerator) / static_cast<double>(denominator); }
};

/// Weights reduced by the gcd of all sizes; numerators sum to the denominator.
std::vector<AggregationWeight> aggregation_weights(std::span<const std::size_t> sizes);

/// Data-size weighted element-wise mean of the models. Elements on which all
/// models agree are copied unchanged; otherwise sum(n_m * w_m) / sum(n_m)
/// with gcd-reduced integer weights, so equal shards give the plain
/// arithmetic mean.
neural::ModelParams aggregate(std::span<const neural::ModelParams> models, std::span<const std::size_t> sizes);

/// global + server_lr * sum_m (|D_m| / D) * (w_m - global).
neural::ModelParams delta_update(const neural::ModelParams& global, std::span<const neural::ModelParams> models,
                                 std::span<const std::size_t> sizes, double server_lr);

struct RoundMetrics {
    int round = 0;
    double lr = 0.0;
    double mean_val_loss = 0.0;
    double train_loss = 0.0;
    metrics::MetricReport report;  // averaged over validation subsets
};

struct TransferRecord {
    int round = 0;
    std::string kind;  // "broadcast" or "upload"
    std::size_t client = 0;
    std::uint64_t payload_hash = 0;
    std::size_t bytes = 0;
};

/// Simulated transport log: one record per model transfer.
class CommunicationLedger {
  public:
    void record(TransferRecord r) { records_.push_back(std::move(r)); }
    const std::vector<TransferRecord>& records() const { return records_; }
    std::size_t count_for_round(int round) const;
    std::size_t total_bytes() const;
    void write_csv(const std::filesystem::path& path) const;

  private:
    std::vector<TransferRecord> records_;
};

struct FederatedConfig {
    std::size_t clients = 5;
    int rounds = 30;
    int local_epochs = 5;
    neural::TrainConfig train;
    std::uint64_t seed = 7;
    ServerUpdate server_update = ServerUpdate::FedAvg;
    double server_lr = 1.0;
    double stop_f1 = 0.0;   // stop once validation F1 reaches this; <= 0 disables
    int stop_patience = 0;  // stop after this many rounds without val-loss improvement; 0 disables
    int threads = 1;
    bool deterministic = false;  // run clients sequentially in id order
    PartitionScheme partition = PartitionScheme::Iid;
    double skew = 0.8;
    OptimizerState optimizer_state = OptimizerState::Persist;
    double threshold = 0.5;
    metrics::Averaging averaging = metrics::Averaging::Micro;

    void validate() const;
};

struct GlobalState {
    neural::ModelParams params;
    int round = 0;
    std::vector<RoundMetrics> history;
};

struct TrainingResult {
    GlobalState global;
    CommunicationLedger ledger;
    bool stopped_early = false;
    std::string stop_reason;
};

using RoundCallback = std::function<void(const RoundMetrics&)>;

/// Evaluates `params` on each validation subset and averages the results.
RoundMetrics evaluate(const neural::ModelParams& params, std::span<const dataset::Dataset> val,
                      const FederatedConfig& cfg);

/// Federated training: per round, broadcast the global model, train every
/// client locally, aggregate, evaluate, step the plateau scheduler and check
/// the stop rule. DivergenceError messages name the round and client.
TrainingResult run_training(const dataset::Dataset& train, std::span<const dataset::Dataset> val,
                            const neural::Architecture& arch, const FederatedConfig& cfg,
                            const RoundCallback& on_round = {});

/// Non-collaborative reference: one client trains alone on shard
/// `shard_index` of the same partition (or on the whole training set when
/// absent) for rounds x local_epochs epochs, evaluated every local_epochs.
TrainingResult run_baseline(const dataset::Dataset& train, std::span<const dataset::Dataset> val,
                            const neural::Architecture& arch, const FederatedConfig& cfg,
                            std::optional<std::size_t> shard_index, const RoundCallback& on_round = {});

/// round,lr,mean_val_loss,accuracy,precision,recall,f1,subset_accuracy
void write_rounds_csv(const std::vector<RoundMetrics>& history, const std::filesystem::path& path);
std::string rounds_csv_header();
std::string rounds_csv_row(const RoundMetrics& m);

}  // namespace fedfdia::federated
