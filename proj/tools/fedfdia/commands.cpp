#include "commands.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "fedfdia/attack.hpp"
#include "fedfdia/dataset.hpp"
#include "fedfdia/estimation.hpp"
#include "fedfdia/federated.hpp"
#include "fedfdia/grid.hpp"
#include "fedfdia/metrics.hpp"
#include "fedfdia/neural.hpp"

#ifndef FEDFDIA_DATA_DIR
#define FEDFDIA_DATA_DIR "data"
#endif

namespace fedfdia::cli {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

namespace {

const std::string kDataDir = FEDFDIA_DATA_DIR;

// ---------------------------------------------------------------------------
// Shared option groups

struct GridOptions {
    std::string grid = kDataDir + "/ieee14.grid";
    std::string meas = kDataDir + "/ieee14.meas";
    std::string loads = kDataDir + "/ieee14.loads";

    void add_to(CLI::App& app) {
        app.add_option("--grid", grid, "Grid-config file (buses/branch records)");
        app.add_option("--meas", meas, "Measurement-config file (inj/flow records)");
        app.add_option("--loads", loads, "Base operating point (load/gen records, p.u.)");
    }
};

struct GridSetup {
    grid::BusSystem system;
    grid::MeasurementConfig meas;
    grid::HMatrix h;
    grid::InjectionProfile profile;
};

GridSetup load_grid(const GridOptions& o) {
    auto system = grid::load_bus_system(o.grid);
    auto meas = grid::load_measurement_config(o.meas);
    auto h = grid::build_h(system, meas);
    auto profile = grid::load_injection_profile(o.loads, system);
    return GridSetup{std::move(system), std::move(meas), std::move(h), std::move(profile)};
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

std::string fmt(double v, int digits = 4) {
    std::ostringstream s;
    s << std::fixed << std::setprecision(digits) << v;
    return s.str();
}

std::string val_file_name(std::size_t k) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "val_%02zu.csv", k);
    return buf;
}

// Validation subsets with the training scaler applied.
struct LoadedData {
    dataset::Dataset train;  // standardized
    std::vector<dataset::Dataset> val;
    dataset::Metadata meta;
};

std::vector<dataset::Dataset> load_val(const fs::path& dir, const dataset::Metadata& train_meta,
                                       const dataset::Scaler& scaler) {
    const auto it = train_meta.find("val_subsets");
    if (it == train_meta.end()) {
        throw ConfigError((dir / "train.csv").string() + ".meta: missing val_subsets");
    }
    const auto n = static_cast<std::size_t>(parse_int(it->second, "val_subsets"));
    std::vector<dataset::Dataset> out;
    for (std::size_t k = 0; k < n; ++k) {
        out.push_back(dataset::apply_scaler(dataset::load(dir / val_file_name(k)), scaler));
    }
    return out;
}

LoadedData load_data_dir(const fs::path& dir) {
    const fs::path train_path = dir / "train.csv";
    if (!fs::exists(train_path)) {
        throw ConfigError("dataset not found: " + train_path.string());
    }
    dataset::Dataset raw = dataset::load(train_path);
    if (!raw.scaler()) {
        throw ConfigError(train_path.string() + ".meta: missing scaler");
    }
    const dataset::Scaler scaler = *raw.scaler();
    auto meta = dataset::load_metadata(train_path);
    auto val = load_val(dir, meta, scaler);
    return LoadedData{dataset::apply_scaler(raw, scaler), std::move(val), std::move(meta)};
}

std::vector<int> parse_widths(const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        out.push_back(static_cast<int>(parse_int(item, "hidden width")));
    }
    if (out.empty()) {
        throw ConfigError("--hidden needs at least one width");
    }
    return out;
}

std::string meter_name(const grid::MeasurementConfig* meas, std::size_t i) {
    if (meas && i < meas->size()) {
        return grid::describe(meas->entries[i]);
    }
    return "m" + std::to_string(i + 1);
}

void write_per_location(const fs::path& path, const std::vector<metrics::ConfusionCounts>& counts,
                        const grid::MeasurementConfig* meas) {
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ConfigError("cannot write " + path.string());
    }
    out << "location,meter,tp,fp,tn,fn,accuracy,precision,recall,f1\n";
    for (std::size_t i = 0; i < counts.size(); ++i) {
        const auto& c = counts[i];
        out << i + 1 << ',' << meter_name(meas, i) << ',' << c.tp << ',' << c.fp << ',' << c.tn << ',' << c.fn << ','
            << format_double(metrics::accuracy(c)) << ',' << format_double(metrics::precision(c)) << ','
            << format_double(metrics::recall(c)) << ',' << format_double(metrics::f1(c)) << '\n';
    }
}

std::vector<metrics::ConfusionCounts> per_location_counts(const neural::ModelParams& params,
                                                          const std::vector<dataset::Dataset>& val,
                                                          const neural::TrainConfig& tc, double threshold) {
    std::vector<metrics::ConfusionCounts> total;
    for (const auto& subset : val) {
        const auto counts =
            metrics::confusion_per_location(neural::predict(params, subset.features(), tc), subset.labels(), threshold);
        total.resize(counts.size());
        for (std::size_t i = 0; i < counts.size(); ++i) {
            total[i] += counts[i];
        }
    }
    return total;
}

// ---------------------------------------------------------------------------
// gen-data

struct GenDataOptions {
    GridOptions grid;
    std::string out = "fdia-data";
    std::string profile = "desk";
    std::size_t n_train = 20000;
    std::size_t n_val = 2000;
    std::size_t subsets = 10;
    double attack_fraction = 0.5;
    double sigma = 0.2;
    double variation = 0.2;
    double magnitude = 0.2;
    int min_sparsity = 1;
    int max_sparsity = 3;
    double label_eps = 1e-6;
    double unstructured_share = 0.0;
    double sigma_mult = 50.0;
    double alpha = 0.05;
    std::uint64_t seed = 7;
    int threads = 1;

    CLI::Option* train_opt = nullptr;
    CLI::Option* val_opt = nullptr;
    CLI::Option* subsets_opt = nullptr;
};

void add_gen_data(CLI::App& app, GenDataOptions& o) {
    o.grid.add_to(app);
    app.add_option("--out", o.out, "Output directory (env FEDFDIA_OUT_DIR)")->envname("FEDFDIA_OUT_DIR");
    app.add_option("--profile", o.profile, "Corpus size preset: desk (20k/2k) or paper (100k/10k)")
        ->check(CLI::IsMember({"desk", "paper"}));
    o.train_opt = app.add_option("--train", o.n_train, "Training samples (overrides profile)");
    o.val_opt = app.add_option("--val", o.n_val, "Validation samples (overrides profile)");
    o.subsets_opt = app.add_option("--subsets", o.subsets, "Validation subsets (overrides profile)");
    app.add_option("--attack-fraction", o.attack_fraction, "Share of attacked samples per split");
    app.add_option("--sigma", o.sigma, "Measurement noise stddev (p.u.)");
    app.add_option("--variation", o.variation, "Uniform load scaling half-width");
    app.add_option("--magnitude", o.magnitude, "Upper bound of injected state error |c_k| (rad)");
    app.add_option("--min-sparsity", o.min_sparsity, "Fewest attacked states");
    app.add_option("--max-sparsity", o.max_sparsity, "Most attacked states");
    app.add_option("--label-eps", o.label_eps, "Meter counts as compromised when |a_i| exceeds this");
    app.add_option("--unstructured-share", o.unstructured_share,
                   "Share of attacked samples given a gross single-meter error instead");
    app.add_option("--sigma-mult", o.sigma_mult, "Gross error size in noise sigmas");
    app.add_option("--alpha", o.alpha, "BDD significance used in the summary");
    app.add_option("--seed", o.seed, "Master seed");
    app.add_option("--threads", o.threads, "Generator threads");
}

int cmd_gen_data(GenDataOptions& o, std::ostream& out) {
    if (o.profile == "paper") {
        if (!o.train_opt->count()) o.n_train = 100000;
        if (!o.val_opt->count()) o.n_val = 10000;
    }
    dataset::CorpusConfig cc;
    cc.split = dataset::SplitSpec{o.n_train, o.n_val, o.subsets, o.attack_fraction};
    cc.sigma = o.sigma;
    cc.variation = o.variation;
    cc.attack = attack::AttackParams{o.magnitude, o.min_sparsity, o.max_sparsity, o.label_eps};
    cc.unstructured_share = o.unstructured_share;
    cc.gross_sigma_mult = o.sigma_mult;
    cc.seed = o.seed;
    cc.threads = o.threads;
    cc.split.validate();
    if (!(o.sigma > 0.0)) {
        throw ConfigError("--sigma must be positive");
    }
    if (o.threads < 1) {
        throw ConfigError("--threads must be >= 1");
    }
    const GridSetup g = load_grid(o.grid);
    const auto bdd = estimation::BddConfig::for_h(g.h, o.alpha);

    dataset::Corpus corpus = dataset::build_corpus(cc, g.system, g.h, g.profile);
    const dataset::Scaler scaler = dataset::fit_scaler(corpus.train);

    dataset::Metadata meta{
        {"seed", std::to_string(o.seed)},
        {"sigma", format_double(o.sigma)},
        {"variation", format_double(o.variation)},
        {"attack_fraction", format_double(o.attack_fraction)},
        {"magnitude", format_double(o.magnitude)},
        {"min_sparsity", std::to_string(o.min_sparsity)},
        {"max_sparsity", std::to_string(o.max_sparsity)},
        {"label_eps", format_double(o.label_eps)},
        {"unstructured_share", format_double(o.unstructured_share)},
        {"sigma_mult", format_double(o.sigma_mult)},
        {"grid_hash", hex64(grid::grid_hash(g.system, g.meas))},
        {"val_subsets", std::to_string(o.subsets)},
    };
    const fs::path dir = o.out;
    fs::create_directories(dir);
    corpus.train.set_scaler(scaler);
    meta["kind"] = "train";
    dataset::save(corpus.train, dir / "train.csv", meta);
    meta["kind"] = "val";
    for (std::size_t k = 0; k < corpus.val.size(); ++k) {
        corpus.val[k].set_scaler(scaler);
        meta["subset"] = std::to_string(k);
        dataset::save(corpus.val[k], dir / val_file_name(k), meta);
    }

    // Residual test over the training split, split by class.
    const estimation::WlsEstimator est(g.h, estimation::WeightMatrix::from_sigma(g.h.rows(), o.sigma));
    std::size_t n_att = 0, n_norm = 0, f_att = 0, f_norm = 0;
    for (std::size_t r = 0; r < corpus.train.size(); ++r) {
        const Vector y = corpus.train.features().row(static_cast<Eigen::Index>(r)).transpose();
        const bool flagged = estimation::run_bdd(est, y, bdd).flagged;
        if (corpus.train.attacked(r)) {
            ++n_att;
            f_att += flagged;
        } else {
            ++n_norm;
            f_norm += flagged;
        }
    }
    const double rate_att = n_att ? static_cast<double>(f_att) / static_cast<double>(n_att) : 0.0;
    const double rate_norm = n_norm ? static_cast<double>(f_norm) / static_cast<double>(n_norm) : 0.0;
    out << "corpus written to " << dir.string() << '\n'
        << "  train: " << corpus.train.size() << " samples (" << corpus.train.n_attacked() << " attacked)\n"
        << "  val:   " << corpus.val.size() << " subsets x " << (corpus.val.empty() ? 0 : corpus.val[0].size())
        << " samples\n"
        << "  meters: " << g.h.rows() << ", states: " << g.h.cols() << ", positive-label rate: "
        << fmt(corpus.train.labels().mean()) << '\n'
        << "  BDD (alpha=" << format_double(o.alpha) << ", dof=" << bdd.degrees_of_freedom
        << ", tau=" << fmt(bdd.threshold) << ") flag rate: normal " << fmt(rate_norm) << ", attacked "
        << fmt(rate_att) << ", gap " << fmt(std::abs(rate_att - rate_norm)) << '\n';
    return kOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
    GridOptions grid;
    std::string data = "fdia-data";
    std::string out = "fdia-run";
    std::string config;
    std::string profile = "desk";
    std::size_t clients = 5;
    int rounds = 30;
    int local_epochs = 5;
    std::size_t batch = 32;
    double lr = 1e-3;
    double l2 = 0.01;
    double dropout = 0.4;
    std::string hidden = "128,64";
    std::string server_update = "fedavg";
    double server_lr = 1.0;
    double stop_f1 = 0.0;
    int stop_patience = 0;
    double plateau_factor = 0.1;
    int plateau_patience = 10;
    bool baseline = false;
    int shard_index = -1;
    std::string partition = "iid";
    double skew = 0.8;
    std::string optimizer_state = "persist";
    double threshold = 0.5;
    bool macro = false;
    bool per_location = false;
    int threads = 1;
    bool deterministic = false;
    std::uint64_t seed = 7;
    bool quiet = false;

    CLI::Option* rounds_opt = nullptr;
};

void add_train(CLI::App& app, TrainOptions& o) {
    app.add_option("--config", o.config, "Experiment config file (key=value, keys are flag names)");
    app.add_option("--data", o.data, "Directory written by gen-data");
    app.add_option("--out", o.out, "Run directory (env FEDFDIA_OUT_DIR)")->envname("FEDFDIA_OUT_DIR");
    app.add_option("--meas", o.grid.meas, "Measurement-config file (meter names in per-location output)");
    app.add_option("--profile", o.profile, "Round preset: desk (30) or paper (100)")
        ->check(CLI::IsMember({"desk", "paper"}));
    app.add_option("--clients", o.clients, "Edge servers");
    o.rounds_opt = app.add_option("--rounds", o.rounds, "Global rounds (overrides profile)");
    app.add_option("--local-epochs", o.local_epochs, "Local passes over each shard per round");
    app.add_option("--batch", o.batch, "Mini-batch size");
    app.add_option("--lr", o.lr, "Initial learning rate");
    app.add_option("--l2", o.l2, "L2 factor on dense kernels");
    app.add_option("--dropout", o.dropout, "Dropout rate after each hidden block");
    app.add_option("--hidden", o.hidden, "Hidden widths, comma separated");
    app.add_option("--server-update", o.server_update, "fedavg (weighted model average) or delta")
        ->check(CLI::IsMember({"fedavg", "delta"}));
    app.add_option("--server-lr", o.server_lr, "Server step for --server-update delta");
    app.add_option("--stop-f1", o.stop_f1, "Stop once validation F1 reaches this (0 = off)");
    app.add_option("--stop-patience", o.stop_patience, "Stop after this many rounds without val-loss gain (0 = off)");
    app.add_option("--plateau-factor", o.plateau_factor, "LR multiplier on plateau");
    app.add_option("--plateau-patience", o.plateau_patience, "Rounds without val-loss gain before LR decay");
    app.add_flag("--baseline", o.baseline, "Train one client alone (no aggregation)");
    app.add_option("--shard-index", o.shard_index, "Baseline shard (-1 = whole training set)");
    app.add_option("--partition", o.partition, "Client split: iid or label-skew")
        ->check(CLI::IsMember({"iid", "label-skew"}));
    app.add_option("--skew", o.skew, "Label-skew strength");
    app.add_option("--optimizer-state", o.optimizer_state, "Client Adam moments across rounds: persist or reset")
        ->check(CLI::IsMember({"persist", "reset"}));
    app.add_option("--threshold", o.threshold, "Decision threshold on sigmoid outputs");
    app.add_flag("--macro", o.macro, "Macro-average metrics over locations");
    app.add_flag("--per-location", o.per_location, "Also write per_location.csv");
    app.add_option("--threads", o.threads, "Clients trained concurrently");
    app.add_flag("--deterministic", o.deterministic, "Train clients sequentially in id order");
    app.add_option("--seed", o.seed, "Master seed");
    app.add_flag("--quiet", o.quiet, "Only print the final round");
}

federated::FederatedConfig make_fl_config(const TrainOptions& o) {
    federated::FederatedConfig c;
    c.clients = o.clients;
    c.rounds = o.rounds;
    c.local_epochs = o.local_epochs;
    c.train.lr = o.lr;
    c.train.l2 = o.l2;
    c.train.dropout_p = o.dropout;
    c.train.batch_size = o.batch;
    c.train.plateau_factor = o.plateau_factor;
    c.train.plateau_patience = o.plateau_patience;
    c.seed = o.seed;
    c.server_update = o.server_update == "delta" ? federated::ServerUpdate::Delta : federated::ServerUpdate::FedAvg;
    c.server_lr = o.server_lr;
    c.stop_f1 = o.stop_f1;
    c.stop_patience = o.stop_patience;
    c.threads = o.threads;
    c.deterministic = o.deterministic;
    c.partition = o.partition == "label-skew" ? federated::PartitionScheme::LabelSkew : federated::PartitionScheme::Iid;
    c.skew = o.skew;
    c.optimizer_state =
        o.optimizer_state == "reset" ? federated::OptimizerState::Reset : federated::OptimizerState::Persist;
    c.threshold = o.threshold;
    c.averaging = o.macro ? metrics::Averaging::Macro : metrics::Averaging::Micro;
    return c;
}

json scaler_json(const dataset::Scaler& s) {
    return json{{"mean", std::vector<double>(s.mean.data(), s.mean.data() + s.mean.size())},
                {"stddev", std::vector<double>(s.stddev.data(), s.stddev.data() + s.stddev.size())}};
}

int cmd_train(TrainOptions& o, std::ostream& out) {
    if (o.profile == "paper" && !o.rounds_opt->count()) {
        o.rounds = 100;
    }
    const federated::FederatedConfig cfg = make_fl_config(o);
    cfg.validate();
    if (o.shard_index < -1 || (o.shard_index >= 0 && static_cast<std::size_t>(o.shard_index) >= o.clients)) {
        throw ConfigError("--shard-index must be -1 or below --clients");
    }
    neural::Architecture arch;
    arch.hidden = parse_widths(o.hidden);

    LoadedData data = load_data_dir(o.data);
    arch.inputs = static_cast<int>(data.train.n_features());
    arch.outputs = static_cast<int>(data.train.labels().cols());
    arch.validate();
    std::optional<grid::MeasurementConfig> meas;
    if (fs::exists(o.grid.meas)) {
        meas = grid::load_measurement_config(o.grid.meas);
    }

    const fs::path dir = o.out;
    fs::create_directories(dir);
    auto on_round = [&](const federated::RoundMetrics& m) {
        if (!o.quiet) {
            out << "round " << std::setw(3) << m.round << "  lr " << format_double(m.lr) << "  val_loss "
                << fmt(m.mean_val_loss) << "  acc " << fmt(m.report.accuracy) << "  prec " << fmt(m.report.precision)
                << "  rec " << fmt(m.report.recall) << "  f1 " << fmt(m.report.f1) << '\n'
                << std::flush;
        }
    };
    federated::TrainingResult result =
        o.baseline ? federated::run_baseline(data.train, data.val, arch, cfg,
                                             o.shard_index >= 0 ? std::optional<std::size_t>(o.shard_index)
                                                                : std::nullopt,
                                             on_round)
                   : federated::run_training(data.train, data.val, arch, cfg, on_round);

    federated::write_rounds_csv(result.global.history, dir / "rounds.csv");
    result.ledger.write_csv(dir / "ledger.csv");
    json extra{
        {"mode", o.baseline ? "baseline" : "federated"},
        {"seed", o.seed},
        {"clients", o.clients},
        {"rounds_run", result.global.round},
        {"local_epochs", o.local_epochs},
        {"l2", o.l2},
        {"threshold", o.threshold},
        {"grid_hash", data.meta.count("grid_hash") ? data.meta.at("grid_hash") : ""},
        {"scaler", scaler_json(*data.train.scaler())},
    };
    neural::save_checkpoint(result.global.params, dir / "model.bin", extra.dump());
    if (o.per_location) {
        write_per_location(dir / "per_location.csv",
                           per_location_counts(result.global.params, data.val, cfg.train, cfg.threshold),
                           meas ? &*meas : nullptr);
    }
    const auto& last = result.global.history.back();
    out << "final round " << last.round << ": accuracy " << fmt(last.report.accuracy) << ", precision "
        << fmt(last.report.precision) << ", recall " << fmt(last.report.recall) << ", f1 " << fmt(last.report.f1)
        << '\n';
    if (result.stopped_early) {
        out << "stopped early: " << result.stop_reason << '\n';
    }
    out << "wrote " << (dir / "rounds.csv").string() << ", " << (dir / "ledger.csv").string() << ", "
        << (dir / "model.bin").string() << '\n';
    return kOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOptions {
    std::string checkpoint;
    std::string data = "fdia-data";
    std::string report;
    std::string meas = kDataDir + "/ieee14.meas";
    double threshold = 0.5;
    bool macro = false;
    bool per_location = false;
};

void add_eval(CLI::App& app, EvalOptions& o) {
    app.add_option("--checkpoint", o.checkpoint, "Model file written by train (manifest alongside)")->required();
    app.add_option("--data", o.data, "Directory written by gen-data");
    app.add_option("--report", o.report, "JSON report path (default: report.json next to the checkpoint)");
    app.add_option("--meas", o.meas, "Measurement-config file (meter names in per-location output)");
    app.add_option("--threshold", o.threshold, "Decision threshold on sigmoid outputs");
    app.add_flag("--macro", o.macro, "Macro-average metrics over locations");
    app.add_flag("--per-location", o.per_location, "Also write per_location.csv next to the report");
}

json report_json(const metrics::MetricReport& r) {
    return json{{"accuracy", r.accuracy},
                {"precision", r.precision},
                {"recall", r.recall},
                {"f1", r.f1},
                {"subset_accuracy", r.subset_accuracy},
                {"tp", r.counts.tp},
                {"fp", r.counts.fp},
                {"tn", r.counts.tn},
                {"fn", r.counts.fn}};
}

int cmd_eval(const EvalOptions& o, std::ostream& out) {
    if (!(o.threshold > 0.0 && o.threshold < 1.0)) {
        throw ConfigError("--threshold must lie in (0, 1)");
    }
    if (!fs::exists(o.checkpoint)) {
        throw ConfigError("checkpoint not found: " + o.checkpoint);
    }
    const neural::Checkpoint ckpt = neural::load_checkpoint(o.checkpoint);
    const json manifest = json::parse(ckpt.manifest_json);
    const json extra = manifest.value("extra", json::object());

    const fs::path data_dir = o.data;
    const auto meta = dataset::load_metadata(data_dir / "train.csv");
    const dataset::Dataset train_raw = dataset::load(data_dir / "train.csv");
    if (!train_raw.scaler()) {
        throw ConfigError("train.csv.meta: missing scaler");
    }
    const auto val = load_val(data_dir, meta, *train_raw.scaler());
    const auto& arch = ckpt.params.architecture();
    if (val.empty() || arch.inputs != val.front().n_features() || arch.outputs != val.front().labels().cols()) {
        throw ConfigError("checkpoint/manifest mismatch: model width does not fit the validation data");
    }
    if (extra.contains("grid_hash") && meta.count("grid_hash") && extra["grid_hash"] != meta.at("grid_hash")) {
        throw ConfigError("checkpoint/manifest mismatch: model was trained on a different grid configuration");
    }

    federated::FederatedConfig cfg;
    cfg.train.l2 = extra.value("l2", 0.0);
    cfg.threshold = o.threshold;
    cfg.averaging = o.macro ? metrics::Averaging::Macro : metrics::Averaging::Micro;

    json per_subset = json::array();
    for (const auto& subset : val) {
        const federated::RoundMetrics m = federated::evaluate(ckpt.params, std::span(&subset, 1), cfg);
        json row = report_json(m.report);
        row["loss"] = m.mean_val_loss;
        per_subset.push_back(row);
    }
    const federated::RoundMetrics avg = federated::evaluate(ckpt.params, val, cfg);

    json rep;
    rep["checkpoint_fnv1a"] = manifest.value("payload_fnv1a", "");
    rep["threshold"] = o.threshold;
    rep["averaging"] = o.macro ? "macro" : "micro";
    rep["subsets"] = val.size();
    rep["mean_val_loss"] = avg.mean_val_loss;
    rep["average"] = report_json(avg.report);
    rep["per_subset"] = per_subset;

    const fs::path report_path = o.report.empty() ? fs::path(o.checkpoint).parent_path() / "report.json" : fs::path(o.report);
    if (!report_path.parent_path().empty()) {
        fs::create_directories(report_path.parent_path());
    }
    std::ofstream rout(report_path, std::ios::binary);
    if (!rout) {
        throw ConfigError("cannot write " + report_path.string());
    }
    rout << rep.dump(2) << '\n';
    if (o.per_location) {
        std::optional<grid::MeasurementConfig> meas;
        if (fs::exists(o.meas)) {
            meas = grid::load_measurement_config(o.meas);
        }
        auto pl_path = report_path.parent_path() / "per_location.csv";
        write_per_location(pl_path, per_location_counts(ckpt.params, val, cfg.train, o.threshold),
                           meas ? &*meas : nullptr);
    }

    out << "evaluated " << val.size() << " validation subsets (threshold " << format_double(o.threshold) << ", "
        << (o.macro ? "macro" : "micro") << ")\n"
        << "  accuracy  " << fmt(avg.report.accuracy) << '\n'
        << "  precision " << fmt(avg.report.precision) << '\n'
        << "  recall    " << fmt(avg.report.recall) << '\n'
        << "  f1        " << fmt(avg.report.f1) << '\n'
        << "  subset accuracy " << fmt(avg.report.subset_accuracy) << '\n'
        << "  counts tp=" << avg.report.counts.tp << " fp=" << avg.report.counts.fp << " tn=" << avg.report.counts.tn
        << " fn=" << avg.report.counts.fn << '\n'
        << "report: " << report_path.string() << '\n';
    return kOk;
}

// ---------------------------------------------------------------------------
// attack-demo

struct AttackDemoOptions {
    GridOptions grid;
    std::size_t n = 20;
    std::uint64_t seed = 7;
    double sigma = 0.2;
    double variation = 0.2;
    double alpha = 0.05;
    double magnitude = 0.2;
    int max_sparsity = 3;
    bool unstructured = false;
    double sigma_mult = 50.0;
};

void add_attack_demo(CLI::App& app, AttackDemoOptions& o) {
    o.grid.add_to(app);
    app.add_option("--n", o.n, "Rows (scenario/attack pairs)");
    app.add_option("--seed", o.seed, "Master seed");
    app.add_option("--sigma", o.sigma, "Measurement noise stddev (p.u.)");
    app.add_option("--variation", o.variation, "Uniform load scaling half-width");
    app.add_option("--alpha", o.alpha, "BDD significance");
    app.add_option("--magnitude", o.magnitude, "Stealthy attack state error bound (rad)");
    app.add_option("--max-sparsity", o.max_sparsity, "Most attacked states (stealthy)");
    app.add_flag("--unstructured", o.unstructured, "Show only the gross single-meter attack columns");
    app.add_option("--sigma-mult", o.sigma_mult, "Gross error size in noise sigmas");
}

int cmd_attack_demo(const AttackDemoOptions& o, std::ostream& out) {
    if (!(o.sigma > 0.0)) {
        throw ConfigError("--sigma must be positive");
    }
    const GridSetup g = load_grid(o.grid);
    const auto bdd = estimation::BddConfig::for_h(g.h, o.alpha);
    const attack::AttackParams ap{o.magnitude, 1, o.max_sparsity, 1e-6};
    if (o.max_sparsity < 1 || o.max_sparsity > g.h.cols() || !(o.magnitude > 0.0)) {
        throw ConfigError("invalid attack parameters");
    }
    const estimation::WlsEstimator est(g.h, estimation::WeightMatrix::from_sigma(g.h.rows(), o.sigma));
    const dataset::ScenarioGenerator scenarios(g.system, g.profile);

    const bool show_stealthy = !o.unstructured;
    auto verdict = [](bool f) { return f ? "FLAG" : "pass"; };
    out << "tau = " << fmt(bdd.threshold) << " (alpha " << format_double(o.alpha) << ", dof "
        << bdd.degrees_of_freedom << "); stealthy a = Hc, |c_k| <= " << format_double(o.magnitude)
        << "; unstructured " << format_double(o.sigma_mult) << " sigma on one meter\n";
    out << std::setw(5) << "row" << std::setw(12) << "r2_clean" << std::setw(7) << "bdd";
    if (show_stealthy) {
        out << std::setw(12) << "r2_stealth" << std::setw(7) << "bdd";
    }
    out << std::setw(12) << "r2_gross" << std::setw(7) << "bdd" << '\n';
    std::size_t unchanged = 0;
    std::size_t stealth_flagged = 0;
    std::size_t gross_flagged = 0;
    for (std::size_t row = 0; row < o.n; ++row) {
        Rng rng = make_rng(o.seed, "attack-demo", row);
        const Vector v = scenarios.sample(rng, o.variation);
        const dataset::Sample clean = dataset::gen_sample(rng, g.h, v, o.sigma, std::nullopt);
        const Vector stealthy =
            attack::make_stealthy(g.h, attack::sample_state_error(rng, static_cast<int>(g.h.cols()), ap));
        const Vector gross = attack::make_unstructured(rng, g.h.rows(), o.sigma_mult, o.sigma);
        const auto before = estimation::run_bdd(est, clean.features, bdd);
        const auto after_s = estimation::run_bdd(est, clean.features + stealthy, bdd);
        const auto after_g = estimation::run_bdd(est, clean.features + gross, bdd);
        unchanged += before.flagged == after_s.flagged;
        stealth_flagged += after_s.flagged;
        gross_flagged += after_g.flagged;
        out << std::setw(5) << row + 1 << std::setw(12) << fmt(before.weighted_r_sq) << std::setw(7)
            << verdict(before.flagged);
        if (show_stealthy) {
            out << std::setw(12) << fmt(after_s.weighted_r_sq) << std::setw(7) << verdict(after_s.flagged);
        }
        out << std::setw(12) << fmt(after_g.weighted_r_sq) << std::setw(7) << verdict(after_g.flagged) << '\n';
    }
    if (show_stealthy) {
        out << "stealthy: verdict unchanged in " << unchanged << "/" << o.n << " rows, flagged " << stealth_flagged
            << "/" << o.n << '\n';
    }
    out << "unstructured: flagged " << gross_flagged << "/" << o.n << '\n';
    return kOk;
}

// ---------------------------------------------------------------------------
// report

struct ReportOptions {
    std::string run = "fdia-run";
    std::string compare;
};

void add_report(CLI::App& app, ReportOptions& o) {
    app.add_option("--run", o.run, "Run directory containing rounds.csv");
    app.add_option("--compare", o.compare, "Second run directory to compare against (e.g. a baseline)");
}

std::vector<std::map<std::string, double>> read_rounds(const fs::path& dir) {
    const fs::path path = dir / "rounds.csv";
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("rounds file not found: " + path.string());
    }
    std::string line;
    std::getline(in, line);
    std::vector<std::string> cols;
    {
        std::stringstream ss(line);
        std::string c;
        while (std::getline(ss, c, ',')) {
            cols.push_back(c);
        }
    }
    if (cols.empty() || cols.front() != "round") {
        throw ConfigError(path.string() + ": not a rounds.csv file");
    }
    std::vector<std::map<std::string, double>> rows;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::stringstream ss(line);
        std::string c;
        std::map<std::string, double> row;
        for (const auto& name : cols) {
            if (!std::getline(ss, c, ',')) {
                throw ConfigError(path.string() + ": short row");
            }
            row[name] = parse_double(c, name);
        }
        rows.push_back(std::move(row));
    }
    if (rows.empty()) {
        throw ConfigError(path.string() + ": no rounds recorded");
    }
    return rows;
}

void print_run(std::ostream& out, const std::string& name, const std::vector<std::map<std::string, double>>& rows) {
    const auto& last = rows.back();
    const auto best = std::max_element(rows.begin(), rows.end(),
                                       [](const auto& a, const auto& b) { return a.at("f1") < b.at("f1"); });
    out << "| " << name << " | " << rows.size() << " | " << fmt(last.at("accuracy")) << " | "
        << fmt(last.at("precision")) << " | " << fmt(last.at("recall")) << " | " << fmt(last.at("f1")) << " | "
        << fmt(best->at("f1")) << " (round " << static_cast<int>(best->at("round")) << ") |\n";
}

int cmd_report(const ReportOptions& o, std::ostream& out) {
    const auto rows = read_rounds(o.run);
    std::optional<std::vector<std::map<std::string, double>>> other;
    if (!o.compare.empty()) {
        other = read_rounds(o.compare);
    }
    out << "| run | rounds | accuracy | precision | recall | f1 | best f1 |\n"
        << "|---|---|---|---|---|---|---|\n";
    print_run(out, o.run, rows);
    if (other) {
        print_run(out, o.compare, *other);
        const double gap = rows.back().at("accuracy") - other->back().at("accuracy");
        out << "\nfinal accuracy difference: " << std::showpos << fmt(100.0 * gap, 2) << std::noshowpos
            << " points\n";
    }
    return kOk;
}

}  // namespace

// ---------------------------------------------------------------------------

std::vector<std::string> expand_config(const std::vector<std::string>& args) {
    std::string config;
    for (std::size_t i = 0; i + 1 < args.size(); ++i) {
        if (args[i] == "--config") {
            config = args[i + 1];
        }
    }
    for (const auto& a : args) {
        if (a.rfind("--config=", 0) == 0) {
            config = a.substr(9);
        }
    }
    if (config.empty()) {
        return args;
    }
    std::ifstream in(config);
    if (!in) {
        throw ConfigError("config file not found: " + config);
    }
    auto given = [&args](const std::string& flag) {
        return std::any_of(args.begin(), args.end(),
                           [&flag](const std::string& a) { return a == flag || a.rfind(flag + "=", 0) == 0; });
    };
    std::vector<std::string> injected;
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (auto hash = line.find('#'); hash != std::string::npos) {
            line.resize(hash);
        }
        auto trim = [](std::string s) {
            const auto b = s.find_first_not_of(" \t\r");
            const auto e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        line = trim(line);
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(config + ":" + std::to_string(n) + ": expected key=value");
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        const std::string flag = "--" + key;
        if (key == "config" || given(flag)) {
            continue;
        }
        if (value == "true" || value == "false") {
            if (value == "true") {
                injected.push_back(flag);
            }
        } else {
            injected.push_back(flag);
            injected.push_back(value);
        }
    }
    // Injected flags go right after the subcommand name.
    std::vector<std::string> out;
    bool placed = false;
    for (std::size_t i = 0; i < args.size(); ++i) {
        out.push_back(args[i]);
        if (!placed && i >= 1 && args[i].rfind("-", 0) != 0) {
            out.insert(out.end(), injected.begin(), injected.end());
            placed = true;
        }
    }
    return out;
}

int run(const std::vector<std::string>& raw_args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Federated detection of stealthy false-data injection attacks on smart-meter measurements",
                 "fedfdia"};
    app.option_defaults()->always_capture_default();
    app.require_subcommand(1);
    app.set_version_flag("--version", "fedfdia 0.1.0");

    GenDataOptions gen;
    TrainOptions train;
    EvalOptions eval;
    AttackDemoOptions demo;
    ReportOptions report;
    CLI::App* gen_cmd = app.add_subcommand("gen-data", "Generate the labeled measurement corpus");
    CLI::App* train_cmd = app.add_subcommand("train", "Federated (or baseline) detector training");
    CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on the validation subsets");
    CLI::App* demo_cmd = app.add_subcommand("attack-demo", "Residual test before/after attacks");
    CLI::App* report_cmd = app.add_subcommand("report", "Summarize rounds.csv of one or two runs");
    add_gen_data(*gen_cmd, gen);
    add_train(*train_cmd, train);
    add_eval(*eval_cmd, eval);
    add_attack_demo(*demo_cmd, demo);
    add_report(*report_cmd, report);

    try {
        std::vector<std::string> args = expand_config(raw_args);
        std::vector<std::string> reversed(args.rbegin(), args.rend() - (args.empty() ? 0 : 1));
        try {
            app.parse(reversed);
        } catch (const CLI::ParseError& e) {
            const int code = app.exit(e, out, err);
            return code == 0 ? kOk : kConfigError;
        }
        if (gen_cmd->parsed()) {
            return cmd_gen_data(gen, out);
        }
        if (train_cmd->parsed()) {
            return cmd_train(train, out);
        }
        if (eval_cmd->parsed()) {
            return cmd_eval(eval, out);
        }
        if (demo_cmd->parsed()) {
            return cmd_attack_demo(demo, out);
        }
        if (report_cmd->parsed()) {
            return cmd_report(report, out);
        }
        return kConfigError;
    } catch (const DivergenceError& e) {
        err << "error: " << e.what() << '\n';
        return kDivergence;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kConfigError;
    }
}

}  // namespace fedfdia::cli
