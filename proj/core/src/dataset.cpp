#include "fedfdia/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include "text_util.hpp"

namespace fedfdia::dataset {

// ---------------------------------------------------------------------------
// Dataset

Dataset::Dataset(RowMatrix features, RowMatrix labels, std::vector<std::uint64_t> ids)
    : features_(std::move(features)), labels_(std::move(labels)), ids_(std::move(ids)) {
    if (features_.rows() != labels_.rows() || static_cast<std::size_t>(features_.rows()) != ids_.size()) {
        throw DimensionError("dataset: features, labels and ids disagree on sample count");
    }
    attacked_.resize(ids_.size());
    for (Eigen::Index r = 0; r < labels_.rows(); ++r) {
        bool any = false;
        for (Eigen::Index c = 0; c < labels_.cols(); ++c) {
            const double v = labels_(r, c);
            if (v != 0.0 && v != 1.0) {
                throw DimensionError("dataset: labels must be 0 or 1");
            }
            any = any || v == 1.0;
        }
        attacked_[static_cast<std::size_t>(r)] = any ? 1 : 0;
    }
}

Dataset Dataset::from_samples(std::span<const Sample> samples) {
    if (samples.empty()) {
        return Dataset(RowMatrix(0, 0), RowMatrix(0, 0), {});
    }
    const auto n_feat = samples.front().features.size();
    const auto n_lab = static_cast<Eigen::Index>(samples.front().labels.size());
    RowMatrix x(static_cast<Eigen::Index>(samples.size()), n_feat);
    RowMatrix y(static_cast<Eigen::Index>(samples.size()), n_lab);
    std::vector<std::uint64_t> ids;
    ids.reserve(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) {
        const Sample& s = samples[i];
        if (s.features.size() != n_feat || static_cast<Eigen::Index>(s.labels.size()) != n_lab) {
            throw DimensionError("dataset: samples have different lengths");
        }
        const auto r = static_cast<Eigen::Index>(i);
        x.row(r) = s.features.transpose();
        for (Eigen::Index c = 0; c < n_lab; ++c) {
            y(r, c) = s.labels[static_cast<std::size_t>(c)];
        }
        ids.push_back(s.scenario_id);
    }
    return Dataset(std::move(x), std::move(y), std::move(ids));
}

std::size_t Dataset::n_attacked() const {
    return static_cast<std::size_t>(std::count(attacked_.begin(), attacked_.end(), std::uint8_t{1}));
}

Sample Dataset::sample(std::size_t row) const {
    const auto r = static_cast<Eigen::Index>(row);
    Sample s;
    s.features = features_.row(r).transpose();
    s.labels.resize(static_cast<std::size_t>(labels_.cols()));
    for (Eigen::Index c = 0; c < labels_.cols(); ++c) {
        s.labels[static_cast<std::size_t>(c)] = labels_(r, c) != 0.0 ? 1 : 0;
    }
    s.scenario_id = ids_[row];
    s.attacked = attacked_[row] != 0;
    return s;
}

Dataset Dataset::subset(std::span<const std::size_t> rows) const {
    RowMatrix x(static_cast<Eigen::Index>(rows.size()), features_.cols());
    RowMatrix y(static_cast<Eigen::Index>(rows.size()), labels_.cols());
    std::vector<std::uint64_t> ids(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= size()) {
            throw DimensionError("dataset subset: row out of range");
        }
        const auto src = static_cast<Eigen::Index>(rows[i]);
        x.row(static_cast<Eigen::Index>(i)) = features_.row(src);
        y.row(static_cast<Eigen::Index>(i)) = labels_.row(src);
        ids[i] = ids_[rows[i]];
    }
    Dataset out(std::move(x), std::move(y), std::move(ids));
    out.scaler_ = scaler_;
    out.standardized_ = standardized_;
    return out;
}

// ---------------------------------------------------------------------------
// Scenarios and samples

ScenarioGenerator::ScenarioGenerator(const grid::BusSystem& system, grid::InjectionProfile profile)
    : system_(&system), profile_(std::move(profile)) {
    if (profile_.load.size() != system.n_bus() || profile_.generation.size() != system.n_bus()) {
        throw DimensionError("injection profile does not match bus count");
    }
    // Reduced nodal susceptance matrix, built straight from the branch list.
    const int j = system.n_states();
    Matrix b = Matrix::Zero(j, j);
    for (const grid::Branch& br : system.branches()) {
        const double y = 1.0 / br.reactance;
        const int f = system.state_index(br.from_bus);
        const int t = system.state_index(br.to_bus);
        if (f >= 0) {
            b(f, f) += y;
        }
        if (t >= 0) {
            b(t, t) += y;
        }
        if (f >= 0 && t >= 0) {
            b(f, t) -= y;
            b(t, f) -= y;
        }
    }
    b_llt_.compute(b);
    // Connected graphs always give a positive definite reduced Laplacian.
    if (b_llt_.info() != Eigen::Success) {
        throw RankError("singular susceptance matrix");
    }
}

Vector ScenarioGenerator::injections_for(const Vector& loads) const {
    Vector p(system_->n_states());
    for (int bus = 1; bus <= system_->n_bus(); ++bus) {
        if (const int c = system_->state_index(bus); c >= 0) {
            p[c] = profile_.generation[bus - 1] - loads[bus - 1];
        }
    }
    return p;
}

Vector ScenarioGenerator::solve(const Vector& injections) const {
    if (injections.size() != system_->n_states()) {
        throw DimensionError("injection vector length does not match state count");
    }
    return b_llt_.solve(injections);
}

Vector ScenarioGenerator::sample(Rng& rng, double variation) const {
    if (!(variation >= 0.0 && variation < 1.0)) {
        throw ConfigError("load variation must lie in [0, 1)");
    }
    Vector loads = profile_.load;
    if (variation > 0.0) {
        std::uniform_real_distribution<double> factor(1.0 - variation, 1.0 + variation);
        for (Eigen::Index b = 0; b < loads.size(); ++b) {
            loads[b] *= factor(rng);
        }
    }
    return solve(injections_for(loads));
}

Vector gen_scenario(Rng& rng, const grid::BusSystem& system, const grid::InjectionProfile& profile, double variation) {
    return ScenarioGenerator(system, profile).sample(rng, variation);
}

Sample gen_sample(Rng& rng, const grid::HMatrix& h, const Vector& v_true, double sigma,
                  const std::optional<Vector>& attack, double label_eps) {
    if (!(sigma >= 0.0)) {
        throw ConfigError("noise sigma must be non-negative");
    }
    if (v_true.size() != h.cols()) {
        throw DimensionError("state vector length does not match H");
    }
    Sample s;
    s.features = h.values() * v_true;
    if (sigma > 0.0) {
        std::normal_distribution<double> noise(0.0, sigma);
        for (Eigen::Index i = 0; i < s.features.size(); ++i) {
            s.features[i] += noise(rng);
        }
    }
    if (attack) {
        if (attack->size() != h.rows()) {
            throw DimensionError("attack vector length does not match H");
        }
        s.features += *attack;
        s.labels = attack::label_of(*attack, label_eps);
    } else {
        s.labels.assign(static_cast<std::size_t>(h.rows()), 0);
    }
    s.attacked = std::any_of(s.labels.begin(), s.labels.end(), [](std::uint8_t b) { return b != 0; });
    return s;
}

// ---------------------------------------------------------------------------
// Corpus

void SplitSpec::validate() const {
    if (n_train == 0) {
        throw ConfigError("training split must be nonempty");
    }
    if (val_subsets == 0) {
        throw ConfigError("need at least one validation subset");
    }
    if (n_val == 0 || n_val % val_subsets != 0) {
        throw ConfigError("validation size " + std::to_string(n_val) + " must be a positive multiple of " +
                          std::to_string(val_subsets) + " subsets");
    }
    if (!(attack_fraction >= 0.0 && attack_fraction <= 1.0)) {
        throw ConfigError("attack fraction must lie in [0, 1]");
    }
}

namespace {

// Exactly round(fraction * n) attacked slots, shuffled.
std::vector<std::uint8_t> attack_layout(std::size_t n, double fraction, Rng& rng) {
    const auto n_att = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    std::vector<std::uint8_t> flags(n, 0);
    std::fill_n(flags.begin(), std::min(n_att, n), std::uint8_t{1});
    std::shuffle(flags.begin(), flags.end(), rng);
    return flags;
}

}  // namespace

Corpus build_corpus(const CorpusConfig& cfg, const grid::BusSystem& system, const grid::HMatrix& h,
                    const grid::InjectionProfile& profile) {
    cfg.split.validate();
    if (!(cfg.sigma >= 0.0)) {
        throw ConfigError("noise sigma must be non-negative");
    }
    if (!(cfg.unstructured_share >= 0.0 && cfg.unstructured_share <= 1.0)) {
        throw ConfigError("unstructured share must lie in [0, 1]");
    }
    if (cfg.attack.min_sparsity < 1 || cfg.attack.max_sparsity < cfg.attack.min_sparsity ||
        cfg.attack.max_sparsity > h.cols() || !(cfg.attack.magnitude > 0.0) || !(cfg.attack.label_eps > 0.0)) {
        throw ConfigError("invalid attack parameters");
    }
    if (!(cfg.variation >= 0.0 && cfg.variation < 1.0)) {
        throw ConfigError("load variation must lie in [0, 1)");
    }

    const ScenarioGenerator scenarios(system, profile);
    const std::size_t n_train = cfg.split.n_train;
    const std::size_t subset_size = cfg.split.n_val / cfg.split.val_subsets;
    const std::size_t total = n_train + cfg.split.n_val;

    Rng layout_rng = make_rng(cfg.seed, "corpus-layout");
    std::vector<std::uint8_t> attacked = attack_layout(n_train, cfg.split.attack_fraction, layout_rng);
    for (std::size_t s = 0; s < cfg.split.val_subsets; ++s) {
        auto part = attack_layout(subset_size, cfg.split.attack_fraction, layout_rng);
        attacked.insert(attacked.end(), part.begin(), part.end());
    }

    const auto n_meters = h.rows();
    RowMatrix x(static_cast<Eigen::Index>(total), n_meters);
    RowMatrix y(static_cast<Eigen::Index>(total), n_meters);

    auto generate_range = [&](std::size_t begin, std::size_t end) {
        for (std::size_t g = begin; g < end; ++g) {
            Rng rng = make_rng(cfg.seed, "sample", g);
            const Vector v_true = scenarios.sample(rng, cfg.variation);
            std::optional<Vector> a;
            if (attacked[g]) {
                std::uniform_real_distribution<double> u(0.0, 1.0);
                const bool gross = cfg.unstructured_share > 0.0 && u(rng) < cfg.unstructured_share;
                a = gross ? attack::make_unstructured(rng, n_meters, cfg.gross_sigma_mult, cfg.sigma)
                          : attack::make_stealthy(h, attack::sample_state_error(rng, static_cast<int>(h.cols()),
                                                                                cfg.attack));
            }
            const Sample s = gen_sample(rng, h, v_true, cfg.sigma, a, cfg.attack.label_eps);
            const auto r = static_cast<Eigen::Index>(g);
            x.row(r) = s.features.transpose();
            for (Eigen::Index c = 0; c < n_meters; ++c) {
                y(r, c) = s.labels[static_cast<std::size_t>(c)];
            }
        }
    };

    const auto n_threads = static_cast<std::size_t>(std::max(1, cfg.threads));
    if (n_threads == 1) {
        generate_range(0, total);
    } else {
        std::vector<std::jthread> workers;
        const std::size_t chunk = (total + n_threads - 1) / n_threads;
        for (std::size_t t = 0; t < n_threads; ++t) {
            const std::size_t b = std::min(total, t * chunk);
            const std::size_t e = std::min(total, b + chunk);
            workers.emplace_back(generate_range, b, e);
        }
    }

    auto slice = [&](std::size_t begin, std::size_t count) {
        std::vector<std::uint64_t> ids(count);
        std::iota(ids.begin(), ids.end(), static_cast<std::uint64_t>(begin));
        const auto b = static_cast<Eigen::Index>(begin);
        const auto n = static_cast<Eigen::Index>(count);
        return Dataset(x.middleRows(b, n), y.middleRows(b, n), std::move(ids));
    };

    Corpus corpus;
    corpus.train = slice(0, n_train);
    for (std::size_t s = 0; s < cfg.split.val_subsets; ++s) {
        corpus.val.push_back(slice(n_train + s * subset_size, subset_size));
    }
    return corpus;
}

// ---------------------------------------------------------------------------
// Scaling

Scaler fit_scaler(const Dataset& train) {
    if (train.empty()) {
        throw ConfigError("cannot fit a scaler on an empty dataset");
    }
    const auto& x = train.features();
    const auto n = static_cast<long double>(x.rows());
    Scaler s{Vector(x.cols()), Vector(x.cols())};
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
        long double sum = 0.0L;
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
            sum += x(r, c);
        }
        const long double mean = sum / n;
        long double ss = 0.0L;
        for (Eigen::Index r = 0; r < x.rows(); ++r) {
            const long double d = x(r, c) - mean;
            ss += d * d;
        }
        s.mean[c] = static_cast<double>(mean);
        s.stddev[c] = std::max(Scaler::kStddevFloor, static_cast<double>(std::sqrt(ss / n)));
    }
    return s;
}

Dataset apply_scaler(const Dataset& ds, const Scaler& scaler) {
    if (scaler.mean.size() != ds.n_features() || scaler.stddev.size() != ds.n_features()) {
        throw DimensionError("scaler width does not match dataset features");
    }
    if (ds.standardized_) {
        throw ConfigError("dataset is already standardized");
    }
    Dataset out = ds;
    for (Eigen::Index r = 0; r < out.features_.rows(); ++r) {
        out.features_.row(r) = (out.features_.row(r) - scaler.mean.transpose()).cwiseQuotient(scaler.stddev.transpose());
    }
    out.scaler_ = scaler;
    out.standardized_ = true;
    return out;
}

// ---------------------------------------------------------------------------
// Serialization

std::filesystem::path meta_path(const std::filesystem::path& csv_path) {
    auto p = csv_path;
    p += ".meta";
    return p;
}

namespace {

constexpr const char* kFormatTag = "fedfdia-dataset-v1";

std::string join_vector(const Vector& v) {
    std::string out;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        if (i) {
            out += ',';
        }
        out += format_double(v[i]);
    }
    return out;
}

Vector split_vector(std::string_view text, std::string_view what) {
    std::vector<double> vals;
    std::size_t start = 0;
    while (start <= text.size()) {
        const auto comma = text.find(',', start);
        const auto end = comma == std::string_view::npos ? text.size() : comma;
        vals.push_back(parse_double(text.substr(start, end - start), what));
        if (comma == std::string_view::npos) {
            break;
        }
        start = comma + 1;
    }
    return Eigen::Map<Vector>(vals.data(), static_cast<Eigen::Index>(vals.size()));
}

std::string csv_header(Eigen::Index n) {
    std::string h;
    for (Eigen::Index i = 1; i <= n; ++i) {
        h += 'f' + std::to_string(i) + ',';
    }
    for (Eigen::Index i = 1; i <= n; ++i) {
        h += 'l' + std::to_string(i) + ',';
    }
    return h + "attacked";
}

}  // namespace

void save(const Dataset& ds, const std::filesystem::path& csv_path, const Metadata& extra) {
    if (ds.n_features() != ds.labels().cols()) {
        throw DimensionError("dataset: label width must equal feature width for the CSV schema");
    }
    std::ofstream out(csv_path, std::ios::binary);
    if (!out) {
        throw ConfigError("cannot write " + csv_path.string());
    }
    out << csv_header(ds.n_features()) << '\n';
    std::string line;
    for (std::size_t r = 0; r < ds.size(); ++r) {
        line.clear();
        const auto row = static_cast<Eigen::Index>(r);
        for (Eigen::Index c = 0; c < ds.n_features(); ++c) {
            line += format_double(ds.features()(row, c));
            line += ',';
        }
        for (Eigen::Index c = 0; c < ds.labels().cols(); ++c) {
            line += ds.labels()(row, c) != 0.0 ? "1," : "0,";
        }
        line += ds.attacked(r) ? '1' : '0';
        line += '\n';
        out << line;
    }
    if (!out) {
        throw ConfigError("write failed: " + csv_path.string());
    }

    Metadata meta = extra;
    meta["format"] = kFormatTag;
    meta["n_samples"] = std::to_string(ds.size());
    meta["n_features"] = std::to_string(ds.n_features());
    bool contiguous = true;
    for (std::size_t i = 1; i < ds.size() && contiguous; ++i) {
        contiguous = ds.ids()[i] == ds.ids()[0] + i;
    }
    meta.erase("ids");
    meta.erase("first_id");
    if (contiguous) {
        meta["first_id"] = std::to_string(ds.empty() ? 0 : ds.ids()[0]);
    } else {
        std::string ids;
        for (std::size_t i = 0; i < ds.size(); ++i) {
            ids += (i ? "," : "") + std::to_string(ds.ids()[i]);
        }
        meta["ids"] = ids;
    }
    meta["standardized"] = ds.standardized() ? "1" : "0";
    meta.erase("scaler_mean");
    meta.erase("scaler_std");
    if (ds.scaler()) {
        meta["scaler_mean"] = join_vector(ds.scaler()->mean);
        meta["scaler_std"] = join_vector(ds.scaler()->stddev);
    }
    std::ofstream mout(meta_path(csv_path), std::ios::binary);
    if (!mout) {
        throw ConfigError("cannot write " + meta_path(csv_path).string());
    }
    for (const auto& [k, v] : meta) {
        mout << k << '=' << v << '\n';
    }
}

Metadata load_metadata(const std::filesystem::path& csv_path) {
    const auto path = meta_path(csv_path);
    std::ifstream in(path);
    if (!in) {
        throw ConfigError("metadata sidecar not found: " + path.string());
    }
    Metadata meta;
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        ++n;
        if (line.empty()) {
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos || eq == 0) {
            throw ConfigError(path.string() + ":" + std::to_string(n) + ": expected key=value");
        }
        meta[line.substr(0, eq)] = line.substr(eq + 1);
    }
    if (meta["format"] != kFormatTag) {
        throw ConfigError(path.string() + ": unknown dataset format '" + meta["format"] + "'");
    }
    return meta;
}

Dataset load(const std::filesystem::path& csv_path) {
    Metadata meta = load_metadata(csv_path);
    const auto n_features = static_cast<Eigen::Index>(parse_int(meta["n_features"], "n_features"));
    const auto n_samples = static_cast<std::size_t>(parse_int(meta["n_samples"], "n_samples"));

    std::ifstream in(csv_path, std::ios::binary);
    if (!in) {
        throw ConfigError("dataset file not found: " + csv_path.string());
    }
    std::string line;
    if (!std::getline(in, line) || line != csv_header(n_features)) {
        throw ConfigError(csv_path.string() + ":1: schema error: header does not match " +
                          std::to_string(n_features) + " features");
    }
    const auto n_cols = static_cast<std::size_t>(2 * n_features + 1);
    RowMatrix x(static_cast<Eigen::Index>(n_samples), n_features);
    RowMatrix y(static_cast<Eigen::Index>(n_samples), n_features);
    std::vector<std::uint8_t> attacked_col(n_samples);
    std::size_t row = 0;
    while (std::getline(in, line)) {
        const std::string where = csv_path.string() + ":" + std::to_string(row + 2);
        if (row >= n_samples) {
            throw ConfigError(where + ": more rows than the metadata declares");
        }
        const auto cells = detail::LineReader::split(line, ',');
        if (cells.size() != n_cols) {
            throw ConfigError(where + ": expected " + std::to_string(n_cols) + " columns, found " +
                              std::to_string(cells.size()));
        }
        const auto r = static_cast<Eigen::Index>(row);
        try {
            for (Eigen::Index c = 0; c < n_features; ++c) {
                x(r, c) = parse_double(cells[static_cast<std::size_t>(c)], "feature");
                const auto lab = cells[static_cast<std::size_t>(n_features + c)];
                if (lab != "0" && lab != "1") {
                    throw ConfigError("label must be 0 or 1");
                }
                y(r, c) = lab == "1" ? 1.0 : 0.0;
            }
        } catch (const ConfigError& e) {
            throw ConfigError(where + ": " + e.what());
        }
        const auto att = cells.back();
        if (att != "0" && att != "1") {
            throw ConfigError(where + ": attacked flag must be 0 or 1");
        }
        attacked_col[row] = att == "1" ? 1 : 0;
        ++row;
    }
    if (row != n_samples) {
        throw ConfigError(csv_path.string() + ": metadata declares " + std::to_string(n_samples) + " rows, found " +
                          std::to_string(row));
    }

    std::vector<std::uint64_t> ids(n_samples);
    if (auto it = meta.find("ids"); it != meta.end() && n_samples > 0) {
        const auto parts = detail::LineReader::split(it->second, ',');
        if (parts.size() != n_samples) {
            throw ConfigError(meta_path(csv_path).string() + ": ids list length mismatch");
        }
        for (std::size_t i = 0; i < n_samples; ++i) {
            ids[i] = static_cast<std::uint64_t>(parse_int(parts[i], "id"));
        }
    } else {
        const auto first = static_cast<std::uint64_t>(parse_int(meta.count("first_id") ? meta["first_id"] : "0", "first_id"));
        std::iota(ids.begin(), ids.end(), first);
    }

    Dataset ds(std::move(x), std::move(y), std::move(ids));
    for (std::size_t r = 0; r < n_samples; ++r) {
        if (ds.attacked(r) != (attacked_col[r] != 0)) {
            throw ConfigError(csv_path.string() + ":" + std::to_string(r + 2) +
                              ": attacked flag disagrees with labels");
        }
    }
    if (meta.count("scaler_mean") && meta.count("scaler_std")) {
        Scaler s{split_vector(meta["scaler_mean"], "scaler_mean"), split_vector(meta["scaler_std"], "scaler_std")};
        if (s.mean.size() != n_features || s.stddev.size() != n_features) {
            throw ConfigError(meta_path(csv_path).string() + ": scaler width does not match n_features");
        }
        ds.scaler_ = std::move(s);
    }
    ds.standardized_ = meta["standardized"] == "1";
    return ds;
}

}  // namespace fedfdia::dataset
