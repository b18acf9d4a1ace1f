#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedfdia/attack.hpp"
#include "fedfdia/common.hpp"
#include "fedfdia/grid.hpp"

namespace fedfdia::dataset {

/// One labeled measurement snapshot.
struct Sample {
    Vector features;
    attack::LabelVector labels;
    std::uint64_t scenario_id = 0;
    bool attacked = false;  // == any label set
};

/// Per-feature standardization fit on training data.
struct Scaler {
    Vector mean;
    Vector stddev;

    static constexpr double kStddevFloor = 1e-8;
};

/// Column-oriented sample store. Rows of `features` and `labels` are samples.
class Dataset {
  public:
    Dataset() = default;
    Dataset(RowMatrix features, RowMatrix labels, std::vector<std::uint64_t> ids);

    static Dataset from_samples(std::span<const Sample> samples);

    std::size_t size() const { return ids_.size(); }
    bool empty() const { return ids_.empty(); }
    Eigen::Index n_features() const { return features_.cols(); }

    const RowMatrix& features() const { return features_; }
    const RowMatrix& labels() const { return labels_; }
    const std::vector<std::uint64_t>& ids() const { return ids_; }
    bool attacked(std::size_t row) const { return attacked_[row] != 0; }
    std::size_t n_attacked() const;

    Sample sample(std::size_t row) const;

    /// Rows `rows` in the given order; scaler state is carried over.
    Dataset subset(std::span<const std::size_t> rows) const;

    /// Scaler associated with this corpus (always the training-split fit).
    const std::optional<Scaler>& scaler() const { return scaler_; }
    void set_scaler(std::optional<Scaler> s) { scaler_ = std::move(s); }

    /// True once apply_scaler has transformed the features.
    bool standardized() const { return standardized_; }

    friend Dataset apply_scaler(const Dataset& ds, const Scaler& scaler);
    friend Dataset load(const std::filesystem::path& csv_path);

  private:
    RowMatrix features_;
    RowMatrix labels_;
    std::vector<std::uint64_t> ids_;
    std::vector<std::uint8_t> attacked_;
    std::optional<Scaler> scaler_;
    bool standardized_ = false;
};

/// DC power flow with the reduced susceptance matrix factored once.
class ScenarioGenerator {
  public:
    ScenarioGenerator(const grid::BusSystem& system, grid::InjectionProfile profile);

    /// Scales every bus load by an independent uniform factor in
    /// [1 - variation, 1 + variation], balances at the slack bus and returns
    /// the non-slack bus angles (rad).
    Vector sample(Rng& rng, double variation) const;

    /// Angles for explicit non-slack injections (length n_states).
    Vector solve(const Vector& injections) const;

    /// Non-slack injections implied by per-bus loads (generation minus load).
    Vector injections_for(const Vector& loads) const;

    const grid::InjectionProfile& profile() const { return profile_; }

  private:
    const grid::BusSystem* system_;
    grid::InjectionProfile profile_;
    Eigen::LLT<Matrix> b_llt_;
};

Vector gen_scenario(Rng& rng, const grid::BusSystem& system, const grid::InjectionProfile& profile, double variation);

/// features = H v_true + N(0, sigma^2) + attack; labels from the attack.
Sample gen_sample(Rng& rng, const grid::HMatrix& h, const Vector& v_true, double sigma,
                  const std::optional<Vector>& attack, double label_eps = 1e-6);

struct SplitSpec {
    std::size_t n_train = 20000;
    std::size_t n_val = 2000;
    std::size_t val_subsets = 10;
    double attack_fraction = 0.5;

    void validate() const;
};

struct CorpusConfig {
    SplitSpec split;
    double sigma = 0.2;
    double variation = 0.2;
    attack::AttackParams attack;
    /// Share of attacked samples that carry a gross single-meter error instead
    /// of a stealthy attack. Zero keeps the corpus BDD-filtered.
    double unstructured_share = 0.0;
    double gross_sigma_mult = 50.0;
    std::uint64_t seed = 1;
    int threads = 1;
};

struct Corpus {
    Dataset train;
    std::vector<Dataset> val;
};

/// Generates train and validation splits. Sample g (global index, train
/// first) draws from its own RNG stream, so output does not depend on the
/// thread count. Each split holds exactly round(attack_fraction * n)
/// attacked rows at shuffled positions.
Corpus build_corpus(const CorpusConfig& cfg, const grid::BusSystem& system, const grid::HMatrix& h,
                    const grid::InjectionProfile& profile);

/// Population mean / stddev per feature (stddev floored at 1e-8).
Scaler fit_scaler(const Dataset& train);

/// Standardized copy. The scaler is attached but never refit.
Dataset apply_scaler(const Dataset& ds, const Scaler& scaler);

/// Extra key=value pairs written to the metadata sidecar.
using Metadata = std::map<std::string, std::string>;

/// CSV (header f1..fI,l1..lI,attacked) plus `<path>.meta` key=value sidecar.
void save(const Dataset& ds, const std::filesystem::path& csv_path, const Metadata& extra = {});
Dataset load(const std::filesystem::path& csv_path);
Metadata load_metadata(const std::filesystem::path& csv_path);

std::filesystem::path meta_path(const std::filesystem::path& csv_path);

}  // namespace fedfdia::dataset
