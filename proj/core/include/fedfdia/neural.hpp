#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "fedfdia/common.hpp"

namespace fedfdia::neural {

/// Dense widths of the detector: inputs -> hidden... -> outputs (sigmoid).
struct Architecture {
    int inputs = 19;
    std::vector<int> hidden{128, 64};
    int outputs = 19;

    void validate() const;
    bool operator==(const Architecture&) const = default;
};

enum class TensorRole { Kernel, Bias, BnGamma, BnBeta, BnMovingMean, BnMovingVar };

struct TensorInfo {
    std::string name;
    TensorRole role;
    Eigen::Index rows = 0;
    Eigen::Index cols = 0;
    std::size_t offset = 0;

    std::size_t size() const { return static_cast<std::size_t>(rows * cols); }
    /// Updated by the optimizer (moving statistics are not).
    bool trainable() const { return role != TensorRole::BnMovingMean && role != TensorRole::BnMovingVar; }
};

/// Ordered tensor table over one flat buffer.
///
/// Per hidden layer l: dense{l}.kernel (in x out), dense{l}.bias,
/// bn{l}.gamma, bn{l}.beta, bn{l}.moving_mean, bn{l}.moving_var;
/// then output.kernel and output.bias.
class Layout {
  public:
    explicit Layout(const Architecture& arch);

    const std::vector<TensorInfo>& tensors() const { return tensors_; }
    std::size_t total_size() const { return total_; }
    const TensorInfo& at(std::size_t index) const { return tensors_.at(index); }

    /// Tensor index of the given block; `layer == hidden.size()` is the output layer.
    std::size_t kernel(std::size_t layer) const;
    std::size_t bias(std::size_t layer) const;
    std::size_t gamma(std::size_t layer) const;
    std::size_t beta(std::size_t layer) const;
    std::size_t moving_mean(std::size_t layer) const;
    std::size_t moving_var(std::size_t layer) const;

  private:
    std::vector<TensorInfo> tensors_;
    std::size_t total_ = 0;
    std::size_t n_hidden_ = 0;
};

/// All tensors of the detector (weights, biases, batch-norm parameters and
/// moving statistics) in one contiguous buffer. Gradients and Adam moments
/// use the same type.
class ModelParams {
  public:
    explicit ModelParams(const Architecture& arch);

    const Architecture& architecture() const { return arch_; }
    const Layout& layout() const { return *layout_; }

    std::span<const double> values() const { return values_; }
    std::span<double> mutable_values() {
        ++revision_;
        return values_;
    }

    Eigen::Map<const Matrix> tensor(std::size_t index) const;
    Eigen::Map<Matrix> mutable_tensor(std::size_t index);

    /// Bumped whenever mutable access is handed out; forward caches record it.
    std::uint64_t revision() const { return revision_; }

    bool all_finite() const;
    bool same_shape(const ModelParams& other) const;

    /// Bitwise equality of architecture and every value.
    bool operator==(const ModelParams& other) const;

  private:
    Architecture arch_;
    std::shared_ptr<const Layout> layout_;
    std::vector<double> values_;
    std::uint64_t revision_ = 0;
};

using Gradients = ModelParams;

/// He-uniform kernels (limit sqrt(6 / fan_in)), zero biases, unit gamma,
/// zero beta, moving mean 0 and moving variance 1.
ModelParams init_params(const Architecture& arch, Rng& rng);

struct TrainConfig {
    double lr = 1e-3;
    double l2 = 0.01;
    double dropout_p = 0.4;
    std::size_t batch_size = 32;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps_adam = 1e-8;
    double plateau_factor = 0.1;
    int plateau_patience = 10;
    double plateau_min_delta = 1e-6;
    double bn_momentum = 0.9;
    double bn_eps = 1e-5;

    void validate() const;
};

enum class Mode { Train, Eval };

struct HiddenCache {
    Matrix input;    // B x in
    Matrix xhat;     // normalized pre-activation
    Vector mean;     // batch statistics (train) or moving statistics (eval)
    Vector var;
    Matrix bn_out;   // gamma * xhat + beta
    Matrix mask;     // inverted-dropout mask, empty when no dropout
};

struct ForwardCache {
    Mode mode = Mode::Eval;
    const ModelParams* owner = nullptr;
    std::uint64_t revision = 0;
    std::vector<HiddenCache> hidden;
    Matrix last_hidden;  // input of the output layer
};

struct ForwardResult {
    Matrix probs;  // B x outputs
    ForwardCache cache;
};

/// Per hidden block: dense -> batch norm -> ReLU -> dropout; output dense -> sigmoid.
///
/// Train mode normalizes with batch statistics and samples inverted-dropout
/// masks from `rng` (required when dropout_p > 0). Eval mode uses the moving
/// statistics and no dropout. Throws DivergenceError on non-finite activations.
ForwardResult forward(const ModelParams& params, const Matrix& x, Mode mode, Rng* rng, const TrainConfig& cfg);

/// Eval-mode probabilities for many rows, evaluated in chunks.
Matrix predict(const ModelParams& params, const RowMatrix& x, const TrainConfig& cfg);

/// Mean binary cross-entropy over all B x I cells, probabilities clamped to [1e-7, 1 - 1e-7].
double bce(const Matrix& probs, const Matrix& labels);

/// 0.5 * l2 * sum of squared kernel entries (biases and batch-norm tensors excluded).
double l2_penalty(const ModelParams& params, double l2);

double loss(const Matrix& probs, const Matrix& labels, const ModelParams& params, double l2);

/// Exact gradient of loss() with respect to every trainable tensor, through
/// batch statistics. Moving-statistic entries are zero. Throws
/// std::logic_error if `cache` is not a train-mode cache of `params` at its
/// current revision.
Gradients backward(const ModelParams& params, const ForwardCache& cache, const Matrix& labels,
                   const TrainConfig& cfg);

/// Moves the moving statistics toward the batch statistics held in `cache`.
void update_moving_stats(ModelParams& params, const ForwardCache& cache, double momentum);

struct AdamState {
    std::vector<double> m;
    std::vector<double> v;
    long step = 0;

    static AdamState zeros_like(const ModelParams& params);
};

/// Bias-corrected Adam over trainable tensors.
void adam_step(ModelParams& params, const Gradients& grads, AdamState& state, double lr, const TrainConfig& cfg);

/// One shuffled pass of mini-batch Adam. Returns the average training loss
/// over all data points (batch loss weighted by batch size).
double train_epoch(ModelParams& params, AdamState& state, const RowMatrix& x, const RowMatrix& y,
                   const TrainConfig& cfg, double lr, Rng& rng);

/// Eval-mode loss (BCE + L2) over a whole split.
double evaluate_loss(const ModelParams& params, const RowMatrix& x, const RowMatrix& y, const TrainConfig& cfg);

/// Reduce-on-plateau: emits a decay event when the best value has not
/// improved by more than min_delta for `patience` consecutive observations.
class PlateauScheduler {
  public:
    PlateauScheduler(double factor, int patience, double min_delta = 1e-6);

    /// Returns true when the learning rate should be multiplied by factor().
    bool observe(double value);

    double factor() const { return factor_; }
    int wait() const { return wait_; }
    double best() const { return best_; }

  private:
    double factor_;
    int patience_;
    double min_delta_;
    double best_;
    int wait_ = 0;
};

/// 1-based positions in `history` at which the scheduler fires.
std::vector<std::size_t> plateau_events(std::span<const double> history, int patience, double min_delta = 1e-6);

/// Binary checkpoint (little endian):
///   "FDIACKP1" | u32 version | u32 n_tensors |
///   n_tensors x (u32 name_len | name | u32 rows | u32 cols) |
///   u64 n_values | n_values x f64
/// plus `<path>.json`, a manifest with the architecture, tensor table,
/// payload hash and caller-supplied extras.
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path,
                     const std::string& extra_json = "{}");

struct Checkpoint {
    ModelParams params;
    std::string manifest_json;
};

Checkpoint load_checkpoint(const std::filesystem::path& path);

std::filesystem::path manifest_path(const std::filesystem::path& checkpoint_path);

/// Serialized bytes of the binary checkpoint (used for hashing and transfer sizes).
std::string serialize(const ModelParams& params);
ModelParams deserialize(std::string_view bytes);

}  // namespace fedfdia::neural
