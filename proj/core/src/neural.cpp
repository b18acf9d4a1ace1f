#include "fedfdia/neural.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace fedfdia::neural {

// ---------------------------------------------------------------------------
// Architecture / layout / params

void Architecture::validate() const {
    if (inputs < 1 || outputs < 1) {
        throw ConfigError("architecture needs positive input and output widths");
    }
    for (int w : hidden) {
        if (w < 1) {
            throw ConfigError("hidden layer widths must be positive");
        }
    }
}

Layout::Layout(const Architecture& arch) : n_hidden_(arch.hidden.size()) {
    arch.validate();
    auto add = [this](std::string name, TensorRole role, Eigen::Index r, Eigen::Index c) {
        tensors_.push_back(TensorInfo{std::move(name), role, r, c, total_});
        total_ += static_cast<std::size_t>(r * c);
    };
    int in = arch.inputs;
    for (std::size_t l = 0; l < arch.hidden.size(); ++l) {
        const int out = arch.hidden[l];
        const std::string d = "dense" + std::to_string(l);
        const std::string b = "bn" + std::to_string(l);
        add(d + ".kernel", TensorRole::Kernel, in, out);
        add(d + ".bias", TensorRole::Bias, out, 1);
        add(b + ".gamma", TensorRole::BnGamma, out, 1);
        add(b + ".beta", TensorRole::BnBeta, out, 1);
        add(b + ".moving_mean", TensorRole::BnMovingMean, out, 1);
        add(b + ".moving_var", TensorRole::BnMovingVar, out, 1);
        in = out;
    }
    add("output.kernel", TensorRole::Kernel, in, arch.outputs);
    add("output.bias", TensorRole::Bias, arch.outputs, 1);
}

std::size_t Layout::kernel(std::size_t layer) const { return layer < n_hidden_ ? 6 * layer : 6 * n_hidden_; }
std::size_t Layout::bias(std::size_t layer) const { return kernel(layer) + 1; }
std::size_t Layout::gamma(std::size_t layer) const { return 6 * layer + 2; }
std::size_t Layout::beta(std::size_t layer) const { return 6 * layer + 3; }
std::size_t Layout::moving_mean(std::size_t layer) const { return 6 * layer + 4; }
std::size_t Layout::moving_var(std::size_t layer) const { return 6 * layer + 5; }

ModelParams::ModelParams(const Architecture& arch)
    : arch_(arch), layout_(std::make_shared<const Layout>(arch)), values_(layout_->total_size(), 0.0) {}

Eigen::Map<const Matrix> ModelParams::tensor(std::size_t index) const {
    const TensorInfo& t = layout_->at(index);
    return Eigen::Map<const Matrix>(values_.data() + t.offset, t.rows, t.cols);
}

Eigen::Map<Matrix> ModelParams::mutable_tensor(std::size_t index) {
    ++revision_;
    const TensorInfo& t = layout_->at(index);
    return Eigen::Map<Matrix>(values_.data() + t.offset, t.rows, t.cols);
}

bool ModelParams::all_finite() const {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

bool ModelParams::same_shape(const ModelParams& other) const { return arch_ == other.arch_; }

bool ModelParams::operator==(const ModelParams& other) const {
    if (!same_shape(other)) {
        return false;
    }
    for (std::size_t i = 0; i < values_.size(); ++i) {
        if (std::bit_cast<std::uint64_t>(values_[i]) != std::bit_cast<std::uint64_t>(other.values_[i])) {
            return false;
        }
    }
    return true;
}

ModelParams init_params(const Architecture& arch, Rng& rng) {
    ModelParams p(arch);
    const Layout& layout = p.layout();
    for (std::size_t k = 0; k < layout.tensors().size(); ++k) {
        const TensorInfo& t = layout.at(k);
        auto m = p.mutable_tensor(k);
        switch (t.role) {
            case TensorRole::Kernel: {
                const double limit = std::sqrt(6.0 / static_cast<double>(t.rows));
                std::uniform_real_distribution<double> u(-limit, limit);
                for (Eigen::Index c = 0; c < m.cols(); ++c) {
                    for (Eigen::Index r = 0; r < m.rows(); ++r) {
                        m(r, c) = u(rng);
                    }
                }
                break;
            }
            case TensorRole::BnGamma:
            case TensorRole::BnMovingVar:
                m.setOnes();
                break;
            default:
                m.setZero();
        }
    }
    return p;
}

void TrainConfig::validate() const {
    if (!(lr >= 0.0)) {
        throw ConfigError("learning rate must be non-negative");
    }
    if (!(l2 >= 0.0)) {
        throw ConfigError("l2 factor must be non-negative");
    }
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) {
        throw ConfigError("dropout must lie in [0, 1)");
    }
    if (batch_size < 1) {
        throw ConfigError("batch size must be >= 1");
    }
    if (!(plateau_factor > 0.0 && plateau_factor < 1.0)) {
        throw ConfigError("plateau factor must lie in (0, 1)");
    }
    if (plateau_patience < 1) {
        throw ConfigError("plateau patience must be >= 1");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0 && eps_adam > 0.0)) {
        throw ConfigError("invalid Adam hyperparameters");
    }
    if (!(bn_momentum >= 0.0 && bn_momentum < 1.0 && bn_eps > 0.0)) {
        throw ConfigError("invalid batch-norm hyperparameters");
    }
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

void check_finite(const Matrix& m) {
    if (!m.allFinite()) {
        throw DivergenceError("numerical divergence: non-finite activations");
    }
}

Matrix sigmoid(const Matrix& z) {
    return z.unaryExpr([](double v) { return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v)); });
}

}  // namespace

ForwardResult forward(const ModelParams& params, const Matrix& x, Mode mode, Rng* rng, const TrainConfig& cfg) {
    const Architecture& arch = params.architecture();
    const Layout& layout = params.layout();
    if (x.cols() != arch.inputs) {
        throw DimensionError("forward: batch has " + std::to_string(x.cols()) + " features, model expects " +
                             std::to_string(arch.inputs));
    }
    const bool train = mode == Mode::Train;
    const bool use_dropout = train && cfg.dropout_p > 0.0;
    if (use_dropout && rng == nullptr) {
        throw std::invalid_argument("forward: train mode with dropout needs an RNG");
    }
    const auto batch = static_cast<double>(x.rows());

    ForwardResult out;
    out.cache.mode = mode;
    out.cache.owner = &params;
    out.cache.revision = params.revision();
    out.cache.hidden.resize(arch.hidden.size());

    Matrix a = x;
    for (std::size_t l = 0; l < arch.hidden.size(); ++l) {
        HiddenCache& hc = out.cache.hidden[l];
        const auto kernel = params.tensor(layout.kernel(l));
        const auto bias = params.tensor(layout.bias(l));
        const auto gamma = params.tensor(layout.gamma(l));
        const auto beta = params.tensor(layout.beta(l));

        Matrix z = a * kernel;
        z.rowwise() += bias.col(0).transpose();
        if (train) {
            hc.mean = z.colwise().sum().transpose() / batch;
            hc.var = (z.rowwise() - hc.mean.transpose()).array().square().colwise().sum().transpose() / batch;
        } else {
            hc.mean = params.tensor(layout.moving_mean(l)).col(0);
            hc.var = params.tensor(layout.moving_var(l)).col(0);
        }
        const Vector inv_std = (hc.var.array() + cfg.bn_eps).rsqrt();
        hc.xhat = (z.rowwise() - hc.mean.transpose()) * inv_std.asDiagonal();
        hc.bn_out = hc.xhat * gamma.col(0).asDiagonal();
        hc.bn_out.rowwise() += beta.col(0).transpose();
        Matrix act = hc.bn_out.cwiseMax(0.0);
        if (use_dropout) {
            std::bernoulli_distribution keep(1.0 - cfg.dropout_p);
            const double scale = 1.0 / (1.0 - cfg.dropout_p);
            hc.mask.resize(act.rows(), act.cols());
            for (Eigen::Index c = 0; c < act.cols(); ++c) {
                for (Eigen::Index r = 0; r < act.rows(); ++r) {
                    hc.mask(r, c) = keep(*rng) ? scale : 0.0;
                }
            }
            act.array() *= hc.mask.array();
        }
        check_finite(act);
        hc.input = std::move(a);
        a = std::move(act);
    }
    const std::size_t n_hidden = arch.hidden.size();
    Matrix logits = a * params.tensor(layout.kernel(n_hidden));
    logits.rowwise() += params.tensor(layout.bias(n_hidden)).col(0).transpose();
    check_finite(logits);
    out.probs = sigmoid(logits);
    out.cache.last_hidden = std::move(a);
    return out;
}

Matrix predict(const ModelParams& params, const RowMatrix& x, const TrainConfig& cfg) {
    constexpr Eigen::Index kChunk = 4096;
    Matrix probs(x.rows(), params.architecture().outputs);
    for (Eigen::Index start = 0; start < x.rows(); start += kChunk) {
        const Eigen::Index n = std::min(kChunk, x.rows() - start);
        const Matrix batch = x.middleRows(start, n);
        probs.middleRows(start, n) = forward(params, batch, Mode::Eval, nullptr, cfg).probs;
    }
    return probs;
}

double bce(const Matrix& probs, const Matrix& labels) {
    if (probs.rows() != labels.rows() || probs.cols() != labels.cols()) {
        throw DimensionError("bce: probability and label shapes differ");
    }
    constexpr double kClamp = 1e-7;
    double total = 0.0;
    for (Eigen::Index c = 0; c < probs.cols(); ++c) {
        for (Eigen::Index r = 0; r < probs.rows(); ++r) {
            const double p = std::clamp(probs(r, c), kClamp, 1.0 - kClamp);
            const double y = labels(r, c);
            total -= y * std::log(p) + (1.0 - y) * std::log1p(-p);
        }
    }
    return total / static_cast<double>(probs.size());
}

double l2_penalty(const ModelParams& params, double l2) {
    double sq = 0.0;
    for (std::size_t k = 0; k < params.layout().tensors().size(); ++k) {
        if (params.layout().at(k).role == TensorRole::Kernel) {
            sq += params.tensor(k).squaredNorm();
        }
    }
    return 0.5 * l2 * sq;
}

double loss(const Matrix& probs, const Matrix& labels, const ModelParams& params, double l2) {
    return bce(probs, labels) + l2_penalty(params, l2);
}

Gradients backward(const ModelParams& params, const ForwardCache& cache, const Matrix& labels,
                   const TrainConfig& cfg) {
    if (cache.mode != Mode::Train) {
        throw std::logic_error("backward needs a train-mode forward cache");
    }
    if (cache.owner != &params || cache.revision != params.revision()) {
        throw std::logic_error("backward: stale cache (parameters changed since forward)");
    }
    const Architecture& arch = params.architecture();
    const Layout& layout = params.layout();
    const std::size_t n_hidden = arch.hidden.size();
    const Matrix& last = cache.last_hidden;
    if (labels.rows() != last.rows() || labels.cols() != arch.outputs) {
        throw DimensionError("backward: label shape does not match the forward batch");
    }
    const auto batch = static_cast<double>(labels.rows());

    // Recompute output probabilities from the cached last hidden activation.
    Matrix logits = last * params.tensor(layout.kernel(n_hidden));
    logits.rowwise() += params.tensor(layout.bias(n_hidden)).col(0).transpose();
    const Matrix probs = sigmoid(logits);

    Gradients g(arch);
    Matrix delta = (probs - labels) / static_cast<double>(labels.size());
    {
        const auto kernel = params.tensor(layout.kernel(n_hidden));
        g.mutable_tensor(layout.kernel(n_hidden)) = last.transpose() * delta + cfg.l2 * kernel;
        g.mutable_tensor(layout.bias(n_hidden)) = delta.colwise().sum().transpose();
        delta = delta * kernel.transpose();
    }
    for (std::size_t l = n_hidden; l-- > 0;) {
        const HiddenCache& hc = cache.hidden[l];
        const auto kernel = params.tensor(layout.kernel(l));
        const auto gamma = params.tensor(layout.gamma(l));
        if (hc.mask.size() != 0) {
            delta.array() *= hc.mask.array();
        }
        delta = (hc.bn_out.array() > 0.0).select(delta, 0.0);
        g.mutable_tensor(layout.gamma(l)) = delta.cwiseProduct(hc.xhat).colwise().sum().transpose();
        g.mutable_tensor(layout.beta(l)) = delta.colwise().sum().transpose();

        const Matrix dxhat = delta * gamma.col(0).asDiagonal();
        const Vector inv_std = (hc.var.array() + cfg.bn_eps).rsqrt();
        const Eigen::RowVectorXd sum_dxhat = dxhat.colwise().sum();
        const Eigen::RowVectorXd sum_dxhat_xhat = dxhat.cwiseProduct(hc.xhat).colwise().sum();
        Matrix dz = ((batch * dxhat).rowwise() - sum_dxhat - (hc.xhat * sum_dxhat_xhat.asDiagonal())) *
                    (inv_std / batch).asDiagonal();

        g.mutable_tensor(layout.kernel(l)) = hc.input.transpose() * dz + cfg.l2 * kernel;
        g.mutable_tensor(layout.bias(l)) = dz.colwise().sum().transpose();
        if (l > 0) {
            delta = dz * kernel.transpose();
        }
    }
    if (!g.all_finite()) {
        throw DivergenceError("numerical divergence: non-finite gradient");
    }
    return g;
}

void update_moving_stats(ModelParams& params, const ForwardCache& cache, double momentum) {
    if (cache.mode != Mode::Train) {
        return;
    }
    const Layout& layout = params.layout();
    for (std::size_t l = 0; l < cache.hidden.size(); ++l) {
        auto mean = params.mutable_tensor(layout.moving_mean(l));
        mean.col(0) = momentum * mean.col(0) + (1.0 - momentum) * cache.hidden[l].mean;
        auto var = params.mutable_tensor(layout.moving_var(l));
        var.col(0) = momentum * var.col(0) + (1.0 - momentum) * cache.hidden[l].var;
    }
}

// ---------------------------------------------------------------------------
// Optimizer and training loop

AdamState AdamState::zeros_like(const ModelParams& params) {
    return AdamState{std::vector<double>(params.values().size(), 0.0), std::vector<double>(params.values().size(), 0.0),
                     0};
}

void adam_step(ModelParams& params, const Gradients& grads, AdamState& state, double lr, const TrainConfig& cfg) {
    if (!params.same_shape(grads) || state.m.size() != params.values().size() ||
        state.v.size() != params.values().size()) {
        throw DimensionError("adam: parameter, gradient and moment shapes differ");
    }
    ++state.step;
    const double corr1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
    const double corr2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
    auto w = params.mutable_values();
    const auto g = grads.values();
    for (const TensorInfo& t : params.layout().tensors()) {
        if (!t.trainable()) {
            continue;
        }
        for (std::size_t i = t.offset; i < t.offset + t.size(); ++i) {
            state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g[i];
            state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
            const double m_hat = state.m[i] / corr1;
            const double v_hat = state.v[i] / corr2;
            w[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.eps_adam);
        }
    }
}

double train_epoch(ModelParams& params, AdamState& state, const RowMatrix& x, const RowMatrix& y,
                   const TrainConfig& cfg, double lr, Rng& rng) {
    if (x.rows() != y.rows() || x.rows() == 0) {
        throw DimensionError("train_epoch: features and labels must have the same nonzero row count");
    }
    std::vector<Eigen::Index> order(static_cast<std::size_t>(x.rows()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::shuffle(order.begin(), order.end(), rng);

    const auto bs = static_cast<Eigen::Index>(cfg.batch_size);
    double weighted = 0.0;
    Matrix xb;
    Matrix yb;
    for (Eigen::Index start = 0; start < x.rows(); start += bs) {
        const Eigen::Index n = std::min(bs, x.rows() - start);
        xb.resize(n, x.cols());
        yb.resize(n, y.cols());
        for (Eigen::Index r = 0; r < n; ++r) {
            const Eigen::Index src = order[static_cast<std::size_t>(start + r)];
            xb.row(r) = x.row(src);
            yb.row(r) = y.row(src);
        }
        ForwardResult fr = forward(params, xb, Mode::Train, &rng, cfg);
        const double batch_loss = loss(fr.probs, yb, params, cfg.l2);
        if (!std::isfinite(batch_loss)) {
            throw DivergenceError("numerical divergence: non-finite training loss");
        }
        weighted += batch_loss * static_cast<double>(n);
        const Gradients g = backward(params, fr.cache, yb, cfg);
        adam_step(params, g, state, lr, cfg);
        update_moving_stats(params, fr.cache, cfg.bn_momentum);
    }
    return weighted / static_cast<double>(x.rows());
}

double evaluate_loss(const ModelParams& params, const RowMatrix& x, const RowMatrix& y, const TrainConfig& cfg) {
    const Matrix probs = predict(params, x, cfg);
    return loss(probs, Matrix(y), params, cfg.l2);
}

// ---------------------------------------------------------------------------
// Scheduler

PlateauScheduler::PlateauScheduler(double factor, int patience, double min_delta)
    : factor_(factor), patience_(patience), min_delta_(min_delta), best_(std::numeric_limits<double>::infinity()) {
    if (!(factor > 0.0 && factor < 1.0) || patience < 1) {
        throw ConfigError("plateau scheduler needs factor in (0,1) and patience >= 1");
    }
}

bool PlateauScheduler::observe(double value) {
    if (value < best_ - min_delta_) {
        best_ = value;
        wait_ = 0;
        return false;
    }
    if (++wait_ >= patience_) {
        wait_ = 0;
        return true;
    }
    return false;
}

std::vector<std::size_t> plateau_events(std::span<const double> history, int patience, double min_delta) {
    PlateauScheduler s(0.1, patience, min_delta);
    std::vector<std::size_t> events;
    for (std::size_t i = 0; i < history.size(); ++i) {
        if (s.observe(history[i])) {
            events.push_back(i + 1);
        }
    }
    return events;
}

// ---------------------------------------------------------------------------
// Checkpoints

namespace {

constexpr char kMagic[8] = {'F', 'D', 'I', 'A', 'C', 'K', 'P', '1'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
    }
}

void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
        out.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
    }
}

class ByteReader {
  public:
    explicit ByteReader(std::string_view bytes) : bytes_(bytes) {}

    std::uint64_t uint(int width) {
        need(static_cast<std::size_t>(width));
        std::uint64_t v = 0;
        for (int i = 0; i < width; ++i) {
            v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes_[pos_ + static_cast<std::size_t>(i)]))
                 << (8 * i);
        }
        pos_ += static_cast<std::size_t>(width);
        return v;
    }

    std::string_view take(std::size_t n) {
        need(n);
        auto s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    bool done() const { return pos_ == bytes_.size(); }

  private:
    void need(std::size_t n) const {
        if (pos_ + n > bytes_.size()) {
            throw ConfigError("checkpoint truncated");
        }
    }

    std::string_view bytes_;
    std::size_t pos_ = 0;
};

std::string hex64(std::uint64_t v) {
    std::ostringstream s;
    s << std::hex;
    s.width(16);
    s.fill('0');
    s << v;
    return s.str();
}

}  // namespace

std::string serialize(const ModelParams& params) {
    std::string out(kMagic, sizeof(kMagic));
    put_u32(out, kVersion);
    const auto& tensors = params.layout().tensors();
    put_u32(out, static_cast<std::uint32_t>(tensors.size()));
    for (const TensorInfo& t : tensors) {
        put_u32(out, static_cast<std::uint32_t>(t.name.size()));
        out += t.name;
        put_u32(out, static_cast<std::uint32_t>(t.rows));
        put_u32(out, static_cast<std::uint32_t>(t.cols));
    }
    put_u64(out, params.values().size());
    for (double v : params.values()) {
        put_u64(out, std::bit_cast<std::uint64_t>(v));
    }
    return out;
}

ModelParams deserialize(std::string_view bytes) {
    ByteReader in(bytes);
    if (in.take(sizeof(kMagic)) != std::string_view(kMagic, sizeof(kMagic))) {
        throw ConfigError("not a checkpoint (bad magic)");
    }
    if (in.uint(4) != kVersion) {
        throw ConfigError("unsupported checkpoint version");
    }
    const auto n_tensors = in.uint(4);
    struct Entry {
        std::string name;
        Eigen::Index rows, cols;
    };
    std::vector<Entry> table;
    for (std::uint64_t k = 0; k < n_tensors; ++k) {
        Entry e;
        e.name = std::string(in.take(in.uint(4)));
        e.rows = static_cast<Eigen::Index>(in.uint(4));
        e.cols = static_cast<Eigen::Index>(in.uint(4));
        table.push_back(std::move(e));
    }
    if (table.size() < 2 || (table.size() - 2) % 6 != 0) {
        throw ConfigError("checkpoint tensor table has an unexpected length");
    }
    Architecture arch;
    arch.inputs = static_cast<int>(table.front().rows);
    arch.hidden.clear();
    for (std::size_t l = 0; l + 2 < table.size(); l += 6) {
        arch.hidden.push_back(static_cast<int>(table[l].cols));
    }
    arch.outputs = static_cast<int>(table[table.size() - 2].cols);
    ModelParams p(arch);
    const auto& expected = p.layout().tensors();
    for (std::size_t k = 0; k < table.size(); ++k) {
        if (table[k].name != expected[k].name || table[k].rows != expected[k].rows ||
            table[k].cols != expected[k].cols) {
            throw ConfigError("checkpoint tensor '" + table[k].name + "' does not fit the inferred architecture");
        }
    }
    const auto n_values = in.uint(8);
    if (n_values != p.values().size()) {
        throw ConfigError("checkpoint value count does not match the tensor table");
    }
    auto w = p.mutable_values();
    for (double& v : w) {
        v = std::bit_cast<double>(in.uint(8));
    }
    if (!in.done()) {
        throw ConfigError("checkpoint has trailing bytes");
    }
    return p;
}

std::filesystem::path manifest_path(const std::filesystem::path& checkpoint_path) {
    auto p = checkpoint_path;
    p += ".json";
    return p;
}

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path, const std::string& extra_json) {
    const std::string bytes = serialize(params);
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw ConfigError("cannot write checkpoint " + path.string());
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw ConfigError("write failed: " + path.string());
    }

    nlohmann::ordered_json manifest;
    manifest["format"] = "fedfdia-checkpoint-v1";
    manifest["architecture"] = {{"inputs", params.architecture().inputs},
                                {"hidden", params.architecture().hidden},
                                {"outputs", params.architecture().outputs}};
    auto& tensors = manifest["tensors"] = nlohmann::ordered_json::array();
    for (const TensorInfo& t : params.layout().tensors()) {
        tensors.push_back({{"name", t.name}, {"shape", {t.rows, t.cols}}, {"offset", t.offset}});
    }
    manifest["n_values"] = params.values().size();
    manifest["payload_fnv1a"] = hex64(fnv1a64(bytes));
    manifest["extra"] = nlohmann::ordered_json::parse(extra_json);
    std::ofstream mout(manifest_path(path), std::ios::binary);
    if (!mout) {
        throw ConfigError("cannot write manifest " + manifest_path(path).string());
    }
    mout << manifest.dump(2) << '\n';
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError("checkpoint not found: " + path.string());
    }
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    ModelParams params = deserialize(bytes);

    std::ifstream min(manifest_path(path), std::ios::binary);
    if (!min) {
        throw ConfigError("checkpoint manifest not found: " + manifest_path(path).string());
    }
    std::string text((std::istreambuf_iterator<char>(min)), std::istreambuf_iterator<char>());
    nlohmann::ordered_json manifest;
    try {
        manifest = nlohmann::ordered_json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("checkpoint manifest is not valid JSON: " + std::string(e.what()));
    }
    const auto& arch = params.architecture();
    const bool arch_ok = manifest.value("format", "") == "fedfdia-checkpoint-v1" &&
                         manifest["architecture"]["inputs"] == arch.inputs &&
                         manifest["architecture"]["hidden"] == arch.hidden &&
                         manifest["architecture"]["outputs"] == arch.outputs &&
                         manifest["n_values"] == params.values().size();
    if (!arch_ok || manifest.value("payload_fnv1a", "") != hex64(fnv1a64(bytes))) {
        throw ConfigError("checkpoint/manifest mismatch: " + path.string());
    }
    return Checkpoint{std::move(params), std::move(text)};
}

}  // namespace fedfdia::neural
