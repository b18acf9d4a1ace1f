#include "fedfdia/attack.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace fedfdia::attack {

Vector make_stealthy(const grid::HMatrix& h, const StateError& c) {
    if (c.c.size() != h.cols()) {
        throw DimensionError("state error has " + std::to_string(c.c.size()) + " entries, H has " +
                             std::to_string(h.cols()) + " columns");
    }
    return h.values() * c.c;
}

StateError sample_state_error(Rng& rng, int n_states, int sparsity, double magnitude) {
    if (sparsity < 1 || sparsity > n_states) {
        throw ConfigError("attack sparsity " + std::to_string(sparsity) + " outside 1.." + std::to_string(n_states));
    }
    if (!(magnitude > 0.0)) {
        throw ConfigError("attack magnitude must be positive");
    }
    // Partial Fisher-Yates gives a uniformly random subset.
    std::vector<int> idx(static_cast<std::size_t>(n_states));
    std::iota(idx.begin(), idx.end(), 0);
    for (int k = 0; k < sparsity; ++k) {
        std::uniform_int_distribution<int> pick(k, n_states - 1);
        std::swap(idx[static_cast<std::size_t>(k)], idx[static_cast<std::size_t>(pick(rng))]);
    }
    StateError out{Vector::Zero(n_states), std::vector<int>(idx.begin(), idx.begin() + sparsity)};
    std::sort(out.support.begin(), out.support.end());

    std::uniform_real_distribution<double> mag(0.5 * magnitude, magnitude);
    std::bernoulli_distribution negative(0.5);
    for (int k : out.support) {
        const double m = mag(rng);
        out.c[k] = negative(rng) ? -m : m;
    }
    return out;
}

StateError sample_state_error(Rng& rng, int n_states, const AttackParams& params) {
    if (params.min_sparsity < 1 || params.max_sparsity < params.min_sparsity) {
        throw ConfigError("invalid attack sparsity range");
    }
    std::uniform_int_distribution<int> sparsity(params.min_sparsity, params.max_sparsity);
    return sample_state_error(rng, n_states, sparsity(rng), params.magnitude);
}

Vector make_unstructured(Rng& rng, Eigen::Index n_meters, double gross_sigma_mult, double noise_sigma) {
    if (n_meters < 1) {
        throw ConfigError("unstructured attack needs at least one meter");
    }
    Vector a = Vector::Zero(n_meters);
    std::uniform_int_distribution<Eigen::Index> meter(0, n_meters - 1);
    std::bernoulli_distribution negative(0.5);
    const Eigen::Index k = meter(rng);
    const double size = gross_sigma_mult * noise_sigma;
    a[k] = negative(rng) ? -size : size;
    return a;
}

LabelVector label_of(const Vector& a, double eps) {
    LabelVector bits(static_cast<std::size_t>(a.size()));
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        bits[static_cast<std::size_t>(i)] = std::abs(a[i]) > eps ? 1 : 0;
    }
    return bits;
}

}  // namespace fedfdia::attack
