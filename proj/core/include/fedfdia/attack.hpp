#pragma once

#include <cstdint>
#include <vector>

#include "fedfdia/common.hpp"
#include "fedfdia/grid.hpp"

namespace fedfdia::attack {

/// Per-meter compromise labels (1 = meter value altered).
using LabelVector = std::vector<std::uint8_t>;

/// Error an attacker injects into the estimated state. `c` is zero outside `support`.
struct StateError {
    Vector c;
    std::vector<int> support;  // sorted state indices
};

struct AttackParams {
    double magnitude = 0.2;   // rad, upper bound of |c_k|
    int min_sparsity = 1;
    int max_sparsity = 3;
    double label_eps = 1e-6;  // p.u.
};

/// a = H c. Such an attack shifts the WLS estimate by exactly c and leaves
/// the residual untouched, so a residual-based detector cannot see it.
Vector make_stealthy(const grid::HMatrix& h, const StateError& c);

/// Uniform support of size `sparsity`; each nonzero entry is uniform on
/// [-magnitude, -magnitude/2] U [magnitude/2, magnitude].
StateError sample_state_error(Rng& rng, int n_states, int sparsity, double magnitude);

/// Draws the sparsity uniformly from [min_sparsity, max_sparsity], then samples c.
StateError sample_state_error(Rng& rng, int n_states, const AttackParams& params);

/// Gross error on a single random meter: +-(gross_sigma_mult * noise_sigma).
Vector make_unstructured(Rng& rng, Eigen::Index n_meters, double gross_sigma_mult, double noise_sigma);

/// bit i = |a_i| > eps.
LabelVector label_of(const Vector& a, double eps);

}  // namespace fedfdia::attack
