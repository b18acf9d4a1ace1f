#include "fedfdia/estimation.hpp"

#include <cmath>
#include <string>

#include <boost/math/special_functions/gamma.hpp>

namespace fedfdia::estimation {

WeightMatrix::WeightMatrix(Vector diagonal) : diagonal_(std::move(diagonal)) {
    for (Eigen::Index i = 0; i < diagonal_.size(); ++i) {
        if (!(diagonal_[i] > 0.0) || !std::isfinite(diagonal_[i])) {
            throw ConfigError("weight matrix entries must be positive and finite");
        }
    }
}

WeightMatrix WeightMatrix::from_sigma(Eigen::Index n, double sigma) {
    if (!(sigma > 0.0)) {
        throw ConfigError("noise sigma must be positive to build weights");
    }
    return WeightMatrix(Vector::Constant(n, 1.0 / (sigma * sigma)));
}

WlsEstimator::WlsEstimator(const grid::HMatrix& h, const WeightMatrix& w) : h_(h.values()), w_(w) {
    if (w_.size() != h_.rows()) {
        throw DimensionError("weight matrix size " + std::to_string(w_.size()) + " does not match " +
                             std::to_string(h_.rows()) + " measurements");
    }
    ht_w_ = h_.transpose() * w_.diagonal().asDiagonal();
    const Matrix gain = ht_w_ * h_;
    llt_.compute(gain);
    if (llt_.info() != Eigen::Success) {
        use_qr_ = true;
        qr_.compute(gain);
        if (qr_.rank() < gain.cols()) {
            throw RankError("estimation failed: rank " + std::to_string(qr_.rank()) + " < " +
                            std::to_string(gain.cols()));
        }
    }
}

Vector WlsEstimator::estimate(const Vector& y) const {
    if (y.size() != h_.rows()) {
        throw DimensionError("measurement vector has " + std::to_string(y.size()) + " entries, expected " +
                             std::to_string(h_.rows()));
    }
    const Vector rhs = ht_w_ * y;
    return use_qr_ ? Vector(qr_.solve(rhs)) : Vector(llt_.solve(rhs));
}

Vector wls_estimate(const grid::HMatrix& h, const WeightMatrix& w, const Vector& y) {
    return WlsEstimator(h, w).estimate(y);
}

namespace {

void check_dims(const Vector& y, const grid::HMatrix& h, const Vector& v) {
    if (y.size() != h.rows() || v.size() != h.cols()) {
        throw DimensionError("residual: y has " + std::to_string(y.size()) + " entries and v has " +
                             std::to_string(v.size()) + " for a " + std::to_string(h.rows()) + "x" +
                             std::to_string(h.cols()) + " H");
    }
}

}  // namespace

double residual_norm_sq(const Vector& y, const grid::HMatrix& h, const Vector& v) {
    check_dims(y, h, v);
    return (y - h.values() * v).squaredNorm();
}

double weighted_residual_norm_sq(const Vector& y, const grid::HMatrix& h, const Vector& v, const WeightMatrix& w) {
    check_dims(y, h, v);
    if (w.size() != y.size()) {
        throw DimensionError("weight matrix size does not match measurement count");
    }
    const Vector r = y - h.values() * v;
    return r.dot(w.diagonal().cwiseProduct(r));
}

double chi_square_cdf(double x, int dof) {
    if (x <= 0.0) {
        return 0.0;
    }
    return boost::math::gamma_p(0.5 * dof, 0.5 * x);
}

double compute_threshold(double significance, int dof) {
    if (!(significance > 0.0 && significance < 1.0)) {
        throw ConfigError("significance must lie in (0, 1)");
    }
    if (dof < 1) {
        throw ConfigError("degrees of freedom must be >= 1");
    }
    const double target = 1.0 - significance;
    double lo = 0.0;
    double hi = std::max(1.0, static_cast<double>(dof));
    while (chi_square_cdf(hi, dof) < target) {
        hi *= 2.0;
    }
    for (int it = 0; it < 200 && hi - lo > 1e-14 * hi; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (chi_square_cdf(mid, dof) < target) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

BddConfig BddConfig::make(double significance, int degrees_of_freedom) {
    return BddConfig{significance, degrees_of_freedom, compute_threshold(significance, degrees_of_freedom)};
}

BddConfig BddConfig::for_h(const grid::HMatrix& h, double significance) {
    const auto dof = static_cast<int>(h.rows() - h.cols());
    if (dof < 1) {
        throw ConfigError("bad-data detection needs redundant measurements (I > J)");
    }
    return make(significance, dof);
}

bool bdd_test(double r_sq, const BddConfig& cfg) { return r_sq > cfg.threshold; }

BddResult run_bdd(const WlsEstimator& est, const Vector& y, const BddConfig& cfg) {
    BddResult out;
    out.state = est.estimate(y);
    const Vector r = y - est.h() * out.state;
    out.r_sq = r.squaredNorm();
    out.weighted_r_sq = r.dot(est.weights().diagonal().cwiseProduct(r));
    out.flagged = bdd_test(out.weighted_r_sq, cfg);
    return out;
}

}  // namespace fedfdia::estimation
