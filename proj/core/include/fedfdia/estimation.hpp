#pragma once

#include "fedfdia/common.hpp"
#include "fedfdia/grid.hpp"

namespace fedfdia::estimation {

/// Diagonal of W. Entries are strictly positive.
class WeightMatrix {
  public:
    explicit WeightMatrix(Vector diagonal);

    /// W = diag(1 / sigma^2) for `n` meters with equal noise level.
    static WeightMatrix from_sigma(Eigen::Index n, double sigma);

    const Vector& diagonal() const { return diagonal_; }
    Eigen::Index size() const { return diagonal_.size(); }

  private:
    Vector diagonal_;
};

/// Linear WLS estimator with the gain matrix H^T W H factored once.
///
/// Cholesky is tried first; if the gain matrix is not numerically positive
/// definite a column-pivoted QR is used. A rank-deficient gain matrix raises
/// RankError("estimation failed: rank ...").
class WlsEstimator {
  public:
    WlsEstimator(const grid::HMatrix& h, const WeightMatrix& w);

    /// argmin_v (y - Hv)^T W (y - Hv).
    Vector estimate(const Vector& y) const;

    const Matrix& h() const { return h_; }
    const WeightMatrix& weights() const { return w_; }

  private:
    Matrix h_;
    WeightMatrix w_;
    Matrix ht_w_;  // H^T W
    Eigen::LLT<Matrix> llt_;
    Eigen::ColPivHouseholderQR<Matrix> qr_;
    bool use_qr_ = false;
};

Vector wls_estimate(const grid::HMatrix& h, const WeightMatrix& w, const Vector& y);

/// ||y - H v||^2 (unweighted).
double residual_norm_sq(const Vector& y, const grid::HMatrix& h, const Vector& v);

/// r^T W r with r = y - H v. This is the statistic that is chi-square
/// distributed under Gaussian noise, and the one the detector thresholds.
double weighted_residual_norm_sq(const Vector& y, const grid::HMatrix& h, const Vector& v, const WeightMatrix& w);

/// Regularized lower incomplete gamma P(dof/2, x/2), i.e. the chi-square CDF.
double chi_square_cdf(double x, int dof);

/// (1 - significance) quantile of chi-square(dof), found by bisection on the CDF.
double compute_threshold(double significance, int dof);

struct BddConfig {
    double significance = 0.05;
    int degrees_of_freedom = 0;
    double threshold = 0.0;

    /// Builds a config whose threshold is consistent with the other two fields.
    static BddConfig make(double significance, int degrees_of_freedom);

    /// dof = I - J for the given H.
    static BddConfig for_h(const grid::HMatrix& h, double significance = 0.05);
};

/// Bad-data verdict: strictly greater than the threshold.
bool bdd_test(double r_sq, const BddConfig& cfg);

/// Convenience pipeline: estimate, weighted residual, verdict.
struct BddResult {
    Vector state;
    double weighted_r_sq = 0.0;
    double r_sq = 0.0;
    bool flagged = false;
};

BddResult run_bdd(const WlsEstimator& est, const Vector& y, const BddConfig& cfg);

}  // namespace fedfdia::estimation
