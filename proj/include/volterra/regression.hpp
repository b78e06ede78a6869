#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "volterra/errors.hpp"

namespace volterra {

// Polynomial least-squares estimator of conditional expectations.  Features
// are affinely mapped onto [-1, 1] (fitted per call on the sampled range);
// the design holds all monomials of total degree <= degree, C(n+p, p) columns.
struct RegressionBasis {
    int degree = 2;
};

namespace detail {

// graded lexicographic monomial enumeration, deterministic across runs
inline void monomial_exponents(int n_features, int degree, std::vector<std::vector<int>>& out) {
    out.clear();
    std::vector<int> cur(static_cast<std::size_t>(n_features), 0);
    std::function<void(int, int)> rec = [&](int pos, int left) {
        if (pos == n_features) {
            if (left == 0) out.push_back(cur);
            return;
        }
        for (int e = 0; e <= left; ++e) {
            cur[static_cast<std::size_t>(pos)] = e;
            rec(pos + 1, left - e);
        }
        cur[static_cast<std::size_t>(pos)] = 0;
    };
    for (int total = 0; total <= degree; ++total) rec(0, total);
}

} // namespace detail

// Design matrix for one time slice; reusable for several target blocks at the
// same features (the engine regresses u-targets and v-targets per step).
class FittedBasis {
public:
    FittedBasis(const double* features, int n_samples, int n_features, const RegressionBasis& basis)
        : n_samples_(n_samples), n_features_(n_features) {
        for (int i = 0; i < n_samples * n_features; ++i)
            if (!std::isfinite(features[i]))
                throw DataError("regression features non-finite at flat index " + std::to_string(i));
        detail::monomial_exponents(n_features, basis.degree, exps_);

        lo_.assign(static_cast<std::size_t>(n_features), 0.0);
        hi_.assign(static_cast<std::size_t>(n_features), 0.0);
        for (int c = 0; c < n_features; ++c) {
            double lo = features[c], hi = features[c];
            for (int r = 1; r < n_samples; ++r) {
                const double v = features[static_cast<std::size_t>(r) * n_features + c];
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
            lo_[static_cast<std::size_t>(c)] = lo;
            hi_[static_cast<std::size_t>(c)] = hi;
        }

        design_.resize(n_samples, static_cast<Eigen::Index>(exps_.size()));
        std::vector<double> xn(static_cast<std::size_t>(n_features));
        for (int r = 0; r < n_samples; ++r) {
            for (int c = 0; c < n_features; ++c) {
                const double lo = lo_[static_cast<std::size_t>(c)], hi = hi_[static_cast<std::size_t>(c)];
                const double v = features[static_cast<std::size_t>(r) * n_features + c];
                // degenerate range (e.g. sigma = 0) maps to 0; the constant
                // column keeps the regression well-posed via the min-norm solve
                xn[static_cast<std::size_t>(c)] = (hi > lo) ? (2.0 * (v - lo) / (hi - lo) - 1.0) : 0.0;
            }
            for (std::size_t k = 0; k < exps_.size(); ++k) {
                double val = 1.0;
                for (int c = 0; c < n_features; ++c)
                    for (int e = 0; e < exps_[k][static_cast<std::size_t>(c)]; ++e)
                        val *= xn[static_cast<std::size_t>(c)];
                design_(r, static_cast<Eigen::Index>(k)) = val;
            }
        }
        cod_.compute(design_);
    }

    int n_columns() const { return static_cast<int>(exps_.size()); }
    int n_samples() const { return n_samples_; }

    // Minimum-norm least-squares fit of each target column, evaluated back at
    // the sample features.  targets: n_samples x q row-major.
    void project(const double* targets, int q, double* out) const {
        Eigen::MatrixXd T(n_samples_, q);
        for (int r = 0; r < n_samples_; ++r)
            for (int c = 0; c < q; ++c) {
                const double v = targets[static_cast<std::size_t>(r) * q + c];
                if (!std::isfinite(v))
                    throw DataError("regression targets non-finite in column " + std::to_string(c));
                T(r, c) = v;
            }
        Eigen::MatrixXd coef = cod_.solve(T);
        Eigen::MatrixXd fit = design_ * coef;
        for (int r = 0; r < n_samples_; ++r)
            for (int c = 0; c < q; ++c) out[static_cast<std::size_t>(r) * q + c] = fit(r, c);
    }

private:
    int n_samples_;
    int n_features_;
    std::vector<std::vector<int>> exps_;
    std::vector<double> lo_, hi_;
    Eigen::MatrixXd design_;
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod_;
};

inline std::vector<double> regress(const double* features, int n_samples, int n_features,
                                   const double* targets, int q, const RegressionBasis& basis) {
    FittedBasis fb(features, n_samples, n_features, basis);
    if (n_samples < fb.n_columns())
        throw DataError("regress: " + std::to_string(n_samples) + " samples for " +
                        std::to_string(fb.n_columns()) + " basis functions");
    std::vector<double> out(static_cast<std::size_t>(n_samples) * q);
    fb.project(targets, q, out.data());
    return out;
}

// pinv(A) b for a small symmetric positive semi-definite matrix (sigma sigma^T).
inline void pinv_apply(const double* A, int n, const double* B, int q, double* out, double rcond = 1e-12) {
    Eigen::MatrixXd M(n, n);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < n; ++c) {
            const double v = A[static_cast<std::size_t>(r) * n + c];
            if (!std::isfinite(v)) throw NumericError("pseudo-inverse of a non-finite matrix");
            M(r, c) = v;
        }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(M);
    const auto& vals = es.eigenvalues();
    const auto& vecs = es.eigenvectors();
    const double cutoff = rcond * std::max(1.0, std::abs(vals(n - 1)));
    Eigen::MatrixXd Bm(n, q);
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < q; ++c) Bm(r, c) = B[static_cast<std::size_t>(r) * q + c];
    Eigen::MatrixXd Y = vecs.transpose() * Bm;
    for (int k = 0; k < n; ++k) {
        const double lam = vals(k);
        const double inv = (std::abs(lam) > cutoff) ? 1.0 / lam : 0.0;
        Y.row(k) *= inv;
    }
    Eigen::MatrixXd R = vecs * Y;
    for (int r = 0; r < n; ++r)
        for (int c = 0; c < q; ++c) out[static_cast<std::size_t>(r) * q + c] = R(r, c);
}

} // namespace volterra
