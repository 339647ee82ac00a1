#pragma once

#include <cmath>
#include <limits>
#include <stdexcept>

#include <Eigen/Dense>

namespace epsarb {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/**
 * A Hölder pair (p, q) with 1/p + 1/q = 1.
 *
 * Strategies are measured in the p-norm, conditional drifts in the q-norm.
 * q is infinite exactly when p == 1.
 */
class NormPair {
public:
    explicit NormPair(double p = 2.0) : p_(p) {
        if (!(p >= 1.0) || !std::isfinite(p))
            throw std::invalid_argument("norm exponent p must lie in [1, inf)");
        q_ = (p == 1.0) ? kInf : p / (p - 1.0);
    }

    double p() const { return p_; }
    double q() const { return q_; }
    bool is_l1() const { return p_ == 1.0; }

private:
    double p_;
    double q_;
};

/// |x|_r for r in [1, inf].
inline double lp_norm(const Vec& x, double r) {
    if (x.size() == 0) return 0.0;
    if (std::isinf(r)) return x.cwiseAbs().maxCoeff();
    if (r == 1.0) return x.cwiseAbs().sum();
    if (r == 2.0) return x.norm();
    const double scale = x.cwiseAbs().maxCoeff();
    if (scale == 0.0) return 0.0;
    double s = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) s += std::pow(std::abs(x[i]) / scale, r);
    return scale * std::pow(s, 1.0 / r);
}

inline double sgn(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

/**
 * Dual vector of x with respect to the r-norm: x*_i = sgn(x_i) |x_i|^{r-1} / |x|_r^{r-1}.
 *
 * Satisfies x . x* = |x|_r and |x*|_{r'} = 1 for x != 0; zero maps to zero.
 * For r = inf the dual is a signed unit vector on the first maximal coordinate.
 */
inline Vec dual_vector(const Vec& x, double r) {
    Vec out = Vec::Zero(x.size());
    if (x.size() == 0) return out;
    if (std::isinf(r)) {
        Eigen::Index k = 0;
        const double m = x.cwiseAbs().maxCoeff(&k);
        if (m > 0.0) out[k] = sgn(x[k]);
        return out;
    }
    if (r == 1.0) {
        for (Eigen::Index i = 0; i < x.size(); ++i) out[i] = sgn(x[i]);
        return out;
    }
    const double n = lp_norm(x, r);
    if (n == 0.0) return out;
    for (Eigen::Index i = 0; i < x.size(); ++i)
        out[i] = sgn(x[i]) * std::pow(std::abs(x[i]) / n, r - 1.0);
    return out;
}

inline Vec dual_vector(const Vec& x, const NormPair& norms) { return dual_vector(x, norms.p()); }

}  // namespace epsarb
