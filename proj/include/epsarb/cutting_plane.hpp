#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "epsarb/lp.hpp"
#include "epsarb/norms.hpp"

namespace epsarb {

/// |M x|_r <= a . x + b
struct NormConstraint {
    Mat M;
    double r = 2.0;
    Vec a;
    double b = 0.0;

    double violation(const Vec& x) const { return lp_norm(M * x, r) - a.dot(x) - b; }
};

struct ConeOptions {
    double feas_tol = 1e-10;   // absolute, scaled by (1 + |a.x + b|)
    int max_rounds = 500;
    LpOptions lp;
};

struct ConeResult {
    LpStatus status = LpStatus::numerical_failure;
    Vec x;
    double value = 0.0;        // LP value of the final outer approximation
    double max_violation = 0.0;
    int rounds = 0;
    int cuts = 0;
    LpResult last;             // final LP, including duals of base rows and cuts
    bool optimal() const { return status == LpStatus::optimal; }
};

/**
 * LP plus norm-cone constraints, solved by outer approximation.
 *
 * Each norm constraint is replaced by supporting cuts g . (M x) <= a . x + b with
 * |g|_{r'} <= 1. Violated constraints receive the cut at g = dual_vector(M x, r),
 * which is tight at the current point. For r in {1, inf} the cut family is finite
 * and the loop ends exactly.
 */
class NormConeProgram {
public:
    explicit NormConeProgram(LinearProgram base) : lp_(std::move(base)) {}

    LinearProgram& base() { return lp_; }
    const LinearProgram& base() const { return lp_; }
    const std::vector<NormConstraint>& cones() const { return cones_; }

    void add_cone(NormConstraint c) {
        if (c.M.cols() != lp_.num_vars || c.a.size() != lp_.num_vars)
            throw InputError("norm constraint does not match variable count");
        cones_.push_back(std::move(c));
    }

    ConeResult solve(const ConeOptions& opt = {}) const {
        LinearProgram lp = lp_;
        const int base_rows = lp.num_rows();
        for (const auto& c : cones_) seed_cuts(lp, c);
        ConeResult res;
        for (int round = 0; round < opt.max_rounds; ++round) {
            res.rounds = round + 1;
            LpResult r = solve_lp(lp, opt.lp);
            res.last = r;
            if (!r.optimal()) {
                res.status = r.status;
                res.cuts = lp.num_rows() - base_rows;
                return res;
            }
            double worst = 0.0;
            bool done = true;
            for (const auto& c : cones_) {
                const double rhs = c.a.dot(r.x) + c.b;
                const double v = lp_norm(c.M * r.x, c.r) - rhs;
                worst = std::max(worst, v);
                if (v > opt.feas_tol * (1.0 + std::abs(rhs))) {
                    add_cut(lp, c, c.M * r.x);
                    done = false;
                }
            }
            res.x = r.x;
            res.value = r.value;
            res.max_violation = worst;
            if (done) {
                res.status = LpStatus::optimal;
                res.cuts = lp.num_rows() - base_rows;
                return res;
            }
        }
        res.status = LpStatus::iteration_limit;
        res.cuts = lp.num_rows() - base_rows;
        return res;
    }

private:
    static double dual_exponent(double r) {
        if (r == 1.0) return kInf;
        if (std::isinf(r)) return 1.0;
        return r / (r - 1.0);
    }

    static void add_cut(LinearProgram& lp, const NormConstraint& c, const Vec& z) {
        const Vec g = dual_vector(z, c.r);
        lp.add_row(Vec(c.M.transpose() * g - c.a), Sense::le, c.b);
    }

    // Coordinate cuts +-e_i, plus the four diagonals when M has two rows.
    static void seed_cuts(LinearProgram& lp, const NormConstraint& c) {
        const Eigen::Index k = c.M.rows();
        for (Eigen::Index i = 0; i < k; ++i)
            for (double s : {1.0, -1.0}) {
                Vec g = Vec::Zero(k);
                g[i] = s;
                lp.add_row(Vec(c.M.transpose() * g - c.a), Sense::le, c.b);
            }
        if (k == 2) {
            const double rp = dual_exponent(c.r);
            const double w = std::isinf(rp) ? 1.0 : std::pow(2.0, -1.0 / rp);
            for (double s1 : {1.0, -1.0})
                for (double s2 : {1.0, -1.0}) {
                    Vec g(2);
                    g << s1 * w, s2 * w;
                    lp.add_row(Vec(c.M.transpose() * g - c.a), Sense::le, c.b);
                }
        }
    }

    LinearProgram lp_;
    std::vector<NormConstraint> cones_;
};

/// Value and one supergradient of a concave function.
struct OracleValue {
    double value = 0.0;
    Vec supergradient;
};

/// Box [lower, upper] or r-norm ball around `center`.
struct ConcaveDomain {
    enum class Kind { box, ball } kind = Kind::box;
    Vec lower, upper;
    Vec center;
    double radius = 1.0;
    double r = 2.0;

    static ConcaveDomain make_box(Vec lo, Vec hi) {
        ConcaveDomain d;
        d.kind = Kind::box;
        d.lower = std::move(lo);
        d.upper = std::move(hi);
        return d;
    }
    static ConcaveDomain make_ball(Vec c, double radius, double r) {
        ConcaveDomain d;
        d.kind = Kind::ball;
        d.center = std::move(c);
        d.radius = radius;
        d.r = r;
        return d;
    }
    Eigen::Index dim() const { return kind == Kind::box ? lower.size() : center.size(); }
};

struct ConcaveOracle {
    std::function<OracleValue(const Vec&)> evaluate;
    ConcaveDomain domain;
};

struct ConcaveResult {
    Vec x;
    double value = 0.0;       // best oracle value found
    double upper_bound = 0.0; // cutting-plane model maximum
    double gap = 0.0;
    int iterations = 0;
    bool converged = false;
};

/**
 * Kelley's cutting-plane method for max f over a compact box or ball.
 *
 * The model max{t : t <= f(x_k) + g_k.(x - x_k)} over the domain is an outer
 * bound; the best evaluated point is the inner bound. Stops when the gap is below
 * tol * (1 + |best|).
 */
inline ConcaveResult maximize_concave(const ConcaveOracle& oracle, double tol = 1e-8, int max_iter = 2000) {
    const ConcaveDomain& dom = oracle.domain;
    const int n = static_cast<int>(dom.dim());
    if (n == 0) throw InputError("concave oracle domain is empty");
    if (dom.kind == ConcaveDomain::Kind::box) {
        if (dom.upper.size() != n || (dom.upper - dom.lower).minCoeff() < 0.0)
            throw InputError("invalid box domain");
    } else if (!(dom.radius >= 0.0)) {
        throw InputError("invalid ball domain");
    }

    // Variables: x (n), t (1).
    LinearProgram lp(n + 1);
    lp.maximize = true;
    lp.objective[n] = 1.0;
    lp.set_free(n);
    Vec start(n);
    if (dom.kind == ConcaveDomain::Kind::box) {
        lp.lower.head(n) = dom.lower;
        lp.upper.head(n) = dom.upper;
        start = 0.5 * (dom.lower + dom.upper);
    } else {
        lp.lower.head(n) = dom.center.array() - dom.radius;
        lp.upper.head(n) = dom.center.array() + dom.radius;
        start = dom.center;
    }
    auto add_model_cut = [&](const Vec& x, const OracleValue& ov) {
        // t - g.x <= f(x) - g.x_k
        Vec row = Vec::Zero(n + 1);
        row.head(n) = -ov.supergradient;
        row[n] = 1.0;
        lp.add_row(row, Sense::le, ov.value - ov.supergradient.dot(x));
    };
    auto ball_violation = [&](const Vec& x) { return lp_norm(x - dom.center, dom.r) - dom.radius; };
    auto add_ball_cut = [&](const Vec& x) {
        const Vec g = dual_vector(Vec(x - dom.center), dom.r);
        Vec row = Vec::Zero(n + 1);
        row.head(n) = g;
        lp.add_row(row, Sense::le, dom.radius + g.dot(dom.center));
    };

    ConcaveResult res;
    OracleValue ov = oracle.evaluate(start);
    if (ov.supergradient.size() != n) throw InputError("oracle supergradient has wrong dimension");
    res.x = start;
    res.value = ov.value;
    add_model_cut(start, ov);
    res.upper_bound = kInf;

    for (int it = 0; it < max_iter; ++it) {
        res.iterations = it + 1;
        LpResult r = solve_lp(lp);
        if (!r.optimal()) throw SolverError(std::string("cutting-plane LP failed: ") + to_string(r.status));
        Vec x = r.x.head(n);
        if (dom.kind == ConcaveDomain::Kind::ball && ball_violation(x) > 1e-12 * (1.0 + dom.radius)) {
            add_ball_cut(x);
            continue;  // the model is not yet an outer bound over the ball
        }
        res.upper_bound = r.value;
        ov = oracle.evaluate(x);
        if (ov.value > res.value) {
            res.value = ov.value;
            res.x = x;
        }
        res.gap = res.upper_bound - res.value;
        if (res.gap <= tol * (1.0 + std::abs(res.value))) {
            res.converged = true;
            return res;
        }
        add_model_cut(x, ov);
    }
    res.gap = res.upper_bound - res.value;
    return res;
}

}  // namespace epsarb
