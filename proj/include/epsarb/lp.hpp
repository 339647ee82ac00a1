#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/LU>
#include <Eigen/QR>

#include "epsarb/errors.hpp"
#include "epsarb/norms.hpp"

namespace epsarb {

enum class Sense { le, eq, ge };

enum class LpStatus { optimal, infeasible, unbounded, numerical_failure, iteration_limit };

inline const char* to_string(LpStatus s) {
    switch (s) {
        case LpStatus::optimal: return "optimal";
        case LpStatus::infeasible: return "infeasible";
        case LpStatus::unbounded: return "unbounded";
        case LpStatus::numerical_failure: return "numerical_failure";
        case LpStatus::iteration_limit: return "iteration_limit";
    }
    return "unknown";
}

/// min or max c.x subject to rows (a_i . x  sense_i  b_i) and lower <= x <= upper.
struct LinearProgram {
    int num_vars = 0;
    Vec objective;
    bool maximize = false;
    std::vector<Vec> rows;
    std::vector<Sense> senses;
    std::vector<double> rhs;
    Vec lower;
    Vec upper;

    LinearProgram() = default;
    explicit LinearProgram(int n)
        : num_vars(n), objective(Vec::Zero(n)), lower(Vec::Zero(n)), upper(Vec::Constant(n, kInf)) {}

    int num_rows() const { return static_cast<int>(rows.size()); }

    int add_row(Vec coef, Sense s, double b) {
        if (coef.size() != num_vars) throw InputError("LP row has wrong length");
        rows.push_back(std::move(coef));
        senses.push_back(s);
        rhs.push_back(b);
        return num_rows() - 1;
    }

    /// Appends `count` variables with the given bounds; returns the index of the first.
    int add_vars(int count, double lo = 0.0, double hi = kInf) {
        const int first = num_vars;
        num_vars += count;
        objective.conservativeResize(num_vars);
        lower.conservativeResize(num_vars);
        upper.conservativeResize(num_vars);
        for (int j = first; j < num_vars; ++j) {
            objective[j] = 0.0;
            lower[j] = lo;
            upper[j] = hi;
        }
        for (auto& r : rows) {
            r.conservativeResize(num_vars);
            r.tail(count).setZero();
        }
        return first;
    }

    void set_free(int j) {
        lower[j] = -kInf;
        upper[j] = kInf;
    }
};

struct LpOptions {
    double feas_tol = 1e-9;
    double opt_tol = 1e-11;
    double pivot_tol = 1e-11;
    int max_iter = 0;          // 0 selects a size-based cap
    int bland_after = 40;      // consecutive degenerate pivots before switching to Bland's rule
};

struct LpResult {
    LpStatus status = LpStatus::numerical_failure;
    Vec x;
    double value = 0.0;
    /// Shadow prices: d(optimal value)/d(rhs_i) for each original row.
    Vec duals;
    /// On infeasibility: multipliers y on the original rows with y <= 0 on <= rows,
    /// y >= 0 on >= rows, and bound multipliers z on finite upper bounds, such that
    /// the aggregated inequality is contradictory (see farkas_margin()).
    Vec farkas;
    Vec farkas_upper;
    double primal_residual = 0.0;
    double dual_residual = 0.0;
    int iterations = 0;

    bool optimal() const { return status == LpStatus::optimal; }
};

namespace detail {

// Standard form min c.z, A z = b, z >= 0, with b >= 0 after row sign flips.
class StandardForm {
public:
    enum class VarKind { shifted, flipped, split };

    explicit StandardForm(const LinearProgram& lp) : lp_(lp) {
        const int n = lp.num_vars;
        kind_.resize(n);
        col_.resize(n);
        offset_.assign(n, 0.0);
        int cols = 0;
        for (int j = 0; j < n; ++j) {
            const double lo = lp.lower[j], hi = lp.upper[j];
            if (lo > hi) throw InputError("LP variable " + std::to_string(j) + " has lower > upper");
            col_[j] = cols;
            if (std::isfinite(lo)) {
                kind_[j] = VarKind::shifted;
                offset_[j] = lo;
                cols += 1;
                if (std::isfinite(hi)) bounded_.push_back(j);
            } else if (std::isfinite(hi)) {
                kind_[j] = VarKind::flipped;
                offset_[j] = hi;
                cols += 1;
            } else {
                kind_[j] = VarKind::split;
                cols += 2;
            }
        }
        n_struct_ = cols;
        const int m0 = lp.num_rows();
        m_ = m0 + static_cast<int>(bounded_.size());

        // Row senses after appending bound rows; count slacks.
        std::vector<Sense> sense(m_);
        for (int i = 0; i < m0; ++i) sense[i] = lp.senses[i];
        for (int k = m0; k < m_; ++k) sense[k] = Sense::le;
        slack_col_.assign(m_, -1);
        int n_slack = 0;
        for (int i = 0; i < m_; ++i)
            if (sense[i] != Sense::eq) slack_col_[i] = n_struct_ + n_slack++;
        n_real_ = n_struct_ + n_slack;

        A_ = Mat::Zero(m_, n_real_);
        b_ = Vec::Zero(m_);
        c_ = Vec::Zero(n_real_);
        for (int j = 0; j < n; ++j) {
            const double cj = lp.maximize ? -lp.objective[j] : lp.objective[j];
            switch (kind_[j]) {
                case VarKind::shifted: c_[col_[j]] = cj; break;
                case VarKind::flipped: c_[col_[j]] = -cj; break;
                case VarKind::split:
                    c_[col_[j]] = cj;
                    c_[col_[j] + 1] = -cj;
                    break;
            }
        }
        for (int i = 0; i < m0; ++i) {
            const Vec& a = lp.rows[i];
            double b = lp.rhs[i];
            for (int j = 0; j < n; ++j) {
                const double aij = a[j];
                if (aij == 0.0) continue;
                switch (kind_[j]) {
                    case VarKind::shifted:
                        A_(i, col_[j]) = aij;
                        b -= aij * offset_[j];
                        break;
                    case VarKind::flipped:
                        A_(i, col_[j]) = -aij;
                        b -= aij * offset_[j];
                        break;
                    case VarKind::split:
                        A_(i, col_[j]) = aij;
                        A_(i, col_[j] + 1) = -aij;
                        break;
                }
            }
            b_[i] = b;
        }
        for (std::size_t k = 0; k < bounded_.size(); ++k) {
            const int j = bounded_[k];
            const int i = m0 + static_cast<int>(k);
            A_(i, col_[j]) = 1.0;
            b_[i] = lp.upper[j] - lp.lower[j];
        }
        for (int i = 0; i < m_; ++i) {
            if (sense[i] == Sense::le) A_(i, slack_col_[i]) = 1.0;
            if (sense[i] == Sense::ge) A_(i, slack_col_[i]) = -1.0;
        }
        row_sign_.assign(m_, 1.0);
        for (int i = 0; i < m_; ++i)
            if (b_[i] < 0.0) {
                row_sign_[i] = -1.0;
                A_.row(i) *= -1.0;
                b_[i] = -b_[i];
            }
    }

    int rows() const { return m_; }
    int original_rows() const { return lp_.num_rows(); }
    int real_cols() const { return n_real_; }
    const Mat& A() const { return A_; }
    const Vec& b() const { return b_; }
    const Vec& c() const { return c_; }
    int slack_col(int i) const { return slack_col_[i]; }
    double row_sign(int i) const { return row_sign_[i]; }
    const std::vector<int>& bounded() const { return bounded_; }

    Vec recover(const Vec& z) const {
        Vec x(lp_.num_vars);
        for (int j = 0; j < lp_.num_vars; ++j) {
            switch (kind_[j]) {
                case VarKind::shifted: x[j] = offset_[j] + z[col_[j]]; break;
                case VarKind::flipped: x[j] = offset_[j] - z[col_[j]]; break;
                case VarKind::split: x[j] = z[col_[j]] - z[col_[j] + 1]; break;
            }
        }
        return x;
    }

private:
    const LinearProgram& lp_;
    std::vector<VarKind> kind_;
    std::vector<int> col_;
    std::vector<double> offset_;
    std::vector<int> bounded_;
    std::vector<int> slack_col_;
    std::vector<double> row_sign_;
    int n_struct_ = 0;
    int n_real_ = 0;
    int m_ = 0;
    Mat A_;
    Vec b_;
    Vec c_;
};

// Dense tableau simplex over [A | artificials].
class Tableau {
public:
    Tableau(const StandardForm& sf, const LpOptions& opt) : sf_(sf), opt_(opt) {
        m_ = sf.rows();
        n_real_ = sf.real_cols();
        // A slack with coefficient +1 after sign normalisation can start basic.
        basis_.assign(m_, -1);
        std::vector<int> need_art;
        for (int i = 0; i < m_; ++i) {
            const int s = sf.slack_col(i);
            if (s >= 0 && sf.A()(i, s) > 0.0) basis_[i] = s;
            else need_art.push_back(i);
        }
        n_ = n_real_ + static_cast<int>(need_art.size());
        T_ = Mat::Zero(m_, n_ + 1);
        T_.leftCols(n_real_) = sf.A();
        T_.col(n_) = sf.b();
        for (std::size_t k = 0; k < need_art.size(); ++k) {
            const int i = need_art[k];
            T_(i, n_real_ + static_cast<int>(k)) = 1.0;
            basis_[i] = n_real_ + static_cast<int>(k);
        }
        banned_.assign(n_, 0);
        active_row_.assign(m_, 1);
        scale_ = std::max(1.0, sf.b().cwiseAbs().maxCoeff());
        max_iter_ = opt.max_iter > 0 ? opt.max_iter : 50 * (m_ + n_) + 2000;
    }

    bool is_artificial(int j) const { return j >= n_real_; }
    int iterations() const { return iter_; }
    const std::vector<int>& basis() const { return basis_; }
    const std::vector<char>& active_rows() const { return active_row_; }

    /// Runs simplex on cost vector c (size n_). Returns optimal/unbounded/iteration_limit.
    LpStatus run(const Vec& c) {
        Vec d = reduced_costs(c);
        int degenerate_run = 0;
        while (true) {
            if (iter_ >= max_iter_) return LpStatus::iteration_limit;
            const bool bland = degenerate_run >= opt_.bland_after;
            int enter = -1;
            double best = -opt_.opt_tol;
            for (int j = 0; j < n_; ++j) {
                if (banned_[j] || d[j] >= -opt_.opt_tol) continue;
                if (bland) {
                    enter = j;
                    break;
                }
                if (d[j] < best) {
                    best = d[j];
                    enter = j;
                }
            }
            if (enter < 0) return LpStatus::optimal;
            // Harris two-pass ratio test: bound the step with slightly relaxed rows, then take
            // the largest pivot among rows that block within that bound.
            double theta = kInf;
            for (int i = 0; i < m_; ++i) {
                if (!active_row_[i]) continue;
                const double a = T_(i, enter);
                const double b = std::max(T_(i, n_), 0.0);
                if (a > opt_.pivot_tol) theta = std::min(theta, (b + 1e-12 * (1.0 + b)) / a);
            }
            int leave = -1;
            double best_ratio = kInf;
            for (int i = 0; i < m_; ++i) {
                if (!active_row_[i]) continue;
                const double a = T_(i, enter);
                if (a <= opt_.pivot_tol) continue;
                const double r = std::max(T_(i, n_), 0.0) / a;
                if (r > theta) continue;
                const bool better = leave < 0 || (bland ? basis_[i] < basis_[leave] : a > T_(leave, enter));
                if (better) {
                    leave = i;
                    best_ratio = r;
                }
            }
            if (leave < 0) return LpStatus::unbounded;
            degenerate_run = (best_ratio * std::abs(d[enter]) <= 1e-14 * scale_) ? degenerate_run + 1 : 0;
            pivot(leave, enter);
            const double f = d[enter];
            d -= f * T_.row(leave).head(n_).transpose();
            d[enter] = 0.0;
            ++iter_;
        }
    }

    double objective(const Vec& c) const {
        double v = 0.0;
        for (int i = 0; i < m_; ++i)
            if (active_row_[i]) v += c[basis_[i]] * T_(i, n_);
        return v;
    }

    /// Pivots basic artificials out of the basis; rows that cannot be cleared are redundant.
    void expel_artificials() {
        for (int i = 0; i < m_; ++i) {
            if (!active_row_[i] || !is_artificial(basis_[i])) continue;
            int best = -1;
            double mag = 1e-7;
            for (int j = 0; j < n_real_; ++j)
                if (std::abs(T_(i, j)) > mag) {
                    mag = std::abs(T_(i, j));
                    best = j;
                }
            if (best >= 0) pivot(i, best);
            else active_row_[i] = 0;
        }
        for (int j = n_real_; j < n_; ++j) banned_[j] = 1;
    }

    Vec basic_solution() const {
        Vec z = Vec::Zero(n_);
        for (int i = 0; i < m_; ++i)
            if (active_row_[i]) z[basis_[i]] = std::max(0.0, T_(i, n_));
        return z;
    }

private:
    Vec reduced_costs(const Vec& c) const {
        Vec d = c;
        for (int i = 0; i < m_; ++i)
            if (active_row_[i] && c[basis_[i]] != 0.0) d -= c[basis_[i]] * T_.row(i).head(n_).transpose();
        for (int i = 0; i < m_; ++i)
            if (active_row_[i]) d[basis_[i]] = 0.0;
        return d;
    }

    void pivot(int r, int s) {
        const double p = T_(r, s);
        T_.row(r) /= p;
        for (int i = 0; i < m_; ++i) {
            if (i == r) continue;
            const double f = T_(i, s);
            if (f != 0.0) T_.row(i) -= f * T_.row(r);
            T_(i, s) = 0.0;
        }
        T_(r, s) = 1.0;
        basis_[r] = s;
    }

    const StandardForm& sf_;
    const LpOptions& opt_;
    int m_ = 0, n_ = 0, n_real_ = 0;
    Mat T_;
    std::vector<int> basis_;
    std::vector<char> banned_;
    std::vector<char> active_row_;
    double scale_ = 1.0;
    int iter_ = 0;
    int max_iter_ = 0;
};

}  // namespace detail

/**
 * Dense two-phase primal simplex.
 *
 * Dantzig pricing with a fall-back to Bland's rule after a run of degenerate
 * pivots. The final basis is re-solved with an LU factorisation so the
 * returned point and duals are not polluted by tableau drift.
 */
inline LpResult solve_lp(const LinearProgram& lp, const LpOptions& opt = {}) {
    if (lp.objective.size() != lp.num_vars || lp.lower.size() != lp.num_vars || lp.upper.size() != lp.num_vars)
        throw InputError("LP vectors do not match the variable count");
    for (int i = 0; i < lp.num_rows(); ++i)
        if (!lp.rows[i].allFinite() || !std::isfinite(lp.rhs[i])) throw InputError("LP row with non-finite data");

    detail::StandardForm sf(lp);
    detail::Tableau tab(sf, opt);
    const int m = sf.rows();
    const int nr = sf.real_cols();
    const int n_all = nr + [&] {
        int k = 0;
        for (int i = 0; i < m; ++i) {
            const int s = sf.slack_col(i);
            if (!(s >= 0 && sf.A()(i, s) > 0.0)) ++k;
        }
        return k;
    }();

    LpResult res;
    res.duals = Vec::Zero(lp.num_rows());

    Vec c1 = Vec::Zero(n_all);
    c1.tail(n_all - nr).setOnes();
    LpStatus st = tab.run(c1);
    res.iterations = tab.iterations();
    if (st == LpStatus::iteration_limit) {
        res.status = st;
        return res;
    }
    const double bscale = std::max(1.0, sf.b().cwiseAbs().maxCoeff());
    const double infeas = tab.objective(c1);

    if (infeas > opt.feas_tol * bscale) {
        // Phase-1 duals y solve B^T y = c1_B; they certify infeasibility.
        std::vector<int> art_row(n_all - nr, -1);
        for (int i = 0, k = 0; i < m; ++i) {
            const int s = sf.slack_col(i);
            if (!(s >= 0 && sf.A()(i, s) > 0.0)) art_row[k++] = i;
        }
        Mat B = Mat::Zero(m, m);
        Vec cb = Vec::Zero(m);
        for (int k = 0; k < m; ++k) {
            const int j = tab.basis()[k];
            if (j < nr) B.col(k) = sf.A().col(j);
            else {
                B(art_row[j - nr], k) = 1.0;
                cb[k] = 1.0;
            }
        }
        Eigen::FullPivLU<Mat> lu(B);
        Vec y = lu.isInvertible() ? Vec(lu.transpose().solve(cb)) : Vec(Vec::Zero(m));
        res.status = LpStatus::infeasible;
        res.farkas = Vec::Zero(lp.num_rows());
        res.farkas_upper = Vec::Zero(lp.num_vars);
        for (int i = 0; i < lp.num_rows(); ++i) res.farkas[i] = sf.row_sign(i) * y[i];
        for (std::size_t k = 0; k < sf.bounded().size(); ++k) {
            const int i = lp.num_rows() + static_cast<int>(k);
            res.farkas_upper[sf.bounded()[k]] = sf.row_sign(i) * y[i];
        }
        return res;
    }

    tab.expel_artificials();
    Vec c2 = Vec::Zero(n_all);
    c2.head(nr) = sf.c();
    st = tab.run(c2);
    res.iterations = tab.iterations();
    if (st != LpStatus::optimal) {
        res.status = st;
        return res;
    }

    // Refine the final basis with LU on the active rows.
    std::vector<int> rows;
    for (int i = 0; i < m; ++i)
        if (tab.active_rows()[i]) rows.push_back(i);
    const int k = static_cast<int>(rows.size());
    Mat B(k, k);
    Vec bb(k), cb(k);
    bool basis_ok = true;
    for (int r = 0; r < k; ++r) {
        const int j = tab.basis()[rows[r]];
        if (j >= nr) {
            basis_ok = false;
            break;
        }
        for (int s = 0; s < k; ++s) B(s, r) = sf.A()(rows[s], j);
        bb[r] = sf.b()[rows[r]];
        cb[r] = sf.c()[j];
    }
    Vec z = tab.basic_solution().head(nr);
    Vec ys = Vec::Zero(m);
    // Duals from a near-singular basis carry an error of order cond(B) * machine epsilon.
    double dual_allow = 1e-6;
    if (basis_ok && k > 0) {
        Eigen::FullPivLU<Mat> lu(B);
        if (lu.isInvertible()) {
            const double rc = lu.rcond();
            if (rc > 0.0) dual_allow = std::max(dual_allow, 10.0 * std::numeric_limits<double>::epsilon() / rc);
            Vec xb = lu.solve(bb);
            Vec y = lu.transpose().solve(cb);
            for (int r = 0; r < k; ++r) ys[rows[r]] = y[r];
            Vec zr = Vec::Zero(nr);
            for (int r = 0; r < k; ++r) zr[tab.basis()[rows[r]]] = xb[r];
            if (zr.minCoeff() >= -opt.feas_tol * bscale) z = zr.cwiseMax(0.0);
        } else {
            // Numerically dependent rows survived; a least-squares dual is still exact if consistent.
            Vec y = B.transpose().completeOrthogonalDecomposition().solve(cb);
            for (int r = 0; r < k; ++r) ys[rows[r]] = y[r];
        }
    }

    const Vec resid = sf.A() * z - sf.b();
    double pr = 0.0;
    for (int i = 0; i < m; ++i)
        if (tab.active_rows()[i]) pr = std::max(pr, std::abs(resid[i]));
    const Vec dred = sf.c() - sf.A().transpose() * ys;
    const double dr = std::max(0.0, -dred.minCoeff());
    res.primal_residual = pr;
    res.dual_residual = dr;
    res.x = sf.recover(z);
    res.value = lp.objective.dot(res.x);
    for (int i = 0; i < lp.num_rows(); ++i) {
        const double d = sf.row_sign(i) * ys[i];
        res.duals[i] = lp.maximize ? -d : d;
    }
    const double cscale = std::max(1.0, sf.c().cwiseAbs().maxCoeff());
    if (pr > 1e3 * opt.feas_tol * bscale || dr > dual_allow * cscale) {
        res.status = LpStatus::numerical_failure;
        return res;
    }
    res.status = LpStatus::optimal;
    return res;
}

/**
 * For an infeasibility certificate: aggregates the rows into g.x >= beta and returns
 * beta - sup{g.x : x within the remaining bounds}. Positive means the certificate is valid.
 * Coefficients of g smaller than `tol` in magnitude are treated as zero.
 */
inline double farkas_margin(const LinearProgram& lp, const LpResult& res, double tol = 1e-9) {
    if (res.farkas.size() != lp.num_rows()) return -kInf;
    Vec g = Vec::Zero(lp.num_vars);
    double beta = 0.0;
    for (int i = 0; i < lp.num_rows(); ++i) {
        const double y = res.farkas[i];
        if ((lp.senses[i] == Sense::le && y > tol) || (lp.senses[i] == Sense::ge && y < -tol)) return -kInf;
        g += y * lp.rows[i];
        beta += y * lp.rhs[i];
    }
    for (int j = 0; j < lp.num_vars; ++j) {
        const double z = res.farkas_upper.size() == lp.num_vars ? res.farkas_upper[j] : 0.0;
        if (z > tol) return -kInf;
        if (z != 0.0 && std::isfinite(lp.upper[j])) {
            g[j] += z;
            beta += z * lp.upper[j];
        }
    }
    double sup = 0.0;
    for (int j = 0; j < lp.num_vars; ++j) {
        const double gj = std::abs(g[j]) <= tol ? 0.0 : g[j];
        if (gj == 0.0) continue;
        const double bound = gj < 0.0 ? lp.lower[j] : lp.upper[j];
        if (!std::isfinite(bound)) return -kInf;
        sup += gj * bound;
    }
    return beta - sup;
}

/// max_i of the amount by which x violates rows or bounds (0 when feasible).
inline double lp_violation(const LinearProgram& lp, const Vec& x) {
    double v = 0.0;
    for (int i = 0; i < lp.num_rows(); ++i) {
        const double ax = lp.rows[i].dot(x);
        switch (lp.senses[i]) {
            case Sense::le: v = std::max(v, ax - lp.rhs[i]); break;
            case Sense::ge: v = std::max(v, lp.rhs[i] - ax); break;
            case Sense::eq: v = std::max(v, std::abs(ax - lp.rhs[i])); break;
        }
    }
    for (int j = 0; j < lp.num_vars; ++j) {
        v = std::max(v, lp.lower[j] - x[j]);
        v = std::max(v, x[j] - lp.upper[j]);
    }
    return v;
}

}  // namespace epsarb
