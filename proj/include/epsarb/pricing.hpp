#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "epsarb/arbitrage.hpp"
#include "epsarb/cutting_plane.hpp"
#include "epsarb/lp.hpp"
#include "epsarb/market.hpp"
#include "epsarb/parallel.hpp"

namespace epsarb {

struct PricingOptions {
    ArbitrageOptions arb;
    double eta = 1e-7;          // interior level: q >= eta * P
    double attain_tol = 1e-7;   // interior level certifying attainment by an equivalent measure
    double face_tol = 1e-9;     // relative width of the optimal face in the second stage
    double box = 1e6;           // bound on hedge holdings in the primal programs
    int max_pattern_bits = 12;
};

struct EmmResult {
    bool feasible = false;
    MeasureWeights measure;
    double interior = 0.0;      // largest s with q >= s P
    double deviation = 0.0;     // max over nodes of |E_Q[dS | node]|_q
    std::string reason;
    int blocking_node = -1;
    Vec farkas;                 // multipliers of the final outer approximation when infeasible
};

namespace detail {

inline Mat drift_map(const MarketModel& m, int v) {
    Mat M = Mat::Zero(m.dim(), static_cast<Eigen::Index>(m.num_leaves()));
    for (int w : m.node(v).children) {
        const Vec x = m.increment(w);
        for (int k = m.node(w).leaf_begin; k < m.node(w).leaf_end; ++k) M.col(k) = x;
    }
    return M;
}

inline Vec mass_row(const MarketModel& m, int v, int nv) {
    Vec r = Vec::Zero(nv);
    for (int k = m.node(v).leaf_begin; k < m.node(v).leaf_end; ++k) r[k] = 1.0;
    return r;
}

/**
 * Program over leaf weights q (first n variables) and `extra` trailing variables:
 * sum q = 1, q >= 0 and the node-wise eps-martingale constraints.
 *
 * Where hbar != 0 and p > 1 the drift is pinned to eps * hbar*, the only point of
 * the q-ball compatible with hbar . dS = eps on every child.
 *
 * Row coefficients below `snap` are set to zero. At eps equal to a node's critical
 * value they are rounding residue, and an exact LP would read them as forcing the
 * node's mass to zero.
 */
inline NormConeProgram measure_program(const MarketModel& m, const MarketStructure& st, int extra, double snap) {
    const int n = static_cast<int>(m.num_leaves());
    const int nv = n + extra;
    const int d = m.dim();
    LinearProgram lp(nv);
    Vec ones = Vec::Zero(nv);
    ones.head(n).setOnes();
    lp.add_row(ones, Sense::eq, 1.0);
    std::vector<NormConstraint> cones;
    auto add = [&](Vec r, Sense sense) {
        for (double& c : r)
            if (std::abs(c) <= snap) c = 0.0;
        lp.add_row(std::move(r), sense, 0.0);
    };
    for (int v : m.internal_nodes()) {
        Mat M = Mat::Zero(d, nv);
        M.leftCols(n) = drift_map(m, v);
        const Vec mass = mass_row(m, v, nv);
        const NodeStructure& ns = st.nodes[v];
        if (st.eps == 0.0) {
            for (int i = 0; i < d; ++i) add(M.row(i).transpose(), Sense::eq);
        } else if (st.norms.is_l1()) {
            for (int i = 0; i < d; ++i) {
                add(M.row(i).transpose() - st.eps * mass, Sense::le);
                add(-M.row(i).transpose() - st.eps * mass, Sense::le);
            }
        } else if (ns.active()) {
            for (int i = 0; i < d; ++i)
                add(M.row(i).transpose() - st.eps * ns.hbar_dual[i] * mass, Sense::eq);
        } else {
            cones.push_back({M, st.norms.q(), Vec(st.eps * mass), 0.0});
        }
    }
    NormConeProgram prog(lp);
    for (auto& c : cones) prog.add_cone(std::move(c));
    return prog;
}

inline void add_interior_rows(const MarketModel& m, LinearProgram& lp, int s_var) {
    const int n = static_cast<int>(m.num_leaves());
    for (int k = 0; k < n; ++k) {
        Vec r = Vec::Zero(lp.num_vars);
        r[k] = 1.0;
        r[s_var] = -m.leaf_prob(k);
        lp.add_row(r, Sense::ge, 0.0);
    }
}

inline MeasureWeights weights_from(const Vec& x, std::size_t n, double threshold) {
    std::vector<double> w(n);
    double s = 0.0;
    for (std::size_t k = 0; k < n; ++k) s += (w[k] = std::max(0.0, x[static_cast<Eigen::Index>(k)]));
    for (double& v : w) v /= s;
    return MeasureWeights::from(std::move(w), threshold);
}

inline int first_strict_node(const MarketModel& m, const MarketStructure& st) {
    for (int v : m.internal_nodes())
        if (st.nodes[v].strict_arbitrage_here) return v;
    return -1;
}

}  // namespace detail

/**
 * Most interior eps-martingale measure with q >= eta P, or a certificate that none exists.
 *
 * Maximizes s subject to q >= s P over the node-wise drift constraints and compares
 * the optimum with eta; an absolute lower bound s >= eta would sit below the LP
 * feasibility tolerance for small eta.
 */
inline EmmResult find_eps_martingale_measure(const MarketModel& m, const MarketStructure& st, double eta,
                                             const PricingOptions& opt = {}) {
    if (!(eta > 0.0) || !(eta <= 1.0)) throw InputError("eta must lie in (0, 1]");
    EmmResult out;
    if (const int v = detail::first_strict_node(m, st); v >= 0) {
        out.blocking_node = v;
        out.reason = "strict eps-arbitrage at node '" + m.node(v).id + "'";
        return out;
    }
    const int n = static_cast<int>(m.num_leaves());
    NormConeProgram prog = detail::measure_program(m, st, 1, detail::abs_tol(m, opt.arb));
    LinearProgram& lp = prog.base();
    lp.maximize = true;
    lp.objective[n] = 1.0;
    detail::add_interior_rows(m, lp, n);
    const ConeResult res = prog.solve(opt.arb.cone);
    if (res.status == LpStatus::infeasible) {
        out.reason = "no measure satisfies the drift constraints";
        out.farkas = res.last.farkas;
        return out;
    }
    if (!res.optimal()) throw SolverError(std::string("measure program failed: ") + to_string(res.status));
    out.interior = res.x[n];
    if (out.interior < eta) {
        // The optimal value itself is the certificate: no q >= eta P exists.
        out.reason = "largest interior level " + detail::fmt_num(out.interior) + " is below eta";
        out.farkas = res.last.duals;
        return out;
    }
    out.feasible = true;
    out.measure = detail::weights_from(res.x, m.num_leaves(), 0.0);
    out.deviation = is_eps_martingale(m, out.measure, st.eps, st.norms).max_deviation;
    return out;
}

inline EmmResult find_eps_martingale_measure(const MarketModel& m, double eps, const NormPair& norms, double eta,
                                             const PricingOptions& opt = {}) {
    return find_eps_martingale_measure(m, compute_node_structure(m, eps, norms, opt.arb), eta, opt);
}

enum class Direction { sup, inf };

struct PriceBound {
    double value = 0.0;
    bool attained = false;
    double interior = 0.0;     // largest s with q >= s P on the optimal face
    MeasureWeights witness;
};

/**
 * sup (or inf) of E_Q[Psi] over eps-martingale measures.
 *
 * The value is taken over the closure (q >= 0); attainment by an equivalent
 * measure is decided by maximizing the smallest ratio q / P on the optimal face.
 */
inline PriceBound robust_price_bound(const MarketModel& m, const MarketStructure& st, const Payoff& psi,
                                     Direction dir, const PricingOptions& opt = {}) {
    check_payoff(m, psi);
    const EmmResult emm = find_eps_martingale_measure(m, st, opt.eta, opt);
    if (!emm.feasible) throw DomainError("no eps-martingale structure at eps " + detail::fmt_num(st.eps) + ": " + emm.reason);
    const int n = static_cast<int>(m.num_leaves());
    const Vec f = Eigen::Map<const Vec>(psi.values.data(), n);

    NormConeProgram first = detail::measure_program(m, st, 0, detail::abs_tol(m, opt.arb));
    first.base().maximize = dir == Direction::sup;
    first.base().objective = f;
    const ConeResult r1 = first.solve(opt.arb.cone);
    if (!r1.optimal()) throw SolverError(std::string("price bound program failed: ") + to_string(r1.status));
    PriceBound out;
    out.value = f.dot(r1.x);

    NormConeProgram second = detail::measure_program(m, st, 1, detail::abs_tol(m, opt.arb));
    LinearProgram& lp = second.base();
    lp.maximize = true;
    lp.objective[n] = 1.0;
    detail::add_interior_rows(m, lp, n);
    Vec row = Vec::Zero(n + 1);
    row.head(n) = f;
    const double width = opt.face_tol * (1.0 + std::abs(out.value) + f.cwiseAbs().maxCoeff());
    if (dir == Direction::sup) lp.add_row(row, Sense::ge, out.value - width);
    else lp.add_row(row, Sense::le, out.value + width);
    const ConeResult r2 = second.solve(opt.arb.cone);
    if (!r2.optimal()) throw SolverError(std::string("attainment program failed: ") + to_string(r2.status));
    out.interior = r2.x[n];
    out.attained = out.interior > opt.attain_tol;
    out.witness = detail::weights_from(out.attained ? r2.x : r1.x, m.num_leaves(), 0.0);
    return out;
}

inline PriceBound robust_price_bound(const MarketModel& m, double eps, const NormPair& norms, const Payoff& psi,
                                     Direction dir, const PricingOptions& opt = {}) {
    return robust_price_bound(m, compute_node_structure(m, eps, norms, opt.arb), psi, dir, opt);
}

/// x + (H . S)_T + (G . S)_T - eps ||H||_p >= Psi on every leaf.
struct HedgeCertificate {
    double x = 0.0;
    Strategy H;
    Strategy G;
    std::vector<double> slack;
};

struct SuperhedgeResult {
    double price = 0.0;        // dual value: sup of E_Q[Psi]
    double primal = 0.0;       // capital of the certificate
    double gap = 0.0;          // primal - price
    bool certified = false;    // |gap| <= 1e-6 (1 + |price|)
    bool best_effort = false;  // pattern cap exceeded or holdings pinned at the box
    int patterns = 0;
    HedgeCertificate certificate;
};

namespace detail {

struct HedgeSolve {
    bool ok = false;
    LpStatus status = LpStatus::numerical_failure;
    bool boxed = false;
    HedgeCertificate cert;
};

// Primal superhedge with G allowed (and H forced to zero) on the nodes in `pattern`.
inline HedgeSolve solve_hedge(const MarketModel& m, const MarketStructure& st, const Payoff& psi,
                              const std::vector<int>& pattern, const PricingOptions& opt) {
    const int d = m.dim();
    const bool l1 = st.norms.is_l1();
    std::vector<int> h_var(m.size(), -1), t_var(m.size(), -1), c_var(m.size(), -1), a_var(m.size(), -1);
    std::vector<Mat> basis(m.size());
    std::vector<char> in_pattern(m.size(), 0);
    for (int v : pattern) in_pattern[v] = 1;

    LinearProgram lp(1);
    lp.set_free(0);
    lp.objective[0] = 1.0;
    // Holdings are free variables boxed by rows: a shifted lower bound of -box would
    // cost about box * 1e-16 of absolute precision around zero.
    std::vector<int> boxed_vars;
    for (int v : m.internal_nodes()) {
        if (in_pattern[v]) {
            basis[v] = st.nodes[v].perp();
            const int k = static_cast<int>(basis[v].cols());
            c_var[v] = lp.add_vars(k, -kInf, kInf);
            a_var[v] = lp.add_vars(k);
            for (int i = 0; i < k; ++i) boxed_vars.push_back(c_var[v] + i);
        } else {
            h_var[v] = lp.add_vars(d, -kInf, kInf);
            for (int i = 0; i < d; ++i) boxed_vars.push_back(h_var[v] + i);
            t_var[v] = lp.add_vars(l1 ? d : 1);
        }
    }
    for (std::size_t k = 0; k < m.num_leaves(); ++k) {
        Vec r = Vec::Zero(lp.num_vars);
        r[0] = 1.0;
        for (int w = m.leaves()[k]; m.node(w).parent >= 0; w = m.node(w).parent) {
            const int v = m.node(w).parent;
            const Vec x = m.increment(w);
            if (in_pattern[v]) {
                r.segment(c_var[v], basis[v].cols()) += basis[v].transpose() * x;
            } else {
                r.segment(h_var[v], d) += x;
                r.segment(t_var[v], l1 ? d : 1).array() -= st.eps;
            }
        }
        lp.add_row(r, Sense::ge, psi.values[k]);
    }
    for (int j : boxed_vars)
        for (double s : {1.0, -1.0}) {
            Vec r = Vec::Zero(lp.num_vars);
            r[j] = s;
            lp.add_row(r, Sense::le, opt.box);
        }
    for (int v : pattern)
        for (int i = 0; i < basis[v].cols(); ++i)
            for (double s : {1.0, -1.0}) {
                Vec r = Vec::Zero(lp.num_vars);
                r[a_var[v] + i] = 1.0;
                r[c_var[v] + i] = -s;
                lp.add_row(r, Sense::ge, 0.0);
            }
    if (l1)
        for (int v : m.internal_nodes()) {
            if (in_pattern[v]) continue;
            for (int i = 0; i < d; ++i)
                for (double s : {1.0, -1.0}) {
                    Vec r = Vec::Zero(lp.num_vars);
                    r[t_var[v] + i] = 1.0;
                    r[h_var[v] + i] = -s;
                    lp.add_row(r, Sense::ge, 0.0);
                }
        }
    NormConeProgram prog(lp);
    if (!l1)
        for (int v : m.internal_nodes()) {
            if (in_pattern[v]) continue;
            Mat M = Mat::Zero(d, lp.num_vars);
            M.block(0, h_var[v], d, d).setIdentity();
            Vec a = Vec::Zero(lp.num_vars);
            a[t_var[v]] = 1.0;
            prog.add_cone({M, st.norms.p(), a, 0.0});
        }
    ConeResult res = prog.solve(opt.arb.cone);
    HedgeSolve out;
    out.status = res.status;
    if (!res.optimal()) return out;
    auto pinned = [&](const Vec& x) {
        for (int j : boxed_vars)
            if (std::abs(x[j]) >= 0.99 * opt.box) return true;
        return false;
    };
    if (pinned(res.x)) {
        // Degenerate optimal face: keep the capital and take the smallest holdings on it.
        NormConeProgram second = prog;
        LinearProgram& base = second.base();
        base.objective.setZero();
        for (int v : m.internal_nodes()) {
            if (in_pattern[v]) base.objective.segment(a_var[v], basis[v].cols()).setOnes();
            else base.objective.segment(t_var[v], l1 ? d : 1).setOnes();
        }
        Vec r = Vec::Zero(base.num_vars);
        r[0] = 1.0;
        base.add_row(r, Sense::le, res.x[0] + 1e-8 * (1.0 + std::abs(res.x[0])));
        const ConeResult again = second.solve(opt.arb.cone);
        if (again.optimal()) res = again;
    }
    out.ok = true;
    HedgeCertificate& c = out.cert;
    c.H = Strategy::zero(m);
    c.G = Strategy::zero(m);
    for (int v : m.internal_nodes()) {
        if (in_pattern[v]) {
            c.G.at(v) = basis[v] * res.x.segment(c_var[v], basis[v].cols());
        } else {
            c.H.at(v) = res.x.segment(h_var[v], d);
            if (c.H.at(v).cwiseAbs().maxCoeff() >= 0.99 * opt.box) out.boxed = true;
        }
    }
    const auto gh = gain(m, c.H), gg = gain(m, c.G), cost = strategy_cost(m, c.H, st.norms);
    c.slack.resize(m.num_leaves());
    double worst = 0.0;
    for (std::size_t k = 0; k < m.num_leaves(); ++k) {
        c.slack[k] = res.x[0] + gh[k] + gg[k] - st.eps * cost[k] - psi.values[k];
        worst = std::min(worst, c.slack[k]);
    }
    // Shift the capital so that the certificate dominates exactly.
    c.x = res.x[0] - worst;
    for (double& s : c.slack) s -= worst;
    return out;
}

}  // namespace detail

/**
 * Superhedging price with a primal certificate.
 *
 * The price is the dual value sup E_Q[Psi]. Where hbar vanishes everywhere, or
 * p = 1, the primal needs no F-perp component. Otherwise each subset of the nodes
 * with hbar != 0 is tried as the set where H = 0 and G in F-perp is active.
 */
inline SuperhedgeResult superhedge_price(const MarketModel& m, const MarketStructure& st, const Payoff& psi,
                                         const PricingOptions& opt = {}) {
    check_payoff(m, psi);
    if (!check_na_prime(m, st, opt.arb).holds)
        throw DomainError("NA_eps fails at eps " + detail::fmt_num(st.eps));
    SuperhedgeResult out;
    out.price = robust_price_bound(m, st, psi, Direction::sup, opt).value;

    std::vector<int> active;
    if (!st.norms.is_l1())
        for (int v : m.internal_nodes())
            if (st.nodes[v].active()) active.push_back(v);
    std::size_t count = 1;
    if (static_cast<int>(active.size()) > opt.max_pattern_bits) {
        out.best_effort = true;
        active.clear();
    } else {
        count = std::size_t{1} << active.size();
    }
    std::vector<detail::HedgeSolve> sols(count);
    parallel_for(count, [&](std::size_t mask) {
        std::vector<int> pattern;
        for (std::size_t b = 0; b < active.size(); ++b)
            if (mask & (std::size_t{1} << b)) pattern.push_back(active[b]);
        sols[mask] = detail::solve_hedge(m, st, psi, pattern, opt);
    });
    out.patterns = static_cast<int>(count);
    int best = -1;
    for (std::size_t i = 0; i < count; ++i)
        if (sols[i].ok && (best < 0 || sols[i].cert.x < sols[best].cert.x)) best = static_cast<int>(i);
    // Among certificates tied on capital, prefer one with holdings inside the box.
    if (best >= 0 && sols[best].boxed) {
        const double x = sols[best].cert.x, tie = 1e-7 * (1.0 + std::abs(x));
        for (std::size_t i = 0; i < count; ++i)
            if (sols[i].ok && !sols[i].boxed && sols[i].cert.x <= x + tie) {
                best = static_cast<int>(i);
                break;
            }
    }
    if (best < 0) throw SolverError(std::string("superhedging program failed: ") + to_string(sols[0].status));
    out.certificate = sols[best].cert;
    out.best_effort = out.best_effort || sols[best].boxed;
    out.primal = out.certificate.x;
    out.gap = out.primal - out.price;
    out.certified = std::abs(out.gap) <= 1e-6 * (1.0 + std::abs(out.price));
    return out;
}

inline SuperhedgeResult superhedge_price(const MarketModel& m, double eps, const NormPair& norms, const Payoff& psi,
                                         const PricingOptions& opt = {}) {
    return superhedge_price(m, compute_node_structure(m, eps, norms, opt.arb), psi, opt);
}

/// Interval of eps-fair prices; an endpoint is open when no equivalent measure attains it.
struct PriceInterval {
    double lower = 0.0;
    double upper = 0.0;
    bool lower_attained = false;
    bool upper_attained = false;
    bool lo_open() const { return !lower_attained; }
    bool hi_open() const { return !upper_attained; }
    /// For p = 1 only the inclusion of the interval in the fair prices is known.
    bool inner_bound_only = false;
    MeasureWeights lower_witness;
    MeasureWeights upper_witness;
};

inline PriceInterval fair_price_range(const MarketModel& m, const MarketStructure& st, const Payoff& psi,
                                      const PricingOptions& opt = {}) {
    if (!check_na_prime(m, st, opt.arb).holds)
        throw DomainError("NA_eps fails at eps " + detail::fmt_num(st.eps));
    const PriceBound hi = robust_price_bound(m, st, psi, Direction::sup, opt);
    const PriceBound lo = robust_price_bound(m, st, psi, Direction::inf, opt);
    PriceInterval out;
    out.lower = lo.value - st.eps;
    out.upper = hi.value + st.eps;
    out.lower_attained = lo.attained;
    out.upper_attained = hi.attained;
    out.inner_bound_only = st.norms.is_l1();
    out.lower_witness = lo.witness;
    out.upper_witness = hi.witness;
    return out;
}

inline PriceInterval fair_price_range(const MarketModel& m, double eps, const NormPair& norms, const Payoff& psi,
                                      const PricingOptions& opt = {}) {
    return fair_price_range(m, compute_node_structure(m, eps, norms, opt.arb), psi, opt);
}

}  // namespace epsarb
