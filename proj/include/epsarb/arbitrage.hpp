#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/QR>
#include <Eigen/SVD>

#include "epsarb/cutting_plane.hpp"
#include "epsarb/lp.hpp"
#include "epsarb/market.hpp"
#include "epsarb/norms.hpp"
#include "epsarb/parallel.hpp"

namespace epsarb {

struct ArbitrageOptions {
    /// Relative tolerance; absolute thresholds are tol * (1 + price scale).
    double tol = 1e-8;
    ConeOptions cone;
};

/// Geometry of one internal node at level eps.
struct NodeStructure {
    int node = -1;
    Vec hbar;                  // |hbar|_p in {0, 1}
    Vec hbar_dual;
    double local_critical = 0.0;  // dist_q(0, conv{dS(children)})
    Mat perp_complement;       // orthonormal basis of F-perp ∩ E0-perp (d x k)
    Mat perp_null;             // orthonormal basis of F-perp ∩ E0 (d x k)
    bool strict_arbitrage_here = false;
    Vec certificate;           // unit-norm one-step strict arbitrage when flagged

    bool active() const { return hbar.size() > 0 && hbar.cwiseAbs().maxCoeff() > 0.0; }
    /// Orthonormal basis of the whole of F-perp.
    Mat perp() const {
        Mat b(hbar.size(), perp_complement.cols() + perp_null.cols());
        b << perp_complement, perp_null;
        return b;
    }
};

struct MarketStructure {
    double eps = 0.0;
    NormPair norms;
    std::vector<NodeStructure> nodes;  // indexed by node; leaves left default
    bool any_strict() const {
        return std::any_of(nodes.begin(), nodes.end(), [](const NodeStructure& s) { return s.strict_arbitrage_here; });
    }
};

enum class ArbitrageStatus { strict_arbitrage, none_within_tolerance };

inline const char* to_string(ArbitrageStatus s) {
    return s == ArbitrageStatus::strict_arbitrage ? "strict_arbitrage" : "none_within_tolerance";
}

struct ArbitrageReport {
    ArbitrageStatus status = ArbitrageStatus::none_within_tolerance;
    double eps = 0.0;
    double optimum = 0.0;   // sum over leaves of the certificate's slack
    double margin = 0.0;    // smallest slack among leaves below the certified node
    int node = -1;
    Strategy certificate;
    std::vector<double> slacks;  // (H . S)_T - eps ||H||_p per leaf
    bool found() const { return status == ArbitrageStatus::strict_arbitrage; }
};

namespace detail {

struct NodeData {
    Mat X;   // one row per child: dS(child)
    Vec pi;  // conditional probabilities
};

inline NodeData node_data(const MarketModel& m, int v) {
    const auto& ch = m.node(v).children;
    NodeData nd{Mat(ch.size(), m.dim()), Vec(ch.size())};
    for (std::size_t k = 0; k < ch.size(); ++k) {
        nd.X.row(k) = m.increment(ch[k]).transpose();
        nd.pi[k] = m.node(ch[k]).cond_prob;
    }
    return nd;
}

inline double abs_tol(const MarketModel& m, const ArbitrageOptions& opt) { return opt.tol * (1.0 + m.price_scale()); }

// Orthonormal bases of ker(A) and its complement, as columns of n-column matrices.
inline std::pair<Mat, Mat> kernel_split(const Mat& A, Eigen::Index n) {
    if (A.rows() == 0 || n == 0) return {Mat::Identity(n, n), Mat(n, 0)};
    Eigen::JacobiSVD<Mat> svd(A, Eigen::ComputeFullV);
    const Vec& sv = svd.singularValues();
    const double thr = 1e-10 * std::max(1.0, sv.size() ? sv[0] : 0.0);
    Eigen::Index rank = 0;
    for (Eigen::Index i = 0; i < sv.size(); ++i)
        if (sv[i] > thr) ++rank;
    const Mat& V = svd.matrixV();
    return {V.rightCols(n - rank), V.leftCols(rank)};
}

struct Maximin {
    double value = 0.0;  // max over |h|_p <= 1 of min_w h . x_w
    Vec h;
};

inline Maximin maximin(const Mat& X, const NormPair& norms, const ArbitrageOptions& opt) {
    const int d = static_cast<int>(X.cols()), k = static_cast<int>(X.rows());
    Maximin out;
    if (norms.is_l1()) {
        // h (d, free), u (d), tau (free)
        LinearProgram lp(2 * d + 1);
        lp.maximize = true;
        for (int i = 0; i < d; ++i) lp.set_free(i);
        lp.set_free(2 * d);
        lp.objective[2 * d] = 1.0;
        for (int w = 0; w < k; ++w) {
            Vec r = Vec::Zero(2 * d + 1);
            r.head(d) = X.row(w).transpose();
            r[2 * d] = -1.0;
            lp.add_row(r, Sense::ge, 0.0);
        }
        for (int i = 0; i < d; ++i)
            for (double s : {1.0, -1.0}) {
                Vec r = Vec::Zero(2 * d + 1);
                r[d + i] = 1.0;
                r[i] = -s;
                lp.add_row(r, Sense::ge, 0.0);
            }
        Vec r = Vec::Zero(2 * d + 1);
        r.segment(d, d).setOnes();
        lp.add_row(r, Sense::le, 1.0);
        const LpResult res = solve_lp(lp, opt.cone.lp);
        if (!res.optimal()) throw SolverError(std::string("maximin LP failed: ") + to_string(res.status));
        out.value = res.value;
        out.h = res.x.head(d);
        return out;
    }
    LinearProgram lp(d + 1);
    lp.maximize = true;
    for (int i = 0; i <= d; ++i) lp.set_free(i);
    lp.objective[d] = 1.0;
    for (int w = 0; w < k; ++w) {
        Vec r(d + 1);
        r.head(d) = X.row(w).transpose();
        r[d] = -1.0;
        lp.add_row(r, Sense::ge, 0.0);
    }
    NormConeProgram prog(lp);
    Mat M = Mat::Zero(d, d + 1);
    M.leftCols(d).setIdentity();
    prog.add_cone({M, norms.p(), Vec::Zero(d + 1), 1.0});
    const ConeResult res = prog.solve(opt.cone);
    if (!res.optimal()) throw SolverError(std::string("maximin cone program failed: ") + to_string(res.status));
    out.h = res.x.head(d);
    const double n = lp_norm(out.h, norms.p());
    if (n > 1.0) out.h /= n;
    out.value = (X * out.h).minCoeff();
    return out;
}

struct MinNorm {
    bool feasible = false;
    double norm = kInf;
    Vec h;
};

// min |h|_p subject to X h = eps 1.
inline MinNorm min_norm_solution(const Mat& X, double eps, const NormPair& norms, double tol,
                                 const ArbitrageOptions& opt) {
    const int d = static_cast<int>(X.cols()), k = static_cast<int>(X.rows());
    const Vec rhs = Vec::Constant(k, eps);
    MinNorm out;
    if (norms.p() == 2.0) {
        Eigen::CompleteOrthogonalDecomposition<Mat> cod(X);
        cod.setThreshold(1e-12);
        Vec h = cod.solve(rhs);
        if ((X * h - rhs).cwiseAbs().maxCoeff() > tol) return out;
        out.feasible = true;
        out.h = h;
        out.norm = h.norm();
        return out;
    }
    LinearProgram lp(d + 1);
    for (int i = 0; i < d; ++i) lp.set_free(i);
    lp.objective[d] = 1.0;
    for (int w = 0; w < k; ++w) {
        Vec r = Vec::Zero(d + 1);
        r.head(d) = X.row(w).transpose();
        lp.add_row(r, Sense::eq, eps);
    }
    NormConeProgram prog(lp);
    Mat M = Mat::Zero(d, d + 1);
    M.leftCols(d).setIdentity();
    Vec a = Vec::Zero(d + 1);
    a[d] = 1.0;
    prog.add_cone({M, norms.p(), a, 0.0});
    const ConeResult res = prog.solve(opt.cone);
    if (res.status == LpStatus::infeasible) return out;
    if (!res.optimal()) throw SolverError(std::string("min-norm program failed: ") + to_string(res.status));
    out.feasible = true;
    out.h = res.x.head(d);
    out.norm = lp_norm(out.h, norms.p());
    return out;
}

// max sum_w pi_w h.x_w over X h >= 0, |h|_inf <= 1 (classical one-step arbitrage).
inline std::optional<Vec> classical_arbitrage(const NodeData& nd, double tol, const LpOptions& lpo) {
    const int d = static_cast<int>(nd.X.cols());
    LinearProgram lp(d);
    lp.maximize = true;
    for (int i = 0; i < d; ++i) {
        lp.lower[i] = -1.0;
        lp.upper[i] = 1.0;
    }
    lp.objective = nd.X.transpose() * nd.pi;
    for (Eigen::Index w = 0; w < nd.X.rows(); ++w) lp.add_row(Vec(nd.X.row(w).transpose()), Sense::ge, 0.0);
    const LpResult res = solve_lp(lp, lpo);
    if (!res.optimal()) throw SolverError(std::string("classical arbitrage LP failed: ") + to_string(res.status));
    if (res.value > tol) return Vec(res.x);
    return std::nullopt;
}

// p = 1 one-step program over (h, u): slacks X h - eps sum(u) >= tau (or >= 0), u >= |h|, sum(u) <= 1.
inline LpResult l1_local_program(const NodeData& nd, double eps, bool maximin_margin, const LpOptions& lpo) {
    const int d = static_cast<int>(nd.X.cols()), k = static_cast<int>(nd.X.rows());
    const int nv = 2 * d + 1;
    LinearProgram lp(nv);
    lp.maximize = true;
    for (int i = 0; i < d; ++i) lp.set_free(i);
    if (maximin_margin) {
        lp.set_free(2 * d);
        lp.objective[2 * d] = 1.0;
    } else {
        lp.upper[2 * d] = 0.0;
        lp.objective.head(d) = nd.X.transpose() * nd.pi;
        lp.objective.segment(d, d).setConstant(-eps);
    }
    for (int w = 0; w < k; ++w) {
        Vec r = Vec::Zero(nv);
        r.head(d) = nd.X.row(w).transpose();
        r.segment(d, d).setConstant(-eps);
        r[2 * d] = -1.0;
        lp.add_row(r, Sense::ge, 0.0);
    }
    for (int i = 0; i < d; ++i)
        for (double s : {1.0, -1.0}) {
            Vec r = Vec::Zero(nv);
            r[d + i] = 1.0;
            r[i] = -s;
            lp.add_row(r, Sense::ge, 0.0);
        }
    Vec r = Vec::Zero(nv);
    r.segment(d, d).setOnes();
    lp.add_row(r, Sense::le, 1.0);
    return solve_lp(lp, lpo);
}

// p = 1: support-maximal element of E = {h : X h >= eps |h|_1} (a cone when there is no strict arbitrage).
inline Vec l1_hbar(const NodeData& nd, double eps, double tol, const LpOptions& lpo) {
    const int d = static_cast<int>(nd.X.cols()), k = static_cast<int>(nd.X.rows());
    const int nv = 2 * d;
    Vec sum = Vec::Zero(d);
    for (int i = 0; i < d; ++i)
        for (double s : {1.0, -1.0}) {
            LinearProgram lp(nv);
            lp.maximize = true;
            for (int j = 0; j < d; ++j) lp.set_free(j);
            lp.objective[i] = s;
            for (int w = 0; w < k; ++w) {
                Vec r = Vec::Zero(nv);
                r.head(d) = nd.X.row(w).transpose();
                r.tail(d).setConstant(-eps);
                lp.add_row(r, Sense::ge, 0.0);
            }
            for (int j = 0; j < d; ++j)
                for (double t : {1.0, -1.0}) {
                    Vec r = Vec::Zero(nv);
                    r[d + j] = 1.0;
                    r[j] = -t;
                    lp.add_row(r, Sense::ge, 0.0);
                }
            Vec r = Vec::Zero(nv);
            r.tail(d).setOnes();
            lp.add_row(r, Sense::le, 1.0);
            const LpResult res = solve_lp(lp, lpo);
            if (!res.optimal()) throw SolverError(std::string("support LP failed: ") + to_string(res.status));
            if (res.value > tol) sum += res.x.head(d);
        }
    for (int i = 0; i < d; ++i)
        if (std::abs(sum[i]) <= tol) sum[i] = 0.0;
    const double n = sum.cwiseAbs().sum();
    return n > 0.0 ? Vec(sum / n) : Vec(Vec::Zero(d));
}

inline void fill_perp_bases(NodeStructure& ns, const NodeData& nd, const NormPair& norms) {
    const Eigen::Index d = nd.X.cols();
    if (!ns.active()) {
        ns.perp_complement = Mat(d, 0);
        ns.perp_null = Mat(d, 0);
        return;
    }
    Mat F;
    if (norms.is_l1()) {
        std::vector<Eigen::Index> supp;
        for (Eigen::Index i = 0; i < d; ++i)
            if (ns.hbar[i] != 0.0) supp.push_back(i);
        Mat row(1, static_cast<Eigen::Index>(supp.size()));
        for (std::size_t j = 0; j < supp.size(); ++j) row(0, j) = sgn(ns.hbar[supp[j]]);
        const Mat N = kernel_split(row, row.cols()).first;
        F = Mat::Zero(d, N.cols());
        for (std::size_t j = 0; j < supp.size(); ++j) F.row(supp[j]) = N.row(j);
    } else {
        F = kernel_split(ns.hbar_dual.transpose(), d).first;
    }
    const auto [K, Kc] = kernel_split(nd.X * F, F.cols());
    ns.perp_null = F * K;
    ns.perp_complement = F * Kc;
}

// Node analysis given the maximin of the node (independent of eps).
inline NodeStructure analyze_node(const MarketModel& m, int v, const NodeData& nd, const Maximin& mm, double eps,
                                  const NormPair& norms, const ArbitrageOptions& opt) {
    const double tol = abs_tol(m, opt);
    const int d = m.dim();
    NodeStructure ns;
    ns.node = v;
    ns.local_critical = std::max(0.0, mm.value);
    ns.hbar = Vec::Zero(d);
    auto flag = [&](Vec h) {
        const double n = lp_norm(h, norms.p());
        ns.strict_arbitrage_here = true;
        ns.certificate = n > 0.0 ? Vec(h / n) : h;
    };
    if (eps == 0.0) {
        if (auto h = classical_arbitrage(nd, tol, opt.cone.lp)) flag(*h);
    } else if (norms.is_l1()) {
        const LpResult sum = l1_local_program(nd, eps, false, opt.cone.lp);
        if (!sum.optimal())
            throw SolverError("local LP failed at node '" + m.node(v).id + "', eps " + fmt_num(eps) + ": " +
                              to_string(sum.status));
        if (sum.value > tol) {
            const LpResult mx = l1_local_program(nd, eps, true, opt.cone.lp);
            flag(mx.optimal() && mx.value > tol ? Vec(mx.x.head(d)) : Vec(sum.x.head(d)));
        } else {
            ns.hbar = l1_hbar(nd, eps, tol, opt.cone.lp);
        }
    } else if (ns.local_critical > eps + tol) {
        flag(mm.h);
    } else if (ns.local_critical >= eps - tol) {
        const MinNorm mn = min_norm_solution(nd.X, eps, norms, tol, opt);
        const double ntol = 1e-7;
        if (mn.feasible && mn.norm < 1.0 - ntol) {
            flag(mn.h);
        } else if (mn.feasible && mn.norm <= 1.0 + ntol) {
            ns.hbar = mn.h / mn.norm;
        } else {
            const Vec s = (nd.X * mm.h).array() - eps * lp_norm(mm.h, norms.p());
            if (s.minCoeff() >= -tol && s.maxCoeff() > tol) flag(mm.h);
        }
    }
    ns.hbar_dual = dual_vector(ns.hbar, norms.p());
    fill_perp_bases(ns, nd, norms);
    return ns;
}

inline std::vector<Maximin> all_maximins(const MarketModel& m, const NormPair& norms, const ArbitrageOptions& opt) {
    const auto& internal = m.internal_nodes();
    std::vector<Maximin> out(internal.size());
    parallel_for(internal.size(), [&](std::size_t i) { out[i] = maximin(node_data(m, internal[i]).X, norms, opt); });
    return out;
}

inline MarketStructure structure_from(const MarketModel& m, const std::vector<Maximin>& mms, double eps,
                                      const NormPair& norms, const ArbitrageOptions& opt) {
    MarketStructure out;
    out.eps = eps;
    out.norms = norms;
    out.nodes.resize(m.size());
    const auto& internal = m.internal_nodes();
    parallel_for(internal.size(), [&](std::size_t i) {
        const int v = internal[i];
        out.nodes[v] = analyze_node(m, v, node_data(m, v), mms[i], eps, norms, opt);
    });
    return out;
}

inline ArbitrageReport report_from(const MarketModel& m, const MarketStructure& st) {
    ArbitrageReport rep;
    rep.eps = st.eps;
    rep.certificate = Strategy::zero(m);
    rep.slacks.assign(m.num_leaves(), 0.0);
    // Certify at the node whose one-step certificate has the largest smallest slack.
    double best = -kInf;
    for (int v : m.internal_nodes()) {
        const NodeStructure& ns = st.nodes[v];
        if (!ns.strict_arbitrage_here) continue;
        const NodeData nd = node_data(m, v);
        const double cost = st.eps * lp_norm(ns.certificate, st.norms.p());
        const double margin = (nd.X * ns.certificate).minCoeff() - cost;
        if (margin > best) {
            best = margin;
            rep.node = v;
        }
    }
    if (rep.node < 0) return rep;
    rep.status = ArbitrageStatus::strict_arbitrage;
    rep.certificate.at(rep.node) = st.nodes[rep.node].certificate;
    const auto g = gain(m, rep.certificate);
    const auto c = strategy_cost(m, rep.certificate, st.norms);
    const Node& n = m.node(rep.node);
    rep.margin = kInf;
    for (std::size_t k = 0; k < m.num_leaves(); ++k) {
        rep.slacks[k] = g[k] - st.eps * c[k];
        rep.optimum += rep.slacks[k];
        if (static_cast<int>(k) >= n.leaf_begin && static_cast<int>(k) < n.leaf_end)
            rep.margin = std::min(rep.margin, rep.slacks[k]);
    }
    return rep;
}

inline void check_level(double eps) {
    if (!(eps >= 0.0) || !std::isfinite(eps)) throw InputError("epsilon must be a finite non-negative number");
}

}  // namespace detail

/**
 * Per-node geometry at level eps: hbar, its dual vector and the F-perp bases.
 *
 * For p > 1 and eps > 0, hbar is the normalized minimizer of |h|_p over
 * {h : h . dS(w) = eps for all children w} when that minimum equals 1, and zero
 * otherwise. For p = 1 hbar is a support-maximal element of the cone
 * {h : h . dS(w) >= eps |h|_1}. At eps = 0 hbar is zero.
 */
inline MarketStructure compute_node_structure(const MarketModel& m, double eps, const NormPair& norms,
                                              const ArbitrageOptions& opt = {}) {
    require_valid(m);
    detail::check_level(eps);
    return detail::structure_from(m, detail::all_maximins(m, norms, opt), eps, norms, opt);
}

/// Strict eps-arbitrage exists iff some node admits a one-step one; the certificate is that step.
inline ArbitrageReport detect_strict_arbitrage(const MarketModel& m, double eps, const NormPair& norms,
                                               const ArbitrageOptions& opt = {}) {
    return detail::report_from(m, compute_node_structure(m, eps, norms, opt));
}

/// dist_q(0, conv{dS(children)}) for every internal node, indexed by node.
inline std::vector<double> node_critical_values(const MarketModel& m, const NormPair& norms,
                                                const ArbitrageOptions& opt = {}) {
    require_valid(m);
    const auto mms = detail::all_maximins(m, norms, opt);
    std::vector<double> out(m.size(), 0.0);
    for (std::size_t i = 0; i < mms.size(); ++i) out[m.internal_nodes()[i]] = std::max(0.0, mms[i].value);
    return out;
}

struct CurvePoint {
    double x = 0.0;      // eps for the primal curve, eta for the dual curve
    double value = 0.0;  // 1 if strict arbitrage at eps (primal), dual value (dual)
};

struct CriticalValueResult {
    double epsilon_P = 0.0;
    double primal = 0.0;   // bisection limit
    double dual = 0.0;     // dual value at the smallest eta
    std::vector<CurvePoint> primal_curve;
    std::vector<CurvePoint> dual_curve;
    bool discrepancy = false;
    std::string discrepancy_report;
    int worst_node = -1;
};

struct CriticalValueOptions {
    ArbitrageOptions arb;
    std::vector<double> etas{1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9};
    int max_bisection = 200;
};

namespace detail {

// min |sum lambda_w x_w|_q over lambda >= eta pi, sum lambda = 1.
inline double measure_side_value(const NodeData& nd, double eta, const NormPair& norms, const ConeOptions& copt) {
    const int k = static_cast<int>(nd.X.rows()), d = static_cast<int>(nd.X.cols());
    LinearProgram lp(k + 1);
    lp.objective[k] = 1.0;
    for (int w = 0; w < k; ++w) lp.lower[w] = eta * nd.pi[w];
    Vec r = Vec::Zero(k + 1);
    r.head(k).setOnes();
    lp.add_row(r, Sense::eq, 1.0);
    NormConeProgram prog(lp);
    Mat M = Mat::Zero(d, k + 1);
    M.leftCols(k) = nd.X.transpose();
    Vec a = Vec::Zero(k + 1);
    a[k] = 1.0;
    prog.add_cone({M, norms.q(), a, 0.0});
    const ConeResult res = prog.solve(copt);
    if (!res.optimal()) throw SolverError(std::string("dual critical-value program failed: ") + to_string(res.status));
    return lp_norm(M * res.x, norms.q());
}

}  // namespace detail

/**
 * Critical value eps(P) from both sides.
 *
 * Primal: bisection on eps over the strict-arbitrage detector. Dual: for each eta
 * in the sweep, the largest over nodes of the smallest q-norm of a conditional
 * drift under kernels bounded below by eta times the reference kernel.
 */
inline CriticalValueResult critical_value(const MarketModel& m, const NormPair& norms,
                                          const CriticalValueOptions& opt = {}) {
    require_valid(m);
    const auto mms = detail::all_maximins(m, norms, opt.arb);
    const double tol = detail::abs_tol(m, opt.arb);
    CriticalValueResult out;

    auto arbitrage_at = [&](double eps) {
        const bool found = detail::structure_from(m, mms, eps, norms, opt.arb).any_strict();
        out.primal_curve.push_back({eps, found ? 1.0 : 0.0});
        return found;
    };
    double lo = 0.0, hi = 0.0;
    for (const auto& mm : mms) hi = std::max(hi, mm.value);
    hi = 2.0 * hi + tol;
    if (!arbitrage_at(0.0)) {
        hi = 0.0;
    } else {
        for (int it = 0; it < 64 && arbitrage_at(hi); ++it) {
            lo = hi;
            hi *= 2.0;
        }
        for (int it = 0; it < opt.max_bisection && hi - lo > 0.1 * tol; ++it) {
            const double mid = 0.5 * (lo + hi);
            if (arbitrage_at(mid)) lo = mid;
            else hi = mid;
        }
    }
    out.primal = hi;

    const auto& internal = m.internal_nodes();
    for (double eta : opt.etas) {
        std::vector<double> vals(internal.size());
        parallel_for(internal.size(), [&](std::size_t i) {
            vals[i] = detail::measure_side_value(detail::node_data(m, internal[i]), eta, norms, opt.arb.cone);
        });
        double best = 0.0;
        for (std::size_t i = 0; i < vals.size(); ++i)
            if (vals[i] > best) {
                best = vals[i];
                out.worst_node = internal[i];
            }
        out.dual_curve.push_back({eta, best});
    }
    out.dual = out.dual_curve.empty() ? out.primal : out.dual_curve.back().value;
    out.epsilon_P = out.primal;
    const double allowed = 10.0 * tol;
    if (std::abs(out.primal - out.dual) > allowed) {
        out.discrepancy = true;
        out.discrepancy_report = "primal " + detail::fmt_num(out.primal) + " and dual " + detail::fmt_num(out.dual) +
                                 " differ by more than " + detail::fmt_num(allowed);
    }
    return out;
}

/// H_t = a_t hbar_t + G_t + Gtilde_t per internal node.
struct CanonicalDecomposition {
    std::vector<double> a;
    std::vector<Vec> G;       // in F-perp ∩ E0-perp
    std::vector<Vec> Gtilde;  // in F-perp ∩ E0
};

/**
 * Splits H node-wise along hbar and the two F-perp subspaces.
 *
 * H must vanish where hbar does and, for p = 1, be supported inside supp(hbar).
 */
inline CanonicalDecomposition canonical_decompose(const MarketModel& m, const MarketStructure& st, const Strategy& H,
                                                  double tol = 1e-9) {
    check_strategy(m, H);
    CanonicalDecomposition out;
    out.a.assign(m.size(), 0.0);
    out.G.assign(m.size(), Vec());
    out.Gtilde.assign(m.size(), Vec());
    const double scale = 1.0 + [&] {
        double s = 0.0;
        for (int v : m.internal_nodes()) s = std::max(s, H.at(v).cwiseAbs().maxCoeff());
        return s;
    }();
    for (int v : m.internal_nodes()) {
        const NodeStructure& ns = st.nodes[v];
        const Vec& h = H.at(v);
        const std::string where = "strategy at node '" + m.node(v).id + "'";
        if (!ns.active()) {
            if (h.cwiseAbs().maxCoeff() > tol * scale)
                throw InputError(where + " is non-zero where hbar vanishes");
            out.G[v] = Vec::Zero(m.dim());
            out.Gtilde[v] = Vec::Zero(m.dim());
            continue;
        }
        if (st.norms.is_l1())
            for (Eigen::Index i = 0; i < h.size(); ++i)
                if (ns.hbar[i] == 0.0 && std::abs(h[i]) > tol * scale)
                    throw InputError(where + " leaves the support of hbar in coordinate " + std::to_string(i));
        out.a[v] = ns.hbar_dual.dot(h);
        const Vec R = h - out.a[v] * ns.hbar;
        out.Gtilde[v] = ns.perp_null * (ns.perp_null.transpose() * R);
        out.G[v] = R - out.Gtilde[v];
    }
    return out;
}

inline CanonicalDecomposition canonical_decompose(const MarketModel& m, double eps, const NormPair& norms,
                                                  const Strategy& H, const ArbitrageOptions& opt = {}) {
    return canonical_decompose(m, compute_node_structure(m, eps, norms, opt), H);
}

struct NaPrimeReport {
    bool holds = true;
    bool no_strict_arbitrage = true;   // condition (1)
    bool perp_no_arbitrage = true;     // condition (2)
    ArbitrageReport strict;
    int witness_node = -1;
    Vec witness;                       // g in F-perp with g . dS >= 0, unit p-norm
    double witness_gain = 0.0;         // sum_w P(w|v) g . dS(w)
};

/**
 * NA'_eps, localized: no one-step strict eps-arbitrage, and at every node no
 * classical arbitrage g in F-perp.
 */
inline NaPrimeReport check_na_prime(const MarketModel& m, const MarketStructure& st, const ArbitrageOptions& opt = {}) {
    NaPrimeReport out;
    out.strict = detail::report_from(m, st);
    out.no_strict_arbitrage = !out.strict.found();
    const double tol = detail::abs_tol(m, opt);
    for (int v : m.internal_nodes()) {
        const NodeStructure& ns = st.nodes[v];
        if (!ns.active()) continue;
        const Mat B = ns.perp();
        if (B.cols() == 0) continue;
        const detail::NodeData nd = detail::node_data(m, v);
        const Mat XB = nd.X * B;
        LinearProgram lp(static_cast<int>(B.cols()));
        lp.maximize = true;
        lp.lower.setConstant(-1.0);
        lp.upper.setConstant(1.0);
        lp.objective = XB.transpose() * nd.pi;
        for (Eigen::Index w = 0; w < XB.rows(); ++w) lp.add_row(Vec(XB.row(w).transpose()), Sense::ge, 0.0);
        const LpResult res = solve_lp(lp, opt.cone.lp);
        if (!res.optimal()) throw SolverError(std::string("NA' LP failed: ") + to_string(res.status));
        if (res.value > tol && res.value > out.witness_gain) {
            Vec g = B * res.x;
            const double n = lp_norm(g, st.norms.p());
            out.perp_no_arbitrage = false;
            out.witness_node = v;
            out.witness = g / n;
            out.witness_gain = res.value / n;
        }
    }
    out.holds = out.no_strict_arbitrage && out.perp_no_arbitrage;
    return out;
}

inline NaPrimeReport check_na_prime(const MarketModel& m, double eps, const NormPair& norms,
                                    const ArbitrageOptions& opt = {}) {
    return check_na_prime(m, compute_node_structure(m, eps, norms, opt), opt);
}

}  // namespace epsarb
