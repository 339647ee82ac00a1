#pragma once

#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "epsarb/adapted.hpp"
#include "epsarb/arbitrage.hpp"
#include "epsarb/pricing.hpp"

namespace epsarb {

/**
 * Claim written on the whole path. The functional receives the increments
 * (X_0, X_1 - X_0, ..., X_T - X_{T-1}) and must satisfy
 * |f(y) - f(x)| <= lipschitz * sum_t |dy_t - dx_t|_q.
 */
struct PathPayoff {
    std::function<double(const std::vector<Vec>&)> f;
    double lipschitz = 0.0;
};

/// Claim max(sum_t c_t . dX_t - strike, 0), or the plain linear form when !call.
inline PathPayoff linear_path_payoff(std::vector<Vec> coeffs, double strike, bool call, const NormPair& norms) {
    double L = 0.0;
    for (const Vec& c : coeffs) L = std::max(L, lp_norm(c, norms.p()));
    PathPayoff out;
    out.lipschitz = L;
    out.f = [coeffs = std::move(coeffs), strike, call](const std::vector<Vec>& inc) {
        if (inc.size() != coeffs.size()) throw InputError("path payoff expects " + std::to_string(coeffs.size()) + " dates");
        double s = -strike;
        for (std::size_t t = 0; t < inc.size(); ++t) s += coeffs[t].dot(inc[t]);
        return call ? std::max(s, 0.0) : s;
    };
    return out;
}

/// Leaf values of a path functional.
inline Payoff evaluate_path_payoff(const MarketModel& m, const PathPayoff& psi) {
    Payoff out;
    out.values.reserve(m.num_leaves());
    for (int leaf : m.leaves()) {
        std::vector<Vec> inc;
        for (int v : m.path_to(leaf)) inc.push_back(m.increment(v));
        out.values.push_back(psi.f(inc));
    }
    return out;
}

struct StabilityCheck {
    std::string name;
    bool applicable = false;
    bool holds = true;
    double slack = std::numeric_limits<double>::infinity();
    // Same inequality with the distance computed without the t = 0 term.
    double slack_without_t0 = std::numeric_limits<double>::infinity();
    std::string detail;
};

struct StabilityReport {
    double distance = 0.0;              // the distance used by the checks
    double distance_with_t0 = 0.0;
    double distance_without_t0 = 0.0;
    bool include_t0 = true;
    double eps = 0.0;
    double eps_P = 0.0;
    double eps_P_prime = 0.0;
    bool canonicalized = false;          // an input had sibling nodes with equal prices
    bool emm_P = false;
    bool emm_P_prime = false;            // at eps + distance
    std::optional<MeasureWeights> transported;
    double transported_deviation = std::numeric_limits<double>::quiet_NaN();
    std::optional<PriceInterval> range_P;
    std::optional<PriceInterval> range_P_prime;
    double price_eps_prime = 0.0;        // eps + max(L, 1) * distance
    std::vector<StabilityCheck> checks;

    bool all_hold() const {
        for (const auto& c : checks)
            if (c.applicable && !c.holds) return false;
        return true;
    }
};

struct StabilityOptions {
    bool include_t0 = true;
    double tol = 1e-8;
    PricingOptions pricing;
};

namespace detail {

inline double max_node_critical(const MarketModel& m, const NormPair& norms, const ArbitrageOptions& opt) {
    double e = 0.0;
    for (double v : node_critical_values(m, norms, opt)) e = std::max(e, v);
    return e;
}

/// Second marginal of pi^x(dy) Q(dx), where pi is a coupling of P and P'.
inline MeasureWeights transport_measure(const PathLaw& P, const PathLaw& Pp, const BicausalCoupling& pi,
                                        const MeasureWeights& q) {
    std::vector<double> w(Pp.num_leaves(), 0.0);
    for (const auto& e : pi.flatten()) {
        const int kx = P.leaf_position(e.x_leaf);
        const int ky = Pp.leaf_position(e.y_leaf);
        w[ky] += q.weights[kx] * e.mass / P.leaf_prob(kx);
    }
    double s = 0.0;
    for (double x : w) s += x;
    for (double& x : w) x /= s;
    return MeasureWeights::from(std::move(w));
}

inline double max_drift(const MarketModel& m, const MeasureWeights& q, const NormPair& norms) {
    const auto cm = conditional_mean_increments(m, q);
    double out = 0.0;
    for (int v : m.internal_nodes())
        if (!cm.degenerate[v]) out = std::max(out, lp_norm(cm.mean[v], norms.q()));
    return out;
}

}  // namespace detail

/**
 * Checks the three stability inequalities between P and P' at level eps:
 * existence of eps-martingale measures moves by at most the adapted distance D,
 * the critical value is D-Lipschitz, and fair prices of an L-Lipschitz claim
 * stay fair at eps + max(L, 1) D when p > 1.
 *
 * Both inputs are first reduced to their natural filtration (see canonicalize).
 */
inline StabilityReport stability_report(const PathLaw& P0, const PathLaw& Pp0, double eps, const NormPair& norms,
                                        const std::optional<PathPayoff>& psi = std::nullopt,
                                        const StabilityOptions& opt = {}) {
    if (!(eps >= 0.0) || !std::isfinite(eps)) throw InputError("epsilon must be finite and non-negative");
    require_valid(P0);
    require_valid(Pp0);
    detail::check_pair(P0, Pp0);
    const PathLaw P = canonicalize(P0);
    const PathLaw Pp = canonicalize(Pp0);
    const ArbitrageOptions& aopt = opt.pricing.arb;

    StabilityReport rep;
    rep.eps = eps;
    rep.include_t0 = opt.include_t0;
    rep.canonicalized = P.size() != P0.size() || Pp.size() != Pp0.size();

    const AdaptedResult with_t0 = aw_inf_delta(P, Pp, norms.q(), true);
    const AdaptedResult without_t0 = aw_inf_delta(P, Pp, norms.q(), false);
    rep.distance_with_t0 = with_t0.value;
    rep.distance_without_t0 = without_t0.value;
    const AdaptedResult& used = opt.include_t0 ? with_t0 : without_t0;
    const double D = used.value;
    rep.distance = D;

    rep.eps_P = detail::max_node_critical(P, norms, aopt);
    rep.eps_P_prime = detail::max_node_critical(Pp, norms, aopt);

    // (i) eps-martingale measures
    StabilityCheck emm;
    emm.name = "emm_continuity";
    const EmmResult q = find_eps_martingale_measure(P, eps, norms, opt.pricing.eta, opt.pricing);
    rep.emm_P = q.feasible;
    if (q.feasible) {
        emm.applicable = true;
        rep.emm_P_prime = find_eps_martingale_measure(Pp, eps + D, norms, opt.pricing.eta, opt.pricing).feasible;
        const MeasureWeights qp = detail::transport_measure(P, Pp, used.coupling, q.measure);
        rep.transported_deviation = detail::max_drift(Pp, qp, norms);
        const bool witness = qp.equivalent && rep.transported_deviation <= eps + D + opt.tol;
        rep.transported = qp;
        emm.holds = rep.emm_P_prime || witness;
        emm.slack = eps + D - rep.transported_deviation;
        const MeasureWeights qp0 = detail::transport_measure(P, Pp, without_t0.coupling, q.measure);
        emm.slack_without_t0 = eps + rep.distance_without_t0 -
                               detail::max_drift(Pp, qp0, norms);
        emm.detail = witness ? "transported measure is a witness" : "transported measure deviation exceeds eps + D";
    } else {
        emm.detail = "no eps-martingale measure under P";
    }
    rep.checks.push_back(emm);

    // (ii) critical values
    StabilityCheck crit;
    crit.name = "critical_value";
    crit.applicable = true;
    const double diff = std::abs(rep.eps_P - rep.eps_P_prime);
    crit.slack = D - diff;
    crit.slack_without_t0 = rep.distance_without_t0 - diff;
    crit.holds = crit.slack >= -opt.tol;
    rep.checks.push_back(crit);

    // (iii) fair prices
    StabilityCheck price;
    price.name = "fair_price_containment";
    if (!psi) {
        price.detail = "no payoff supplied";
    } else if (norms.is_l1()) {
        price.detail = "requires p > 1";
    } else if (!q.feasible) {
        price.detail = "no eps-fair prices under P";
    } else {
        price.applicable = true;
        const double L = std::max(psi->lipschitz, 1.0);
        rep.price_eps_prime = eps + L * D;
        const PriceInterval a = fair_price_range(P, eps, norms, evaluate_path_payoff(P, *psi), opt.pricing);
        rep.range_P = a;
        try {
            const PriceInterval b =
                fair_price_range(Pp, rep.price_eps_prime, norms, evaluate_path_payoff(Pp, *psi), opt.pricing);
            rep.range_P_prime = b;
            price.slack = std::min(a.lower - b.lower, b.upper - a.upper);
            const double scale = 1.0 + std::abs(a.lower) + std::abs(a.upper);
            price.holds = price.slack >= -opt.tol * scale;
        } catch (const DomainError& e) {
            price.holds = false;
            price.slack = -std::numeric_limits<double>::infinity();
            price.detail = e.what();
        }
        const double eps0 = eps + L * rep.distance_without_t0;
        try {
            const PriceInterval b0 = fair_price_range(Pp, eps0, norms, evaluate_path_payoff(Pp, *psi), opt.pricing);
            price.slack_without_t0 = std::min(a.lower - b0.lower, b0.upper - a.upper);
        } catch (const DomainError&) {
            price.slack_without_t0 = -std::numeric_limits<double>::infinity();
        }
    }
    rep.checks.push_back(price);
    return rep;
}

}  // namespace epsarb
