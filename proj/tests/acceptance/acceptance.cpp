#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "epsarb/epsarb.hpp"
#include "support/fixtures.hpp"
#include "support/oracles.hpp"
#include "support/random_markets.hpp"

using namespace epsarb;
using namespace epsarb::testing;

namespace {

struct Outcome {
    bool ok = true;
    std::ostringstream detail;

    void require(bool cond, const std::string& what) {
        if (!cond && ok) detail << "violated: " << what << "; ";
        ok = ok && cond;
    }
};

struct Criterion {
    int id;
    std::string name;
    double time_limit;  // seconds, <= 0 for none
    std::function<void(Outcome&)> body;
};

io::MarketFile load(const std::string& name) { return io::load_market(data_path(name)); }

double top_value(const MarketModel& m, const NormPair& np) {
    const auto cv = node_critical_values(m, np);
    return *std::max_element(cv.begin(), cv.end());
}

Payoff random_payoff(const MarketModel& m, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    Payoff f;
    for (std::size_t k = 0; k < m.num_leaves(); ++k) f.values.push_back(u(rng));
    return f;
}

void nostrictarb(Outcome& o) {
    const auto f = load("nostrictarb.json");
    const MarketModel& m = f.market;
    const double eps = f.eps;
    const NormPair np(2.0);
    o.require(!detect_strict_arbitrage(m, eps, np).found(), "no strict arbitrage at eps");
    const ArbitrageReport half = detect_strict_arbitrage(m, eps / 2.0, np);
    o.require(half.found(), "certificate at eps/2");
    if (half.found()) {
        const double n = lp_norm(half.certificate.at(m.roots()[0]), np.p());
        double worst = kInf;
        for (double s : half.slacks) worst = std::min(worst, s / n);
        o.detail << "slack per unit norm " << worst << "; ";
        o.require(worst >= eps / 2.0 - 1e-8, "slack >= eps/2 - 1e-8");
    }
    const NaPrimeReport na = check_na_prime(m, eps, np);
    o.require(!na.holds, "NA' fails");
    o.require(na.witness.size() == 2 && std::abs(na.witness[0]) <= 1e-8 * na.witness.norm() && na.witness.norm() > 0.0,
              "witness proportional to e2");
}

void nsaem(Outcome& o) {
    const auto f = load("nsaem.json");
    for (double eta : {1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9})
        o.require(!find_eps_martingale_measure(f.market, f.eps, NormPair(2.0), eta).feasible,
                  "infeasible at eta " + std::to_string(eta));
}

void kbar(Outcome& o) {
    const auto f = load("kbar_market.json");
    const NormPair np(2.0);
    const double cv = critical_value(f.market, np).epsilon_P;
    o.detail << "critical value " << cv << "; ";
    o.require(std::abs(cv - f.eps) <= 1e-5, "critical value = eps within 1e-5");
    const EmmResult r = find_eps_martingale_measure(f.market, f.eps, np, 1e-7);
    o.require(r.feasible, "measure found");
    if (r.feasible) {
        for (double w : r.measure.weights) o.require(std::abs(w - 0.5) <= 1e-8, "uniform measure");
        o.detail << "deviation " << r.deviation << "; ";
        o.require(std::abs(r.deviation - f.eps) <= 1e-8, "deviation = eps within 1e-8");
    }
}

void price_range(Outcome& o) {
    const auto f = load("price_range.json");
    const MarketModel& m = f.market;
    const NormPair np(2.0);
    const Payoff psi = io::payoff_from_json(m, io::load_json(data_path("psi.json")));
    const PriceBound sup = robust_price_bound(m, f.eps, np, psi, Direction::sup);
    const PriceBound inf = robust_price_bound(m, f.eps, np, psi, Direction::inf);
    o.detail << "sup " << sup.value << (sup.attained ? " attained" : " not attained") << ", inf " << inf.value
             << (inf.attained ? " attained" : " not attained") << "; ";
    o.require(std::abs(sup.value - 0.5) <= 1e-6 && sup.attained, "sup = 0.5 attained");
    o.require(std::abs(inf.value) <= 1e-6 && !inf.attained, "inf = 0 not attained");
    const PriceInterval r = fair_price_range(m, f.eps, np, psi);
    o.detail << (r.lo_open() ? "(" : "[") << r.lower << ", " << r.upper << (r.hi_open() ? ")" : "]") << "; ";
    o.require(std::abs(r.lower + f.eps) <= 1e-6 && std::abs(r.upper - 0.5 - f.eps) <= 1e-6, "range (-eps, 1/2 + eps]");
    o.require(r.lo_open() && !r.hi_open(), "openness flags");
}

void duality(Outcome& o) {
    std::mt19937_64 rng(501);
    std::uniform_real_distribution<double> factor(1.05, 2.0);
    double worst = 0.0;
    int cases = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const MarketModel m = random_market(rng);
        for (double p : {1.0, 2.0}) {
            const NormPair np(p);
            const double eps = factor(rng) * top_value(m, np) + 0.01;
            const Payoff psi = random_payoff(m, rng);
            const SuperhedgeResult primal = superhedge_price(m, eps, np, psi);
            const PriceBound dual = robust_price_bound(m, eps, np, psi, Direction::sup);
            const double gap = std::abs(primal.certificate.x - dual.value) / (1.0 + std::abs(dual.value));
            worst = std::max(worst, gap);
            ++cases;
            o.require(gap <= 1e-5, "gap on trial " + std::to_string(trial) + " p=" + std::to_string(p));
        }
    }
    o.detail << cases << " cases, worst relative gap " << worst << "; ";
}

void ftap(Outcome& o) {
    std::mt19937_64 rng(601);
    int cases = 0, agree = 0;
    for (int trial = 0; trial < 100; ++trial) {
        const MarketModel m = random_market(rng);
        for (double p : {1.0, 2.0}) {
            const NormPair np(p);
            const double top = top_value(m, np);
            for (double f : {0.0, 0.3, 0.7, 0.95, 0.999, 1.001, 1.05, 1.5, 3.0}) {
                const double eps = f * top;
                if (std::abs(eps - top) <= 1e-4) continue;
                const MarketStructure st = compute_node_structure(m, eps, np);
                const bool na = check_na_prime(m, st).holds;
                const bool emm = find_eps_martingale_measure(m, st, 1e-7).feasible;
                ++cases;
                agree += na == emm;
                o.require(na == emm, "trial " + std::to_string(trial) + " p=" + std::to_string(p) + " f=" + std::to_string(f));
            }
        }
    }
    o.detail << agree << "/" << cases << " agree; ";
}

void kr_example(Outcome& o) {
    const PathLaw P = load("kr_p.json").market, Q = load("kr_pprime.json").market;
    const double kr = coupling_esssup(P, Q, knothe_rosenblatt(P, Q), {2.0, CostVariant::levels, true});
    const double aw = aw_inf(P, Q).value;
    const double e = elog_divergence(P, Q, 2.0, 200.0).value;
    o.detail << "KR cost " << kr << ", aw " << aw << ", elog(200) " << e << "; ";
    o.require(kr == 5.0, "KR cost = 5");
    o.require(aw == 4.0, "aw = 4");
    o.require(e >= 3.95 && e <= 4.0, "elog in [3.95, 4]");
}

void counterexamples(Outcome& o) {
    const PathLaw P0 = load("p0.json").market, Pe = load("peps.json").market;
    const double eps = 0.25;  // time-0 offset in peps.json
    const double d = aw_inf_delta(P0, Pe).value;
    const double w = w_inf(P0, Pe, 2.0, CostVariant::increments).value;
    const double c = aw_inf_delta(load("closing_p.json").market, load("closing_pprime.json").market).value;
    o.detail << "aw_delta " << d << ", non-causal " << w << ", closing " << c << "; ";
    o.require(std::abs(d - 2.0) <= 1e-10, "aw_delta = 2");
    o.require(std::abs(w - 2.0 * eps) <= 1e-10, "non-causal = 2 eps");
    o.require(std::abs(c - 3.5) <= 1e-9, "closing = M + delta");
}

void oracle_equivalence(Outcome& o) {
    std::mt19937_64 rng(901);
    double worst = 0.0;
    for (int trial = 0; trial < 50; ++trial) {
        RandomLawSpec spec;
        spec.integer_grid = trial % 2 == 0;
        const auto [P, Q] = random_law_pair(rng, spec);
        const double diffs[] = {
            std::abs(aw_inf_delta(P, Q).value - oracle_bottleneck(P, Q, 2.0, true)),
            std::abs(aw_inf(P, Q).value - oracle_bottleneck(P, Q, 2.0, false)),
            std::abs(elog_divergence(P, Q, 2.0, 1.0).value - oracle_elog(P, Q, 2.0, 1.0, false)),
            std::abs(elog_divergence(P, Q, 2.0, 4.0, CostVariant::increments).value - oracle_elog(P, Q, 2.0, 4.0, true)),
        };
        for (double x : diffs) {
            worst = std::max(worst, x);
            o.require(x <= 1e-8, "pair " + std::to_string(trial));
        }
    }
    o.detail << "worst difference " << worst << "; ";
}

void stability(Outcome& o) {
    std::mt19937_64 rng(1001);
    std::uniform_real_distribution<double> u(0.0, 1.0), coef(-1.0, 1.0);
    RandomMarketSpec spec;
    spec.max_horizon = 2;
    spec.max_branch = 2;
    spec.max_leaves = 4;
    const NormPair np(2.0);
    double worst = kInf;
    int checks = 0;
    for (int trial = 0; trial < 200; ++trial) {
        const MarketModel P = random_market(rng, spec);
        const MarketModel Pp = perturb_market(P, rng, 0.3 * u(rng));
        const double eps = top_value(P, np) + 0.05 + 0.5 * u(rng);
        std::vector<Vec> cs;
        for (int t = 0; t <= P.horizon(); ++t) {
            Vec c(P.dim());
            for (int i = 0; i < P.dim(); ++i) c[i] = coef(rng);
            cs.push_back(c);
        }
        const StabilityReport r = stability_report(P, Pp, eps, np, linear_path_payoff(cs, 0.1 * coef(rng), true, np));
        for (const auto& c : r.checks) {
            if (!c.applicable) continue;
            ++checks;
            worst = std::min(worst, c.slack);
            o.require(c.holds && c.slack >= -1e-8, c.name + " on pair " + std::to_string(trial));
        }
    }
    o.detail << checks << " inequalities, smallest slack " << worst << "; ";
}

void laplace_gibbs(Outcome& o) {
    std::mt19937_64 rng(1101);
    std::uniform_real_distribution<double> val(-3.0, 3.0), w(0.05, 1.0), lam(0.1, 50.0);
    double worst_gibbs = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 1 + trial % 7;
        std::vector<double> v(n), p(n);
        double s = 0.0;
        for (int i = 0; i < n; ++i) {
            v[i] = val(rng);
            s += (p[i] = w(rng));
        }
        for (double& x : p) x /= s;
        const double lambda = lam(rng);
        const double value = laplace_smoothed_esssup(v, p, lambda);
        const double top = *std::max_element(v.begin(), v.end());
        double z = 0.0, mean = 0.0, kl = 0.0;
        for (int i = 0; i < n; ++i) z += p[i] * std::exp(lambda * (v[i] - top));
        for (int i = 0; i < n; ++i) {
            const double pt = p[i] * std::exp(lambda * (v[i] - top)) / z;
            mean += pt * v[i];
            if (pt > 0.0) kl += pt * std::log(pt / p[i]);
        }
        worst_gibbs = std::max(worst_gibbs, std::abs(value - (mean - kl / lambda)));
        const double pmin = *std::min_element(p.begin(), p.end());
        o.require(top + std::log(pmin) / lambda <= value && value <= top, "finite-support sandwich");
    }
    o.require(worst_gibbs <= 1e-10, "tilting identity");
    std::mt19937_64 lr(1102);
    for (int trial = 0; trial < 50; ++trial) {
        const auto [P, Q] = random_law_pair(lr);
        double prev = -kInf;
        for (double lambda : {0.5, 1.0, 5.0, 25.0, 125.0}) {
            const double e = elog_divergence(P, Q, 2.0, lambda).value;
            o.require(e >= prev - 1e-12, "elog monotone on pair " + std::to_string(trial));
            prev = e;
        }
    }
    o.detail << "worst tilting error " << worst_gibbs << "; ";
}

void empirical_trend(Outcome& o) {
    const PathLaw P = load("four_atom.json").market;
    const auto probs = P.leaf_probabilities();
    const int T = P.horizon();
    for (double lambda : {1.0, 5.0}) {
        double prev = kInf;
        o.detail << "lambda " << lambda << " medians";
        for (std::size_t N : {64, 256, 1024}) {
            std::vector<double> v;
            for (std::uint64_t seed = 0; seed < 20; ++seed) {
                std::mt19937_64 rng(seed);
                std::discrete_distribution<int> pick(probs.begin(), probs.end());
                std::vector<std::vector<double>> samples;
                for (std::size_t s = 0; s < N; ++s) {
                    std::vector<double> row;
                    for (int node : P.path_to(P.leaves()[pick(rng)])) row.push_back(P.node(node).prices[0]);
                    samples.push_back(std::move(row));
                }
                v.push_back(elog_divergence(adapted_empirical(samples, T, 1), P, 2.0, lambda).value);
            }
            std::sort(v.begin(), v.end());
            const double med = 0.5 * (v[9] + v[10]);
            o.detail << " " << med;
            o.require(med <= prev, "median non-increasing at N = " + std::to_string(N));
            prev = med;
        }
        o.detail << "; ";
        o.require(prev < 0.1, "median below 0.1 at N = 1024");
    }
}

}  // namespace

int main() {
    const std::vector<Criterion> criteria{
        {1, "no strict eps-arbitrage but NA' fails", 1.0, nostrictarb},
        {2, "no equivalent eps-martingale measure", 1.0, nsaem},
        {3, "critical value market with uniform measure", 0.0, kbar},
        {4, "half-open fair price range", 0.0, price_range},
        {5, "superhedging duality battery", 60.0, duality},
        {6, "FTAP equivalence battery", 0.0, ftap},
        {7, "Knothe-Rosenblatt example", 0.0, kr_example},
        {8, "adapted distance counterexamples", 0.0, counterexamples},
        {9, "bicausal oracle equivalence", 0.0, oracle_equivalence},
        {10, "stability battery", 0.0, stability},
        {11, "Laplace and Gibbs invariants", 0.0, laplace_gibbs},
        {12, "adapted empirical trend", 120.0, empirical_trend},
    };
    int failed = 0;
    for (const auto& c : criteria) {
        Outcome o;
        o.detail.precision(10);
        const auto t0 = std::chrono::steady_clock::now();
        try {
            c.body(o);
        } catch (const std::exception& e) {
            o.ok = false;
            o.detail << "exception: " << e.what() << "; ";
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (c.time_limit > 0.0 && secs >= c.time_limit) {
            o.ok = false;
            o.detail << "runtime over " << c.time_limit << " s; ";
        }
        failed += !o.ok;
        std::printf("%s %2d %s: %s%.2f s\n", o.ok ? "PASS" : "FAIL", c.id, c.name.c_str(), o.detail.str().c_str(), secs);
        std::fflush(stdout);
    }
    std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failed, criteria.size());
    return failed == 0 ? 0 : 1;
}
