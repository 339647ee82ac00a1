#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "epsarb/market.hpp"
#include "epsarb/parallel.hpp"
#include "epsarb/transport.hpp"

namespace epsarb {

/// Stage cost between matched nodes: increments |dX - dY|_q or levels |X - Y|_q.
enum class CostVariant { increments, levels };

inline const char* to_string(CostVariant v) { return v == CostVariant::increments ? "delta" : "plain"; }

struct CouplingEntry {
    int x = -1;          // child node in the first law
    int y = -1;          // child node in the second law
    double mass = 0.0;   // conditional on the parent pair
};

struct LeafPairMass {
    int x_leaf = -1;  // node index
    int y_leaf = -1;
    double mass = 0.0;
};

/**
 * Bicausal coupling stored as one conditional plan per matched node pair.
 *
 * The key (-1, -1) is the virtual pair above the time-0 nodes. A plan's row sums
 * are the first law's conditional probabilities and its column sums the second
 * law's, which is what makes the glued coupling causal in both directions.
 */
struct BicausalCoupling {
    std::map<std::pair<int, int>, std::vector<CouplingEntry>> stages;

    const std::vector<CouplingEntry>& stage(int x, int y) const {
        static const std::vector<CouplingEntry> empty;
        auto it = stages.find({x, y});
        return it == stages.end() ? empty : it->second;
    }

    /// Joint law on pairs of leaves.
    std::vector<LeafPairMass> flatten() const {
        std::vector<LeafPairMass> out;
        std::vector<std::tuple<int, int, double>> stack{{-1, -1, 1.0}};
        while (!stack.empty()) {
            auto [x, y, m] = stack.back();
            stack.pop_back();
            auto it = stages.find({x, y});
            if (it == stages.end()) {
                out.push_back({x, y, m});
                continue;
            }
            for (auto e = it->second.rbegin(); e != it->second.rend(); ++e)
                if (e->mass > 0.0) stack.push_back({e->x, e->y, m * e->mass});
        }
        return out;
    }
};

/// Largest deviation of any stage plan from the conditional marginals.
inline double coupling_marginal_error(const PathLaw& P, const PathLaw& Q, const BicausalCoupling& pi) {
    double err = 0.0;
    for (const auto& [key, entries] : pi.stages) {
        const auto& xs = key.first < 0 ? P.roots() : P.node(key.first).children;
        const auto& ys = key.second < 0 ? Q.roots() : Q.node(key.second).children;
        std::map<int, double> row, col;
        for (const auto& e : entries) {
            row[e.x] += e.mass;
            col[e.y] += e.mass;
        }
        for (int x : xs) err = std::max(err, std::abs(row[x] - P.node(x).cond_prob));
        for (int y : ys) err = std::max(err, std::abs(col[y] - Q.node(y).cond_prob));
        if (row.size() != xs.size() || col.size() != ys.size()) err = std::max(err, 1.0);
    }
    return err;
}

namespace detail {

inline double stage_cost(const PathLaw& P, const PathLaw& Q, int x, int y, double q, CostVariant v, bool include_t0) {
    if (!include_t0 && P.node(x).time == 0) return 0.0;
    if (v == CostVariant::levels) return lp_norm(Vec(P.node(x).prices - Q.node(y).prices), q);
    return lp_norm(Vec(P.increment(x) - Q.increment(y)), q);
}

inline void check_pair(const PathLaw& P, const PathLaw& Q) {
    require_valid(P);
    require_valid(Q);
    if (P.horizon() != Q.horizon()) throw InputError("path laws have different horizons");
    if (P.dim() != Q.dim()) throw InputError("path laws have different dimensions");
}

// Nodes of each law grouped by time.
inline std::vector<std::vector<int>> levels_of(const PathLaw& P) {
    std::vector<std::vector<int>> lv(P.horizon() + 1);
    for (std::size_t i = 0; i < P.size(); ++i) lv[P.node(static_cast<int>(i)).time].push_back(static_cast<int>(i));
    return lv;
}

struct StageSolution {
    double value = 0.0;
    Mat plan;
};

// Backward induction over all node pairs of equal time; `stage` maps the
// child-pair matrix of values (cost already combined) to the pair's value.
template <class Combine, class Solve>
double bicausal_dp(const PathLaw& P, const PathLaw& Q, double leaf_value, Combine&& combine, Solve&& solve,
                   BicausalCoupling& coupling) {
    const auto lp = levels_of(P), lq = levels_of(Q);
    const int T = P.horizon();
    std::vector<int> pos_p(P.size()), pos_q(Q.size());
    for (int t = 0; t <= T; ++t) {
        for (std::size_t k = 0; k < lp[t].size(); ++k) pos_p[lp[t][k]] = static_cast<int>(k);
        for (std::size_t k = 0; k < lq[t].size(); ++k) pos_q[lq[t][k]] = static_cast<int>(k);
    }
    // value[t](a, b) for the a-th node of P and b-th node of Q at time t.
    std::vector<Mat> value(T + 1);
    std::vector<std::vector<Mat>> plans(T + 1);
    value[T] = Mat::Constant(static_cast<Eigen::Index>(lp[T].size()), static_cast<Eigen::Index>(lq[T].size()), leaf_value);

    auto build = [&](const std::vector<int>& xs, const std::vector<int>& ys, int t_child) {
        TransportInstance inst;
        inst.cost.resize(static_cast<Eigen::Index>(xs.size()), static_cast<Eigen::Index>(ys.size()));
        inst.source.resize(static_cast<Eigen::Index>(xs.size()));
        inst.target.resize(static_cast<Eigen::Index>(ys.size()));
        for (std::size_t i = 0; i < xs.size(); ++i) inst.source[static_cast<Eigen::Index>(i)] = P.node(xs[i]).cond_prob;
        for (std::size_t j = 0; j < ys.size(); ++j) inst.target[static_cast<Eigen::Index>(j)] = Q.node(ys[j]).cond_prob;
        inst.target *= inst.source.sum() / inst.target.sum();
        for (std::size_t i = 0; i < xs.size(); ++i)
            for (std::size_t j = 0; j < ys.size(); ++j)
                inst.cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                    combine(xs[i], ys[j], value[t_child](pos_p[xs[i]], pos_q[ys[j]]));
        return inst;
    };

    for (int t = T - 1; t >= 0; --t) {
        const Eigen::Index na = static_cast<Eigen::Index>(lp[t].size()), nb = static_cast<Eigen::Index>(lq[t].size());
        value[t] = Mat::Zero(na, nb);
        plans[t].assign(static_cast<std::size_t>(na * nb), Mat());
        parallel_for(static_cast<std::size_t>(na * nb), [&](std::size_t k) {
            const int a = static_cast<int>(k / static_cast<std::size_t>(nb)), b = static_cast<int>(k % static_cast<std::size_t>(nb));
            const int x = lp[t][a], y = lq[t][b];
            const StageSolution s = solve(build(P.node(x).children, Q.node(y).children, t + 1));
            value[t](a, b) = s.value;
            plans[t][k] = s.plan;
        });
    }
    const StageSolution root = solve(build(P.roots(), Q.roots(), 0));

    // Keep only plans reachable from the virtual root with positive mass.
    coupling.stages.clear();
    std::vector<std::tuple<int, int, const Mat*>> stack{{-1, -1, &root.plan}};
    while (!stack.empty()) {
        auto [x, y, plan] = stack.back();
        stack.pop_back();
        const auto& xs = x < 0 ? P.roots() : P.node(x).children;
        const auto& ys = y < 0 ? Q.roots() : Q.node(y).children;
        const double norm = plan->sum();
        auto& entries = coupling.stages[{x, y}];
        for (std::size_t i = 0; i < xs.size(); ++i)
            for (std::size_t j = 0; j < ys.size(); ++j) {
                const double m = (*plan)(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
                if (m <= 0.0) continue;
                entries.push_back({xs[i], ys[j], m / norm});
                const int t = P.node(xs[i]).time;
                if (t < T) {
                    const std::size_t k = static_cast<std::size_t>(pos_p[xs[i]]) * lq[t].size() + static_cast<std::size_t>(pos_q[ys[j]]);
                    stack.push_back({xs[i], ys[j], &plans[t][k]});
                }
            }
    }
    return root.value;
}

}  // namespace detail

/**
 * Merges siblings carrying identical prices, so the tree filtration is the one
 * generated by the path itself. Returns the input unchanged when nothing merges.
 */
inline PathLaw canonicalize(const PathLaw& P) {
    bool needed = false;
    auto has_dupes = [&](const std::vector<int>& kids) {
        for (std::size_t a = 0; a < kids.size(); ++a)
            for (std::size_t b = a + 1; b < kids.size(); ++b)
                if (P.node(kids[a]).prices == P.node(kids[b]).prices) return true;
        return false;
    };
    needed = has_dupes(P.roots());
    for (std::size_t i = 0; i < P.size() && !needed; ++i) needed = has_dupes(P.node(static_cast<int>(i)).children);
    if (!needed) return P;

    // A group is a weighted set of original nodes sharing one price path.
    using Group = std::vector<std::pair<int, double>>;
    std::vector<NodeSpec> specs;
    auto split = [&](const Group& members) {
        // Children of a group, bucketed by price, first-appearance order.
        std::vector<Group> out;
        std::vector<Vec> keys;
        for (const auto& [v, w] : members)
            for (int c : P.node(v).children) {
                std::size_t k = 0;
                while (k < keys.size() && keys[k] != P.node(c).prices) ++k;
                if (k == keys.size()) {
                    keys.push_back(P.node(c).prices);
                    out.emplace_back();
                }
                out[k].push_back({c, w * P.node(c).cond_prob});
            }
        return out;
    };
    std::function<void(const Group&, const std::string&, double)> emit = [&](const Group& g, const std::string& parent,
                                                                              double parent_mass) {
        double mass = 0.0;
        for (const auto& m : g) mass += m.second;
        const Node& rep = P.node(g.front().first);
        NodeSpec s;
        s.id = rep.id;
        s.time = rep.time;
        s.parent = parent;
        s.cond_prob = mass / parent_mass;
        s.prices.assign(rep.prices.data(), rep.prices.data() + rep.prices.size());
        specs.push_back(s);
        for (const auto& child : split(g)) emit(child, rep.id, mass);
    };
    Group top;
    for (int r : P.roots()) top.push_back({r, P.node(r).cond_prob});
    // Roots are bucketed like children of a virtual node.
    std::vector<Group> roots;
    std::vector<Vec> keys;
    for (const auto& [v, w] : top) {
        std::size_t k = 0;
        while (k < keys.size() && keys[k] != P.node(v).prices) ++k;
        if (k == keys.size()) {
            keys.push_back(P.node(v).prices);
            roots.emplace_back();
        }
        roots[k].push_back({v, w});
    }
    for (const auto& g : roots) emit(g, "", 1.0);
    return PathLaw(P.horizon(), P.dim(), specs);
}

struct AdaptedResult {
    double value = 0.0;
    BicausalCoupling coupling;
    // Laws the coupling refers to (canonical forms of the inputs).
    std::shared_ptr<const PathLaw> first;
    std::shared_ptr<const PathLaw> second;
};

struct AdaptedOptions {
    double q = 2.0;
    CostVariant variant = CostVariant::increments;
    bool include_t0 = true;
};

/// min over bicausal couplings of esssup of the summed stage cost.
inline AdaptedResult adapted_bottleneck(const PathLaw& P0, const PathLaw& Q0, const AdaptedOptions& opt) {
    detail::check_pair(P0, Q0);
    auto P = std::make_shared<const PathLaw>(canonicalize(P0));
    auto Q = std::make_shared<const PathLaw>(canonicalize(Q0));
    AdaptedResult res;
    res.first = P;
    res.second = Q;
    res.value = detail::bicausal_dp(
        *P, *Q, 0.0,
        [&](int x, int y, double child) { return detail::stage_cost(*P, *Q, x, y, opt.q, opt.variant, opt.include_t0) + child; },
        [](const TransportInstance& inst) {
            const TransportResult r = bottleneck_transport(inst);
            return detail::StageSolution{r.value, r.plan};
        },
        res.coupling);
    return res;
}

/// Adapted L-infinity distance on increments, time-0 term |X0 - Y0|_q included by default.
inline AdaptedResult aw_inf_delta(const PathLaw& P, const PathLaw& Q, double q = 2.0, bool include_t0 = true) {
    return adapted_bottleneck(P, Q, {q, CostVariant::increments, include_t0});
}

/// Adapted L-infinity distance on levels.
inline AdaptedResult aw_inf(const PathLaw& P, const PathLaw& Q, double q = 2.0, bool include_t0 = true) {
    return adapted_bottleneck(P, Q, {q, CostVariant::levels, include_t0});
}

/// sum_t stage cost along a pair of leaf paths.
inline double path_cost(const PathLaw& P, const PathLaw& Q, int x_leaf, int y_leaf, const AdaptedOptions& opt) {
    const auto px = P.path_to(x_leaf), py = Q.path_to(y_leaf);
    double c = 0.0;
    for (std::size_t t = 0; t < px.size(); ++t) c += detail::stage_cost(P, Q, px[t], py[t], opt.q, opt.variant, opt.include_t0);
    return c;
}

/// esssup of the path cost under a coupling.
inline double coupling_esssup(const PathLaw& P, const PathLaw& Q, const BicausalCoupling& pi, const AdaptedOptions& opt) {
    double v = 0.0;
    for (const auto& lp : pi.flatten()) v = std::max(v, path_cost(P, Q, lp.x_leaf, lp.y_leaf, opt));
    return v;
}

struct PlanResult {
    double value = 0.0;
    Mat plan;  // leaves of P (leaf order) x leaves of Q
};

/// Non-causal infinity-Wasserstein distance between the path laws.
inline PlanResult w_inf(const PathLaw& P, const PathLaw& Q, double q = 2.0, CostVariant variant = CostVariant::levels,
                        bool include_t0 = true) {
    detail::check_pair(P, Q);
    const AdaptedOptions opt{q, variant, include_t0};
    TransportInstance inst;
    inst.source = Eigen::Map<const Vec>(P.leaf_probabilities().data(), static_cast<Eigen::Index>(P.num_leaves()));
    const auto pq = Q.leaf_probabilities();
    inst.target = Eigen::Map<const Vec>(pq.data(), static_cast<Eigen::Index>(pq.size()));
    inst.target *= inst.source.sum() / inst.target.sum();
    inst.cost.resize(inst.source.size(), inst.target.size());
    for (std::size_t i = 0; i < P.num_leaves(); ++i)
        for (std::size_t j = 0; j < Q.num_leaves(); ++j)
            inst.cost(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = path_cost(P, Q, P.leaves()[i], Q.leaves()[j], opt);
    const TransportResult r = bottleneck_transport(inst);
    return {r.value, r.plan};
}

/// (1/lambda) log sum_i p_i exp(lambda v_i), evaluated stably.
inline double laplace_smoothed_esssup(const std::vector<double>& values, const std::vector<double>& probs, double lambda) {
    if (values.size() != probs.size() || values.empty()) throw InputError("values and probabilities must have equal, non-zero length");
    if (!(lambda > 0.0)) throw InputError("lambda must be positive");
    double top = -kInf;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) throw InputError("values must be finite");
        if (probs[i] < 0.0) throw InputError("probabilities must be non-negative");
        if (probs[i] > 0.0) top = std::max(top, values[i]);
    }
    double s = 0.0;
    for (std::size_t i = 0; i < values.size(); ++i)
        if (probs[i] > 0.0) s += probs[i] * std::exp(lambda * (values[i] - top));
    return top + std::log(s) / lambda;
}

/**
 * (1/lambda) log of the least bicausal exponential moment of lambda * path cost.
 *
 * The multiplicative recursion runs in log space: each stage minimises
 * sum gamma_ij exp(K_ij) with K = lambda * c + child log-value, after shifting K
 * by its bottleneck value so that the optimal cells have non-positive exponents.
 */
inline AdaptedResult elog_divergence(const PathLaw& P0, const PathLaw& Q0, double q, double lambda,
                                     CostVariant variant = CostVariant::levels, bool include_t0 = true) {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw InputError("lambda must be positive and finite");
    detail::check_pair(P0, Q0);
    auto P = std::make_shared<const PathLaw>(canonicalize(P0));
    auto Q = std::make_shared<const PathLaw>(canonicalize(Q0));
    AdaptedResult res;
    res.first = P;
    res.second = Q;
    constexpr double kExpCap = 25.0;
    const double logv = detail::bicausal_dp(
        *P, *Q, 0.0,
        [&](int x, int y, double child) { return lambda * detail::stage_cost(*P, *Q, x, y, q, variant, include_t0) + child; },
        [&](const TransportInstance& inst) {
            const double shift = bottleneck_transport(inst).value;
            TransportInstance e = inst;
            e.cost = (inst.cost.array() - shift).min(kExpCap).exp().matrix();
            const TransportResult r = discrete_ot(e);
            return detail::StageSolution{shift + std::log(r.value), r.plan};
        },
        res.coupling);
    res.value = logv / lambda;
    return res;
}

/// (1/lambda) log E_pi[exp(lambda * path cost)] for a given coupling.
inline double coupling_elog(const PathLaw& P, const PathLaw& Q, const BicausalCoupling& pi, double lambda,
                            const AdaptedOptions& opt) {
    std::vector<double> v, p;
    for (const auto& lp : pi.flatten()) {
        v.push_back(path_cost(P, Q, lp.x_leaf, lp.y_leaf, opt));
        p.push_back(lp.mass);
    }
    return laplace_smoothed_esssup(v, p, lambda);
}

/**
 * Knothe-Rosenblatt coupling for real-valued paths: at every matched pair the
 * conditional laws are coupled comonotonically (sorted north-west corner).
 */
inline BicausalCoupling knothe_rosenblatt(const PathLaw& P, const PathLaw& Q) {
    detail::check_pair(P, Q);
    if (P.dim() != 1) throw InputError("Knothe-Rosenblatt coupling requires d = 1");
    BicausalCoupling pi;
    auto sorted = [](const PathLaw& L, std::vector<int> kids) {
        std::stable_sort(kids.begin(), kids.end(), [&](int a, int b) { return L.node(a).prices[0] < L.node(b).prices[0]; });
        return kids;
    };
    std::vector<std::pair<int, int>> stack{{-1, -1}};
    while (!stack.empty()) {
        auto [x, y] = stack.back();
        stack.pop_back();
        const auto xs = sorted(P, x < 0 ? P.roots() : P.node(x).children);
        const auto ys = sorted(Q, y < 0 ? Q.roots() : Q.node(y).children);
        if (xs.empty() || ys.empty()) continue;
        std::vector<double> a, b;
        for (int v : xs) a.push_back(P.node(v).cond_prob);
        for (int v : ys) b.push_back(Q.node(v).cond_prob);
        auto& entries = pi.stages[{x, y}];
        std::size_t i = 0, j = 0;
        const double tiny = 1e-15;
        while (i < xs.size() && j < ys.size()) {
            const double m = std::min(a[i], b[j]);
            if (m > tiny) {
                entries.push_back({xs[i], ys[j], m});
                stack.push_back({xs[i], ys[j]});
            }
            a[i] -= m;
            b[j] -= m;
            const bool row_done = a[i] <= tiny, col_done = b[j] <= tiny;
            if (row_done) ++i;
            if (col_done) ++j;
            if (!row_done && !col_done) break;  // only rounding residue remains
        }
    }
    return pi;
}

/// Grid used by the adapted empirical measure.
struct QuantizerConfig {
    std::size_t samples = 1;
    int horizon = 1;
    int dim = 1;

    double exponent() const { return dim == 1 ? 1.0 / (horizon + 2) : 1.0 / (dim * (horizon + 1)); }
    int cells_per_axis() const {
        return std::max(1, static_cast<int>(std::lround(std::pow(static_cast<double>(samples), exponent()))));
    }
    double edge() const { return 1.0 / cells_per_axis(); }
    /// Cell index of u in [0, 1]; cells are half-open except the last.
    int cell(double u) const {
        const int n = cells_per_axis();
        return std::min(static_cast<int>(std::floor(u * n)), n - 1);
    }
    double center(int k) const { return (k + 0.5) / cells_per_axis(); }
};

/**
 * Quantises each sample path coordinate-wise to its grid cell centre and merges
 * equal prefixes into a tree carrying weight 1/N per sample.
 */
inline PathLaw adapted_empirical(const std::vector<std::vector<double>>& samples, int horizon, int dim) {
    if (samples.empty()) throw InputError("adapted empirical measure needs at least one sample");
    if (horizon < 1 || dim < 1) throw InputError("horizon and dimension must be positive");
    const std::size_t width = static_cast<std::size_t>(dim) * static_cast<std::size_t>(horizon + 1);
    QuantizerConfig cfg{samples.size(), horizon, dim};
    using Key = std::vector<int>;
    std::map<Key, std::size_t> count;
    for (std::size_t s = 0; s < samples.size(); ++s) {
        if (samples[s].size() != width)
            throw InputError("sample " + std::to_string(s) + " has " + std::to_string(samples[s].size()) +
                             " coordinates, expected " + std::to_string(width));
        Key key;
        for (std::size_t k = 0; k < width; ++k) {
            const double u = samples[s][k];
            if (!(u >= 0.0 && u <= 1.0))
                throw InputError("sample " + std::to_string(s) + " coordinate " + std::to_string(k) + " outside [0,1]");
            key.push_back(cfg.cell(u));
            if ((k + 1) % static_cast<std::size_t>(dim) == 0) ++count[key];
        }
    }
    // std::map orders prefixes lexicographically, so parents precede children.
    std::vector<NodeSpec> specs;
    std::map<Key, std::string> ids;
    const double N = static_cast<double>(samples.size());
    for (const auto& [key, c] : count) {
        const int t = static_cast<int>(key.size()) / dim - 1;
        NodeSpec s;
        s.id = "t" + std::to_string(t) + "_" + std::to_string(ids.size());
        s.time = t;
        double parent_count = N;
        if (t > 0) {
            Key parent(key.begin(), key.end() - dim);
            s.parent = ids.at(parent);
            parent_count = static_cast<double>(count.at(parent));
        }
        s.cond_prob = static_cast<double>(c) / parent_count;
        for (int k = 0; k < dim; ++k) s.prices.push_back(cfg.center(key[key.size() - static_cast<std::size_t>(dim) + k]));
        ids[key] = s.id;
        specs.push_back(std::move(s));
    }
    return PathLaw(horizon, dim, specs);
}

}  // namespace epsarb
