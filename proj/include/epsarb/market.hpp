#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "epsarb/errors.hpp"
#include "epsarb/norms.hpp"

namespace epsarb {

/// Raw node description as read from a market file.
struct NodeSpec {
    std::string id;
    int time = 0;
    std::string parent;  // empty for a time-0 node
    double cond_prob = 1.0;
    std::vector<double> prices;
};

struct Node {
    std::string id;
    int time = 0;
    int parent = -1;
    double cond_prob = 1.0;
    Vec prices;
    std::vector<int> children;
    // Leaves below this node occupy [leaf_begin, leaf_end) in leaf order.
    int leaf_begin = 0;
    int leaf_end = 0;
};

/**
 * Finite event tree carrying d-dimensional discounted prices.
 *
 * Time-0 nodes have no parent; a single time-0 node is the usual market with a
 * trivial initial sigma-algebra. Several time-0 nodes describe a law with a
 * random initial value (their cond_prob is the probability of each start).
 * The same type represents a discrete path law for the transport module.
 *
 * Construction only rejects data that cannot be arranged into a forest;
 * probability and depth invariants are checked by validate_market().
 */
class MarketModel {
public:
    MarketModel() = default;

    MarketModel(int horizon, int dim, const std::vector<NodeSpec>& specs) : horizon_(horizon), dim_(dim) {
        if (specs.empty()) throw InputError("market has no nodes");
        nodes_.reserve(specs.size());
        for (std::size_t i = 0; i < specs.size(); ++i) {
            const auto& s = specs[i];
            if (!index_.emplace(s.id, static_cast<int>(i)).second)
                throw InputError("duplicate node id '" + s.id + "'");
            if (static_cast<int>(s.prices.size()) != dim)
                throw InputError("node '" + s.id + "': expected " + std::to_string(dim) + " prices, got " +
                                 std::to_string(s.prices.size()));
            Node n;
            n.id = s.id;
            n.time = s.time;
            n.cond_prob = s.cond_prob;
            n.prices = Eigen::Map<const Vec>(s.prices.data(), dim);
            nodes_.push_back(std::move(n));
        }
        for (std::size_t i = 0; i < specs.size(); ++i) {
            if (specs[i].parent.empty()) {
                roots_.push_back(static_cast<int>(i));
                continue;
            }
            auto it = index_.find(specs[i].parent);
            if (it == index_.end())
                throw InputError("node '" + specs[i].id + "': unknown parent '" + specs[i].parent + "'");
            nodes_[i].parent = it->second;
            nodes_[it->second].children.push_back(static_cast<int>(i));
        }
        if (roots_.empty()) throw InputError("market has no time-0 node");

        // Depth-first ordering; anything unreached sits on a parent cycle.
        std::vector<char> seen(nodes_.size(), 0);
        std::vector<std::pair<int, std::size_t>> stack;
        for (int r : roots_) {
            stack.push_back({r, 0});
            seen[r] = 1;
            nodes_[r].leaf_begin = static_cast<int>(leaves_.size());
            while (!stack.empty()) {
                auto& [v, k] = stack.back();
                if (k < nodes_[v].children.size()) {
                    int c = nodes_[v].children[k++];
                    if (seen[c]) throw InputError("market tree contains a cycle at '" + nodes_[c].id + "'");
                    seen[c] = 1;
                    nodes_[c].leaf_begin = static_cast<int>(leaves_.size());
                    stack.push_back({c, 0});
                } else {
                    if (nodes_[v].children.empty()) leaves_.push_back(v);
                    else internal_.push_back(v);
                    nodes_[v].leaf_end = static_cast<int>(leaves_.size());
                    stack.pop_back();
                }
            }
        }
        for (std::size_t i = 0; i < nodes_.size(); ++i)
            if (!seen[i]) throw InputError("node '" + nodes_[i].id + "' is not connected to a time-0 node");
        // Internal nodes in increasing time, preserving DFS order within a level.
        std::stable_sort(internal_.begin(), internal_.end(),
                         [&](int a, int b) { return nodes_[a].time < nodes_[b].time; });
        leaf_pos_.assign(nodes_.size(), -1);
        for (std::size_t k = 0; k < leaves_.size(); ++k) leaf_pos_[leaves_[k]] = static_cast<int>(k);
        path_prob_.assign(nodes_.size(), 0.0);
        for (int r : roots_) fill_path_prob(r, nodes_[r].cond_prob);
    }

    int horizon() const { return horizon_; }
    int dim() const { return dim_; }
    std::size_t size() const { return nodes_.size(); }
    const std::vector<Node>& nodes() const { return nodes_; }
    const Node& node(int i) const { return nodes_.at(static_cast<std::size_t>(i)); }
    const std::vector<int>& roots() const { return roots_; }
    const std::vector<int>& leaves() const { return leaves_; }
    /// Nodes with children, ordered by time.
    const std::vector<int>& internal_nodes() const { return internal_; }
    std::size_t num_leaves() const { return leaves_.size(); }
    bool is_leaf(int i) const { return node(i).children.empty(); }
    int leaf_position(int i) const { return leaf_pos_.at(static_cast<std::size_t>(i)); }

    int index_of(const std::string& id) const {
        auto it = index_.find(id);
        if (it == index_.end()) throw InputError("unknown node id '" + id + "'");
        return it->second;
    }
    bool has_id(const std::string& id) const { return index_.count(id) > 0; }

    /// P(node): product of conditional probabilities along the path.
    double path_prob(int i) const { return path_prob_.at(static_cast<std::size_t>(i)); }
    double leaf_prob(std::size_t k) const { return path_prob_[leaves_[k]]; }

    /// S(w) - S(parent(w)); for a time-0 node the level itself.
    Vec increment(int i) const {
        const Node& n = node(i);
        return n.parent < 0 ? n.prices : Vec(n.prices - nodes_[n.parent].prices);
    }

    /// Nodes from the time-0 ancestor down to i.
    std::vector<int> path_to(int i) const {
        std::vector<int> out;
        for (int v = i; v >= 0; v = nodes_[v].parent) out.push_back(v);
        std::reverse(out.begin(), out.end());
        return out;
    }

    std::vector<double> leaf_probabilities() const {
        std::vector<double> out(leaves_.size());
        for (std::size_t k = 0; k < leaves_.size(); ++k) out[k] = leaf_prob(k);
        return out;
    }

    /// Largest |S(w) - S(v)|_inf over all edges, or 1 if the tree is flat.
    double price_scale() const {
        double s = 0.0;
        for (std::size_t i = 0; i < nodes_.size(); ++i)
            if (nodes_[i].parent >= 0) s = std::max(s, increment(static_cast<int>(i)).cwiseAbs().maxCoeff());
        return s > 0.0 ? s : 1.0;
    }

private:
    void fill_path_prob(int v, double p) {
        path_prob_[v] = p;
        for (int c : nodes_[v].children) fill_path_prob(c, p * nodes_[c].cond_prob);
    }

    int horizon_ = 0;
    int dim_ = 0;
    std::vector<Node> nodes_;
    std::unordered_map<std::string, int> index_;
    std::vector<int> roots_;
    std::vector<int> leaves_;
    std::vector<int> internal_;
    std::vector<int> leaf_pos_;
    std::vector<double> path_prob_;
};

using PathLaw = MarketModel;

struct ValidationReport {
    std::vector<std::string> violations;
    bool valid() const { return violations.empty(); }
    std::string summary() const {
        std::ostringstream os;
        for (std::size_t i = 0; i < violations.size(); ++i) os << (i ? "; " : "") << violations[i];
        return os.str();
    }
};

namespace detail {
inline std::string fmt_num(double v) {
    std::ostringstream os;
    os.precision(12);
    os << v;
    return os.str();
}
}  // namespace detail

/// Every violated structural or probabilistic invariant; empty means valid.
inline ValidationReport validate_market(const MarketModel& m, double prob_tol = 1e-12) {
    ValidationReport rep;
    auto add = [&](std::string s) { rep.violations.push_back(std::move(s)); };
    if (m.horizon() < 1) add("horizon T must be >= 1");
    if (m.dim() < 1) add("dimension d must be >= 1");

    double root_sum = 0.0;
    for (int r : m.roots()) {
        root_sum += m.node(r).cond_prob;
        if (m.node(r).time != 0) add("node '" + m.node(r).id + "' has no parent but time " + std::to_string(m.node(r).time));
    }
    if (std::abs(root_sum - 1.0) > prob_tol)
        add("time-0 probabilities sum " + detail::fmt_num(root_sum) + " != 1");

    for (std::size_t i = 0; i < m.size(); ++i) {
        const Node& n = m.node(static_cast<int>(i));
        if (!(n.cond_prob > 0.0 && n.cond_prob <= 1.0))
            add("node '" + n.id + "': conditional probability " + detail::fmt_num(n.cond_prob) + " outside (0,1]");
        if (!n.prices.allFinite()) add("node '" + n.id + "': non-finite price");
        if (n.parent >= 0 && n.time != m.node(n.parent).time + 1)
            add("node '" + n.id + "': time " + std::to_string(n.time) + " inconsistent with parent time " +
                std::to_string(m.node(n.parent).time));
        if (n.time < 0 || n.time > m.horizon()) add("node '" + n.id + "': time outside 0..T");
        if (n.children.empty() && n.time != m.horizon())
            add("node '" + n.id + "': leaf at wrong depth (time " + std::to_string(n.time) + ", T = " +
                std::to_string(m.horizon()) + ")");
        if (!n.children.empty()) {
            double s = 0.0;
            for (int c : n.children) s += m.node(c).cond_prob;
            if (std::abs(s - 1.0) > prob_tol)
                add("node '" + n.id + "': sibling probabilities sum " + detail::fmt_num(s) + " != 1");
        }
    }
    for (std::size_t k = 0; k < m.num_leaves(); ++k)
        if (!(m.leaf_prob(k) > 0.0)) add("leaf '" + m.node(m.leaves()[k]).id + "' has zero path probability");
    return rep;
}

inline void require_valid(const MarketModel& m) {
    auto rep = validate_market(m);
    if (!rep.valid()) throw InputError("invalid market: " + rep.summary());
}

/// Predictable strategy: one d-vector per internal node (H_t attached to the time t-1 node).
struct Strategy {
    std::vector<Vec> holdings;  // indexed by node; empty vectors on leaves

    static Strategy zero(const MarketModel& m) {
        Strategy s;
        s.holdings.resize(m.size());
        for (int v : m.internal_nodes()) s.holdings[v] = Vec::Zero(m.dim());
        return s;
    }

    Vec& at(int node) { return holdings.at(static_cast<std::size_t>(node)); }
    const Vec& at(int node) const { return holdings.at(static_cast<std::size_t>(node)); }
};

inline void check_strategy(const MarketModel& m, const Strategy& h) {
    if (h.holdings.size() != m.size()) throw InputError("strategy does not match market size");
    for (int v : m.internal_nodes())
        if (h.holdings[v].size() != m.dim())
            throw InputError("strategy at node '" + m.node(v).id + "' has dimension " +
                             std::to_string(h.holdings[v].size()) + ", market has " + std::to_string(m.dim()));
}

/// Leaf weights of a candidate measure, in the market's leaf order.
struct MeasureWeights {
    std::vector<double> weights;
    bool equivalent = false;

    static MeasureWeights from(std::vector<double> w, double interior_threshold = 0.0) {
        MeasureWeights q;
        q.weights = std::move(w);
        q.equivalent = !q.weights.empty() &&
                       std::all_of(q.weights.begin(), q.weights.end(), [&](double x) { return x > interior_threshold; });
        return q;
    }
    static MeasureWeights reference(const MarketModel& m) { return from(m.leaf_probabilities()); }

    /// Q(v): total weight of the leaves below node v.
    double mass(const MarketModel& m, int v) const {
        const Node& n = m.node(v);
        double s = 0.0;
        for (int k = n.leaf_begin; k < n.leaf_end; ++k) s += weights[k];
        return s;
    }

    /// dQ/dP per leaf.
    std::vector<double> density(const MarketModel& m) const {
        std::vector<double> out(weights.size());
        for (std::size_t k = 0; k < weights.size(); ++k) out[k] = weights[k] / m.leaf_prob(k);
        return out;
    }

    double expectation(const std::vector<double>& f) const {
        double s = 0.0;
        for (std::size_t k = 0; k < weights.size(); ++k) s += weights[k] * f[k];
        return s;
    }
};

inline void check_measure(const MarketModel& m, const MeasureWeights& q, double tol = 1e-12) {
    if (q.weights.size() != m.num_leaves()) throw InputError("measure does not match number of leaves");
    double s = 0.0;
    for (double w : q.weights) {
        if (!(w >= 0.0) || !std::isfinite(w)) throw InputError("measure weights must be finite and non-negative");
        s += w;
    }
    if (std::abs(s - 1.0) > tol) throw InputError("measure weights sum " + detail::fmt_num(s) + " != 1");
}

/// Terminal payoff, one value per leaf in leaf order.
struct Payoff {
    std::vector<double> values;

    static Payoff constant(const MarketModel& m, double c) { return {std::vector<double>(m.num_leaves(), c)}; }
};

inline void check_payoff(const MarketModel& m, const Payoff& f) {
    if (f.values.size() != m.num_leaves()) throw InputError("payoff does not match number of leaves");
    for (double v : f.values)
        if (!std::isfinite(v)) throw InputError("payoff values must be finite");
}

/// (H . S)_T per leaf.
inline std::vector<double> gain(const MarketModel& m, const Strategy& h) {
    check_strategy(m, h);
    std::vector<double> out(m.num_leaves(), 0.0);
    for (std::size_t k = 0; k < m.num_leaves(); ++k) {
        double g = 0.0;
        for (int v = m.leaves()[k]; m.node(v).parent >= 0; v = m.node(v).parent)
            g += h.holdings[m.node(v).parent].dot(m.increment(v));
        out[k] = g;
    }
    return out;
}

/// ||H||_p per leaf: sum over t of |H_t|_p along the path.
inline std::vector<double> strategy_cost(const MarketModel& m, const Strategy& h, const NormPair& norms) {
    check_strategy(m, h);
    std::vector<double> out(m.num_leaves(), 0.0);
    for (std::size_t k = 0; k < m.num_leaves(); ++k) {
        double c = 0.0;
        for (int v = m.leaves()[k]; m.node(v).parent >= 0; v = m.node(v).parent)
            c += lp_norm(h.holdings[m.node(v).parent], norms.p());
        out[k] = c;
    }
    return out;
}

/// Node-wise one-step drift under Q.
struct ConditionalMeans {
    std::vector<Vec> mean;       // E_Q[dS | node], valid where !degenerate
    std::vector<Vec> cone;       // sum_children Q(w) dS(w), always defined
    std::vector<char> degenerate;  // Q(node) == 0
};

inline ConditionalMeans conditional_mean_increments(const MarketModel& m, const MeasureWeights& q) {
    check_measure(m, q, 1e-9);
    ConditionalMeans out;
    out.mean.resize(m.size());
    out.cone.resize(m.size());
    out.degenerate.assign(m.size(), 0);
    for (int v : m.internal_nodes()) {
        Vec c = Vec::Zero(m.dim());
        for (int w : m.node(v).children) c += q.mass(m, w) * m.increment(w);
        const double qv = q.mass(m, v);
        out.cone[v] = c;
        if (qv > 0.0) {
            out.mean[v] = c / qv;
        } else {
            out.degenerate[v] = 1;
            out.mean[v] = Vec::Zero(m.dim());
        }
    }
    return out;
}

/// S = A + M with A predictable (A_0 = 0) and M a Q-martingale.
struct DoobDecomposition {
    std::vector<Vec> predictable;
    std::vector<Vec> martingale;
};

inline DoobDecomposition doob_decomposition(const MarketModel& m, const MeasureWeights& q) {
    check_measure(m, q, 1e-9);
    if (!q.equivalent) throw InputError("Doob decomposition requires a measure with strictly positive leaf weights");
    const auto drift = conditional_mean_increments(m, q);
    DoobDecomposition out;
    out.predictable.resize(m.size());
    out.martingale.resize(m.size());
    // Parents precede children in path order, so a walk from the roots suffices.
    std::vector<int> stack(m.roots().rbegin(), m.roots().rend());
    while (!stack.empty()) {
        int v = stack.back();
        stack.pop_back();
        const Node& n = m.node(v);
        out.predictable[v] = n.parent < 0 ? Vec(Vec::Zero(m.dim())) : Vec(out.predictable[n.parent] + drift.mean[n.parent]);
        out.martingale[v] = n.prices - out.predictable[v];
        for (auto it = n.children.rbegin(); it != n.children.rend(); ++it) stack.push_back(*it);
    }
    return out;
}

struct EpsMartingaleCheck {
    bool holds = false;
    double max_deviation = 0.0;  // max over nodes of |E_Q[dS | node]|_q
    int worst_node = -1;
};

inline EpsMartingaleCheck is_eps_martingale(const MarketModel& m, const MeasureWeights& q, double eps,
                                            const NormPair& norms, double tol = 1e-10) {
    if (!(eps >= 0.0)) throw InputError("epsilon must be non-negative");
    if (!q.equivalent) throw InputError("epsilon-martingale check requires an equivalent measure");
    const auto drift = conditional_mean_increments(m, q);
    EpsMartingaleCheck out;
    for (int v : m.internal_nodes()) {
        const double dev = lp_norm(drift.mean[v], norms.q());
        if (dev > out.max_deviation || out.worst_node < 0) {
            out.max_deviation = std::max(out.max_deviation, dev);
            if (dev >= out.max_deviation) out.worst_node = v;
        }
    }
    out.holds = out.max_deviation <= eps + tol;
    return out;
}

}  // namespace epsarb
