#pragma once

#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "epsarb/adapted.hpp"
#include "epsarb/arbitrage.hpp"
#include "epsarb/pricing.hpp"
#include "epsarb/stability.hpp"

namespace epsarb::io {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

/// Input error located at a JSON pointer inside a file.
class FieldError : public InputError {
public:
    FieldError(std::string pointer, const std::string& what)
        : InputError(pointer.empty() ? what : what + " (at " + pointer + ")"), pointer_(std::move(pointer)), message_(what) {}
    const std::string& pointer() const { return pointer_; }
    const std::string& message() const { return message_; }

private:
    std::string pointer_;
    std::string message_;
};

namespace detail {

inline std::string child(const std::string& ptr, const std::string& key) {
    std::string esc;
    for (char c : key) {
        if (c == '~') esc += "~0";
        else if (c == '/') esc += "~1";
        else esc += c;
    }
    return ptr + "/" + esc;
}
inline std::string child(const std::string& ptr, std::size_t i) { return ptr + "/" + std::to_string(i); }

inline const json& field(const json& j, const std::string& ptr, const std::string& key) {
    if (!j.is_object()) throw FieldError(ptr, "expected an object");
    auto it = j.find(key);
    if (it == j.end()) throw FieldError(child(ptr, key), "missing field '" + key + "'");
    return *it;
}

inline double number(const json& j, const std::string& ptr) {
    if (!j.is_number()) throw FieldError(ptr, "expected a number");
    const double v = j.get<double>();
    if (!std::isfinite(v)) throw FieldError(ptr, "expected a finite number");
    return v;
}

inline int integer(const json& j, const std::string& ptr) {
    if (!j.is_number_integer()) throw FieldError(ptr, "expected an integer");
    return j.get<int>();
}

inline std::string string(const json& j, const std::string& ptr) {
    if (!j.is_string()) throw FieldError(ptr, "expected a string");
    return j.get<std::string>();
}

inline std::vector<double> numbers(const json& j, const std::string& ptr, int expected = -1) {
    if (!j.is_array()) throw FieldError(ptr, "expected an array of numbers");
    if (expected >= 0 && static_cast<int>(j.size()) != expected)
        throw FieldError(ptr, "expected " + std::to_string(expected) + " numbers, got " + std::to_string(j.size()));
    std::vector<double> out;
    for (std::size_t i = 0; i < j.size(); ++i) out.push_back(number(j[i], child(ptr, i)));
    return out;
}

inline void only_keys(const json& j, const std::string& ptr, std::initializer_list<const char*> keys) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = false;
        for (const char* k : keys) ok = ok || it.key() == k;
        if (!ok) throw FieldError(child(ptr, it.key()), "unknown field '" + it.key() + "'");
    }
}

inline json vec(const Vec& v) {
    json a = json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(v[i]);
    return a;
}

inline json mat_columns(const Mat& m) {
    json a = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) a.push_back(vec(m.col(c)));
    return a;
}

}  // namespace detail

inline json parse(const std::string& text, const std::string& source = "input") {
    try {
        return json::parse(text);
    } catch (const json::parse_error& e) {
        throw FieldError("", source + ": malformed JSON at byte " + std::to_string(e.byte) + ": " + e.what());
    }
}

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open '" + path + "'");
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

inline json load_json(const std::string& path) { return parse(read_file(path), path); }

/// Market file contents plus the optional defaults it may carry.
struct MarketFile {
    MarketModel market;
    double p = 2.0;
    bool has_eps = false;
    double eps = 0.0;
    std::string description;
};

/**
 * {"T":int,"d":int,"p":number,"nodes":[{"id","time","parent","cond_prob","prices"}]}.
 * "p" defaults to 2; "eps" and "description" are optional.
 */
inline MarketFile market_from_json(const json& j) {
    using namespace detail;
    if (!j.is_object()) throw FieldError("", "market must be a JSON object");
    only_keys(j, "", {"T", "d", "p", "eps", "description", "nodes"});
    MarketFile out;
    const int T = integer(field(j, "", "T"), "/T");
    const int d = integer(field(j, "", "d"), "/d");
    if (T < 1) throw FieldError("/T", "T must be >= 1");
    if (d < 1) throw FieldError("/d", "d must be >= 1");
    if (j.contains("p")) {
        out.p = number(j["p"], "/p");
        if (out.p < 1.0) throw FieldError("/p", "p must be >= 1");
    }
    if (j.contains("eps")) {
        out.has_eps = true;
        out.eps = number(j["eps"], "/eps");
        if (out.eps < 0.0) throw FieldError("/eps", "eps must be >= 0");
    }
    if (j.contains("description")) out.description = string(j["description"], "/description");
    const json& nodes = field(j, "", "nodes");
    if (!nodes.is_array() || nodes.empty()) throw FieldError("/nodes", "expected a non-empty array of nodes");
    std::vector<NodeSpec> specs;
    for (std::size_t i = 0; i < nodes.size(); ++i) {
        const std::string ptr = child("/nodes", i);
        const json& n = nodes[i];
        if (!n.is_object()) throw FieldError(ptr, "expected a node object");
        only_keys(n, ptr, {"id", "time", "parent", "cond_prob", "prices"});
        NodeSpec s;
        s.id = string(field(n, ptr, "id"), child(ptr, "id"));
        s.time = integer(field(n, ptr, "time"), child(ptr, "time"));
        const json& par = field(n, ptr, "parent");
        if (!par.is_null()) s.parent = string(par, child(ptr, "parent"));
        s.cond_prob = number(field(n, ptr, "cond_prob"), child(ptr, "cond_prob"));
        s.prices = numbers(field(n, ptr, "prices"), child(ptr, "prices"), d);
        specs.push_back(std::move(s));
    }
    try {
        out.market = MarketModel(T, d, specs);
    } catch (const InputError& e) {
        throw FieldError("/nodes", e.what());
    }
    const auto rep = validate_market(out.market);
    if (!rep.valid()) throw FieldError("/nodes", "invalid market: " + rep.summary());
    return out;
}

inline MarketFile load_market(const std::string& path) {
    try {
        return market_from_json(load_json(path));
    } catch (const FieldError& e) {
        throw FieldError(e.pointer(), path + ": " + e.message());
    }
}

inline json market_to_json(const MarketModel& m, double p = 2.0) {
    json nodes = json::array();
    // Parents before children: emit by time, DFS order within a level.
    std::vector<int> order(m.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return m.node(a).time < m.node(b).time; });
    for (int v : order) {
        const Node& n = m.node(v);
        json o;
        o["id"] = n.id;
        o["time"] = n.time;
        o["parent"] = n.parent < 0 ? json(nullptr) : json(m.node(n.parent).id);
        o["cond_prob"] = n.cond_prob;
        o["prices"] = detail::vec(n.prices);
        nodes.push_back(o);
    }
    return json{{"T", m.horizon()}, {"d", m.dim()}, {"p", p}, {"nodes", nodes}};
}

/// {"values":{leaf_id:number}}; every leaf must be present.
inline Payoff payoff_from_json(const MarketModel& m, const json& j) {
    using namespace detail;
    if (!j.is_object()) throw FieldError("", "payoff must be a JSON object");
    only_keys(j, "", {"values", "description"});
    const json& vals = field(j, "", "values");
    if (!vals.is_object()) throw FieldError("/values", "expected an object mapping leaf ids to numbers");
    Payoff out;
    out.values.assign(m.num_leaves(), 0.0);
    std::vector<char> seen(m.num_leaves(), 0);
    for (auto it = vals.begin(); it != vals.end(); ++it) {
        const std::string ptr = child("/values", it.key());
        if (!m.has_id(it.key())) throw FieldError(ptr, "unknown node id '" + it.key() + "'");
        const int v = m.index_of(it.key());
        if (!m.is_leaf(v)) throw FieldError(ptr, "node '" + it.key() + "' is not a leaf");
        out.values[m.leaf_position(v)] = number(*it, ptr);
        seen[m.leaf_position(v)] = 1;
    }
    for (std::size_t k = 0; k < seen.size(); ++k)
        if (!seen[k]) throw FieldError(child("/values", m.node(m.leaves()[k]).id), "missing payoff for leaf");
    return out;
}

inline json payoff_to_json(const MarketModel& m, const Payoff& f) {
    json vals = json::object();
    for (std::size_t k = 0; k < m.num_leaves(); ++k) vals[m.node(m.leaves()[k]).id] = f.values[k];
    return json{{"values", vals}};
}

/// {"weights":{leaf_id:number}}; absent leaves get weight 0.
inline MeasureWeights measure_from_json(const MarketModel& m, const json& j) {
    using namespace detail;
    if (!j.is_object()) throw FieldError("", "measure must be a JSON object");
    const json& ws = field(j, "", "weights");
    if (!ws.is_object()) throw FieldError("/weights", "expected an object mapping leaf ids to numbers");
    std::vector<double> w(m.num_leaves(), 0.0);
    for (auto it = ws.begin(); it != ws.end(); ++it) {
        const std::string ptr = child("/weights", it.key());
        if (!m.has_id(it.key())) throw FieldError(ptr, "unknown node id '" + it.key() + "'");
        const int v = m.index_of(it.key());
        if (!m.is_leaf(v)) throw FieldError(ptr, "node '" + it.key() + "' is not a leaf");
        w[m.leaf_position(v)] = number(*it, ptr);
    }
    MeasureWeights q = MeasureWeights::from(std::move(w));
    check_measure(m, q, 1e-9);
    return q;
}

inline json measure_to_json(const MarketModel& m, const MeasureWeights& q) {
    json ws = json::object();
    for (std::size_t k = 0; k < q.weights.size(); ++k) ws[m.node(m.leaves()[k]).id] = q.weights[k];
    return json{{"weights", ws}};
}

inline json strategy_to_json(const MarketModel& m, const Strategy& h) {
    json out = json::object();
    for (int v : m.internal_nodes())
        if (static_cast<std::size_t>(v) < h.holdings.size() && h.holdings[v].size() > 0)
            out[m.node(v).id] = detail::vec(h.holdings[v]);
    return out;
}

inline json leaf_values(const MarketModel& m, const std::vector<double>& x) {
    json out = json::object();
    for (std::size_t k = 0; k < x.size() && k < m.num_leaves(); ++k) out[m.node(m.leaves()[k]).id] = x[k];
    return out;
}

/**
 * Claim on the whole path for stability checks:
 * {"coefficients":[[c_0...],...,[c_T...]], "strike":number, "kind":"call"|"linear"}.
 */
inline PathPayoff path_payoff_from_json(const json& j, int horizon, int dim, const NormPair& norms) {
    using namespace detail;
    if (!j.is_object()) throw FieldError("", "path payoff must be a JSON object");
    only_keys(j, "", {"coefficients", "strike", "kind", "description"});
    const json& cs = field(j, "", "coefficients");
    if (!cs.is_array() || static_cast<int>(cs.size()) != horizon + 1)
        throw FieldError("/coefficients", "expected " + std::to_string(horizon + 1) + " coefficient vectors");
    std::vector<Vec> coeffs;
    for (std::size_t t = 0; t < cs.size(); ++t) {
        const auto v = numbers(cs[t], child("/coefficients", t), dim);
        coeffs.push_back(Eigen::Map<const Vec>(v.data(), dim));
    }
    const double strike = j.contains("strike") ? number(j["strike"], "/strike") : 0.0;
    std::string kind = j.contains("kind") ? string(j["kind"], "/kind") : "linear";
    if (kind != "call" && kind != "linear") throw FieldError("/kind", "kind must be 'call' or 'linear'");
    return linear_path_payoff(std::move(coeffs), strike, kind == "call", norms);
}

/// Rows of d(T+1) comma- or space-separated numbers; blank lines and '#' comments skipped.
inline std::vector<std::vector<double>> read_samples_csv(const std::string& path) {
    std::istringstream in(read_file(path));
    std::vector<std::vector<double>> out;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        for (char& c : line)
            if (c == ',' || c == ';' || c == '\t') c = ' ';
        std::istringstream ls(line);
        std::vector<double> row;
        std::string tok;
        while (ls >> tok) {
            try {
                std::size_t used = 0;
                row.push_back(std::stod(tok, &used));
                if (used != tok.size()) throw std::invalid_argument(tok);
            } catch (const std::exception&) {
                throw InputError(path + ": line " + std::to_string(lineno) + ": '" + tok + "' is not a number");
            }
        }
        if (row.empty()) continue;
        if (!out.empty() && row.size() != out.front().size())
            throw InputError(path + ": line " + std::to_string(lineno) + " has " + std::to_string(row.size()) +
                             " values, expected " + std::to_string(out.front().size()));
        out.push_back(std::move(row));
    }
    if (out.empty()) throw InputError(path + ": no samples");
    return out;
}

// ---- reports ----

inline json to_json(const MarketModel& m, const ArbitrageReport& r) {
    json out;
    out["status"] = to_string(r.status);
    out["epsilon"] = r.eps;
    out["optimum"] = r.optimum;
    out["margin"] = r.margin;
    out["node"] = r.node >= 0 ? json(m.node(r.node).id) : json(nullptr);
    out["certificate"] = r.found() ? strategy_to_json(m, r.certificate) : json::object();
    out["slacks"] = leaf_values(m, r.slacks);
    return out;
}

inline json to_json(const MarketModel& m, const MarketStructure& st) {
    json nodes = json::object();
    for (const auto& ns : st.nodes) {
        if (ns.node < 0) continue;
        json o;
        o["hbar"] = detail::vec(ns.hbar);
        o["local_critical"] = ns.local_critical;
        o["active"] = ns.active();
        o["perp_complement"] = detail::mat_columns(ns.perp_complement);
        o["perp_null"] = detail::mat_columns(ns.perp_null);
        o["strict_arbitrage"] = ns.strict_arbitrage_here;
        if (ns.strict_arbitrage_here) o["certificate"] = detail::vec(ns.certificate);
        nodes[m.node(ns.node).id] = o;
    }
    return json{{"epsilon", st.eps}, {"p", st.norms.p()}, {"strict_arbitrage", st.any_strict()}, {"nodes", nodes}};
}

inline json to_json(const MarketModel& m, const CriticalValueResult& r) {
    json out;
    out["epsilon_P"] = r.epsilon_P;
    out["primal"] = r.primal;
    out["dual"] = r.dual;
    json dc = json::array();
    for (const auto& c : r.dual_curve) dc.push_back(json{{"eta", c.x}, {"value", c.value}});
    out["dual_curve"] = dc;
    out["discrepancy"] = r.discrepancy;
    if (r.discrepancy) out["discrepancy_report"] = r.discrepancy_report;
    out["worst_node"] = r.worst_node >= 0 ? json(m.node(r.worst_node).id) : json(nullptr);
    return out;
}

inline json to_json(const MarketModel& m, const NaPrimeReport& r) {
    json out;
    out["holds"] = r.holds;
    out["no_strict_arbitrage"] = r.no_strict_arbitrage;
    out["perp_no_arbitrage"] = r.perp_no_arbitrage;
    if (!r.no_strict_arbitrage) out["strict"] = to_json(m, r.strict);
    if (r.witness_node >= 0) {
        out["witness"] = json{{"node", m.node(r.witness_node).id}, {"g", detail::vec(r.witness)}, {"gain", r.witness_gain}};
    }
    return out;
}

inline json to_json(const MarketModel& m, const EmmResult& r) {
    json out;
    out["feasible"] = r.feasible;
    out["interior"] = r.interior;
    if (r.feasible) {
        out["weights"] = measure_to_json(m, r.measure)["weights"];
        out["deviation"] = r.deviation;
    } else {
        out["reason"] = r.reason;
        out["blocking_node"] = r.blocking_node >= 0 ? json(m.node(r.blocking_node).id) : json(nullptr);
    }
    return out;
}

inline json to_json(const MarketModel& m, const PriceBound& b) {
    json out{{"value", b.value}, {"attained", b.attained}, {"interior", b.interior}};
    if (!b.witness.weights.empty()) out["witness"] = measure_to_json(m, b.witness)["weights"];
    return out;
}

inline json to_json(const MarketModel& m, const SuperhedgeResult& r) {
    json cert;
    cert["x"] = r.certificate.x;
    cert["H"] = strategy_to_json(m, r.certificate.H);
    cert["G"] = strategy_to_json(m, r.certificate.G);
    cert["slack"] = leaf_values(m, r.certificate.slack);
    return json{{"price", r.price},   {"primal", r.primal},         {"gap", r.gap},
                {"certified", r.certified}, {"best_effort", r.best_effort}, {"patterns", r.patterns},
                {"certificate", cert}};
}

inline json interval_json(const PriceInterval& r) {
    return json{{"lo", r.lower}, {"hi", r.upper}, {"lo_open", r.lo_open()}, {"hi_open", r.hi_open()}};
}

inline json to_json(const MarketModel& m, const PriceInterval& r) {
    json out;
    out["interval"] = interval_json(r);
    out["inner_bound_only"] = r.inner_bound_only;
    json w = json::object();
    if (!r.lower_witness.weights.empty()) w["lo"] = measure_to_json(m, r.lower_witness)["weights"];
    if (!r.upper_witness.weights.empty()) w["hi"] = measure_to_json(m, r.upper_witness)["weights"];
    out["certificate"] = w;
    return out;
}

/// Nested stage plans starting from the virtual root pair.
inline json coupling_to_json(const PathLaw& P, const PathLaw& Q, const BicausalCoupling& pi) {
    std::function<json(int, int)> rec = [&](int x, int y) {
        json arr = json::array();
        for (const auto& e : pi.stage(x, y)) {
            if (!(e.mass > 0.0)) continue;
            json o{{"x", P.node(e.x).id}, {"y", Q.node(e.y).id}, {"mass", e.mass}};
            json kids = rec(e.x, e.y);
            if (!kids.empty()) o["children"] = kids;
            arr.push_back(o);
        }
        return arr;
    };
    json joint = json::array();
    for (const auto& lp : pi.flatten())
        joint.push_back(json{{"x", P.node(lp.x_leaf).id}, {"y", Q.node(lp.y_leaf).id}, {"mass", lp.mass}});
    return json{{"plan", rec(-1, -1)}, {"joint", joint}};
}

inline json to_json(const AdaptedResult& r) {
    return json{{"value", r.value}, {"coupling", coupling_to_json(*r.first, *r.second, r.coupling)}};
}

inline json plan_to_json(const PathLaw& P, const PathLaw& Q, const Mat& plan) {
    json joint = json::array();
    for (Eigen::Index i = 0; i < plan.rows(); ++i)
        for (Eigen::Index j = 0; j < plan.cols(); ++j)
            if (plan(i, j) > 0.0)
                joint.push_back(json{{"x", P.node(P.leaves()[i]).id}, {"y", Q.node(Q.leaves()[j]).id}, {"mass", plan(i, j)}});
    return joint;
}

inline json to_json(const StabilityReport& r, const PathLaw& Pp) {
    json out;
    out["distance"] = r.distance;
    out["distance_with_t0"] = r.distance_with_t0;
    out["distance_without_t0"] = r.distance_without_t0;
    out["include_t0"] = r.include_t0;
    out["epsilon"] = r.eps;
    out["epsilon_P"] = r.eps_P;
    out["epsilon_P_prime"] = r.eps_P_prime;
    out["canonicalized"] = r.canonicalized;
    out["emm_P"] = r.emm_P;
    out["emm_P_prime"] = r.emm_P_prime;
    if (r.transported && !r.canonicalized) {
        out["transported_measure"] = measure_to_json(Pp, *r.transported)["weights"];
    }
    if (r.transported) out["transported_deviation"] = r.transported_deviation;
    if (r.range_P) out["range_P"] = interval_json(*r.range_P);
    if (r.range_P_prime) {
        out["range_P_prime"] = interval_json(*r.range_P_prime);
        out["price_epsilon_prime"] = r.price_eps_prime;
    }
    json checks = json::array();
    auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
    for (const auto& c : r.checks) {
        json o{{"name", c.name}, {"applicable", c.applicable}, {"holds", c.holds}};
        if (c.applicable) {
            o["slack"] = num(c.slack);
            o["slack_without_t0"] = num(c.slack_without_t0);
        }
        if (!c.detail.empty()) o["detail"] = c.detail;
        checks.push_back(o);
    }
    out["checks"] = checks;
    out["all_hold"] = r.all_hold();
    return out;
}

}  // namespace epsarb::io
