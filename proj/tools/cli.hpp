#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "epsarb/epsarb.hpp"

namespace epsarb::cli {

using json = io::json;

enum ExitCode : int { kComputed = 0, kInputError = 1, kDomain = 2, kSolver = 3 };

struct RunConfig {
    std::string command;
    std::vector<std::string> inputs;
    std::optional<double> eps, p, q, lambda, eta, tol;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> variant;
    std::optional<bool> include_t0;
    std::optional<std::string> out, payoff, reference;
    std::optional<int> dim, samples;
};

namespace detail {

struct Outcome {
    json report;
    int code = kComputed;
};

inline bool parse_bool(const std::string& s, const std::string& what) {
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw InputError(what + " must be true or false");
}

/**
 * Fills options absent from the command line from a JSON config file.
 * Keys are flag names with '-' spelled '_'; anything else is rejected.
 */
inline void apply_config(RunConfig& c, const json& j, const CLI::App& sub) {
    if (!j.is_object()) throw io::FieldError("", "config must be a JSON object");
    auto given = [&](const std::string& flag) {
        const CLI::Option* o = sub.get_option_no_throw("--" + flag);
        return o != nullptr && o->count() > 0;
    };
    auto accepts = [&](const std::string& flag) { return sub.get_option_no_throw("--" + flag) != nullptr; };
    for (auto it = j.begin(); it != j.end(); ++it) {
        std::string flag = it.key();
        std::replace(flag.begin(), flag.end(), '_', '-');
        const std::string ptr = "/" + it.key();
        if (!accepts(flag) || flag == "config")
            throw io::FieldError(ptr, "unknown config key '" + it.key() + "' for " + c.command);
        if (given(flag)) continue;
        const json& v = *it;
        auto num = [&]() { return io::detail::number(v, ptr); };
        auto str = [&]() { return io::detail::string(v, ptr); };
        if (flag == "eps") c.eps = num();
        else if (flag == "p") c.p = num();
        else if (flag == "q") c.q = num();
        else if (flag == "lambda") c.lambda = num();
        else if (flag == "eta") c.eta = num();
        else if (flag == "tol") c.tol = num();
        else if (flag == "seed") {
            if (!v.is_number_unsigned()) throw io::FieldError(ptr, "expected a non-negative integer");
            c.seed = v.get<std::uint64_t>();
        } else if (flag == "variant") c.variant = str();
        else if (flag == "include-t0") {
            if (v.is_boolean()) c.include_t0 = v.get<bool>();
            else c.include_t0 = parse_bool(str(), ptr);
        } else if (flag == "out") c.out = str();
        else if (flag == "payoff") c.payoff = str();
        else if (flag == "reference") c.reference = str();
        else if (flag == "dim") c.dim = io::detail::integer(v, ptr);
        else if (flag == "samples") c.samples = io::detail::integer(v, ptr);
        else throw io::FieldError(ptr, "unknown config key '" + it.key() + "'");
    }
}

inline void validate(const RunConfig& c) {
    if (c.eps && !(*c.eps >= 0.0 && std::isfinite(*c.eps))) throw InputError("--eps must be finite and >= 0");
    if (c.p && !(*c.p >= 1.0 && std::isfinite(*c.p))) throw InputError("--p must lie in [1, inf)");
    if (c.q && !(*c.q >= 1.0)) throw InputError("--q must be >= 1");
    if (c.lambda && !(*c.lambda > 0.0 && std::isfinite(*c.lambda))) throw InputError("--lambda must be > 0");
    if (c.eta && !(*c.eta > 0.0 && *c.eta <= 1.0)) throw InputError("--eta must lie in (0, 1]");
    if (c.tol && !(*c.tol > 0.0)) throw InputError("--tol must be > 0");
    if (c.variant && *c.variant != "delta" && *c.variant != "plain") throw InputError("--variant must be delta or plain");
    if (c.dim && *c.dim < 1) throw InputError("--dim must be >= 1");
    if (c.samples && *c.samples < 1) throw InputError("--samples must be >= 1");
}

struct Context {
    const RunConfig& cfg;

    io::MarketFile market(std::size_t k = 0) const {
        if (cfg.inputs.size() <= k) throw InputError(cfg.command + ": missing input file");
        return io::load_market(cfg.inputs[k]);
    }
    NormPair norms(const io::MarketFile& f) const { return NormPair(cfg.p.value_or(f.p)); }
    double eps(const io::MarketFile& f) const {
        if (cfg.eps) return *cfg.eps;
        if (f.has_eps) return f.eps;
        throw InputError(cfg.command + ": --eps is required (the market file carries no eps)");
    }
    double q(const io::MarketFile& f) const { return cfg.q ? *cfg.q : norms(f).q(); }
    CostVariant variant(CostVariant dflt) const {
        if (!cfg.variant) return dflt;
        return *cfg.variant == "delta" ? CostVariant::increments : CostVariant::levels;
    }
    PricingOptions pricing() const {
        PricingOptions o;
        if (cfg.eta) o.eta = *cfg.eta;
        if (cfg.tol) o.arb.tol = *cfg.tol;
        return o;
    }
    Payoff payoff(const MarketModel& m) const {
        if (!cfg.payoff) throw InputError(cfg.command + ": --payoff is required");
        try {
            return io::payoff_from_json(m, io::load_json(*cfg.payoff));
        } catch (const io::FieldError& e) {
            throw io::FieldError(e.pointer(), *cfg.payoff + ": " + e.message());
        }
    }
};

inline Outcome run_market_command(const Context& ctx) {
    const std::string& cmd = ctx.cfg.command;
    const io::MarketFile f = ctx.market();
    const MarketModel& m = f.market;
    const NormPair norms = ctx.norms(f);
    const PricingOptions po = ctx.pricing();
    Outcome out;
    json& r = out.report;
    r = json{{"command", cmd}, {"p", norms.p()}};

    if (cmd == "critical-value") {
        CriticalValueOptions co;
        co.arb = po.arb;
        r.update(io::to_json(m, critical_value(m, norms, co)));
        return out;
    }
    const double eps = ctx.eps(f);
    if (cmd == "check-arbitrage") {
        const ArbitrageReport a = detect_strict_arbitrage(m, eps, norms, po.arb);
        r.update(io::to_json(m, a));
        if (a.found()) out.code = kDomain;
    } else if (cmd == "node-structure") {
        r.update(io::to_json(m, compute_node_structure(m, eps, norms, po.arb)));
    } else if (cmd == "na-prime") {
        const NaPrimeReport n = check_na_prime(m, eps, norms, po.arb);
        r["epsilon"] = eps;
        r.update(io::to_json(m, n));
        if (!n.holds) out.code = kDomain;
    } else if (cmd == "find-emm") {
        const EmmResult e = find_eps_martingale_measure(m, eps, norms, po.eta, po);
        r["epsilon"] = eps;
        r["eta"] = po.eta;
        r.update(io::to_json(m, e));
        if (!e.feasible) out.code = kDomain;
    } else if (cmd == "superhedge") {
        const Payoff psi = ctx.payoff(m);
        r["epsilon"] = eps;
        r.update(io::to_json(m, superhedge_price(m, eps, norms, psi, po)));
    } else if (cmd == "price-bound") {
        const Payoff psi = ctx.payoff(m);
        const MarketStructure st = compute_node_structure(m, eps, norms, po.arb);
        r["epsilon"] = eps;
        r["sup"] = io::to_json(m, robust_price_bound(m, st, psi, Direction::sup, po));
        r["inf"] = io::to_json(m, robust_price_bound(m, st, psi, Direction::inf, po));
    } else if (cmd == "fair-range") {
        const Payoff psi = ctx.payoff(m);
        r["epsilon"] = eps;
        r.update(io::to_json(m, fair_price_range(m, eps, norms, psi, po)));
    } else {
        throw InputError("unknown command '" + cmd + "'");
    }
    return out;
}

inline Outcome run_transport_command(const Context& ctx) {
    const RunConfig& cfg = ctx.cfg;
    const std::string& cmd = cfg.command;
    if (cfg.inputs.size() < 2) throw InputError(cmd + ": expects two path-law files");
    const io::MarketFile a = ctx.market(0), b = ctx.market(1);
    const double q = ctx.q(a);
    const bool t0 = cfg.include_t0.value_or(true);
    Outcome out;
    json& r = out.report;
    r = json{{"command", cmd}, {"q", std::isinf(q) ? json("inf") : json(q)}, {"include_t0", t0}};
    if (cmd == "aw-delta" || cmd == "aw") {
        const CostVariant v = cmd == "aw-delta" ? CostVariant::increments : ctx.variant(CostVariant::levels);
        if (cmd == "aw-delta" && cfg.variant && *cfg.variant != "delta")
            throw InputError("aw-delta always uses increments; drop --variant or use 'aw'");
        r["variant"] = to_string(v);
        r.update(io::to_json(adapted_bottleneck(a.market, b.market, {q, v, t0})));
    } else if (cmd == "w-inf") {
        const CostVariant v = ctx.variant(CostVariant::levels);
        r["variant"] = to_string(v);
        const PlanResult pr = w_inf(a.market, b.market, q, v, t0);
        r["value"] = pr.value;
        r["plan"] = io::plan_to_json(a.market, b.market, pr.plan);
    } else if (cmd == "elog") {
        if (!cfg.lambda) throw InputError("elog: --lambda is required");
        const CostVariant v = ctx.variant(CostVariant::levels);
        r["variant"] = to_string(v);
        r["lambda"] = *cfg.lambda;
        r.update(io::to_json(elog_divergence(a.market, b.market, q, *cfg.lambda, v, t0)));
    } else if (cmd == "kr") {
        const CostVariant v = ctx.variant(CostVariant::levels);
        const PathLaw P = canonicalize(a.market), Q = canonicalize(b.market);
        const BicausalCoupling pi = knothe_rosenblatt(P, Q);
        r["variant"] = to_string(v);
        r["cost"] = coupling_esssup(P, Q, pi, {q, v, t0});
        r["coupling"] = io::coupling_to_json(P, Q, pi);
    } else if (cmd == "stability") {
        const NormPair norms = ctx.norms(a);
        const double eps = ctx.eps(a);
        std::optional<PathPayoff> psi;
        if (cfg.payoff) {
            try {
                psi = io::path_payoff_from_json(io::load_json(*cfg.payoff), a.market.horizon(), a.market.dim(), norms);
            } catch (const io::FieldError& e) {
                throw io::FieldError(e.pointer(), *cfg.payoff + ": " + e.message());
            }
        }
        StabilityOptions so;
        so.include_t0 = t0;
        so.pricing = ctx.pricing();
        if (cfg.tol) so.tol = *cfg.tol;
        const StabilityReport rep = stability_report(a.market, b.market, eps, norms, psi, so);
        r["p"] = norms.p();
        r["q"] = std::isinf(norms.q()) ? json("inf") : json(norms.q());
        if (psi) r["lipschitz"] = psi->lipschitz;
        r.update(io::to_json(rep, b.market));
        if (!rep.all_hold()) out.code = kDomain;
    } else {
        throw InputError("unknown command '" + cmd + "'");
    }
    return out;
}

inline std::vector<std::vector<double>> sample_paths(const PathLaw& P, std::size_t n, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const auto probs = P.leaf_probabilities();
    std::vector<double> cdf(probs.size());
    std::partial_sum(probs.begin(), probs.end(), cdf.begin());
    std::vector<std::vector<double>> out;
    for (std::size_t s = 0; s < n; ++s) {
        const double x = u(rng) * cdf.back();
        const std::size_t k = std::min<std::size_t>(
            static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), x) - cdf.begin()), cdf.size() - 1);
        std::vector<double> row;
        for (int v : P.path_to(P.leaves()[k]))
            for (int i = 0; i < P.dim(); ++i) row.push_back(P.node(v).prices[i]);
        out.push_back(std::move(row));
    }
    return out;
}

inline bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

inline Outcome run_empirical(const Context& ctx) {
    const RunConfig& cfg = ctx.cfg;
    if (cfg.inputs.empty()) throw InputError("adapted-empirical: expects a sample CSV or a path-law JSON file");
    const std::string& src = cfg.inputs[0];
    std::vector<std::vector<double>> samples;
    std::optional<io::MarketFile> law;
    int dim = cfg.dim.value_or(1);
    if (ends_with(src, ".json")) {
        law = io::load_market(src);
        if (!cfg.samples) throw InputError("adapted-empirical: --samples is required when sampling from a path law");
        dim = law->market.dim();
        samples = sample_paths(law->market, static_cast<std::size_t>(*cfg.samples), cfg.seed.value_or(0));
    } else {
        samples = io::read_samples_csv(src);
    }
    const std::size_t width = samples.front().size();
    if (width % static_cast<std::size_t>(dim) != 0 || width / static_cast<std::size_t>(dim) < 2)
        throw InputError("adapted-empirical: rows of " + std::to_string(width) + " values do not split into d = " +
                         std::to_string(dim) + " coordinates over at least two dates");
    const int T = static_cast<int>(width / static_cast<std::size_t>(dim)) - 1;
    const PathLaw emp = adapted_empirical(samples, T, dim);
    const QuantizerConfig qc{samples.size(), T, dim};
    Outcome out;
    json& r = out.report;
    r = json{{"command", cfg.command},
             {"samples", samples.size()},
             {"exponent", qc.exponent()},
             {"cells_per_axis", qc.cells_per_axis()},
             {"law", io::market_to_json(emp, cfg.p.value_or(2.0))}};
    if (law) r["seed"] = cfg.seed.value_or(0);
    std::optional<io::MarketFile> ref = law;
    if (cfg.reference) ref = io::load_market(*cfg.reference);
    if (cfg.lambda) {
        if (!ref) throw InputError("adapted-empirical: --lambda needs a reference law (--reference or a JSON input)");
        const double q = ctx.q(*ref);
        r["lambda"] = *cfg.lambda;
        r["elog"] = elog_divergence(emp, ref->market, q, *cfg.lambda, ctx.variant(CostVariant::levels),
                                    cfg.include_t0.value_or(true)).value;
    }
    return out;
}

inline Outcome dispatch(const RunConfig& cfg) {
    validate(cfg);
    const Context ctx{cfg};
    static const std::vector<std::string> market_cmds{"check-arbitrage", "critical-value", "node-structure", "na-prime",
                                                      "find-emm",        "superhedge",     "price-bound",    "fair-range"};
    if (std::find(market_cmds.begin(), market_cmds.end(), cfg.command) != market_cmds.end())
        return run_market_command(ctx);
    if (cfg.command == "adapted-empirical") return run_empirical(ctx);
    return run_transport_command(ctx);
}

inline json error_json(const char* kind, const std::string& msg, const std::string& pointer = "") {
    json e{{"error", kind}, {"message", msg}};
    if (!pointer.empty()) e["pointer"] = pointer;
    return e;
}

}  // namespace detail

/// Command names in dispatch order.
inline const std::vector<std::pair<std::string, std::string>>& commands() {
    static const std::vector<std::pair<std::string, std::string>> list{
        {"check-arbitrage", "search for a strict eps-arbitrage (exit 2 if one exists)"},
        {"critical-value", "critical value eps(P) with primal and dual estimates"},
        {"node-structure", "per-node extremal direction and F-perp bases"},
        {"na-prime", "check the NA' condition (exit 2 if it fails)"},
        {"find-emm", "find an equivalent eps-martingale measure (exit 2 if none)"},
        {"superhedge", "eps-superhedging price with a hedge certificate"},
        {"price-bound", "sup and inf of E_Q[Psi] over eps-martingale measures"},
        {"fair-range", "eps-fair price interval with openness flags"},
        {"aw-delta", "adapted L-infinity distance on increments"},
        {"aw", "adapted L-infinity distance (--variant delta|plain)"},
        {"w-inf", "non-causal L-infinity Wasserstein distance"},
        {"elog", "adapted log-exponential divergence"},
        {"kr", "Knothe-Rosenblatt coupling and its cost"},
        {"adapted-empirical", "adapted empirical measure of samples"},
        {"stability", "stability inequalities between two markets (exit 2 if one fails)"},
    };
    return list;
}

/**
 * Parses args (without the program name), runs one command and writes the JSON
 * report to `out` or to --out. Returns the process exit code.
 */
inline int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    RunConfig cfg;
    std::string config_path, include_t0_text;
    CLI::App app{"Quantitative arbitrage, pricing and adapted transport on finite market trees", "epsarb"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "help for every command");
    std::vector<CLI::App*> subs;
    for (const auto& [name, desc] : commands()) {
        CLI::App* s = app.add_subcommand(name, desc);
        const bool market_cmd = name == "check-arbitrage" || name == "critical-value" || name == "node-structure" ||
                                name == "na-prime" || name == "find-emm" || name == "superhedge" ||
                                name == "price-bound" || name == "fair-range";
        const bool pair_cmd = name == "aw-delta" || name == "aw" || name == "w-inf" || name == "elog" || name == "kr";
        s->add_option("inputs", cfg.inputs, "input files")->required();
        s->add_option("--config", config_path, "JSON file with default option values");
        s->add_option("--out", cfg.out, "write the report to this file");
        s->add_option("--tol", cfg.tol, "solver tolerance");
        if (market_cmd || name == "stability") {
            s->add_option("--p", cfg.p, "strategy norm exponent (default: the market file's p)");
            if (name != "critical-value") s->add_option("--eps", cfg.eps, "cost level eps (default: the file's eps)");
            s->add_option("--eta", cfg.eta, "interior level for equivalent measures");
        }
        if (name == "superhedge" || name == "price-bound" || name == "fair-range" || name == "stability")
            s->add_option("--payoff", cfg.payoff, "payoff JSON file");
        if (pair_cmd || name == "stability" || name == "adapted-empirical") {
            s->add_option("--include-t0", include_t0_text, "include the t = 0 term in the cost (true|false)");
        }
        if (pair_cmd || name == "adapted-empirical") {
            s->add_option("--q", cfg.q, "norm exponent of the stage cost");
            s->add_option("--p", cfg.p, "strategy norm exponent; --q defaults to its conjugate");
            if (name != "aw-delta") s->add_option("--variant", cfg.variant, "stage cost: delta (increments) or plain (levels)");
        }
        if (name == "elog" || name == "adapted-empirical") s->add_option("--lambda", cfg.lambda, "exponential rate");
        if (name == "adapted-empirical") {
            s->add_option("--seed", cfg.seed, "seed when sampling from a path law");
            s->add_option("--samples", cfg.samples, "number of samples drawn from a path-law input");
            s->add_option("--dim", cfg.dim, "coordinates per date in CSV input (default 1)");
            s->add_option("--reference", cfg.reference, "path law for the elog comparison");
        }
        subs.push_back(s);
    }

    std::vector<std::string> rev(args.rbegin(), args.rend());
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        const CLI::App* active = &app;
        for (CLI::App* s : subs)
            if (s->parsed()) active = s;
        out << active->help();
        return kComputed;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kComputed;
    } catch (const CLI::ParseError& e) {
        err << detail::error_json("input", e.what()).dump() << "\n";
        return kInputError;
    }

    detail::Outcome res;
    try {
        CLI::App* sub = nullptr;
        for (CLI::App* s : subs)
            if (s->parsed()) sub = s;
        cfg.command = sub->get_name();
        if (!include_t0_text.empty()) cfg.include_t0 = detail::parse_bool(include_t0_text, "--include-t0");
        if (!config_path.empty()) {
            try {
                detail::apply_config(cfg, io::load_json(config_path), *sub);
            } catch (const io::FieldError& e) {
                throw io::FieldError(e.pointer(), config_path + ": " + e.message());
            }
        }
        res = detail::dispatch(cfg);
    } catch (const io::FieldError& e) {
        err << detail::error_json("input", e.message(), e.pointer()).dump() << "\n";
        return kInputError;
    } catch (const InputError& e) {
        err << detail::error_json("input", e.what()).dump() << "\n";
        return kInputError;
    } catch (const std::invalid_argument& e) {
        err << detail::error_json("input", e.what()).dump() << "\n";
        return kInputError;
    } catch (const DomainError& e) {
        res.report = json{{"command", cfg.command}, {"error", "domain"}, {"message", e.what()}};
        res.code = kDomain;
    } catch (const SolverError& e) {
        err << detail::error_json("solver", e.what()).dump() << "\n";
        return kSolver;
    }

    const std::string text = res.report.dump(2) + "\n";
    if (cfg.out) {
        std::ofstream f(*cfg.out, std::ios::binary);
        if (!f) {
            err << detail::error_json("input", "cannot write '" + *cfg.out + "'").dump() << "\n";
            return kInputError;
        }
        f << text;
    } else {
        out << text;
    }
    return res.code;
}

}  // namespace epsarb::cli
