#pragma once

#include <string>
#include <vector>

#include "epsarb/market.hpp"

namespace epsarb::testing {

inline std::string data_path(const std::string& name) { return std::string(EPSARB_DATA_DIR) + "/" + name; }

/// One-period market with a single root at `s0` and the given children.
inline MarketModel one_period(const std::vector<double>& s0, const std::vector<std::vector<double>>& children,
                              const std::vector<double>& probs = {}) {
    const int d = static_cast<int>(s0.size());
    std::vector<NodeSpec> specs{{"r", 0, "", 1.0, s0}};
    for (std::size_t k = 0; k < children.size(); ++k) {
        const double p = probs.empty() ? 1.0 / static_cast<double>(children.size()) : probs[k];
        specs.push_back({"w" + std::to_string(k + 1), 1, "r", p, children[k]});
    }
    return MarketModel(1, d, specs);
}

/// S0 = (0,0), S1 in {(eps,0),(eps,1)} with probabilities (a, 1-a).
inline MarketModel two_asset_example(double eps, double a = 0.5) {
    return one_period({0.0, 0.0}, {{eps, 0.0}, {eps, 1.0}}, {a, 1.0 - a});
}

/// Single-asset path through the given prices, with one child per node.
inline MarketModel deterministic_path(const std::vector<double>& prices) {
    std::vector<NodeSpec> specs;
    for (std::size_t t = 0; t < prices.size(); ++t)
        specs.push_back({"x" + std::to_string(t), static_cast<int>(t), t ? "x" + std::to_string(t - 1) : "", 1.0,
                         {prices[t]}});
    return MarketModel(static_cast<int>(prices.size()) - 1, 1, specs);
}

inline Vec vec(std::initializer_list<double> v) {
    Vec x(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double a : v) x[i++] = a;
    return x;
}

}  // namespace epsarb::testing
