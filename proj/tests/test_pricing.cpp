#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "epsarb/pricing.hpp"
#include "support/fixtures.hpp"
#include "support/random_markets.hpp"

using namespace epsarb;
using namespace epsarb::testing;

namespace {

double top_value(const MarketModel& m, const NormPair& np) {
    auto cv = node_critical_values(m, np);
    return *std::max_element(cv.begin(), cv.end());
}

Payoff random_payoff(const MarketModel& m, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    Payoff f;
    for (std::size_t k = 0; k < m.num_leaves(); ++k) f.values.push_back(u(rng));
    return f;
}

// S1 in {eps/2, 3 eps/2} uniform; the claim pays 1 on the upper leaf.
MarketModel price_range_market(double eps) { return one_period({0.0}, {{eps / 2.0}, {1.5 * eps}}); }

Payoff indicator(const MarketModel& m, const std::string& leaf) {
    Payoff f = Payoff::constant(m, 0.0);
    f.values[m.leaf_position(m.index_of(leaf))] = 1.0;
    return f;
}

}  // namespace

TEST(FindEmm, TwoAssetExampleIsInfeasibleAtEveryInteriorLevel) {
    const double eps = 0.5;
    auto m = two_asset_example(eps);
    for (double p : {1.5, 2.0, 3.0})
        for (double eta : {1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9}) {
            auto r = find_eps_martingale_measure(m, eps, NormPair(p), eta);
            EXPECT_FALSE(r.feasible) << "p=" << p << " eta=" << eta;
            EXPECT_FALSE(r.reason.empty());
        }
}

TEST(FindEmm, PriceRangeMarketGivesAlphaAtLeastOneHalf) {
    const double eps = 0.5, eta = 1e-7;
    auto m = price_range_market(eps);
    auto r = find_eps_martingale_measure(m, eps, NormPair(2.0), eta);
    ASSERT_TRUE(r.feasible);
    const double alpha = r.measure.weights[m.leaf_position(m.index_of("w1"))];
    EXPECT_GE(alpha, 0.5 - 1e-9);
    EXPECT_LT(alpha, 1.0 - eta);
    EXPECT_TRUE(r.measure.equivalent);
    EXPECT_TRUE(is_eps_martingale(m, r.measure, eps, NormPair(2.0), 1e-8).holds);
}

TEST(FindEmm, SymmetricSecondAssetGivesUniformMeasure) {
    const double eps = 0.5;
    auto m = one_period({0.0, 0.0}, {{eps, 1.0}, {eps, -1.0}});
    auto r = find_eps_martingale_measure(m, eps, NormPair(2.0), 1e-7);
    ASSERT_TRUE(r.feasible);
    EXPECT_NEAR(r.measure.weights[0], 0.5, 1e-8);
    EXPECT_NEAR(r.measure.weights[1], 0.5, 1e-8);
    EXPECT_NEAR(r.deviation, eps, 1e-8);
}

TEST(FindEmm, ReturnedMeasuresAreEpsMartingales) {
    std::mt19937_64 rng(31);
    int feasible = 0;
    for (int trial = 0; trial < 60; ++trial) {
        auto m = random_market(rng);
        for (double p : {1.0, 2.0, 3.0}) {
            NormPair np(p);
            const double eps = 1.2 * top_value(m, np) + 0.01;
            auto r = find_eps_martingale_measure(m, eps, np, 1e-7);
            ASSERT_TRUE(r.feasible) << trial;
            ++feasible;
            check_measure(m, r.measure, 1e-9);
            const auto P = m.leaf_probabilities();
            for (std::size_t k = 0; k < P.size(); ++k) EXPECT_GE(r.measure.weights[k], 0.999e-7 * P[k]);
            auto chk = is_eps_martingale(m, r.measure, eps, np, 1e-8);
            EXPECT_TRUE(chk.holds) << trial << " dev " << chk.max_deviation << " eps " << eps;
            EXPECT_NEAR(chk.max_deviation, r.deviation, 1e-8);
        }
    }
    EXPECT_EQ(feasible, 180);
}

TEST(FindEmm, ImpliesNoStrictArbitrage) {
    std::mt19937_64 rng(32);
    for (int trial = 0; trial < 60; ++trial) {
        auto m = random_market(rng);
        for (double p : {1.0, 2.0}) {
            NormPair np(p);
            const double top = top_value(m, np);
            for (double f : {0.2, 0.6, 0.9, 1.1, 2.0}) {
                if (find_eps_martingale_measure(m, f * top, np, 1e-7).feasible)
                    EXPECT_FALSE(detect_strict_arbitrage(m, f * top, np).found()) << trial << " f=" << f;
            }
        }
    }
}

TEST(RobustPriceBound, PriceRangeIndicator) {
    const double eps = 0.5;
    auto m = price_range_market(eps);
    auto psi = indicator(m, "w2");
    auto sup = robust_price_bound(m, eps, NormPair(2.0), psi, Direction::sup);
    EXPECT_NEAR(sup.value, 0.5, 1e-8);
    EXPECT_TRUE(sup.attained);
    EXPECT_TRUE(sup.witness.equivalent);
    auto inf = robust_price_bound(m, eps, NormPair(2.0), psi, Direction::inf);
    EXPECT_NEAR(inf.value, 0.0, 1e-8);
    EXPECT_FALSE(inf.attained);
}

TEST(RobustPriceBound, ConstantClaim) {
    std::mt19937_64 rng(33);
    for (int trial = 0; trial < 20; ++trial) {
        auto m = random_market(rng);
        NormPair np(2.0);
        const double eps = 1.5 * top_value(m, np) + 0.01;
        for (Direction dir : {Direction::sup, Direction::inf}) {
            auto b = robust_price_bound(m, eps, np, Payoff::constant(m, 2.5), dir);
            EXPECT_NEAR(b.value, 2.5, 1e-8);
            EXPECT_TRUE(b.attained);
        }
    }
}

TEST(RobustPriceBound, NegatedClaimSwapsDirections) {
    std::mt19937_64 rng(34);
    for (int trial = 0; trial < 30; ++trial) {
        auto m = random_market(rng);
        for (double p : {1.0, 2.0}) {
            NormPair np(p);
            const double eps = 1.3 * top_value(m, np) + 0.01;
            auto psi = random_payoff(m, rng);
            Payoff neg = psi;
            for (double& v : neg.values) v = -v;
            auto sup = robust_price_bound(m, eps, np, psi, Direction::sup);
            auto inf = robust_price_bound(m, eps, np, neg, Direction::inf);
            EXPECT_NEAR(sup.value, -inf.value, 1e-7 * (1.0 + std::abs(sup.value)));
        }
    }
}

TEST(RobustPriceBound, NoStructureIsADomainError) {
    auto m = two_asset_example(0.5);
    EXPECT_THROW(robust_price_bound(m, 0.5, NormPair(2.0), Payoff::constant(m, 1.0), Direction::sup), DomainError);
}

TEST(Superhedge, SingleAssetClaimOnPrice) {
    const double eps = 0.3;
    auto m = one_period({0.0}, {{1.0}, {-1.0}});
    Payoff psi{{1.0, -1.0}};
    for (double p : {1.0, 2.0}) {
        auto r = superhedge_price(m, eps, NormPair(p), psi);
        EXPECT_NEAR(r.price, eps, 1e-8);
        EXPECT_TRUE(r.certified);
        EXPECT_NEAR(r.certificate.x, eps, 1e-7);
        EXPECT_NEAR(r.certificate.H.at(m.index_of("r"))[0], 1.0, 1e-6);
    }
}

TEST(Superhedge, ZeroClaim) {
    auto m = one_period({0.0}, {{1.0}, {-1.0}});
    auto r = superhedge_price(m, 0.2, NormPair(2.0), Payoff::constant(m, 0.0));
    EXPECT_NEAR(r.price, 0.0, 1e-10);
    EXPECT_NEAR(r.certificate.x, 0.0, 1e-8);
    EXPECT_LT(r.certificate.H.at(m.index_of("r")).norm(), 1e-6);
}

TEST(Superhedge, ReplicableClaimInMartingaleMarket) {
    std::vector<NodeSpec> specs{{"r", 0, "", 1.0, {0.0}},   {"a", 1, "r", 0.5, {1.0}},
                                {"b", 1, "r", 0.5, {-1.0}}, {"a1", 2, "a", 0.5, {2.0}},
                                {"a2", 2, "a", 0.5, {0.0}}, {"b1", 2, "b", 0.5, {0.0}},
                                {"b2", 2, "b", 0.5, {-2.0}}};
    MarketModel m(2, 1, specs);
    Strategy h0 = Strategy::zero(m);
    h0.at(m.index_of("r")) = vec({2.0});
    h0.at(m.index_of("a")) = vec({-1.0});
    h0.at(m.index_of("b")) = vec({0.5});
    Payoff psi{gain(m, h0)};
    for (double& v : psi.values) v += 1.25;
    const double expected = MeasureWeights::reference(m).expectation(psi.values);
    for (double p : {1.0, 2.0}) {
        auto r = superhedge_price(m, 0.0, NormPair(p), psi);
        EXPECT_NEAR(r.price, expected, 1e-8);
        EXPECT_NEAR(r.certificate.x, expected, 1e-6);
        for (int v : m.internal_nodes())
            EXPECT_LT((r.certificate.H.at(v) + r.certificate.G.at(v) - h0.at(v)).norm(), 1e-5) << m.node(v).id;
        auto range = fair_price_range(m, 0.0, NormPair(p), psi);
        EXPECT_NEAR(range.lower, expected, 1e-7);
        EXPECT_NEAR(range.upper, expected, 1e-7);
    }
}

TEST(Superhedge, StrongDualityOnRandomMarkets) {
    std::mt19937_64 rng(35);
    for (int trial = 0; trial < 40; ++trial) {
        auto m = random_market(rng);
        for (double p : {1.0, 2.0}) {
            NormPair np(p);
            const double eps = 1.2 * top_value(m, np) + 0.05;
            auto psi = random_payoff(m, rng);
            auto r = superhedge_price(m, eps, np, psi);
            EXPECT_TRUE(r.certified) << trial;
            EXPECT_LE(std::abs(r.primal - r.price), 1e-6 * (1.0 + std::abs(r.price))) << trial << " p=" << p;
            for (double s : r.certificate.slack) EXPECT_GE(s, -1e-7);
        }
    }
}

TEST(Superhedge, DualityAtTheCriticalLevel) {
    std::mt19937_64 rng(36);
    int certified = 0, total = 0;
    for (int trial = 0; trial < 30; ++trial) {
        auto m = random_market(rng, {2, 2, 3, 8, 0.4});
        NormPair np(2.0);
        const double eps = top_value(m, np);
        auto st = compute_node_structure(m, eps, np);
        if (!find_eps_martingale_measure(m, st, 1e-7).feasible) continue;
        auto r = superhedge_price(m, st, random_payoff(m, rng));
        ++total;
        if (r.best_effort) continue;
        ++certified;
        EXPECT_LE(std::abs(r.primal - r.price), 1e-6 * (1.0 + std::abs(r.price))) << trial;
    }
    EXPECT_GT(total, 0);
    EXPECT_EQ(certified, total);
}

TEST(Superhedge, WeakDualityAgainstFoundMeasures) {
    std::mt19937_64 rng(37);
    for (int trial = 0; trial < 40; ++trial) {
        auto m = random_market(rng);
        for (double p : {1.0, 2.0}) {
            NormPair np(p);
            const double eps = 1.1 * top_value(m, np) + 0.02;
            auto psi = random_payoff(m, rng);
            auto hedge = superhedge_price(m, eps, np, psi);
            auto q = find_eps_martingale_measure(m, eps, np, 1e-7);
            ASSERT_TRUE(q.feasible);
            EXPECT_LE(q.measure.expectation(psi.values), hedge.certificate.x + 1e-8);
        }
    }
}

TEST(Superhedge, PriceGrowsWithEpsilon) {
    std::mt19937_64 rng(38);
    for (int trial = 0; trial < 20; ++trial) {
        auto m = random_market(rng);
        NormPair np(2.0);
        const double top = top_value(m, np);
        auto psi = random_payoff(m, rng);
        double prev = -kInf, prev_lo = kInf, prev_hi = -kInf;
        for (double f : {1.05, 1.3, 1.8, 3.0}) {
            const double eps = f * top + 0.01;
            const double price = superhedge_price(m, eps, np, psi).price;
            EXPECT_GE(price, prev - 1e-8) << trial;
            prev = price;
            auto range = fair_price_range(m, eps, np, psi);
            EXPECT_LE(range.lower, prev_lo + 1e-8);
            EXPECT_GE(range.upper, prev_hi - 1e-8);
            prev_lo = range.lower;
            prev_hi = range.upper;
        }
    }
}

TEST(FairPriceRange, PriceRangeIndicatorIsHalfOpen) {
    const double eps = 0.5;
    auto m = price_range_market(eps);
    auto r = fair_price_range(m, eps, NormPair(2.0), indicator(m, "w2"));
    EXPECT_NEAR(r.lower, -eps, 1e-8);
    EXPECT_NEAR(r.upper, 0.5 + eps, 1e-8);
    EXPECT_TRUE(r.lo_open());
    EXPECT_FALSE(r.hi_open());
    EXPECT_FALSE(r.inner_bound_only);
}

TEST(FairPriceRange, ConstantClaimIsClosed) {
    const double eps = 0.4;
    auto m = one_period({0.0}, {{1.0}, {-1.0}});
    for (double p : {1.0, 2.0}) {
        auto r = fair_price_range(m, eps, NormPair(p), Payoff::constant(m, 3.0));
        EXPECT_NEAR(r.lower, 3.0 - eps, 1e-8);
        EXPECT_NEAR(r.upper, 3.0 + eps, 1e-8);
        EXPECT_FALSE(r.lo_open());
        EXPECT_FALSE(r.hi_open());
        EXPECT_EQ(r.inner_bound_only, p == 1.0);
    }
}
