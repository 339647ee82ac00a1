#pragma once

#include <cmath>
#include <limits>
#include <vector>

// Dense two-phase simplex with Bland's rule, kept separate from the library
// solver so that oracle tests do not share code with what they check.
namespace epsarb::testing {

struct TinyLpResult {
    enum Status { optimal, infeasible, unbounded } status = infeasible;
    double value = 0.0;
    std::vector<double> x;
};

/// min c.x  s.t.  A x = b, x >= 0, with tableau arithmetic in `Real`.
template <class Real = double>
inline TinyLpResult tiny_lp(std::vector<std::vector<double>> A, std::vector<double> b, const std::vector<double>& c) {
    const Real tol = 1e-11;
    const std::size_t m = A.size(), n = c.size();
    for (std::size_t i = 0; i < m; ++i)
        if (b[i] < 0) {
            for (double& a : A[i]) a = -a;
            b[i] = -b[i];
        }
    // Columns: n originals, m artificials, then rhs.
    const std::size_t W = n + m + 1;
    std::vector<std::vector<Real>> T(m, std::vector<Real>(W, 0.0));
    std::vector<std::size_t> basis(m);
    for (std::size_t i = 0; i < m; ++i) {
        for (std::size_t j = 0; j < n; ++j) T[i][j] = A[i][j];
        T[i][n + i] = 1.0;
        T[i][W - 1] = b[i];
        basis[i] = n + i;
    }
    std::vector<char> row_alive(m, 1);

    auto pivot = [&](std::size_t r, std::size_t col) {
        const Real p = T[r][col];
        for (Real& v : T[r]) v /= p;
        for (std::size_t i = 0; i < m; ++i) {
            if (i == r || !row_alive[i]) continue;
            const Real f = T[i][col];
            if (f != 0.0)
                for (std::size_t j = 0; j < W; ++j) T[i][j] -= f * T[r][j];
        }
        basis[r] = col;
    };

    // Returns false when unbounded.
    auto optimize = [&](const std::vector<Real>& cost, std::size_t allowed) {
        for (int iter = 0; iter < 100000; ++iter) {
            std::size_t enter = W;
            for (std::size_t j = 0; j < allowed && enter == W; ++j) {
                Real d = cost[j];
                for (std::size_t i = 0; i < m; ++i)
                    if (row_alive[i]) d -= cost[basis[i]] * T[i][j];
                if (d < -1e-10) enter = j;
            }
            if (enter == W) return true;
            std::size_t leave = m;
            Real best = std::numeric_limits<Real>::infinity();
            for (std::size_t i = 0; i < m; ++i) {
                if (!row_alive[i] || T[i][enter] <= tol) continue;
                const Real r = T[i][W - 1] / T[i][enter];
                if (r < best - 1e-14 || (r <= best + 1e-14 && leave < m && basis[i] < basis[leave])) {
                    best = r;
                    leave = i;
                }
            }
            if (leave == m) return false;
            pivot(leave, enter);
        }
        return true;
    };

    std::vector<Real> phase1(n + m, 0.0);
    for (std::size_t i = 0; i < m; ++i) phase1[n + i] = 1.0;
    optimize(phase1, n + m);
    Real infeas = 0.0;
    for (std::size_t i = 0; i < m; ++i)
        if (basis[i] >= n) infeas += T[i][W - 1];
    TinyLpResult res;
    if (infeas > 1e-9) return res;

    // Drive remaining artificials out of the basis or drop their rows.
    for (std::size_t i = 0; i < m; ++i) {
        if (basis[i] < n) continue;
        std::size_t col = n;
        for (std::size_t j = 0; j < n && col == n; ++j)
            if (T[i][j] > 1e-9 || T[i][j] < -1e-9) col = j;
        if (col == n) row_alive[i] = 0;
        else pivot(i, col);
    }

    std::vector<Real> phase2(n + m, 0.0);
    for (std::size_t j = 0; j < n; ++j) phase2[j] = c[j];
    if (!optimize(phase2, n)) {
        res.status = TinyLpResult::unbounded;
        return res;
    }
    res.status = TinyLpResult::optimal;
    res.x.assign(n, 0.0);
    for (std::size_t i = 0; i < m; ++i)
        if (row_alive[i] && basis[i] < n) res.x[basis[i]] = static_cast<double>(T[i][W - 1]);
    Real value = 0.0;
    for (std::size_t j = 0; j < n; ++j) value += c[j] * static_cast<Real>(res.x[j]);
    res.value = static_cast<double>(value);
    return res;
}

}  // namespace epsarb::testing
