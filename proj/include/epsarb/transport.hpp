#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <limits>
#include <vector>

#include "epsarb/errors.hpp"
#include "epsarb/norms.hpp"

namespace epsarb {

/// min sum gamma_ij c_ij over couplings of (source, target).
struct TransportInstance {
    Mat cost;
    Vec source;
    Vec target;

    void validate(double tol = 1e-12) const {
        if (cost.rows() != source.size() || cost.cols() != target.size())
            throw InputError("transport cost matrix does not match marginals");
        if (source.size() == 0 || target.size() == 0) throw InputError("transport marginals must be non-empty");
        if (!cost.allFinite()) throw InputError("transport costs must be finite");
        if (source.minCoeff() < 0.0 || target.minCoeff() < 0.0) throw InputError("transport marginals must be non-negative");
        const double s = source.sum(), t = target.sum();
        if (std::abs(s - t) > tol * std::max(1.0, s))
            throw InputError("transport marginals have different mass");
    }
};

struct TransportResult {
    double value = 0.0;
    Mat plan;
};

namespace detail {

// Transportation simplex on a spanning-tree basis of the bipartite graph.
class TransportSimplex {
public:
    explicit TransportSimplex(const TransportInstance& inst)
        : c_(inst.cost), m_(static_cast<int>(inst.source.size())), n_(static_cast<int>(inst.target.size())) {
        x_ = Mat::Zero(m_, n_);
        basic_.assign(static_cast<std::size_t>(m_) * n_, 0);
        // North-west corner start; degenerate zeros keep m+n-1 basic cells.
        Vec a = inst.source, b = inst.target;
        b *= a.sum() / b.sum();
        int i = 0, j = 0;
        while (true) {
            const double q = std::min(a[i], b[j]);
            x_(i, j) = q;
            set_basic(i, j, true);
            a[i] -= q;
            b[j] -= q;
            if (i == m_ - 1 && j == n_ - 1) break;
            if (i == m_ - 1) ++j;
            else if (j == n_ - 1) ++i;
            else if (a[i] <= b[j]) ++i;
            else ++j;
        }
    }

    void solve() {
        const int cap = 50 * (m_ + n_) * (m_ + n_) + 1000;
        int degenerate = 0;
        for (int it = 0; it < cap; ++it) {
            compute_potentials();
            int ei = -1, ej = -1;
            double best = 0.0;
            const bool bland = degenerate > 2 * (m_ + n_);
            for (int i = 0; i < m_ && !(bland && ei >= 0); ++i)
                for (int j = 0; j < n_; ++j) {
                    if (is_basic(i, j)) continue;
                    const double r = c_(i, j) - u_[i] - v_[j];
                    if (r < -1e-12 * (1.0 + std::abs(c_(i, j))) && r < best) {
                        best = bland ? best : r;
                        ei = i;
                        ej = j;
                        if (bland) break;
                    }
                }
            if (ei < 0) return;
            const double theta = pivot(ei, ej);
            degenerate = theta <= 0.0 ? degenerate + 1 : 0;
        }
        throw SolverError("transportation simplex did not converge");
    }

    const Mat& plan() const { return x_; }

private:
    bool is_basic(int i, int j) const { return basic_[static_cast<std::size_t>(i) * n_ + j] != 0; }
    void set_basic(int i, int j, bool v) { basic_[static_cast<std::size_t>(i) * n_ + j] = v ? 1 : 0; }

    // Node k < m is row k; node m + j is column j.
    void compute_potentials() {
        u_.assign(m_, 0.0);
        v_.assign(n_, 0.0);
        std::vector<char> seen(m_ + n_, 0);
        std::deque<int> queue{0};
        seen[0] = 1;
        while (!queue.empty()) {
            const int k = queue.front();
            queue.pop_front();
            if (k < m_) {
                for (int j = 0; j < n_; ++j)
                    if (is_basic(k, j) && !seen[m_ + j]) {
                        v_[j] = c_(k, j) - u_[k];
                        seen[m_ + j] = 1;
                        queue.push_back(m_ + j);
                    }
            } else {
                const int j = k - m_;
                for (int i = 0; i < m_; ++i)
                    if (is_basic(i, j) && !seen[i]) {
                        u_[i] = c_(i, j) - v_[j];
                        seen[i] = 1;
                        queue.push_back(i);
                    }
            }
        }
    }

    // Enters (ei, ej), returns the step length.
    double pivot(int ei, int ej) {
        // Tree path from column ej to row ei.
        std::vector<int> prev(m_ + n_, -1);
        std::vector<char> seen(m_ + n_, 0);
        std::deque<int> queue{m_ + ej};
        seen[m_ + ej] = 1;
        while (!queue.empty() && !seen[ei]) {
            const int k = queue.front();
            queue.pop_front();
            if (k < m_) {
                for (int j = 0; j < n_; ++j)
                    if (is_basic(k, j) && !seen[m_ + j]) {
                        seen[m_ + j] = 1;
                        prev[m_ + j] = k;
                        queue.push_back(m_ + j);
                    }
            } else {
                const int j = k - m_;
                for (int i = 0; i < m_; ++i)
                    if (is_basic(i, j) && !seen[i]) {
                        seen[i] = 1;
                        prev[i] = k;
                        queue.push_back(i);
                    }
            }
        }
        // Cycle: (ei,ej)+, then alternating along the path from row ei back to column ej.
        std::vector<std::pair<int, int>> cells;
        for (int k = ei; prev[k] >= 0; k = prev[k]) {
            const int p = prev[k];
            cells.push_back(k < m_ ? std::make_pair(k, p - m_) : std::make_pair(p, k - m_));
        }
        // cells[0] touches row ei: it receives -, then +, ...
        double theta = kInf;
        int leave = -1;
        for (std::size_t t = 0; t < cells.size(); t += 2) {
            const auto [i, j] = cells[t];
            if (x_(i, j) < theta || (x_(i, j) == theta && cells[t] < cells[leave])) {
                theta = x_(i, j);
                leave = static_cast<int>(t);
            }
        }
        x_(ei, ej) += theta;
        for (std::size_t t = 0; t < cells.size(); ++t) {
            const auto [i, j] = cells[t];
            x_(i, j) += (t % 2 == 0) ? -theta : theta;
        }
        const auto [li, lj] = cells[leave];
        x_(li, lj) = 0.0;
        set_basic(li, lj, false);
        set_basic(ei, ej, true);
        return theta;
    }

    Mat c_;
    int m_, n_;
    Mat x_;
    std::vector<char> basic_;
    std::vector<double> u_, v_;
};

// Max-flow on source -> rows -> admissible cells -> columns -> sink.
inline double admissible_flow(const TransportInstance& inst, const std::vector<char>& allowed, Mat& flow) {
    const int m = static_cast<int>(inst.source.size());
    const int n = static_cast<int>(inst.target.size());
    flow = Mat::Zero(m, n);
    Vec row_in = Vec::Zero(m), col_out = Vec::Zero(n);
    const double tiny = 1e-15;
    double total = 0.0;
    // BFS state over nodes: 0..m-1 rows, m..m+n-1 columns.
    while (true) {
        std::vector<int> prev(m + n, -2);
        std::deque<int> queue;
        for (int i = 0; i < m; ++i)
            if (inst.source[i] - row_in[i] > tiny) {
                prev[i] = -1;
                queue.push_back(i);
            }
        int sink_col = -1;
        while (!queue.empty() && sink_col < 0) {
            const int k = queue.front();
            queue.pop_front();
            if (k < m) {
                for (int j = 0; j < n; ++j) {
                    if (!allowed[static_cast<std::size_t>(k) * n + j] || prev[m + j] != -2) continue;
                    prev[m + j] = k;
                    if (inst.target[j] - col_out[j] > tiny) {
                        sink_col = j;
                        break;
                    }
                    queue.push_back(m + j);
                }
            } else {
                const int j = k - m;
                for (int i = 0; i < m; ++i)
                    if (prev[i] == -2 && flow(i, j) > tiny) {
                        prev[i] = k;
                        queue.push_back(i);
                    }
            }
        }
        if (sink_col < 0) break;
        // Bottleneck along the path.
        double delta = inst.target[sink_col] - col_out[sink_col];
        int k = m + sink_col;
        while (true) {
            const int p = prev[k];
            if (k >= m) {
                // forward edge, uncapacitated
            } else if (p == -1) {
                delta = std::min(delta, inst.source[k] - row_in[k]);
                break;
            } else {
                delta = std::min(delta, flow(k, p - m));  // backward edge
            }
            k = p;
        }
        k = m + sink_col;
        col_out[sink_col] += delta;
        while (true) {
            const int p = prev[k];
            if (k >= m) {
                flow(p, k - m) += delta;
            } else if (p == -1) {
                row_in[k] += delta;
                break;
            } else {
                flow(k, p - m) -= delta;
            }
            k = p;
        }
        total += delta;
    }
    return total;
}

}  // namespace detail

/// Exact min-cost coupling (a vertex of the transportation polytope).
inline TransportResult discrete_ot(const TransportInstance& inst) {
    inst.validate(1e-9);
    detail::TransportSimplex simplex(inst);
    simplex.solve();
    TransportResult res;
    res.plan = simplex.plan().cwiseMax(0.0);
    res.value = (res.plan.array() * inst.cost.array()).sum();
    return res;
}

/// True iff some coupling is supported on cells with cost <= lambda.
inline bool transport_feasible_below(const TransportInstance& inst, double lambda, double tol = 1e-12) {
    inst.validate(1e-9);
    const int m = static_cast<int>(inst.source.size()), n = static_cast<int>(inst.target.size());
    std::vector<char> allowed(static_cast<std::size_t>(m) * n);
    for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) allowed[static_cast<std::size_t>(i) * n + j] = inst.cost(i, j) <= lambda;
    Mat flow;
    return detail::admissible_flow(inst, allowed, flow) >= inst.source.sum() - tol;
}

/**
 * min over couplings of the largest cost on the support.
 *
 * Binary search over the sorted distinct costs; feasibility by max-flow with
 * deterministic (row, column) exploration order.
 */
inline TransportResult bottleneck_transport(const TransportInstance& inst, double tol = 1e-12) {
    inst.validate(1e-9);
    const int m = static_cast<int>(inst.source.size()), n = static_cast<int>(inst.target.size());
    std::vector<double> levels(inst.cost.data(), inst.cost.data() + inst.cost.size());
    std::sort(levels.begin(), levels.end());
    levels.erase(std::unique(levels.begin(), levels.end()), levels.end());
    const double mass = inst.source.sum();
    auto attempt = [&](double lambda, Mat& flow) {
        std::vector<char> allowed(static_cast<std::size_t>(m) * n);
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) allowed[static_cast<std::size_t>(i) * n + j] = inst.cost(i, j) <= lambda;
        return detail::admissible_flow(inst, allowed, flow) >= mass - tol;
    };
    std::size_t lo = 0, hi = levels.size() - 1;
    Mat flow;
    while (lo < hi) {
        const std::size_t mid = (lo + hi) / 2;
        if (attempt(levels[mid], flow)) hi = mid;
        else lo = mid + 1;
    }
    attempt(levels[lo], flow);
    TransportResult res;
    res.value = levels[lo];
    res.plan = flow;
    return res;
}

/// max cost over cells carrying positive mass.
inline double support_max(const Mat& plan, const Mat& cost, double mass_tol = 0.0) {
    double v = -kInf;
    for (Eigen::Index i = 0; i < plan.rows(); ++i)
        for (Eigen::Index j = 0; j < plan.cols(); ++j)
            if (plan(i, j) > mass_tol) v = std::max(v, cost(i, j));
    return v;
}

}  // namespace epsarb
