#pragma once

// Existence test for a label-balanced sample re-weighting: find a in the
// probability simplex with sum_i (2 y_ik - 1) a_i = 0 for every attribute k
// and every a_i bounded away from zero.

#include <cmath>
#include <cstddef>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "labelbal/datagen.hpp"
#include "labelbal/error.hpp"
#include "labelbal/numkit.hpp"

namespace labelbal {

namespace lp {

enum class Status { optimal, infeasible, unbounded };

struct Result {
    Status status = Status::infeasible;
    Vector x;
    double objective = 0.0;
};

/// Dense two-phase tableau simplex for
///     minimize c^T x  subject to  A x = b, x >= 0
/// using Bland's rule for both entering and leaving variables, so it
/// terminates on degenerate problems.
class Simplex {
public:
    Simplex(const Matrix& A, Vector b, Vector c, double tol = 1e-11) : m_(A.rows), n_(A.cols), tol_(tol) {
        require_shape(b.size() == m_ && c.size() == n_, "simplex problem");
        // columns: n structural, m artificial, then rhs
        width_ = n_ + m_ + 1;
        tab_.assign((m_ + 1) * width_, 0.0);
        basis_.resize(m_);
        for (std::size_t i = 0; i < m_; ++i) {
            const double sgn = b[i] < 0.0 ? -1.0 : 1.0;
            for (std::size_t j = 0; j < n_; ++j) {
                at(i, j) = sgn * A(i, j);
            }
            at(i, n_ + i) = 1.0;
            at(i, rhs()) = sgn * b[i];
            basis_[i] = n_ + i;
        }
        cost_ = std::move(c);
    }

    Result solve() {
        Result res;
        // phase one: minimize the sum of artificials
        set_objective([&](std::size_t j) { return j >= n_ && j < n_ + m_ ? 1.0 : 0.0; });
        run(n_ + m_);
        if (-at(m_, rhs()) > 1e-9) {
            res.status = Status::infeasible;
            return res;
        }
        drive_out_artificials();
        // phase two
        set_objective([&](std::size_t j) { return j < n_ ? cost_[j] : 0.0; });
        if (!run(n_)) {
            res.status = Status::unbounded;
            return res;
        }
        res.status = Status::optimal;
        res.x.assign(n_, 0.0);
        for (std::size_t i = 0; i < active_rows(); ++i) {
            if (basis_[i] < n_) {
                res.x[basis_[i]] = at(i, rhs());
            }
        }
        res.objective = -at(m_, rhs());
        return res;
    }

private:
    double& at(std::size_t r, std::size_t c) { return tab_[r * width_ + c]; }
    std::size_t rhs() const { return width_ - 1; }
    std::size_t active_rows() const { return basis_.size(); }

    template <class CostFn>
    void set_objective(CostFn cost) {
        for (std::size_t j = 0; j < width_; ++j) {
            at(m_, j) = j < rhs() ? cost(j) : 0.0;
        }
        for (std::size_t i = 0; i < active_rows(); ++i) {
            const double cb = cost(basis_[i]);
            if (cb != 0.0) {
                for (std::size_t j = 0; j < width_; ++j) {
                    at(m_, j) -= cb * at(i, j);
                }
            }
        }
    }

    void pivot(std::size_t r, std::size_t s) {
        const double inv = 1.0 / at(r, s);
        for (std::size_t j = 0; j < width_; ++j) {
            at(r, j) *= inv;
        }
        at(r, s) = 1.0;
        for (std::size_t i = 0; i <= m_; ++i) {
            if (i == r || (i < m_ && i >= active_rows())) {
                continue;
            }
            const double f = at(i, s);
            if (f == 0.0) {
                continue;
            }
            for (std::size_t j = 0; j < width_; ++j) {
                at(i, j) -= f * at(r, j);
            }
            at(i, s) = 0.0;
        }
        basis_[r] = s;
    }

    /// Returns false when the objective is unbounded below.
    bool run(std::size_t allowed_columns) {
        while (true) {
            std::size_t enter = width_;
            for (std::size_t j = 0; j < allowed_columns; ++j) {
                if (at(m_, j) < -tol_) {
                    enter = j;
                    break;
                }
            }
            if (enter == width_) {
                return true;
            }
            std::size_t leave = m_;
            double best = 0.0;
            for (std::size_t i = 0; i < active_rows(); ++i) {
                const double a = at(i, enter);
                if (a <= tol_) {
                    continue;
                }
                const double ratio = at(i, rhs()) / a;
                if (leave == m_ || ratio < best - 1e-15 || (std::abs(ratio - best) <= 1e-15 && basis_[i] < basis_[leave])) {
                    leave = i;
                    best = ratio;
                }
            }
            if (leave == m_) {
                return false;
            }
            pivot(leave, enter);
        }
    }

    /// Pivot zero-valued artificials out of the basis; rows where that is
    /// impossible are redundant and get dropped.
    void drive_out_artificials() {
        std::size_t i = 0;
        while (i < active_rows()) {
            if (basis_[i] < n_) {
                ++i;
                continue;
            }
            std::size_t col = n_;
            for (std::size_t j = 0; j < n_; ++j) {
                if (std::abs(at(i, j)) > 1e-9) {
                    col = j;
                    break;
                }
            }
            if (col < n_) {
                pivot(i, col);
                ++i;
                continue;
            }
            // redundant row: swap with the last active row and shrink
            const std::size_t last = active_rows() - 1;
            if (i != last) {
                for (std::size_t j = 0; j < width_; ++j) {
                    std::swap(at(i, j), at(last, j));
                }
                std::swap(basis_[i], basis_[last]);
            }
            for (std::size_t j = 0; j < width_; ++j) {
                at(last, j) = 0.0;
            }
            basis_.pop_back();
        }
        // block artificial columns from re-entering
        for (std::size_t r = 0; r < active_rows(); ++r) {
            for (std::size_t j = n_; j < n_ + m_; ++j) {
                at(r, j) = 0.0;
            }
        }
    }

    std::size_t m_;
    std::size_t n_;
    std::size_t width_ = 0;
    double tol_;
    std::vector<double> tab_;
    std::vector<std::size_t> basis_;
    Vector cost_;
};

} // namespace lp

struct FeasibilityResult {
    bool feasible = false;
    std::optional<Vector> witness_a;
    double max_min_weight = 0.0; // optimal epsilon*
    std::optional<std::string> violated_note;
    double eps = 0.0;
};

/// Default positivity floor 1e-6 / N.
inline double default_lir_eps(std::size_t N) { return 1e-6 / static_cast<double>(N); }

/// Solves  max e  s.t.  sum_i (2 y_ik - 1) a_i = 0 for all k,
/// sum_i a_i = 1,  a_i >= e, with a_i = e + b_i, b_i >= 0, e >= 0.
/// The sampling vector is reported feasible when e* >= eps.
inline FeasibilityResult check_lir_feasibility(const LabelMatrix& Y, double eps) {
    const std::size_t N = Y.rows;
    const std::size_t C = Y.cols;
    if (N == 0) {
        fail(ErrorKind::invalid_input, "input.empty_dataset", "feasibility check needs at least one sample");
    }
    if (!(eps > 0.0) || eps > 1.0 / static_cast<double>(N)) {
        fail(ErrorKind::config, "config.eps_range",
             "eps must lie in (0, 1/N]; no sampling vector of N=" + std::to_string(N) + " entries has min weight above 1/N");
    }
    FeasibilityResult res;
    res.eps = eps;

    const LabelStats stats = label_stats(Y);
    for (std::size_t k = 0; k < C; ++k) {
        if (stats.degenerate[k]) {
            std::ostringstream note;
            note << "attribute " << k << " has only " << (stats.positives[k] == 0 ? "negative" : "positive")
                 << " labels; its balance constraint sums to " << (stats.positives[k] == 0 ? "-1" : "+1") << " for every sampling vector";
            res.violated_note = note.str();
            return res;
        }
    }

    // variables: [e, b_0 .. b_{N-1}]
    Matrix A(C + 1, N + 1);
    Vector b(C + 1, 0.0);
    for (std::size_t k = 0; k < C; ++k) {
        double row_sum = 0.0;
        for (std::size_t i = 0; i < N; ++i) {
            const double s = Y(i, k) ? 1.0 : -1.0;
            A(k, i + 1) = s;
            row_sum += s;
        }
        A(k, 0) = row_sum;
    }
    A(C, 0) = static_cast<double>(N);
    for (std::size_t i = 0; i < N; ++i) {
        A(C, i + 1) = 1.0;
    }
    b[C] = 1.0;
    Vector cost(N + 1, 0.0);
    cost[0] = -1.0;

    const lp::Result sol = lp::Simplex(A, b, cost).solve();
    if (sol.status != lp::Status::optimal) {
        res.violated_note = "no non-negative sampling vector balances every attribute at once";
        return res;
    }
    const double e = sol.x[0];
    res.max_min_weight = e;
    Vector a(N);
    for (std::size_t i = 0; i < N; ++i) {
        a[i] = e + sol.x[i + 1];
    }
    if (e + 1e-12 < eps) {
        std::ostringstream note;
        note << "balancing forces some sample weights to zero: best achievable minimum weight is " << e << " < eps = " << eps;
        std::vector<std::size_t> zeros;
        for (std::size_t i = 0; i < N && zeros.size() < 8; ++i) {
            if (a[i] < eps) {
                zeros.push_back(i);
            }
        }
        if (!zeros.empty()) {
            note << " (e.g. sample";
            for (auto z : zeros) {
                note << ' ' << z;
            }
            note << ')';
        }
        res.violated_note = note.str();
        return res;
    }
    res.feasible = true;
    res.witness_a = std::move(a);
    return res;
}

inline nlohmann::json to_json_value(const FeasibilityResult& r) {
    nlohmann::json j{{"schema_version", 1}, {"feasible", r.feasible}, {"max_min_weight", r.max_min_weight}, {"eps", r.eps}};
    if (r.witness_a) {
        j["witness_a"] = *r.witness_a;
    }
    if (r.violated_note) {
        j["violated_note"] = *r.violated_note;
    }
    return j;
}

} // namespace labelbal
