#include "ct/matching.hpp"

#include <cmath>
#include <limits>
#include <string>

namespace ct {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Shortest-augmenting-path Hungarian algorithm on a square matrix,
// 1-indexed potentials. Returns row -> column.
std::vector<int> hungarian(const std::vector<double>& cost, int n) {
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<int> p(n + 1, 0), way(n + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(n + 1, kInf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const int i0 = p[j0];
            int j1 = 0;
            double delta = kInf;
            for (int j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost[static_cast<std::size_t>(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (p[j0] != 0);
        do {
            const int j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
        } while (j0);
    }
    std::vector<int> mapping(n, -1);
    for (int j = 1; j <= n; ++j) {
        if (p[j] > 0) mapping[p[j] - 1] = j - 1;
    }
    return mapping;
}

double mapping_cost(const std::vector<double>& cost, int n, const std::vector<int>& mapping) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += cost[static_cast<std::size_t>(i) * n + mapping[i]];
    return total;
}

// Optimal completion cost after the first `fixed` rows have been assigned to
// the columns marked used.
double completion_cost(const std::vector<double>& cost, int n, int fixed,
                       const std::vector<char>& used_col) {
    const int m = n - fixed;
    if (m == 0) return 0.0;
    std::vector<int> free_cols;
    free_cols.reserve(m);
    for (int j = 0; j < n; ++j) {
        if (!used_col[j]) free_cols.push_back(j);
    }
    std::vector<double> sub(static_cast<std::size_t>(m) * m);
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < m; ++j) {
            sub[static_cast<std::size_t>(i) * m + j] =
                cost[static_cast<std::size_t>(fixed + i) * n + free_cols[j]];
        }
    }
    const std::vector<int> sub_map = hungarian(sub, m);
    double total = 0.0;
    for (int i = 0; i < m; ++i) total += sub[static_cast<std::size_t>(i) * m + sub_map[i]];
    return total;
}

}  // namespace

Assignment solve_assignment(const std::vector<double>& cost, int n) {
    if (n <= 0 || cost.size() != static_cast<std::size_t>(n) * n) {
        throw ShapeError("solve_assignment: cost matrix must be n x n with n > 0");
    }
    for (double c : cost) {
        if (!std::isfinite(c)) throw NumericalError("solve_assignment: non-finite cost entry");
    }
    const std::vector<int> base = hungarian(cost, n);
    const double best = mapping_cost(cost, n, base);
    const double tie_eps = 1e-9 * (1.0 + std::abs(best));

    // Lexicographic refinement: fix rows in order, always taking the
    // smallest column that still admits an optimal completion.
    Assignment out;
    out.mapping.assign(n, -1);
    std::vector<char> used_col(n, 0);
    double prefix = 0.0;
    for (int i = 0; i < n; ++i) {
        bool fixed = false;
        for (int j = 0; j < n && !fixed; ++j) {
            if (used_col[j]) continue;
            used_col[j] = 1;
            const double with_j = prefix + cost[static_cast<std::size_t>(i) * n + j] +
                                  completion_cost(cost, n, i + 1, used_col);
            if (with_j <= best + tie_eps) {
                out.mapping[i] = j;
                prefix += cost[static_cast<std::size_t>(i) * n + j];
                fixed = true;
            } else {
                used_col[j] = 0;
            }
        }
        if (!fixed) {
            // Float drift pushed every candidate above the tolerance; fall
            // back to the unrefined optimum.
            out.mapping = base;
            out.total_cost = best;
            return out;
        }
    }
    out.total_cost = mapping_cost(cost, n, out.mapping);
    return out;
}

Assignment optimal_assignment(const TensorPtr& query_block, const TensorPtr& key_block) {
    if (query_block->rank() != 2 || key_block->rank() != 2) {
        throw ShapeError("optimal_assignment: blocks must be rank-2, got " +
                         shape_str(query_block->shape) + " and " + shape_str(key_block->shape));
    }
    if (query_block->shape != key_block->shape) {
        throw ShapeError("optimal_assignment: block shapes disagree, " +
                         shape_str(query_block->shape) + " vs " + shape_str(key_block->shape));
    }
    const int r = query_block->shape[0];
    const int d = query_block->shape[1];
    std::vector<double> cost(static_cast<std::size_t>(r) * r);
    for (int i = 0; i < r; ++i) {
        const double* qi = query_block->data.data() + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < r; ++j) {
            const double* kj = key_block->data.data() + static_cast<std::size_t>(j) * d;
            double s = 0.0;
            for (int t = 0; t < d; ++t) {
                const double diff = qi[t] - kj[t];
                s += diff * diff;
            }
            cost[static_cast<std::size_t>(i) * r + j] = std::sqrt(s);
        }
    }
    return solve_assignment(cost, r);
}

TensorPtr critic(const TensorPtr& query_block, const TensorPtr& key_block,
                 const Assignment& assignment, double tau) {
    if (!(tau > 0.0)) throw ContractError("critic: tau must be positive");
    if (query_block->shape != key_block->shape) {
        throw ShapeError("critic: block shapes disagree, " + shape_str(query_block->shape) +
                         " vs " + shape_str(key_block->shape));
    }
    const int r = query_block->rows();
    if (static_cast<int>(assignment.mapping.size()) != r) {
        throw ContractError("critic: assignment covers " +
                            std::to_string(assignment.mapping.size()) + " slices, blocks have " +
                            std::to_string(r));
    }
    std::vector<char> seen(r, 0);
    for (int j : assignment.mapping) {
        if (j < 0 || j >= r || seen[j]) throw ContractError("critic: mapping is not a bijection");
        seen[j] = 1;
    }
    // cos through explicit normalization; unit-norm inputs pass through
    // unchanged and zero rows raise the domain error the contract requires.
    auto qn = l2_normalize_rows(query_block);
    auto kn = l2_normalize_rows(gather_rows(key_block, assignment.mapping));
    auto cosines = sum_axis(mul(qn, kn), 1);
    return exp(scalar_mul(cosines, 1.0 / tau));
}

}  // namespace ct
