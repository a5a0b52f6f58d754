#pragma once

#include <vector>

#include "ct/tensor.hpp"

namespace ct {

// Cost-minimal one-to-one alignment between the R patch slices of two
// examples. `mapping[r]` is the key-block row matched to query row r.
struct Assignment {
    std::vector<int> mapping;
    double total_cost = 0.0;
};

// Exact optimal assignment under Euclidean pairwise costs, computed with the
// Hungarian algorithm. Among equal-cost optima the lexicographically
// smallest mapping is returned. The result is a constant with respect to the
// tape: no gradient flows through the argmin.
Assignment optimal_assignment(const TensorPtr& query_block, const TensorPtr& key_block);

// Same, on a raw R x R cost matrix (row-major). Exposed for direct testing.
Assignment solve_assignment(const std::vector<double>& cost, int n);

// Per-slice similarity critic: value[r] = exp(cos(query[r], key[mapping[r]]) / tau),
// returned as an R x 1 tensor. Differentiable in both blocks; the assignment
// is held fixed.
TensorPtr critic(const TensorPtr& query_block, const TensorPtr& key_block,
                 const Assignment& assignment, double tau);

}  // namespace ct
