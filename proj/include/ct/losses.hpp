#pragma once

#include <optional>
#include <vector>

#include "ct/matching.hpp"
#include "ct/tensor.hpp"

namespace ct {

// Per-batch objective values. `has_*` flags record which terms actually
// contributed; a skipped term (ablated method, cold queue) stays 0.
struct LossBreakdown {
    double l_ce = 0.0;
    double l_con = 0.0;
    double l_r = 0.0;
    double l_s_ce = 0.0;
    double l_s_kl = 0.0;
    double total = 0.0;
    bool has_ce = false;
    bool has_con = false;
    bool has_r = false;
    bool has_s = false;
};

struct LossParts {
    std::optional<double> ce;
    std::optional<double> con;
    std::optional<double> r;
    std::optional<double> s_ce;
    std::optional<double> s_kl;
};

// Supervised contrastive loss for one query against sampled keys. Query and
// keys are 1 x d rows, unit-normalized by the caller. The denominator holds
// negatives only, exactly as the formula is printed; the SupCon convention
// (positives included) sits behind the flag.
TensorPtr supcon_loss(const TensorPtr& query, const std::vector<TensorPtr>& positives,
                      const std::vector<TensorPtr>& negatives, double tau,
                      bool positives_in_denominator = false);

// Patch contrastive loss: per key block, EMD-match slices against the query
// block, evaluate the critic per slice, and average the log-ratio over all R
// slices and all positives. Assignments are constants; gradients flow
// through the critic only.
TensorPtr rare_loss(const TensorPtr& query_block, const std::vector<TensorPtr>& positive_blocks,
                    const std::vector<TensorPtr>& negative_blocks, double tau,
                    bool positives_in_denominator = false);

// -log p[label] with the input clamped at 1e-12. `probabilities` is a
// num_classes x 1 column summing to 1 within 1e-8.
TensorPtr frontdoor_ce(const TensorPtr& probabilities, int label);

// Closed-form KL( N(mu, diag(sigma^2)) || N(0, I) ).
TensorPtr kl_to_standard_normal(const TensorPtr& mu, const TensorPtr& sigma);

// total = l_ce + l_con + alpha*l_r + beta*(l_s_ce + l_s_kl); absent parts
// contribute zero and are flagged. NaN parts raise NumericalError naming the
// term.
LossBreakdown total_loss(const LossParts& parts, double alpha, double beta);

}  // namespace ct
