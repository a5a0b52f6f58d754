#include "ct/losses.hpp"

#include <cmath>
#include <string>

namespace ct {

namespace {

void check_row_vector(const char* who, const TensorPtr& t) {
    if (t->rank() != 2 || t->shape[0] != 1) {
        throw ShapeError(std::string(who) + ": expected a 1 x d row, got " + shape_str(t->shape));
    }
}

}  // namespace

TensorPtr supcon_loss(const TensorPtr& query, const std::vector<TensorPtr>& positives,
                      const std::vector<TensorPtr>& negatives, double tau,
                      bool positives_in_denominator) {
    if (!(tau > 0.0)) throw ContractError("supcon_loss: tau must be positive");
    if (positives.empty()) throw ContractError("supcon_loss: positives must be non-empty");
    if (negatives.empty()) throw ContractError("supcon_loss: negatives must be non-empty");
    check_row_vector("supcon_loss", query);
    for (const auto& k : positives) check_row_vector("supcon_loss", k);
    for (const auto& k : negatives) check_row_vector("supcon_loss", k);

    auto qt = transpose(query);                                   // d x 1
    auto pos_dots = matmul(concat_axis(positives, 0), qt);        // K+ x 1
    auto neg_dots = matmul(concat_axis(negatives, 0), qt);        // K- x 1

    auto denom_dots = positives_in_denominator
                          ? concat_axis({neg_dots, pos_dots}, 0)
                          : neg_dots;
    auto lse = log(sum_axis(exp(scalar_mul(denom_dots, 1.0 / tau)), 0));  // 1 x 1
    auto mean_pos = mean_pool_axis(pos_dots, 0);                          // 1 x 1
    // -(1/|P|) sum_k+ [q.k+/tau - lse] = -mean(q.k+)/tau + lse
    return add(scalar_mul(mean_pos, -1.0 / tau), lse);
}

TensorPtr rare_loss(const TensorPtr& query_block, const std::vector<TensorPtr>& positive_blocks,
                    const std::vector<TensorPtr>& negative_blocks, double tau,
                    bool positives_in_denominator) {
    if (!(tau > 0.0)) throw ContractError("rare_loss: tau must be positive");
    if (positive_blocks.empty()) throw ContractError("rare_loss: positives must be non-empty");
    if (negative_blocks.empty()) throw ContractError("rare_loss: negatives must be non-empty");
    if (query_block->rank() != 2) {
        throw ShapeError("rare_loss: query block must be R x d, got " +
                         shape_str(query_block->shape));
    }
    for (const auto& blocks : {positive_blocks, negative_blocks}) {
        for (const auto& b : blocks) {
            if (b->shape != query_block->shape) {
                throw ShapeError("rare_loss: block shape " + shape_str(b->shape) +
                                 " does not match query block " + shape_str(query_block->shape));
            }
        }
    }

    std::vector<TensorPtr> pos_critics;  // each R x 1
    pos_critics.reserve(positive_blocks.size());
    for (const auto& b : positive_blocks) {
        const Assignment asn = optimal_assignment(query_block, b);
        pos_critics.push_back(critic(query_block, b, asn, tau));
    }
    std::vector<TensorPtr> neg_critics;
    neg_critics.reserve(negative_blocks.size());
    for (const auto& b : negative_blocks) {
        const Assignment asn = optimal_assignment(query_block, b);
        neg_critics.push_back(critic(query_block, b, asn, tau));
    }

    auto neg_mat = concat_axis(neg_critics, 1);       // R x K-
    auto neg_sum = sum_axis(neg_mat, 1);              // R x 1

    if (!positives_in_denominator) {
        auto log_denom = log(neg_sum);                                     // R x 1
        auto mean_denom = mean_pool_axis(log_denom, 0);                    // 1 x 1
        auto log_pos = log(concat_axis(pos_critics, 1));                   // R x K+
        auto mean_log_pos = mean_pool_axis(mean_pool_axis(log_pos, 1), 0); // 1 x 1
        // -(1/K+) sum_j (1/R) sum_r log(d+/sum_k d-) = mean_r log denom - mean_{r,j} log d+
        return sub(mean_denom, mean_log_pos);
    }

    // SupCon-convention variant: the matched positive joins its own denominator.
    std::vector<TensorPtr> per_positive;
    per_positive.reserve(pos_critics.size());
    for (const auto& dp : pos_critics) {
        auto log_denom = log(add(neg_sum, dp));
        auto term = sub(mean_pool_axis(log_denom, 0), mean_pool_axis(log(dp), 0));
        per_positive.push_back(term);
    }
    auto stacked = concat_axis(per_positive, 0);  // K+ x 1
    return mean_pool_axis(stacked, 0);
}

TensorPtr frontdoor_ce(const TensorPtr& probabilities, int label) {
    if (probabilities->rank() != 2 || probabilities->shape[1] != 1) {
        throw ShapeError("frontdoor_ce: probabilities must be a K x 1 column, got " +
                         shape_str(probabilities->shape));
    }
    const int k = probabilities->shape[0];
    if (label < 0 || label >= k) {
        throw ContractError("frontdoor_ce: label " + std::to_string(label) +
                            " out of range for " + std::to_string(k) + " classes");
    }
    double sum = 0.0;
    for (double v : probabilities->data) sum += v;
    if (std::abs(sum - 1.0) > 1e-8) {
        throw ContractError("frontdoor_ce: probabilities sum to " + std::to_string(sum) +
                            ", expected 1 within 1e-8");
    }
    auto picked = gather_rows(probabilities, {label});  // 1 x 1
    // max(p, 1e-12) composed from primitives: relu(p - eps) + eps
    auto eps = full({1, 1}, 1e-12);
    auto clamped = add(relu(sub(picked, eps)), eps);
    return scalar_mul(log(clamped), -1.0);
}

TensorPtr kl_to_standard_normal(const TensorPtr& mu, const TensorPtr& sigma) {
    if (mu->shape != sigma->shape) {
        throw ShapeError("kl_to_standard_normal: mu " + shape_str(mu->shape) + " vs sigma " +
                         shape_str(sigma->shape));
    }
    for (double s : sigma->data) {
        if (!(s > 0.0)) {
            throw DomainError("kl_to_standard_normal: sigma must be strictly positive, got " +
                              std::to_string(s));
        }
    }
    auto var = square(sigma);
    auto elem = sub(sub(add(square(mu), var), log(var)), full(mu->shape, 1.0));
    TensorPtr total;
    if (elem->rank() == 1) {
        total = sum_axis(elem, 0);
    } else {
        total = sum_axis(sum_axis(elem, 1), 0);
    }
    return scalar_mul(total, 0.5);
}

LossBreakdown total_loss(const LossParts& parts, double alpha, double beta) {
    auto take = [](const std::optional<double>& v, const char* name) {
        if (v.has_value() && std::isnan(*v)) {
            throw NumericalError(std::string("total_loss: term ") + name + " is NaN");
        }
        return v.value_or(0.0);
    };
    LossBreakdown out;
    out.l_ce = take(parts.ce, "l_ce");
    out.l_con = take(parts.con, "l_con");
    out.l_r = take(parts.r, "l_r");
    out.l_s_ce = take(parts.s_ce, "l_s_ce");
    out.l_s_kl = take(parts.s_kl, "l_s_kl");
    out.has_ce = parts.ce.has_value();
    out.has_con = parts.con.has_value();
    out.has_r = parts.r.has_value();
    out.has_s = parts.s_ce.has_value() || parts.s_kl.has_value();
    out.total = out.l_ce + out.l_con + alpha * out.l_r + beta * (out.l_s_ce + out.l_s_kl);
    return out;
}

}  // namespace ct
