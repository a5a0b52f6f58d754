#include "ct/selftest.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ct/losses.hpp"
#include "ct/nets.hpp"
#include "ct/queues.hpp"
#include "ct/rng.hpp"

namespace ct::check {

std::vector<double> finite_difference_grad(
    const std::function<double(const std::vector<double>&)>& f, const std::vector<double>& x,
    double step) {
    std::vector<double> grad(x.size());
    std::vector<double> probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        probe[i] = x[i] + step;
        const double up = f(probe);
        probe[i] = x[i] - step;
        const double down = f(probe);
        probe[i] = x[i];
        grad[i] = (up - down) / (2.0 * step);
    }
    return grad;
}

double max_relative_error(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw ContractError("max_relative_error: size mismatch");
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double denom = std::max({1.0, std::abs(a[i]), std::abs(b[i])});
        worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
    }
    return worst;
}

Assignment brute_force_assignment(const std::vector<double>& cost, int n) {
    std::vector<int> perm(n);
    std::iota(perm.begin(), perm.end(), 0);
    Assignment best;
    best.total_cost = std::numeric_limits<double>::infinity();
    do {
        double total = 0.0;
        for (int i = 0; i < n; ++i) total += cost[static_cast<std::size_t>(i) * n + perm[i]];
        if (total < best.total_cost) {
            best.total_cost = total;
            best.mapping = perm;
        }
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best;
}

}  // namespace ct::check

namespace ct::selftest {

namespace {

constexpr double kGradTol = 1e-4;

std::vector<double> uniform_vec(std::mt19937_64& rng, std::size_t n, double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> out(n);
    for (auto& v : out) v = dist(rng);
    return out;
}

std::size_t shape_numel(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int e : shape) n *= e;
    return n;
}

// Reduces an arbitrary op output to a scalar with fixed random weights so a
// single backward checks every output coordinate at once.
TensorPtr weighted_scalar(const TensorPtr& t, const std::vector<double>& w) {
    auto wt = mul(t, make_tensor(t->shape, w));
    if (t->rank() == 1) return sum_axis(wt, 0);
    return sum_axis(sum_axis(wt, 1), 0);
}

// Compares reverse-mode gradients of fwd (composed with a fixed weighting)
// against central finite differences over all inputs jointly.
bool gradcheck_case(const std::string& name,
                    const std::vector<std::vector<int>>& shapes,
                    const std::vector<std::vector<double>>& values,
                    const std::function<TensorPtr(const std::vector<TensorPtr>&)>& fwd,
                    std::mt19937_64& rng, std::string& detail) {
    auto build = [&](const std::vector<double>& flat, bool req) {
        std::vector<TensorPtr> inputs;
        std::size_t off = 0;
        for (const auto& shape : shapes) {
            const std::size_t n = shape_numel(shape);
            inputs.push_back(make_tensor(
                shape, std::vector<double>(flat.begin() + off, flat.begin() + off + n), req));
            off += n;
        }
        return inputs;
    };

    std::vector<double> flat;
    for (const auto& v : values) flat.insert(flat.end(), v.begin(), v.end());

    // Probe once to size the weighting vector.
    std::vector<double> weights;
    {
        auto probe = fwd(build(flat, false));
        weights = uniform_vec(rng, probe->data.size(), -1.0, 1.0);
    }

    Tape tape;
    std::vector<TensorPtr> inputs = build(flat, true);
    std::vector<double> analytic;
    {
        TapeScope scope(tape);
        auto s = weighted_scalar(fwd(inputs), weights);
        tape.backward(s);
    }
    for (const auto& in : inputs) {
        if (in->grad.empty()) {
            analytic.insert(analytic.end(), in->data.size(), 0.0);
        } else {
            analytic.insert(analytic.end(), in->grad.begin(), in->grad.end());
        }
    }

    const auto numeric = check::finite_difference_grad(
        [&](const std::vector<double>& x) {
            auto ins = build(x, false);
            return weighted_scalar(fwd(ins), weights)->scalar();
        },
        flat);

    const double err = check::max_relative_error(analytic, numeric);
    if (err > kGradTol) {
        std::ostringstream os;
        os << name << ": max relative gradient error " << err << " exceeds " << kGradTol;
        detail = os.str();
        return false;
    }
    return true;
}

std::vector<double> away_from(std::mt19937_64& rng, std::size_t n, double lo, double hi,
                              double margin) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> out(n);
    for (auto& v : out) {
        do {
            v = dist(rng);
        } while (std::abs(v) < margin);
    }
    return out;
}

std::vector<double> normalized_rows(std::mt19937_64& rng, int rows, int cols) {
    auto v = uniform_vec(rng, static_cast<std::size_t>(rows) * cols, -2.0, 2.0);
    for (int r = 0; r < rows; ++r) {
        double s = 0.0;
        for (int c = 0; c < cols; ++c) s += v[r * cols + c] * v[r * cols + c];
        const double inv = 1.0 / std::sqrt(s);
        for (int c = 0; c < cols; ++c) v[r * cols + c] *= inv;
    }
    return v;
}

}  // namespace

CheckResult op_gradients(std::uint64_t seed) {
    auto rng = make_rng(seed, RngStream::kParamInit, 77);
    CheckResult result{"op_gradients", true, ""};
    const int reps = 8;

    auto run = [&](const std::string& name, const std::vector<std::vector<int>>& shapes,
                   const std::vector<std::vector<double>>& values,
                   const std::function<TensorPtr(const std::vector<TensorPtr>&)>& fwd) {
        if (!result.passed) return;
        std::string detail;
        if (!gradcheck_case(name, shapes, values, fwd, rng, detail)) {
            result.passed = false;
            result.detail = detail;
        }
    };

    for (int rep = 0; rep < reps && result.passed; ++rep) {
        run("matmul", {{3, 4}, {4, 2}},
            {uniform_vec(rng, 12, -2, 2), uniform_vec(rng, 8, -2, 2)},
            [](const std::vector<TensorPtr>& in) { return matmul(in[0], in[1]); });
        run("add", {{3, 3}, {3, 3}}, {uniform_vec(rng, 9, -2, 2), uniform_vec(rng, 9, -2, 2)},
            [](const std::vector<TensorPtr>& in) { return add(in[0], in[1]); });
        run("sub", {{3, 3}, {3, 3}}, {uniform_vec(rng, 9, -2, 2), uniform_vec(rng, 9, -2, 2)},
            [](const std::vector<TensorPtr>& in) { return sub(in[0], in[1]); });
        run("mul", {{3, 3}, {3, 3}}, {uniform_vec(rng, 9, -2, 2), uniform_vec(rng, 9, -2, 2)},
            [](const std::vector<TensorPtr>& in) { return mul(in[0], in[1]); });
        const double c = uniform_vec(rng, 1, -2, 2)[0];
        run("scalar_mul", {{3, 3}}, {uniform_vec(rng, 9, -2, 2)},
            [c](const std::vector<TensorPtr>& in) { return scalar_mul(in[0], c); });
        run("relu", {{3, 3}}, {away_from(rng, 9, -2, 2, 1e-2)},
            [](const std::vector<TensorPtr>& in) { return relu(in[0]); });
        run("exp", {{3, 3}}, {uniform_vec(rng, 9, -2, 2)},
            [](const std::vector<TensorPtr>& in) { return ct::exp(in[0]); });
        run("log", {{3, 3}}, {uniform_vec(rng, 9, 0.5, 2.5)},
            [](const std::vector<TensorPtr>& in) { return ct::log(in[0]); });
        run("square", {{3, 3}}, {uniform_vec(rng, 9, -2, 2)},
            [](const std::vector<TensorPtr>& in) { return square(in[0]); });
        run("sqrt", {{3, 3}}, {uniform_vec(rng, 9, 0.5, 2.5)},
            [](const std::vector<TensorPtr>& in) { return ct::sqrt(in[0]); });
        run("softmax_rows", {{3, 4}}, {uniform_vec(rng, 12, -2, 2)},
            [](const std::vector<TensorPtr>& in) { return softmax_rows(in[0]); });
        run("l2_normalize_rows", {{3, 4}}, {normalized_rows(rng, 3, 4)},
            [](const std::vector<TensorPtr>& in) { return l2_normalize_rows(in[0]); });
        for (int axis : {0, 1}) {
            run("mean_pool_axis", {{3, 4}}, {uniform_vec(rng, 12, -2, 2)},
                [axis](const std::vector<TensorPtr>& in) { return mean_pool_axis(in[0], axis); });
            run("sum_axis", {{3, 4}}, {uniform_vec(rng, 12, -2, 2)},
                [axis](const std::vector<TensorPtr>& in) { return sum_axis(in[0], axis); });
            run("concat_axis", {{2, 3}, {2, 3}, {2, 3}},
                {uniform_vec(rng, 6, -2, 2), uniform_vec(rng, 6, -2, 2),
                 uniform_vec(rng, 6, -2, 2)},
                [axis](const std::vector<TensorPtr>& in) {
                    return concat_axis(in, axis);
                });
        }
        run("transpose", {{3, 4}}, {uniform_vec(rng, 12, -2, 2)},
            [](const std::vector<TensorPtr>& in) { return transpose(in[0]); });
        run("gather_rows", {{5, 3}}, {uniform_vec(rng, 15, -2, 2)},
            [](const std::vector<TensorPtr>& in) {
                return gather_rows(in[0], {0, 2, 2, 4});
            });
        // Composite of >= 4 primitives, per the tensor module example.
        run("composite", {{3, 3}, {3, 3}},
            {uniform_vec(rng, 9, -2, 2), uniform_vec(rng, 9, -2, 2)},
            [](const std::vector<TensorPtr>& in) {
                return softmax_rows(matmul(relu(in[0]), transpose(square(in[1]))));
            });
    }
    return result;
}

CheckResult loss_gradients(std::uint64_t seed) {
    auto rng = make_rng(seed, RngStream::kParamInit, 78);
    CheckResult result{"loss_gradients", true, ""};
    const int reps = 50;

    auto run = [&](const std::string& name, const std::vector<std::vector<int>>& shapes,
                   const std::vector<std::vector<double>>& values,
                   const std::function<TensorPtr(const std::vector<TensorPtr>&)>& fwd) {
        if (!result.passed) return;
        std::string detail;
        if (!gradcheck_case(name, shapes, values, fwd, rng, detail)) {
            result.passed = false;
            result.detail = detail;
        }
    };

    for (int rep = 0; rep < reps && result.passed; ++rep) {
        const double tau = rep % 2 == 0 ? 1.0 : 0.07;

        run("supcon_loss", {{1, 5}, {1, 5}, {1, 5}, {1, 5}, {1, 5}},
            {normalized_rows(rng, 1, 5), normalized_rows(rng, 1, 5), normalized_rows(rng, 1, 5),
             normalized_rows(rng, 1, 5), normalized_rows(rng, 1, 5)},
            [tau](const std::vector<TensorPtr>& in) {
                return supcon_loss(in[0], {in[1], in[2]}, {in[3], in[4]}, tau);
            });

        run("rare_loss", {{3, 4}, {3, 4}, {3, 4}, {3, 4}, {3, 4}},
            {normalized_rows(rng, 3, 4), normalized_rows(rng, 3, 4), normalized_rows(rng, 3, 4),
             normalized_rows(rng, 3, 4), normalized_rows(rng, 3, 4)},
            [tau](const std::vector<TensorPtr>& in) {
                return rare_loss(in[0], {in[1], in[2]}, {in[3], in[4]}, tau);
            });

        run("kl_to_standard_normal", {{4, 1}, {4, 1}},
            {uniform_vec(rng, 4, -2, 2), uniform_vec(rng, 4, 0.5, 1.5)},
            [](const std::vector<TensorPtr>& in) {
                return kl_to_standard_normal(in[0], in[1]);
            });

        const int label = static_cast<int>(rep % 4);
        run("frontdoor_ce_of_softmax", {{4, 1}}, {uniform_vec(rng, 4, -2, 2)},
            [label](const std::vector<TensorPtr>& in) {
                auto probs = transpose(softmax_rows(transpose(in[0])));
                return frontdoor_ce(probs, label);
            });
    }
    return result;
}

CheckResult head_gradients(std::uint64_t seed) {
    auto rng = make_rng(seed, RngStream::kParamInit, 79);
    CheckResult result{"head_gradients", true, ""};
    const int channels = 8, d_z = 3, classes = 3, n = 4;
    const int reps = 50;

    for (int rep = 0; rep < reps && result.passed; ++rep) {
        FrontDoorHead head(channels, d_z, classes, true, rep % 4 == 1);
        head.init(rng);
        const bool train_mode = rep % 2 == 0;
        const auto noise_vals = uniform_vec(rng, d_z, -1.0, 1.0);
        const int label = rep % classes;

        const auto head_params = head.named_params("");
        std::vector<std::vector<int>> shapes{{channels, n}};
        std::vector<std::vector<double>> values{uniform_vec(rng, channels * n, 0.0, 2.0)};
        for (const auto& [name, t] : head_params) {
            (void)name;
            shapes.push_back(t->shape);
            values.push_back(t->data);
        }
        const auto deconf_w = uniform_vec(rng, channels, -1.0, 1.0);

        auto fwd = [&](const std::vector<TensorPtr>& in) {
            // Rebind the head's parameters to the gradcheck inputs so both
            // analytic and numeric paths see the same tensors.
            FrontDoorHead h(channels, d_z, classes, true, head.phi1_aggregate());
            h.q_proj = in[1];
            h.k_proj = in[2];
            h.v_proj = in[3];
            h.ms_w1 = in[4];
            h.ms_b1 = in[5];
            h.ms_w2 = in[6];
            h.ms_b2 = in[7];
            h.phi1_w = in[8];
            auto noise = make_tensor({d_z, 1}, noise_vals);
            auto out = front_door_forward(h, in[0], train_mode ? RunMode::kTrain : RunMode::kEval,
                                          train_mode ? noise : nullptr);
            auto ce = frontdoor_ce(out.probabilities, label);
            auto kl = kl_to_standard_normal(out.mu, out.sigma);
            auto probe = sum_axis(mul(out.deconfounded, make_tensor({channels, 1}, deconf_w)), 0);
            return add(add(ce, kl), probe);
        };

        std::string detail;
        if (!gradcheck_case("front_door_head", shapes, values, fwd, rng, detail)) {
            result.passed = false;
            result.detail = detail;
        }
    }
    return result;
}

CheckResult assignment_exactness(std::uint64_t seed) {
    auto rng = make_rng(seed, RngStream::kParamInit, 80);
    CheckResult result{"assignment_exactness", true, ""};
    std::uniform_real_distribution<double> dist(0.0, 4.0);
    for (int r = 2; r <= 6 && result.passed; ++r) {
        for (int inst = 0; inst < 200 && result.passed; ++inst) {
            std::vector<double> cost(static_cast<std::size_t>(r) * r);
            for (auto& c : cost) c = dist(rng);
            const Assignment got = solve_assignment(cost, r);
            const Assignment want = check::brute_force_assignment(cost, r);
            if (got.mapping != want.mapping || got.total_cost != want.total_cost) {
                std::ostringstream os;
                os << "assignment mismatch at R=" << r << " instance " << inst << " (cost "
                   << got.total_cost << " vs oracle " << want.total_cost << ")";
                result.passed = false;
                result.detail = os.str();
            }
        }
    }
    return result;
}

CheckResult matching_properties(std::uint64_t seed) {
    auto rng = make_rng(seed, RngStream::kParamInit, 81);
    CheckResult result{"matching_properties", true, ""};
    std::uniform_real_distribution<double> dist(-2.0, 2.0);
    const int r = 5, d = 7;

    for (int inst = 0; inst < 50 && result.passed; ++inst) {
        auto a = make_tensor({r, d}, uniform_vec(rng, static_cast<std::size_t>(r) * d, -2, 2));
        auto b = make_tensor({r, d}, uniform_vec(rng, static_cast<std::size_t>(r) * d, -2, 2));
        const Assignment ab = optimal_assignment(a, b);

        auto pair_cost = [&](const std::vector<int>& mapping) {
            double total = 0.0;
            for (int i = 0; i < r; ++i) {
                double s = 0.0;
                for (int j = 0; j < d; ++j) {
                    const double diff = a->data[i * d + j] - b->data[mapping[i] * d + j];
                    s += diff * diff;
                }
                total += std::sqrt(s);
            }
            return total;
        };

        std::vector<int> identity(r);
        std::iota(identity.begin(), identity.end(), 0);
        if (ab.total_cost > pair_cost(identity) + 1e-9) {
            result.passed = false;
            result.detail = "optimal cost above identity permutation";
            break;
        }
        std::vector<int> perm = identity;
        for (int t = 0; t < 100; ++t) {
            std::shuffle(perm.begin(), perm.end(), rng);
            if (ab.total_cost > pair_cost(perm) + 1e-9) {
                result.passed = false;
                result.detail = "optimal cost above a random permutation";
                break;
            }
        }
        if (!result.passed) break;

        const Assignment ba = optimal_assignment(b, a);
        if (std::abs(ab.total_cost - ba.total_cost) > 1e-9) {
            result.passed = false;
            result.detail = "optimal cost not symmetric in its arguments";
            break;
        }

        // Permuting key rows permutes the mapping and keeps the cost.
        std::vector<int> pi(r);
        std::iota(pi.begin(), pi.end(), 0);
        std::shuffle(pi.begin(), pi.end(), rng);
        std::vector<double> permuted(static_cast<std::size_t>(r) * d);
        for (int i = 0; i < r; ++i) {
            for (int j = 0; j < d; ++j) permuted[i * d + j] = b->data[pi[i] * d + j];
        }
        const Assignment ap = optimal_assignment(a, make_tensor({r, d}, permuted));
        std::vector<int> inv(r);
        for (int i = 0; i < r; ++i) inv[pi[i]] = i;
        bool mapping_ok = std::abs(ap.total_cost - ab.total_cost) <= 1e-9;
        for (int i = 0; i < r && mapping_ok; ++i) {
            mapping_ok = ap.mapping[i] == inv[ab.mapping[i]];
        }
        if (!mapping_ok) {
            result.passed = false;
            result.detail = "permutation invariance violated";
        }
    }
    return result;
}

CheckResult normalization_probes(std::uint64_t seed) {
    auto rng = make_rng(seed, RngStream::kParamInit, 82);
    CheckResult result{"normalization_probes", true, ""};
    const int channels = 16, d_z = 4, classes = 3, n = 9;
    FrontDoorHead head(channels, d_z, classes, true, false);
    head.init(rng);

    auto fail = [&](const std::string& msg) {
        result.passed = false;
        result.detail = msg;
    };

    for (int probe = 0; probe < 1000 && result.passed; ++probe) {
        auto fmap = make_tensor({channels, n},
                                uniform_vec(rng, static_cast<std::size_t>(channels) * n, 0.0, 2.0));
        const auto out = front_door_forward(head, fmap, RunMode::kEval);
        for (const TensorPtr& att : {out.patch_attention, out.channel_attention}) {
            const int rows = att->shape[0], cols = att->shape[1];
            for (int i = 0; i < rows; ++i) {
                double s = 0.0;
                for (int j = 0; j < cols; ++j) s += att->data[static_cast<std::size_t>(i) * cols + j];
                if (std::abs(s - 1.0) > 1e-10) {
                    fail("attention row does not sum to 1");
                    break;
                }
            }
            if (!result.passed) break;
        }
        if (!result.passed) break;
        double psum = 0.0;
        for (double v : out.probabilities->data) {
            psum += v;
            if (v < 0.0) fail("negative probability");
        }
        if (std::abs(psum - 1.0) > 1e-10) fail("probabilities do not sum to 1");

        auto sm = softmax_rows(make_tensor({4, 5}, uniform_vec(rng, 20, -3, 3)));
        for (int i = 0; i < 4; ++i) {
            double s = 0.0;
            for (int j = 0; j < 5; ++j) s += sm->data[static_cast<std::size_t>(i) * 5 + j];
            if (std::abs(s - 1.0) > 1e-12) fail("softmax row drifts beyond 1e-12");
        }
        auto nm = l2_normalize_rows(make_tensor({3, 6}, uniform_vec(rng, 18, -2, 2)));
        for (int i = 0; i < 3; ++i) {
            double s = 0.0;
            for (int j = 0; j < 6; ++j) {
                s += nm->data[static_cast<std::size_t>(i) * 6 + j] *
                     nm->data[static_cast<std::size_t>(i) * 6 + j];
            }
            if (std::abs(std::sqrt(s) - 1.0) > 1e-12) fail("l2 row norm drifts beyond 1e-12");
        }
        const KeyMatrix key = random_unit_key(rng, 3, 8);
        for (int i = 0; i < key.rows; ++i) {
            double s = 0.0;
            for (int j = 0; j < key.cols; ++j) s += key.row(i)[j] * key.row(i)[j];
            if (std::abs(std::sqrt(s) - 1.0) > 1e-10) fail("queue key norm drifts beyond 1e-10");
        }
    }
    return result;
}

CheckResult loss_spot_checks() {
    CheckResult result{"loss_spot_checks", true, ""};
    auto expect = [&](const std::string& name, double got, double want) {
        if (!result.passed) return;
        if (std::abs(got - want) > 1e-10) {
            std::ostringstream os;
            os << name << ": got " << got << ", want " << want;
            result.passed = false;
            result.detail = os.str();
        }
    };

    const auto e0 = make_tensor({1, 4}, {1, 0, 0, 0});
    const auto e1 = make_tensor({1, 4}, {0, 1, 0, 0});

    expect("supcon orthogonal pair", supcon_loss(e0, {e1}, {e1}, 1.0)->scalar(), 0.0);
    expect("supcon aligned positive", supcon_loss(e0, {e0}, {e1}, 1.0)->scalar(), -1.0);
    expect("supcon mixed positives", supcon_loss(e0, {e0, e1}, {e1}, 1.0)->scalar(), -0.5);

    const auto block_q = make_tensor({2, 4}, {1, 0, 0, 0, 0, 1, 0, 0});
    const auto block_orth = make_tensor({2, 4}, {0, 0, 1, 0, 0, 0, 0, 1});
    expect("rare aligned pos orth neg",
           rare_loss(block_q, {block_q}, {block_orth}, 1.0)->scalar(), -1.0);
    expect("rare pos and neg identical",
           rare_loss(block_q, {block_q}, {block_q}, 1.0)->scalar(), 0.0);

    expect("kl standard normal",
           kl_to_standard_normal(make_tensor({3, 1}, {0, 0, 0}),
                                 make_tensor({3, 1}, {1, 1, 1}))->scalar(),
           0.0);
    expect("kl mean three",
           kl_to_standard_normal(make_tensor({1}, {3.0}), make_tensor({1}, {1.0}))->scalar(),
           4.5);
    const double e = std::exp(1.0);
    expect("kl sigma e",
           kl_to_standard_normal(make_tensor({1}, {0.0}), make_tensor({1}, {e}))->scalar(),
           0.5 * (e * e - 3.0));

    expect("ce one-hot", frontdoor_ce(make_tensor({4, 1}, {0, 1, 0, 0}), 1)->scalar(), 0.0);
    expect("ce uniform",
           frontdoor_ce(make_tensor({4, 1}, {0.25, 0.25, 0.25, 0.25}), 2)->scalar(),
           std::log(4.0));
    const double tiny = 1e-15;
    const double rest = (1.0 - tiny) / 3.0;
    expect("ce clamp saturation",
           frontdoor_ce(make_tensor({4, 1}, {tiny, rest, rest, rest}), 0)->scalar(),
           -std::log(1e-12));

    // Matching critic arithmetic, including the paper's tau.
    const auto row_a = make_tensor({1, 2}, {1.0, 0.0});
    const auto row_b = make_tensor({1, 2}, {0.0, 1.0});
    Assignment ident;
    ident.mapping = {0};
    expect("critic identical rows", critic(row_a, row_a, ident, 1.0)->scalar(), std::exp(1.0));
    expect("critic orthogonal rows", critic(row_a, row_b, ident, 1.0)->scalar(), 1.0);
    expect("critic identical rows tau 0.07",
           critic(row_a, row_a, ident, 0.07)->scalar(), std::exp(1.0 / 0.07));
    return result;
}

std::vector<CheckResult> run_all(std::uint64_t seed) {
    return {op_gradients(seed),       loss_gradients(seed),    head_gradients(seed),
            assignment_exactness(seed), matching_properties(seed), normalization_probes(seed),
            loss_spot_checks()};
}

}  // namespace ct::selftest
