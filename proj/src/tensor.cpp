#include "ct/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace ct {

namespace {

Tape* g_active_tape = nullptr;

void check_same_shape(const char* kind, const TensorPtr& a, const TensorPtr& b) {
    if (a->shape != b->shape) {
        throw ShapeError(std::string(kind) + ": shape mismatch " + shape_str(a->shape) +
                         " vs " + shape_str(b->shape));
    }
}

void check_rank2(const char* kind, const TensorPtr& a) {
    if (a->rank() != 2) {
        throw ShapeError(std::string(kind) + ": expected rank-2 tensor, got shape " +
                         shape_str(a->shape));
    }
}

bool want_grad(std::initializer_list<TensorPtr> inputs) {
    if (active_tape() == nullptr) return false;
    for (const auto& t : inputs) {
        if (t->requires_grad) return true;
    }
    return false;
}

TensorPtr result_like(std::vector<int> shape, std::vector<double> data, bool req) {
    auto out = make_tensor(std::move(shape), std::move(data));
    out->requires_grad = req;
    return out;
}

}  // namespace

Tensor::Tensor(std::vector<int> shape_in, std::vector<double> data_in, bool requires_grad_in)
    : shape(std::move(shape_in)), data(std::move(data_in)), requires_grad(requires_grad_in) {
    if (numel() != static_cast<std::int64_t>(data.size())) {
        throw ShapeError("Tensor: shape " + shape_str(shape) + " implies " +
                         std::to_string(numel()) + " elements, got " +
                         std::to_string(data.size()));
    }
}

std::int64_t Tensor::numel() const {
    std::int64_t n = 1;
    for (int e : shape) n *= e;
    return n;
}

double Tensor::scalar() const {
    if (!is_scalar()) {
        throw ContractError("scalar(): tensor of shape " + shape_str(shape) + " is not scalar");
    }
    return data[0];
}

int Tensor::rows() const {
    if (rank() != 2) throw ShapeError("rows(): tensor of shape " + shape_str(shape) + " is not rank-2");
    return shape[0];
}

int Tensor::cols() const {
    if (rank() != 2) throw ShapeError("cols(): tensor of shape " + shape_str(shape) + " is not rank-2");
    return shape[1];
}

void Tensor::ensure_grad() {
    if (grad.empty()) grad.assign(data.size(), 0.0);
}

TensorPtr make_tensor(std::vector<int> shape, std::vector<double> data, bool requires_grad) {
    return std::make_shared<Tensor>(std::move(shape), std::move(data), requires_grad);
}

TensorPtr make_scalar(double value, bool requires_grad) {
    return make_tensor({1}, {value}, requires_grad);
}

TensorPtr zeros(std::vector<int> shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

TensorPtr full(std::vector<int> shape, double value, bool requires_grad) {
    std::int64_t n = 1;
    for (int e : shape) n *= e;
    return make_tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

std::string shape_str(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << "x";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

void Tape::record(std::function<void()> backprop) { records_.push_back(std::move(backprop)); }

void Tape::backward(const TensorPtr& loss) {
    if (!loss->is_scalar()) {
        throw ContractError("backward: loss must be scalar, got shape " + shape_str(loss->shape));
    }
    if (!loss->requires_grad) {
        throw ContractError("backward: loss was not recorded on a tape (requires_grad is false)");
    }
    loss->ensure_grad();
    loss->grad[0] = 1.0;
    for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
}

Tape* active_tape() { return g_active_tape; }
void set_active_tape(Tape* tape) { g_active_tape = tape; }

// ---------------------------------------------------------------------------

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
    check_rank2("matmul", a);
    check_rank2("matmul", b);
    if (a->shape[1] != b->shape[0]) {
        throw ShapeError("matmul: inner dimensions disagree, " + shape_str(a->shape) + " * " +
                         shape_str(b->shape));
    }
    const int m = a->shape[0], k = a->shape[1], n = b->shape[1];
    std::vector<double> out(static_cast<std::size_t>(m) * n, 0.0);
    const double* pa = a->data.data();
    const double* pb = b->data.data();
    for (int i = 0; i < m; ++i) {
        double* po = out.data() + static_cast<std::size_t>(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            const double aik = pa[static_cast<std::size_t>(i) * k + kk];
            const double* pbk = pb + static_cast<std::size_t>(kk) * n;
            for (int j = 0; j < n; ++j) po[j] += aik * pbk[j];
        }
    }
    auto res = result_like({m, n}, std::move(out), want_grad({a, b}));
    if (res->requires_grad) {
        active_tape()->record([a, b, res, m, k, n] {
            if (res->grad.empty()) return;
            const double* g = res->grad.data();
            if (a->requires_grad) {
                a->ensure_grad();
                // dA += G * B^T
                for (int i = 0; i < m; ++i) {
                    for (int kk = 0; kk < k; ++kk) {
                        double acc = 0.0;
                        const double* gi = g + static_cast<std::size_t>(i) * n;
                        const double* bk = b->data.data() + static_cast<std::size_t>(kk) * n;
                        for (int j = 0; j < n; ++j) acc += gi[j] * bk[j];
                        a->grad[static_cast<std::size_t>(i) * k + kk] += acc;
                    }
                }
            }
            if (b->requires_grad) {
                b->ensure_grad();
                // dB += A^T * G
                for (int i = 0; i < m; ++i) {
                    const double* ai = a->data.data() + static_cast<std::size_t>(i) * k;
                    const double* gi = g + static_cast<std::size_t>(i) * n;
                    for (int kk = 0; kk < k; ++kk) {
                        const double aik = ai[kk];
                        double* dbk = b->grad.data() + static_cast<std::size_t>(kk) * n;
                        for (int j = 0; j < n; ++j) dbk[j] += aik * gi[j];
                    }
                }
            }
        });
    }
    return res;
}

TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
    check_same_shape("add", a, b);
    std::vector<double> out(a->data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] + b->data[i];
    auto res = result_like(a->shape, std::move(out), want_grad({a, b}));
    if (res->requires_grad) {
        active_tape()->record([a, b, res] {
            if (res->grad.empty()) return;
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::size_t i = 0; i < res->grad.size(); ++i) a->grad[i] += res->grad[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::size_t i = 0; i < res->grad.size(); ++i) b->grad[i] += res->grad[i];
            }
        });
    }
    return res;
}

TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
    check_same_shape("sub", a, b);
    std::vector<double> out(a->data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] - b->data[i];
    auto res = result_like(a->shape, std::move(out), want_grad({a, b}));
    if (res->requires_grad) {
        active_tape()->record([a, b, res] {
            if (res->grad.empty()) return;
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::size_t i = 0; i < res->grad.size(); ++i) a->grad[i] += res->grad[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::size_t i = 0; i < res->grad.size(); ++i) b->grad[i] -= res->grad[i];
            }
        });
    }
    return res;
}

TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
    check_same_shape("mul", a, b);
    std::vector<double> out(a->data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] * b->data[i];
    auto res = result_like(a->shape, std::move(out), want_grad({a, b}));
    if (res->requires_grad) {
        active_tape()->record([a, b, res] {
            if (res->grad.empty()) return;
            if (a->requires_grad) {
                a->ensure_grad();
                for (std::size_t i = 0; i < res->grad.size(); ++i)
                    a->grad[i] += res->grad[i] * b->data[i];
            }
            if (b->requires_grad) {
                b->ensure_grad();
                for (std::size_t i = 0; i < res->grad.size(); ++i)
                    b->grad[i] += res->grad[i] * a->data[i];
            }
        });
    }
    return res;
}

TensorPtr scalar_mul(const TensorPtr& a, double c) {
    std::vector<double> out(a->data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * a->data[i];
    auto res = result_like(a->shape, std::move(out), want_grad({a}));
    if (res->requires_grad) {
        active_tape()->record([a, res, c] {
            if (res->grad.empty()) return;
            a->ensure_grad();
            for (std::size_t i = 0; i < res->grad.size(); ++i) a->grad[i] += c * res->grad[i];
        });
    }
    return res;
}

TensorPtr relu(const TensorPtr& a) {
    std::vector<double> out(a->data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] > 0.0 ? a->data[i] : 0.0;
    auto res = result_like(a->shape, std::move(out), want_grad({a}));
    if (res->requires_grad) {
        active_tape()->record([a, res] {
            if (res->grad.empty()) return;
            a->ensure_grad();
            for (std::size_t i = 0; i < res->grad.size(); ++i)
                if (a->data[i] > 0.0) a->grad[i] += res->grad[i];
        });
    }
    return res;
}

TensorPtr exp(const TensorPtr& a) {
    std::vector<double> out(a->data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(a->data[i]);
    auto res = result_like(a->shape, std::move(out), want_grad({a}));
    if (res->requires_grad) {
        active_tape()->record([a, res] {
            if (res->grad.empty()) return;
            a->ensure_grad();
            for (std::size_t i = 0; i < res->grad.size(); ++i)
                a->grad[i] += res->grad[i] * res->data[i];
        });
    }
    return res;
}

TensorPtr log(const TensorPtr& a) {
    std::vector<double> out(a->data.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!(a->data[i] > 0.0)) {
            throw DomainError("log: input must be strictly positive, got " +
                              std::to_string(a->data[i]));
        }
        out[i] = std::log(a->data[i]);
    }
    auto res = result_like(a->shape, std::move(out), want_grad({a}));
    if (res->requires_grad) {
        active_tape()->record([a, res] {
            if (res->grad.empty()) return;
            a->ensure_grad();
            for (std::size_t i = 0; i < res->grad.size(); ++i)
                a->grad[i] += res->grad[i] / a->data[i];
        });
    }
    return res;
}

TensorPtr square(const TensorPtr& a) {
    std::vector<double> out(a->data.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a->data[i] * a->data[i];
    auto res = result_like(a->shape, std::move(out), want_grad({a}));
    if (res->requires_grad) {
        active_tape()->record([a, res] {
            if (res->grad.empty()) return;
            a->ensure_grad();
            for (std::size_t i = 0; i < res->grad.size(); ++i)
                a->grad[i] += 2.0 * a->data[i] * res->grad[i];
        });
    }
    return res;
}

TensorPtr sqrt(const TensorPtr& a) {
    std::vector<double> out(a->data.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (!(a->data[i] > 0.0)) {
            throw DomainError("sqrt: input must be strictly positive, got " +
                              std::to_string(a->data[i]));
        }
        out[i] = std::sqrt(a->data[i]);
    }
    auto res = result_like(a->shape, std::move(out), want_grad({a}));
    if (res->requires_grad) {
        active_tape()->record([a, res] {
            if (res->grad.empty()) return;
            a->ensure_grad();
            for (std::size_t i = 0; i < res->grad.size(); ++i)
                a->grad[i] += res->grad[i] / (2.0 * res->data[i]);
        });
    }
    return res;
}

TensorPtr softmax_rows(const TensorPtr& a) {
    check_rank2("softmax_rows", a);
    const int r = a->shape[0], c = a->shape[1];
    std::vector<double> out(a->data.size());
    for (int i = 0; i < r; ++i) {
        const double* row = a->data.data() + static_cast<std::size_t>(i) * c;
        double* orow = out.data() + static_cast<std::size_t>(i) * c;
        double m = row[0];
        for (int j = 1; j < c; ++j) m = std::max(m, row[j]);
        double s = 0.0;
        for (int j = 0; j < c; ++j) {
            orow[j] = std::exp(row[j] - m);
            s += orow[j];
        }
        for (int j = 0; j < c; ++j) orow[j] /= s;
    }
    auto res = result_like(a->shape, std::move(out), want_grad({a}));
    if (res->requires_grad) {
        active_tape()->record([a, res, r, c] {
            if (res->grad.empty()) return;
            a->ensure_grad();
            for (int i = 0; i < r; ++i) {
                const double* y = res->data.data() + static_cast<std::size_t>(i) * c;
                const double* g = res->grad.data() + static_cast<std::size_t>(i) * c;
                double dot = 0.0;
                for (int j = 0; j < c; ++j) dot += g[j] * y[j];
                double* da = a->grad.data() + static_cast<std::size_t>(i) * c;
                for (int j = 0; j < c; ++j) da[j] += y[j] * (g[j] - dot);
            }
        });
    }
    return res;
}

TensorPtr l2_normalize_rows(const TensorPtr& a) {
    check_rank2("l2_normalize_rows", a);
    const int r = a->shape[0], c = a->shape[1];
    std::vector<double> out(a->data.size());
    std::vector<double> norms(r);
    for (int i = 0; i < r; ++i) {
        const double* row = a->data.data() + static_cast<std::size_t>(i) * c;
        double s = 0.0;
        for (int j = 0; j < c; ++j) s += row[j] * row[j];
        const double n = std::sqrt(s);
        if (n < 1e-12) {
            throw DomainError("l2_normalize_rows: row " + std::to_string(i) +
                              " has norm " + std::to_string(n) + " below 1e-12");
        }
        norms[i] = n;
        double* orow = out.data() + static_cast<std::size_t>(i) * c;
        for (int j = 0; j < c; ++j) orow[j] = row[j] / n;
    }
    auto res = result_like(a->shape, std::move(out), want_grad({a}));
    if (res->requires_grad) {
        active_tape()->record([a, res, norms, r, c] {
            if (res->grad.empty()) return;
            a->ensure_grad();
            for (int i = 0; i < r; ++i) {
                const double* y = res->data.data() + static_cast<std::size_t>(i) * c;
                const double* g = res->grad.data() + static_cast<std::size_t>(i) * c;
                double dot = 0.0;
                for (int j = 0; j < c; ++j) dot += g[j] * y[j];
                double* da = a->grad.data() + static_cast<std::size_t>(i) * c;
                for (int j = 0; j < c; ++j) da[j] += (g[j] - dot * y[j]) / norms[i];
            }
        });
    }
    return res;
}

namespace {

void check_axis2(const char* kind, const TensorPtr& a, int axis) {
    check_rank2(kind, a);
    if (axis != 0 && axis != 1) {
        throw ShapeError(std::string(kind) + ": axis must be 0 or 1, got " + std::to_string(axis));
    }
}

TensorPtr reduce_axis(const char* kind, const TensorPtr& a, int axis, bool mean) {
    if (a->rank() == 1) {
        if (axis != 0) throw ShapeError(std::string(kind) + ": axis must be 0 for rank-1 input");
        double s = 0.0;
        for (double v : a->data) s += v;
        const double denom = mean ? static_cast<double>(a->data.size()) : 1.0;
        auto res = result_like({1}, {s / denom}, want_grad({a}));
        if (res->requires_grad) {
            active_tape()->record([a, res, denom] {
                if (res->grad.empty()) return;
                a->ensure_grad();
                const double g = res->grad[0] / denom;
                for (std::size_t i = 0; i < a->grad.size(); ++i) a->grad[i] += g;
            });
        }
        return res;
    }
    check_axis2(kind, a, axis);
    const int r = a->shape[0], c = a->shape[1];
    if (axis == 1) {
        std::vector<double> out(r, 0.0);
        for (int i = 0; i < r; ++i) {
            const double* row = a->data.data() + static_cast<std::size_t>(i) * c;
            double s = 0.0;
            for (int j = 0; j < c; ++j) s += row[j];
            out[i] = mean ? s / c : s;
        }
        auto res = result_like({r, 1}, std::move(out), want_grad({a}));
        if (res->requires_grad) {
            const double denom = mean ? static_cast<double>(c) : 1.0;
            active_tape()->record([a, res, r, c, denom] {
                if (res->grad.empty()) return;
                a->ensure_grad();
                for (int i = 0; i < r; ++i) {
                    const double g = res->grad[i] / denom;
                    double* da = a->grad.data() + static_cast<std::size_t>(i) * c;
                    for (int j = 0; j < c; ++j) da[j] += g;
                }
            });
        }
        return res;
    }
    std::vector<double> out(c, 0.0);
    for (int i = 0; i < r; ++i) {
        const double* row = a->data.data() + static_cast<std::size_t>(i) * c;
        for (int j = 0; j < c; ++j) out[j] += row[j];
    }
    if (mean) {
        for (int j = 0; j < c; ++j) out[j] /= r;
    }
    auto res = result_like({1, c}, std::move(out), want_grad({a}));
    if (res->requires_grad) {
        const double denom = mean ? static_cast<double>(r) : 1.0;
        active_tape()->record([a, res, r, c, denom] {
            if (res->grad.empty()) return;
            a->ensure_grad();
            for (int i = 0; i < r; ++i) {
                double* da = a->grad.data() + static_cast<std::size_t>(i) * c;
                for (int j = 0; j < c; ++j) da[j] += res->grad[j] / denom;
            }
        });
    }
    return res;
}

}  // namespace

TensorPtr mean_pool_axis(const TensorPtr& a, int axis) {
    return reduce_axis("mean_pool_axis", a, axis, true);
}

TensorPtr sum_axis(const TensorPtr& a, int axis) {
    return reduce_axis("sum_axis", a, axis, false);
}

TensorPtr concat_axis(const std::vector<TensorPtr>& parts, int axis) {
    if (parts.empty()) throw ShapeError("concat_axis: empty input list");
    const int rank = parts[0]->rank();
    bool req = false;
    for (const auto& p : parts) {
        if (p->rank() != rank) {
            throw ShapeError("concat_axis: mixed ranks, " + shape_str(parts[0]->shape) + " vs " +
                             shape_str(p->shape));
        }
        if (p->requires_grad) req = true;
    }
    req = req && active_tape() != nullptr;
    if (rank == 1) {
        if (axis != 0) throw ShapeError("concat_axis: axis must be 0 for rank-1 inputs");
        std::vector<double> out;
        for (const auto& p : parts) out.insert(out.end(), p->data.begin(), p->data.end());
        auto res = result_like({static_cast<int>(out.size())}, std::move(out), req);
        if (req) {
            auto parts_copy = parts;
            active_tape()->record([parts_copy, res] {
                if (res->grad.empty()) return;
                std::size_t off = 0;
                for (const auto& p : parts_copy) {
                    if (p->requires_grad) {
                        p->ensure_grad();
                        for (std::size_t i = 0; i < p->data.size(); ++i)
                            p->grad[i] += res->grad[off + i];
                    }
                    off += p->data.size();
                }
            });
        }
        return res;
    }
    if (rank != 2) throw ShapeError("concat_axis: only rank-1 and rank-2 supported");
    if (axis != 0 && axis != 1) throw ShapeError("concat_axis: axis must be 0 or 1");
    const int other = axis == 0 ? 1 : 0;
    const int fixed = parts[0]->shape[other];
    int total = 0;
    for (const auto& p : parts) {
        if (p->shape[other] != fixed) {
            throw ShapeError("concat_axis: dimension " + std::to_string(other) +
                             " disagrees, " + shape_str(parts[0]->shape) + " vs " +
                             shape_str(p->shape));
        }
        total += p->shape[axis];
    }
    const int rows_out = axis == 0 ? total : fixed;
    const int cols_out = axis == 0 ? fixed : total;
    std::vector<double> out(static_cast<std::size_t>(rows_out) * cols_out);
    if (axis == 0) {
        std::size_t off = 0;
        for (const auto& p : parts) {
            std::copy(p->data.begin(), p->data.end(), out.begin() + off);
            off += p->data.size();
        }
    } else {
        int coff = 0;
        for (const auto& p : parts) {
            const int pc = p->shape[1];
            for (int i = 0; i < rows_out; ++i) {
                std::copy(p->data.begin() + static_cast<std::size_t>(i) * pc,
                          p->data.begin() + static_cast<std::size_t>(i + 1) * pc,
                          out.begin() + static_cast<std::size_t>(i) * cols_out + coff);
            }
            coff += pc;
        }
    }
    auto res = result_like({rows_out, cols_out}, std::move(out), req);
    if (req) {
        auto parts_copy = parts;
        active_tape()->record([parts_copy, res, axis, rows_out, cols_out] {
            if (res->grad.empty()) return;
            if (axis == 0) {
                std::size_t off = 0;
                for (const auto& p : parts_copy) {
                    if (p->requires_grad) {
                        p->ensure_grad();
                        for (std::size_t i = 0; i < p->data.size(); ++i)
                            p->grad[i] += res->grad[off + i];
                    }
                    off += p->data.size();
                }
            } else {
                int coff = 0;
                for (const auto& p : parts_copy) {
                    const int pc = p->shape[1];
                    if (p->requires_grad) {
                        p->ensure_grad();
                        for (int i = 0; i < rows_out; ++i) {
                            for (int j = 0; j < pc; ++j) {
                                p->grad[static_cast<std::size_t>(i) * pc + j] +=
                                    res->grad[static_cast<std::size_t>(i) * cols_out + coff + j];
                            }
                        }
                    }
                    coff += pc;
                }
            }
        });
    }
    return res;
}

TensorPtr transpose(const TensorPtr& a) {
    check_rank2("transpose", a);
    const int r = a->shape[0], c = a->shape[1];
    std::vector<double> out(a->data.size());
    for (int i = 0; i < r; ++i)
        for (int j = 0; j < c; ++j)
            out[static_cast<std::size_t>(j) * r + i] = a->data[static_cast<std::size_t>(i) * c + j];
    auto res = result_like({c, r}, std::move(out), want_grad({a}));
    if (res->requires_grad) {
        active_tape()->record([a, res, r, c] {
            if (res->grad.empty()) return;
            a->ensure_grad();
            for (int i = 0; i < r; ++i)
                for (int j = 0; j < c; ++j)
                    a->grad[static_cast<std::size_t>(i) * c + j] +=
                        res->grad[static_cast<std::size_t>(j) * r + i];
        });
    }
    return res;
}

TensorPtr gather_rows(const TensorPtr& a, const std::vector<int>& indices) {
    check_rank2("gather_rows", a);
    const int r = a->shape[0], c = a->shape[1];
    for (int idx : indices) {
        if (idx < 0 || idx >= r) {
            throw ContractError("gather_rows: index " + std::to_string(idx) +
                                " out of range for " + std::to_string(r) + " rows");
        }
    }
    std::vector<double> out(indices.size() * static_cast<std::size_t>(c));
    for (std::size_t t = 0; t < indices.size(); ++t) {
        std::copy(a->data.begin() + static_cast<std::size_t>(indices[t]) * c,
                  a->data.begin() + static_cast<std::size_t>(indices[t] + 1) * c,
                  out.begin() + t * c);
    }
    auto res = result_like({static_cast<int>(indices.size()), c}, std::move(out), want_grad({a}));
    if (res->requires_grad) {
        active_tape()->record([a, res, indices, c] {
            if (res->grad.empty()) return;
            a->ensure_grad();
            for (std::size_t t = 0; t < indices.size(); ++t) {
                for (int j = 0; j < c; ++j) {
                    a->grad[static_cast<std::size_t>(indices[t]) * c + j] +=
                        res->grad[t * c + j];
                }
            }
        });
    }
    return res;
}

const std::vector<OpKind>& all_op_kinds() {
    static const std::vector<OpKind> kinds = {
        OpKind::kMatmul,       OpKind::kAdd,          OpKind::kSub,
        OpKind::kMul,          OpKind::kScalarMul,    OpKind::kRelu,
        OpKind::kExp,          OpKind::kLog,          OpKind::kSoftmaxRows,
        OpKind::kL2NormalizeRows, OpKind::kMeanPoolAxis, OpKind::kConcatAxis,
        OpKind::kTranspose,    OpKind::kGatherRows,   OpKind::kSumAxis,
        OpKind::kSquare,       OpKind::kSqrt,
    };
    return kinds;
}

std::string op_kind_name(OpKind kind) {
    switch (kind) {
        case OpKind::kMatmul: return "matmul";
        case OpKind::kAdd: return "add";
        case OpKind::kSub: return "sub";
        case OpKind::kMul: return "mul";
        case OpKind::kScalarMul: return "scalar_mul";
        case OpKind::kRelu: return "relu";
        case OpKind::kExp: return "exp";
        case OpKind::kLog: return "log";
        case OpKind::kSoftmaxRows: return "softmax_rows";
        case OpKind::kL2NormalizeRows: return "l2_normalize_rows";
        case OpKind::kMeanPoolAxis: return "mean_pool_axis";
        case OpKind::kConcatAxis: return "concat_axis";
        case OpKind::kTranspose: return "transpose";
        case OpKind::kGatherRows: return "gather_rows";
        case OpKind::kSumAxis: return "sum_axis";
        case OpKind::kSquare: return "square";
        case OpKind::kSqrt: return "sqrt";
    }
    return "unknown";
}

namespace {

void check_arity(OpKind kind, const std::vector<TensorPtr>& inputs, std::size_t n) {
    if (inputs.size() != n) {
        throw ContractError("forward_op(" + op_kind_name(kind) + "): expected " +
                            std::to_string(n) + " inputs, got " + std::to_string(inputs.size()));
    }
}

}  // namespace

TensorPtr forward_op(OpKind kind, const std::vector<TensorPtr>& inputs, const OpArgs& args) {
    switch (kind) {
        case OpKind::kMatmul: check_arity(kind, inputs, 2); return matmul(inputs[0], inputs[1]);
        case OpKind::kAdd: check_arity(kind, inputs, 2); return add(inputs[0], inputs[1]);
        case OpKind::kSub: check_arity(kind, inputs, 2); return sub(inputs[0], inputs[1]);
        case OpKind::kMul: check_arity(kind, inputs, 2); return mul(inputs[0], inputs[1]);
        case OpKind::kScalarMul: check_arity(kind, inputs, 1); return scalar_mul(inputs[0], args.scalar);
        case OpKind::kRelu: check_arity(kind, inputs, 1); return relu(inputs[0]);
        case OpKind::kExp: check_arity(kind, inputs, 1); return exp(inputs[0]);
        case OpKind::kLog: check_arity(kind, inputs, 1); return log(inputs[0]);
        case OpKind::kSoftmaxRows: check_arity(kind, inputs, 1); return softmax_rows(inputs[0]);
        case OpKind::kL2NormalizeRows: check_arity(kind, inputs, 1); return l2_normalize_rows(inputs[0]);
        case OpKind::kMeanPoolAxis: check_arity(kind, inputs, 1); return mean_pool_axis(inputs[0], args.axis);
        case OpKind::kConcatAxis: return concat_axis(inputs, args.axis);
        case OpKind::kTranspose: check_arity(kind, inputs, 1); return transpose(inputs[0]);
        case OpKind::kGatherRows: check_arity(kind, inputs, 1); return gather_rows(inputs[0], args.indices);
        case OpKind::kSumAxis: check_arity(kind, inputs, 1); return sum_axis(inputs[0], args.axis);
        case OpKind::kSquare: check_arity(kind, inputs, 1); return square(inputs[0]);
        case OpKind::kSqrt: check_arity(kind, inputs, 1); return sqrt(inputs[0]);
    }
    throw ContractError("forward_op: unknown kind");
}

void sgd_step(const std::vector<TensorPtr>& params, double lr, double momentum) {
    for (const auto& p : params) {
        if (p->grad.empty()) {
            throw ContractError("sgd_step: parameter has no gradient (shape " +
                                shape_str(p->shape) + ")");
        }
    }
    for (const auto& p : params) {
        if (p->velocity.empty()) p->velocity.assign(p->data.size(), 0.0);
        for (std::size_t i = 0; i < p->data.size(); ++i) {
            p->velocity[i] = momentum * p->velocity[i] + p->grad[i];
            p->data[i] -= lr * p->velocity[i];
        }
        p->zero_grad();
    }
}

}  // namespace ct
