#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "ct/errors.hpp"

namespace ct {

// Dense row-major tensor of 64-bit reals participating in a reverse-mode
// tape. Rank 1 and rank 2 cover everything the training objective needs;
// scalars are tensors with one element.
//
// `grad` stays empty until the backward pass first accumulates into it.
// `velocity` is SGD momentum state owned by the parameter itself.
class Tensor {
public:
    std::vector<int> shape;
    std::vector<double> data;
    bool requires_grad = false;
    std::vector<double> grad;
    std::vector<double> velocity;

    Tensor() = default;
    Tensor(std::vector<int> shape_in, std::vector<double> data_in,
           bool requires_grad_in = false);

    std::int64_t numel() const;
    int rank() const { return static_cast<int>(shape.size()); }
    bool is_scalar() const { return numel() == 1; }
    double scalar() const;

    // Rank-2 accessors.
    int rows() const;
    int cols() const;
    double at(int r, int c) const { return data[static_cast<std::size_t>(r) * cols() + c]; }

    void ensure_grad();
    void zero_grad() { grad.clear(); }
};

using TensorPtr = std::shared_ptr<Tensor>;

TensorPtr make_tensor(std::vector<int> shape, std::vector<double> data,
                      bool requires_grad = false);
TensorPtr make_scalar(double value, bool requires_grad = false);
TensorPtr zeros(std::vector<int> shape, bool requires_grad = false);
TensorPtr full(std::vector<int> shape, double value, bool requires_grad = false);

std::string shape_str(const std::vector<int>& shape);

// Ordered record of executed operations. Ops append themselves when a tape
// is active and any input requires grad; appending order is construction
// order, which is a valid topological order by construction.
class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    void record(std::function<void()> backprop);

    // Seeds d(loss)/d(loss) = 1 and walks the records once, in reverse
    // topological order. Gradients accumulate additively across uses.
    void backward(const TensorPtr& loss);

    void clear() { records_.clear(); }
    std::size_t size() const { return records_.size(); }

private:
    std::vector<std::function<void()>> records_;
};

Tape* active_tape();
void set_active_tape(Tape* tape);

class TapeScope {
public:
    explicit TapeScope(Tape& tape) : prev_(active_tape()) { set_active_tape(&tape); }
    ~TapeScope() { set_active_tape(prev_); }
    TapeScope(const TapeScope&) = delete;
    TapeScope& operator=(const TapeScope&) = delete;

private:
    Tape* prev_;
};

// Disables recording for the duration of the scope (key-model forwards,
// evaluation passes).
class NoTapeScope {
public:
    NoTapeScope() : prev_(active_tape()) { set_active_tape(nullptr); }
    ~NoTapeScope() { set_active_tape(prev_); }
    NoTapeScope(const NoTapeScope&) = delete;
    NoTapeScope& operator=(const NoTapeScope&) = delete;

private:
    Tape* prev_;
};

// ---------------------------------------------------------------------------
// Primitive forward operations. Each op computes its value and, when a tape
// is active and any input requires grad, records its backward closure.

TensorPtr matmul(const TensorPtr& a, const TensorPtr& b);
TensorPtr add(const TensorPtr& a, const TensorPtr& b);
TensorPtr sub(const TensorPtr& a, const TensorPtr& b);
TensorPtr mul(const TensorPtr& a, const TensorPtr& b);
TensorPtr scalar_mul(const TensorPtr& a, double c);
TensorPtr relu(const TensorPtr& a);
TensorPtr exp(const TensorPtr& a);
TensorPtr log(const TensorPtr& a);
TensorPtr square(const TensorPtr& a);
TensorPtr sqrt(const TensorPtr& a);
TensorPtr softmax_rows(const TensorPtr& a);
TensorPtr l2_normalize_rows(const TensorPtr& a);
TensorPtr mean_pool_axis(const TensorPtr& a, int axis);
TensorPtr sum_axis(const TensorPtr& a, int axis);
TensorPtr concat_axis(const std::vector<TensorPtr>& parts, int axis);
TensorPtr transpose(const TensorPtr& a);
TensorPtr gather_rows(const TensorPtr& a, const std::vector<int>& indices);

enum class OpKind {
    kMatmul,
    kAdd,
    kSub,
    kMul,
    kScalarMul,
    kRelu,
    kExp,
    kLog,
    kSoftmaxRows,
    kL2NormalizeRows,
    kMeanPoolAxis,
    kConcatAxis,
    kTranspose,
    kGatherRows,
    kSumAxis,
    kSquare,
    kSqrt,
};

const std::vector<OpKind>& all_op_kinds();
std::string op_kind_name(OpKind kind);

// Extra parameters for the kinds that need them.
struct OpArgs {
    double scalar = 1.0;
    int axis = 0;
    std::vector<int> indices;
};

// Uniform dispatcher over the primitive set; used by the gradient-check
// suites to sweep every kind with one loop.
TensorPtr forward_op(OpKind kind, const std::vector<TensorPtr>& inputs,
                     const OpArgs& args = {});

// SGD with momentum: v <- momentum*v + grad; param <- param - lr*v.
// Gradients are cleared afterwards; zeroing is never implicit elsewhere.
void sgd_step(const std::vector<TensorPtr>& params, double lr, double momentum);

}  // namespace ct
