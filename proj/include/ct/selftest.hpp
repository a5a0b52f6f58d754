#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "ct/matching.hpp"
#include "ct/tensor.hpp"

namespace ct::check {

// Central finite differences of a scalar function, evaluated coordinate by
// coordinate. Independent of the tape: only forward evaluation is used.
std::vector<double> finite_difference_grad(
    const std::function<double(const std::vector<double>&)>& f, const std::vector<double>& x,
    double step = 1e-5);

// |a - b| / max(1, |a|, |b|), maximized over elements.
double max_relative_error(const std::vector<double>& a, const std::vector<double>& b);

// Exhaustive enumeration of all permutations in lexicographic order, keeping
// the first strict improvement; the oracle for assignment exactness.
Assignment brute_force_assignment(const std::vector<double>& cost, int n);

}  // namespace ct::check

namespace ct::selftest {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

// Criterion suites, reused by the acceptance tests and the CLI `selftest`.
CheckResult op_gradients(std::uint64_t seed);
CheckResult loss_gradients(std::uint64_t seed);
CheckResult head_gradients(std::uint64_t seed);
CheckResult assignment_exactness(std::uint64_t seed);
CheckResult matching_properties(std::uint64_t seed);
CheckResult normalization_probes(std::uint64_t seed);
CheckResult loss_spot_checks();

std::vector<CheckResult> run_all(std::uint64_t seed);

}  // namespace ct::selftest
