#pragma once

// Finite-difference checks of every training loss on small random fixtures.

#include <cstdint>
#include <string>
#include <vector>

namespace hyperfscil {

struct GradientSuiteResult {
    std::string loss;
    std::size_t fixtures = 0;
    double max_relative_error = 0.0;
    double tolerance = 0.0;

    bool passed() const { return max_relative_error <= tolerance; }
};

// Losses covered: classification, open-space risk (including the margin), base loss, pairwise
// metric loss and the incremental composite.
std::vector<GradientSuiteResult> run_gradient_suite(std::uint64_t seed, std::size_t fixtures = 20,
                                                    double tolerance = 1e-4, double step = 1e-5);

} // namespace hyperfscil
