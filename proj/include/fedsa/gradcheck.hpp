#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

namespace fedsa::cli {

struct GradcheckOptions {
    std::uint64_t seed = 7;
    std::size_t instances = 50;
    double eps = 1e-5;
    double tolerance = 1e-4;
    // Scales analytic gradients before comparison; anything but 1 must fail.
    double corrupt_scale = 1.0;
};

struct TermCheck {
    std::string term;
    std::size_t instances = 0;
    double max_relative_error = 0.0;
    bool passed = false;
};

// Finite-difference checks of L_S, L_R, L_MCL, L_CC and the combined client
// objective on randomised toy models and batches, all through the same loss
// assembly the clients train with.
std::vector<TermCheck> run_gradcheck(const GradcheckOptions& options = {});

// Prints one line per term; returns the process exit code (0 iff all pass).
int report_gradcheck(const std::vector<TermCheck>& checks, std::ostream& out);

}  // namespace fedsa::cli
