#pragma once

#include <string>
#include <vector>

namespace neutrace::nn {

struct GradCheckReport {
    std::string name;
    int instances = 0;
    double max_rel_err = 0;
    double tolerance = 0;
    bool pass = false;
};

/// Central finite-difference checks (64-bit, eps = 1e-3) for every layer kind
/// and for the full connectivity/clustering loss graph. Relative error is
/// |fd - analytic| / max(|fd|, |analytic|), with differences at the FD noise
/// floor (1e-8) counted as exact. Random instances are regenerated when they
/// land within eps of a kink (hinge margins, pooling ties), where finite
/// differences are undefined.
std::vector<GradCheckReport> run_gradchecks(int instances_per_case, uint64_t seed, double tolerance = 1e-4);

bool all_passed(const std::vector<GradCheckReport>& reports);

}  // namespace neutrace::nn
