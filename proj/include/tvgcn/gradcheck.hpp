#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

namespace tvgcn {

struct GradcheckOptions {
    double step = 1e-4;
    double tolerance = 1e-3;
    std::size_t samples_per_tensor = 20;
    std::size_t backbone_samples_per_tensor = 4;
    std::size_t batch = 2;
    std::size_t num_classes = 4;
    std::uint64_t seed = 0;
};

struct CheckLine {
    std::string name;
    double worst = 0.0;     // worst relative error
    std::string where;      // tensor[index] holding the worst error
    std::size_t checked = 0;
    std::size_t skipped = 0; // probes that crossed a kink or changed a view selection
    bool pass = true;
};

struct GradcheckReport {
    double tolerance = 0.0;
    std::vector<CheckLine> ops;    // one per differentiable primitive
    std::vector<CheckLine> groups; // one per parameter group of the full model

    bool pass() const;
    std::vector<std::string> failures() const;
};

/// |a - b| / max(|a|, |b|, 1e-6)
double relative_error(double a, double b);

/// Central finite differences against reverse-mode gradients, in double
/// precision on the tiny backbone with 8 cube views in train mode. Each
/// primitive is checked on random inputs through a random linear
/// projection; each parameter group is checked through total_loss (and the
/// pretraining head through the single-frame loss). A probe whose +h or -h
/// pass takes a different piecewise-linear branch than the base pass is
/// skipped and another coordinate is drawn; a group with no smooth probe
/// fails.
GradcheckReport run_gradcheck(const GradcheckOptions& options = {});

void print_report(std::ostream& out, const GradcheckReport& report);

} // namespace tvgcn
