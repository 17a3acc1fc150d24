#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "protosolo/losses.hpp"
#include "protosolo/model.hpp"

namespace protosolo {

struct GradcheckOptions {
    std::uint64_t seed = 1;
    std::size_t batch = 4;
    double step = 1e-3;
    ModelConfig model = toy_model_config();
    LossWeights weights;
    SeparationSign sign = SeparationSign::repel;
};

struct GradcheckEntry {
    std::string parameter;
    std::size_t checked = 0;
    std::size_t skipped = 0; // coordinates whose +-step straddles a kink
    double max_rel_error = 0.0;
};

struct GradcheckReport {
    std::vector<GradcheckEntry> parameters;
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::size_t skipped = 0;
};

/// |a - n| / max(|a|, |n|, 1e-6).
double relative_error(double analytic, double numeric);

/// Central differences of L_total for every coordinate of every parameter of a seeded
/// model on a seeded random batch, against the reverse-mode gradient.
GradcheckReport gradcheck(const GradcheckOptions& options);

} // namespace protosolo
