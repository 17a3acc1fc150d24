#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "protosolo/data.hpp"
#include "protosolo/model.hpp"
#include "protosolo/trainer.hpp"

namespace protosolo {

/// One run trained through Phase J, then finished twice: once straight into Phase F
/// (non-projection) and once with projection before Phase F. Both arms share every
/// random stream, so they differ only by the projection step.
struct ForkedRun {
    Trainer non_projected;
    Trainer projected;
};

ForkedRun train_forked(const std::vector<Sample>& train, const ModelConfig& model, const TrainConfig& config,
                       const std::function<void(const EpochLog&)>& progress = {});

struct AblationRow {
    std::string name;
    ComparisonMode mode;
    Aggregation aggregation;
    bool project;
    std::size_t prototypes_per_class;
    std::vector<double> accuracies; // one per seed, percent

    double mean() const;
};

/// The four rows of the study, mirroring ProtoPNet (U=1), ProtoPNet + SA,
/// ProtoSolo + projection and ProtoSolo, with U taken from `base`.
std::vector<AblationRow> ablation_rows(const ModelConfig& base);

/// Trains every row for every seed and fills in test accuracies. Rows sharing mode,
/// aggregation and U reuse one forked run.
std::vector<AblationRow> run_ablation(const Dataset& data, const ModelConfig& base, const TrainConfig& config,
                                      const std::vector<std::uint64_t>& seeds,
                                      const std::function<void(const std::string&)>& progress = {});

std::string format_ablation(const std::vector<AblationRow>& rows);

} // namespace protosolo
