#include "protosolo/study.hpp"

#include <cstdio>
#include <numeric>
#include <sstream>

#include "protosolo/metrics.hpp"

namespace protosolo {

ForkedRun train_forked(const std::vector<Sample>& train, const ModelConfig& model, const TrainConfig& config,
                       const std::function<void(const EpochLog&)>& progress)
{
    TrainConfig base = config;
    base.project = false;
    Trainer trunk(Model(model, config.seed), train, base);
    trunk.on_epoch = progress;
    trunk.run_warm();
    trunk.run_joint();

    Trainer projected = trunk;
    trunk.run_fc();
    projected.project();
    projected.run_fc();
    return {std::move(trunk), std::move(projected)};
}

double AblationRow::mean() const
{
    if (accuracies.empty()) {
        return 0.0;
    }
    return std::accumulate(accuracies.begin(), accuracies.end(), 0.0) / static_cast<double>(accuracies.size());
}

std::vector<AblationRow> ablation_rows(const ModelConfig& base)
{
    const std::size_t u = base.prototypes_per_class;
    return {
        {"ProtoPNet (U=1)", ComparisonMode::feature_vector, Aggregation::dense_sum, true, 1, {}},
        {"ProtoPNet + SA", ComparisonMode::feature_vector, Aggregation::single_activation, true, u, {}},
        {"ProtoSolo + P", ComparisonMode::feature_map, Aggregation::single_activation, true, u, {}},
        {"ProtoSolo", ComparisonMode::feature_map, Aggregation::single_activation, false, u, {}},
    };
}

std::vector<AblationRow> run_ablation(const Dataset& data, const ModelConfig& base, const TrainConfig& config,
                                      const std::vector<std::uint64_t>& seeds,
                                      const std::function<void(const std::string&)>& progress)
{
    auto rows = ablation_rows(base);
    for (std::uint64_t seed : seeds) {
        std::vector<bool> done(rows.size(), false);
        for (std::size_t r = 0; r < rows.size(); ++r) {
            if (done[r]) {
                continue;
            }
            ModelConfig mc = base;
            mc.mode = rows[r].mode;
            mc.aggregation = rows[r].aggregation;
            mc.prototypes_per_class = rows[r].prototypes_per_class;
            TrainConfig tc = config;
            tc.seed = seed;
            if (progress) {
                progress("seed " + std::to_string(seed) + ": training " + to_string(mc.mode) + "/" +
                         to_string(mc.aggregation) + " U=" + std::to_string(mc.prototypes_per_class));
            }
            const ForkedRun run = train_forked(data.train, mc, tc);
            for (std::size_t q = r; q < rows.size(); ++q) {
                if (rows[q].mode == rows[r].mode && rows[q].aggregation == rows[r].aggregation &&
                    rows[q].prototypes_per_class == rows[r].prototypes_per_class) {
                    const Trainer& arm = rows[q].project ? run.projected : run.non_projected;
                    rows[q].accuracies.push_back(accuracy(arm.model(), data.test));
                    done[q] = true;
                }
            }
        }
    }
    return rows;
}

std::string format_ablation(const std::vector<AblationRow>& rows)
{
    std::ostringstream out;
    out << "row\tmethod\tSA\tFMC\tNP\tU\tmean_acc\tper_seed\n";
    char buf[64];
    for (std::size_t r = 0; r < rows.size(); ++r) {
        const auto& row = rows[r];
        std::snprintf(buf, sizeof(buf), "%.2f", row.mean());
        out << r + 1 << "\t" << row.name << "\t"
            << (row.aggregation == Aggregation::single_activation ? "x" : "-") << "\t"
            << (row.mode == ComparisonMode::feature_map ? "x" : "-") << "\t" << (row.project ? "-" : "x") << "\t"
            << row.prototypes_per_class << "\t" << buf << "\t";
        for (std::size_t i = 0; i < row.accuracies.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%s%.2f", i ? "," : "", row.accuracies[i]);
            out << buf;
        }
        out << "\n";
    }
    return out.str();
}

} // namespace protosolo
