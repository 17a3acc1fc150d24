#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "protosolo/data.hpp"
#include "protosolo/explainer.hpp"
#include "protosolo/model.hpp"

namespace protosolo {

/// Top-1 accuracy in percent. Throws on an empty set.
double accuracy(const Model& model, const std::vector<Sample>& data);

struct VectorSimilarity {
    double cos = 0.0;
    double ed = 0.0;
    double pcc = 0.0;
    double js = 0.0;
    bool defined = true; // false when COS or PCC meets a zero-norm vector
};

/// COS, ED, PCC and generalized Jaccard (sum min / sum max, prototype clamped at 0)
/// between a prototype and its target.
VectorSimilarity compare_vectors(std::span<const double> prototype, std::span<const double> target);

struct PrototypeFidelity {
    std::size_t prototype = 0;
    TargetMatch match;
    VectorSimilarity values;
};

struct FidelityReport {
    std::vector<PrototypeFidelity> per_prototype;
    double mean_cos = 0.0;
    double mean_ed = 0.0;
    double mean_pcc = 0.0;
    double mean_js = 0.0;
    std::size_t undefined = 0; // excluded from the means
};

/// Each prototype against its nearest same-class training target.
FidelityReport fidelity(const Model& model, const std::vector<Sample>& train);

inline const std::vector<double> default_pr_thresholds{10, 20, 30, 40, 50};

struct PrTable {
    std::vector<double> thresholds;  // percent
    std::vector<double> percentages; // percent of prototypes with Pr > threshold
    std::vector<double> precisions;  // per prototype, in [0,1]
};

/// Foreground fraction inside the box.
double box_precision(const BoundingBox& box, const Tensor& mask);

/// Pr for every prototype's visualization on its source training image. Rejects data
/// whose masks are missing.
PrTable precision_table(const Model& model, const std::vector<Sample>& train,
                        std::span<const double> thresholds = default_pr_thresholds, double kappa = default_kappa);
PrTable precision_table(std::span<const PrototypeExplanation> explanations, const std::vector<Sample>& train,
                        std::span<const double> thresholds = default_pr_thresholds);

/// Prototypes able to move one class's logit: 1 under single activation, U under the
/// dense layer. One entry per class.
std::vector<std::size_t> prototype_compactness(const ModelConfig& config);

/// Tab-separated renderings.
std::string format_fidelity(const FidelityReport& report);
std::string format_pr_table(const PrTable& table);

} // namespace protosolo
