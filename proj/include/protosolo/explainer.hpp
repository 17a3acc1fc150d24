#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "protosolo/data.hpp"
#include "protosolo/model.hpp"

namespace protosolo {

inline constexpr double default_kappa = 95.0;

/// Inclusive pixel rectangle.
struct BoundingBox {
    std::size_t top = 0;
    std::size_t left = 0;
    std::size_t bottom = 0;
    std::size_t right = 0;

    std::size_t height() const { return bottom - top + 1; }
    std::size_t width() const { return right - left + 1; }
    std::size_t area() const { return height() * width(); }
    bool contains(std::size_t y, std::size_t x) const { return y >= top && y <= bottom && x >= left && x <= right; }

    friend bool operator==(const BoundingBox&, const BoundingBox&) = default;
};

struct ActivationOverlay {
    std::string source_id;
    Tensor activation; // [S,S]
    double threshold = 0.0;
    Tensor mask;       // [S,S] of 0/1, never empty
    BoundingBox box;   // minimal box around the mask
};

/// Align-corners bilinear resize of a [H1,W1] map to [size,size]; size must not shrink
/// either axis. A 1-pixel axis is replicated.
Tensor bilinear_upsample(const Tensor& map, std::size_t size);

/// Nearest-rank percentile: the threshold is the ceil(kappa/100 * N)-th smallest value;
/// every pixel >= threshold joins the mask. 0 < kappa < 100.
ActivationOverlay threshold_region(const Tensor& activation, double kappa, std::string source_id = "");

/// Key region of channel map M^c(x).
ActivationOverlay explain_feature_map(const Sample& sample, std::size_t channel, const Model& model,
                                      double kappa = default_kappa);

/// Overlay of candidate `target` in a feature stack, rendered over a sample: the channel
/// map itself (feature-map mode) or the prototype's similarity at every position
/// (feature-vector mode, where a position carries no spatial map of its own).
ActivationOverlay overlay_for_target(const FeatureStack& features, std::size_t target, std::span<const double> prototype,
                                     const ModelConfig& config, std::size_t image_size, const std::string& source_id,
                                     double kappa);

struct PrototypeExplanation {
    std::size_t k = 0;
    std::size_t u = 0;
    std::size_t sample = 0;  // j_(k,u), index into the training set
    std::string sample_id;
    std::size_t target = 0;  // c_(k,u): channel, or flat position in feature-vector mode
    double distance = 0.0;   // L2
    ActivationOverlay overlay;
};

/// Training-set features computed once and shared across explanations.
struct TrainingFeatures {
    std::vector<FeatureStack> features;
    std::vector<std::size_t> labels;
};

TrainingFeatures training_features(const Model& model, const std::vector<Sample>& train);

PrototypeExplanation explain_prototype(std::size_t k, std::size_t u, const Model& model,
                                       const std::vector<Sample>& train, const TrainingFeatures& features,
                                       double kappa = default_kappa);
PrototypeExplanation explain_prototype(std::size_t k, std::size_t u, const Model& model,
                                       const std::vector<Sample>& train, double kappa = default_kappa);
/// Every prototype, class-major.
std::vector<PrototypeExplanation> explain_all_prototypes(const Model& model, const std::vector<Sample>& train,
                                                         double kappa = default_kappa);

struct ClassExplanation {
    std::size_t k = 0;
    std::size_t key_prototype = 0; // u^delta_k
    std::size_t key_target = 0;    // c^delta_k
    double similarity = 0.0;       // G_k(x)
    double weight = 0.0;           // w^(k,k) (dense: weight of the key prototype's column)
    double logit = 0.0;
    ActivationOverlay input_overlay;
    PrototypeExplanation prototype;
};

struct ExplanationRecord {
    std::string input_id;
    std::size_t predicted = 0;
    std::vector<ClassExplanation> classes;
};

ExplanationRecord explain_decision(const Sample& sample, const Model& model, std::span<const std::size_t> classes,
                                   const std::vector<Sample>& train, const TrainingFeatures& features,
                                   double kappa = default_kappa);

/// The `n` classes with the largest logits, best first.
std::vector<std::size_t> top_classes(const Model& model, const Sample& sample, std::size_t n);

/// Writes `<id>_class<k>_{input,prototype}.png` (yellow box), the matching
/// `_heatmap.png` blends and `<id>.explain.json`.
void export_explanation(const std::filesystem::path& dir, const ExplanationRecord& record, const Sample& input,
                        const std::vector<Sample>& train);

std::string explanation_json(const ExplanationRecord& record);

} // namespace protosolo
