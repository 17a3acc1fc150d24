#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "protosolo/autodiff.hpp"
#include "protosolo/tensor.hpp"

namespace protosolo {

/// What a prototype is compared against: one channel's H1xW1 map, or the
/// C1-vector at one spatial position (the full-channel baseline).
enum class ComparisonMode { feature_map, feature_vector };

/// How prototype scores reach the logits: each class through its single best
/// prototype, or every prototype through a dense class-connection layer.
enum class Aggregation { single_activation, dense_sum };

std::string to_string(ComparisonMode mode);
std::string to_string(Aggregation aggregation);
/// Accepts "fmc"/"feature_map" and "vec"/"feature_vector".
ComparisonMode parse_comparison_mode(std::string_view text);
/// Accepts "sa"/"single_activation" and "dense"/"dense_sum".
Aggregation parse_aggregation(std::string_view text);

struct ModelConfig {
    std::size_t num_classes = 4;           // K
    std::size_t prototypes_per_class = 10; // U
    std::size_t channels = 32;             // C1
    std::size_t height = 4;                // H1
    std::size_t width = 4;                 // W1
    ComparisonMode mode = ComparisonMode::feature_map;
    Aggregation aggregation = Aggregation::single_activation;
    double epsilon = 1e-4;
    std::vector<std::size_t> backbone_channels{16, 32, 64, 64};
    std::size_t backbone_kernel = 2;
    std::size_t image_size = 64;

    static constexpr std::size_t image_channels = 3;
    static constexpr std::size_t backbone_stride = 2;

    /// Throws std::invalid_argument if the configuration is inconsistent, including a
    /// backbone whose output extent is not H1 x W1.
    void validate() const;

    std::size_t num_prototypes() const { return num_classes * prototypes_per_class; }
    /// H1*W1 in feature-map mode, C1 in feature-vector mode.
    std::size_t prototype_length() const;
    /// Number of candidates each prototype is compared with: C1 maps or H1*W1 positions.
    std::size_t comparison_count() const;
    std::size_t fc_columns() const;
    /// Spatial extent after each backbone block.
    std::vector<std::size_t> backbone_extents() const;

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Desk-scale configuration used for the gradient check: K=3, U=2, C1=4, H1=W1=3.
ModelConfig toy_model_config();

enum class ParamGroup { backbone, shaping, prototypes, fc };

struct Parameter {
    std::string name;
    ParamGroup group;
    Tensor value;
};

/// Extractor output M(x): C1 maps of H1 x W1.
struct FeatureStack {
    Tensor maps; // [C1,H1,W1]

    std::size_t channels() const { return maps.dim(0); }
    std::size_t height() const { return maps.dim(1); }
    std::size_t width() const { return maps.dim(2); }
    /// M^c(x) flattened to H1*W1.
    Tensor channel_map(std::size_t c) const;
    /// M_(h,w)(x), length C1.
    Tensor position_vector(std::size_t h, std::size_t w) const;
};

struct ScoreTable {
    Tensor scores;                          // g, [K,U]
    std::vector<std::size_t> target_argmax; // per prototype: channel, or flat position h*W1+w
    Tensor class_max;                       // G, [K]
    std::vector<std::size_t> class_argmax;  // u*, [K]
};

/// Graph pieces of one forward pass.
struct ScoreGraph {
    Var distances;    // [K*U, T]
    Var similarities; // [K*U, T]
    Var scores;       // [K*U]
    std::vector<std::size_t> target_argmax;
    Var class_max;    // [K]
    std::vector<std::size_t> class_argmax;

    ScoreTable table(std::size_t num_classes, std::size_t per_class) const;
};

struct Forward {
    Var features; // [C1,H1,W1]
    ScoreGraph score;
    Var logits;   // [K]
};

class Model {
public:
    /// Random initialization: He-uniform conv weights, zero biases, prototypes uniform
    /// in [0,1), FC with 1 on class connections and -0.5 elsewhere.
    Model(ModelConfig config, std::uint64_t seed);

    const ModelConfig& config() const { return config_; }
    std::vector<Parameter>& parameters() { return params_; }
    const std::vector<Parameter>& parameters() const { return params_; }
    Parameter& parameter(std::string_view name);
    const Parameter& parameter(std::string_view name) const;

    Tensor& prototypes() { return params_[prototype_index_].value; }
    const Tensor& prototypes() const { return params_[prototype_index_].value; }
    Tensor& fc_weights() { return params_[fc_index_].value; }
    const Tensor& fc_weights() const { return params_[fc_index_].value; }

    /// Graph leaves for every parameter; those in `trainable` require gradients.
    std::vector<Var> bind(std::span<const ParamGroup> trainable) const;
    std::vector<Var> bind_frozen() const { return bind({}); }

    Var extract(const Var& image, std::span<const Var> bound) const;
    Forward forward(const Tensor& image, std::span<const Var> bound) const;
    Forward forward(const Tensor& image) const;

    std::size_t prototype_param_index() const { return prototype_index_; }
    std::size_t fc_param_index() const { return fc_index_; }

private:
    ModelConfig config_;
    std::vector<Parameter> params_;
    std::size_t prototype_index_ = 0;
    std::size_t fc_index_ = 0;
};

/// Initial FC matrix: 1 where the column's class equals the row, -0.5 elsewhere.
Tensor initial_fc_weights(const ModelConfig& config);

/// Class owning prototype row `j` (rows are ordered class-major: j = k*U + u).
inline std::size_t prototype_class(std::size_t j, std::size_t per_class) { return j / per_class; }

/// Rows the prototypes are compared with: channel maps [C1, H1*W1] or position
/// vectors [H1*W1, C1].
Var comparison_targets(const Var& features, ComparisonMode mode);
ScoreGraph score_graph(const Var& features, const Var& prototypes, const ModelConfig& config);
Var classify_graph(const ScoreGraph& score, const Var& fc, Aggregation aggregation);

FeatureStack extract(const Tensor& image, const Model& model);
/// s(phi, varphi) = ln((d + 1) / (d + eps)), d the squared L2 distance.
double similarity(const Tensor& phi, const Tensor& varphi, double eps);
ScoreTable prototype_scores(const FeatureStack& features, const Tensor& prototypes, const ModelConfig& config);
Tensor classify(const ScoreTable& scores, const Tensor& fc_weights, Aggregation aggregation);

std::size_t argmax(const Tensor& values);

/// Flattened candidate `target` of a feature stack: channel map (feature-map mode) or
/// position vector at flat position h*W1+w (feature-vector mode).
Tensor target_vector(const FeatureStack& features, std::size_t target, ComparisonMode mode);

struct TargetMatch {
    std::size_t sample = 0;
    std::size_t target = 0;
    double sq_distance = 0.0;
};

/// Exhaustive search over the candidates of every sample labelled `label` for the one
/// closest to `prototype`. Ties keep the smallest (sample, target). Throws if no sample
/// carries the label.
TargetMatch nearest_target(std::span<const double> prototype, std::size_t label,
                           std::span<const FeatureStack> features, std::span<const std::size_t> labels,
                           ComparisonMode mode);

/// Unaugmented features of every image, in order.
std::vector<FeatureStack> extract_all(const Model& model, std::span<const Tensor* const> images);

} // namespace protosolo
