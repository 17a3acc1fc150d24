#include "protosolo/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "protosolo/rng.hpp"

namespace protosolo {

std::string to_string(ComparisonMode mode)
{
    return mode == ComparisonMode::feature_map ? "feature_map" : "feature_vector";
}

std::string to_string(Aggregation aggregation)
{
    return aggregation == Aggregation::single_activation ? "single_activation" : "dense_sum";
}

ComparisonMode parse_comparison_mode(std::string_view text)
{
    if (text == "fmc" || text == "feature_map") {
        return ComparisonMode::feature_map;
    }
    if (text == "vec" || text == "feature_vector") {
        return ComparisonMode::feature_vector;
    }
    throw std::invalid_argument("unknown comparison mode '" + std::string(text) + "' (expected fmc or vec)");
}

Aggregation parse_aggregation(std::string_view text)
{
    if (text == "sa" || text == "single_activation") {
        return Aggregation::single_activation;
    }
    if (text == "dense" || text == "dense_sum") {
        return Aggregation::dense_sum;
    }
    throw std::invalid_argument("unknown aggregation '" + std::string(text) + "' (expected sa or dense)");
}

std::size_t ModelConfig::prototype_length() const
{
    return mode == ComparisonMode::feature_map ? height * width : channels;
}

std::size_t ModelConfig::comparison_count() const
{
    return mode == ComparisonMode::feature_map ? channels : height * width;
}

std::size_t ModelConfig::fc_columns() const
{
    return aggregation == Aggregation::single_activation ? num_classes : num_prototypes();
}

std::vector<std::size_t> ModelConfig::backbone_extents() const
{
    std::vector<std::size_t> extents;
    std::size_t s = image_size;
    for (std::size_t i = 0; i < backbone_channels.size(); ++i) {
        if (s < backbone_kernel) {
            throw std::invalid_argument("model config: backbone block " + std::to_string(i) + " receives extent " +
                                        std::to_string(s) + " smaller than kernel " + std::to_string(backbone_kernel));
        }
        s = (s - backbone_kernel) / backbone_stride + 1;
        extents.push_back(s);
    }
    return extents;
}

void ModelConfig::validate() const
{
    if (num_classes < 1 || prototypes_per_class < 1 || channels < 1 || height < 1 || width < 1) {
        throw std::invalid_argument("model config: K, U, C1, H1 and W1 must be positive");
    }
    if (!(epsilon > 0.0)) {
        throw std::invalid_argument("model config: epsilon must be positive");
    }
    if (backbone_kernel < 1 || image_size < 1) {
        throw std::invalid_argument("model config: kernel and image size must be positive");
    }
    for (std::size_t c : backbone_channels) {
        if (c == 0) {
            throw std::invalid_argument("model config: backbone widths must be positive");
        }
    }
    const auto extents = backbone_extents();
    const std::size_t final_extent = extents.empty() ? image_size : extents.back();
    if (final_extent != height || final_extent != width) {
        throw std::invalid_argument("model config: backbone maps " + std::to_string(image_size) + "px images to " +
                                    std::to_string(final_extent) + "x" + std::to_string(final_extent) +
                                    ", not the configured " + std::to_string(height) + "x" + std::to_string(width));
    }
}

ModelConfig toy_model_config()
{
    ModelConfig c;
    c.num_classes = 3;
    c.prototypes_per_class = 2;
    c.channels = 4;
    c.height = 3;
    c.width = 3;
    c.backbone_channels = {4, 4};
    c.image_size = 12;
    return c;
}

Tensor FeatureStack::channel_map(std::size_t c) const
{
    const std::size_t len = height() * width();
    std::vector<double> out(maps.data().begin() + static_cast<std::ptrdiff_t>(c * len),
                            maps.data().begin() + static_cast<std::ptrdiff_t>((c + 1) * len));
    return Tensor(Shape{len}, std::move(out));
}

Tensor FeatureStack::position_vector(std::size_t h, std::size_t w) const
{
    Tensor out(Shape{channels()});
    for (std::size_t c = 0; c < channels(); ++c) {
        out[c] = maps.at(c, h, w);
    }
    return out;
}

Tensor initial_fc_weights(const ModelConfig& config)
{
    const std::size_t cols = config.fc_columns();
    Tensor fc(Shape{config.num_classes, cols});
    for (std::size_t t = 0; t < config.num_classes; ++t) {
        for (std::size_t j = 0; j < cols; ++j) {
            const std::size_t owner =
                config.aggregation == Aggregation::single_activation ? j : prototype_class(j, config.prototypes_per_class);
            fc.at(t, j) = owner == t ? 1.0 : -0.5;
        }
    }
    return fc;
}

namespace {

Tensor he_uniform(Shape shape, std::size_t fan_in, Rng& rng)
{
    Tensor t(std::move(shape));
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (double& v : t.data()) {
        v = rng.uniform(-bound, bound);
    }
    return t;
}

} // namespace

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config))
{
    config_.validate();
    Rng rng = Rng::derive(seed, 0x6d6f64656cULL);
    const std::size_t k = config_.backbone_kernel;
    std::size_t in = ModelConfig::image_channels;
    for (std::size_t i = 0; i < config_.backbone_channels.size(); ++i) {
        const std::size_t out = config_.backbone_channels[i];
        const std::string prefix = "backbone." + std::to_string(i);
        params_.push_back({prefix + ".weight", ParamGroup::backbone, he_uniform(Shape{out, in, k, k}, in * k * k, rng)});
        params_.push_back({prefix + ".bias", ParamGroup::backbone, Tensor(Shape{out})});
        in = out;
    }
    for (std::size_t i = 0; i < 2; ++i) {
        const std::string prefix = "shaping." + std::to_string(i);
        params_.push_back({prefix + ".weight", ParamGroup::shaping,
                           he_uniform(Shape{config_.channels, in, 1, 1}, in, rng)});
        params_.push_back({prefix + ".bias", ParamGroup::shaping, Tensor(Shape{config_.channels})});
        in = config_.channels;
    }
    Tensor protos(Shape{config_.num_prototypes(), config_.prototype_length()});
    for (double& v : protos.data()) {
        v = rng.uniform();
    }
    prototype_index_ = params_.size();
    params_.push_back({"prototypes", ParamGroup::prototypes, std::move(protos)});
    fc_index_ = params_.size();
    params_.push_back({"fc", ParamGroup::fc, initial_fc_weights(config_)});
}

Parameter& Model::parameter(std::string_view name)
{
    for (auto& p : params_) {
        if (p.name == name) {
            return p;
        }
    }
    throw std::out_of_range("model has no parameter '" + std::string(name) + "'");
}

const Parameter& Model::parameter(std::string_view name) const
{
    return const_cast<Model*>(this)->parameter(name);
}

std::vector<Var> Model::bind(std::span<const ParamGroup> trainable) const
{
    std::vector<Var> vars;
    vars.reserve(params_.size());
    for (const auto& p : params_) {
        const bool train = std::find(trainable.begin(), trainable.end(), p.group) != trainable.end();
        vars.emplace_back(p.value, train);
    }
    return vars;
}

Var Model::extract(const Var& image, std::span<const Var> bound) const
{
    const Shape expected{ModelConfig::image_channels, config_.image_size, config_.image_size};
    if (image.shape() != expected) {
        throw std::invalid_argument("extract: expected image " + shape_to_string(expected) + ", got " +
                                    shape_to_string(image.shape()));
    }
    Var x = image;
    std::size_t i = 0;
    for (; i < 2 * config_.backbone_channels.size(); i += 2) {
        x = relu(conv2d(x, bound[i], bound[i + 1], ModelConfig::backbone_stride));
    }
    for (std::size_t s = 0; s < 2; ++s, i += 2) {
        x = relu(conv2d(x, bound[i], bound[i + 1], 1));
    }
    return x;
}

Forward Model::forward(const Tensor& image, std::span<const Var> bound) const
{
    Forward f;
    f.features = extract(Var(image), bound);
    f.score = score_graph(f.features, bound[prototype_index_], config_);
    f.logits = classify_graph(f.score, bound[fc_index_], config_.aggregation);
    return f;
}

Forward Model::forward(const Tensor& image) const
{
    const auto bound = bind_frozen();
    return forward(image, bound);
}

Var comparison_targets(const Var& features, ComparisonMode mode)
{
    const Shape& s = features.shape();
    if (s.size() != 3) {
        throw std::invalid_argument("comparison_targets: features must be [C1,H1,W1]");
    }
    Var maps = reshape(features, Shape{s[0], s[1] * s[2]});
    return mode == ComparisonMode::feature_map ? maps : transpose2d(maps);
}

ScoreTable ScoreGraph::table(std::size_t num_classes, std::size_t per_class) const
{
    ScoreTable t;
    t.scores = scores.value().reshaped(Shape{num_classes, per_class});
    t.target_argmax = target_argmax;
    t.class_max = class_max.value();
    t.class_argmax = class_argmax;
    return t;
}

ScoreGraph score_graph(const Var& features, const Var& prototypes, const ModelConfig& config)
{
    const Shape expected{config.num_prototypes(), config.prototype_length()};
    if (prototypes.shape() != expected) {
        throw std::invalid_argument("prototype_scores: prototypes are " + shape_to_string(prototypes.shape()) +
                                    " but " + to_string(config.mode) + " mode expects " + shape_to_string(expected));
    }
    const Shape fshape{config.channels, config.height, config.width};
    if (features.shape() != fshape) {
        throw std::invalid_argument("prototype_scores: features are " + shape_to_string(features.shape()) +
                                    ", expected " + shape_to_string(fshape));
    }
    ScoreGraph g;
    g.distances = pairwise_sq_distances(prototypes, comparison_targets(features, config.mode));
    g.similarities = log_ratio_similarity(g.distances, config.epsilon);
    auto best_target = row_max(g.similarities);
    g.scores = best_target.values;
    g.target_argmax = std::move(best_target.indices);
    auto best_proto = row_max(reshape(g.scores, Shape{config.num_classes, config.prototypes_per_class}));
    g.class_max = best_proto.values;
    g.class_argmax = std::move(best_proto.indices);
    return g;
}

Var classify_graph(const ScoreGraph& score, const Var& fc, Aggregation aggregation)
{
    return aggregation == Aggregation::single_activation ? linear(score.class_max, fc) : linear(score.scores, fc);
}

FeatureStack extract(const Tensor& image, const Model& model)
{
    const auto bound = model.bind_frozen();
    return FeatureStack{model.extract(Var(image), bound).value()};
}

double similarity(const Tensor& phi, const Tensor& varphi, double eps)
{
    if (!(eps > 0.0)) {
        throw std::invalid_argument("similarity: epsilon must be positive");
    }
    const Var d = sq_l2_distance(Var(phi), Var(varphi));
    return log_ratio_similarity(d, eps).item();
}

ScoreTable prototype_scores(const FeatureStack& features, const Tensor& prototypes, const ModelConfig& config)
{
    return score_graph(Var(features.maps), Var(prototypes), config)
        .table(config.num_classes, config.prototypes_per_class);
}

Tensor classify(const ScoreTable& scores, const Tensor& fc_weights, Aggregation aggregation)
{
    const std::size_t k = scores.class_max.size();
    const std::size_t cols = aggregation == Aggregation::single_activation ? k : scores.scores.size();
    if (fc_weights.shape() != Shape{k, cols}) {
        throw std::invalid_argument("classify: fc weights are " + shape_to_string(fc_weights.shape()) + ", expected " +
                                    shape_to_string(Shape{k, cols}));
    }
    if (aggregation == Aggregation::single_activation) {
        return linear(Var(scores.class_max), Var(fc_weights)).value();
    }
    return linear(Var(scores.scores.reshaped(Shape{scores.scores.size()})), Var(fc_weights)).value();
}

std::size_t argmax(const Tensor& values)
{
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i) {
        if (values[i] > values[best]) {
            best = i;
        }
    }
    return best;
}

Tensor target_vector(const FeatureStack& features, std::size_t target, ComparisonMode mode)
{
    if (mode == ComparisonMode::feature_map) {
        if (target >= features.channels()) {
            throw std::out_of_range("target_vector: channel " + std::to_string(target) + " out of range");
        }
        return features.channel_map(target);
    }
    if (target >= features.height() * features.width()) {
        throw std::out_of_range("target_vector: position " + std::to_string(target) + " out of range");
    }
    return features.position_vector(target / features.width(), target % features.width());
}

TargetMatch nearest_target(std::span<const double> prototype, std::size_t label,
                           std::span<const FeatureStack> features, std::span<const std::size_t> labels,
                           ComparisonMode mode)
{
    if (features.size() != labels.size()) {
        throw std::invalid_argument("nearest_target: features and labels differ in length");
    }
    bool found = false;
    TargetMatch best;
    for (std::size_t j = 0; j < features.size(); ++j) {
        if (labels[j] != label) {
            continue;
        }
        const FeatureStack& fs = features[j];
        const std::size_t count = mode == ComparisonMode::feature_map ? fs.channels() : fs.height() * fs.width();
        const std::size_t hw = fs.height() * fs.width();
        for (std::size_t t = 0; t < count; ++t) {
            double d = 0.0;
            for (std::size_t l = 0; l < prototype.size(); ++l) {
                const double v = mode == ComparisonMode::feature_map ? fs.maps[t * hw + l] : fs.maps[l * hw + t];
                const double diff = v - prototype[l];
                d += diff * diff;
            }
            if (!found || d < best.sq_distance) {
                best = {j, t, d};
                found = true;
            }
        }
    }
    if (!found) {
        throw std::invalid_argument("nearest_target: class " + std::to_string(label) + " has no samples");
    }
    return best;
}

std::vector<FeatureStack> extract_all(const Model& model, std::span<const Tensor* const> images)
{
    const auto bound = model.bind_frozen();
    std::vector<FeatureStack> out;
    out.reserve(images.size());
    for (const Tensor* image : images) {
        out.push_back(FeatureStack{model.extract(Var(*image), bound).value()});
    }
    return out;
}

} // namespace protosolo
