#include "protosolo/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <vector>

namespace protosolo {

std::string to_string(SeparationSign sign)
{
    return sign == SeparationSign::paper ? "paper" : "repel";
}

SeparationSign parse_separation_sign(std::string_view text)
{
    if (text == "paper") {
        return SeparationSign::paper;
    }
    if (text == "repel") {
        return SeparationSign::repel;
    }
    throw std::invalid_argument("unknown separation sign '" + std::string(text) + "' (expected paper or repel)");
}

double separation_coefficient(const LossWeights& weights, SeparationSign sign)
{
    return sign == SeparationSign::paper ? weights.lambda2 : std::abs(weights.lambda2);
}

namespace {

std::vector<std::size_t> class_rows(const Var& distances, std::size_t label, const ModelConfig& config, bool own)
{
    const std::size_t targets = distances.shape().at(1);
    const std::size_t u = config.prototypes_per_class;
    std::vector<std::size_t> idx;
    for (std::size_t k = 0; k < config.num_classes; ++k) {
        if ((k == label) != own) {
            continue;
        }
        for (std::size_t j = k * u; j < (k + 1) * u; ++j) {
            for (std::size_t t = 0; t < targets; ++t) {
                idx.push_back(j * targets + t);
            }
        }
    }
    return idx;
}

void check_label(std::size_t label, const ModelConfig& config)
{
    if (label >= config.num_classes) {
        throw std::out_of_range("loss: label " + std::to_string(label) + " out of range");
    }
}

void check_batch(std::size_t n, std::size_t labels)
{
    if (n == 0) {
        throw std::invalid_argument("loss: empty batch");
    }
    if (n != labels) {
        throw std::invalid_argument("loss: batch and label counts differ");
    }
}

std::vector<Var> distance_tables(std::span<const FeatureStack> batch, const Tensor& prototypes, const ModelConfig& config)
{
    std::vector<Var> out;
    const Var protos(prototypes);
    for (const auto& fs : batch) {
        out.push_back(score_graph(Var(fs.maps), protos, config).distances);
    }
    return out;
}

} // namespace

Var cluster_distance(const Var& distances, std::size_t label, const ModelConfig& config)
{
    check_label(label, config);
    const auto idx = class_rows(distances, label, config, true);
    return min_over(distances, idx).value;
}

Var separation_distance(const Var& distances, std::size_t label, const ModelConfig& config)
{
    check_label(label, config);
    if (config.num_classes < 2) {
        throw std::invalid_argument("separation loss needs at least two classes");
    }
    const auto idx = class_rows(distances, label, config, false);
    return min_over(distances, idx).value;
}

Var cluster_loss(std::span<const Var> distances, std::span<const std::size_t> labels, const ModelConfig& config)
{
    check_batch(distances.size(), labels.size());
    std::vector<Var> terms;
    for (std::size_t i = 0; i < distances.size(); ++i) {
        terms.push_back(cluster_distance(distances[i], labels[i], config));
    }
    return scale(add_n(terms), 1.0 / static_cast<double>(terms.size()));
}

Var separation_loss(std::span<const Var> distances, std::span<const std::size_t> labels, const ModelConfig& config)
{
    check_batch(distances.size(), labels.size());
    if (config.num_classes < 2) {
        throw std::invalid_argument("separation loss needs at least two classes");
    }
    std::vector<Var> terms;
    for (std::size_t i = 0; i < distances.size(); ++i) {
        terms.push_back(separation_distance(distances[i], labels[i], config));
    }
    return scale(add_n(terms), -1.0 / static_cast<double>(terms.size()));
}

Var weight_factor_loss(const Var& fc, const ModelConfig& config)
{
    const Shape expected{config.num_classes, config.fc_columns()};
    if (fc.shape() != expected) {
        throw std::invalid_argument("weight_factor_loss: fc is " + shape_to_string(fc.shape()) + ", expected " +
                                    shape_to_string(expected));
    }
    std::vector<unsigned char> mask(fc.value().size(), 0);
    const std::size_t cols = expected[1];
    for (std::size_t t = 0; t < config.num_classes; ++t) {
        for (std::size_t j = 0; j < cols; ++j) {
            const std::size_t owner = config.aggregation == Aggregation::single_activation
                                          ? j
                                          : prototype_class(j, config.prototypes_per_class);
            mask[t * cols + j] = owner != t ? 1 : 0;
        }
    }
    return masked_abs_sum(fc, mask);
}

double cluster_loss(std::span<const FeatureStack> batch, std::span<const std::size_t> labels,
                    const Tensor& prototypes, const ModelConfig& config)
{
    check_batch(batch.size(), labels.size());
    const auto tables = distance_tables(batch, prototypes, config);
    return cluster_loss(tables, labels, config).item();
}

double separation_loss(std::span<const FeatureStack> batch, std::span<const std::size_t> labels,
                       const Tensor& prototypes, const ModelConfig& config)
{
    check_batch(batch.size(), labels.size());
    if (config.num_classes < 2) {
        throw std::invalid_argument("separation loss needs at least two classes");
    }
    const auto tables = distance_tables(batch, prototypes, config);
    return separation_loss(tables, labels, config).item();
}

double weight_factor_loss(const Tensor& fc)
{
    if (fc.rank() != 2 || fc.dim(0) != fc.dim(1)) {
        throw std::invalid_argument("weight_factor_loss: expected a square matrix, got " + shape_to_string(fc.shape()));
    }
    ModelConfig square;
    square.num_classes = fc.dim(0);
    square.aggregation = Aggregation::single_activation;
    return weight_factor_loss(Var(fc), square).item();
}

LossTerms total_loss(std::span<const Forward> batch, std::span<const std::size_t> labels, const Var& fc,
                     const ModelConfig& config, const LossWeights& weights, SeparationSign sign)
{
    check_batch(batch.size(), labels.size());
    std::vector<Var> ce;
    std::vector<Var> dist;
    ce.reserve(batch.size());
    dist.reserve(batch.size());
    for (std::size_t i = 0; i < batch.size(); ++i) {
        ce.push_back(softmax_cross_entropy(batch[i].logits, labels[i]));
        dist.push_back(batch[i].score.distances);
    }
    LossTerms t;
    t.crs = scale(add_n(ce), 1.0 / static_cast<double>(ce.size()));
    t.clst = cluster_loss(dist, labels, config);
    t.sep = separation_loss(dist, labels, config);
    t.w = weight_factor_loss(fc, config);
    const std::vector<Var> parts{t.crs, scale(t.clst, weights.lambda1),
                                 scale(t.sep, separation_coefficient(weights, sign)), scale(t.w, weights.lambda3)};
    t.total = add_n(parts);
    t.values = {t.crs.item(), t.clst.item(), t.sep.item(), t.w.item(), t.total.item()};
    return t;
}

} // namespace protosolo
