#include "protosolo/explainer.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>

#include <json.hpp>

#include "protosolo/image_io.hpp"

namespace protosolo {

Tensor bilinear_upsample(const Tensor& map, std::size_t size)
{
    if (map.rank() != 2 || map.empty()) {
        throw std::invalid_argument("bilinear_upsample: expected a non-empty 2-D map, got " + shape_to_string(map.shape()));
    }
    const std::size_t h = map.dim(0);
    const std::size_t w = map.dim(1);
    if (size < h || size < w) {
        throw std::invalid_argument("bilinear_upsample: target " + std::to_string(size) + " is smaller than source " +
                                    shape_to_string(map.shape()));
    }
    // Source coordinate of output index i on an axis of n source samples.
    auto source = [size](std::size_t i, std::size_t n, std::size_t& i0, std::size_t& i1, double& frac) {
        if (n == 1 || size == 1) {
            i0 = i1 = 0;
            frac = 0.0;
            return;
        }
        const double pos = static_cast<double>(i) * static_cast<double>(n - 1) / static_cast<double>(size - 1);
        i0 = std::min(static_cast<std::size_t>(pos), n - 1);
        i1 = std::min(i0 + 1, n - 1);
        frac = pos - static_cast<double>(i0);
    };
    Tensor out(Shape{size, size});
    for (std::size_t y = 0; y < size; ++y) {
        std::size_t y0, y1;
        double fy;
        source(y, h, y0, y1, fy);
        for (std::size_t x = 0; x < size; ++x) {
            std::size_t x0, x1;
            double fx;
            source(x, w, x0, x1, fx);
            const double top = map.at(y0, x0) + fx * (map.at(y0, x1) - map.at(y0, x0));
            const double bottom = map.at(y1, x0) + fx * (map.at(y1, x1) - map.at(y1, x0));
            out.at(y, x) = top + fy * (bottom - top);
        }
    }
    return out;
}

ActivationOverlay threshold_region(const Tensor& activation, double kappa, std::string source_id)
{
    if (!(kappa > 0.0 && kappa < 100.0)) {
        throw std::invalid_argument("threshold_region: kappa must lie in (0, 100)");
    }
    if (activation.rank() != 2 || activation.empty()) {
        throw std::invalid_argument("threshold_region: expected a non-empty 2-D activation");
    }
    std::vector<double> sorted(activation.values());
    std::sort(sorted.begin(), sorted.end());
    const auto n = static_cast<double>(sorted.size());
    auto rank = static_cast<std::size_t>(std::ceil(kappa / 100.0 * n));
    rank = std::clamp<std::size_t>(rank, 1, sorted.size());

    ActivationOverlay o;
    o.source_id = std::move(source_id);
    o.activation = activation;
    o.threshold = sorted[rank - 1];
    o.mask = Tensor(activation.shape());
    const std::size_t rows = activation.dim(0);
    const std::size_t cols = activation.dim(1);
    o.box = {rows, cols, 0, 0};
    for (std::size_t y = 0; y < rows; ++y) {
        for (std::size_t x = 0; x < cols; ++x) {
            if (activation.at(y, x) >= o.threshold) {
                o.mask.at(y, x) = 1.0;
                o.box.top = std::min(o.box.top, y);
                o.box.left = std::min(o.box.left, x);
                o.box.bottom = std::max(o.box.bottom, y);
                o.box.right = std::max(o.box.right, x);
            }
        }
    }
    return o;
}

ActivationOverlay overlay_for_target(const FeatureStack& features, std::size_t target, std::span<const double> prototype,
                                     const ModelConfig& config, std::size_t image_size, const std::string& source_id,
                                     double kappa)
{
    const std::size_t h = features.height();
    const std::size_t w = features.width();
    if (config.mode == ComparisonMode::feature_map) {
        if (target >= features.channels()) {
            throw std::out_of_range("channel " + std::to_string(target) + " out of range (C1 = " +
                                    std::to_string(features.channels()) + ")");
        }
        Tensor map = features.channel_map(target).reshaped(Shape{h, w});
        return threshold_region(bilinear_upsample(map, image_size), kappa, source_id);
    }
    Tensor map(Shape{h, w});
    for (std::size_t p = 0; p < h * w; ++p) {
        const Tensor v = features.position_vector(p / w, p % w);
        double d = 0.0;
        for (std::size_t l = 0; l < v.size(); ++l) {
            d += (v[l] - prototype[l]) * (v[l] - prototype[l]);
        }
        map[p] = std::log((d + 1.0) / (d + config.epsilon));
    }
    return threshold_region(bilinear_upsample(map, image_size), kappa, source_id);
}

ActivationOverlay explain_feature_map(const Sample& sample, std::size_t channel, const Model& model, double kappa)
{
    const FeatureStack fs = extract(sample.image, model);
    if (channel >= fs.channels()) {
        throw std::out_of_range("explain_feature_map: channel " + std::to_string(channel) + " out of range (C1 = " +
                                std::to_string(fs.channels()) + ")");
    }
    Tensor map = fs.channel_map(channel).reshaped(Shape{fs.height(), fs.width()});
    return threshold_region(bilinear_upsample(map, sample.image.dim(1)), kappa, sample.id);
}

TrainingFeatures training_features(const Model& model, const std::vector<Sample>& train)
{
    std::vector<const Tensor*> images;
    TrainingFeatures tf;
    for (const auto& s : train) {
        images.push_back(&s.image);
        tf.labels.push_back(s.label);
    }
    tf.features = extract_all(model, images);
    return tf;
}

namespace {

std::span<const double> prototype_row(const Model& model, std::size_t j)
{
    const std::size_t len = model.config().prototype_length();
    return model.prototypes().data().subspan(j * len, len);
}

void check_class(const ModelConfig& cfg, std::size_t k, std::size_t u)
{
    if (k >= cfg.num_classes || u >= cfg.prototypes_per_class) {
        throw std::out_of_range("prototype (" + std::to_string(k) + ", " + std::to_string(u) + ") out of range");
    }
}

} // namespace

PrototypeExplanation explain_prototype(std::size_t k, std::size_t u, const Model& model,
                                       const std::vector<Sample>& train, const TrainingFeatures& features, double kappa)
{
    const ModelConfig& cfg = model.config();
    check_class(cfg, k, u);
    const std::size_t j = k * cfg.prototypes_per_class + u;
    const auto proto = prototype_row(model, j);
    TargetMatch m;
    try {
        m = nearest_target(proto, k, features.features, features.labels, cfg.mode);
    } catch (const std::invalid_argument&) {
        throw std::invalid_argument("explain_prototype: class " + std::to_string(k) + " has no training samples");
    }
    PrototypeExplanation e;
    e.k = k;
    e.u = u;
    e.sample = m.sample;
    e.sample_id = train.at(m.sample).id;
    e.target = m.target;
    e.distance = std::sqrt(m.sq_distance);
    e.overlay = overlay_for_target(features.features[m.sample], m.target, proto, cfg, train[m.sample].image.dim(1),
                                   e.sample_id, kappa);
    return e;
}

PrototypeExplanation explain_prototype(std::size_t k, std::size_t u, const Model& model,
                                       const std::vector<Sample>& train, double kappa)
{
    return explain_prototype(k, u, model, train, training_features(model, train), kappa);
}

std::vector<PrototypeExplanation> explain_all_prototypes(const Model& model, const std::vector<Sample>& train,
                                                         double kappa)
{
    const TrainingFeatures tf = training_features(model, train);
    std::vector<PrototypeExplanation> out;
    for (std::size_t k = 0; k < model.config().num_classes; ++k) {
        for (std::size_t u = 0; u < model.config().prototypes_per_class; ++u) {
            out.push_back(explain_prototype(k, u, model, train, tf, kappa));
        }
    }
    return out;
}

ExplanationRecord explain_decision(const Sample& sample, const Model& model, std::span<const std::size_t> classes,
                                   const std::vector<Sample>& train, const TrainingFeatures& features, double kappa)
{
    const ModelConfig& cfg = model.config();
    const Forward fwd = model.forward(sample.image);
    const ScoreTable table = fwd.score.table(cfg.num_classes, cfg.prototypes_per_class);
    const FeatureStack fs{fwd.features.value()};
    const Tensor& logits = fwd.logits.value();

    ExplanationRecord rec;
    rec.input_id = sample.id;
    rec.predicted = argmax(logits);
    for (std::size_t k : classes) {
        if (k >= cfg.num_classes) {
            throw std::out_of_range("explain_decision: class " + std::to_string(k) + " out of range");
        }
        ClassExplanation ce;
        ce.k = k;
        std::size_t best_u = 0;
        for (std::size_t u = 1; u < cfg.prototypes_per_class; ++u) {
            if (table.scores.at(k, u) > table.scores.at(k, best_u)) {
                best_u = u;
            }
        }
        ce.key_prototype = best_u;
        const std::size_t j = k * cfg.prototypes_per_class + best_u;
        const auto proto = prototype_row(model, j);

        double best_d = std::numeric_limits<double>::infinity();
        for (std::size_t t = 0; t < cfg.comparison_count(); ++t) {
            const Tensor v = target_vector(fs, t, cfg.mode);
            double d = 0.0;
            for (std::size_t l = 0; l < v.size(); ++l) {
                d += (v[l] - proto[l]) * (v[l] - proto[l]);
            }
            if (d < best_d) {
                best_d = d;
                ce.key_target = t;
            }
        }
        ce.similarity = table.class_max[k];
        const Tensor& fc = model.fc_weights();
        ce.weight = cfg.aggregation == Aggregation::single_activation ? fc.at(k, k) : fc.at(k, j);
        ce.logit = logits[k];
        ce.input_overlay = overlay_for_target(fs, ce.key_target, proto, cfg, sample.image.dim(1), sample.id, kappa);
        ce.prototype = explain_prototype(k, best_u, model, train, features, kappa);
        rec.classes.push_back(std::move(ce));
    }
    return rec;
}

std::vector<std::size_t> top_classes(const Model& model, const Sample& sample, std::size_t n)
{
    const Tensor logits = model.forward(sample.image).logits.value();
    std::vector<std::size_t> order(logits.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        order[i] = i;
    }
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return logits[a] > logits[b]; });
    order.resize(std::min(n, order.size()));
    return order;
}

namespace {

Image8 to_image8(const Tensor& image)
{
    Image8 out;
    out.channels = 3;
    out.height = image.dim(1);
    out.width = image.dim(2);
    out.pixels.resize(out.width * out.height * 3);
    for (std::size_t y = 0; y < out.height; ++y) {
        for (std::size_t x = 0; x < out.width; ++x) {
            for (std::size_t c = 0; c < 3; ++c) {
                const double v = std::clamp(image.at(c, y, x), 0.0, 1.0);
                out.pixels[(y * out.width + x) * 3 + c] = static_cast<std::uint8_t>(std::lround(v * 255.0));
            }
        }
    }
    return out;
}

void draw_box(Image8& img, const BoundingBox& box)
{
    auto put = [&](std::size_t y, std::size_t x) {
        std::uint8_t* p = &img.pixels[(y * img.width + x) * 3];
        p[0] = 255;
        p[1] = 230;
        p[2] = 0;
    };
    for (std::size_t x = box.left; x <= box.right; ++x) {
        put(box.top, x);
        put(box.bottom, x);
    }
    for (std::size_t y = box.top; y <= box.bottom; ++y) {
        put(y, box.left);
        put(y, box.right);
    }
}

Image8 heatmap(const Tensor& image, const ActivationOverlay& o)
{
    Image8 img = to_image8(image);
    const auto [lo_it, hi_it] = std::minmax_element(o.activation.data().begin(), o.activation.data().end());
    const double lo = *lo_it;
    const double span = *hi_it - lo;
    for (std::size_t y = 0; y < img.height; ++y) {
        for (std::size_t x = 0; x < img.width; ++x) {
            const double a = span > 0.0 ? (o.activation.at(y, x) - lo) / span : 0.0;
            // black -> red -> yellow -> white
            const double heat[3] = {std::clamp(3.0 * a, 0.0, 1.0), std::clamp(3.0 * a - 1.0, 0.0, 1.0),
                                    std::clamp(3.0 * a - 2.0, 0.0, 1.0)};
            std::uint8_t* p = &img.pixels[(y * img.width + x) * 3];
            for (int c = 0; c < 3; ++c) {
                p[c] = static_cast<std::uint8_t>(std::lround(0.5 * p[c] + 0.5 * 255.0 * heat[c]));
            }
        }
    }
    return img;
}

nlohmann::json box_json(const BoundingBox& b)
{
    return {{"top", b.top}, {"left", b.left}, {"bottom", b.bottom}, {"right", b.right}};
}

} // namespace

std::string explanation_json(const ExplanationRecord& record)
{
    nlohmann::json j;
    j["input_id"] = record.input_id;
    j["predicted_class"] = record.predicted;
    j["classes"] = nlohmann::json::array();
    for (const auto& c : record.classes) {
        j["classes"].push_back({
            {"class", c.k},
            {"key_prototype", c.key_prototype},
            {"key_target", c.key_target},
            {"similarity", c.similarity},
            {"weight", c.weight},
            {"logit", c.logit},
            {"input_threshold", c.input_overlay.threshold},
            {"input_box", box_json(c.input_overlay.box)},
            {"prototype_source_sample", c.prototype.sample_id},
            {"prototype_source_target", c.prototype.target},
            {"prototype_distance", c.prototype.distance},
            {"prototype_threshold", c.prototype.overlay.threshold},
            {"prototype_box", box_json(c.prototype.overlay.box)},
        });
    }
    return j.dump(2);
}

void export_explanation(const std::filesystem::path& dir, const ExplanationRecord& record, const Sample& input,
                        const std::vector<Sample>& train)
{
    std::filesystem::create_directories(dir);
    for (const auto& c : record.classes) {
        const std::string stem = record.input_id + "_class" + std::to_string(c.k);
        Image8 in = to_image8(input.image);
        draw_box(in, c.input_overlay.box);
        write_png(dir / (stem + "_input.png"), in);
        write_png(dir / (stem + "_input_heatmap.png"), heatmap(input.image, c.input_overlay));

        const Tensor& src = train.at(c.prototype.sample).image;
        Image8 pr = to_image8(src);
        draw_box(pr, c.prototype.overlay.box);
        write_png(dir / (stem + "_prototype.png"), pr);
        write_png(dir / (stem + "_prototype_heatmap.png"), heatmap(src, c.prototype.overlay));
    }
    std::ofstream out(dir / (record.input_id + ".explain.json"));
    if (!out) {
        throw std::runtime_error("cannot write explanation sidecar in '" + dir.string() + "'");
    }
    out << explanation_json(record) << "\n";
}

} // namespace protosolo
