#include "protosolo/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace protosolo {

double accuracy(const Model& model, const std::vector<Sample>& data)
{
    if (data.empty()) {
        throw std::invalid_argument("accuracy: empty data set");
    }
    std::size_t correct = 0;
    for (const auto& s : data) {
        if (argmax(model.forward(s.image).logits.value()) == s.label) {
            ++correct;
        }
    }
    return 100.0 * static_cast<double>(correct) / static_cast<double>(data.size());
}

VectorSimilarity compare_vectors(std::span<const double> a, std::span<const double> b)
{
    if (a.size() != b.size() || a.empty()) {
        throw std::invalid_argument("compare_vectors: vectors must be non-empty and equally long");
    }
    const auto n = static_cast<double>(a.size());
    double dot = 0.0, na = 0.0, nb = 0.0, ed = 0.0, mean_a = 0.0, mean_b = 0.0;
    double lo = 0.0, hi = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
        ed += (a[i] - b[i]) * (a[i] - b[i]);
        mean_a += a[i];
        mean_b += b[i];
        const double pa = std::max(a[i], 0.0);
        const double pb = std::max(b[i], 0.0);
        lo += std::min(pa, pb);
        hi += std::max(pa, pb);
    }
    mean_a /= n;
    mean_b /= n;
    double cov = 0.0, va = 0.0, vb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        cov += (a[i] - mean_a) * (b[i] - mean_b);
        va += (a[i] - mean_a) * (a[i] - mean_a);
        vb += (b[i] - mean_b) * (b[i] - mean_b);
    }
    VectorSimilarity s;
    s.ed = std::sqrt(ed);
    if (na == 0.0 || nb == 0.0 || va == 0.0 || vb == 0.0) {
        s.defined = false;
        return s;
    }
    s.cos = std::clamp(dot / std::sqrt(na * nb), -1.0, 1.0);
    s.pcc = std::clamp(cov / std::sqrt(va * vb), -1.0, 1.0);
    s.js = hi > 0.0 ? lo / hi : 1.0;
    return s;
}

FidelityReport fidelity(const Model& model, const std::vector<Sample>& train)
{
    const ModelConfig& cfg = model.config();
    const TrainingFeatures tf = training_features(model, train);
    const std::size_t len = cfg.prototype_length();
    FidelityReport r;
    std::size_t defined = 0;
    for (std::size_t j = 0; j < cfg.num_prototypes(); ++j) {
        const auto proto = model.prototypes().data().subspan(j * len, len);
        PrototypeFidelity pf;
        pf.prototype = j;
        pf.match = nearest_target(proto, prototype_class(j, cfg.prototypes_per_class), tf.features, tf.labels, cfg.mode);
        const Tensor target = target_vector(tf.features[pf.match.sample], pf.match.target, cfg.mode);
        pf.values = compare_vectors(proto, target.data());
        if (pf.values.defined) {
            r.mean_cos += pf.values.cos;
            r.mean_ed += pf.values.ed;
            r.mean_pcc += pf.values.pcc;
            r.mean_js += pf.values.js;
            ++defined;
        } else {
            ++r.undefined;
        }
        r.per_prototype.push_back(pf);
    }
    if (defined > 0) {
        const auto n = static_cast<double>(defined);
        r.mean_cos /= n;
        r.mean_ed /= n;
        r.mean_pcc /= n;
        r.mean_js /= n;
    }
    return r;
}

double box_precision(const BoundingBox& box, const Tensor& mask)
{
    if (mask.rank() != 2 || box.bottom >= mask.dim(0) || box.right >= mask.dim(1) || box.top > box.bottom ||
        box.left > box.right) {
        throw std::invalid_argument("box_precision: box does not fit the mask");
    }
    double fg = 0.0;
    for (std::size_t y = box.top; y <= box.bottom; ++y) {
        for (std::size_t x = box.left; x <= box.right; ++x) {
            fg += mask.at(y, x) > 0.5 ? 1.0 : 0.0;
        }
    }
    return fg / static_cast<double>(box.area());
}

PrTable precision_table(std::span<const PrototypeExplanation> explanations, const std::vector<Sample>& train,
                        std::span<const double> thresholds)
{
    if (explanations.empty()) {
        throw std::invalid_argument("precision_table: no prototypes");
    }
    PrTable t;
    t.thresholds.assign(thresholds.begin(), thresholds.end());
    for (const auto& e : explanations) {
        const Sample& s = train.at(e.sample);
        if (s.mask_missing || s.mask.empty()) {
            throw std::invalid_argument("precision_table: sample '" + s.id + "' has no foreground mask");
        }
        t.precisions.push_back(box_precision(e.overlay.box, s.mask));
    }
    for (double th : thresholds) {
        const auto above = std::count_if(t.precisions.begin(), t.precisions.end(),
                                         [th](double p) { return p > th / 100.0; });
        t.percentages.push_back(100.0 * static_cast<double>(above) / static_cast<double>(t.precisions.size()));
    }
    return t;
}

PrTable precision_table(const Model& model, const std::vector<Sample>& train, std::span<const double> thresholds,
                        double kappa)
{
    for (const auto& s : train) {
        if (s.mask_missing || s.mask.empty()) {
            throw std::invalid_argument("precision_table: sample '" + s.id + "' has no foreground mask");
        }
    }
    const auto explanations = explain_all_prototypes(model, train, kappa);
    return precision_table(explanations, train, thresholds);
}

std::vector<std::size_t> prototype_compactness(const ModelConfig& config)
{
    const std::size_t per_class =
        config.aggregation == Aggregation::single_activation ? 1 : config.prototypes_per_class;
    return std::vector<std::size_t>(config.num_classes, per_class);
}

std::string format_fidelity(const FidelityReport& r)
{
    std::ostringstream out;
    char buf[160];
    out << "prototype\tsample\ttarget\tCOS\tED\tPCC\tJS\n";
    for (const auto& p : r.per_prototype) {
        if (p.values.defined) {
            std::snprintf(buf, sizeof(buf), "%zu\t%zu\t%zu\t%.4f\t%.4f\t%.4f\t%.4f\n", p.prototype, p.match.sample,
                          p.match.target, p.values.cos, p.values.ed, p.values.pcc, p.values.js);
        } else {
            std::snprintf(buf, sizeof(buf), "%zu\t%zu\t%zu\tundefined\t%.4f\tundefined\tundefined\n", p.prototype,
                          p.match.sample, p.match.target, p.values.ed);
        }
        out << buf;
    }
    std::snprintf(buf, sizeof(buf), "mean\t-\t-\t%.4f\t%.4f\t%.4f\t%.4f\n", r.mean_cos, r.mean_ed, r.mean_pcc,
                  r.mean_js);
    out << buf << "undefined\t" << r.undefined << "\n";
    return out.str();
}

std::string format_pr_table(const PrTable& t)
{
    std::ostringstream out;
    char buf[64];
    out << "threshold\tprototypes_above\n";
    for (std::size_t i = 0; i < t.thresholds.size(); ++i) {
        std::snprintf(buf, sizeof(buf), "%g%%\t%.1f%%\n", t.thresholds[i], t.percentages[i]);
        out << buf;
    }
    return out.str();
}

} // namespace protosolo
