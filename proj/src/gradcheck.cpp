#include "protosolo/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "protosolo/rng.hpp"

namespace protosolo {

double relative_error(double analytic, double numeric)
{
    const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-6});
    return std::abs(analytic - numeric) / scale;
}

namespace {

struct Evaluation {
    double loss;
    std::uint64_t fingerprint;
};

Evaluation evaluate(const Model& model, const std::vector<Tensor>& images, const std::vector<std::size_t>& labels,
                    const GradcheckOptions& o)
{
    const ParamGroup all[] = {ParamGroup::backbone, ParamGroup::shaping, ParamGroup::prototypes, ParamGroup::fc};
    const auto bound = model.bind(all);
    std::vector<Forward> batch;
    for (const auto& img : images) {
        batch.push_back(model.forward(img, bound));
    }
    const LossTerms t = total_loss(batch, labels, bound[model.fc_param_index()], model.config(), o.weights, o.sign);
    return {t.total.item(), decision_fingerprint(t.total)};
}

} // namespace

GradcheckReport gradcheck(const GradcheckOptions& o)
{
    Model model(o.model, o.seed);
    Rng rng = Rng::derive(o.seed, 0x67726164ULL);
    const std::size_t s = o.model.image_size;
    std::vector<Tensor> images;
    std::vector<std::size_t> labels;
    for (std::size_t i = 0; i < o.batch; ++i) {
        Tensor img(Shape{ModelConfig::image_channels, s, s});
        for (double& v : img.data()) {
            v = rng.uniform();
        }
        images.push_back(std::move(img));
        labels.push_back(i % o.model.num_classes);
    }

    const ParamGroup all[] = {ParamGroup::backbone, ParamGroup::shaping, ParamGroup::prototypes, ParamGroup::fc};
    const auto bound = model.bind(all);
    std::vector<Forward> batch;
    for (const auto& img : images) {
        batch.push_back(model.forward(img, bound));
    }
    const LossTerms terms = total_loss(batch, labels, bound[model.fc_param_index()], o.model, o.weights, o.sign);
    backward(terms.total);

    GradcheckReport report;
    auto& params = model.parameters();
    for (std::size_t p = 0; p < params.size(); ++p) {
        GradcheckEntry entry;
        entry.parameter = params[p].name;
        const Tensor analytic = bound[p].grad().empty() ? Tensor(params[p].value.shape()) : bound[p].grad();
        for (std::size_t i = 0; i < params[p].value.size(); ++i) {
            const double saved = params[p].value[i];
            params[p].value[i] = saved + o.step;
            const Evaluation plus = evaluate(model, images, labels, o);
            params[p].value[i] = saved - o.step;
            const Evaluation minus = evaluate(model, images, labels, o);
            params[p].value[i] = saved;
            if (plus.fingerprint != minus.fingerprint) {
                ++entry.skipped;
                continue;
            }
            const double numeric = (plus.loss - minus.loss) / (2.0 * o.step);
            entry.max_rel_error = std::max(entry.max_rel_error, relative_error(analytic[i], numeric));
            ++entry.checked;
        }
        report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
        report.checked += entry.checked;
        report.skipped += entry.skipped;
        report.parameters.push_back(entry);
    }
    return report;
}

} // namespace protosolo
