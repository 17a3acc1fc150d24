#include "protosolo/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <ostream>

#include "protosolo/rng.hpp"

namespace protosolo {

namespace {

constexpr std::uint64_t kEpochStream = 0x65706f6368ULL; // "epoch"

std::vector<ParamGroup> trainable_groups(Phase phase)
{
    switch (phase) {
    case Phase::warm:
        return {ParamGroup::shaping, ParamGroup::prototypes};
    case Phase::joint:
        return {ParamGroup::backbone, ParamGroup::shaping, ParamGroup::prototypes};
    case Phase::fc:
        return {ParamGroup::fc};
    }
    return {};
}

void check_finite(const LossBreakdown& v, std::size_t epoch, Phase phase)
{
    const std::pair<const char*, double> terms[] = {
        {"L_crs", v.crs}, {"L_clst", v.clst}, {"L_sep", v.sep}, {"L_w", v.w}, {"L_total", v.total}};
    for (const auto& [name, value] : terms) {
        if (!std::isfinite(value)) {
            throw TrainingDivergence(epoch, phase, name);
        }
    }
}

} // namespace

std::string to_string(Phase phase)
{
    switch (phase) {
    case Phase::warm:
        return "warm";
    case Phase::joint:
        return "joint";
    case Phase::fc:
        return "fc";
    }
    return "?";
}

void TrainConfig::validate() const
{
    if (batch_size == 0) {
        throw std::invalid_argument("train config: batch size must be positive");
    }
    for (double lr : {lr_warm, lr_joint, lr_fc}) {
        if (!(lr > 0.0) || !std::isfinite(lr)) {
            throw std::invalid_argument("train config: learning rates must be positive and finite");
        }
    }
    if (!std::isfinite(weights.lambda1) || !std::isfinite(weights.lambda2) || !std::isfinite(weights.lambda3)) {
        throw std::invalid_argument("train config: loss weights must be finite");
    }
}

std::string format_log_row(const EpochLog& row)
{
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%zu\t%s\t%.6g\t%.6g\t%.6g\t%.6g\t%.6g\t%.2f", row.epoch, to_string(row.phase).c_str(),
                  row.losses.crs, row.losses.clst, row.losses.sep, row.losses.w, row.losses.total, row.train_accuracy);
    return buf;
}

void write_log(std::ostream& out, const std::vector<EpochLog>& log)
{
    for (const auto& row : log) {
        out << format_log_row(row) << "\n";
    }
}

TrainingDivergence::TrainingDivergence(std::size_t epoch_, Phase phase_, const std::string& term_)
    : std::runtime_error("training diverged in epoch " + std::to_string(epoch_) + " (" + to_string(phase_) +
                         " phase): " + term_ + " is not finite"),
      epoch(epoch_), phase(phase_), term(term_)
{
}

Adam::Adam(double lr, double beta1, double beta2, double eps) : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Adam::step(std::size_t slot, Tensor& param, const Tensor& grad)
{
    if (slot >= m_.size()) {
        m_.resize(slot + 1);
        v_.resize(slot + 1);
        t_.resize(slot + 1, 0);
    }
    if (m_[slot].empty()) {
        m_[slot] = Tensor(param.shape());
        v_[slot] = Tensor(param.shape());
    }
    const std::size_t t = ++t_[slot];
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t));
    auto m = m_[slot].data();
    auto v = v_[slot].data();
    auto p = param.data();
    const auto g = grad.data();
    for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = beta1_ * m[i] + (1.0 - beta1_) * g[i];
        v[i] = beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i];
        p[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
    }
}

ProjectionReport project_prototypes(Model& model, const std::vector<Sample>& train)
{
    const ModelConfig& cfg = model.config();
    std::vector<const Tensor*> images;
    std::vector<std::size_t> labels;
    for (const auto& s : train) {
        images.push_back(&s.image);
        labels.push_back(s.label);
    }
    for (std::size_t k = 0; k < cfg.num_classes; ++k) {
        if (std::find(labels.begin(), labels.end(), k) == labels.end()) {
            throw std::invalid_argument("project_prototypes: class " + std::to_string(k) + " has no training samples");
        }
    }
    const auto features = extract_all(model, images);
    Tensor& protos = model.prototypes();
    const std::size_t len = cfg.prototype_length();
    ProjectionReport report;
    for (std::size_t j = 0; j < cfg.num_prototypes(); ++j) {
        std::span<double> row = protos.data().subspan(j * len, len);
        const TargetMatch m =
            nearest_target(row, prototype_class(j, cfg.prototypes_per_class), features, labels, cfg.mode);
        const Tensor target = target_vector(features[m.sample], m.target, cfg.mode);
        std::copy(target.data().begin(), target.data().end(), row.begin());
        report.entries.push_back({j, train[m.sample].id, m.sample, m.target, std::sqrt(m.sq_distance)});
    }
    return report;
}

Trainer::Trainer(Model model, const std::vector<Sample>& train, TrainConfig config)
    : model_(std::move(model)), train_(&train), config_(std::move(config))
{
    config_.validate();
    if (train.empty()) {
        throw std::invalid_argument("trainer: training set is empty");
    }
    if (model_.config().num_classes < 2) {
        throw std::invalid_argument("trainer: at least two classes are required (separation loss)");
    }
    for (const auto& s : train) {
        if (s.label >= model_.config().num_classes) {
            throw std::invalid_argument("trainer: sample '" + s.id + "' has label " + std::to_string(s.label) +
                                        " outside the model's " + std::to_string(model_.config().num_classes) +
                                        " classes");
        }
        if (s.image.shape() != Shape{ModelConfig::image_channels, model_.config().image_size, model_.config().image_size}) {
            throw std::invalid_argument("trainer: sample '" + s.id + "' has image shape " +
                                        shape_to_string(s.image.shape()));
        }
    }
}

void Trainer::set_config(const TrainConfig& config)
{
    config.validate();
    config_ = config;
}

void Trainer::run_warm() { run_phase(Phase::warm, config_.warm_epochs, config_.lr_warm); }
void Trainer::run_joint() { run_phase(Phase::joint, config_.joint_epochs, config_.lr_joint); }
void Trainer::run_fc() { run_phase(Phase::fc, config_.fc_epochs, config_.lr_fc); }

ProjectionReport Trainer::project()
{
    if (projection_) {
        throw std::logic_error("trainer: prototypes were already projected");
    }
    projection_ = project_prototypes(model_, *train_);
    return *projection_;
}

void Trainer::run_all()
{
    run_warm();
    run_joint();
    if (config_.project) {
        project();
    }
    run_fc();
}

void Trainer::run_phase(Phase phase, std::size_t epochs, double lr)
{
    Adam adam(lr);
    for (std::size_t e = 0; e < epochs; ++e) {
        EpochLog row = run_epoch(phase, adam);
        log_.push_back(row);
        ++completed_[static_cast<int>(phase)];
        if (on_epoch) {
            on_epoch(row);
        }
    }
}

EpochLog Trainer::run_epoch(Phase phase, Adam& adam)
{
    const std::size_t epoch = ++epoch_;
    const ModelConfig& cfg = model_.config();
    const auto& data = *train_;
    Rng rng = Rng::derive(config_.seed, kEpochStream, epoch);

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    for (std::size_t i = order.size(); i > 1; --i) {
        std::swap(order[i - 1], order[rng.below(i)]);
    }

    const auto groups = trainable_groups(phase);
    LossWeights weights = config_.weights;
    if (phase == Phase::fc) {
        weights.lambda1 = 0.0;
        weights.lambda2 = 0.0;
    }

    LossBreakdown sums;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += config_.batch_size) {
        const std::size_t end = std::min(order.size(), start + config_.batch_size);
        const auto bound = model_.bind(groups);
        std::vector<Forward> batch;
        std::vector<std::size_t> labels;
        for (std::size_t i = start; i < end; ++i) {
            const Sample& s = data[order[i]];
            if (config_.augment) {
                const Sample a = augment(s, rng);
                batch.push_back(model_.forward(a.image, bound));
            } else {
                batch.push_back(model_.forward(s.image, bound));
            }
            labels.push_back(s.label);
            if (argmax(batch.back().logits.value()) == s.label) {
                ++correct;
            }
        }
        const LossTerms terms = total_loss(batch, labels, bound[model_.fc_param_index()], cfg, weights,
                                           config_.separation_sign);
        check_finite(terms.values, epoch, phase);
        backward(terms.total);
        auto& params = model_.parameters();
        for (std::size_t p = 0; p < params.size(); ++p) {
            if (!bound[p].requires_grad() || bound[p].grad().empty()) {
                continue;
            }
            adam.step(p, params[p].value, bound[p].grad());
        }
        const double n = static_cast<double>(end - start);
        sums.crs += terms.values.crs * n;
        sums.clst += terms.values.clst * n;
        sums.sep += terms.values.sep * n;
        sums.w += terms.values.w * n;
        sums.total += terms.values.total * n;
    }
    const double n = static_cast<double>(data.size());
    EpochLog row;
    row.epoch = epoch;
    row.phase = phase;
    row.losses = {sums.crs / n, sums.clst / n, sums.sep / n, sums.w / n, sums.total / n};
    row.train_accuracy = 100.0 * static_cast<double>(correct) / n;
    for (const auto& p : model_.parameters()) {
        if (!p.value.all_finite()) {
            throw TrainingDivergence(epoch, phase, "parameter " + p.name);
        }
    }
    return row;
}

TrainingMetadata Trainer::metadata() const
{
    TrainingMetadata meta;
    meta.seed = config_.seed;
    meta.warm_epochs = completed_[0];
    meta.joint_epochs = completed_[1];
    meta.fc_epochs = completed_[2];
    meta.projected = projection_.has_value();
    if (!log_.empty()) {
        meta.final_losses = log_.back().losses;
    }
    return meta;
}

TrainResult train(const std::vector<Sample>& data, Model model, const TrainConfig& config)
{
    Trainer trainer(std::move(model), data, config);
    trainer.run_all();
    return {trainer.checkpoint(), trainer.log(), trainer.projection()};
}

} // namespace protosolo
