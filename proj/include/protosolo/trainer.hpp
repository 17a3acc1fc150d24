#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "protosolo/checkpoint.hpp"
#include "protosolo/data.hpp"
#include "protosolo/losses.hpp"
#include "protosolo/model.hpp"

namespace protosolo {

enum class Phase { warm, joint, fc };
std::string to_string(Phase phase);

struct TrainConfig {
    std::size_t warm_epochs = 5;
    std::size_t joint_epochs = 30;
    std::size_t fc_epochs = 10;
    double lr_warm = 3e-3;
    double lr_joint = 1e-3;
    double lr_fc = 2e-3;
    std::size_t batch_size = 2;
    std::uint64_t seed = 1;
    bool project = false;
    // lambda3 is raised from LossWeights' 1e-4: with K=4 the cross-entropy gradient on
    // cross-class weights never falls below 1e-4, so the L1 pull would be inert.
    LossWeights weights{0.8, -0.08, 0.3};
    SeparationSign separation_sign = SeparationSign::repel;
    bool augment = true;

    void validate() const;
};

struct EpochLog {
    std::size_t epoch = 0; // 1-based, counted across phases
    Phase phase = Phase::warm;
    LossBreakdown losses;  // sample-weighted means over the epoch's batches
    double train_accuracy = 0.0;
};

/// epoch, phase, crs, clst, sep, w, total, train_acc — tab-separated, no trailing newline.
std::string format_log_row(const EpochLog& row);
void write_log(std::ostream& out, const std::vector<EpochLog>& log);

/// Raised when a loss term becomes non-finite.
class TrainingDivergence : public std::runtime_error {
public:
    TrainingDivergence(std::size_t epoch, Phase phase, const std::string& term);
    std::size_t epoch;
    Phase phase;
    std::string term;
};

/// Adam without weight decay. State is keyed by parameter index.
class Adam {
public:
    explicit Adam(double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
    void step(std::size_t slot, Tensor& param, const Tensor& grad);

private:
    double lr_, beta1_, beta2_, eps_;
    std::vector<Tensor> m_, v_;
    std::vector<std::size_t> t_;
};

struct ProjectionEntry {
    std::size_t prototype = 0; // row j = k*U + u
    std::string sample_id;
    std::size_t sample = 0;
    std::size_t target = 0;    // channel, or flat position
    double distance_before = 0.0; // L2, not squared
};

struct ProjectionReport {
    std::vector<ProjectionEntry> entries;
};

/// Replaces every prototype with its nearest same-class training target.
ProjectionReport project_prototypes(Model& model, const std::vector<Sample>& train);

/// Phased optimization over one model. Phases may be run piecewise, which lets a run be
/// forked after Phase J (the epoch counter and every random stream continue identically).
class Trainer {
public:
    Trainer(Model model, const std::vector<Sample>& train, TrainConfig config);

    void run_warm();
    void run_joint();
    ProjectionReport project();
    void run_fc();
    /// Every phase in order, projecting between J and F when configured.
    void run_all();

    const Model& model() const { return model_; }
    Model& model() { return model_; }
    const TrainConfig& config() const { return config_; }
    const std::vector<EpochLog>& log() const { return log_; }
    const std::optional<ProjectionReport>& projection() const { return projection_; }
    void set_config(const TrainConfig& config);

    TrainingMetadata metadata() const;
    Checkpoint checkpoint() const { return make_checkpoint(model_, metadata()); }

    /// Invoked after each epoch (progress reporting).
    std::function<void(const EpochLog&)> on_epoch;

private:
    void run_phase(Phase phase, std::size_t epochs, double lr);
    EpochLog run_epoch(Phase phase, Adam& adam);

    Model model_;
    const std::vector<Sample>* train_;
    TrainConfig config_;
    std::vector<EpochLog> log_;
    std::optional<ProjectionReport> projection_;
    std::size_t epoch_ = 0;
    std::size_t completed_[3] = {0, 0, 0};
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<EpochLog> log;
    std::optional<ProjectionReport> projection;
};

TrainResult train(const std::vector<Sample>& data, Model model, const TrainConfig& config);

} // namespace protosolo
