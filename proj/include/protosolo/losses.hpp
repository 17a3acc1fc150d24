#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>

#include "protosolo/autodiff.hpp"
#include "protosolo/model.hpp"

namespace protosolo {

struct LossWeights {
    double lambda1 = 0.8;   // cluster
    double lambda2 = -0.08; // separation
    double lambda3 = 1e-4;  // weight factor
};

/// How the separation term enters the minimized total.
///  paper: lambda2 * L_sep taken literally (with lambda2 < 0 this attracts).
///  repel: |lambda2| * L_sep, which always pushes heterogeneous prototypes away.
enum class SeparationSign { paper, repel };

std::string to_string(SeparationSign sign);
SeparationSign parse_separation_sign(std::string_view text);
double separation_coefficient(const LossWeights& weights, SeparationSign sign);

/// min over the label's prototypes and all comparison targets of the squared distance.
Var cluster_distance(const Var& distances, std::size_t label, const ModelConfig& config);
/// min over prototypes of every other class and all comparison targets.
Var separation_distance(const Var& distances, std::size_t label, const ModelConfig& config);

/// Batch mean of cluster_distance; >= 0.
Var cluster_loss(std::span<const Var> distances, std::span<const std::size_t> labels, const ModelConfig& config);
/// Negated batch mean of separation_distance; <= 0. Requires K >= 2.
Var separation_loss(std::span<const Var> distances, std::span<const std::size_t> labels, const ModelConfig& config);
/// Sum of |w| over connections between different classes.
Var weight_factor_loss(const Var& fc, const ModelConfig& config);

/// Value-level entry points over extracted features.
double cluster_loss(std::span<const FeatureStack> batch, std::span<const std::size_t> labels,
                    const Tensor& prototypes, const ModelConfig& config);
double separation_loss(std::span<const FeatureStack> batch, std::span<const std::size_t> labels,
                       const Tensor& prototypes, const ModelConfig& config);
/// Off-diagonal L1 of a square matrix.
double weight_factor_loss(const Tensor& fc);

struct LossBreakdown {
    double crs = 0.0;
    double clst = 0.0;
    double sep = 0.0;
    double w = 0.0;
    double total = 0.0;
};

struct LossTerms {
    Var crs;
    Var clst;
    Var sep;
    Var w;
    Var total; // crs + lambda1*clst + coefficient*sep + lambda3*w
    LossBreakdown values;
};

LossTerms total_loss(std::span<const Forward> batch, std::span<const std::size_t> labels, const Var& fc,
                     const ModelConfig& config, const LossWeights& weights, SeparationSign sign);

} // namespace protosolo
