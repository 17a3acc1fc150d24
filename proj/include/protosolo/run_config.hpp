#pragma once

// Resolved configuration of one run: `key = value` lines, '#' starts a comment.
// Keys are the long flag names of the command line, so a config file and flags
// share one vocabulary; flags applied after the file override it.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "protosolo/data.hpp"
#include "protosolo/model.hpp"
#include "protosolo/trainer.hpp"

namespace protosolo {

struct RunConfig {
    DatasetSpec data;
    ModelConfig model;
    TrainConfig train;
    double kappa = 95.0;
    std::vector<double> pr_thresholds{10, 20, 30, 40, 50};

    /// Sets one key from its textual value. Throws std::invalid_argument naming the key
    /// for unknown keys and malformed values.
    void set(std::string_view key, std::string_view value);
    /// Applies every line of a config text; `origin` prefixes error messages.
    void apply_text(std::string_view text, std::string_view origin = "config");
    void apply_file(const std::filesystem::path& path);

    /// Model configuration with K taken from the data spec and H1 = W1 derived from the
    /// backbone and image size.
    ModelConfig resolved_model() const;

    /// Every key with its current value, one `key = value` per line.
    std::string to_text() const;

    static const std::vector<std::string>& keys();
};

} // namespace protosolo
