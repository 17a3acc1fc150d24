// protosolo: command-line front end.
//
//   protosolo gen-data  --out DIR [--classes K --per-class N --size S --seed R] [--force]
//   protosolo train     --data DIR --out CKPT [--config FILE] [--mode fmc|vec] [--agg sa|dense]
//                       [--projection | --no-projection] [--<config-key> VALUE ...]
//   protosolo eval      --checkpoint CKPT --data DIR
//   protosolo explain   --checkpoint CKPT --data DIR --image PNG --out DIR [--top N]
//   protosolo metrics   --checkpoint CKPT --data DIR [--out DIR]
//   protosolo gradcheck [--seed N]
//   protosolo ablate    --data DIR [--config FILE] [--seeds 1,2,3] [--out DIR]

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "protosolo/checkpoint.hpp"
#include "protosolo/data.hpp"
#include "protosolo/explainer.hpp"
#include "protosolo/gradcheck.hpp"
#include "protosolo/image_io.hpp"
#include "protosolo/metrics.hpp"
#include "protosolo/run_config.hpp"
#include "protosolo/study.hpp"
#include "protosolo/trainer.hpp"

#ifndef PROTOSOLO_VERSION
#define PROTOSOLO_VERSION "dev"
#endif

namespace fs = std::filesystem;
using namespace protosolo;

namespace {

struct ConfigFlags {
    std::vector<std::pair<std::string, CLI::Option*>> options;
    std::map<std::string, std::string> values;
};

void add_config_flags(CLI::App* app, ConfigFlags& flags, const std::vector<std::string>& skip = {})
{
    for (const auto& key : RunConfig::keys()) {
        if (std::find(skip.begin(), skip.end(), key) != skip.end()) {
            continue;
        }
        flags.options.emplace_back(key, app->add_option("--" + key, flags.values[key], "Override config key '" + key + "'"));
    }
}

void apply_flags(RunConfig& rc, const ConfigFlags& flags)
{
    for (const auto& [key, opt] : flags.options) {
        if (opt->count() > 0) {
            rc.set(key, flags.values.at(key));
        }
    }
}

std::string manifest(const std::string& command, const RunConfig& rc, const std::vector<std::string>& extra)
{
    std::ostringstream out;
    out << "# protosolo run manifest\n";
    out << "command = " << command << "\n";
    out << "protosolo-version = " << PROTOSOLO_VERSION << "\n";
    out << "checkpoint-format-version = " << checkpoint_version << "\n";
    for (const auto& line : extra) {
        out << line << "\n";
    }
    out << rc.to_text();
    return out.str();
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream out(path);
    if (!out) {
        throw std::runtime_error("cannot write '" + path.string() + "'");
    }
    out << text;
}

/// Output directory filled under a temporary name and renamed into place on commit().
class StagedDir {
public:
    StagedDir(fs::path target, bool replace) : target_(std::move(target)), replace_(replace)
    {
        if (fs::exists(target_) && !fs::is_empty(target_) && !replace_) {
            throw std::invalid_argument("output directory '" + target_.string() +
                                        "' exists and is not empty (use --force to replace it)");
        }
        staging_ = target_;
        staging_ += ".partial";
        fs::remove_all(staging_);
        fs::create_directories(staging_);
    }
    ~StagedDir()
    {
        if (!committed_) {
            std::error_code ec;
            fs::remove_all(staging_, ec);
        }
    }
    const fs::path& path() const { return staging_; }
    void commit()
    {
        if (fs::exists(target_)) {
            fs::remove_all(target_);
        }
        fs::rename(staging_, target_);
        committed_ = true;
    }

private:
    fs::path target_;
    fs::path staging_;
    bool replace_;
    bool committed_ = false;
};

fs::path split_dir(const fs::path& root, const std::string& split)
{
    return fs::is_directory(root / split) ? root / split : root;
}

void check_classes(std::size_t expected, const std::vector<Sample>& data, const std::string& what)
{
    std::size_t k = 0;
    for (const auto& s : data) {
        k = std::max(k, s.label + 1);
    }
    if (k != expected) {
        throw std::invalid_argument("checkpoint/data mismatch on field 'classes': checkpoint has " +
                                    std::to_string(expected) + ", " + what + " has " + std::to_string(k));
    }
}

int cmd_gen_data(const fs::path& out, RunConfig rc, bool force)
{
    rc.data.validate();
    StagedDir dir(out, force);
    const Dataset data = generate(rc.data);
    write_dataset(dir.path(), data, rc.data);
    write_text(dir.path() / "run.txt", manifest("gen-data", rc, {}));
    dir.commit();
    std::cout << "wrote " << data.train.size() << " training and " << data.test.size() << " test samples to "
              << out.string() << "\n";
    return 0;
}

int cmd_train(const fs::path& data_dir, const fs::path& out, RunConfig rc)
{
    const auto train = load_folder(split_dir(data_dir, "train"), rc.data.image_size);
    std::size_t k = 0;
    for (const auto& s : train) {
        k = std::max(k, s.label + 1);
    }
    rc.data.num_classes = k;
    const ModelConfig mc = rc.resolved_model();

    Trainer trainer(Model(mc, rc.train.seed), train, rc.train);
    trainer.on_epoch = [](const EpochLog& row) { std::cout << format_log_row(row) << std::endl; };
    trainer.run_all();

    if (out.has_parent_path()) {
        fs::create_directories(out.parent_path());
    }
    save_checkpoint(trainer.checkpoint(), out);
    std::ofstream log(out.string() + ".log.tsv");
    write_log(log, trainer.log());
    if (trainer.projection()) {
        std::ofstream rep(out.string() + ".projection.tsv");
        rep << "prototype\tsample\ttarget\tdistance_before\n";
        for (const auto& e : trainer.projection()->entries) {
            rep << e.prototype << "\t" << e.sample_id << "\t" << e.target << "\t" << e.distance_before << "\n";
        }
    }
    write_text(out.string() + ".run.txt",
               manifest("train", rc, {"data = " + data_dir.string(), "checkpoint = " + out.string()}));
    std::cout << "checkpoint written to " << out.string() << "\n";
    return 0;
}

struct Loaded {
    Checkpoint checkpoint;
    Model model;
};

Loaded load_model(const fs::path& path)
{
    Checkpoint ck = load_checkpoint(path);
    Model m = model_from_checkpoint(ck);
    return {std::move(ck), std::move(m)};
}

int cmd_eval(const fs::path& ckpt, const fs::path& data_dir)
{
    const Loaded l = load_model(ckpt);
    const auto test = load_folder(split_dir(data_dir, "test"), l.model.config().image_size);
    check_classes(l.model.config().num_classes, test, "the data");
    std::printf("accuracy\t%.2f\n", accuracy(l.model, test));
    return 0;
}

int cmd_explain(const fs::path& ckpt, const fs::path& data_dir, const fs::path& image_path, const fs::path& out,
                std::size_t top, double kappa, bool force)
{
    const Loaded l = load_model(ckpt);
    const std::size_t s = l.model.config().image_size;
    const auto train = load_folder(split_dir(data_dir, "train"), s);
    check_classes(l.model.config().num_classes, train, "the training data");

    const Image8 img = read_png(image_path, 3);
    Tensor image(Shape{3, img.height, img.width});
    for (std::size_t y = 0; y < img.height; ++y) {
        for (std::size_t x = 0; x < img.width; ++x) {
            for (std::size_t c = 0; c < 3; ++c) {
                image.at(c, y, x) = img.pixels[(y * img.width + x) * 3 + c] / 255.0;
            }
        }
    }
    Sample input;
    input.image = (img.width == s && img.height == s) ? image : resize_bilinear(image, s);
    input.id = image_path.stem().string();

    const auto classes = top_classes(l.model, input, top == 0 ? 1 : top);
    const TrainingFeatures tf = training_features(l.model, train);
    const ExplanationRecord rec = explain_decision(input, l.model, classes, train, tf, kappa);

    StagedDir dir(out, force);
    export_explanation(dir.path(), rec, input, train);
    RunConfig rc;
    rc.kappa = kappa;
    write_text(dir.path() / "run.txt", manifest("explain", rc,
                                                {"checkpoint = " + ckpt.string(), "image = " + image_path.string(),
                                                 "top = " + std::to_string(top)}));
    dir.commit();

    std::printf("input\t%s\tpredicted\t%zu\n", rec.input_id.c_str(), rec.predicted);
    std::printf("class\tprototype\ttarget\tG\tw\tlogit\tsource\n");
    for (const auto& c : rec.classes) {
        std::printf("%zu\t%zu\t%zu\t%.4f\t%.4f\t%.4f\t%s\n", c.k, c.key_prototype, c.key_target, c.similarity,
                    c.weight, c.logit, c.prototype.sample_id.c_str());
    }
    return 0;
}

int cmd_metrics(const fs::path& ckpt, const fs::path& data_dir, const fs::path& out, double kappa,
                const std::vector<double>& thresholds, bool force)
{
    const Loaded l = load_model(ckpt);
    const std::size_t s = l.model.config().image_size;
    const auto train = load_folder(split_dir(data_dir, "train"), s);
    check_classes(l.model.config().num_classes, train, "the training data");
    const auto test = load_folder(split_dir(data_dir, "test"), s);

    const double acc = accuracy(l.model, test);
    const FidelityReport fid = fidelity(l.model, train);
    const PrTable pr = precision_table(l.model, train, thresholds, kappa);
    const auto pc = prototype_compactness(l.model.config());

    std::printf("accuracy\t%.2f\n\n", acc);
    std::cout << format_fidelity(fid) << "\n" << format_pr_table(pr) << "\n";
    std::cout << "class\tPC\n";
    for (std::size_t k = 0; k < pc.size(); ++k) {
        std::cout << k << "\t" << pc[k] << "\n";
    }

    if (!out.empty()) {
        nlohmann::json j;
        j["accuracy"] = acc;
        j["fidelity"] = {{"cos", fid.mean_cos}, {"ed", fid.mean_ed}, {"pcc", fid.mean_pcc}, {"js", fid.mean_js},
                         {"undefined", fid.undefined}};
        j["pr_table"] = {{"thresholds", pr.thresholds}, {"percentages", pr.percentages}, {"precisions", pr.precisions}};
        j["prototype_compactness"] = pc;
        StagedDir dir(out, force);
        write_text(dir.path() / "metrics.json", j.dump(2) + "\n");
        write_text(dir.path() / "fidelity.tsv", format_fidelity(fid));
        write_text(dir.path() / "pr_table.tsv", format_pr_table(pr));
        RunConfig rc;
        rc.kappa = kappa;
        rc.pr_thresholds = thresholds;
        write_text(dir.path() / "run.txt", manifest("metrics", rc, {"checkpoint = " + ckpt.string()}));
        dir.commit();
    }
    return 0;
}

int cmd_gradcheck(std::uint64_t seed, std::size_t batch, double step)
{
    if (!(step > 0.0)) {
        throw std::invalid_argument("--step must be positive");
    }
    GradcheckOptions o;
    o.seed = seed;
    o.batch = batch;
    o.step = step;
    const GradcheckReport r = gradcheck(o);
    std::printf("parameter\tchecked\tskipped\tmax_rel_error\n");
    for (const auto& e : r.parameters) {
        std::printf("%s\t%zu\t%zu\t%.3e\n", e.parameter.c_str(), e.checked, e.skipped, e.max_rel_error);
    }
    std::printf("max relative error\t%.3e\n", r.max_rel_error);
    if (r.max_rel_error >= 1e-4) {
        std::cerr << "error: gradient check exceeded 1e-4\n";
        return 1;
    }
    return 0;
}

int cmd_ablate(const fs::path& data_dir, RunConfig rc, const std::vector<std::uint64_t>& seeds, const fs::path& out,
               bool force)
{
    Dataset data;
    data.train = load_folder(split_dir(data_dir, "train"), rc.data.image_size);
    data.test = load_folder(split_dir(data_dir, "test"), rc.data.image_size);
    std::size_t k = 0;
    for (const auto& s : data.train) {
        k = std::max(k, s.label + 1);
    }
    rc.data.num_classes = k;
    const auto rows = run_ablation(data, rc.resolved_model(), rc.train, seeds,
                                   [](const std::string& msg) { std::cerr << msg << std::endl; });
    const std::string table = format_ablation(rows);
    std::cout << table;
    if (!out.empty()) {
        StagedDir dir(out, force);
        write_text(dir.path() / "ablation.tsv", table);
        std::string seed_list;
        for (auto s : seeds) {
            seed_list += (seed_list.empty() ? "" : ",") + std::to_string(s);
        }
        write_text(dir.path() / "run.txt", manifest("ablate", rc, {"data = " + data_dir.string(), "seeds = " + seed_list}));
        dir.commit();
    }
    return 0;
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"ProtoSolo: single-prototype-activation interpretable classifier"};
    app.require_subcommand(1);
    app.set_version_flag("--version", PROTOSOLO_VERSION);

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "Generate the synthetic dataset");
    std::string gen_out;
    bool gen_force = false;
    RunConfig gen_rc;
    gen->add_option("--out", gen_out, "Output directory")->required();
    gen->add_option("--classes", gen_rc.data.num_classes, "Number of classes");
    gen->add_option("--per-class", gen_rc.data.per_class, "Images per class");
    gen->add_option("--size", gen_rc.data.image_size, "Image side in pixels");
    gen->add_option("--seed", gen_rc.data.seed, "Dataset seed");
    gen->add_option("--train-fraction", gen_rc.data.train_fraction, "Training share per class");
    gen->add_flag("--force", gen_force, "Replace a non-empty output directory");

    // train
    auto* train = app.add_subcommand("train", "Train a model");
    std::string train_data, train_out, train_config;
    bool with_projection = false, without_projection = false;
    ConfigFlags train_flags;
    train->add_option("--data", train_data, "Dataset directory")->required();
    train->add_option("--out", train_out, "Checkpoint path")->required();
    train->add_option("--config", train_config, "Config file of key = value lines");
    train->add_flag("--projection", with_projection, "Project prototypes before the FC phase");
    train->add_flag("--no-projection", without_projection, "Skip prototype projection (default)");
    add_config_flags(train, train_flags, {"projection"});

    // eval
    auto* eval = app.add_subcommand("eval", "Top-1 accuracy on the test split");
    std::string eval_ckpt, eval_data;
    eval->add_option("--checkpoint", eval_ckpt, "Checkpoint path")->required();
    eval->add_option("--data", eval_data, "Dataset directory")->required();

    // explain
    auto* explain = app.add_subcommand("explain", "Explain one image");
    std::string ex_ckpt, ex_data, ex_image, ex_out;
    std::size_t ex_top = 1;
    double ex_kappa = default_kappa;
    bool ex_force = false;
    explain->add_option("--checkpoint", ex_ckpt, "Checkpoint path")->required();
    explain->add_option("--data", ex_data, "Dataset directory (training split supplies prototype sources)")->required();
    explain->add_option("--image", ex_image, "PNG to explain")->required();
    explain->add_option("--out", ex_out, "Output directory")->required();
    explain->add_option("--top", ex_top, "Number of top classes to explain");
    explain->add_option("--kappa", ex_kappa, "Percentile threshold");
    explain->add_flag("--force", ex_force, "Replace a non-empty output directory");

    // metrics
    auto* metrics = app.add_subcommand("metrics", "Fidelity, Pr table and compactness");
    std::string m_ckpt, m_data, m_out;
    RunConfig m_rc;
    bool m_force = false;
    metrics->add_option("--checkpoint", m_ckpt, "Checkpoint path")->required();
    metrics->add_option("--data", m_data, "Dataset directory")->required();
    metrics->add_option("--out", m_out, "Report directory");
    metrics->add_option("--kappa", m_rc.kappa, "Percentile threshold");
    metrics->add_option("--pr-thresholds", m_rc.pr_thresholds, "Pr thresholds in percent")->delimiter(',');
    metrics->add_flag("--force", m_force, "Replace a non-empty output directory");

    // gradcheck
    auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every gradient on a toy model");
    std::uint64_t gc_seed = 1;
    std::size_t gc_batch = 4;
    double gc_step = GradcheckOptions{}.step;
    grad->add_option("--seed", gc_seed, "Seed");
    grad->add_option("--batch", gc_batch, "Batch size");
    grad->add_option("--step", gc_step, "Central-difference step");

    // ablate
    auto* ablate = app.add_subcommand("ablate", "Run the four-row ablation grid");
    std::string ab_data, ab_config, ab_out;
    std::vector<std::uint64_t> ab_seeds{1, 2, 3};
    bool ab_force = false;
    ConfigFlags ab_flags;
    ablate->add_option("--data", ab_data, "Dataset directory")->required();
    ablate->add_option("--config", ab_config, "Config file of key = value lines");
    ablate->add_option("--seeds", ab_seeds, "Comma-separated seeds")->delimiter(',');
    ablate->add_option("--out", ab_out, "Report directory");
    ablate->add_flag("--force", ab_force, "Replace a non-empty output directory");
    add_config_flags(ablate, ab_flags, {"seed", "projection", "mode", "agg"});

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (*gen) {
            return cmd_gen_data(gen_out, gen_rc, gen_force);
        }
        if (*train) {
            if (with_projection && without_projection) {
                throw std::invalid_argument("conflicting flags: --projection and --no-projection");
            }
            RunConfig rc;
            if (!train_config.empty()) {
                rc.apply_file(train_config);
            }
            apply_flags(rc, train_flags);
            if (with_projection) {
                rc.train.project = true;
            } else if (without_projection) {
                rc.train.project = false;
            }
            return cmd_train(train_data, train_out, rc);
        }
        if (*eval) {
            return cmd_eval(eval_ckpt, eval_data);
        }
        if (*explain) {
            return cmd_explain(ex_ckpt, ex_data, ex_image, ex_out, ex_top, ex_kappa, ex_force);
        }
        if (*metrics) {
            return cmd_metrics(m_ckpt, m_data, m_out, m_rc.kappa, m_rc.pr_thresholds, m_force);
        }
        if (*grad) {
            return cmd_gradcheck(gc_seed, gc_batch, gc_step);
        }
        if (*ablate) {
            RunConfig rc;
            if (!ab_config.empty()) {
                rc.apply_file(ab_config);
            }
            apply_flags(rc, ab_flags);
            return cmd_ablate(ab_data, rc, ab_seeds, ab_out, ab_force);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
