// Acceptance run: one PASS/FAIL line per criterion on stdout, progress on stderr.
//
// Usage: acceptance [--known-failure N]...
// Exit status is 0 when the set of failing criteria equals the set passed with
// --known-failure (an expected failure still prints FAIL), nonzero otherwise.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <iostream>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "protosolo/checkpoint.hpp"
#include "protosolo/explainer.hpp"
#include "protosolo/gradcheck.hpp"
#include "protosolo/losses.hpp"
#include "protosolo/metrics.hpp"
#include "protosolo/study.hpp"
#include "protosolo/trainer.hpp"

using namespace protosolo;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0)
{
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v)
{
    char buf[64];
    std::snprintf(buf, sizeof(buf), f, v);
    return buf;
}

struct Verdict {
    int id;
    std::string name;
    bool pass;
    std::string detail;
};

std::vector<Verdict> verdicts;

void report(int id, const std::string& name, bool pass, const std::string& detail)
{
    verdicts.push_back({id, name, pass, detail});
    std::printf("criterion %d (%s): %s -- %s\n", id, name.c_str(), pass ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
}

bool close(double a, double b)
{
    return std::abs(a - b) <= 1e-12 * std::max({1.0, std::abs(a), std::abs(b)});
}

// ---- brute-force oracles for criterion 2 ---------------------------------------

double oracle_sq(const FeatureStack& fs, std::size_t t, const Tensor& protos, std::size_t j, ComparisonMode mode)
{
    const std::size_t hw = fs.height() * fs.width();
    const std::size_t len = mode == ComparisonMode::feature_map ? hw : fs.channels();
    double d = 0.0;
    for (std::size_t e = 0; e < len; ++e) {
        const double f = mode == ComparisonMode::feature_map ? fs.maps[t * hw + e] : fs.maps[e * hw + t];
        d += (f - protos[j * len + e]) * (f - protos[j * len + e]);
    }
    return d;
}

std::size_t oracle_targets(const FeatureStack& fs, ComparisonMode mode)
{
    return mode == ComparisonMode::feature_map ? fs.channels() : fs.height() * fs.width();
}

bool check_oracles(std::string& detail)
{
    std::size_t compared = 0;
    bool ok = true;
    auto expect = [&](bool cond, const std::string& what) {
        ++compared;
        if (!cond && ok) {
            detail = "mismatch: " + what;
            ok = false;
        }
    };
    for (ComparisonMode mode : {ComparisonMode::feature_map, ComparisonMode::feature_vector}) {
        ModelConfig cfg;
        cfg.num_classes = 2;
        cfg.prototypes_per_class = 2;
        cfg.channels = 4;
        cfg.image_size = 32;
        cfg.backbone_channels = {4, 4, 4};
        cfg.mode = mode;
        DatasetSpec spec;
        spec.num_classes = 2;
        spec.per_class = 3;
        spec.image_size = 32;
        spec.seed = 3;
        Dataset d = generate(spec);
        std::vector<Sample> train(d.train.begin(), d.train.end());
        train.push_back(d.test[0]); // 5 samples
        const Model m(cfg, 5);
        const Tensor& P = m.prototypes();
        std::vector<FeatureStack> feats;
        std::vector<std::size_t> labels;
        for (const Sample& s : train) {
            feats.push_back(extract(s.image, m));
            labels.push_back(s.label);
        }
        const std::size_t U = cfg.prototypes_per_class;
        const std::string tag = to_string(mode) + ": ";

        // prototype_scores
        for (std::size_t i = 0; i < feats.size(); ++i) {
            const ScoreTable st = prototype_scores(feats[i], P, cfg);
            for (std::size_t k = 0; k < cfg.num_classes; ++k) {
                double gk = -1.0;
                std::size_t uk = 0;
                for (std::size_t u = 0; u < U; ++u) {
                    const std::size_t j = k * U + u;
                    double g = -1.0;
                    std::size_t arg = 0;
                    for (std::size_t t = 0; t < oracle_targets(feats[i], mode); ++t) {
                        const double dd = oracle_sq(feats[i], t, P, j, mode);
                        const double s = std::log((dd + 1.0) / (dd + cfg.epsilon));
                        if (s > g) {
                            g = s;
                            arg = t;
                        }
                    }
                    expect(close(st.scores[j], g), tag + "score");
                    expect(st.target_argmax[j] == arg, tag + "score argmax");
                    if (g > gk) {
                        gk = g;
                        uk = u;
                    }
                }
                expect(close(st.class_max[k], gk), tag + "class max");
                expect(st.class_argmax[k] == uk, tag + "class argmax");
            }
        }

        // cluster and separation losses
        double clst = 0.0, sep = 0.0;
        for (std::size_t i = 0; i < feats.size(); ++i) {
            double best_same = std::numeric_limits<double>::infinity();
            double best_other = std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < cfg.num_prototypes(); ++j) {
                for (std::size_t t = 0; t < oracle_targets(feats[i], mode); ++t) {
                    const double dd = oracle_sq(feats[i], t, P, j, mode);
                    (j / U == labels[i] ? best_same : best_other) =
                        std::min(j / U == labels[i] ? best_same : best_other, dd);
                }
            }
            clst += best_same;
            sep += best_other;
        }
        const double n = static_cast<double>(feats.size());
        expect(close(cluster_loss(feats, labels, P, cfg), clst / n), tag + "cluster loss");
        expect(close(separation_loss(feats, labels, P, cfg), -sep / n), tag + "separation loss");

        // explain_prototype
        const TrainingFeatures tf = training_features(m, train);
        for (std::size_t j = 0; j < cfg.num_prototypes(); ++j) {
            double best = std::numeric_limits<double>::infinity();
            std::size_t bs = 0, bt = 0;
            for (std::size_t s = 0; s < feats.size(); ++s) {
                if (labels[s] != j / U) {
                    continue;
                }
                for (std::size_t t = 0; t < oracle_targets(feats[s], mode); ++t) {
                    const double dd = oracle_sq(feats[s], t, P, j, mode);
                    if (dd < best) {
                        best = dd;
                        bs = s;
                        bt = t;
                    }
                }
            }
            const PrototypeExplanation pe = explain_prototype(j / U, j % U, m, train, tf);
            expect(pe.sample == bs && pe.target == bt, tag + "explain_prototype indices");
            expect(close(pe.distance, std::sqrt(best)), tag + "explain_prototype distance");
        }

        // explain_decision
        const std::size_t classes[] = {0, 1};
        for (std::size_t i = 0; i < feats.size(); ++i) {
            const ExplanationRecord rec = explain_decision(train[i], m, classes, train, tf);
            for (const ClassExplanation& c : rec.classes) {
                double gk = -1.0;
                std::size_t uk = 0;
                for (std::size_t u = 0; u < U; ++u) {
                    double g = -1.0;
                    for (std::size_t t = 0; t < oracle_targets(feats[i], mode); ++t) {
                        const double dd = oracle_sq(feats[i], t, P, c.k * U + u, mode);
                        g = std::max(g, std::log((dd + 1.0) / (dd + cfg.epsilon)));
                    }
                    if (g > gk) {
                        gk = g;
                        uk = u;
                    }
                }
                double best = std::numeric_limits<double>::infinity();
                std::size_t bt = 0;
                for (std::size_t t = 0; t < oracle_targets(feats[i], mode); ++t) {
                    const double dd = oracle_sq(feats[i], t, P, c.k * U + uk, mode);
                    if (dd < best) {
                        best = dd;
                        bt = t;
                    }
                }
                double logit = 0.0;
                for (std::size_t k2 = 0; k2 < cfg.num_classes; ++k2) {
                    double g2 = -1.0;
                    for (std::size_t u = 0; u < U; ++u) {
                        for (std::size_t t = 0; t < oracle_targets(feats[i], mode); ++t) {
                            const double dd = oracle_sq(feats[i], t, P, k2 * U + u, mode);
                            g2 = std::max(g2, std::log((dd + 1.0) / (dd + cfg.epsilon)));
                        }
                    }
                    logit += m.fc_weights().at(c.k, k2) * g2;
                }
                expect(c.key_prototype == uk, tag + "explain_decision prototype");
                expect(c.key_target == bt, tag + "explain_decision target");
                expect(close(c.similarity, gk), tag + "explain_decision similarity");
                expect(close(c.logit, logit), tag + "explain_decision logit");
                expect(c.weight == m.fc_weights().at(c.k, c.k), tag + "explain_decision weight");
            }
        }
    }
    if (ok) {
        detail = std::to_string(compared) + " comparisons agree (indices exact, values to 1e-12 relative)";
    }
    return ok;
}

// ---- helpers over trained models --------------------------------------------------

struct FcStructure {
    double max_off = 0.0;
    double min_diag = std::numeric_limits<double>::infinity();
};

FcStructure fc_structure(const Tensor& fc)
{
    FcStructure s;
    for (std::size_t t = 0; t < fc.dim(0); ++t) {
        for (std::size_t k = 0; k < fc.dim(1); ++k) {
            if (t == k) {
                s.min_diag = std::min(s.min_diag, fc.at(t, k));
            } else {
                s.max_off = std::max(s.max_off, std::abs(fc.at(t, k)));
            }
        }
    }
    return s;
}

// Prototypes that are their class's key prototype for at least one own-class image.
std::vector<bool> active_prototypes(const Model& m, const std::vector<Sample>& train)
{
    const std::size_t U = m.config().prototypes_per_class;
    std::vector<bool> active(m.config().num_prototypes(), false);
    for (const Sample& s : train) {
        const Forward f = m.forward(s.image);
        active[s.label * U + f.score.class_argmax[s.label]] = true;
    }
    return active;
}

double mean(const std::vector<double>& v)
{
    return v.empty() ? 0.0 : std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

std::string join(const std::vector<double>& v, const char* f = "%.2f")
{
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out += (i ? "," : "") + fmt(f, v[i]);
    }
    return out;
}

} // namespace

int main(int argc, char** argv)
{
    std::set<int> known;
    for (int i = 1; i < argc; ++i) {
        if (std::strcmp(argv[i], "--known-failure") == 0 && i + 1 < argc) {
            known.insert(std::atoi(argv[++i]));
        } else {
            std::cerr << "usage: acceptance [--known-failure N]...\n";
            return 2;
        }
    }
    const auto t_all = Clock::now();

    // 1. Gradient fidelity.
    {
        const auto t0 = Clock::now();
        GradcheckOptions o;
        o.seed = 1;
        o.batch = 4;
        const GradcheckReport r = gradcheck(o);
        const double secs = seconds_since(t0);
        report(1, "gradient fidelity", r.max_rel_error < 1e-4 && secs < 60.0,
               "max relative error " + fmt("%.2e", r.max_rel_error) + " over " + std::to_string(r.checked) +
                   " coordinates (" + std::to_string(r.skipped) + " straddling a kink skipped), " +
                   fmt("%.2f", secs) + " s");
    }

    // 2. Oracle equivalence.
    {
        const auto t0 = Clock::now();
        std::string detail;
        const bool ok = check_oracles(detail);
        const double secs = seconds_since(t0);
        report(2, "oracle equivalence", ok && secs < 10.0, detail + ", " + fmt("%.2f", secs) + " s");
    }

    // Desk runs: fmc+SA forked into NP/P arms, and vec+SA with projection, seeds 1-3.
    const Dataset data = generate(DatasetSpec{});
    const TrainConfig base_train;
    const ModelConfig fmc_model;
    ModelConfig vec_model = fmc_model;
    vec_model.mode = ComparisonMode::feature_vector;
    const std::uint64_t seeds[] = {1, 2, 3};

    struct SeedRuns {
        double np_acc, p_acc, vec_acc;
        PrTable np_pr, p_pr;
    };
    std::vector<SeedRuns> runs;
    std::optional<Trainer> seed1_np;
    double seed1_secs = 0.0;
    for (std::uint64_t seed : seeds) {
        TrainConfig tc = base_train;
        tc.seed = seed;
        std::cerr << "training fmc seed " << seed << " ..." << std::endl;
        const auto t0 = Clock::now();
        ForkedRun fork = train_forked(data.train, fmc_model, tc);
        if (seed == 1) {
            seed1_secs = seconds_since(t0);
        }
        std::cerr << "training vec seed " << seed << " ..." << std::endl;
        const ForkedRun vec = train_forked(data.train, vec_model, tc);
        SeedRuns r{accuracy(fork.non_projected.model(), data.test), accuracy(fork.projected.model(), data.test),
                   accuracy(vec.projected.model(), data.test), precision_table(fork.non_projected.model(), data.train),
                   precision_table(fork.projected.model(), data.train)};
        std::cerr << "  seed " << seed << ": NP " << r.np_acc << "%, P " << r.p_acc << "%, vec+SA+P " << r.vec_acc
                  << "%" << std::endl;
        runs.push_back(std::move(r));
        if (seed == 1) {
            seed1_np.emplace(std::move(fork.non_projected));
        }
    }
    const Model& desk = seed1_np->model();

    // 3. FC structure.
    {
        const FcStructure s = fc_structure(desk.fc_weights());
        report(3, "FC structure", s.max_off < 5e-3 && s.min_diag > 1.0 && seed1_secs < 900.0,
               "max off-diagonal " + fmt("%.2e", s.max_off) + ", min diagonal " + fmt("%.4f", s.min_diag) +
                   ", run " + fmt("%.1f", seed1_secs) + " s (seed 1)");
    }

    // 4. Non-projection fidelity.
    {
        const FidelityReport f = fidelity(desk, data.train);
        const bool ok = f.mean_cos >= 0.95 && f.mean_pcc >= 0.95 && f.mean_js >= 0.90 && f.mean_ed <= 0.1;
        report(4, "non-projection fidelity", ok,
               "mean COS " + fmt("%.4f", f.mean_cos) + ", PCC " + fmt("%.4f", f.mean_pcc) + ", JS " +
                   fmt("%.4f", f.mean_js) + ", ED " + fmt("%.4f", f.mean_ed) + " over " +
                   std::to_string(f.per_prototype.size() - f.undefined) + " prototypes (" +
                   std::to_string(f.undefined) + " undefined)");

        // Diagnostic: the same means restricted to prototypes that ever decide a class.
        const std::vector<bool> active = active_prototypes(desk, data.train);
        std::vector<double> cos, pcc, js, ed;
        for (const auto& p : f.per_prototype) {
            if (active[p.prototype] && p.values.defined) {
                cos.push_back(p.values.cos);
                pcc.push_back(p.values.pcc);
                js.push_back(p.values.js);
                ed.push_back(p.values.ed);
            }
        }
        std::printf("  diagnostic: %zu of %zu prototypes are ever a key prototype; their mean COS %.4f, PCC %.4f, "
                    "JS %.4f, ED %.4f\n",
                    cos.size(), f.per_prototype.size(), mean(cos), mean(pcc), mean(js), mean(ed));
    }

    // 5. P vs NP.
    {
        std::vector<double> np_acc, p_acc;
        std::vector<double> np_pr(default_pr_thresholds.size(), 0.0), p_pr(default_pr_thresholds.size(), 0.0);
        for (const auto& r : runs) {
            np_acc.push_back(r.np_acc);
            p_acc.push_back(r.p_acc);
            for (std::size_t i = 0; i < np_pr.size(); ++i) {
                np_pr[i] += r.np_pr.percentages[i] / static_cast<double>(runs.size());
                p_pr[i] += r.p_pr.percentages[i] / static_cast<double>(runs.size());
            }
        }
        bool pr_ok = true;
        for (std::size_t i = 0; i < np_pr.size(); ++i) {
            pr_ok = pr_ok && np_pr[i] >= p_pr[i];
        }
        const bool acc_ok = mean(np_acc) >= mean(p_acc) - 0.5;
        report(5, "P vs NP ordering", acc_ok && pr_ok,
               "accuracy NP " + fmt("%.2f", mean(np_acc)) + " vs P " + fmt("%.2f", mean(p_acc)) +
                   "; Pr>{10..50}% NP [" + join(np_pr, "%.1f") + "] vs P [" + join(p_pr, "%.1f") + "]");
    }

    // 6. Ablation ordering: FMC+SA+NP >= FMC+SA+P - 0.5 (the tie tolerance of criterion 5),
    //    and FMC+SA+P beats vec+SA+P by at least one point, so only the comparison mode differs.
    {
        std::vector<double> vec, p, np;
        for (const auto& r : runs) {
            vec.push_back(r.vec_acc);
            p.push_back(r.p_acc);
            np.push_back(r.np_acc);
        }
        const bool ok = mean(np) >= mean(p) - 0.5 && mean(p) >= mean(vec) + 1.0;
        report(6, "ablation ordering", ok,
               "FMC+SA+NP " + fmt("%.2f", mean(np)) + " [" + join(np) + "], FMC+SA+P " + fmt("%.2f", mean(p)) +
                   " [" + join(p) + "], vec+SA+P " + fmt("%.2f", mean(vec)) + " [" + join(vec) + "]");
    }

    // 7. Compactness, without training.
    {
        bool ok = true;
        for (std::size_t u : {1u, 3u, 10u}) {
            ModelConfig sa;
            sa.prototypes_per_class = u;
            ModelConfig dense = sa;
            dense.aggregation = Aggregation::dense_sum;
            ok = ok && prototype_compactness(sa) == std::vector<std::size_t>(sa.num_classes, 1) &&
                 prototype_compactness(dense) == std::vector<std::size_t>(dense.num_classes, u);
        }
        report(7, "prototype compactness", ok, "single activation -> 1 per class, dense -> U per class (U = 1, 3, 10)");
    }

    // 8. Explanation grounding.
    {
        const PrTable& t = runs[0].np_pr;
        report(8, "explanation grounding", t.percentages[0] >= 70.0,
               fmt("%.1f", t.percentages[0]) + "% of prototypes have Pr > 10% (seed 1, kappa 95)");
    }

    // 9. Classification sanity.
    {
        std::vector<double> acc;
        bool ok = true;
        for (const auto& r : runs) {
            acc.push_back(r.np_acc);
            ok = ok && r.np_acc >= 95.0;
        }
        report(9, "classification sanity", ok, "test accuracy per seed [" + join(acc) + "]");
    }

    // 10. Determinism and persistence.
    {
        std::cerr << "repeating the seed-1 run for the determinism check ..." << std::endl;
        TrainConfig tc = base_train;
        tc.seed = 1;
        const TrainResult again = train(data.train, Model(fmc_model, 1), tc);
        const std::string first = serialize_checkpoint(seed1_np->checkpoint());
        const std::string second = serialize_checkpoint(again.checkpoint);
        const bool identical = first == second;

        const Checkpoint back = parse_checkpoint(first);
        const Model restored = model_from_checkpoint(back);
        bool lossless = serialize_checkpoint(back) == first;
        for (std::size_t i = 0; i < desk.parameters().size(); ++i) {
            lossless = lossless && restored.parameters()[i].value == desk.parameters()[i].value;
        }
        bool truncated_rejected = false;
        try {
            parse_checkpoint(std::string_view(first).substr(0, first.size() - 1));
        } catch (const std::exception&) {
            truncated_rejected = true;
        }
        report(10, "determinism and persistence", identical && lossless && truncated_rejected,
               std::string("repeat run ") + (identical ? "byte-identical" : "DIFFERS") + " (" +
                   std::to_string(first.size()) + " bytes), round trip " + (lossless ? "lossless" : "LOSSY") +
                   ", truncated file " + (truncated_rejected ? "rejected" : "ACCEPTED"));
    }

    std::set<int> failed;
    for (const auto& v : verdicts) {
        if (!v.pass) {
            failed.insert(v.id);
        }
    }
    std::printf("summary: %zu/%zu criteria pass, total %.1f s\n", verdicts.size() - failed.size(), verdicts.size(),
                seconds_since(t_all));
    if (failed == known) {
        if (!known.empty()) {
            std::printf("failing criteria match the documented known failures\n");
        }
        return 0;
    }
    for (int id : failed) {
        if (!known.count(id)) {
            std::printf("unexpected failure: criterion %d\n", id);
        }
    }
    for (int id : known) {
        if (!failed.count(id)) {
            std::printf("documented failure now passes: criterion %d (update the known-failure list)\n", id);
        }
    }
    return 1;
}
