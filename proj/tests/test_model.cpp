#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "protosolo/model.hpp"
#include "test_support.hpp"

using namespace protosolo;
using protosolo::test::random_tensor;

namespace {

FeatureStack random_stack(std::size_t c, std::size_t h, std::size_t w, Rng& rng)
{
    return FeatureStack{random_tensor(Shape{c, h, w}, rng, 0.0, 1.0)};
}

ModelConfig small_config(ComparisonMode mode)
{
    ModelConfig c;
    c.num_classes = 2;
    c.prototypes_per_class = 3;
    c.channels = 4;
    c.height = 3;
    c.width = 3;
    c.mode = mode;
    c.image_size = 12;
    c.backbone_channels = {4, 4};
    return c;
}

// Independent score table: every (k, u, target) triple, nothing shared with the model code.
struct OracleScores {
    std::vector<double> g;
    std::vector<std::size_t> arg;
};

OracleScores score_oracle(const FeatureStack& fs, const Tensor& protos, const ModelConfig& cfg)
{
    const std::size_t c1 = fs.channels(), h1 = fs.height(), w1 = fs.width();
    const bool fmc = cfg.mode == ComparisonMode::feature_map;
    const std::size_t targets = fmc ? c1 : h1 * w1;
    const std::size_t len = fmc ? h1 * w1 : c1;
    OracleScores out;
    for (std::size_t j = 0; j < cfg.num_prototypes(); ++j) {
        double best = -1.0;
        std::size_t best_t = 0;
        for (std::size_t t = 0; t < targets; ++t) {
            double d = 0.0;
            for (std::size_t e = 0; e < len; ++e) {
                const double f = fmc ? fs.maps[t * h1 * w1 + e] : fs.maps[e * h1 * w1 + t];
                const double diff = f - protos[j * len + e];
                d += diff * diff;
            }
            const double s = std::log((d + 1.0) / (d + cfg.epsilon));
            if (s > best) {
                best = s;
                best_t = t;
            }
        }
        out.g.push_back(best);
        out.arg.push_back(best_t);
    }
    return out;
}

} // namespace

TEST_CASE("config shapes and validation")
{
    ModelConfig desk;
    CHECK_NOTHROW(desk.validate());
    CHECK(desk.backbone_extents() == std::vector<std::size_t>{32, 16, 8, 4});
    CHECK(desk.prototype_length() == 16);
    CHECK(desk.comparison_count() == 32);

    ModelConfig vec = desk;
    vec.mode = ComparisonMode::feature_vector;
    CHECK(vec.prototype_length() == 32);
    CHECK(vec.comparison_count() == 16);

    ModelConfig bad = desk;
    bad.height = 5;
    CHECK_THROWS_WITH_AS(bad.validate(), doctest::Contains("not the configured"), std::invalid_argument);
    bad = desk;
    bad.epsilon = 0.0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    bad = desk;
    bad.prototypes_per_class = 0;
    CHECK_THROWS_AS(bad.validate(), std::invalid_argument);
    CHECK_THROWS_AS(Model(bad, 1), std::invalid_argument);
    CHECK_THROWS(parse_comparison_mode("map"));
    CHECK(parse_aggregation("dense") == Aggregation::dense_sum);
}

TEST_CASE("full-scale extractor maps 224px to 7x7x64")
{
    ModelConfig full;
    full.image_size = 224;
    full.channels = 64;
    full.height = full.width = 7;
    full.backbone_channels = {8, 8, 8, 8, 8};
    full.prototypes_per_class = 1;
    const Model m(full, 1);
    const FeatureStack fs = extract(Tensor(Shape{3, 224, 224}, 0.5), m);
    CHECK(fs.maps.shape() == Shape{64, 7, 7});
}

TEST_CASE("desk extractor output follows the conv shape formula")
{
    const Model m(ModelConfig{}, 2);
    std::size_t s = 64;
    for (std::size_t i = 0; i < 4; ++i) {
        s = (s - 2) / 2 + 1;
    }
    Rng rng(1);
    const FeatureStack fs = extract(random_tensor(Shape{3, 64, 64}, rng, 0.0, 1.0), m);
    CHECK(fs.maps.shape() == Shape{32, s, s});
    for (double v : fs.maps.data()) {
        REQUIRE(v >= 0.0);
    }
    CHECK_THROWS_AS(extract(Tensor(Shape{3, 32, 32}), m), std::invalid_argument);
}

TEST_CASE("zero image gives zero features with zero biases")
{
    const Model m(ModelConfig{}, 3);
    const FeatureStack fs = extract(Tensor(Shape{3, 64, 64}), m);
    CHECK(std::all_of(fs.maps.data().begin(), fs.maps.data().end(), [](double v) { return v == 0.0; }));
}

TEST_CASE("similarity values")
{
    const Tensor a = Tensor::vector({1.0, 0.0});
    CHECK(similarity(a, a, 1e-4) == doctest::Approx(9.21034).epsilon(1e-6));
    CHECK(similarity(a, Tensor::vector({0.0, 0.0}), 1e-4) == doctest::Approx(0.693047).epsilon(1e-6));
    CHECK(std::abs(similarity(Tensor::vector({0.0}), Tensor::vector({std::sqrt(1e9)}), 1e-4)) < 1e-8);
    CHECK_THROWS_AS(similarity(a, a, 0.0), std::invalid_argument);
    double prev = similarity(a, a, 1e-4);
    for (double x = 0.1; x < 50.0; x *= 1.7) {
        const double s = similarity(a, Tensor::vector({1.0 + x, 0.0}), 1e-4);
        CHECK(s < prev);
        CHECK(s > 0.0);
        prev = s;
    }
}

TEST_CASE("prototype scores match a triple-loop oracle")
{
    Rng rng(17);
    for (ComparisonMode mode : {ComparisonMode::feature_map, ComparisonMode::feature_vector}) {
        const ModelConfig cfg = small_config(mode);
        const FeatureStack fs = random_stack(4, 3, 3, rng);
        const Tensor protos = random_tensor(Shape{cfg.num_prototypes(), cfg.prototype_length()}, rng, 0.0, 1.0);
        const ScoreTable table = prototype_scores(fs, protos, cfg);
        const OracleScores oracle = score_oracle(fs, protos, cfg);
        for (std::size_t j = 0; j < cfg.num_prototypes(); ++j) {
            CHECK(table.scores[j] == doctest::Approx(oracle.g[j]).epsilon(1e-12));
            CHECK(table.target_argmax[j] == oracle.arg[j]);
        }
        for (std::size_t k = 0; k < 2; ++k) {
            const auto first = oracle.g.begin() + static_cast<std::ptrdiff_t>(k * 3);
            const auto best = std::max_element(first, first + 3);
            CHECK(table.class_max[k] == doctest::Approx(*best).epsilon(1e-12));
            CHECK(table.class_argmax[k] == static_cast<std::size_t>(best - first));
        }
    }
}

TEST_CASE("prototype equal to a channel map scores ln(1/eps) on that channel")
{
    Rng rng(4);
    const ModelConfig cfg = small_config(ComparisonMode::feature_map);
    const FeatureStack fs = random_stack(4, 3, 3, rng);
    Tensor protos = random_tensor(Shape{6, 9}, rng, 5.0, 6.0);
    const Tensor c2 = fs.channel_map(2);
    std::copy(c2.data().begin(), c2.data().end(), protos.data().begin() + 4 * 9);
    const ScoreTable t = prototype_scores(fs, protos, cfg);
    CHECK(t.scores[4] == doctest::Approx(std::log(1e4)));
    CHECK(t.target_argmax[4] == 2);
    CHECK(t.class_argmax[1] == 1);
    CHECK_THROWS_AS(prototype_scores(fs, Tensor(Shape{6, 4}), cfg), std::invalid_argument);
}

TEST_CASE("class maximum picks 4.99 over 1.92")
{
    const RowArgResult g = row_max(Var(Tensor(Shape{2, 3}, std::vector<double>{1.92, 1.5, 0.7, 3.0, 4.99, 2.0})));
    CHECK(g.values.value() == Tensor::vector({1.92, 4.99}));
    CHECK(g.indices == std::vector<std::size_t>{0, 1});
    const ArgResult m = max_with_argmax(Var(Tensor::vector({1.92, 4.99})));
    CHECK(m.value.item() == 4.99);
    CHECK(m.index == 1);
}

TEST_CASE("classify: identity, diagonal and loop oracle")
{
    ScoreTable st;
    st.class_max = Tensor::vector({2.0, 3.0});
    CHECK(classify(st, Tensor(Shape{2, 2}, std::vector<double>{1, 0, 0, 1}), Aggregation::single_activation) ==
          Tensor::vector({2.0, 3.0}));
    const Tensor diag(Shape{2, 2}, std::vector<double>{1.5, 0, 0, 0.25});
    CHECK(classify(st, diag, Aggregation::single_activation) == Tensor::vector({3.0, 0.75}));

    Rng rng(8);
    ScoreTable st3;
    st3.class_max = random_tensor(Shape{3}, rng, 0.0, 5.0);
    const Tensor w = random_tensor(Shape{3, 3}, rng);
    const Tensor logits = classify(st3, w, Aggregation::single_activation);
    for (std::size_t t = 0; t < 3; ++t) {
        double acc = 0.0;
        for (std::size_t k = 0; k < 3; ++k) {
            acc += w.at(t, k) * st3.class_max[k];
        }
        CHECK(logits[t] == doctest::Approx(acc).epsilon(1e-15));
    }
    CHECK_THROWS(classify(st3, Tensor(Shape{2, 3}), Aggregation::single_activation));
}

TEST_CASE("dense aggregation sums every prototype through its column")
{
    Rng rng(10);
    ModelConfig cfg = small_config(ComparisonMode::feature_vector);
    cfg.aggregation = Aggregation::dense_sum;
    const FeatureStack fs = random_stack(4, 3, 3, rng);
    const Tensor protos = random_tensor(Shape{6, 4}, rng, 0.0, 1.0);
    const ScoreTable st = prototype_scores(fs, protos, cfg);
    const Tensor w = random_tensor(Shape{2, 6}, rng);
    const Tensor logits = classify(st, w, Aggregation::dense_sum);
    for (std::size_t t = 0; t < 2; ++t) {
        double acc = 0.0;
        for (std::size_t j = 0; j < 6; ++j) {
            acc += w.at(t, j) * st.scores[j];
        }
        CHECK(logits[t] == doctest::Approx(acc).epsilon(1e-14));
    }
}

TEST_CASE("forward pass agrees with the value-level pipeline")
{
    Rng rng(5);
    const Model m(toy_model_config(), 6);
    const Tensor img = random_tensor(Shape{3, 12, 12}, rng, 0.0, 1.0);
    const Forward f = m.forward(img);
    const FeatureStack fs = extract(img, m);
    CHECK(f.features.value() == fs.maps);
    const ScoreTable st = prototype_scores(fs, m.prototypes(), m.config());
    CHECK(f.logits.value() == classify(st, m.fc_weights(), m.config().aggregation));
}

TEST_CASE("channel permutation leaves feature-map scores unchanged")
{
    Rng rng(12);
    const ModelConfig cfg = small_config(ComparisonMode::feature_map);
    const FeatureStack fs = random_stack(4, 3, 3, rng);
    const Tensor protos = random_tensor(Shape{6, 9}, rng, 0.0, 1.0);
    const std::size_t perm[] = {2, 0, 3, 1};
    FeatureStack permuted{Tensor(fs.maps.shape())};
    for (std::size_t c = 0; c < 4; ++c) {
        for (std::size_t e = 0; e < 9; ++e) {
            permuted.maps[perm[c] * 9 + e] = fs.maps[c * 9 + e];
        }
    }
    const ScoreTable a = prototype_scores(fs, protos, cfg);
    const ScoreTable b = prototype_scores(permuted, protos, cfg);
    CHECK(a.scores == b.scores);
    CHECK(a.class_max == b.class_max);
    for (std::size_t j = 0; j < 6; ++j) {
        CHECK(b.target_argmax[j] == perm[a.target_argmax[j]]);
    }
}

TEST_CASE("prototype permutation within a class leaves G and logits unchanged")
{
    Rng rng(13);
    const ModelConfig cfg = small_config(ComparisonMode::feature_map);
    const FeatureStack fs = random_stack(4, 3, 3, rng);
    const Tensor protos = random_tensor(Shape{6, 9}, rng, 0.0, 1.0);
    Tensor swapped = protos;
    const std::size_t order[] = {2, 0, 1, 4, 5, 3};
    for (std::size_t j = 0; j < 6; ++j) {
        for (std::size_t e = 0; e < 9; ++e) {
            swapped[j * 9 + e] = protos[order[j] * 9 + e];
        }
    }
    const Tensor w = random_tensor(Shape{2, 2}, rng);
    const ScoreTable a = prototype_scores(fs, protos, cfg);
    const ScoreTable b = prototype_scores(fs, swapped, cfg);
    CHECK(a.class_max == b.class_max);
    CHECK(classify(a, w, Aggregation::single_activation) == classify(b, w, Aggregation::single_activation));
}

TEST_CASE("replacing a prototype with its argmax target never lowers its score")
{
    Rng rng(14);
    for (ComparisonMode mode : {ComparisonMode::feature_map, ComparisonMode::feature_vector}) {
        const ModelConfig cfg = small_config(mode);
        for (int trial = 0; trial < 20; ++trial) {
            const FeatureStack fs = random_stack(4, 3, 3, rng);
            Tensor protos = random_tensor(Shape{6, cfg.prototype_length()}, rng, 0.0, 1.0);
            const ScoreTable before = prototype_scores(fs, protos, cfg);
            const std::size_t j = static_cast<std::size_t>(trial) % 6;
            const Tensor target = target_vector(fs, before.target_argmax[j], mode);
            std::copy(target.data().begin(), target.data().end(),
                      protos.data().begin() + static_cast<std::ptrdiff_t>(j * cfg.prototype_length()));
            const ScoreTable after = prototype_scores(fs, protos, cfg);
            CHECK(after.scores[j] >= before.scores[j]);
            CHECK(after.scores[j] == doctest::Approx(std::log(1.0 / cfg.epsilon)));
        }
    }
}

TEST_CASE("scores lie in (0, ln(1/eps)] and diagonal FC predicts argmax of w_tt G_t")
{
    Rng rng(15);
    const ModelConfig cfg = small_config(ComparisonMode::feature_map);
    for (int trial = 0; trial < 50; ++trial) {
        const FeatureStack fs = random_stack(4, 3, 3, rng);
        const Tensor protos = random_tensor(Shape{6, 9}, rng, 0.0, 3.0);
        const ScoreTable st = prototype_scores(fs, protos, cfg);
        for (double s : st.scores.data()) {
            REQUIRE(s > 0.0);
            REQUIRE(s <= std::log(1.0 / cfg.epsilon));
        }
        const double w0 = rng.uniform(0.5, 2.0), w1 = rng.uniform(0.5, 2.0);
        const Tensor diag(Shape{2, 2}, std::vector<double>{w0, 0.0, 0.0, w1});
        const std::size_t expected = w0 * st.class_max[0] >= w1 * st.class_max[1] ? 0 : 1;
        CHECK(argmax(classify(st, diag, Aggregation::single_activation)) == expected);
    }
}

TEST_CASE("initialization conventions")
{
    const Model m(ModelConfig{}, 9);
    const Tensor& fc = m.fc_weights();
    REQUIRE(fc.shape() == Shape{4, 4});
    for (std::size_t t = 0; t < 4; ++t) {
        for (std::size_t k = 0; k < 4; ++k) {
            CHECK(fc.at(t, k) == (t == k ? 1.0 : -0.5));
        }
    }
    for (double v : m.prototypes().data()) {
        REQUIRE(v >= 0.0);
        REQUIRE(v < 1.0);
    }
    CHECK(m.prototypes().shape() == Shape{40, 16});
    CHECK(Model(ModelConfig{}, 9).prototypes() == m.prototypes());
    CHECK_FALSE(Model(ModelConfig{}, 10).prototypes() == m.prototypes());
    CHECK_THROWS_AS(m.parameter("nope"), std::out_of_range);
}

TEST_CASE("nearest target search matches a direct scan")
{
    Rng rng(21);
    std::vector<FeatureStack> feats;
    for (int i = 0; i < 5; ++i) {
        feats.push_back(random_stack(4, 3, 3, rng));
    }
    const std::size_t labels[] = {0, 1, 0, 1, 1};
    const Tensor p = random_tensor(Shape{9}, rng, 0.0, 1.0);
    const TargetMatch m = nearest_target(p.data(), 1, feats, labels, ComparisonMode::feature_map);
    double best = 1e300;
    std::size_t bs = 0, bc = 0;
    for (std::size_t s = 0; s < 5; ++s) {
        if (labels[s] != 1) {
            continue;
        }
        for (std::size_t c = 0; c < 4; ++c) {
            double d = 0.0;
            for (std::size_t e = 0; e < 9; ++e) {
                d += std::pow(feats[s].maps[c * 9 + e] - p[e], 2);
            }
            if (d < best) {
                best = d;
                bs = s;
                bc = c;
            }
        }
    }
    CHECK(m.sample == bs);
    CHECK(m.target == bc);
    CHECK(m.sq_distance == doctest::Approx(best).epsilon(1e-14));
    CHECK_THROWS_AS(nearest_target(p.data(), 2, feats, labels, ComparisonMode::feature_map), std::invalid_argument);
}
