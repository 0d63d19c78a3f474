#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <random>

#include <flowscene/fgta.hpp>
#include <flowscene/flow.hpp>
#include <flowscene/grids.hpp>

#include "oracles.hpp"

using namespace flowscene;

TEST_CASE("cosine weights hit the canonical values", "[fgta]") {
    FeatureMap a(3, 2, 2);
    FeatureMap b(3, 2, 2);
    // Pixel (0,0): identical vectors. (0,1): antipodal. (1,0): a is zero. (1,1): orthogonal.
    for (int c = 0; c < 3; ++c) {
        a.at(c, 0, 0) = b.at(c, 0, 0) = static_cast<float>(c + 1);
        a.at(c, 0, 1) = static_cast<float>(c + 1);
        b.at(c, 0, 1) = -static_cast<float>(c + 1);
        b.at(c, 1, 0) = 1.0f;
    }
    a.at(0, 1, 1) = 1.0f;
    b.at(1, 1, 1) = 1.0f;

    WeightMap w = cosine_weight(a, b);
    REQUIRE(w.at(0, 0, 0) == Catch::Approx(1.0).margin(1e-6));
    REQUIRE(w.at(0, 0, 1) == Catch::Approx(-1.0).margin(1e-6));
    REQUIRE(w.at(0, 1, 0) == 0.0f);  // zero vector contributes zero similarity
    REQUIRE(w.at(0, 1, 1) == Catch::Approx(0.0).margin(1e-6));
}

TEST_CASE("cosine weights match a scalar loop", "[fgta]") {
    std::mt19937 rng(31);
    FeatureMap a = oracle::random_feature(rng, 5, 6, 7);
    FeatureMap b = oracle::random_feature(rng, 5, 6, 7);
    WeightMap w = cosine_weight(a, b);
    for (int y = 0; y < 6; ++y)
        for (int x = 0; x < 7; ++x) {
            double dot = 0.0, na = 0.0, nb = 0.0;
            for (int c = 0; c < 5; ++c) {
                dot += static_cast<double>(a.at(c, y, x)) * b.at(c, y, x);
                na += static_cast<double>(a.at(c, y, x)) * a.at(c, y, x);
                nb += static_cast<double>(b.at(c, y, x)) * b.at(c, y, x);
            }
            double want = (na == 0.0 || nb == 0.0) ? 0.0 : dot / (std::sqrt(na) * std::sqrt(nb));
            REQUIRE(w.at(0, y, x) == Catch::Approx(want).margin(1e-5));
        }
}

TEST_CASE("weight normalization is a per-pixel softmax", "[fgta]") {
    WeightMap single(1, 2, 2, 0.7f);
    WeightMap n1 = normalize_weights(single);
    for (float v : n1.values) REQUIRE(v == Catch::Approx(1.0));

    WeightMap equal(3, 2, 2, 0.25f);
    WeightMap n3 = normalize_weights(equal);
    for (float v : n3.values) REQUIRE(v == Catch::Approx(1.0 / 3.0));

    WeightMap pair(2, 1, 1);
    pair.at(0, 0, 0) = 1.0f;
    pair.at(1, 0, 0) = 0.0f;
    WeightMap np = normalize_weights(pair);
    double e = std::exp(1.0);
    REQUIRE(np.at(0, 0, 0) == Catch::Approx(e / (e + 1.0)));
    REQUIRE(np.at(1, 0, 0) == Catch::Approx(1.0 / (e + 1.0)));

    std::mt19937 rng(32);
    WeightMap raw(4, 5, 5);
    std::uniform_real_distribution<float> dist(-3.0f, 3.0f);
    for (float& v : raw.values) v = dist(rng);
    WeightMap norm = normalize_weights(raw);
    const size_t plane = 25;
    for (size_t p = 0; p < plane; ++p) {
        float sum = 0.0f;
        for (int i = 0; i < 4; ++i) {
            float v = norm.values[i * plane + p];
            REQUIRE(v >= 0.0f);
            sum += v;
        }
        REQUIRE(sum == Catch::Approx(1.0).margin(1e-5));
    }
}

TEST_CASE("aggregation blends frames by per-pixel weights", "[fgta]") {
    std::mt19937 rng(33);
    FeatureMap f = oracle::random_feature(rng, 3, 4, 4);

    // Identical frames under any normalized weights stay unchanged.
    WeightMap w2 = normalize_weights(WeightMap(2, 4, 4, 0.5f));
    FeatureMap same = aggregate({f, f}, w2);
    for (size_t i = 0; i < f.data.size(); ++i)
        REQUIRE(same.data[i] == Catch::Approx(f.data[i]).margin(1e-6));

    // One frame with weight one is the identity.
    FeatureMap one = aggregate({f}, WeightMap(1, 4, 4, 1.0f));
    REQUIRE(one.data == f.data);

    FeatureMap g = oracle::random_feature(rng, 3, 4, 4);
    WeightMap raw(2, 4, 4);
    std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
    for (float& v : raw.values) v = dist(rng);
    WeightMap w = normalize_weights(raw);
    FeatureMap out = aggregate({f, g}, w);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < 4; ++y)
            for (int x = 0; x < 4; ++x) {
                double want = static_cast<double>(w.at(0, y, x)) * f.at(c, y, x) +
                              static_cast<double>(w.at(1, y, x)) * g.at(c, y, x);
                REQUIRE(out.at(c, y, x) == Catch::Approx(want).margin(1e-5));
            }

    REQUIRE_THROWS_AS(aggregate({f, g}, WeightMap(3, 4, 4, 1.0f)), std::invalid_argument);
    REQUIRE_THROWS_AS(aggregate({}, WeightMap(1, 4, 4, 1.0f)), std::invalid_argument);
}

TEST_CASE("attention leaves fully occluded pixels untouched", "[fgta]") {
    std::mt19937 rng(34);
    FeatureMap q = oracle::random_feature(rng, 8, 6, 6);
    FeatureMap kv = oracle::random_feature(rng, 8, 6, 6);
    AttentionParams prm = random_attention_params(8, 2, 3, 5);
    OcclusionMask all(6, 6, 1.0f);
    FeatureMap out = neighborhood_cross_attention(q, kv, all, prm);
    REQUIRE(out.data == q.data);  // bit-exact pass-through
}

TEST_CASE("window-1 attention with identity projections adds the kv pixel", "[fgta]") {
    std::mt19937 rng(35);
    FeatureMap q = oracle::random_feature(rng, 4, 5, 5);
    FeatureMap kv = oracle::random_feature(rng, 4, 5, 5);
    AttentionParams prm = identity_attention_params(4, 2, 1);
    OcclusionMask clear(5, 5);
    // Single self key: softmax weight 1, so out = q + Wo * Wv * kv = q + kv.
    FeatureMap out = neighborhood_cross_attention(q, kv, clear, prm);
    for (size_t i = 0; i < out.data.size(); ++i)
        REQUIRE(out.data[i] == Catch::Approx(q.data[i] + kv.data[i]).margin(1e-5));
}

TEST_CASE("attention matches the dense reference", "[fgta]") {
    std::mt19937 rng(36);
    FeatureMap q = oracle::random_feature(rng, 8, 16, 16);
    FeatureMap kv = oracle::random_feature(rng, 8, 16, 16);
    OcclusionMask occl = oracle::random_mask(rng, 16, 16, 0.25);
    AttentionParams prm = random_attention_params(8, 2, 3, 9);
    FeatureMap got = neighborhood_cross_attention(q, kv, occl, prm);
    FeatureMap want = oracle::ref_nca(q, kv, occl, prm);
    for (size_t i = 0; i < got.data.size(); ++i)
        REQUIRE(got.data[i] == Catch::Approx(want.data[i]).margin(1e-5));
}

TEST_CASE("attention only sees keys inside the window", "[fgta]") {
    std::mt19937 rng(37);
    FeatureMap q = oracle::random_feature(rng, 4, 9, 9);
    FeatureMap kv = oracle::random_feature(rng, 4, 9, 9);
    AttentionParams prm = random_attention_params(4, 2, 3, 11);
    OcclusionMask clear(9, 9);

    FeatureMap base = neighborhood_cross_attention(q, kv, clear, prm);
    FeatureMap poked = kv;
    for (int c = 0; c < 4; ++c) poked.at(c, 8, 8) = 50.0f;  // far corner
    FeatureMap after = neighborhood_cross_attention(q, poked, clear, prm);
    // Pixel (0,0) has window rows/cols 0..1; the poke at (8,8) cannot reach it.
    for (int c = 0; c < 4; ++c)
        REQUIRE(after.at(c, 0, 0) == base.at(c, 0, 0));
    // But it does reach its own neighborhood.
    bool changed = false;
    for (int c = 0; c < 4; ++c) changed = changed || after.at(c, 8, 8) != base.at(c, 8, 8);
    REQUIRE(changed);
}

TEST_CASE("attention parameter validation", "[fgta]") {
    REQUIRE_THROWS_AS(random_attention_params(8, 3), std::invalid_argument);  // 3 !| 8
    REQUIRE_THROWS_AS(identity_attention_params(8, 2, 4), std::invalid_argument);  // even window

    std::mt19937 rng(38);
    FeatureMap q = oracle::random_feature(rng, 8, 4, 4);
    AttentionParams prm = random_attention_params(8, 2, 3, 1);
    REQUIRE_THROWS_AS(
        neighborhood_cross_attention(q, oracle::random_feature(rng, 8, 4, 5), OcclusionMask(4, 4), prm),
        std::invalid_argument);
    REQUIRE_THROWS_AS(neighborhood_cross_attention(q, q, OcclusionMask(5, 4), prm),
                      std::invalid_argument);
    REQUIRE_THROWS_AS(
        neighborhood_cross_attention(oracle::random_feature(rng, 4, 4, 4),
                                     oracle::random_feature(rng, 4, 4, 4), OcclusionMask(4, 4), prm),
        std::invalid_argument);  // params built for 8 channels
}

TEST_CASE("attention params survive a save/load round trip", "[fgta]") {
    AttentionParams prm = random_attention_params(8, 4, 5, 77);
    auto dir = std::filesystem::temp_directory_path() / "fgta_params";
    std::filesystem::create_directories(dir);
    std::string manifest = (dir / "params.json").string();
    save_attention_params(prm, manifest);
    AttentionParams back = load_attention_params(manifest);
    REQUIRE(back.channels == prm.channels);
    REQUIRE(back.heads == prm.heads);
    REQUIRE(back.window == prm.window);
    REQUIRE(back.scale == prm.scale);
    REQUIRE(back.wq == prm.wq);
    REQUIRE(back.wk == prm.wk);
    REQUIRE(back.wv == prm.wv);
    REQUIRE(back.wo == prm.wo);
    std::filesystem::remove_all(dir);
}

TEST_CASE("self-history with identity flow reproduces the current frame", "[fgta]") {
    std::mt19937 rng(39);
    FeatureMap current = oracle::random_feature(rng, 8, 8, 8);
    FlowPair still{FlowField(8, 8), FlowField(8, 8)};
    ConsistencyConfig ccfg;
    AttentionParams prm = random_attention_params(8, 2, 3, 2);

    FgtaResult r = fgta_forward(current, {current}, {still}, ccfg, prm);
    for (float m : r.mask.values) REQUIRE(m == 0.0f);
    for (size_t i = 0; i < current.data.size(); ++i)
        REQUIRE(r.f_agg.data[i] == Catch::Approx(current.data[i]).margin(1e-5));
}

TEST_CASE("fgta_forward equals its manual composition", "[fgta]") {
    std::mt19937 rng(40);
    FeatureMap current = oracle::random_feature(rng, 8, 10, 10);
    std::vector<FeatureMap> history{oracle::random_feature(rng, 8, 10, 10),
                                    oracle::random_feature(rng, 8, 10, 10)};
    std::vector<FlowPair> flows;
    for (int i = 0; i < 2; ++i)
        flows.push_back({oracle::random_flow(rng, 10, 10, 2.0f),
                         oracle::random_flow(rng, 10, 10, 2.0f)});
    ConsistencyConfig ccfg;
    AttentionParams prm = random_attention_params(8, 4, 5, 3);

    FgtaResult got = fgta_forward(current, history, flows, ccfg, prm);

    std::vector<FeatureMap> frames{current};
    std::vector<WeightMap> planes{cosine_weight(current, current)};
    std::vector<OcclusionMask> masks;
    for (int i = 0; i < 2; ++i) {
        WarpResult wr = warp(history[i], flows[i].fwd);
        planes.push_back(cosine_weight(wr.feature, current));
        frames.push_back(wr.feature);
        masks.push_back(occlusion_mask(flows[i].fwd, flows[i].bwd, ccfg));
    }
    OcclusionMask mask = accumulate_masks(masks);
    FeatureMap f_agg = aggregate(frames, normalize_weights(WeightMap::stack(planes)));
    FeatureMap f_refined = neighborhood_cross_attention(current, f_agg, mask, prm);

    REQUIRE(got.mask.values == mask.values);
    REQUIRE(got.f_agg.data == f_agg.data);
    REQUIRE(got.f_refined.data == f_refined.data);
    REQUIRE(got.frame_masks.size() == 2);
    REQUIRE(got.frame_masks[0].values == masks[0].values);
}

TEST_CASE("corrupted history loses the weight race on its band", "[fgta]") {
    std::mt19937 rng(41);
    FeatureMap current = oracle::random_feature(rng, 8, 16, 16, 0.5f, 1.5f);
    FeatureMap history = current;
    // Corrupt rows 4..7 of the history with unrelated noise.
    std::uniform_real_distribution<float> noise(-2.0f, 2.0f);
    for (int c = 0; c < 8; ++c)
        for (int y = 4; y < 8; ++y)
            for (int x = 0; x < 16; ++x) history.at(c, y, x) = noise(rng);

    WeightMap planes = WeightMap::stack(
        {cosine_weight(current, current), cosine_weight(history, current)});
    WeightMap w = normalize_weights(planes);

    int dominated = 0, band = 0;
    for (int y = 4; y < 8; ++y)
        for (int x = 0; x < 16; ++x) {
            ++band;
            if (w.at(0, y, x) > 0.5f) ++dominated;
        }
    REQUIRE(dominated >= band * 9 / 10);  // the intact current frame wins almost everywhere
    // Off the band the two frames are identical: exact 0.5 split.
    REQUIRE(w.at(0, 0, 0) == Catch::Approx(0.5).margin(1e-6));
}
