#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "covis/pipeline.hpp"

using namespace covis;

namespace {

PipelineConfig tiny_config(double rho = 0.0) {
    PipelineConfig cfg;
    cfg.c_fine = 8;
    cfg.c_coarse = 16;
    cfg.l1 = cfg.l2 = cfg.l3 = 1;
    cfg.gamma = 2;
    cfg.close_k = 3;
    cfg.window = 3;
    cfg.rho = rho;
    cfg.seed = 5;
    return cfg;
}

bool same_tensor(const Tensor& a, const Tensor& b) {
    if (a.shape != b.shape) return false;
    for (std::size_t i = 0; i < a.data.size(); ++i)
        if (a.data[i] != b.data[i]) return false;
    return true;
}

bool same_store(const ParamStore& a, const ParamStore& b) {
    if (a.params.size() != b.params.size()) return false;
    for (std::size_t i = 0; i < a.params.size(); ++i) {
        if (a.params[i].first != b.params[i].first) return false;
        if (!same_tensor(a.params[i].second, b.params[i].second)) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("config defaults match the published settings") {
    PipelineConfig cfg;
    CHECK(cfg.c_fine == 128);
    CHECK(cfg.c_coarse == 256);
    CHECK(cfg.l1 == 2);
    CHECK(cfg.l2 == 2);
    CHECK(cfg.l3 == 2);
    CHECK(cfg.gamma == 4);
    CHECK(cfg.close_k == 10);
    CHECK(cfg.rho == 0.2);
    CHECK(cfg.window == 5);
    CHECK(cfg.kappa == 0.01);
    CHECK(cfg.eta == 8.0);
    CHECK(cfg.loss.a1 == 1.0);
    CHECK(cfg.loss.a2 == 1.0);
    CHECK(cfg.loss.a3 == 0.2);
    CHECK(cfg.loss.a4 == 0.2);
    CHECK(cfg.pos_encoding);
    CHECK_NOTHROW(check_config(cfg));
}

TEST_CASE("config round-trips through its text form losslessly") {
    PipelineConfig cfg = tiny_config(0.35);
    cfg.kappa = 0.125;
    cfg.eta = 6.5;
    cfg.loss = {0.5, 2.0, 0.1, 0.3};
    cfg.pos_encoding = false;
    cfg.seed = 321;
    Dict d = parse_dict(render_dict(config_to_dict(cfg)), "roundtrip");
    PipelineConfig back = config_from_dict(d);
    CHECK(back.c_fine == cfg.c_fine);
    CHECK(back.c_coarse == cfg.c_coarse);
    CHECK(back.l1 == cfg.l1);
    CHECK(back.l2 == cfg.l2);
    CHECK(back.l3 == cfg.l3);
    CHECK(back.gamma == cfg.gamma);
    CHECK(back.close_k == cfg.close_k);
    CHECK(back.rho == cfg.rho);
    CHECK(back.window == cfg.window);
    CHECK(back.kappa == cfg.kappa);
    CHECK(back.eta == cfg.eta);
    CHECK(back.loss.a1 == cfg.loss.a1);
    CHECK(back.loss.a2 == cfg.loss.a2);
    CHECK(back.loss.a3 == cfg.loss.a3);
    CHECK(back.loss.a4 == cfg.loss.a4);
    CHECK(back.pos_encoding == cfg.pos_encoding);
    CHECK(back.seed == cfg.seed);
}

TEST_CASE("unknown config keys are rejected") {
    Dict d = config_to_dict(PipelineConfig{});
    d.set_i("mystery", 3);
    CHECK_THROWS_AS(config_from_dict(d), error);
}

TEST_CASE("malformed configs are rejected") {
    PipelineConfig cfg = tiny_config();
    cfg.rho = 1.5;
    CHECK_THROWS_AS(check_config(cfg), invariant_error);
    cfg = tiny_config();
    cfg.window = 4;
    CHECK_THROWS_AS(check_config(cfg), invariant_error);
    cfg = tiny_config();
    cfg.kappa = 0.0;
    CHECK_THROWS_AS(check_config(cfg), invariant_error);
    cfg = tiny_config();
    cfg.c_coarse = 18;
    CHECK_THROWS_AS(check_config(cfg), invariant_error);
    Dict d = config_to_dict(PipelineConfig{});
    d.set_list("alpha", {1.0, 2.0});
    CHECK_THROWS_AS(config_from_dict(d), error);
}

TEST_CASE("identical images run through and matches stay inside both masks") {
    PipelineConfig cfg = tiny_config();
    ParamStore store = make_weights(cfg);
    SynthPair pair = synth_translation_pair(32, 0, 0, 7);
    MatchResult r = forward(pair.a, pair.a, store, cfg);
    CHECK(r.gh == 4);
    CHECK(r.gw == 4);
    CHECK(r.cm_a.count() > 0);
    CHECK(r.cm_b.count() > 0);
    CHECK(r.pm_a.shape == std::vector<std::int64_t>{4, 4});
    CHECK(r.g.shape == std::vector<std::int64_t>{16, 16});
    CHECK(r.timing.size() == 6);
    for (std::int64_t i = 0; i < r.fine.pa.dim(0); ++i) {
        std::int64_t ca = static_cast<std::int64_t>(r.fine.pa.at(i, 0) / 8.0);
        std::int64_t ra = static_cast<std::int64_t>(r.fine.pa.at(i, 1) / 8.0);
        std::int64_t cb = static_cast<std::int64_t>(r.fine.pb.at(i, 0) / 8.0);
        std::int64_t rb = static_cast<std::int64_t>(r.fine.pb.at(i, 1) / 8.0);
        CHECK(r.cm_a.at(ra, ca) == 1);
        CHECK(r.cm_b.at(rb, cb) == 1);
    }
    CHECK(r.fine.pa.dim(0) + r.dropped == r.coarse.count() + r.dropped);
}

TEST_CASE("full threshold empties the match set without error") {
    PipelineConfig cfg = tiny_config(1.0);
    ParamStore store = make_weights(cfg);
    SynthPair pair = synth_translation_pair(32, 4, 0, 11);
    MatchResult r = forward(pair.a, pair.b, store, cfg);
    CHECK(r.coarse.count() == 0);
    CHECK(r.fine.pa.dim(0) == 0);
    CHECK(r.theta.dim(0) == 0);
    CHECK(r.dropped == 0);
}

TEST_CASE("two forward passes agree bit for bit") {
    PipelineConfig cfg = tiny_config();
    ParamStore store = make_weights(cfg);
    SynthPair pair = synth_translation_pair(32, 3, 1, 13);
    MatchResult r1 = forward(pair.a, pair.b, store, cfg);
    MatchResult r2 = forward(pair.a, pair.b, store, cfg);
    CHECK(same_tensor(r1.fine.pa, r2.fine.pa));
    CHECK(same_tensor(r1.fine.pb, r2.fine.pb));
    CHECK(same_tensor(r1.theta, r2.theta));
    CHECK(same_tensor(r1.g, r2.g));
    CHECK(same_tensor(r1.g_oa, r2.g_oa));
    CHECK(r1.cm_a.cells == r2.cm_a.cells);
    CHECK(r1.cm_b.cells == r2.cm_b.cells);
    CHECK(r1.fine.conf == r2.fine.conf);
    CHECK(r1.idx_a == r2.idx_a);
    CHECK(r1.idx_b == r2.idx_b);
}

TEST_CASE("refined points differ from coarse points by exactly theta") {
    PipelineConfig cfg = tiny_config();
    ParamStore store = make_weights(cfg);
    SynthPair pair = synth_translation_pair(32, 2, 2, 17);
    MatchResult r = forward(pair.a, pair.b, store, cfg);
    REQUIRE(r.fine.pa.dim(0) > 0);
    for (std::int64_t i = 0; i < r.fine.pa.dim(0); ++i) {
        if (r.fine.clamped[static_cast<std::size_t>(i)]) continue;
        CHECK(r.fine.pb.at(i, 0) == r.coarse.pb.at(i, 0) + r.theta.at(i, 0));
        CHECK(r.fine.pb.at(i, 1) == r.coarse.pb.at(i, 1) + r.theta.at(i, 1));
        CHECK(r.fine.pa.at(i, 0) == r.coarse.pa.at(i, 0));
        CHECK(r.fine.pa.at(i, 1) == r.coarse.pa.at(i, 1));
    }
}

TEST_CASE("eight pixel shift pair labels a shifted permutation") {
    SynthPair pair = synth_translation_pair(32, 8, 0, 23);
    KeypointSet kps = grid_keypoints(32, 32);
    auto [gt, lc] = make_gt_and_confidence(kps, kps, pair.frame_a, pair.frame_b, 0.01);
    Tensor expected({16, 16});
    for (std::int64_t r = 0; r < 4; ++r)
        for (std::int64_t c = 0; c + 1 < 4; ++c) expected.at(r * 4 + c, r * 4 + c + 1) = 1.0;
    CHECK(same_tensor(gt.labels, expected));
    (void)lc;
}

TEST_CASE("identity pair labels the identity matching") {
    SynthPair pair = synth_translation_pair(32, 0, 0, 29);
    KeypointSet kps = grid_keypoints(32, 32);
    auto [gt, lc] = make_gt_and_confidence(kps, kps, pair.frame_a, pair.frame_b, 0.01);
    for (std::int64_t i = 0; i < 16; ++i)
        for (std::int64_t j = 0; j < 16; ++j)
            CHECK(gt.labels.at(i, j) == (i == j ? 1.0 : 0.0));
    (void)lc;
}

TEST_CASE("pair frames and homography describe the same map") {
    for (SynthPair pair : {synth_translation_pair(32, 3.5, -2.25, 31),
                           synth_rotation_pair(32, 0.12, 37)}) {
        KeypointSet kps = grid_keypoints(32, 32);
        WarpResult wr = warp_with_depth(kps.coords, pair.frame_a, pair.frame_b);
        for (std::int64_t i = 0; i < kps.coords.dim(0); ++i) {
            if (!wr.valid[static_cast<std::size_t>(i)]) continue;
            auto [hx, hy] = pair.h.apply(kps.coords.at(i, 0), kps.coords.at(i, 1));
            CHECK(wr.points.at(i, 0) == doctest::Approx(hx).epsilon(1e-9));
            CHECK(wr.points.at(i, 1) == doctest::Approx(hy).epsilon(1e-9));
        }
    }
}

TEST_CASE("synthetic images stay inside the gray range") {
    SynthPair pair = synth_rotation_pair(32, -0.1, 41);
    for (const Image* img : {&pair.a, &pair.b}) {
        for (double v : img->pix) {
            CHECK(v >= 0.0);
            CHECK(v <= 1.0);
        }
    }
    CHECK_THROWS_AS(synth_translation_pair(30, 1, 0, 1), error);
}

TEST_CASE("same seed reproduces the dataset byte for byte") {
    std::vector<SynthPair> d1 = synth_dataset(4, 32, 99);
    std::vector<SynthPair> d2 = synth_dataset(4, 32, 99);
    REQUIRE(d1.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(d1[i].a.pix == d2[i].a.pix);
        CHECK(d1[i].b.pix == d2[i].b.pix);
        CHECK(same_tensor(d1[i].frame_b.k, d2[i].frame_b.k));
        CHECK(same_tensor(d1[i].frame_b.r, d2[i].frame_b.r));
        CHECK(same_tensor(d1[i].frame_b.t, d2[i].frame_b.t));
        CHECK(d1[i].frame_a.depth.depth == d2[i].frame_a.depth.depth);
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c) CHECK(d1[i].h.m[r][c] == d2[i].h.m[r][c]);
    }
}

TEST_CASE("zero learning rate leaves the weights untouched") {
    PipelineConfig cfg = tiny_config();
    std::vector<SynthPair> data{synth_translation_pair(32, 4, 0, 3)};
    TrainResult res = train_toy(data, cfg, 1, 0.0);
    CHECK(res.curve.size() == 1);
    CHECK(same_store(res.weights, make_weights(cfg)));
}

TEST_CASE("training twice with one seed repeats the loss curve") {
    PipelineConfig cfg = tiny_config();
    std::vector<SynthPair> data = synth_dataset(2, 32, 55);
    TrainResult r1 = train_toy(data, cfg, 3, 1e-3);
    TrainResult r2 = train_toy(data, cfg, 3, 1e-3);
    REQUIRE(r1.curve.size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(r1.curve[i].total == r2.curve[i].total);
        CHECK(r1.curve[i].entire == r2.curve[i].entire);
        CHECK(r1.curve[i].overlap == r2.curve[i].overlap);
        CHECK(r1.curve[i].offset == r2.curve[i].offset);
        CHECK(r1.curve[i].confidence == r2.curve[i].confidence);
    }
    CHECK(same_store(r1.weights, r2.weights));
}

TEST_CASE("short overfit run lowers the total loss") {
    PipelineConfig cfg = tiny_config();
    std::vector<SynthPair> data{synth_translation_pair(32, 8, 0, 61)};
    TrainResult res = train_toy(data, cfg, 40, 2e-3);
    REQUIRE(res.curve.size() == 40);
    CHECK(res.curve.back().total < res.curve.front().total);
}

TEST_CASE("degenerate training inputs are rejected") {
    PipelineConfig cfg = tiny_config();
    CHECK_THROWS_AS(train_toy({}, cfg, 1, 1e-3), error);
    std::vector<SynthPair> data{synth_translation_pair(32, 1, 0, 2)};
    CHECK_THROWS_AS(train_toy(data, cfg, 0, 1e-3), error);
}

TEST_CASE("match overlay shows both panels") {
    Image a = Image::blank(32, 32);
    Image b = Image::blank(32, 32);
    a.at(5, 5) = 1.0;
    FineMatchSet fm;
    fm.pa = Tensor({1, 2});
    fm.pb = Tensor({1, 2});
    fm.pa.at(0, 0) = 5;
    fm.pa.at(0, 1) = 5;
    fm.pb.at(0, 0) = 9;
    fm.pb.at(0, 1) = 7;
    fm.conf.push_back(1.0);
    fm.clamped.push_back(false);
    RgbImage canvas = render_matches(a, b, fm);
    CHECK(canvas.w == 64);
    CHECK(canvas.h == 32);
    std::size_t at99 = static_cast<std::size_t>((7 * 64 + 9 + 32) * 3);
    CHECK(canvas.data[at99 + 2] == 255);
}
