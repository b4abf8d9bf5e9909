#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>

#include "covis/attention.hpp"
#include "doctest.h"

using namespace covis;

namespace {

Tensor rnd(std::vector<std::int64_t> shape, Rng& r, double sd = 0.5) {
    return init_normal(std::move(shape), r, sd);
}

EncoderLayerVars make_layer(Tape& t, std::int64_t c, std::int64_t gamma, bool dw, Rng& r,
                            double branch_scale) {
    EncoderLayerVars p;
    std::int64_t hidden = gamma * c;
    p.wq = t.constant(rnd({c, c}, r));
    p.wk = t.constant(rnd({c, c}, r));
    p.wv = t.constant(rnd({c, c}, r));
    p.exp_w = t.constant(rnd({2 * c, hidden}, r));
    p.exp_b = t.constant(rnd({hidden}, r, 0.1));
    if (dw) {
        p.dw_k = t.constant(rnd({hidden, 3, 3}, r, 0.3));
        p.dw_b = t.constant(rnd({hidden}, r, 0.1));
    }
    if (branch_scale == 0.0) {
        p.con_w = t.constant(Tensor::zeros({hidden, c}));
        p.con_b = t.constant(Tensor::zeros({c}));
    } else {
        p.con_w = t.constant(rnd({hidden, c}, r, branch_scale));
        p.con_b = t.constant(rnd({c}, r, 0.1));
    }
    p.use_depthwise = dw;
    return p;
}

}  // namespace

TEST_CASE("linear attention with a single key is rank one") {
    Rng r(101);
    Tape t;
    std::int64_t c = 6;
    EncoderLayerVars p = make_layer(t, c, 2, false, r, 0.5);
    Var u = t.constant(rnd({4, c}, r));
    Var rv = t.constant(rnd({1, c}, r));
    Var m = linear_attention(t, u, rv, p);

    // oracle: row i = phi(q_i) . (phi(k1)^T v1)
    Var q = t.elu_plus_one(t.matmul(u, p.wq));
    Var k1 = t.elu_plus_one(t.matmul(rv, p.wk));
    Var v1 = t.matmul(rv, p.wv);
    for (std::int64_t i = 0; i < 4; ++i)
        for (std::int64_t j = 0; j < c; ++j) {
            double dot = 0.0;
            for (std::int64_t l = 0; l < c; ++l)
                dot += t.val(q).at(i, l) * t.val(k1).at(0, l) * t.val(v1).at(0, j);
            CHECK(t.val(m).at(i, j) == doctest::Approx(dot).epsilon(1e-10));
        }
}

TEST_CASE("linear attention of zero features is zero") {
    Rng r(102);
    Tape t;
    std::int64_t c = 4;
    EncoderLayerVars p = make_layer(t, c, 2, false, r, 0.5);
    // identity projections, zero inputs
    Tensor eye({c, c});
    for (std::int64_t i = 0; i < c; ++i) eye.at(i, i) = 1.0;
    p.wq = t.constant(eye);
    p.wk = t.constant(eye);
    p.wv = t.constant(eye);
    Var z = t.constant(Tensor::zeros({5, c}));
    Var m = linear_attention(t, z, z, p);
    for (std::int64_t i = 0; i < t.val(m).numel(); ++i) CHECK(t.val(m).at(i) == 0.0);
}

TEST_CASE("linear attention equals the dense-association oracle") {
    Rng r(103);
    Tape t;
    std::int64_t c = 8;
    EncoderLayerVars p = make_layer(t, c, 2, false, r, 0.5);
    Var u = t.constant(rnd({6, c}, r));
    Var rv = t.constant(rnd({5, c}, r));
    Var m = linear_attention(t, u, rv, p);
    // (phi(Q) phi(K)^T) V with the quadratic association order
    Var fq = t.elu_plus_one(t.matmul(u, p.wq));
    Var fk = t.elu_plus_one(t.matmul(rv, p.wk));
    Var v = t.matmul(rv, p.wv);
    Var dense = t.matmul(t.matmul(fq, t.transpose(fk)), v);
    CHECK(max_abs_diff(t.val(m), t.val(dense)) < 1e-10);
}

TEST_CASE("linear attention permutation behavior") {
    Rng r(104);
    Tape t;
    std::int64_t c = 5;
    EncoderLayerVars p = make_layer(t, c, 2, false, r, 0.5);
    Var u = t.constant(rnd({4, c}, r));
    Var rv = t.constant(rnd({6, c}, r));
    Var m = linear_attention(t, u, rv, p);

    Var r_perm = t.gather_rows(rv, {5, 3, 0, 1, 4, 2});
    Var m_rperm = linear_attention(t, u, r_perm, p);
    CHECK(max_abs_diff(t.val(m), t.val(m_rperm)) < 1e-12);

    std::vector<std::int64_t> uperm = {2, 0, 3, 1};
    Var u_perm = t.gather_rows(u, uperm);
    Var m_uperm = linear_attention(t, u_perm, rv, p);
    for (std::int64_t i = 0; i < 4; ++i)
        for (std::int64_t j = 0; j < c; ++j)
            CHECK(t.val(m_uperm).at(i, j) ==
                  doctest::Approx(t.val(m).at(uperm[static_cast<std::size_t>(i)], j))
                      .epsilon(1e-12));
}

TEST_CASE("ffn zero branch is the identity") {
    Rng r(105);
    Tape t;
    EncoderLayerVars p = make_layer(t, 4, 2, true, r, 0.0);
    FeatureSequence u{t.constant(rnd({6, 4}, r)), 2, 3};
    Var m = t.constant(rnd({6, 4}, r));
    FeatureSequence out = ffn(t, u, m, p);
    CHECK(max_abs_diff(t.val(out.feat), t.val(u.feat)) == 0.0);
    CHECK(out.gh == 2);
    CHECK(out.gw == 3);
}

TEST_CASE("ffn with delta depthwise kernel equals the no-depthwise variant") {
    Rng r(106);
    Tape t;
    std::int64_t c = 4, gamma = 2;
    EncoderLayerVars p = make_layer(t, c, gamma, true, r, 0.5);
    p.dw_k = t.constant(init_delta_dw(gamma * c));
    p.dw_b = t.constant(Tensor::zeros({gamma * c}));
    EncoderLayerVars q = p;
    q.use_depthwise = false;
    FeatureSequence u{t.constant(rnd({4, c}, r)), 2, 2};
    Var m = t.constant(rnd({4, c}, r));
    FeatureSequence with_dw = ffn(t, u, m, p);
    FeatureSequence without = ffn(t, u, m, q);
    CHECK(max_abs_diff(t.val(with_dw.feat), t.val(without.feat)) < 1e-14);
}

TEST_CASE("ffn demands a grid when depthwise is on") {
    Rng r(107);
    Tape t;
    EncoderLayerVars p = make_layer(t, 4, 2, true, r, 0.5);
    FeatureSequence u{t.constant(rnd({6, 4}, r)), 0, 0};
    Var m = t.constant(rnd({6, 4}, r));
    CHECK_THROWS_AS(ffn(t, u, m, p), error);
}

TEST_CASE("tel equals hand-chained attention plus ffn") {
    Rng r(108);
    Tape t;
    EncoderLayerVars p = make_layer(t, 4, 2, true, r, 0.5);
    FeatureSequence u{t.constant(rnd({6, 4}, r)), 2, 3};
    FeatureSequence rv{t.constant(rnd({5, 4}, r)), 0, 0};
    FeatureSequence out = tel(t, u, rv, p);
    FeatureSequence chained = ffn(t, u, linear_attention(t, u.feat, rv.feat, p), p);
    CHECK(max_abs_diff(t.val(out.feat), t.val(chained.feat)) == 0.0);
}

TEST_CASE("eitm with no blocks or zero branches is the identity") {
    Rng r(109);
    Tape t;
    FeatureSequence fa{t.constant(rnd({6, 4}, r)), 2, 3};
    FeatureSequence fb{t.constant(rnd({6, 4}, r)), 2, 3};
    auto [oa, ob] = eitm(t, fa, fb, {});
    CHECK(max_abs_diff(t.val(oa.feat), t.val(fa.feat)) == 0.0);
    CHECK(max_abs_diff(t.val(ob.feat), t.val(fb.feat)) == 0.0);

    std::vector<TelBlockVars> blocks;
    for (int l = 0; l < 2; ++l) {
        TelBlockVars blk{make_layer(t, 4, 2, true, r, 0.0), make_layer(t, 4, 2, true, r, 0.0),
                         make_layer(t, 4, 2, true, r, 0.0), make_layer(t, 4, 2, true, r, 0.0)};
        blocks.push_back(blk);
    }
    auto [za, zb] = eitm(t, fa, fb, blocks);
    CHECK(max_abs_diff(t.val(za.feat), t.val(fa.feat)) == 0.0);
    CHECK(max_abs_diff(t.val(zb.feat), t.val(fb.feat)) == 0.0);
}

TEST_CASE("eitm fourth update consumes the already-updated A") {
    Rng r(110);
    auto run = [&](double bump) {
        Tape t;
        Rng r2(110);
        TelBlockVars blk{make_layer(t, 4, 2, false, r2, 0.4), make_layer(t, 4, 2, false, r2, 0.4),
                         make_layer(t, 4, 2, false, r2, 0.4), make_layer(t, 4, 2, false, r2, 0.4)};
        if (bump != 0.0) {
            Tensor w = t.val(blk.cross_a.con_w);
            w.at(0, 0) += bump;
            blk.cross_a.con_w = t.constant(w);
        }
        Rng r3(111);
        FeatureSequence fa{t.constant(rnd({4, 4}, r3)), 0, 0};
        FeatureSequence fb{t.constant(rnd({4, 4}, r3)), 0, 0};
        auto [oa, ob] = eitm(t, fa, fb, {blk});
        return std::make_pair(t.val(oa.feat), t.val(ob.feat));
    };
    auto base = run(0.0);
    auto bumped = run(0.5);
    // perturbing A's cross layer must reach B's output through the 4th update
    CHECK(max_abs_diff(base.first, bumped.first) > 1e-6);
    CHECK(max_abs_diff(base.second, bumped.second) > 1e-9);
}

TEST_CASE("eitm is deterministic") {
    Rng r(112);
    auto run = [&]() {
        Tape t;
        Rng r2(112);
        TelBlockVars blk{make_layer(t, 4, 2, true, r2, 0.4), make_layer(t, 4, 2, true, r2, 0.4),
                         make_layer(t, 4, 2, true, r2, 0.4), make_layer(t, 4, 2, true, r2, 0.4)};
        FeatureSequence fa{t.constant(init_normal({6, 4}, r2, 1.0)), 2, 3};
        FeatureSequence fb{t.constant(init_normal({6, 4}, r2, 1.0)), 2, 3};
        auto [oa, ob] = eitm(t, fa, fb, {blk});
        return std::make_pair(t.val(oa.feat), t.val(ob.feat));
    };
    auto a = run();
    auto b = run();
    CHECK(max_abs_diff(a.first, b.first) == 0.0);
    CHECK(max_abs_diff(a.second, b.second) == 0.0);
}

TEST_CASE("oatm rejects grids and depthwise, matches eitm otherwise") {
    Rng r(113);
    Tape t;
    Rng rp(113);
    TelBlockVars blk{make_layer(t, 4, 2, false, rp, 0.4), make_layer(t, 4, 2, false, rp, 0.4),
                     make_layer(t, 4, 2, false, rp, 0.4), make_layer(t, 4, 2, false, rp, 0.4)};
    FeatureSequence fa{t.constant(rnd({5, 4}, r)), 0, 0};
    FeatureSequence fb{t.constant(rnd({3, 4}, r)), 0, 0};
    auto [oa, ob] = oatm(t, fa, fb, {blk});
    auto [ea, eb] = eitm(t, fa, fb, {blk});
    CHECK(max_abs_diff(t.val(oa.feat), t.val(ea.feat)) == 0.0);
    CHECK(max_abs_diff(t.val(ob.feat), t.val(eb.feat)) == 0.0);

    FeatureSequence grid{t.constant(rnd({6, 4}, r)), 2, 3};
    CHECK_THROWS_AS(oatm(t, grid, fb, {blk}), error);
    TelBlockVars bad = blk;
    bad.cross_b.use_depthwise = true;
    CHECK_THROWS_AS(oatm(t, fa, fb, {bad}), error);
}

TEST_CASE("registered layers start as the identity") {
    ParamStore store;
    Rng r(114);
    register_encoder_layer(store, "enc.l0.self_a", 8, 4, true, r);
    Tape t;
    TapeBinder bind{t, store, false, {}};
    EncoderLayerVars p = bind_encoder_layer(bind, "enc.l0.self_a", true);
    Rng rf(115);
    FeatureSequence u{t.constant(init_normal({6, 8}, rf, 1.0)), 2, 3};
    FeatureSequence out = tel(t, u, u, p);
    CHECK(max_abs_diff(t.val(out.feat), t.val(u.feat)) == 0.0);
    CHECK(bind.bound.size() == 9);
}

TEST_CASE("orthogonal init produces orthogonal columns") {
    Rng r(116);
    Tensor m = init_orthogonal(6, r, 0.1);
    for (std::int64_t a = 0; a < 6; ++a)
        for (std::int64_t b = 0; b < 6; ++b) {
            double dot = 0.0;
            for (std::int64_t i = 0; i < 6; ++i) dot += m.at(i, a) * m.at(i, b);
            CHECK(dot == doctest::Approx(a == b ? 0.01 : 0.0).epsilon(1e-9));
        }
}

TEST_CASE("positional encoding is bounded and localized") {
    Tensor pe = positional_encoding(3, 4, 8);
    CHECK(pe.shape == std::vector<std::int64_t>{12, 8});
    for (std::int64_t i = 0; i < pe.numel(); ++i) {
        CHECK(pe.at(i) <= 1.0);
        CHECK(pe.at(i) >= -1.0);
    }
    // distinct grid cells get distinct codes
    double d = 0.0;
    for (std::int64_t c = 0; c < 8; ++c) d = std::max(d, std::abs(pe.at(0, c) - pe.at(5, c)));
    CHECK(d > 0.1);
    CHECK_THROWS_AS(positional_encoding(2, 2, 6), error);
}

TEST_CASE("one-block eitm gradient matches finite differences") {
    Rng r(117);
    std::int64_t c = 3, gamma = 2, hidden = gamma * c;
    // 4 layers x (wq wk wv exp_w exp_b con_w con_b) + two feature maps
    std::vector<Tensor> inputs;
    for (int l = 0; l < 4; ++l) {
        inputs.push_back(rnd({c, c}, r));
        inputs.push_back(rnd({c, c}, r));
        inputs.push_back(rnd({c, c}, r));
        inputs.push_back(rnd({2 * c, hidden}, r));
        inputs.push_back(rnd({hidden}, r, 0.1));
        inputs.push_back(rnd({hidden, c}, r, 0.3));
        inputs.push_back(rnd({c}, r, 0.1));
    }
    inputs.push_back(rnd({4, c}, r, 1.0));
    inputs.push_back(rnd({4, c}, r, 1.0));

    auto build = [c](Tape& t, const std::vector<Var>& v) {
        auto layer = [&](int l) {
            EncoderLayerVars p;
            p.wq = v[static_cast<std::size_t>(7 * l)];
            p.wk = v[static_cast<std::size_t>(7 * l + 1)];
            p.wv = v[static_cast<std::size_t>(7 * l + 2)];
            p.exp_w = v[static_cast<std::size_t>(7 * l + 3)];
            p.exp_b = v[static_cast<std::size_t>(7 * l + 4)];
            p.con_w = v[static_cast<std::size_t>(7 * l + 5)];
            p.con_b = v[static_cast<std::size_t>(7 * l + 6)];
            p.use_depthwise = false;
            return p;
        };
        TelBlockVars blk{layer(0), layer(1), layer(2), layer(3)};
        FeatureSequence fa{v[28], 0, 0};
        FeatureSequence fb{v[29], 0, 0};
        auto [oa, ob] = eitm(t, fa, fb, {blk});
        (void)c;
        return t.add(t.mean(t.mul(oa.feat, oa.feat)), t.mean(t.mul(ob.feat, ob.feat)));
    };
    // eps sits at the central-difference sweet spot for this loss's magnitude
    CHECK(max_grad_rel_err(inputs, build, 1e-4) < 1e-4);
}
