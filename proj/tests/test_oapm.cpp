#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "covis/backbone.hpp"
#include "covis/oapm.hpp"

using namespace covis;

namespace {

Tensor random_tensor(Rng& rng, std::vector<std::int64_t> shape, double lo = -1.0,
                     double hi = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

// plain-loop dual softmax, independent of the tape implementation
Tensor dual_softmax_oracle(const Tensor& s) {
    std::int64_t n = s.dim(0), m = s.dim(1);
    Tensor row({n, m}), col({n, m}), g({n, m});
    for (std::int64_t i = 0; i < n; ++i) {
        double mx = s.at(i, 0);
        for (std::int64_t j = 0; j < m; ++j) mx = std::max(mx, s.at(i, j));
        double z = 0.0;
        for (std::int64_t j = 0; j < m; ++j) z += std::exp(s.at(i, j) - mx);
        for (std::int64_t j = 0; j < m; ++j) row.at(i, j) = std::exp(s.at(i, j) - mx) / z;
    }
    for (std::int64_t j = 0; j < m; ++j) {
        double mx = s.at(0, j);
        for (std::int64_t i = 0; i < n; ++i) mx = std::max(mx, s.at(i, j));
        double z = 0.0;
        for (std::int64_t i = 0; i < n; ++i) z += std::exp(s.at(i, j) - mx);
        for (std::int64_t i = 0; i < n; ++i) col.at(i, j) = std::exp(s.at(i, j) - mx) / z;
    }
    for (std::int64_t i = 0; i < n; ++i)
        for (std::int64_t j = 0; j < m; ++j) g.at(i, j) = row.at(i, j) * col.at(i, j);
    return g;
}

BinaryGrid grid_from(std::int64_t gh, std::int64_t gw, std::initializer_list<std::int64_t> on) {
    BinaryGrid g = BinaryGrid::blank(gh, gw);
    for (auto i : on) g.cells[static_cast<std::size_t>(i)] = 1;
    return g;
}

BinaryGrid random_grid(Rng& rng, std::int64_t gh, std::int64_t gw, double density) {
    BinaryGrid g = BinaryGrid::blank(gh, gw);
    for (auto& c : g.cells) c = rng.uniform() < density ? 1 : 0;
    return g;
}

std::int64_t component_count(const BinaryGrid& g) {
    std::vector<std::uint8_t> seen(g.cells.size(), 0);
    std::int64_t comps = 0;
    for (std::int64_t s = 0; s < g.gh * g.gw; ++s) {
        if (!g.cells[static_cast<std::size_t>(s)] || seen[static_cast<std::size_t>(s)]) continue;
        ++comps;
        std::vector<std::int64_t> stack{s};
        seen[static_cast<std::size_t>(s)] = 1;
        while (!stack.empty()) {
            std::int64_t v = stack.back();
            stack.pop_back();
            std::int64_t r = v / g.gw, c = v % g.gw;
            for (auto [dr, dc] : {std::pair<int, int>{-1, 0}, {1, 0}, {0, -1}, {0, 1}}) {
                std::int64_t rr = r + dr, cc = c + dc;
                if (rr < 0 || rr >= g.gh || cc < 0 || cc >= g.gw) continue;
                std::size_t i = static_cast<std::size_t>(rr * g.gw + cc);
                if (g.cells[i] && !seen[i]) {
                    seen[i] = 1;
                    stack.push_back(rr * g.gw + cc);
                }
            }
        }
    }
    return comps;
}

std::int64_t hole_count(const BinaryGrid& g) {
    std::vector<std::uint8_t> reach(g.cells.size(), 0);
    std::vector<std::int64_t> stack;
    auto push = [&](std::int64_t r, std::int64_t c) {
        if (r < 0 || r >= g.gh || c < 0 || c >= g.gw) return;
        std::size_t i = static_cast<std::size_t>(r * g.gw + c);
        if (reach[i] || g.cells[i]) return;
        reach[i] = 1;
        stack.push_back(r * g.gw + c);
    };
    for (std::int64_t r = 0; r < g.gh; ++r) {
        push(r, 0);
        push(r, g.gw - 1);
    }
    for (std::int64_t c = 0; c < g.gw; ++c) {
        push(0, c);
        push(g.gh - 1, c);
    }
    while (!stack.empty()) {
        std::int64_t v = stack.back();
        stack.pop_back();
        push(v / g.gw - 1, v % g.gw);
        push(v / g.gw + 1, v % g.gw);
        push(v / g.gw, v % g.gw - 1);
        push(v / g.gw, v % g.gw + 1);
    }
    std::int64_t holes = 0;
    for (std::size_t i = 0; i < g.cells.size(); ++i)
        if (!g.cells[i] && !reach[i]) ++holes;
    return holes;
}

}  // namespace

TEST_CASE("single-cell assignment is certain") {
    Tape t;
    Var fa = t.constant(Tensor::from2d({{0.37}}));
    Var fb = t.constant(Tensor::from2d({{-2.1}}));
    Assignment a = score_and_assign(t, fa, fb);
    CHECK(t.val(a.s).at(0, 0) == doctest::Approx(0.37 * -2.1).epsilon(1e-15));
    CHECK(t.val(a.g).at(0, 0) == 1.0);
}

TEST_CASE("strongly diagonal scores saturate the assignment") {
    Tape t;
    double c = 100.0;
    double r = std::sqrt(c);
    Var fa = t.constant(Tensor::from2d({{r, 0.0}, {0.0, r}}));
    Var fb = t.constant(Tensor::from2d({{r, 0.0}, {0.0, r}}));
    Assignment a = score_and_assign(t, fa, fb);
    const Tensor& g = t.val(a.g);
    CHECK(std::abs(g.at(0, 0) - 1.0) < 1e-12);
    CHECK(std::abs(g.at(1, 1) - 1.0) < 1e-12);
    CHECK(g.at(0, 1) < 1e-12);
    CHECK(g.at(1, 0) < 1e-12);
}

TEST_CASE("assignment equals the two-softmax oracle") {
    Tape t;
    Var fa = t.constant(Tensor::from2d({{2.0, 0.0}, {0.0, 1.0}}));
    Var fb = t.constant(Tensor::from2d({{1.0, 0.0}, {0.0, 1.0}}));
    Assignment a = score_and_assign(t, fa, fb);
    CHECK(max_abs_diff(t.val(a.s), Tensor::from2d({{2.0, 0.0}, {0.0, 1.0}})) == 0.0);
    Tensor oracle = dual_softmax_oracle(t.val(a.s));
    CHECK(max_abs_diff(t.val(a.g), oracle) < 1e-15);
}

TEST_CASE("assignment stays below both softmax factors") {
    Rng rng(7);
    for (int rep = 0; rep < 100; ++rep) {
        Tape t;
        std::int64_t n = 2 + rep % 5;
        Var fa = t.constant(random_tensor(rng, {n, 4}, -2.0, 2.0));
        Var fb = t.constant(random_tensor(rng, {n, 4}, -2.0, 2.0));
        Assignment a = score_and_assign(t, fa, fb);
        Tensor row = t.val(t.softmax(a.s, 1)), col = t.val(t.softmax(a.s, 0));
        const Tensor& g = t.val(a.g);
        for (std::int64_t i = 0; i < n; ++i) {
            double rowsum = 0.0;
            for (std::int64_t j = 0; j < n; ++j) {
                CHECK(g.at(i, j) >= 0.0);
                CHECK(g.at(i, j) <= std::min(row.at(i, j), col.at(i, j)) + 1e-15);
                rowsum += g.at(i, j);
            }
            CHECK(rowsum <= 1.0 + 1e-12);
        }
    }
}

TEST_CASE("assignment rejects mismatched descriptors") {
    Tape t;
    Var fa = t.constant(Tensor({2, 4}));
    Var fb = t.constant(Tensor({2, 3}));
    CHECK_THROWS_AS(score_and_assign(t, fa, fb), dim_error);
}

TEST_CASE("assignment gradients check out") {
    Rng rng(11);
    std::vector<Tensor> inputs{random_tensor(rng, {3, 4}), random_tensor(rng, {3, 4})};
    double err = max_grad_rel_err(inputs, [](Tape& t, const std::vector<Var>& in) {
        Assignment a = score_and_assign(t, in[0], in[1]);
        return t.mean(a.g);
    });
    CHECK(err < 1e-4);
}

TEST_CASE("permutation assignment gives all-ones maps") {
    Tape t;
    Tensor eye({4, 4});
    for (std::int64_t i = 0; i < 4; ++i) eye.at(i, i) = 1.0;
    Var g = t.constant(eye);
    auto [pa, pb] = probability_maps(t, g);
    for (std::int64_t i = 0; i < 4; ++i) {
        CHECK(t.val(pa).at(i) == 1.0);
        CHECK(t.val(pb).at(i) == 1.0);
    }
}

TEST_CASE("constant assignment gives constant maps") {
    Tape t;
    Var g = t.constant(Tensor::full({3, 3}, 0.17));
    auto [pa, pb] = probability_maps(t, g);
    for (std::int64_t i = 0; i < 3; ++i) {
        CHECK(t.val(pa).at(i) == 0.17);
        CHECK(t.val(pb).at(i) == 0.17);
    }
}

TEST_CASE("probability maps equal the loop oracle") {
    Rng rng(3);
    Tape t;
    Tensor g = random_tensor(rng, {4, 4}, 0.0, 1.0);
    auto [pa, pb] = probability_maps(t, t.constant(g));
    for (std::int64_t i = 0; i < 4; ++i) {
        double rmax = g.at(i, 0), cmax = g.at(0, i);
        for (std::int64_t j = 0; j < 4; ++j) {
            rmax = std::max(rmax, g.at(i, j));
            cmax = std::max(cmax, g.at(j, i));
        }
        CHECK(t.val(pa).at(i) == rmax);
        CHECK(t.val(pb).at(i) == cmax);
    }
}

TEST_CASE("threshold of a constant map is that constant") {
    CHECK(adaptive_threshold(Tensor::full({16}, 0.42)) == 0.42);
}

TEST_CASE("threshold integrates the sorted curve") {
    Tensor pm({4});
    pm.data = {0.3, 0.1, 0.4, 0.2};
    CHECK(std::abs(adaptive_threshold(pm) - 0.25) < 1e-15);
}

TEST_CASE("threshold is permutation invariant") {
    Rng rng(5);
    Tensor pm = random_tensor(rng, {64}, 0.0, 1.0);
    double lam = adaptive_threshold(pm);
    std::vector<double> shuffled = pm.data;
    for (std::size_t i = shuffled.size(); i > 1; --i)
        std::swap(shuffled[i - 1], shuffled[static_cast<std::size_t>(rng.uniform_int(
                                       0, static_cast<std::int64_t>(i) - 1))]);
    Tensor pm2({64});
    pm2.data = shuffled;
    CHECK(adaptive_threshold(pm2) == lam);
}

TEST_CASE("threshold equals the arithmetic mean and stays in range") {
    Rng rng(9);
    for (int rep = 0; rep < 20; ++rep) {
        Tensor pm = random_tensor(rng, {8 * 8}, 0.0, 1.0);
        double lam = adaptive_threshold(pm);
        double mean = std::accumulate(pm.data.begin(), pm.data.end(), 0.0) /
                      static_cast<double>(pm.numel());
        CHECK(std::abs(lam - mean) < 1e-12);
        CHECK(lam >= *std::min_element(pm.data.begin(), pm.data.end()));
        CHECK(lam <= *std::max_element(pm.data.begin(), pm.data.end()));
    }
    CHECK_THROWS_AS(adaptive_threshold(Tensor({0})), error);
}

TEST_CASE("binarize keeps ties") {
    BinaryGrid g = binarize(Tensor::full({2, 2}, 0.5), 2, 2, 0.5);
    CHECK(g.count() == 4);
}

TEST_CASE("binarize splits the worked example in two") {
    Tensor pm({4});
    pm.data = {0.1, 0.2, 0.3, 0.4};
    BinaryGrid g = binarize(pm, 2, 2, adaptive_threshold(pm));
    CHECK(g.count() == 2);
    CHECK(g.at(1, 0) == 1);
    CHECK(g.at(1, 1) == 1);
}

TEST_CASE("binarize is monotone in the threshold") {
    Rng rng(13);
    Tensor pm = random_tensor(rng, {6 * 6}, 0.0, 1.0);
    BinaryGrid lo = binarize(pm, 6, 6, 0.3), hi = binarize(pm, 6, 6, 0.7);
    for (std::size_t i = 0; i < lo.cells.size(); ++i)
        if (hi.cells[i]) CHECK(lo.cells[i] == 1);
    CHECK_THROWS_AS(binarize(pm, 5, 5, 0.5), dim_error);
}

TEST_CASE("closing an empty mask does nothing") {
    BinaryGrid z = BinaryGrid::blank(8, 8);
    CHECK(morph_close(z, 10).count() == 0);
    CHECK_THROWS_AS(morph_close(z, 0), error);
}

TEST_CASE("closing bridges a small gap in a row") {
    BinaryGrid g = grid_from(1, 12, {3, 5});
    BinaryGrid c = morph_close(g, 3);
    for (std::int64_t i = 0; i < 12; ++i)
        CHECK(static_cast<int>(c.at(0, i)) == ((i >= 3 && i <= 5) ? 1 : 0));
}

TEST_CASE("closing keeps a full mask full") {
    BinaryGrid full = BinaryGrid::blank(8, 8);
    std::fill(full.cells.begin(), full.cells.end(), std::uint8_t{1});
    CHECK(morph_close(full, 10).count() == 64);
}

TEST_CASE("closing is extensive and idempotent for odd and even kernels") {
    Rng rng(17);
    for (int k : {2, 3, 4, 5, 10}) {
        for (int rep = 0; rep < 10; ++rep) {
            BinaryGrid m = random_grid(rng, 8, 8, 0.2 + 0.06 * rep);
            BinaryGrid c1 = morph_close(m, k);
            BinaryGrid c2 = morph_close(c1, k);
            for (std::size_t i = 0; i < m.cells.size(); ++i) {
                if (m.cells[i]) CHECK(c1.cells[i] == 1);
                CHECK(c1.cells[i] == c2.cells[i]);
            }
        }
    }
}

TEST_CASE("contour fill keeps a solid block as is") {
    BinaryGrid g = BinaryGrid::blank(8, 8);
    for (std::int64_t r = 2; r < 5; ++r)
        for (std::int64_t c = 3; c < 6; ++c) g.set(r, c, 1);
    ContourFill f = max_contour_fill(g);
    CHECK_FALSE(f.degenerate);
    CHECK(f.mask.cells == g.cells);
}

TEST_CASE("contour fill closes a ring") {
    BinaryGrid g = BinaryGrid::blank(8, 8);
    for (std::int64_t r = 1; r < 6; ++r)
        for (std::int64_t c = 1; c < 6; ++c)
            if (r == 1 || r == 5 || c == 1 || c == 5) g.set(r, c, 1);
    ContourFill f = max_contour_fill(g);
    for (std::int64_t r = 0; r < 8; ++r)
        for (std::int64_t c = 0; c < 8; ++c)
            CHECK(static_cast<int>(f.mask.at(r, c)) ==
                  ((r >= 1 && r <= 5 && c >= 1 && c <= 5) ? 1 : 0));
}

TEST_CASE("contour fill drops satellites of the biggest region") {
    BinaryGrid g = BinaryGrid::blank(8, 8);
    for (std::int64_t r = 0; r < 4; ++r)
        for (std::int64_t c = 0; c < 4; ++c) g.set(r, c, 1);
    g.set(7, 7, 1);
    ContourFill f = max_contour_fill(g);
    CHECK(f.mask.count() == 16);
    CHECK(f.mask.at(7, 7) == 0);
}

TEST_CASE("contour fill absorbs a component inside the winner's hole") {
    BinaryGrid g = BinaryGrid::blank(8, 8);
    for (std::int64_t r = 1; r < 6; ++r)
        for (std::int64_t c = 1; c < 6; ++c)
            if (r == 1 || r == 5 || c == 1 || c == 5) g.set(r, c, 1);
    g.set(3, 3, 1);
    ContourFill f = max_contour_fill(g);
    CHECK(f.mask.count() == 25);
    CHECK(component_count(f.mask) == 1);
}

TEST_CASE("contour fill flags an empty mask") {
    ContourFill f = max_contour_fill(BinaryGrid::blank(4, 4));
    CHECK(f.degenerate);
    CHECK(f.mask.count() == 0);
}

TEST_CASE("contour fill breaks ties toward the first region in row-major order") {
    BinaryGrid g = grid_from(8, 8, {0, 5 * 8 + 5});
    ContourFill f = max_contour_fill(g);
    CHECK(f.mask.count() == 1);
    CHECK(f.mask.at(0, 0) == 1);
}

TEST_CASE("contour fill always yields one component with no holes") {
    Rng rng(23);
    for (int rep = 0; rep < 40; ++rep) {
        BinaryGrid m = random_grid(rng, 8, 8, 0.15 + 0.02 * rep);
        ContourFill f = max_contour_fill(m);
        if (f.degenerate) {
            CHECK(f.mask.count() == 0);
            continue;
        }
        CHECK(component_count(f.mask) == 1);
        CHECK(hole_count(f.mask) == 0);
    }
}

TEST_CASE("selecting with a full mask is the identity gather") {
    Tape t;
    Rng rng(29);
    KeypointSet kps = grid_keypoints(16, 32);
    FeatureSequence seq{t.constant(random_tensor(rng, {kps.gh * kps.gw, 4})), kps.gh, kps.gw};
    BinaryGrid cm = BinaryGrid::blank(kps.gh, kps.gw);
    std::fill(cm.cells.begin(), cm.cells.end(), std::uint8_t{1});
    CoVisible cv = select_covisible(t, seq, kps, cm);
    CHECK(static_cast<std::int64_t>(cv.indices.size()) == kps.gh * kps.gw);
    CHECK(max_abs_diff(t.val(cv.seq.feat), t.val(seq.feat)) == 0.0);
    CHECK(max_abs_diff(cv.coords, kps.coords) == 0.0);
}

TEST_CASE("selecting a single cell lands on its row-major index") {
    Tape t;
    Rng rng(31);
    KeypointSet kps = grid_keypoints(16, 32);
    FeatureSequence seq{t.constant(random_tensor(rng, {kps.gh * kps.gw, 4})), kps.gh, kps.gw};
    BinaryGrid cm = BinaryGrid::blank(kps.gh, kps.gw);
    cm.set(1, 3, 1);
    CoVisible cv = select_covisible(t, seq, kps, cm);
    REQUIRE(cv.indices.size() == 1);
    CHECK(cv.indices[0] == 1 * kps.gw + 3);
    CHECK(cv.coords.at(0, 0) == 8.0 * 3 + 4);
    CHECK(cv.coords.at(0, 1) == 8.0 * 1 + 4);
}

TEST_CASE("selection matches a loop gather and stays sorted") {
    Tape t;
    Rng rng(37);
    KeypointSet kps = grid_keypoints(64, 64);
    FeatureSequence seq{t.constant(random_tensor(rng, {kps.gh * kps.gw, 3})), kps.gh, kps.gw};
    BinaryGrid cm = random_grid(rng, kps.gh, kps.gw, 0.5);
    if (cm.count() == 0) cm.set(0, 0, 1);
    CoVisible cv = select_covisible(t, seq, kps, cm);
    std::int64_t row = 0;
    for (std::int64_t i = 0; i < kps.gh * kps.gw; ++i) {
        if (!cm.cells[static_cast<std::size_t>(i)]) continue;
        CHECK(cv.indices[static_cast<std::size_t>(row)] == i);
        for (std::int64_t c = 0; c < 3; ++c)
            CHECK(t.val(cv.seq.feat).at(row, c) == t.val(seq.feat).at(i, c));
        ++row;
    }
    CHECK(row == static_cast<std::int64_t>(cv.indices.size()));
    CHECK(std::is_sorted(cv.indices.begin(), cv.indices.end()));
}

TEST_CASE("selection routes gradients to the chosen rows only") {
    Tape t;
    Tensor feat({4, 2});
    feat.data = {1, 2, 3, 4, 5, 6, 7, 8};
    FeatureSequence seq{t.leaf(feat, true), 2, 2};
    BinaryGrid cm = grid_from(2, 2, {1, 2});
    KeypointSet kps = grid_keypoints(16, 16);
    CoVisible cv = select_covisible(t, seq, kps, cm);
    t.backward(t.sum(cv.seq.feat));
    const Tensor& g = t.grad(seq.feat);
    for (std::int64_t r = 0; r < 4; ++r)
        for (std::int64_t c = 0; c < 2; ++c)
            CHECK(g.at(r, c) == ((r == 1 || r == 2) ? 1.0 : 0.0));
}

TEST_CASE("selection refuses an empty overlap") {
    Tape t;
    KeypointSet kps = grid_keypoints(16, 16);
    FeatureSequence seq{t.constant(Tensor({4, 2})), 2, 2};
    CHECK_THROWS_AS(select_covisible(t, seq, kps, BinaryGrid::blank(2, 2)), error);
}
