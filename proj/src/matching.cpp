#include "covis/matching.hpp"

#include <algorithm>
#include <cmath>

namespace covis {

std::vector<std::pair<std::int64_t, std::int64_t>> propose_coarse(const Tensor& g, double rho) {
    if (g.rank() != 2) throw dim_error("propose_coarse: want a matrix, got " + shape_str(g.shape));
    std::int64_t ka = g.dim(0), kb = g.dim(1);
    std::vector<std::pair<std::int64_t, std::int64_t>> d;
    for (std::int64_t i = 0; i < ka; ++i) {
        std::int64_t jbest = -1;
        for (std::int64_t j = 0; j < kb; ++j) {
            double v = g.at(i, j);
            if (v <= rho) continue;
            bool row_strict = true, col_strict = true;
            for (std::int64_t j2 = 0; j2 < kb && row_strict; ++j2)
                if (j2 != j && g.at(i, j2) >= v) row_strict = false;
            for (std::int64_t i2 = 0; i2 < ka && col_strict; ++i2)
                if (i2 != i && g.at(i2, j) >= v) col_strict = false;
            if (row_strict && col_strict) {
                jbest = j;
                break;
            }
        }
        if (jbest >= 0) d.emplace_back(i, jbest);
    }
    return d;
}

CoarseMatches coarse_to_keypoints(const std::vector<std::pair<std::int64_t, std::int64_t>>& d,
                                  const Tensor& pa, const Tensor& pb, const Tensor& g) {
    std::int64_t t = static_cast<std::int64_t>(d.size());
    CoarseMatches cm;
    cm.pairs = d;
    cm.pa = Tensor({t, 2});
    cm.pb = Tensor({t, 2});
    for (std::int64_t n = 0; n < t; ++n) {
        auto [i, j] = d[static_cast<std::size_t>(n)];
        if (i < 0 || i >= pa.dim(0) || j < 0 || j >= pb.dim(0))
            throw error("coarse_to_keypoints: pair (" + std::to_string(i) + "," +
                        std::to_string(j) + ") outside keypoint lists");
        cm.pa.at(n, 0) = pa.at(i, 0);
        cm.pa.at(n, 1) = pa.at(i, 1);
        cm.pb.at(n, 0) = pb.at(j, 0);
        cm.pb.at(n, 1) = pb.at(j, 1);
        cm.conf.push_back(g.at(i, j));
    }
    return cm;
}

// round(p/2 - 0.5) with half-ties toward the next cell, so pixel p lands in
// the fine cell covering [2i, 2i+2)
std::int64_t fine_index(double p) { return static_cast<std::int64_t>(std::floor(p / 2.0)); }

WindowSet crop_windows(Tape& t, Var fine, const Tensor& centers, int w) {
    if (w < 1 || w % 2 == 0) throw error("crop_windows: window size must be odd");
    WindowSet ws;
    ws.w = w;
    for (std::int64_t n = 0; n < centers.dim(0); ++n) {
        std::int64_t cx = fine_index(centers.at(n, 0));
        std::int64_t cy = fine_index(centers.at(n, 1));
        ws.wins.push_back(t.gather_window(fine, cy, cx, w));
    }
    return ws;
}

void register_refiner(ParamStore& store, std::int64_t c, std::int64_t gamma, std::int64_t l3,
                      Rng& rng) {
    for (std::int64_t i = 0; i < l3; ++i)
        register_tel_block(store, "refiner.block" + std::to_string(i), c, gamma, false, rng);
    std::int64_t c2 = 2 * c;
    double sd = 1.0 / std::sqrt(static_cast<double>(c2));
    for (const char* name : {"t1", "t2", "t3", "t4"}) {
        store.add(std::string("refiner.") + name + ".w", init_orthogonal(c2, rng, 0.1));
        store.add(std::string("refiner.") + name + ".b", Tensor::zeros({c2}));
    }
    store.add("refiner.off.w", init_normal({c2, 2}, rng, sd));
    store.add("refiner.off.b", Tensor::zeros({2}));
    store.add("refiner.conf.w", init_normal({c2, 1}, rng, sd));
    store.add("refiner.conf.b", Tensor::zeros({1}));
}

RefinerVars bind_refiner(TapeBinder& bind, std::int64_t l3) {
    RefinerVars p;
    for (std::int64_t i = 0; i < l3; ++i)
        p.blocks.push_back(bind_tel_block(bind, "refiner.block" + std::to_string(i), false));
    p.t1_w = bind("refiner.t1.w");
    p.t1_b = bind("refiner.t1.b");
    p.t2_w = bind("refiner.t2.w");
    p.t2_b = bind("refiner.t2.b");
    p.t3_w = bind("refiner.t3.w");
    p.t3_b = bind("refiner.t3.b");
    p.t4_w = bind("refiner.t4.w");
    p.t4_b = bind("refiner.t4.b");
    p.off_w = bind("refiner.off.w");
    p.off_b = bind("refiner.off.b");
    p.conf_w = bind("refiner.conf.w");
    p.conf_b = bind("refiner.conf.b");
    return p;
}

Refined refine(Tape& t, const WindowSet& wa, const WindowSet& wb, const RefinerVars& p) {
    if (wa.wins.size() != wb.wins.size() || wa.w != wb.w)
        throw dim_error("refine: window sets disagree");
    if (wa.wins.empty()) throw error("refine: no matches to refine");
    Refined out;
    for (std::size_t n = 0; n < wa.wins.size(); ++n) {
        FeatureSequence a{wa.wins[n], 0, 0}, b{wb.wins[n], 0, 0};
        auto [ra, rb] = oatm(t, a, b, p.blocks);
        Var x = t.concat_cols(ra.feat, rb.feat);
        x = t.add_bias(t.matmul(x, p.t1_w), p.t1_b);
        x = t.add_bias(t.matmul(x, p.t2_w), p.t2_b);
        std::int64_t c2 = t.val(x).dim(1);
        Var pooled = t.reshape(t.max_axis(x, 0), {1, c2});
        Var h = t.add_bias(t.matmul(pooled, p.t3_w), p.t3_b);
        h = t.add_bias(t.matmul(h, p.t4_w), p.t4_b);
        out.theta.push_back(t.add_bias(t.matmul(h, p.off_w), p.off_b));
        out.conf.push_back(t.sigmoid(t.add_bias(t.matmul(h, p.conf_w), p.conf_b)));
    }
    return out;
}

Tensor refined_theta(const Tape& t, const Refined& r) {
    Tensor th({static_cast<std::int64_t>(r.theta.size()), 2});
    for (std::size_t n = 0; n < r.theta.size(); ++n) {
        th.at(static_cast<std::int64_t>(n), 0) = t.val(r.theta[n]).at(0, 0);
        th.at(static_cast<std::int64_t>(n), 1) = t.val(r.theta[n]).at(0, 1);
    }
    return th;
}

Tensor refined_conf(const Tape& t, const Refined& r) {
    Tensor c({static_cast<std::int64_t>(r.conf.size())});
    for (std::size_t n = 0; n < r.conf.size(); ++n)
        c.at(static_cast<std::int64_t>(n)) = t.val(r.conf[n]).at(0, 0);
    return c;
}

FineMatchSet fine_matches(const CoarseMatches& cm, const Tensor& theta, const Tensor& conf,
                          std::int64_t img_w, std::int64_t img_h) {
    std::int64_t t = cm.count();
    if (theta.dim(0) != t || conf.dim(0) != t)
        throw dim_error("fine_matches: " + std::to_string(t) + " matches vs theta " +
                        shape_str(theta.shape));
    FineMatchSet fm;
    fm.pa = cm.pa;
    fm.pb = Tensor({t, 2});
    for (std::int64_t n = 0; n < t; ++n) {
        double x = cm.pb.at(n, 0) + theta.at(n, 0);
        double y = cm.pb.at(n, 1) + theta.at(n, 1);
        double cx = std::clamp(x, 0.0, static_cast<double>(img_w - 1));
        double cy = std::clamp(y, 0.0, static_cast<double>(img_h - 1));
        fm.pb.at(n, 0) = cx;
        fm.pb.at(n, 1) = cy;
        fm.clamped.push_back(cx != x || cy != y);
        fm.conf.push_back(conf.at(n));
    }
    return fm;
}

MatchFile to_match_file(const FineMatchSet& fm, std::int64_t img_w, std::int64_t img_h) {
    MatchFile mf;
    mf.w = img_w;
    mf.h = img_h;
    for (std::int64_t n = 0; n < fm.pa.dim(0); ++n)
        mf.matches.push_back({fm.pa.at(n, 0), fm.pa.at(n, 1), fm.pb.at(n, 0), fm.pb.at(n, 1),
                              fm.conf[static_cast<std::size_t>(n)]});
    return mf;
}

}  // namespace covis
