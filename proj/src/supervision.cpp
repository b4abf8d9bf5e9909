#include "covis/supervision.hpp"

#include <algorithm>
#include <cmath>

namespace covis {

namespace {

constexpr double kLogClamp = 1e-6;

std::int64_t nearest_cell(double p, std::int64_t cells) {
    std::int64_t c = std::llround((p - 4.0) / 8.0);
    return std::clamp<std::int64_t>(c, 0, cells - 1);
}

// per-point direction pass: fills this direction's confidence rows and the
// nearest-cell index for every valid projection
std::vector<std::int64_t> direction_pass(const WarpResult& warp, const KeypointSet& dst,
                                         double kappa, Tensor& lc_rows) {
    std::int64_t n = warp.points.dim(0);
    std::vector<std::int64_t> nearest(static_cast<std::size_t>(n), -1);
    for (std::int64_t i = 0; i < n; ++i) {
        if (!warp.valid[static_cast<std::size_t>(i)]) continue;
        double x = warp.points.at(i, 0), y = warp.points.at(i, 1);
        nearest[static_cast<std::size_t>(i)] =
            nearest_cell(y, dst.gh) * dst.gw + nearest_cell(x, dst.gw);
        double hx = static_cast<double>(8 * (dst.gw - 1) + 4);
        double hy = static_cast<double>(8 * (dst.gh - 1) + 4);
        if (x < 4.0 || x > hx || y < 4.0 || y > hy) continue;
        std::int64_t cx = std::min<std::int64_t>(
            static_cast<std::int64_t>(std::floor((x - 4.0) / 8.0)), dst.gw - 2);
        std::int64_t cy = std::min<std::int64_t>(
            static_cast<std::int64_t>(std::floor((y - 4.0) / 8.0)), dst.gh - 2);
        Tensor corners({4, 2});
        std::int64_t slots[4];
        int s = 0;
        for (std::int64_t dy = 0; dy <= 1; ++dy)
            for (std::int64_t dx = 0; dx <= 1; ++dx) {
                corners.at(s, 0) = static_cast<double>(8 * (cx + dx) + 4);
                corners.at(s, 1) = static_cast<double>(8 * (cy + dy) + 4);
                slots[s] = (cy + dy) * dst.gw + (cx + dx);
                ++s;
            }
        TwoCorners tc = label_confidence(x, y, corners, kappa);
        lc_rows.at(i, slots[tc.i1]) = tc.p1;
        lc_rows.at(i, slots[tc.i2]) = tc.p2;
    }
    return nearest;
}

Var weighted_bce(Tape& t, Var g, const Tensor& gt, const Tensor& lc, bool& degenerate) {
    const Tensor& gv = t.val(g);
    check_shape(gt, gv.shape, "match labels");
    check_shape(lc, gv.shape, "label confidence");
    if (gt.numel() == 0) throw error("match loss: empty label matrix");
    std::int64_t pos = 0;
    for (double v : gt.data) pos += v != 0.0 ? 1 : 0;
    std::int64_t neg = gt.numel() - pos;
    degenerate = pos == 0 || neg == 0;
    Tensor wpos(gt.shape), wneg(gt.shape);
    for (std::int64_t i = 0; i < gt.numel(); ++i) {
        if (gt.at(i) != 0.0)
            wpos.at(i) = lc.at(i) / static_cast<double>(pos);
        else
            wneg.at(i) = (1.0 - lc.at(i)) / static_cast<double>(neg);
    }
    Var clamped = t.clamp(g, kLogClamp, 1.0 - kLogClamp);
    Var acc{};
    if (pos > 0) acc = t.sum(t.mul_const(t.log(clamped), wpos));
    if (neg > 0) {
        Var nterm = t.sum(t.mul_const(t.log(t.one_minus(clamped)), wneg));
        acc = acc.valid() ? t.add(acc, nterm) : nterm;
    }
    return t.scale(acc, -1.0);
}

}  // namespace

TwoCorners label_confidence(double px, double py, const Tensor& corners, double kappa) {
    check_shape(corners, {4, 2}, "grid corners");
    if (kappa <= 0) throw error("label_confidence: temperature must be positive");
    double d[4], dm = 0.0;
    for (int s = 0; s < 4; ++s) {
        d[s] = std::hypot(px - corners.at(s, 0), py - corners.at(s, 1));
        dm = std::max(dm, d[s]);
    }
    int order[4] = {0, 1, 2, 3};
    std::stable_sort(order, order + 4, [&](int a, int b) { return d[a] < d[b]; });
    TwoCorners tc;
    tc.i1 = order[0];
    tc.i2 = order[1];
    double s1 = (dm - d[order[0]]) / kappa, s2 = (dm - d[order[1]]) / kappa;
    double mx = std::max(s1, s2);
    double e1 = std::exp(s1 - mx), e2 = std::exp(s2 - mx);
    tc.p1 = e1 / (e1 + e2);
    tc.p2 = e2 / (e1 + e2);
    return tc;
}

std::pair<GroundTruth, LabelConfidence> make_gt_and_confidence(const KeypointSet& kps_a,
                                                               const KeypointSet& kps_b,
                                                               const CameraFrame& frame_a,
                                                               const CameraFrame& frame_b,
                                                               double kappa) {
    std::int64_t na = kps_a.coords.dim(0), nb = kps_b.coords.dim(0);
    GroundTruth gt;
    LabelConfidence lc;
    gt.labels = Tensor({na, nb});
    lc.lc_a = Tensor({na, nb});
    lc.lc_b = Tensor({na, nb});

    WarpResult ab = warp_with_depth(kps_a.coords, frame_a, frame_b);
    WarpResult ba = warp_with_depth(kps_b.coords, frame_b, frame_a);
    gt.proj_ab = ab.points;
    gt.proj_ba = ba.points;
    gt.valid_a = ab.valid;
    gt.valid_b = ba.valid;

    std::vector<std::int64_t> near_ab = direction_pass(ab, kps_b, kappa, lc.lc_a);
    Tensor lc_b_rows({nb, na});
    std::vector<std::int64_t> near_ba = direction_pass(ba, kps_a, kappa, lc_b_rows);
    for (std::int64_t j = 0; j < nb; ++j)
        for (std::int64_t i = 0; i < na; ++i) lc.lc_b.at(i, j) = lc_b_rows.at(j, i);

    for (std::int64_t i = 0; i < na; ++i) {
        std::int64_t j = near_ab[static_cast<std::size_t>(i)];
        if (j < 0) continue;
        if (near_ba[static_cast<std::size_t>(j)] == i) gt.labels.at(i, j) = 1.0;
    }

    lc.lc = Tensor({na, nb});
    for (std::int64_t i = 0; i < na * nb; ++i)
        lc.lc.at(i) = (lc.lc_a.at(i) + lc.lc_b.at(i)) / 2.0;
    return {std::move(gt), std::move(lc)};
}

LossTerm loss_entire(Tape& t, Var g, const Tensor& gt, const Tensor& lc) {
    LossTerm term;
    term.value = weighted_bce(t, g, gt, lc, term.degenerate);
    return term;
}

LossTerm loss_overlap(Tape& t, Var g_oa, const std::vector<std::int64_t>& idx_a,
                      const std::vector<std::int64_t>& idx_b, const Tensor& gt, const Tensor& lc) {
    std::int64_t ka = static_cast<std::int64_t>(idx_a.size());
    std::int64_t kb = static_cast<std::int64_t>(idx_b.size());
    Tensor gt_oa({ka, kb}), lc_oa({ka, kb});
    for (std::int64_t i = 0; i < ka; ++i)
        for (std::int64_t j = 0; j < kb; ++j) {
            std::int64_t gi = idx_a[static_cast<std::size_t>(i)];
            std::int64_t gj = idx_b[static_cast<std::size_t>(j)];
            if (gi < 0 || gi >= gt.dim(0) || gj < 0 || gj >= gt.dim(1))
                throw error("loss_overlap: co-visible index outside the label matrix");
            gt_oa.at(i, j) = gt.at(gi, gj);
            lc_oa.at(i, j) = lc.at(gi, gj);
        }
    LossTerm term;
    term.value = weighted_bce(t, g_oa, gt_oa, lc_oa, term.degenerate);
    return term;
}

LossTerm loss_offset(Tape& t, const std::vector<Var>& theta, const Tensor& theta_gt, double eta) {
    std::int64_t n = static_cast<std::int64_t>(theta.size());
    if (theta_gt.dim(0) != n)
        throw dim_error("loss_offset: " + std::to_string(n) + " offsets vs labels " +
                        shape_str(theta_gt.shape));
    Var acc{};
    std::int64_t kept = 0;
    for (std::int64_t i = 0; i < n; ++i) {
        double gx = theta_gt.at(i, 0), gy = theta_gt.at(i, 1);
        if (std::max(std::abs(gx), std::abs(gy)) > eta) continue;
        Tensor neg({1, 2});
        neg.at(0, 0) = -gx;
        neg.at(0, 1) = -gy;
        Var se = t.sum(t.powi(t.add_const(theta[static_cast<std::size_t>(i)], neg), 2));
        acc = acc.valid() ? t.add(acc, se) : se;
        ++kept;
    }
    LossTerm term;
    if (kept == 0) {
        term.value = t.constant(Tensor::zeros({1}));
        term.degenerate = true;
        return term;
    }
    term.value = t.scale(acc, 1.0 / static_cast<double>(kept));
    return term;
}

Tensor confidence_labels(const Tensor& theta_gt, double eta) {
    Tensor labels({theta_gt.dim(0)});
    for (std::int64_t i = 0; i < theta_gt.dim(0); ++i)
        labels.at(i) =
            std::max(std::abs(theta_gt.at(i, 0)), std::abs(theta_gt.at(i, 1))) <= eta ? 1.0 : 0.0;
    return labels;
}

LossTerm loss_confidence(Tape& t, const std::vector<Var>& conf, const Tensor& conf_gt) {
    std::int64_t n = static_cast<std::int64_t>(conf.size());
    LossTerm term;
    if (n == 0) {
        term.value = t.constant(Tensor::zeros({1}));
        term.degenerate = true;
        return term;
    }
    if (conf_gt.dim(0) != n)
        throw dim_error("loss_confidence: " + std::to_string(n) + " confidences vs labels " +
                        shape_str(conf_gt.shape));
    Var acc{};
    for (std::int64_t i = 0; i < n; ++i) {
        Var c = t.clamp(conf[static_cast<std::size_t>(i)], kLogClamp, 1.0 - kLogClamp);
        double y = conf_gt.at(i);
        Var bce = t.sum(t.add(t.scale(t.log(c), y), t.scale(t.log(t.one_minus(c)), 1.0 - y)));
        acc = acc.valid() ? t.add(acc, bce) : bce;
    }
    term.value = t.scale(acc, -1.0 / static_cast<double>(n));
    return term;
}

Var total_loss(Tape& t, Var le, Var la, Var lo, Var lc, const LossWeights& w) {
    Var s = t.add(t.scale(le, w.a1), t.scale(la, w.a2));
    s = t.add(s, t.scale(lo, w.a3));
    return t.add(s, t.scale(lc, w.a4));
}

}  // namespace covis
