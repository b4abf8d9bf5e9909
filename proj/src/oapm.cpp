#include "covis/oapm.hpp"

#include <algorithm>

namespace covis {

BinaryGrid BinaryGrid::blank(std::int64_t gh, std::int64_t gw) {
    BinaryGrid g;
    g.gh = gh;
    g.gw = gw;
    g.cells.assign(static_cast<std::size_t>(gh * gw), 0);
    return g;
}

std::int64_t BinaryGrid::count() const {
    std::int64_t n = 0;
    for (auto c : cells) n += c ? 1 : 0;
    return n;
}

Assignment score_and_assign(Tape& t, Var fa, Var fb) {
    const Tensor &ta = t.val(fa), &tb = t.val(fb);
    if (ta.rank() != 2 || tb.rank() != 2 || ta.dim(1) != tb.dim(1))
        throw dim_error("score_and_assign: " + shape_str(ta.shape) + " vs " + shape_str(tb.shape));
    Var s = t.matmul(fa, t.transpose(fb));
    Var g = t.mul(t.softmax(s, 1), t.softmax(s, 0));
    return {s, g};
}

std::pair<Var, Var> probability_maps(Tape& t, Var g) {
    return {t.max_axis(g, 1), t.max_axis(g, 0)};
}

double adaptive_threshold(const Tensor& pm) {
    if (pm.numel() == 0) throw error("adaptive_threshold: empty map");
    // area under the sorted-value curve by the rectangle rule of width 1/n;
    // summing in sorted order also makes the result permutation-invariant bit for bit
    std::vector<double> v = pm.data;
    std::sort(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

BinaryGrid binarize(const Tensor& pm, std::int64_t gh, std::int64_t gw, double lambda) {
    if (pm.numel() != gh * gw)
        throw dim_error("binarize: map size " + std::to_string(pm.numel()) + " vs grid " +
                        std::to_string(gh) + "x" + std::to_string(gw));
    BinaryGrid g = BinaryGrid::blank(gh, gw);
    for (std::int64_t i = 0; i < pm.numel(); ++i)
        g.cells[static_cast<std::size_t>(i)] = pm.at(i) >= lambda ? 1 : 0;
    return g;
}

BinaryGrid morph_close(const BinaryGrid& mask, int k) {
    if (k < 1) throw error("morph_close: kernel must be >= 1");
    std::int64_t gh = mask.gh, gw = mask.gw;
    std::int64_t a = k / 2;
    BinaryGrid dil = BinaryGrid::blank(gh, gw);
    for (std::int64_t r = 0; r < gh; ++r)
        for (std::int64_t c = 0; c < gw; ++c) {
            std::uint8_t v = 0;
            for (std::int64_t dr = -a; dr < k - a && !v; ++dr)
                for (std::int64_t dc = -a; dc < k - a; ++dc) {
                    std::int64_t rr = r - dr, cc = c - dc;
                    if (rr >= 0 && rr < gh && cc >= 0 && cc < gw && mask.at(rr, cc)) {
                        v = 1;
                        break;
                    }
                }
            dil.set(r, c, v);
        }
    BinaryGrid ero = BinaryGrid::blank(gh, gw);
    for (std::int64_t r = 0; r < gh; ++r)
        for (std::int64_t c = 0; c < gw; ++c) {
            std::uint8_t v = 1;
            for (std::int64_t dr = -a; dr < k - a && v; ++dr)
                for (std::int64_t dc = -a; dc < k - a; ++dc) {
                    std::int64_t rr = r + dr, cc = c + dc;
                    if (rr >= 0 && rr < gh && cc >= 0 && cc < gw && !dil.at(rr, cc)) {
                        v = 0;
                        break;
                    }
                }
            ero.set(r, c, v);
        }
    return ero;
}

namespace {

// background cells 4-connected to the border of `only`'s foreground complement
std::vector<std::uint8_t> outside_region(const BinaryGrid& fg) {
    std::int64_t gh = fg.gh, gw = fg.gw;
    std::vector<std::uint8_t> outside(static_cast<std::size_t>(gh * gw), 0);
    std::vector<std::int64_t> stack;
    auto push = [&](std::int64_t r, std::int64_t c) {
        if (r < 0 || r >= gh || c < 0 || c >= gw) return;
        std::size_t i = static_cast<std::size_t>(r * gw + c);
        if (outside[i] || fg.cells[i]) return;
        outside[i] = 1;
        stack.push_back(r * gw + c);
    };
    for (std::int64_t r = 0; r < gh; ++r) {
        push(r, 0);
        push(r, gw - 1);
    }
    for (std::int64_t c = 0; c < gw; ++c) {
        push(0, c);
        push(gh - 1, c);
    }
    while (!stack.empty()) {
        std::int64_t v = stack.back();
        stack.pop_back();
        std::int64_t r = v / gw, c = v % gw;
        push(r - 1, c);
        push(r + 1, c);
        push(r, c - 1);
        push(r, c + 1);
    }
    return outside;
}

}  // namespace

ContourFill max_contour_fill(const BinaryGrid& mask) {
    std::int64_t gh = mask.gh, gw = mask.gw;
    std::vector<std::int32_t> label(static_cast<std::size_t>(gh * gw), -1);
    std::vector<std::vector<std::int64_t>> comps;
    for (std::int64_t start = 0; start < gh * gw; ++start) {
        if (!mask.cells[static_cast<std::size_t>(start)] ||
            label[static_cast<std::size_t>(start)] >= 0)
            continue;
        std::int32_t id = static_cast<std::int32_t>(comps.size());
        comps.emplace_back();
        std::vector<std::int64_t> stack{start};
        label[static_cast<std::size_t>(start)] = id;
        while (!stack.empty()) {
            std::int64_t v = stack.back();
            stack.pop_back();
            comps[static_cast<std::size_t>(id)].push_back(v);
            std::int64_t r = v / gw, c = v % gw;
            for (auto [dr, dc] : {std::pair<int, int>{-1, 0}, {1, 0}, {0, -1}, {0, 1}}) {
                std::int64_t rr = r + dr, cc = c + dc;
                if (rr < 0 || rr >= gh || cc < 0 || cc >= gw) continue;
                std::size_t i = static_cast<std::size_t>(rr * gw + cc);
                if (mask.cells[i] && label[i] < 0) {
                    label[i] = id;
                    stack.push_back(rr * gw + cc);
                }
            }
        }
    }
    ContourFill out;
    if (comps.empty()) {
        out.mask = BinaryGrid::blank(gh, gw);
        out.degenerate = true;
        return out;
    }
    // filled area of a component = everything not outside when it stands alone
    std::int64_t best = -1, best_area = -1;
    std::vector<std::uint8_t> best_fill;
    for (std::size_t ci = 0; ci < comps.size(); ++ci) {
        BinaryGrid alone = BinaryGrid::blank(gh, gw);
        for (auto v : comps[ci]) alone.cells[static_cast<std::size_t>(v)] = 1;
        std::vector<std::uint8_t> outside = outside_region(alone);
        std::int64_t area = 0;
        for (auto o : outside) area += o ? 0 : 1;
        if (area > best_area) {
            best_area = area;
            best = static_cast<std::int64_t>(ci);
            best_fill.assign(outside.size(), 0);
            for (std::size_t i = 0; i < outside.size(); ++i) best_fill[i] = outside[i] ? 0 : 1;
        }
    }
    (void)best;
    out.mask.gh = gh;
    out.mask.gw = gw;
    out.mask.cells = std::move(best_fill);
    return out;
}

CoVisible select_covisible(Tape& t, const FeatureSequence& seq, const KeypointSet& kps,
                           const BinaryGrid& cm) {
    const Tensor& feat = t.val(seq.feat);
    if (cm.gh * cm.gw != feat.dim(0) || cm.gh != kps.gh || cm.gw != kps.gw)
        throw dim_error("select_covisible: grid " + std::to_string(cm.gh) + "x" +
                        std::to_string(cm.gw) + " vs sequence " + shape_str(feat.shape));
    CoVisible cv;
    for (std::int64_t i = 0; i < feat.dim(0); ++i)
        if (cm.cells[static_cast<std::size_t>(i)]) cv.indices.push_back(i);
    if (cv.indices.empty()) throw error("select_covisible: degenerate empty overlap");
    cv.seq.feat = t.gather_rows(seq.feat, cv.indices);
    cv.seq.gh = cv.seq.gw = 0;
    cv.coords = Tensor({static_cast<std::int64_t>(cv.indices.size()), 2});
    for (std::size_t j = 0; j < cv.indices.size(); ++j) {
        cv.coords.at(static_cast<std::int64_t>(j), 0) = kps.coords.at(cv.indices[j], 0);
        cv.coords.at(static_cast<std::int64_t>(j), 1) = kps.coords.at(cv.indices[j], 1);
    }
    return cv;
}

}  // namespace covis
