#pragma once

#include <cstdint>
#include <vector>

#include "covis/attention.hpp"
#include "covis/backbone.hpp"

namespace covis {

// Binary grid at coarse resolution, row-major.
struct BinaryGrid {
    std::int64_t gh = 0, gw = 0;
    std::vector<std::uint8_t> cells;

    static BinaryGrid blank(std::int64_t gh, std::int64_t gw);
    std::uint8_t at(std::int64_t r, std::int64_t c) const {
        return cells[static_cast<std::size_t>(r * gw + c)];
    }
    void set(std::int64_t r, std::int64_t c, std::uint8_t v) {
        cells[static_cast<std::size_t>(r * gw + c)] = v;
    }
    std::int64_t count() const;
};

struct Assignment {
    Var s;  // [n,m] inner-product scores
    Var g;  // [n,m] dual-softmax soft assignment
};

// S(i,j) = <fa_i, fb_j>, G = softmax_rows(S) * softmax_cols(S).
Assignment score_and_assign(Tape& t, Var fa, Var fb);

// Row / column maxima of G as sequences: pm_a[i] = max_j G(i,j), pm_b[j] = max_i G(i,j).
std::pair<Var, Var> probability_maps(Tape& t, Var g);

// Area under the sorted-value curve with abscissae k/n and rectangle widths
// 1/n, which collapses to the arithmetic mean.
double adaptive_threshold(const Tensor& pm);

// cell = 1 iff pm >= lambda (ties kept)
BinaryGrid binarize(const Tensor& pm, std::int64_t gh, std::int64_t gw, double lambda);

// Dilation then erosion by a k x k square element anchored at (k/2, k/2).
// Dilation treats outside-of-frame as background; erosion skips out-of-frame
// window cells. The two scans use mirrored offsets, which keeps the compound
// extensive and idempotent for every k, even ones.
BinaryGrid morph_close(const BinaryGrid& mask, int k);

struct ContourFill {
    BinaryGrid mask;
    bool degenerate = false;  // empty input
};

// Keeps the 4-connected component with the largest filled area (component
// plus everything it encloses) and fills it solid; ties go to the component
// appearing first in row-major order.
ContourFill max_contour_fill(const BinaryGrid& mask);

struct CoVisible {
    FeatureSequence seq;                // [k, c], no grid shape
    Tensor coords;                      // [k, 2] keypoint pixels
    std::vector<std::int64_t> indices;  // ascending rows into the full sequence
};

CoVisible select_covisible(Tape& t, const FeatureSequence& seq, const KeypointSet& kps,
                           const BinaryGrid& cm);

}  // namespace covis
