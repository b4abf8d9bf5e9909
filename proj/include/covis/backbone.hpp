#pragma once

#include "covis/image.hpp"
#include "covis/weights.hpp"

namespace covis {

// Fine features at 1/2 resolution, coarse at 1/8.
struct FeaturePyramid {
    Var fine;    // [c_fine, h/2, w/2]
    Var coarse;  // [c_coarse, h/8, w/8]
};

struct BackboneVars {
    Var w1, b1;  // 1 -> c_fine, stride 2
    Var w2, b2;  // c_fine -> c_fine, stride 1, fine head
    Var w3, b3;  // c_fine -> c_coarse, stride 2
    Var w4, b4;  // c_coarse -> c_coarse, stride 2, coarse head
};

void register_backbone(ParamStore& store, std::int64_t c_fine, std::int64_t c_coarse, Rng& rng);
BackboneVars bind_backbone(TapeBinder& bind);

// Shared-weight conv pyramid over one grayscale image; GELU after each conv.
FeaturePyramid encode_one(Tape& t, const Image& img, const BackboneVars& p);

// Grid-cell centers in original-image pixels, row-major to match the
// flattening of coarse features: cell (r,c) -> (8c+4, 8r+4).
struct KeypointSet {
    Tensor coords;  // [n, 2] as (x, y)
    std::int64_t gh = 0, gw = 0;
};

KeypointSet grid_keypoints(std::int64_t h, std::int64_t w);

void check_pair_dims(const Image& a, const Image& b);

}  // namespace covis
