#pragma once

#include <utility>
#include <vector>

#include "covis/attention.hpp"
#include "covis/image.hpp"

namespace covis {

// Coarse proposals: index pairs into the co-visible keypoint lists plus their
// looked-up pixel coordinates and assignment confidence.
struct CoarseMatches {
    std::vector<std::pair<std::int64_t, std::int64_t>> pairs;
    Tensor pa, pb;  // [t, 2] as (x, y)
    std::vector<double> conf;

    std::int64_t count() const { return static_cast<std::int64_t>(pairs.size()); }
};

// Mutual strict argmax over rows and columns, kept only above rho. Exact ties
// never match.
std::vector<std::pair<std::int64_t, std::int64_t>> propose_coarse(const Tensor& g, double rho);

CoarseMatches coarse_to_keypoints(const std::vector<std::pair<std::int64_t, std::int64_t>>& d,
                                  const Tensor& pa, const Tensor& pb, const Tensor& g);

// Image pixel -> index into the half-resolution feature grid.
std::int64_t fine_index(double p);

// One w x w zero-padded crop per center, each [w*w, c].
struct WindowSet {
    std::vector<Var> wins;
    int w = 0;
};

WindowSet crop_windows(Tape& t, Var fine, const Tensor& centers, int w);

// Window refiner: TEL blocks over both windows, channel concat, then a conv
// head of four 1x1 stages around a global max pool, finishing in an offset
// head and a sigmoid confidence head.
struct RefinerVars {
    std::vector<TelBlockVars> blocks;
    Var t1_w, t1_b, t2_w, t2_b;
    Var t3_w, t3_b, t4_w, t4_b;
    Var off_w, off_b;
    Var conf_w, conf_b;
};

void register_refiner(ParamStore& store, std::int64_t c, std::int64_t gamma, std::int64_t l3,
                      Rng& rng);
RefinerVars bind_refiner(TapeBinder& bind, std::int64_t l3);

// Per-match offset in image pixels and confidence in (0,1), kept as tape
// nodes so losses can reach back through them.
struct Refined {
    std::vector<Var> theta;  // each [1, 2]
    std::vector<Var> conf;   // each [1, 1]
};

Refined refine(Tape& t, const WindowSet& wa, const WindowSet& wb, const RefinerVars& p);

Tensor refined_theta(const Tape& t, const Refined& r);  // [t, 2]
Tensor refined_conf(const Tape& t, const Refined& r);   // [t]

struct FineMatchSet {
    Tensor pa, pb;  // [t, 2]
    std::vector<double> conf;
    std::vector<bool> clamped;
};

// Applies offsets to the second image's coordinates, clamping to the frame.
FineMatchSet fine_matches(const CoarseMatches& cm, const Tensor& theta, const Tensor& conf,
                          std::int64_t img_w, std::int64_t img_h);

MatchFile to_match_file(const FineMatchSet& fm, std::int64_t img_w, std::int64_t img_h);

}  // namespace covis
