#pragma once

#include <utility>
#include <vector>

#include "covis/backbone.hpp"
#include "covis/geometry.hpp"
#include "covis/tape.hpp"

namespace covis {

// Binary match labels from depth-aware warping, plus the raw projections.
struct GroundTruth {
    Tensor labels;   // [na, nb], mutual-nearest pairs only
    Tensor proj_ab;  // [na, 2] A keypoints warped into B
    Tensor proj_ba;  // [nb, 2]
    std::vector<std::uint8_t> valid_a, valid_b;
};

// Soft label weights: each directional row holds two probabilities summing
// to one, or nothing for points that left the grid.
struct LabelConfidence {
    Tensor lc;    // [na, nb] averaged both ways
    Tensor lc_a;  // A -> B direction
    Tensor lc_b;  // B -> A direction, transposed into the same layout
};

// The two nearest of four corner keypoints with their softmax shares.
struct TwoCorners {
    std::int64_t i1 = -1, i2 = -1;  // slots 0..3 in the corner array
    double p1 = 0, p2 = 0;
};

TwoCorners label_confidence(double px, double py, const Tensor& corners, double kappa);

std::pair<GroundTruth, LabelConfidence> make_gt_and_confidence(const KeypointSet& kps_a,
                                                               const KeypointSet& kps_b,
                                                               const CameraFrame& frame_a,
                                                               const CameraFrame& frame_b,
                                                               double kappa);

struct LossTerm {
    Var value;
    bool degenerate = false;  // an averaging set was empty
};

// Confidence-weighted binary cross entropy over positive and negative label
// sets, each mean-normalized by its own size.
LossTerm loss_entire(Tape& t, Var g, const Tensor& gt, const Tensor& lc);

// The same loss after restricting labels to the co-visible index lists.
LossTerm loss_overlap(Tape& t, Var g_oa, const std::vector<std::int64_t>& idx_a,
                      const std::vector<std::int64_t>& idx_b, const Tensor& gt, const Tensor& lc);

// Mean squared offset error over matches whose true offset stays within eta
// (infinity norm); the rest are dropped.
LossTerm loss_offset(Tape& t, const std::vector<Var>& theta, const Tensor& theta_gt, double eta);

// Mean binary cross entropy of the refinement confidences.
LossTerm loss_confidence(Tape& t, const std::vector<Var>& conf, const Tensor& conf_gt);

// Confidence labels induced by eta: within-threshold offsets are positive.
Tensor confidence_labels(const Tensor& theta_gt, double eta);

struct LossWeights {
    double a1 = 1.0, a2 = 1.0, a3 = 0.2, a4 = 0.2;
};

Var total_loss(Tape& t, Var le, Var la, Var lo, Var lc, const LossWeights& w);

}  // namespace covis
