#pragma once

#include <string>
#include <vector>

#include "covis/config.hpp"
#include "covis/geometry.hpp"
#include "covis/matching.hpp"
#include "covis/oapm.hpp"
#include "covis/supervision.hpp"

namespace covis {

struct PipelineConfig {
    std::int64_t c_fine = 128, c_coarse = 256;
    std::int64_t l1 = 2, l2 = 2, l3 = 2;
    std::int64_t gamma = 4;
    int close_k = 10;
    double rho = 0.2;
    int window = 5;
    double kappa = 0.01;
    double eta = 8.0;
    LossWeights loss;
    bool pos_encoding = true;
    std::int64_t seed = 0;
};

void check_config(const PipelineConfig& cfg);
Dict config_to_dict(const PipelineConfig& cfg);
PipelineConfig config_from_dict(const Dict& d);  // missing keys default, unknown keys rejected
PipelineConfig load_config(const std::string& path);
void save_config(const std::string& path, const PipelineConfig& cfg);

ParamStore make_weights(const PipelineConfig& cfg);

struct PipelineVars {
    BackboneVars backbone;
    std::vector<TelBlockVars> grid_blocks, covis_blocks;
    RefinerVars refiner;
};

PipelineVars bind_pipeline(TapeBinder& bind, const PipelineConfig& cfg);

struct StageTiming {
    std::string name;
    double ms = 0;
};

// One matching pass with every tape handle still live, for loss construction.
struct ForwardGraph {
    FeatureSequence fa, fb;  // encoder outputs over the full grids
    Var fine_a, fine_b;      // half-resolution feature maps
    Assignment full, oa;
    Tensor pm_a, pm_b;  // probability maps as [gh, gw] grids
    double lambda_a = 0, lambda_b = 0;
    BinaryGrid raw_a, raw_b;  // thresholded, before close and fill
    BinaryGrid cm_a, cm_b;
    bool degenerate_a = false, degenerate_b = false;
    CoVisible cov_a, cov_b;
    KeypointSet kps;
    CoarseMatches coarse;
    Refined refined;
    std::int64_t gh = 0, gw = 0;
};

ForwardGraph forward_graph(Tape& t, const Image& a, const Image& b, const PipelineVars& vars,
                           const PipelineConfig& cfg, std::vector<StageTiming>* timing = nullptr);

struct MatchResult {
    FineMatchSet fine;
    CoarseMatches coarse;  // filtered in step with fine
    Tensor theta;          // [t, 2] refinement offsets
    Tensor pm_a, pm_b;
    BinaryGrid cm_a, cm_b;
    Tensor g, g_oa;
    std::vector<std::int64_t> idx_a, idx_b;
    bool degenerate_a = false, degenerate_b = false;
    std::int64_t dropped = 0;  // matches whose refined point left the B mask
    std::vector<StageTiming> timing;
    std::int64_t gh = 0, gw = 0;
};

// Deterministic full pass; refined matches that escape either co-visibility
// mask are dropped so the exported set stays mask-consistent.
MatchResult forward(const Image& a, const Image& b, const ParamStore& store,
                    const PipelineConfig& cfg);

struct SynthPair {
    Image a, b;
    CameraFrame frame_a, frame_b;
    Homography h;  // exact pixel map A -> B
};

SynthPair synth_translation_pair(std::int64_t size, double dx, double dy, std::uint64_t seed);
SynthPair synth_rotation_pair(std::int64_t size, double angle, std::uint64_t seed);
std::vector<SynthPair> synth_dataset(std::int64_t count, std::int64_t size, std::uint64_t seed);

struct StepLosses {
    double entire = 0, overlap = 0, offset = 0, confidence = 0, total = 0;
};

struct TrainResult {
    ParamStore weights;
    std::vector<StepLosses> curve;
};

// Adam on the total loss, cycling through the dataset; deterministic for a
// fixed config seed. NaN anywhere aborts with the step and loss breakdown.
TrainResult train_toy(const std::vector<SynthPair>& data, const PipelineConfig& cfg,
                      std::int64_t steps, double lr);

// Side-by-side overlay: both images, keypoint dots, one line per match.
RgbImage render_matches(const Image& a, const Image& b, const FineMatchSet& fm);

}  // namespace covis
