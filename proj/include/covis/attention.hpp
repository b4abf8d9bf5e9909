#pragma once

#include <utility>
#include <vector>

#include "covis/tape.hpp"
#include "covis/weights.hpp"

namespace covis {

// Token sequence [N x C] with the coarse-grid shape Seq2Img needs; sequences
// of co-visible keypoints carry no grid.
struct FeatureSequence {
    Var feat;
    std::int64_t gh = 0, gw = 0;

    bool has_grid() const { return gh > 0 && gw > 0; }
};

struct EncoderLayerVars {
    Var wq, wk, wv;        // [c,c] projections, no bias
    Var exp_w, exp_b;      // [2c, gamma*c], [gamma*c]
    Var dw_k, dw_b;        // [gamma*c,3,3], [gamma*c]; unset when depthwise is off
    Var con_w, con_b;      // [gamma*c, c], [c]
    bool use_depthwise = false;
};

// One interleaving block: self(A), self(B), cross(A<-B), cross(B<-A').
struct TelBlockVars {
    EncoderLayerVars self_a, self_b, cross_a, cross_b;
};

// phi(Q) (phi(K)^T V) with phi = elu + 1, built in exactly that association
// order so cost stays linear in sequence length.
Var linear_attention(Tape& t, Var u, Var r, const EncoderLayerVars& p);

// U + contract(GELU(Img2Seq(DW(Seq2Img(expand([U||M])))))); the Seq2Img/DW/
// Img2Seq stage drops out when depthwise is off.
FeatureSequence ffn(Tape& t, const FeatureSequence& u, Var m, const EncoderLayerVars& p);

FeatureSequence tel(Tape& t, const FeatureSequence& u, const FeatureSequence& r,
                    const EncoderLayerVars& p);

// Interleaves blocks over the whole keypoint grids of both images. The fourth
// update of each block consumes the cross-updated A sequence.
std::pair<FeatureSequence, FeatureSequence> eitm(Tape& t, FeatureSequence fa, FeatureSequence fb,
                                                 const std::vector<TelBlockVars>& blocks);

// Same schedule over co-visible tokens only: no grids, depthwise must be off.
std::pair<FeatureSequence, FeatureSequence> oatm(Tape& t, FeatureSequence fa, FeatureSequence fb,
                                                 const std::vector<TelBlockVars>& blocks);

// Fixed 2-D sinusoidal positional encoding as an [gh*gw, c] sequence; c must
// be divisible by 4.
Tensor positional_encoding(std::int64_t gh, std::int64_t gw, std::int64_t c);

// initializers
Tensor init_normal(std::vector<std::int64_t> shape, Rng& rng, double stddev);
Tensor init_orthogonal(std::int64_t n, Rng& rng, double gain);
Tensor init_delta_dw(std::int64_t c);

// Registers one layer's tensors under "<prefix>." and binds them to a tape.
void register_encoder_layer(ParamStore& store, const std::string& prefix, std::int64_t c,
                            std::int64_t gamma, bool use_depthwise, Rng& rng);
EncoderLayerVars bind_encoder_layer(TapeBinder& bind, const std::string& prefix,
                                    bool use_depthwise);

// Same for a whole block: "<prefix>.self_a" .. "<prefix>.cross_b".
void register_tel_block(ParamStore& store, const std::string& prefix, std::int64_t c,
                        std::int64_t gamma, bool use_depthwise, Rng& rng);
TelBlockVars bind_tel_block(TapeBinder& bind, const std::string& prefix, bool use_depthwise);

}  // namespace covis
