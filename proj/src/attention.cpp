#include "covis/attention.hpp"

#include <cmath>

namespace covis {

Var linear_attention(Tape& t, Var u, Var r, const EncoderLayerVars& p) {
    Var q = t.matmul(u, p.wq);
    Var k = t.matmul(r, p.wk);
    Var v = t.matmul(r, p.wv);
    Var fq = t.elu_plus_one(q);
    Var fk = t.elu_plus_one(k);
    Var kv = t.matmul(t.transpose(fk), v);  // [c,c] first, then [n,c]
    return t.matmul(fq, kv);
}

FeatureSequence ffn(Tape& t, const FeatureSequence& u, Var m, const EncoderLayerVars& p) {
    Var x = t.concat_cols(u.feat, m);
    Var h = t.add_bias(t.matmul(x, p.exp_w), p.exp_b);
    if (p.use_depthwise) {
        if (!u.has_grid())
            throw error("ffn: depthwise stage needs a grid shape on the input sequence");
        Var img = t.seq2img(h, u.gh, u.gw);
        h = t.img2seq(t.depthwise_3x3(img, p.dw_k, p.dw_b));
    }
    h = t.gelu(h);
    Var o = t.add_bias(t.matmul(h, p.con_w), p.con_b);
    FeatureSequence out = u;
    out.feat = t.add(u.feat, o);
    return out;
}

FeatureSequence tel(Tape& t, const FeatureSequence& u, const FeatureSequence& r,
                    const EncoderLayerVars& p) {
    return ffn(t, u, linear_attention(t, u.feat, r.feat, p), p);
}

std::pair<FeatureSequence, FeatureSequence> eitm(Tape& t, FeatureSequence fa, FeatureSequence fb,
                                                 const std::vector<TelBlockVars>& blocks) {
    for (const auto& blk : blocks) {
        fa = tel(t, fa, fa, blk.self_a);
        fb = tel(t, fb, fb, blk.self_b);
        FeatureSequence fa_next = tel(t, fa, fb, blk.cross_a);
        fb = tel(t, fb, fa_next, blk.cross_b);
        fa = fa_next;
    }
    return {fa, fb};
}

std::pair<FeatureSequence, FeatureSequence> oatm(Tape& t, FeatureSequence fa, FeatureSequence fb,
                                                 const std::vector<TelBlockVars>& blocks) {
    if (fa.has_grid() || fb.has_grid())
        throw error("oatm: co-visible sequences must not carry a grid shape");
    for (const auto& blk : blocks)
        for (const EncoderLayerVars* p : {&blk.self_a, &blk.self_b, &blk.cross_a, &blk.cross_b})
            if (p->use_depthwise) throw error("oatm: depthwise must be off");
    return eitm(t, std::move(fa), std::move(fb), blocks);
}

Tensor positional_encoding(std::int64_t gh, std::int64_t gw, std::int64_t c) {
    if (c % 4 != 0) throw error("positional_encoding: channels must be divisible by 4");
    Tensor pe({gh * gw, c});
    std::int64_t q = c / 4;
    for (std::int64_t y = 0; y < gh; ++y)
        for (std::int64_t x = 0; x < gw; ++x) {
            std::int64_t row = y * gw + x;
            for (std::int64_t i = 0; i < q; ++i) {
                double omega = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(q));
                pe.at(row, 4 * i + 0) = std::sin(x * omega);
                pe.at(row, 4 * i + 1) = std::cos(x * omega);
                pe.at(row, 4 * i + 2) = std::sin(y * omega);
                pe.at(row, 4 * i + 3) = std::cos(y * omega);
            }
        }
    return pe;
}

Tensor init_normal(std::vector<std::int64_t> shape, Rng& rng, double stddev) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = rng.normal() * stddev;
    return t;
}

Tensor init_orthogonal(std::int64_t n, Rng& rng, double gain) {
    // modified Gram-Schmidt on a Gaussian matrix
    Tensor m = init_normal({n, n}, rng, 1.0);
    for (std::int64_t j = 0; j < n; ++j) {
        for (std::int64_t p = 0; p < j; ++p) {
            double dot = 0.0;
            for (std::int64_t i = 0; i < n; ++i) dot += m.at(i, j) * m.at(i, p);
            for (std::int64_t i = 0; i < n; ++i) m.at(i, j) -= dot * m.at(i, p);
        }
        double norm = 0.0;
        for (std::int64_t i = 0; i < n; ++i) norm += m.at(i, j) * m.at(i, j);
        norm = std::sqrt(norm);
        if (norm < 1e-12) throw invariant_error("init_orthogonal: rank-deficient draw");
        for (std::int64_t i = 0; i < n; ++i) m.at(i, j) /= norm;
    }
    for (auto& v : m.data) v *= gain;
    return m;
}

Tensor init_delta_dw(std::int64_t c) {
    Tensor k({c, 3, 3});
    for (std::int64_t ch = 0; ch < c; ++ch) k.at(ch, 1, 1) = 1.0;
    return k;
}

void register_encoder_layer(ParamStore& store, const std::string& prefix, std::int64_t c,
                            std::int64_t gamma, bool use_depthwise, Rng& rng) {
    std::int64_t hidden = gamma * c;
    store.add(prefix + ".wq", init_orthogonal(c, rng, 0.1));
    store.add(prefix + ".wk", init_orthogonal(c, rng, 0.1));
    store.add(prefix + ".wv", init_orthogonal(c, rng, 0.1));
    store.add(prefix + ".expand.w",
              init_normal({2 * c, hidden}, rng, 1.0 / std::sqrt(static_cast<double>(2 * c))));
    store.add(prefix + ".expand.b", Tensor::zeros({hidden}));
    if (use_depthwise) {
        store.add(prefix + ".dw.k", init_delta_dw(hidden));
        store.add(prefix + ".dw.b", Tensor::zeros({hidden}));
    }
    store.add(prefix + ".contract.w", Tensor::zeros({hidden, c}));
    store.add(prefix + ".contract.b", Tensor::zeros({c}));
}

EncoderLayerVars bind_encoder_layer(TapeBinder& bind, const std::string& prefix,
                                    bool use_depthwise) {
    EncoderLayerVars p;
    p.wq = bind(prefix + ".wq");
    p.wk = bind(prefix + ".wk");
    p.wv = bind(prefix + ".wv");
    p.exp_w = bind(prefix + ".expand.w");
    p.exp_b = bind(prefix + ".expand.b");
    if (use_depthwise) {
        p.dw_k = bind(prefix + ".dw.k");
        p.dw_b = bind(prefix + ".dw.b");
    }
    p.con_w = bind(prefix + ".contract.w");
    p.con_b = bind(prefix + ".contract.b");
    p.use_depthwise = use_depthwise;
    return p;
}

void register_tel_block(ParamStore& store, const std::string& prefix, std::int64_t c,
                        std::int64_t gamma, bool use_depthwise, Rng& rng) {
    for (const char* part : {".self_a", ".self_b", ".cross_a", ".cross_b"})
        register_encoder_layer(store, prefix + part, c, gamma, use_depthwise, rng);
}

TelBlockVars bind_tel_block(TapeBinder& bind, const std::string& prefix, bool use_depthwise) {
    TelBlockVars blk;
    blk.self_a = bind_encoder_layer(bind, prefix + ".self_a", use_depthwise);
    blk.self_b = bind_encoder_layer(bind, prefix + ".self_b", use_depthwise);
    blk.cross_a = bind_encoder_layer(bind, prefix + ".cross_a", use_depthwise);
    blk.cross_b = bind_encoder_layer(bind, prefix + ".cross_b", use_depthwise);
    return blk;
}

}  // namespace covis
