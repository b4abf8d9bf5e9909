#include "covis/backbone.hpp"

#include <cmath>

#include "covis/attention.hpp"

namespace covis {

namespace {
Tensor he_conv(std::int64_t cout, std::int64_t cin, Rng& rng) {
    double sd = std::sqrt(2.0 / static_cast<double>(cin * 9));
    return init_normal({cout, cin, 3, 3}, rng, sd);
}
}  // namespace

void register_backbone(ParamStore& store, std::int64_t c_fine, std::int64_t c_coarse, Rng& rng) {
    store.add("backbone.conv1.w", he_conv(c_fine, 1, rng));
    store.add("backbone.conv1.b", Tensor::zeros({c_fine}));
    store.add("backbone.conv2.w", he_conv(c_fine, c_fine, rng));
    store.add("backbone.conv2.b", Tensor::zeros({c_fine}));
    store.add("backbone.conv3.w", he_conv(c_coarse, c_fine, rng));
    store.add("backbone.conv3.b", Tensor::zeros({c_coarse}));
    store.add("backbone.conv4.w", he_conv(c_coarse, c_coarse, rng));
    store.add("backbone.conv4.b", Tensor::zeros({c_coarse}));
}

BackboneVars bind_backbone(TapeBinder& bind) {
    BackboneVars p;
    p.w1 = bind("backbone.conv1.w");
    p.b1 = bind("backbone.conv1.b");
    p.w2 = bind("backbone.conv2.w");
    p.b2 = bind("backbone.conv2.b");
    p.w3 = bind("backbone.conv3.w");
    p.b3 = bind("backbone.conv3.b");
    p.w4 = bind("backbone.conv4.w");
    p.b4 = bind("backbone.conv4.b");
    return p;
}

FeaturePyramid encode_one(Tape& t, const Image& img, const BackboneVars& p) {
    if (img.w % 8 != 0 || img.h % 8 != 0)
        throw error("encode: image dims " + std::to_string(img.w) + "x" + std::to_string(img.h) +
                    " not divisible by 8; pad the image first");
    if (img.w < 16 || img.h < 16) throw error("encode: image must be at least 16x16");
    Tensor in({1, img.h, img.w});
    in.data = img.pix;
    Var x = t.constant(std::move(in));
    Var f1 = t.gelu(t.conv2d_3x3(x, p.w1, p.b1, 2));
    Var fine = t.gelu(t.conv2d_3x3(f1, p.w2, p.b2, 1));
    Var f3 = t.gelu(t.conv2d_3x3(fine, p.w3, p.b3, 2));
    Var coarse = t.gelu(t.conv2d_3x3(f3, p.w4, p.b4, 2));
    return {fine, coarse};
}

KeypointSet grid_keypoints(std::int64_t h, std::int64_t w) {
    if (h % 8 != 0 || w % 8 != 0)
        throw error("grid_keypoints: dims must be divisible by 8");
    KeypointSet ks;
    ks.gh = h / 8;
    ks.gw = w / 8;
    ks.coords = Tensor({ks.gh * ks.gw, 2});
    for (std::int64_t r = 0; r < ks.gh; ++r)
        for (std::int64_t c = 0; c < ks.gw; ++c) {
            std::int64_t i = r * ks.gw + c;
            ks.coords.at(i, 0) = static_cast<double>(8 * c + 4);
            ks.coords.at(i, 1) = static_cast<double>(8 * r + 4);
        }
    return ks;
}

void check_pair_dims(const Image& a, const Image& b) {
    if (a.w != b.w || a.h != b.h)
        throw error("image pair dims differ: " + std::to_string(a.w) + "x" + std::to_string(a.h) +
                    " vs " + std::to_string(b.w) + "x" + std::to_string(b.h));
}

}  // namespace covis
