#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "covis/pipeline.hpp"

using namespace covis;

namespace {

PipelineConfig resolve_config(const std::string& flag) {
    if (!flag.empty()) return load_config(flag);
    const char* env = std::getenv("COVIS_CONFIG");
    if (env && *env) return load_config(env);
    return PipelineConfig{};
}

ParamStore resolve_weights(const std::string& flag, const PipelineConfig& cfg) {
    if (!flag.empty()) return load_weights(flag);
    std::printf("no weights given; using fresh seed-%lld initialization\n",
                static_cast<long long>(cfg.seed));
    return make_weights(cfg);
}

std::string out_path(const std::string& dir, const std::string& name) {
    std::filesystem::create_directories(dir);
    return (std::filesystem::path(dir) / name).string();
}

Image grid_to_image(const Tensor& t) {
    Image img = Image::blank(t.dim(1), t.dim(0));
    for (std::int64_t r = 0; r < t.dim(0); ++r)
        for (std::int64_t c = 0; c < t.dim(1); ++c) img.at(r, c) = t.at(r, c);
    return img;
}

Image mask_to_image(const BinaryGrid& g) {
    Image img = Image::blank(g.gw, g.gh);
    for (std::int64_t r = 0; r < g.gh; ++r)
        for (std::int64_t c = 0; c < g.gw; ++c) img.at(r, c) = g.at(r, c) ? 1.0 : 0.0;
    return img;
}

void draw_ray(RgbImage& img, double x0, double y0, double x1, double y1, std::uint8_t r,
              std::uint8_t g, std::uint8_t b) {
    std::int64_t steps =
        1 + static_cast<std::int64_t>(std::max(std::abs(x1 - x0), std::abs(y1 - y0)));
    for (std::int64_t s = 0; s <= steps; ++s) {
        double f = static_cast<double>(s) / static_cast<double>(steps);
        std::int64_t x = static_cast<std::int64_t>(std::lround(x0 + f * (x1 - x0)));
        std::int64_t y = static_cast<std::int64_t>(std::lround(y0 + f * (y1 - y0)));
        if (x >= 0 && x < img.w && y >= 0 && y < img.h) img.set(y, x, r, g, b);
    }
}

int cmd_match(const std::string& pa, const std::string& pb, const std::string& wflag,
              const std::string& cflag, const std::string& out, double rho_override, bool has_rho,
              std::int64_t seed_override, bool has_seed, bool overlay) {
    PipelineConfig cfg = resolve_config(cflag);
    if (has_rho) cfg.rho = rho_override;
    if (has_seed) cfg.seed = seed_override;
    check_config(cfg);
    Image a = load_image(pa);
    Image b = load_image(pb);
    ParamStore store = resolve_weights(wflag, cfg);
    MatchResult r = forward(a, b, store, cfg);
    save_matches(out_path(out, "matches.txt"), to_match_file(r.fine, a.w, a.h));
    if (overlay) save_ppm(out_path(out, "overlay.ppm"), render_matches(a, b, r.fine));
    if (r.degenerate_a || r.degenerate_b)
        std::printf("note: empty covisibility prediction, fell back to the full grid\n");
    std::printf("matches=%lld dropped=%lld covisible_a=%lld covisible_b=%lld\n",
                static_cast<long long>(r.fine.pa.dim(0)), static_cast<long long>(r.dropped),
                static_cast<long long>(r.idx_a.size()), static_cast<long long>(r.idx_b.size()));
    return 0;
}

int cmd_masks(const std::string& pa, const std::string& pb, const std::string& wflag,
              const std::string& cflag, const std::string& out, double rho_override, bool has_rho,
              std::int64_t seed_override, bool has_seed) {
    PipelineConfig cfg = resolve_config(cflag);
    if (has_rho) cfg.rho = rho_override;
    if (has_seed) cfg.seed = seed_override;
    check_config(cfg);
    Image a = load_image(pa);
    Image b = load_image(pb);
    ParamStore store = resolve_weights(wflag, cfg);
    MatchResult r = forward(a, b, store, cfg);
    save_pgm(out_path(out, "pm_a.pgm"), grid_to_image(r.pm_a));
    save_pgm(out_path(out, "pm_b.pgm"), grid_to_image(r.pm_b));
    save_pgm(out_path(out, "cm_a.pgm"), mask_to_image(r.cm_a));
    save_pgm(out_path(out, "cm_b.pgm"), mask_to_image(r.cm_b));
    std::printf("grid=%lldx%lld covisible_a=%lld covisible_b=%lld\n",
                static_cast<long long>(r.gh), static_cast<long long>(r.gw),
                static_cast<long long>(r.cm_a.count()), static_cast<long long>(r.cm_b.count()));
    return 0;
}

int cmd_eval_ccm(const std::string& list_path, std::int64_t w, std::int64_t h,
                 const std::string& out) {
    if (w < 1 || h < 1) throw error("eval-ccm: image dims must be positive");
    std::ifstream in(list_path);
    if (!in) throw error("eval-ccm: cannot read list: " + list_path);
    std::vector<double> errs;
    std::string est_path, gt_path;
    while (in >> est_path >> gt_path) {
        Homography est = load_homography(est_path);
        Homography gt = load_homography(gt_path);
        errs.push_back(ccm(est, gt, w, h));
    }
    if (errs.empty()) throw error("eval-ccm: list holds no pairs: " + list_path);
    double n = static_cast<double>(errs.size());
    double f1 = 0, f3 = 0, f5 = 0, mean = 0;
    for (double e : errs) {
        mean += e / n;
        f1 += e <= 1.0 ? 1.0 / n : 0.0;
        f3 += e <= 3.0 ? 1.0 / n : 0.0;
        f5 += e <= 5.0 ? 1.0 / n : 0.0;
    }
    std::printf("pairs=%zu mean=%.4f frac@1px=%.4f frac@3px=%.4f frac@5px=%.4f\n", errs.size(),
                mean, f1, f3, f5);
    if (!out.empty()) {
        Dict d;
        d.set_i("pairs", static_cast<std::int64_t>(errs.size()));
        d.set_f("mean", mean);
        d.set_f("frac_1px", f1);
        d.set_f("frac_3px", f3);
        d.set_f("frac_5px", f5);
        d.set_list("errors", errs);
        save_dict(out_path(out, "ccm_report.txt"), d);
    }
    return 0;
}

int cmd_eval_auc(const std::string& errs_path, std::vector<double> thresholds,
                 const std::string& out) {
    if (thresholds.empty()) thresholds = {5.0, 10.0, 20.0};
    std::ifstream in(errs_path);
    if (!in) throw error("eval-auc: cannot read errors: " + errs_path);
    std::vector<double> errs;
    std::string tok;
    while (in >> tok) errs.push_back(parse_f(tok, "pose error"));
    std::vector<double> auc = pose_auc(errs, thresholds);
    for (std::size_t i = 0; i < auc.size(); ++i)
        std::printf("auc@%g=%.6f%s", thresholds[i], auc[i], i + 1 == auc.size() ? "\n" : " ");
    if (!out.empty()) {
        Dict d;
        d.set_i("errors", static_cast<std::int64_t>(errs.size()));
        d.set_list("thresholds", thresholds);
        d.set_list("auc", auc);
        save_dict(out_path(out, "auc_report.txt"), d);
    }
    return 0;
}

int cmd_synth(std::int64_t count, std::int64_t size, std::int64_t seed, const std::string& out) {
    if (count < 1) throw error("synth: count must be positive");
    std::vector<SynthPair> data = synth_dataset(count, size, static_cast<std::uint64_t>(seed));
    for (std::int64_t i = 0; i < count; ++i) {
        std::string stem = "pair" + std::to_string(i);
        const SynthPair& p = data[static_cast<std::size_t>(i)];
        save_pgm(out_path(out, stem + "_a.pgm"), p.a);
        save_pgm(out_path(out, stem + "_b.pgm"), p.b);
        save_frame(out_path(out, stem + "_frame_a.txt"), p.frame_a, stem + "_depth_a.pgm");
        save_frame(out_path(out, stem + "_frame_b.txt"), p.frame_b, stem + "_depth_b.pgm");
        save_homography(out_path(out, stem + "_h.txt"), p.h);
    }
    Dict d;
    d.set_i("count", count);
    d.set_i("size", size);
    d.set_i("seed", seed);
    save_dict(out_path(out, "dataset.txt"), d);
    std::printf("wrote %lld pairs to %s\n", static_cast<long long>(count), out.c_str());
    return 0;
}

int cmd_train(std::int64_t count, std::int64_t size, std::int64_t steps, double lr,
              const std::string& cflag, std::int64_t seed_override, bool has_seed,
              const std::string& out) {
    PipelineConfig cfg = resolve_config(cflag);
    if (has_seed) cfg.seed = seed_override;
    check_config(cfg);
    std::vector<SynthPair> data =
        synth_dataset(count, size, static_cast<std::uint64_t>(cfg.seed));
    TrainResult res = train_toy(data, cfg, steps, lr);
    save_weights(out_path(out, "weights.txt"), res.weights);
    Dict d;
    d.set_i("steps", steps);
    d.set_f("lr", lr);
    d.set_f("initial_total", res.curve.front().total);
    d.set_f("final_total", res.curve.back().total);
    for (std::size_t i = 0; i < res.curve.size(); ++i) {
        const StepLosses& s = res.curve[i];
        d.set_list("step" + std::to_string(i),
                   {s.entire, s.overlap, s.offset, s.confidence, s.total});
    }
    save_dict(out_path(out, "losses.txt"), d);
    std::printf("trained %lld steps: total %.6f -> %.6f\n", static_cast<long long>(steps),
                res.curve.front().total, res.curve.back().total);
    return 0;
}

int cmd_dump_attention(const std::string& pa, const std::string& pb, const std::string& wflag,
                       const std::string& cflag, std::int64_t layer, const std::string& query,
                       const std::string& kind, std::int64_t seed_override, bool has_seed,
                       const std::string& out) {
    PipelineConfig cfg = resolve_config(cflag);
    if (has_seed) cfg.seed = seed_override;
    check_config(cfg);
    if (layer < 0 || layer >= cfg.l1)
        throw error("dump-attention: layer " + std::to_string(layer) + " outside 0.." +
                    std::to_string(cfg.l1 - 1));
    if (kind != "self" && kind != "cross") throw error("dump-attention: kind must be self or cross");
    auto comma = query.find(',');
    if (comma == std::string::npos) throw error("dump-attention: query must be 'x,y'");
    double qx = parse_f(query.substr(0, comma), "query x");
    double qy = parse_f(query.substr(comma + 1), "query y");

    Image a = load_image(pa);
    Image b = load_image(pb);
    check_pair_dims(a, b);
    if (qx < 0 || qx >= static_cast<double>(a.w) || qy < 0 || qy >= static_cast<double>(a.h))
        throw error("dump-attention: query keypoint outside the image");
    ParamStore store = resolve_weights(wflag, cfg);

    Tape t;
    TapeBinder bind{t, store, false};
    PipelineVars vars = bind_pipeline(bind, cfg);
    FeaturePyramid fpa = encode_one(t, a, vars.backbone);
    FeaturePyramid fpb = encode_one(t, b, vars.backbone);
    std::int64_t gh = a.h / 8, gw = a.w / 8;
    Var sa = t.img2seq(fpa.coarse);
    Var sb = t.img2seq(fpb.coarse);
    if (cfg.pos_encoding) {
        Tensor pe = positional_encoding(gh, gw, cfg.c_coarse);
        sa = t.add_const(sa, pe);
        sb = t.add_const(sb, pe);
    }
    std::vector<TelBlockVars> prefix(vars.grid_blocks.begin(), vars.grid_blocks.begin() + layer);
    auto [fa, fb] = eitm(t, {sa, gh, gw}, {sb, gh, gw}, prefix);
    const TelBlockVars& blk = vars.grid_blocks[static_cast<std::size_t>(layer)];

    Var qseq, kseq;
    if (kind == "self") {
        qseq = t.matmul(fa.feat, blk.self_a.wq);
        kseq = t.matmul(fa.feat, blk.self_a.wk);
    } else {
        FeatureSequence a2 = tel(t, fa, fa, blk.self_a);
        FeatureSequence b2 = tel(t, fb, fb, blk.self_b);
        qseq = t.matmul(a2.feat, blk.cross_a.wq);
        kseq = t.matmul(b2.feat, blk.cross_a.wk);
    }
    Var fq = t.elu_plus_one(qseq);
    Var fk = t.elu_plus_one(kseq);
    std::int64_t qc = static_cast<std::int64_t>(qx / 8.0);
    std::int64_t qr = static_cast<std::int64_t>(qy / 8.0);
    std::int64_t row = qr * gw + qc;
    Var scores = t.matmul(t.gather_rows(fq, {row}), t.transpose(fk));
    Tensor sv = t.val(scores);
    std::int64_t n = sv.dim(1);
    double total = 0;
    for (std::int64_t j = 0; j < n; ++j) total += sv.at(0, j);
    std::vector<double> weight(static_cast<std::size_t>(n));
    for (std::int64_t j = 0; j < n; ++j) weight[static_cast<std::size_t>(j)] = sv.at(0, j) / total;
    double row_sum = 0;
    for (double v : weight) row_sum += v;

    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    for (std::int64_t j = 0; j < n; ++j) order[static_cast<std::size_t>(j)] = j;
    std::stable_sort(order.begin(), order.end(), [&](std::int64_t x, std::int64_t y) {
        return weight[static_cast<std::size_t>(x)] > weight[static_cast<std::size_t>(y)];
    });
    std::int64_t top = std::min<std::int64_t>(32, n);

    RgbImage canvas = RgbImage::blank(a.w + b.w, std::max(a.h, b.h));
    for (std::int64_t y = 0; y < a.h; ++y)
        for (std::int64_t x = 0; x < a.w; ++x) {
            auto v = static_cast<std::uint8_t>(std::lround(a.at(y, x) * 255.0));
            canvas.set(y, x, v, v, v);
        }
    for (std::int64_t y = 0; y < b.h; ++y)
        for (std::int64_t x = 0; x < b.w; ++x) {
            auto v = static_cast<std::uint8_t>(std::lround(b.at(y, x) * 255.0));
            canvas.set(y, a.w + x, v, v, v);
        }
    double wmax = weight[static_cast<std::size_t>(order[0])];
    double panel = kind == "self" ? 0.0 : static_cast<double>(a.w);
    for (std::int64_t s = 0; s < top; ++s) {
        std::int64_t j = order[static_cast<std::size_t>(s)];
        double inten = wmax > 0 ? weight[static_cast<std::size_t>(j)] / wmax : 0.0;
        double tx = panel + static_cast<double>(8 * (j % gw) + 4);
        double ty = static_cast<double>(8 * (j / gw) + 4);
        draw_ray(canvas, 8.0 * static_cast<double>(qc) + 4.0, 8.0 * static_cast<double>(qr) + 4.0,
                 tx, ty, static_cast<std::uint8_t>(std::lround(255.0 * inten)),
                 static_cast<std::uint8_t>(std::lround(200.0 * inten)), 30);
    }
    save_ppm(out_path(out, "attention.ppm"), canvas);

    double top_min = weight[static_cast<std::size_t>(order[static_cast<std::size_t>(top - 1)])];
    double top_max = wmax;
    Dict d;
    d.set("kind", kind);
    d.set_i("layer", layer);
    d.set_i("cell", row);
    d.set_f("row_sum", row_sum);
    d.set_i("top_count", top);
    d.set_f("top_min", top_min);
    d.set_f("top_max", top_max);
    save_dict(out_path(out, "attention_report.txt"), d);
    std::printf("kind=%s layer=%lld cell=%lld row_sum=%s top_min=%s top_max=%s\n", kind.c_str(),
                static_cast<long long>(layer), static_cast<long long>(row),
                format_g17(row_sum).c_str(), format_g17(top_min).c_str(),
                format_g17(top_max).c_str());
    return 0;
}

// named invariant suite

void require(bool ok, const std::string& what) {
    if (!ok) throw invariant_error(what);
}

Tensor rand_t(Rng& rng, std::vector<std::int64_t> shape, double lo = -1.0, double hi = 1.0) {
    Tensor t(std::move(shape));
    for (auto& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

PipelineConfig verify_config() {
    PipelineConfig cfg;
    cfg.c_fine = 8;
    cfg.c_coarse = 16;
    cfg.l1 = cfg.l2 = cfg.l3 = 1;
    cfg.gamma = 2;
    cfg.close_k = 3;
    cfg.window = 3;
    cfg.rho = 0.0;
    cfg.seed = 77;
    return cfg;
}

struct Check {
    std::string name;
    std::function<void()> fn;
};

std::vector<Check> verify_checks() {
    std::vector<Check> cs;
    auto add = [&](std::string name, std::function<void()> fn) {
        cs.push_back({std::move(name), std::move(fn)});
    };

    add("softmax rows sum to one", [] {
        Rng rng(1);
        Tape t;
        Var s = t.softmax(t.constant(rand_t(rng, {8, 8}, -3, 3)), 1);
        for (std::int64_t r = 0; r < 8; ++r) {
            double sum = 0;
            for (std::int64_t c = 0; c < 8; ++c) sum += t.val(s).at(r, c);
            require(std::abs(sum - 1.0) < 1e-12, "row " + std::to_string(r) + " sums to " +
                                                     format_g17(sum));
        }
    });
    add("softmax columns sum to one", [] {
        Rng rng(2);
        Tape t;
        Var s = t.softmax(t.constant(rand_t(rng, {6, 7}, -3, 3)), 0);
        for (std::int64_t c = 0; c < 7; ++c) {
            double sum = 0;
            for (std::int64_t r = 0; r < 6; ++r) sum += t.val(s).at(r, c);
            require(std::abs(sum - 1.0) < 1e-12, "column sum " + format_g17(sum));
        }
    });
    add("softmax entries stay positive", [] {
        Rng rng(3);
        Tape t;
        Var s = t.softmax(t.constant(rand_t(rng, {5, 5}, -20, 20)), 1);
        for (double v : t.val(s).data) require(v > 0.0, "nonpositive entry");
    });
    add("matmul chain gradient matches finite differences", [] {
        Rng rng(4);
        double err = max_grad_rel_err({rand_t(rng, {3, 4}), rand_t(rng, {4, 2})},
                                      [](Tape& t, const std::vector<Var>& in) {
                                          return t.mean(t.gelu(t.matmul(in[0], in[1])));
                                      });
        require(err < 1e-4, "rel err " + format_g17(err));
    });
    add("gelu matches its error-function form", [] {
        Tape t;
        Tensor x({5});
        x.data = {-2.0, -0.5, 0.0, 0.7, 1.9};
        Var y = t.gelu(t.constant(x));
        for (std::int64_t i = 0; i < 5; ++i) {
            double want = 0.5 * x.at(i) * (1.0 + std::erf(x.at(i) / std::sqrt(2.0)));
            require(std::abs(t.val(y).at(i) - want) < 1e-12, "gelu mismatch");
        }
    });
    add("kernel feature map stays positive", [] {
        Rng rng(5);
        Tape t;
        Var y = t.elu_plus_one(t.constant(rand_t(rng, {4, 4}, -30, 5)));
        for (double v : t.val(y).data) require(v > 0.0, "feature map hit zero");
    });
    add("strided convolution halves the frame", [] {
        Rng rng(6);
        Tape t;
        Var y = t.conv2d_3x3(t.constant(rand_t(rng, {1, 8, 8})),
                             t.constant(rand_t(rng, {2, 1, 3, 3})),
                             t.constant(Tensor::zeros({2})), 2);
        require(t.val(y).shape == std::vector<std::int64_t>{2, 4, 4}, "bad conv shape");
    });
    add("linear attention equals its dense oracle", [] {
        Rng rng(7);
        ParamStore store;
        register_encoder_layer(store, "probe", 4, 2, false, rng);
        Tape t;
        TapeBinder bind{t, store, false};
        EncoderLayerVars p = bind_encoder_layer(bind, "probe", false);
        Tensor u = rand_t(rng, {5, 4});
        Var uv = t.constant(u);
        Var out = linear_attention(t, uv, uv, p);
        Tensor got = t.val(out);
        Tensor q = t.val(t.matmul(uv, p.wq));
        Tensor k = t.val(t.matmul(uv, p.wk));
        Tensor v = t.val(t.matmul(uv, p.wv));
        auto phi = [](double x) { return x >= 0 ? x + 1.0 : std::exp(x); };
        for (std::int64_t i = 0; i < 5; ++i) {
            std::vector<double> w(5, 0.0);
            for (std::int64_t j = 0; j < 5; ++j) {
                double s = 0;
                for (std::int64_t c = 0; c < 4; ++c) s += phi(q.at(i, c)) * phi(k.at(j, c));
                w[static_cast<std::size_t>(j)] = s;
            }
            for (std::int64_t c = 0; c < 4; ++c) {
                double want = 0;
                for (std::int64_t j = 0; j < 5; ++j)
                    want += w[static_cast<std::size_t>(j)] * v.at(j, c);
                require(std::abs(got.at(i, c) - want) < 1e-9, "dense oracle mismatch");
            }
        }
    });
    add("positional encoding stays within unit range", [] {
        Tensor pe = positional_encoding(4, 6, 16);
        for (double v : pe.data) require(v >= -1.0 && v <= 1.0, "encoding out of range");
    });
    add("encoder layer preserves sequence shape", [] {
        Rng rng(8);
        ParamStore store;
        register_encoder_layer(store, "probe", 4, 2, false, rng);
        Tape t;
        TapeBinder bind{t, store, false};
        EncoderLayerVars p = bind_encoder_layer(bind, "probe", false);
        FeatureSequence seq{t.constant(rand_t(rng, {6, 4})), 0, 0};
        FeatureSequence out = tel(t, seq, seq, p);
        require(t.val(out.feat).shape == std::vector<std::int64_t>{6, 4}, "shape changed");
    });
    add("feature pyramid halves and eighths the frame", [] {
        Rng rng(9);
        ParamStore store;
        register_backbone(store, 4, 8, rng);
        Tape t;
        TapeBinder bind{t, store, false};
        BackboneVars bb = bind_backbone(bind);
        Image img = Image::blank(16, 16);
        for (auto& v : img.pix) v = rng.uniform(0, 1);
        FeaturePyramid p = encode_one(t, img, bb);
        require(t.val(p.fine).shape == std::vector<std::int64_t>{4, 8, 8}, "fine scale wrong");
        require(t.val(p.coarse).shape == std::vector<std::int64_t>{8, 2, 2}, "coarse scale wrong");
    });
    add("keypoint grid sits at cell centers", [] {
        KeypointSet kps = grid_keypoints(16, 16);
        require(kps.coords.dim(0) == 4, "keypoint count");
        require(kps.coords.at(0, 0) == 4 && kps.coords.at(0, 1) == 4, "first center");
        require(kps.coords.at(1, 0) == 12 && kps.coords.at(1, 1) == 4, "row-major order");
    });
    add("assignment never exceeds its marginals", [] {
        Rng rng(10);
        Tape t;
        Var fa = t.constant(rand_t(rng, {6, 4}, -2, 2));
        Var fb = t.constant(rand_t(rng, {6, 4}, -2, 2));
        Assignment asg = score_and_assign(t, fa, fb);
        Var rows = t.softmax(asg.s, 1);
        Var cols = t.softmax(asg.s, 0);
        const Tensor& g = t.val(asg.g);
        for (std::int64_t i = 0; i < g.numel(); ++i) {
            require(g.at(i) <= t.val(rows).at(i) + 1e-15, "exceeds row softmax");
            require(g.at(i) <= t.val(cols).at(i) + 1e-15, "exceeds column softmax");
        }
    });
    add("assignment rows sum to at most one", [] {
        Rng rng(11);
        Tape t;
        Assignment asg = score_and_assign(t, t.constant(rand_t(rng, {5, 7}, -2, 2)),
                                          t.constant(rand_t(rng, {7, 7}, -2, 2)));
        for (std::int64_t r = 0; r < 5; ++r) {
            double sum = 0;
            for (std::int64_t c = 0; c < 7; ++c) sum += t.val(asg.g).at(r, c);
            require(sum <= 1.0 + 1e-12, "row sum " + format_g17(sum));
        }
    });
    add("adaptive threshold equals the arithmetic mean", [] {
        Rng rng(12);
        Tensor pm = rand_t(rng, {64}, 0, 1);
        double mean = 0;
        for (double v : pm.data) mean += v / 64.0;
        require(std::abs(adaptive_threshold(pm) - mean) < 1e-12, "threshold is not the mean");
    });
    add("adaptive threshold ignores value order", [] {
        Rng rng(13);
        Tensor pm = rand_t(rng, {33}, 0, 1);
        Tensor shuffled = pm;
        for (std::int64_t i = 32; i > 0; --i)
            std::swap(shuffled.at(i), shuffled.at(rng.uniform_int(0, i)));
        require(adaptive_threshold(pm) == adaptive_threshold(shuffled), "order changed the value");
    });
    add("closing never removes foreground", [] {
        Rng rng(14);
        for (int trial = 0; trial < 20; ++trial) {
            BinaryGrid m = BinaryGrid::blank(7, 9);
            for (auto& c : m.cells) c = rng.uniform() < 0.35 ? 1 : 0;
            BinaryGrid closed = morph_close(m, 3);
            for (std::size_t i = 0; i < m.cells.size(); ++i)
                require(m.cells[i] <= closed.cells[i], "closing dropped a cell");
        }
    });
    add("closing twice changes nothing", [] {
        Rng rng(15);
        for (int trial = 0; trial < 20; ++trial) {
            BinaryGrid m = BinaryGrid::blank(8, 8);
            for (auto& c : m.cells) c = rng.uniform() < 0.4 ? 1 : 0;
            BinaryGrid once = morph_close(m, 4);
            require(morph_close(once, 4).cells == once.cells, "closing is not idempotent");
        }
    });
    add("contour fill leaves one component", [] {
        Rng rng(16);
        for (int trial = 0; trial < 20; ++trial) {
            BinaryGrid m = BinaryGrid::blank(8, 8);
            for (auto& c : m.cells) c = rng.uniform() < 0.45 ? 1 : 0;
            if (m.count() == 0) m.set(3, 3, 1);
            ContourFill f = max_contour_fill(m);
            std::vector<std::uint8_t> seen(m.cells.size(), 0);
            std::int64_t comps = 0;
            for (std::int64_t r = 0; r < 8; ++r)
                for (std::int64_t c = 0; c < 8; ++c) {
                    if (!f.mask.at(r, c) || seen[static_cast<std::size_t>(r * 8 + c)]) continue;
                    ++comps;
                    std::vector<std::pair<std::int64_t, std::int64_t>> stack{{r, c}};
                    seen[static_cast<std::size_t>(r * 8 + c)] = 1;
                    while (!stack.empty()) {
                        auto [cr, cc] = stack.back();
                        stack.pop_back();
                        const std::int64_t dr[4] = {1, -1, 0, 0}, dc[4] = {0, 0, 1, -1};
                        for (int d = 0; d < 4; ++d) {
                            std::int64_t nr = cr + dr[d], nc = cc + dc[d];
                            if (nr < 0 || nr >= 8 || nc < 0 || nc >= 8) continue;
                            if (!f.mask.at(nr, nc) || seen[static_cast<std::size_t>(nr * 8 + nc)])
                                continue;
                            seen[static_cast<std::size_t>(nr * 8 + nc)] = 1;
                            stack.push_back({nr, nc});
                        }
                    }
                }
            require(comps == 1, std::to_string(comps) + " components");
        }
    });
    add("contour fill leaves no holes", [] {
        Rng rng(17);
        for (int trial = 0; trial < 20; ++trial) {
            BinaryGrid m = BinaryGrid::blank(8, 8);
            for (auto& c : m.cells) c = rng.uniform() < 0.45 ? 1 : 0;
            if (m.count() == 0) m.set(2, 5, 1);
            ContourFill f = max_contour_fill(m);
            std::vector<std::uint8_t> outside(m.cells.size(), 0);
            std::vector<std::pair<std::int64_t, std::int64_t>> stack;
            for (std::int64_t r = 0; r < 8; ++r)
                for (std::int64_t c = 0; c < 8; ++c)
                    if ((r == 0 || r == 7 || c == 0 || c == 7) && !f.mask.at(r, c) &&
                        !outside[static_cast<std::size_t>(r * 8 + c)]) {
                        outside[static_cast<std::size_t>(r * 8 + c)] = 1;
                        stack.push_back({r, c});
                    }
            while (!stack.empty()) {
                auto [cr, cc] = stack.back();
                stack.pop_back();
                const std::int64_t dr[4] = {1, -1, 0, 0}, dc[4] = {0, 0, 1, -1};
                for (int d = 0; d < 4; ++d) {
                    std::int64_t nr = cr + dr[d], nc = cc + dc[d];
                    if (nr < 0 || nr >= 8 || nc < 0 || nc >= 8) continue;
                    if (f.mask.at(nr, nc) || outside[static_cast<std::size_t>(nr * 8 + nc)])
                        continue;
                    outside[static_cast<std::size_t>(nr * 8 + nc)] = 1;
                    stack.push_back({nr, nc});
                }
            }
            for (std::int64_t i = 0; i < 64; ++i)
                require(f.mask.cells[static_cast<std::size_t>(i)] == 1 ||
                            outside[static_cast<std::size_t>(i)] == 1,
                        "enclosed hole survived");
        }
    });
    add("covisible selection returns sorted in-mask cells", [] {
        Rng rng(18);
        Tape t;
        KeypointSet kps = grid_keypoints(32, 32);
        BinaryGrid m = BinaryGrid::blank(4, 4);
        for (auto& c : m.cells) c = rng.uniform() < 0.5 ? 1 : 0;
        if (m.count() == 0) m.set(1, 2, 1);
        FeatureSequence seq{t.constant(rand_t(rng, {16, 4})), 4, 4};
        CoVisible cov = select_covisible(t, seq, kps, m);
        require(static_cast<std::int64_t>(cov.indices.size()) == m.count(), "count mismatch");
        for (std::size_t i = 0; i < cov.indices.size(); ++i) {
            if (i > 0) require(cov.indices[i - 1] < cov.indices[i], "indices not ascending");
            require(m.cells[static_cast<std::size_t>(cov.indices[i])] == 1, "cell outside mask");
        }
    });
    add("coarse proposals are mutually best", [] {
        Rng rng(19);
        for (int trial = 0; trial < 20; ++trial) {
            Tensor g = rand_t(rng, {8, 8}, 0, 1);
            auto got = propose_coarse(g, 0.2);
            std::vector<std::pair<std::int64_t, std::int64_t>> want;
            for (std::int64_t i = 0; i < 8; ++i) {
                std::int64_t bj = -1;
                for (std::int64_t j = 0; j < 8; ++j) {
                    bool best = true;
                    for (std::int64_t k = 0; k < 8; ++k)
                        if (k != j && g.at(i, k) >= g.at(i, j)) best = false;
                    for (std::int64_t k = 0; k < 8; ++k)
                        if (k != i && g.at(k, j) >= g.at(i, j)) best = false;
                    if (best && g.at(i, j) > 0.2) bj = j;
                }
                if (bj >= 0) want.push_back({i, bj});
            }
            require(got == want, "oracle disagrees");
            std::vector<std::uint8_t> seen_j(8, 0);
            for (auto& [i, j] : got) {
                require(!seen_j[static_cast<std::size_t>(j)], "column reused");
                seen_j[static_cast<std::size_t>(j)] = 1;
            }
        }
    });
    add("score ties produce no match", [] {
        Tensor g({2, 2});
        g.data = {0.9, 0.9, 0.1, 0.1};
        require(propose_coarse(g, 0.0).empty(), "tie matched");
    });
    add("fine cells cover two pixels each", [] {
        const std::int64_t want[10] = {0, 0, 1, 1, 2, 2, 3, 3, 4, 4};
        for (int p = 0; p < 10; ++p)
            require(fine_index(static_cast<double>(p)) == want[p], "fine index off");
    });
    add("window crops zero outside the frame", [] {
        Rng rng(20);
        Tape t;
        Var fine = t.constant(rand_t(rng, {3, 8, 8}));
        Var win = t.gather_window(fine, 0, 0, 3);
        const Tensor& w = t.val(win);
        for (std::int64_t c = 0; c < 3; ++c) {
            require(w.at(0, c) == 0.0, "corner pad nonzero");
            require(w.at(1, c) == 0.0, "edge pad nonzero");
        }
    });
    add("refinement confidence lies inside the unit interval", [] {
        Rng rng(21);
        ParamStore store;
        register_refiner(store, 4, 1, 1, rng);
        Tape t;
        TapeBinder bind{t, store, false};
        RefinerVars rv = bind_refiner(bind, 1);
        Var fine = t.constant(rand_t(rng, {4, 8, 8}));
        Tensor centers({2, 2});
        centers.at(0, 0) = 6;
        centers.at(0, 1) = 6;
        centers.at(1, 0) = 10;
        centers.at(1, 1) = 4;
        WindowSet ws = crop_windows(t, fine, centers, 3);
        Refined ref = refine(t, ws, ws, rv);
        for (Var c : ref.conf) {
            double v = t.val(c).at(0, 0);
            require(v > 0.0 && v < 1.0, "confidence " + format_g17(v));
        }
    });
    add("confidence rows carry two shares summing to one", [] {
        SynthPair pair = synth_translation_pair(32, 3, 1, 5);
        KeypointSet kps = grid_keypoints(32, 32);
        auto [gt, lc] = make_gt_and_confidence(kps, kps, pair.frame_a, pair.frame_b, 0.01);
        (void)gt;
        for (std::int64_t i = 0; i < 16; ++i) {
            std::int64_t nz = 0;
            double sum = 0;
            for (std::int64_t j = 0; j < 16; ++j) {
                if (lc.lc_a.at(i, j) != 0.0) ++nz;
                sum += lc.lc_a.at(i, j);
            }
            require(nz == 0 || (nz == 2 && std::abs(sum - 1.0) < 1e-9), "bad confidence row");
        }
    });
    add("equidistant corners split evenly", [] {
        Tensor corners({4, 2});
        corners.data = {4, 4, 12, 4, 4, 12, 12, 12};
        TwoCorners tc = label_confidence(8, 4, corners, 0.01);
        require(std::abs(tc.p1 - 0.5) < 1e-12 && std::abs(tc.p2 - 0.5) < 1e-12, "uneven split");
    });
    add("quarter pixel gap saturates the split", [] {
        Tensor corners({4, 2});
        corners.data = {2, 0, 2.25, 0, 7, 0, 8, 0};
        TwoCorners tc = label_confidence(0, 0, corners, 0.01);
        require(tc.p1 > 1.0 - 1e-10, "no saturation");
    });
    add("labels satisfy mutual nearest neighbor", [] {
        SynthPair pair = synth_translation_pair(32, 5, 2, 6);
        KeypointSet kps = grid_keypoints(32, 32);
        auto [gt, lc] = make_gt_and_confidence(kps, kps, pair.frame_a, pair.frame_b, 0.01);
        (void)lc;
        for (std::int64_t i = 0; i < 16; ++i) {
            double row = 0, col = 0;
            for (std::int64_t j = 0; j < 16; ++j) {
                row += gt.labels.at(i, j);
                col += gt.labels.at(j, i);
            }
            require(row <= 1.0 && col <= 1.0, "label repeated");
        }
    });
    add("total loss weighs components as published", [] {
        Tape t;
        Tensor one({1});
        one.at(0) = 1.0;
        Var o = t.constant(one);
        Var total = total_loss(t, o, o, o, o, {});
        require(std::abs(t.val(total).at(0) - 2.4) < 1e-12, "weights drifted");
    });
    add("homography fit recovers an exact translation", [] {
        std::vector<Match> ms;
        for (double x : {3.0, 20.0, 3.0, 27.0})
            for (double y : {5.0, 14.0, 29.0})
                ms.push_back({x, y, x + 4.0, y - 2.0, 1.0});
        Homography h = estimate_homography_dlt(ms).normalized();
        require(std::abs(h.m[0][2] - 4.0) < 1e-9 && std::abs(h.m[1][2] + 2.0) < 1e-9,
                "translation lost");
    });
    add("ransac repeats bit for bit under one seed", [] {
        Rng rng(22);
        std::vector<Match> ms;
        for (int i = 0; i < 24; ++i) {
            double x = rng.uniform(0, 32), y = rng.uniform(0, 32);
            ms.push_back({x, y, x + 3.0, y + 1.0, 1.0});
        }
        for (int i = 0; i < 8; ++i)
            ms.push_back({rng.uniform(0, 32), rng.uniform(0, 32), rng.uniform(0, 32),
                          rng.uniform(0, 32), 1.0});
        RansacResult r1 = ransac_homography(ms, 1.0, 100, 9);
        RansacResult r2 = ransac_homography(ms, 1.0, 100, 9);
        require(r1.ok && r2.ok, "ransac failed");
        require(r1.inliers == r2.inliers, "inlier set changed");
        for (int r = 0; r < 3; ++r)
            for (int c = 0; c < 3; ++c)
                require(r1.h.m[r][c] == r2.h.m[r][c], "model changed");
    });
    add("pose auc reproduces the frozen staircase value", [] {
        std::vector<double> errs = {1.0, 3.0, 9.0, std::numeric_limits<double>::infinity()};
        std::vector<double> auc = pose_auc(errs, {5.0});
        require(std::abs(auc[0] - 0.375) < 1e-12, "auc " + format_g17(auc[0]));
    });
    add("identity warp fixes every keypoint", [] {
        SynthPair pair = synth_translation_pair(32, 0, 0, 8);
        KeypointSet kps = grid_keypoints(32, 32);
        WarpResult wr = warp_with_depth(kps.coords, pair.frame_a, pair.frame_a);
        for (std::int64_t i = 0; i < 16; ++i) {
            require(wr.valid[static_cast<std::size_t>(i)], "keypoint left the frame");
            require(std::abs(wr.points.at(i, 0) - kps.coords.at(i, 0)) < 1e-9 &&
                        std::abs(wr.points.at(i, 1) - kps.coords.at(i, 1)) < 1e-9,
                    "keypoint moved");
        }
    });
    add("config text round-trip is lossless", [] {
        PipelineConfig cfg = verify_config();
        cfg.rho = 0.375;
        PipelineConfig back = config_from_dict(parse_dict(render_dict(config_to_dict(cfg)), "v"));
        require(back.rho == cfg.rho && back.c_coarse == cfg.c_coarse && back.seed == cfg.seed,
                "fields drifted");
    });
    add("forward pass repeats bit for bit", [] {
        PipelineConfig cfg = verify_config();
        ParamStore store = make_weights(cfg);
        SynthPair pair = synth_translation_pair(32, 2, 1, 10);
        MatchResult r1 = forward(pair.a, pair.b, store, cfg);
        MatchResult r2 = forward(pair.a, pair.b, store, cfg);
        require(r1.fine.pa.data == r2.fine.pa.data && r1.fine.pb.data == r2.fine.pb.data &&
                    r1.cm_a.cells == r2.cm_a.cells,
                "outputs changed between runs");
    });
    add("matches stay inside both covisibility masks", [] {
        PipelineConfig cfg = verify_config();
        ParamStore store = make_weights(cfg);
        SynthPair pair = synth_translation_pair(32, 2, 1, 10);
        MatchResult r = forward(pair.a, pair.b, store, cfg);
        for (std::int64_t i = 0; i < r.fine.pa.dim(0); ++i) {
            std::int64_t ca = static_cast<std::int64_t>(r.fine.pa.at(i, 0) / 8.0);
            std::int64_t ra = static_cast<std::int64_t>(r.fine.pa.at(i, 1) / 8.0);
            std::int64_t cb = static_cast<std::int64_t>(r.fine.pb.at(i, 0) / 8.0);
            std::int64_t rb = static_cast<std::int64_t>(r.fine.pb.at(i, 1) / 8.0);
            require(r.cm_a.at(ra, ca) == 1 && r.cm_b.at(rb, cb) == 1, "match escaped a mask");
        }
    });
    add("attention rays renormalize to one", [] {
        Rng rng(23);
        Tape t;
        Var fq = t.elu_plus_one(t.constant(rand_t(rng, {6, 4}, -2, 2)));
        Var fk = t.elu_plus_one(t.constant(rand_t(rng, {6, 4}, -2, 2)));
        Var scores = t.matmul(fq, t.transpose(fk));
        const Tensor& s = t.val(scores);
        for (std::int64_t i = 0; i < 6; ++i) {
            double total = 0;
            for (std::int64_t j = 0; j < 6; ++j) total += s.at(i, j);
            double sum = 0;
            for (std::int64_t j = 0; j < 6; ++j) sum += s.at(i, j) / total;
            require(std::abs(sum - 1.0) < 1e-9, "ray weights sum to " + format_g17(sum));
        }
    });
    return cs;
}

int cmd_verify(bool inject) {
    if (inject) fault::inject(fault::Kind::softmax_norm);
    std::vector<Check> cs = verify_checks();
    int failed = 0;
    for (const Check& c : cs) {
        try {
            c.fn();
            std::printf("ok %s\n", c.name.c_str());
        } catch (const std::exception& e) {
            ++failed;
            std::printf("FAIL %s: %s\n", c.name.c_str(), e.what());
        }
    }
    std::printf("%zu checks, %d failed\n", cs.size(), failed);
    if (inject) fault::inject(fault::Kind::none);
    return failed == 0 ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"covis: co-visibility guided detector-free feature matching"};
    app.require_subcommand(1);
    std::int64_t threads = 1;
    app.add_option("--threads", threads, "upper bound on worker threads")->check(CLI::Range(1, 256));

    std::string img_a, img_b, weights, config, out = ".", query = "16,16", kind = "self";
    std::string list_path, errs_path;
    double rho = 0.2, lr = 1e-3;
    std::int64_t seed = 0, count = 4, size = 64, steps = 100, layer = 0, width = 0, height = 0;
    std::vector<double> thresholds;
    bool overlay = false, inject = false;

    CLI::App* m = app.add_subcommand("match", "match two images and write the match file");
    m->add_option("imgA", img_a)->required();
    m->add_option("imgB", img_b)->required();
    m->add_option("--weights", weights);
    m->add_option("--config", config);
    m->add_option("--out", out);
    CLI::Option* m_rho = m->add_option("--rho", rho, "confidence threshold override");
    CLI::Option* m_seed = m->add_option("--seed", seed, "weight seed override");
    m->add_flag("--overlay", overlay, "also draw a side-by-side overlay");

    CLI::App* k = app.add_subcommand("masks", "write probability maps and covisibility masks");
    k->add_option("imgA", img_a)->required();
    k->add_option("imgB", img_b)->required();
    k->add_option("--weights", weights);
    k->add_option("--config", config);
    k->add_option("--out", out);
    CLI::Option* k_rho = k->add_option("--rho", rho);
    CLI::Option* k_seed = k->add_option("--seed", seed);

    CLI::App* ec = app.add_subcommand("eval-ccm", "corner-consistency report over homography pairs");
    ec->add_option("--list", list_path, "file with 'estimated truth' path pairs per line")
        ->required();
    ec->add_option("--width", width)->required();
    ec->add_option("--height", height)->required();
    ec->add_option("--out", out);

    CLI::App* ea = app.add_subcommand("eval-auc", "pose-error area-under-curve report");
    ea->add_option("--errors", errs_path, "file with one pose error per line")->required();
    ea->add_option("--thresholds", thresholds)->delimiter(',');
    ea->add_option("--out", out);

    CLI::App* sy = app.add_subcommand("synth", "generate a synthetic ground-truth dataset");
    sy->add_option("--count", count);
    sy->add_option("--size", size);
    sy->add_option("--seed", seed);
    sy->add_option("--out", out)->required();

    CLI::App* tr = app.add_subcommand("train", "overfit toy weights on synthetic pairs");
    tr->add_option("--count", count);
    tr->add_option("--size", size);
    tr->add_option("--steps", steps);
    tr->add_option("--lr", lr);
    tr->add_option("--config", config);
    CLI::Option* tr_seed = tr->add_option("--seed", seed);
    tr->add_option("--out", out)->required();

    CLI::App* vf = app.add_subcommand("verify", "run the named invariant suite");
    vf->add_flag("--inject-fault", inject, "break a softmax normalizer to prove detection");

    CLI::App* da = app.add_subcommand("dump-attention", "draw one query's attention rays");
    da->add_option("imgA", img_a)->required();
    da->add_option("imgB", img_b)->required();
    da->add_option("--weights", weights);
    da->add_option("--config", config);
    da->add_option("--layer", layer);
    da->add_option("--query", query, "query keypoint as 'x,y' in image A pixels");
    da->add_option("--kind", kind)->check(CLI::IsMember({"self", "cross"}));
    CLI::Option* da_seed = da->add_option("--seed", seed);
    da->add_option("--out", out);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }

    try {
        if (m->parsed())
            return cmd_match(img_a, img_b, weights, config, out, rho, m_rho->count() > 0, seed,
                             m_seed->count() > 0, overlay);
        if (k->parsed())
            return cmd_masks(img_a, img_b, weights, config, out, rho, k_rho->count() > 0, seed,
                             k_seed->count() > 0);
        if (ec->parsed()) return cmd_eval_ccm(list_path, width, height, out);
        if (ea->parsed()) return cmd_eval_auc(errs_path, thresholds, out);
        if (sy->parsed()) return cmd_synth(count, size, seed, out);
        if (tr->parsed())
            return cmd_train(count, size, steps, lr, config, seed, tr_seed->count() > 0, out);
        if (vf->parsed()) return cmd_verify(inject);
        if (da->parsed())
            return cmd_dump_attention(img_a, img_b, weights, config, layer, query, kind, seed,
                                      da_seed->count() > 0, out);
    } catch (const invariant_error& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 2;
    } catch (const error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return 2;
    }
    return 1;
}
