#include "covis/pipeline.hpp"

#include <chrono>
#include <cmath>
#include <string>
#include <unordered_map>
#include <utility>

namespace covis {

namespace {

constexpr double kFocal = 100.0;
constexpr double kDepth = 2.0;

struct StageClock {
    std::vector<StageTiming>* out;
    std::chrono::steady_clock::time_point last = std::chrono::steady_clock::now();

    void lap(const char* name) {
        if (!out) return;
        auto now = std::chrono::steady_clock::now();
        double ms = std::chrono::duration<double, std::milli>(now - last).count();
        out->push_back({name, ms});
        last = now;
    }
};

BinaryGrid full_grid(std::int64_t gh, std::int64_t gw) {
    BinaryGrid g = BinaryGrid::blank(gh, gw);
    for (auto& c : g.cells) c = 1;
    return g;
}

bool cell_inside(const BinaryGrid& cm, double x, double y) {
    std::int64_t c = static_cast<std::int64_t>(std::floor(x / 8.0));
    std::int64_t r = static_cast<std::int64_t>(std::floor(y / 8.0));
    if (r < 0 || r >= cm.gh || c < 0 || c >= cm.gw) return false;
    return cm.at(r, c) != 0;
}

Image render_blobs(std::int64_t size, const std::vector<double>& cx, const std::vector<double>& cy,
                   const std::vector<double>& sigma, const std::vector<double>& amp) {
    Image img = Image::blank(size, size);
    for (std::int64_t y = 0; y < size; ++y)
        for (std::int64_t x = 0; x < size; ++x) {
            double v = 0;
            for (std::size_t i = 0; i < cx.size(); ++i) {
                double dx = static_cast<double>(x) - cx[i];
                double dy = static_cast<double>(y) - cy[i];
                v += amp[i] * std::exp(-(dx * dx + dy * dy) / (2.0 * sigma[i] * sigma[i]));
            }
            img.at(y, x) = std::min(v, 1.0);
        }
    return img;
}

struct BlobSet {
    std::vector<double> cx, cy, sigma, amp;
};

BlobSet draw_blobs(std::int64_t size, Rng& rng) {
    BlobSet b;
    std::int64_t n = rng.uniform_int(10, 15);
    double margin = 8.0;
    for (std::int64_t i = 0; i < n; ++i) {
        b.cx.push_back(rng.uniform(margin, static_cast<double>(size) - margin));
        b.cy.push_back(rng.uniform(margin, static_cast<double>(size) - margin));
        b.sigma.push_back(rng.uniform(2.0, 5.0));
        b.amp.push_back(rng.uniform(0.4, 1.0));
    }
    return b;
}

CameraFrame synth_frame(std::int64_t size, Tensor r, Tensor t) {
    CameraFrame fr;
    double c = static_cast<double>(size) / 2.0;
    fr.k = Tensor::from2d({{kFocal, 0, c}, {0, kFocal, c}, {0, 0, 1}});
    fr.r = std::move(r);
    fr.t = std::move(t);
    fr.depth.w = size;
    fr.depth.h = size;
    fr.depth.depth.assign(static_cast<std::size_t>(size * size), kDepth);
    return fr;
}

Tensor eye3() { return Tensor::from2d({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}); }

void draw_dot(RgbImage& img, std::int64_t x, std::int64_t y, std::uint8_t r, std::uint8_t g,
              std::uint8_t b) {
    for (std::int64_t dy = -1; dy <= 1; ++dy)
        for (std::int64_t dx = -1; dx <= 1; ++dx) {
            std::int64_t px = x + dx, py = y + dy;
            if (px >= 0 && px < img.w && py >= 0 && py < img.h) img.set(py, px, r, g, b);
        }
}

void draw_line(RgbImage& img, double x0, double y0, double x1, double y1, std::uint8_t r,
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

}  // namespace

void check_config(const PipelineConfig& cfg) {
    if (cfg.c_fine < 1 || cfg.c_coarse < 1) throw invariant_error("config: channel widths must be positive");
    if (cfg.pos_encoding && cfg.c_coarse % 4 != 0)
        throw invariant_error("config: positional encoding needs a coarse width divisible by 4");
    if (cfg.l1 < 1 || cfg.l2 < 1 || cfg.l3 < 1)
        throw invariant_error("config: block counts must be at least 1");
    if (cfg.gamma < 1) throw invariant_error("config: expansion factor must be at least 1");
    if (cfg.close_k < 1) throw invariant_error("config: closing kernel must be at least 1");
    if (cfg.window < 1 || cfg.window % 2 == 0)
        throw invariant_error("config: refinement window must be odd");
    if (cfg.rho < 0.0 || cfg.rho > 1.0) throw invariant_error("config: rho must lie in [0,1]");
    if (cfg.kappa <= 0.0) throw invariant_error("config: kappa must be positive");
    if (cfg.eta <= 0.0) throw invariant_error("config: eta must be positive");
}

Dict config_to_dict(const PipelineConfig& cfg) {
    Dict d;
    d.set_i("c_fine", cfg.c_fine);
    d.set_i("c_coarse", cfg.c_coarse);
    d.set_i("l1", cfg.l1);
    d.set_i("l2", cfg.l2);
    d.set_i("l3", cfg.l3);
    d.set_i("gamma", cfg.gamma);
    d.set_i("close_k", cfg.close_k);
    d.set_f("rho", cfg.rho);
    d.set_i("window", cfg.window);
    d.set_f("kappa", cfg.kappa);
    d.set_f("eta", cfg.eta);
    d.set_list("alpha", {cfg.loss.a1, cfg.loss.a2, cfg.loss.a3, cfg.loss.a4});
    d.set_i("pos_encoding", cfg.pos_encoding ? 1 : 0);
    d.set_i("seed", cfg.seed);
    return d;
}

PipelineConfig config_from_dict(const Dict& d) {
    PipelineConfig cfg;
    for (const auto& [key, value] : d.items) {
        (void)value;
        if (key == "c_fine")
            cfg.c_fine = d.get_i(key);
        else if (key == "c_coarse")
            cfg.c_coarse = d.get_i(key);
        else if (key == "l1")
            cfg.l1 = d.get_i(key);
        else if (key == "l2")
            cfg.l2 = d.get_i(key);
        else if (key == "l3")
            cfg.l3 = d.get_i(key);
        else if (key == "gamma")
            cfg.gamma = d.get_i(key);
        else if (key == "close_k")
            cfg.close_k = static_cast<int>(d.get_i(key));
        else if (key == "rho")
            cfg.rho = d.get_f(key);
        else if (key == "window")
            cfg.window = static_cast<int>(d.get_i(key));
        else if (key == "kappa")
            cfg.kappa = d.get_f(key);
        else if (key == "eta")
            cfg.eta = d.get_f(key);
        else if (key == "alpha") {
            std::vector<double> a = d.get_list(key);
            if (a.size() != 4) throw error("config: alpha needs exactly 4 weights");
            cfg.loss = {a[0], a[1], a[2], a[3]};
        } else if (key == "pos_encoding")
            cfg.pos_encoding = d.get_i(key) != 0;
        else if (key == "seed")
            cfg.seed = d.get_i(key);
        else
            throw error("config: unknown key '" + key + "'");
    }
    check_config(cfg);
    return cfg;
}

PipelineConfig load_config(const std::string& path) { return config_from_dict(load_dict(path)); }

void save_config(const std::string& path, const PipelineConfig& cfg) {
    save_dict(path, config_to_dict(cfg));
}

ParamStore make_weights(const PipelineConfig& cfg) {
    check_config(cfg);
    Rng rng(static_cast<std::uint64_t>(cfg.seed));
    ParamStore store;
    register_backbone(store, cfg.c_fine, cfg.c_coarse, rng);
    for (std::int64_t i = 0; i < cfg.l1; ++i)
        register_tel_block(store, "encoder.block" + std::to_string(i), cfg.c_coarse, cfg.gamma,
                           true, rng);
    for (std::int64_t i = 0; i < cfg.l2; ++i)
        register_tel_block(store, "covis.block" + std::to_string(i), cfg.c_coarse, cfg.gamma,
                           false, rng);
    register_refiner(store, cfg.c_fine, cfg.gamma, cfg.l3, rng);
    return store;
}

PipelineVars bind_pipeline(TapeBinder& bind, const PipelineConfig& cfg) {
    PipelineVars vars;
    vars.backbone = bind_backbone(bind);
    for (std::int64_t i = 0; i < cfg.l1; ++i)
        vars.grid_blocks.push_back(bind_tel_block(bind, "encoder.block" + std::to_string(i), true));
    for (std::int64_t i = 0; i < cfg.l2; ++i)
        vars.covis_blocks.push_back(bind_tel_block(bind, "covis.block" + std::to_string(i), false));
    vars.refiner = bind_refiner(bind, cfg.l3);
    return vars;
}

ForwardGraph forward_graph(Tape& t, const Image& a, const Image& b, const PipelineVars& vars,
                           const PipelineConfig& cfg, std::vector<StageTiming>* timing) {
    check_config(cfg);
    check_pair_dims(a, b);
    if (a.w < 16 || a.h < 16 || a.w % 8 != 0 || a.h % 8 != 0)
        throw error("forward: image dims must be multiples of 8, at least 16");

    ForwardGraph g;
    g.gh = a.h / 8;
    g.gw = a.w / 8;
    StageClock clock{timing};

    FeaturePyramid pa = encode_one(t, a, vars.backbone);
    FeaturePyramid pb = encode_one(t, b, vars.backbone);
    g.fine_a = pa.fine;
    g.fine_b = pb.fine;
    clock.lap("backbone");

    Var sa = t.img2seq(pa.coarse);
    Var sb = t.img2seq(pb.coarse);
    if (cfg.pos_encoding) {
        Tensor pe = positional_encoding(g.gh, g.gw, cfg.c_coarse);
        sa = t.add_const(sa, pe);
        sb = t.add_const(sb, pe);
    }
    auto [fa, fb] = eitm(t, {sa, g.gh, g.gw}, {sb, g.gh, g.gw}, vars.grid_blocks);
    g.fa = fa;
    g.fb = fb;
    clock.lap("encoder");

    g.full = score_and_assign(t, fa.feat, fb.feat);
    auto [pma, pmb] = probability_maps(t, g.full.g);
    g.pm_a = t.val(pma);
    g.pm_b = t.val(pmb);
    g.lambda_a = adaptive_threshold(g.pm_a);
    g.lambda_b = adaptive_threshold(g.pm_b);
    g.raw_a = binarize(g.pm_a, g.gh, g.gw, g.lambda_a);
    g.raw_b = binarize(g.pm_b, g.gh, g.gw, g.lambda_b);
    ContourFill fill_a = max_contour_fill(morph_close(g.raw_a, cfg.close_k));
    ContourFill fill_b = max_contour_fill(morph_close(g.raw_b, cfg.close_k));
    g.degenerate_a = fill_a.degenerate;
    g.degenerate_b = fill_b.degenerate;
    g.cm_a = fill_a.degenerate ? full_grid(g.gh, g.gw) : fill_a.mask;
    g.cm_b = fill_b.degenerate ? full_grid(g.gh, g.gw) : fill_b.mask;
    g.pm_a.shape = {g.gh, g.gw};
    g.pm_b.shape = {g.gh, g.gw};
    clock.lap("masks");

    g.kps = grid_keypoints(a.h, a.w);
    g.cov_a = select_covisible(t, g.fa, g.kps, g.cm_a);
    g.cov_b = select_covisible(t, g.fb, g.kps, g.cm_b);
    auto [ua, ub] = oatm(t, g.cov_a.seq, g.cov_b.seq, vars.covis_blocks);
    g.cov_a.seq = ua;
    g.cov_b.seq = ub;
    clock.lap("covisible");

    g.oa = score_and_assign(t, g.cov_a.seq.feat, g.cov_b.seq.feat);
    auto pairs = propose_coarse(t.val(g.oa.g), cfg.rho);
    g.coarse = coarse_to_keypoints(pairs, g.cov_a.coords, g.cov_b.coords, t.val(g.oa.g));
    clock.lap("coarse");

    if (g.coarse.count() > 0) {
        WindowSet wa = crop_windows(t, g.fine_a, g.coarse.pa, cfg.window);
        WindowSet wb = crop_windows(t, g.fine_b, g.coarse.pb, cfg.window);
        g.refined = refine(t, wa, wb, vars.refiner);
    }
    clock.lap("refine");
    return g;
}

MatchResult forward(const Image& a, const Image& b, const ParamStore& store,
                    const PipelineConfig& cfg) {
    Tape t;
    TapeBinder bind{t, store, false};
    PipelineVars vars = bind_pipeline(bind, cfg);
    MatchResult r;
    ForwardGraph g = forward_graph(t, a, b, vars, cfg, &r.timing);

    Tensor theta = refined_theta(t, g.refined);
    Tensor conf = refined_conf(t, g.refined);
    FineMatchSet all = fine_matches(g.coarse, theta, conf, a.w, a.h);

    std::int64_t kept = 0;
    std::vector<std::int64_t> keep;
    for (std::int64_t i = 0; i < g.coarse.count(); ++i) {
        bool in_a = cell_inside(g.cm_a, all.pa.at(i, 0), all.pa.at(i, 1));
        bool in_b = cell_inside(g.cm_b, all.pb.at(i, 0), all.pb.at(i, 1));
        if (in_a && in_b)
            keep.push_back(i);
        else
            ++r.dropped;
    }
    kept = static_cast<std::int64_t>(keep.size());

    r.fine.pa = Tensor({kept, 2});
    r.fine.pb = Tensor({kept, 2});
    r.coarse.pa = Tensor({kept, 2});
    r.coarse.pb = Tensor({kept, 2});
    r.theta = Tensor({kept, 2});
    for (std::int64_t n = 0; n < kept; ++n) {
        std::int64_t i = keep[static_cast<std::size_t>(n)];
        for (std::int64_t d = 0; d < 2; ++d) {
            r.fine.pa.at(n, d) = all.pa.at(i, d);
            r.fine.pb.at(n, d) = all.pb.at(i, d);
            r.coarse.pa.at(n, d) = g.coarse.pa.at(i, d);
            r.coarse.pb.at(n, d) = g.coarse.pb.at(i, d);
            r.theta.at(n, d) = theta.at(i, d);
        }
        r.fine.conf.push_back(all.conf[static_cast<std::size_t>(i)]);
        r.fine.clamped.push_back(all.clamped[static_cast<std::size_t>(i)]);
        r.coarse.pairs.push_back(g.coarse.pairs[static_cast<std::size_t>(i)]);
        r.coarse.conf.push_back(g.coarse.conf[static_cast<std::size_t>(i)]);
    }

    r.pm_a = g.pm_a;
    r.pm_b = g.pm_b;
    r.cm_a = g.cm_a;
    r.cm_b = g.cm_b;
    r.g = t.val(g.full.g);
    r.g_oa = t.val(g.oa.g);
    r.idx_a = g.cov_a.indices;
    r.idx_b = g.cov_b.indices;
    r.degenerate_a = g.degenerate_a;
    r.degenerate_b = g.degenerate_b;
    r.gh = g.gh;
    r.gw = g.gw;
    return r;
}

SynthPair synth_translation_pair(std::int64_t size, double dx, double dy, std::uint64_t seed) {
    if (size < 16 || size % 8 != 0) throw error("synth: size must be a multiple of 8, at least 16");
    Rng rng(seed);
    BlobSet blobs = draw_blobs(size, rng);
    SynthPair p;
    p.a = render_blobs(size, blobs.cx, blobs.cy, blobs.sigma, blobs.amp);
    std::vector<double> bx = blobs.cx, by = blobs.cy;
    for (auto& v : bx) v += dx;
    for (auto& v : by) v += dy;
    p.b = render_blobs(size, bx, by, blobs.sigma, blobs.amp);
    Tensor tb = Tensor::zeros({3});
    tb.at(0) = dx * kDepth / kFocal;
    tb.at(1) = dy * kDepth / kFocal;
    p.frame_a = synth_frame(size, eye3(), Tensor::zeros({3}));
    p.frame_b = synth_frame(size, eye3(), std::move(tb));
    p.h.m[0][2] = dx;
    p.h.m[1][2] = dy;
    return p;
}

SynthPair synth_rotation_pair(std::int64_t size, double angle, std::uint64_t seed) {
    if (size < 16 || size % 8 != 0) throw error("synth: size must be a multiple of 8, at least 16");
    Rng rng(seed);
    BlobSet blobs = draw_blobs(size, rng);
    SynthPair p;
    p.a = render_blobs(size, blobs.cx, blobs.cy, blobs.sigma, blobs.amp);
    double c = static_cast<double>(size) / 2.0;
    double ca = std::cos(angle), sa = std::sin(angle);
    std::vector<double> bx = blobs.cx, by = blobs.cy;
    for (std::size_t i = 0; i < bx.size(); ++i) {
        double x = blobs.cx[i] - c, y = blobs.cy[i] - c;
        bx[i] = ca * x - sa * y + c;
        by[i] = sa * x + ca * y + c;
    }
    p.b = render_blobs(size, bx, by, blobs.sigma, blobs.amp);
    Tensor rz = Tensor::from2d({{ca, -sa, 0}, {sa, ca, 0}, {0, 0, 1}});
    p.frame_a = synth_frame(size, eye3(), Tensor::zeros({3}));
    p.frame_b = synth_frame(size, std::move(rz), Tensor::zeros({3}));
    p.h.m[0][0] = ca;
    p.h.m[0][1] = -sa;
    p.h.m[0][2] = c - ca * c + sa * c;
    p.h.m[1][0] = sa;
    p.h.m[1][1] = ca;
    p.h.m[1][2] = c - sa * c - ca * c;
    return p;
}

std::vector<SynthPair> synth_dataset(std::int64_t count, std::int64_t size, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<SynthPair> out;
    for (std::int64_t i = 0; i < count; ++i) {
        std::uint64_t sub = static_cast<std::uint64_t>(rng.uniform_int(0, 1 << 30));
        if (i % 2 == 0) {
            bool whole = rng.uniform_int(0, 1) == 1;
            double dx, dy;
            if (whole) {
                dx = static_cast<double>(rng.uniform_int(-8, 8));
                dy = static_cast<double>(rng.uniform_int(-8, 8));
            } else {
                dx = rng.uniform(-8.0, 8.0);
                dy = rng.uniform(-8.0, 8.0);
            }
            out.push_back(synth_translation_pair(size, dx, dy, sub));
        } else {
            double angle = rng.uniform(-0.15, 0.15);
            out.push_back(synth_rotation_pair(size, angle, sub));
        }
    }
    return out;
}

TrainResult train_toy(const std::vector<SynthPair>& data, const PipelineConfig& cfg,
                      std::int64_t steps, double lr) {
    check_config(cfg);
    if (data.empty()) throw error("train_toy: empty dataset");
    if (steps < 1) throw error("train_toy: need at least one step");

    ParamStore store = make_weights(cfg);
    std::unordered_map<std::string, std::size_t> slot;
    std::vector<Tensor> m1, m2;
    for (std::size_t i = 0; i < store.params.size(); ++i) {
        slot[store.params[i].first] = i;
        m1.push_back(Tensor::zeros(store.params[i].second.shape));
        m2.push_back(Tensor::zeros(store.params[i].second.shape));
    }
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;

    TrainResult res;
    for (std::int64_t step = 0; step < steps; ++step) {
        const SynthPair& pair = data[static_cast<std::size_t>(step) % data.size()];
        Tape t;
        TapeBinder bind{t, store, true};
        PipelineVars vars = bind_pipeline(bind, cfg);
        ForwardGraph g = forward_graph(t, pair.a, pair.b, vars, cfg);

        auto [gt, lcw] =
            make_gt_and_confidence(g.kps, g.kps, pair.frame_a, pair.frame_b, cfg.kappa);
        LossTerm le = loss_entire(t, g.full.g, gt.labels, lcw.lc);
        LossTerm la =
            loss_overlap(t, g.oa.g, g.cov_a.indices, g.cov_b.indices, gt.labels, lcw.lc);

        std::int64_t tm = g.coarse.count();
        Tensor theta_gt({tm, 2});
        for (std::int64_t n = 0; n < tm; ++n) {
            std::int64_t gi = g.cov_a.indices[static_cast<std::size_t>(
                g.coarse.pairs[static_cast<std::size_t>(n)].first)];
            if (!gt.valid_a[static_cast<std::size_t>(gi)]) {
                theta_gt.at(n, 0) = theta_gt.at(n, 1) = 1e9;
                continue;
            }
            theta_gt.at(n, 0) = gt.proj_ab.at(gi, 0) - g.coarse.pb.at(n, 0);
            theta_gt.at(n, 1) = gt.proj_ab.at(gi, 1) - g.coarse.pb.at(n, 1);
        }
        LossTerm lo = loss_offset(t, g.refined.theta, theta_gt, cfg.eta);
        Tensor conf_gt = confidence_labels(theta_gt, cfg.eta);
        LossTerm lc = loss_confidence(t, g.refined.conf, conf_gt);
        Var lt = total_loss(t, le.value, la.value, lo.value, lc.value, cfg.loss);

        StepLosses sl;
        sl.entire = t.val(le.value).at(0);
        sl.overlap = t.val(la.value).at(0);
        sl.offset = t.val(lo.value).at(0);
        sl.confidence = t.val(lc.value).at(0);
        sl.total = t.val(lt).at(0);
        if (!std::isfinite(sl.entire) || !std::isfinite(sl.overlap) || !std::isfinite(sl.offset) ||
            !std::isfinite(sl.confidence) || !std::isfinite(sl.total))
            throw error("train_toy: non-finite loss at step " + std::to_string(step) +
                        ": entire=" + format_g17(sl.entire) + " overlap=" + format_g17(sl.overlap) +
                        " offset=" + format_g17(sl.offset) +
                        " confidence=" + format_g17(sl.confidence));
        res.curve.push_back(sl);

        t.backward(lt);
        double tcorr = static_cast<double>(step + 1);
        double c1 = 1.0 - std::pow(b1, tcorr), c2 = 1.0 - std::pow(b2, tcorr);
        for (const auto& [name, var] : bind.bound) {
            const Tensor& gr = t.grad(var);
            std::size_t s = slot.at(name);
            Tensor& w = store.get(name);
            for (std::size_t i = 0; i < w.data.size(); ++i) {
                double gv = gr.data[i];
                m1[s].data[i] = b1 * m1[s].data[i] + (1.0 - b1) * gv;
                m2[s].data[i] = b2 * m2[s].data[i] + (1.0 - b2) * gv * gv;
                double mh = m1[s].data[i] / c1;
                double vh = m2[s].data[i] / c2;
                w.data[i] -= lr * mh / (std::sqrt(vh) + eps);
            }
        }
    }
    res.weights = std::move(store);
    return res;
}

RgbImage render_matches(const Image& a, const Image& b, const FineMatchSet& fm) {
    std::int64_t h = std::max(a.h, b.h);
    RgbImage canvas = RgbImage::blank(a.w + b.w, h);
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
    for (std::int64_t i = 0; i < fm.pa.dim(0); ++i) {
        double conf = fm.conf[static_cast<std::size_t>(i)];
        auto red = static_cast<std::uint8_t>(std::lround((1.0 - conf) * 255.0));
        auto green = static_cast<std::uint8_t>(std::lround(conf * 255.0));
        double x0 = fm.pa.at(i, 0), y0 = fm.pa.at(i, 1);
        double x1 = fm.pb.at(i, 0) + static_cast<double>(a.w), y1 = fm.pb.at(i, 1);
        draw_line(canvas, x0, y0, x1, y1, red, green, 40);
        draw_dot(canvas, static_cast<std::int64_t>(std::lround(x0)),
                 static_cast<std::int64_t>(std::lround(y0)), 255, 220, 0);
        draw_dot(canvas, static_cast<std::int64_t>(std::lround(x1)),
                 static_cast<std::int64_t>(std::lround(y1)), 0, 200, 255);
    }
    return canvas;
}

}  // namespace covis
