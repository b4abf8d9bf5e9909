#include "covis/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "covis/config.hpp"

namespace covis {

namespace {

struct V3 {
    double x = 0, y = 0, z = 0;
};

V3 matv(const Tensor& m, const V3& v) {
    return {m.at(0, 0) * v.x + m.at(0, 1) * v.y + m.at(0, 2) * v.z,
            m.at(1, 0) * v.x + m.at(1, 1) * v.y + m.at(1, 2) * v.z,
            m.at(2, 0) * v.x + m.at(2, 1) * v.y + m.at(2, 2) * v.z};
}

V3 matv_t(const Tensor& m, const V3& v) {
    return {m.at(0, 0) * v.x + m.at(1, 0) * v.y + m.at(2, 0) * v.z,
            m.at(0, 1) * v.x + m.at(1, 1) * v.y + m.at(2, 1) * v.z,
            m.at(0, 2) * v.x + m.at(1, 2) * v.y + m.at(2, 2) * v.z};
}

Tensor mat3_inverse(const Tensor& m) {
    double a = m.at(0, 0), b = m.at(0, 1), c = m.at(0, 2);
    double d = m.at(1, 0), e = m.at(1, 1), f = m.at(1, 2);
    double g = m.at(2, 0), h = m.at(2, 1), i = m.at(2, 2);
    double det = a * (e * i - f * h) - b * (d * i - f * g) + c * (d * h - e * g);
    if (std::abs(det) < 1e-15) throw error("mat3_inverse: singular matrix");
    Tensor r({3, 3});
    r.at(0, 0) = (e * i - f * h) / det;
    r.at(0, 1) = (c * h - b * i) / det;
    r.at(0, 2) = (b * f - c * e) / det;
    r.at(1, 0) = (f * g - d * i) / det;
    r.at(1, 1) = (a * i - c * g) / det;
    r.at(1, 2) = (c * d - a * f) / det;
    r.at(2, 0) = (d * h - e * g) / det;
    r.at(2, 1) = (b * g - a * h) / det;
    r.at(2, 2) = (a * e - b * d) / det;
    return r;
}

// cyclic Jacobi on a symmetric n x n matrix; returns eigenvalues ascending
// with matching eigenvector columns
void jacobi_eigen(std::vector<double>& a, std::int64_t n, std::vector<double>& evals,
                  std::vector<double>& evecs) {
    evecs.assign(static_cast<std::size_t>(n * n), 0.0);
    for (std::int64_t i = 0; i < n; ++i) evecs[static_cast<std::size_t>(i * n + i)] = 1.0;
    auto at = [n](std::vector<double>& m, std::int64_t r, std::int64_t c) -> double& {
        return m[static_cast<std::size_t>(r * n + c)];
    };
    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (std::int64_t p = 0; p < n; ++p)
            for (std::int64_t q = p + 1; q < n; ++q) off += at(a, p, q) * at(a, p, q);
        if (off < 1e-26) break;
        for (std::int64_t p = 0; p < n; ++p)
            for (std::int64_t q = p + 1; q < n; ++q) {
                double apq = at(a, p, q);
                if (std::abs(apq) < 1e-300) continue;
                double theta = (at(a, q, q) - at(a, p, p)) / (2.0 * apq);
                double sg = theta >= 0 ? 1.0 : -1.0;
                double tn = sg / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                double cs = 1.0 / std::sqrt(tn * tn + 1.0);
                double sn = tn * cs;
                for (std::int64_t k = 0; k < n; ++k) {
                    double akp = at(a, k, p), akq = at(a, k, q);
                    at(a, k, p) = cs * akp - sn * akq;
                    at(a, k, q) = sn * akp + cs * akq;
                }
                for (std::int64_t k = 0; k < n; ++k) {
                    double apk = at(a, p, k), aqk = at(a, q, k);
                    at(a, p, k) = cs * apk - sn * aqk;
                    at(a, q, k) = sn * apk + cs * aqk;
                }
                for (std::int64_t k = 0; k < n; ++k) {
                    double vkp = at(evecs, k, p), vkq = at(evecs, k, q);
                    at(evecs, k, p) = cs * vkp - sn * vkq;
                    at(evecs, k, q) = sn * vkp + cs * vkq;
                }
            }
    }
    std::vector<std::int64_t> order(static_cast<std::size_t>(n));
    for (std::int64_t i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
    std::sort(order.begin(), order.end(), [&](std::int64_t x, std::int64_t y) {
        return at(a, x, x) < at(a, y, y);
    });
    evals.resize(static_cast<std::size_t>(n));
    std::vector<double> sorted_vecs(static_cast<std::size_t>(n * n));
    for (std::int64_t c = 0; c < n; ++c) {
        evals[static_cast<std::size_t>(c)] = at(a, order[static_cast<std::size_t>(c)],
                                                order[static_cast<std::size_t>(c)]);
        for (std::int64_t r = 0; r < n; ++r)
            sorted_vecs[static_cast<std::size_t>(r * n + c)] =
                at(evecs, r, order[static_cast<std::size_t>(c)]);
    }
    evecs = std::move(sorted_vecs);
}

struct Similarity {
    double scale = 1, cx = 0, cy = 0;  // p' = scale * (p - c)
};

Similarity hartley(const std::vector<double>& xs, const std::vector<double>& ys) {
    Similarity s;
    double n = static_cast<double>(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        s.cx += xs[i] / n;
        s.cy += ys[i] / n;
    }
    double mean_dist = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i)
        mean_dist += std::hypot(xs[i] - s.cx, ys[i] - s.cy) / n;
    s.scale = mean_dist > 1e-12 ? std::sqrt(2.0) / mean_dist : 1.0;
    return s;
}

}  // namespace

void check_frame(const CameraFrame& f) {
    check_shape(f.k, {3, 3}, "frame intrinsics");
    check_shape(f.r, {3, 3}, "frame rotation");
    check_shape(f.t, {3}, "frame translation");
    if (f.k.at(0, 0) <= 0 || f.k.at(1, 1) <= 0)
        throw invariant_error("frame: focal lengths must be positive");
    if (f.k.at(1, 0) != 0 || f.k.at(2, 0) != 0 || f.k.at(2, 1) != 0 || f.k.at(2, 2) != 1)
        throw invariant_error("frame: intrinsics must be upper triangular with unit scale");
    for (std::int64_t i = 0; i < 3; ++i)
        for (std::int64_t j = 0; j < 3; ++j) {
            double dot = 0.0;
            for (std::int64_t l = 0; l < 3; ++l) dot += f.r.at(i, l) * f.r.at(j, l);
            if (std::abs(dot - (i == j ? 1.0 : 0.0)) > 1e-9)
                throw invariant_error("frame: rotation is not orthonormal");
        }
}

CameraFrame load_frame(const std::string& path) {
    Dict d = load_dict(path);
    CameraFrame f;
    std::vector<double> k = d.get_list("k"), pose = d.get_list("pose");
    if (k.size() != 9) throw error(path + ": intrinsics need 9 values");
    if (pose.size() != 12) throw error(path + ": pose needs 12 values (3x4 row-major)");
    f.k = Tensor({3, 3});
    f.k.data = k;
    f.r = Tensor({3, 3});
    f.t = Tensor({3});
    for (std::int64_t r = 0; r < 3; ++r) {
        for (std::int64_t c = 0; c < 3; ++c)
            f.r.at(r, c) = pose[static_cast<std::size_t>(r * 4 + c)];
        f.t.at(r) = pose[static_cast<std::size_t>(r * 4 + 3)];
    }
    std::string dir;
    auto slash = path.find_last_of('/');
    if (slash != std::string::npos) dir = path.substr(0, slash + 1);
    f.depth = load_depth(dir + d.get("depth"));
    check_frame(f);
    return f;
}

void save_frame(const std::string& path, const CameraFrame& f, const std::string& depth_name) {
    check_frame(f);
    Dict d;
    d.set_list("k", f.k.data);
    std::vector<double> pose;
    for (std::int64_t r = 0; r < 3; ++r) {
        for (std::int64_t c = 0; c < 3; ++c) pose.push_back(f.r.at(r, c));
        pose.push_back(f.t.at(r));
    }
    d.set_list("pose", pose);
    d.set("depth", depth_name);
    save_dict(path, d);
    std::string dir;
    auto slash = path.find_last_of('/');
    if (slash != std::string::npos) dir = path.substr(0, slash + 1);
    save_depth(dir + depth_name, f.depth, 1000);
}

WarpResult warp_with_depth(const Tensor& pts, const CameraFrame& a, const CameraFrame& b) {
    check_frame(a);
    check_frame(b);
    std::int64_t n = pts.dim(0);
    WarpResult out;
    out.points = Tensor({n, 2});
    out.valid.assign(static_cast<std::size_t>(n), 0);
    Tensor ka_inv = mat3_inverse(a.k);
    for (std::int64_t i = 0; i < n; ++i) {
        double x = pts.at(i, 0), y = pts.at(i, 1);
        std::int64_t ix = std::llround(x), iy = std::llround(y);
        if (ix < 0 || ix >= a.depth.w || iy < 0 || iy >= a.depth.h) continue;
        double d = a.depth.at(iy, ix);
        if (d <= 0.0) continue;
        V3 ray = matv(ka_inv, {x, y, 1.0});
        V3 cam_a{ray.x * d, ray.y * d, ray.z * d};
        V3 world = matv_t(a.r, {cam_a.x - a.t.at(0), cam_a.y - a.t.at(1), cam_a.z - a.t.at(2)});
        V3 cam_b = matv(b.r, world);
        cam_b.x += b.t.at(0);
        cam_b.y += b.t.at(1);
        cam_b.z += b.t.at(2);
        if (cam_b.z <= 1e-12) continue;
        V3 proj = matv(b.k, cam_b);
        double u = proj.x / proj.z, v = proj.y / proj.z;
        out.points.at(i, 0) = u;
        out.points.at(i, 1) = v;
        if (u < 0 || u > static_cast<double>(b.depth.w - 1) || v < 0 ||
            v > static_cast<double>(b.depth.h - 1))
            continue;
        out.valid[static_cast<std::size_t>(i)] = 1;
    }
    return out;
}

std::pair<double, double> Homography::apply(double x, double y) const {
    double u = m[0][0] * x + m[0][1] * y + m[0][2];
    double v = m[1][0] * x + m[1][1] * y + m[1][2];
    double w = m[2][0] * x + m[2][1] * y + m[2][2];
    if (std::abs(w) < 1e-15) throw error("homography: point maps to infinity");
    return {u / w, v / w};
}

double Homography::det() const {
    return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
           m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
           m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

Homography Homography::normalized() const {
    Homography h = *this;
    double s = m[2][2];
    if (std::abs(s) > 1e-12)
        for (auto& row : h.m)
            for (auto& v : row) v /= s;
    return h;
}

Homography estimate_homography_dlt(const std::vector<Match>& ms) {
    if (ms.size() < 4)
        throw error("homography: need at least 4 correspondences, got " +
                    std::to_string(ms.size()));
    std::vector<double> x1, y1, x2, y2;
    for (const Match& m : ms) {
        x1.push_back(m.x1);
        y1.push_back(m.y1);
        x2.push_back(m.x2);
        y2.push_back(m.y2);
    }
    Similarity s1 = hartley(x1, y1), s2 = hartley(x2, y2);
    std::vector<double> ata(81, 0.0);
    auto accumulate_row = [&](const double* row) {
        for (int i = 0; i < 9; ++i)
            for (int j = 0; j < 9; ++j)
                ata[static_cast<std::size_t>(i * 9 + j)] += row[i] * row[j];
    };
    for (std::size_t i = 0; i < ms.size(); ++i) {
        double u = s1.scale * (x1[i] - s1.cx), v = s1.scale * (y1[i] - s1.cy);
        double up = s2.scale * (x2[i] - s2.cx), vp = s2.scale * (y2[i] - s2.cy);
        double r1[9] = {-u, -v, -1, 0, 0, 0, u * up, v * up, up};
        double r2[9] = {0, 0, 0, -u, -v, -1, u * vp, v * vp, vp};
        accumulate_row(r1);
        accumulate_row(r2);
    }
    std::vector<double> evals, evecs;
    jacobi_eigen(ata, 9, evals, evecs);
    double scale_ref = std::max(std::abs(evals[8]), 1e-12);
    if (evals[1] < 1e-12 * scale_ref)
        throw error("homography: degenerate configuration (rank-deficient system)");
    Homography hn;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) hn.m[r][c] = evecs[static_cast<std::size_t>((r * 3 + c) * 9)];
    // H = T2^-1 Hn T1, with T = [s,0,-s*cx; 0,s,-s*cy; 0,0,1]
    Homography t1{{{s1.scale, 0, -s1.scale * s1.cx}, {0, s1.scale, -s1.scale * s1.cy}, {0, 0, 1}}};
    Homography t2i{{{1.0 / s2.scale, 0, s2.cx}, {0, 1.0 / s2.scale, s2.cy}, {0, 0, 1}}};
    Homography h;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) {
            double v = 0.0;
            for (int k = 0; k < 3; ++k)
                for (int l = 0; l < 3; ++l) v += t2i.m[r][k] * hn.m[k][l] * t1.m[l][c];
            h.m[r][c] = v;
        }
    h = h.normalized();
    if (std::abs(h.det()) < 1e-12) throw error("homography: estimated matrix is singular");
    return h;
}

RansacResult ransac_homography(const std::vector<Match>& ms, double threshold, int iterations,
                               std::uint64_t seed) {
    if (threshold <= 0) throw error("ransac: threshold must be positive");
    RansacResult res;
    std::int64_t n = static_cast<std::int64_t>(ms.size());
    if (n < 4) return res;
    Rng rng(seed);
    auto count_inliers = [&](const Homography& h, std::vector<std::uint8_t>& mask) {
        std::int64_t count = 0;
        mask.assign(static_cast<std::size_t>(n), 0);
        for (std::int64_t i = 0; i < n; ++i) {
            const Match& m = ms[static_cast<std::size_t>(i)];
            try {
                auto [u, v] = h.apply(m.x1, m.y1);
                if (std::hypot(u - m.x2, v - m.y2) < threshold) {
                    mask[static_cast<std::size_t>(i)] = 1;
                    ++count;
                }
            } catch (const error&) {
            }
        }
        return count;
    };
    Homography best;
    std::int64_t best_count = -1;
    for (int it = 0; it < iterations; ++it) {
        std::int64_t idx[4];
        for (int k = 0; k < 4; ++k) {
            bool fresh = true;
            do {
                idx[k] = rng.uniform_int(0, n - 1);
                fresh = true;
                for (int l = 0; l < k; ++l)
                    if (idx[l] == idx[k]) fresh = false;
            } while (!fresh);
        }
        std::vector<Match> sample;
        for (auto i : idx) sample.push_back(ms[static_cast<std::size_t>(i)]);
        Homography h;
        try {
            h = estimate_homography_dlt(sample);
        } catch (const error&) {
            continue;
        }
        std::vector<std::uint8_t> mask;
        std::int64_t count = count_inliers(h, mask);
        if (count > best_count) {
            best_count = count;
            best = h;
        }
    }
    if (best_count < 4) return res;
    std::vector<std::uint8_t> mask;
    count_inliers(best, mask);
    std::vector<Match> winners;
    for (std::int64_t i = 0; i < n; ++i)
        if (mask[static_cast<std::size_t>(i)]) winners.push_back(ms[static_cast<std::size_t>(i)]);
    try {
        res.h = estimate_homography_dlt(winners);
    } catch (const error&) {
        res.h = best;
    }
    if (count_inliers(res.h, res.inliers) < 4) {
        res.inliers.clear();
        return res;
    }
    res.ok = true;
    return res;
}

double ccm(const Homography& est, const Homography& gt, std::int64_t w, std::int64_t h) {
    double corners[4][2] = {{0, 0},
                            {static_cast<double>(w - 1), 0},
                            {0, static_cast<double>(h - 1)},
                            {static_cast<double>(w - 1), static_cast<double>(h - 1)}};
    double sum = 0.0;
    for (auto& c : corners) {
        auto [xe, ye] = est.apply(c[0], c[1]);
        auto [xg, yg] = gt.apply(c[0], c[1]);
        sum += std::hypot(xe - xg, ye - yg);
    }
    return sum / 4.0;
}

std::vector<double> pose_auc(const std::vector<double>& errors,
                             const std::vector<double>& thresholds) {
    if (errors.empty()) throw error("pose_auc: no errors given");
    std::vector<double> e(errors);
    std::sort(e.begin(), e.end());
    std::int64_t n = static_cast<std::int64_t>(e.size());
    // knots: (0,0) then (e_i, (i+1)/n); flat from the last knot under tau
    std::vector<double> xs{0.0}, ys{0.0};
    for (std::int64_t i = 0; i < n; ++i) {
        xs.push_back(e[static_cast<std::size_t>(i)]);
        ys.push_back(static_cast<double>(i + 1) / static_cast<double>(n));
    }
    std::vector<double> aucs;
    for (double tau : thresholds) {
        if (tau <= 0) throw error("pose_auc: thresholds must be positive");
        double area = 0.0;
        double last_x = 0.0, last_y = 0.0;
        for (std::size_t i = 1; i < xs.size() && xs[i] < tau; ++i) {
            area += (xs[i] - last_x) * (last_y + ys[i]) / 2.0;
            last_x = xs[i];
            last_y = ys[i];
        }
        area += (tau - last_x) * last_y;
        aucs.push_back(area / tau);
    }
    return aucs;
}

void save_homography(const std::string& path, const Homography& h) {
    std::ofstream out(path);
    if (!out) throw error(path + ": cannot write");
    for (int r = 0; r < 3; ++r) {
        for (int c = 0; c < 3; ++c) out << (c ? " " : "") << format_g17(h.m[r][c]);
        out << "\n";
    }
}

Homography load_homography(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw error(path + ": cannot read");
    Homography h;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c)
            if (!(in >> h.m[r][c])) throw error(path + ": want 9 numbers");
    if (std::abs(h.det()) < 1e-12) throw error(path + ": homography is singular");
    return h;
}

}  // namespace covis
