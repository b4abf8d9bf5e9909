#pragma once

#include <string>
#include <utility>
#include <vector>

#include "covis/common.hpp"
#include "covis/image.hpp"
#include "covis/tensor.hpp"

namespace covis {

// Calibrated view: intrinsics, world-to-camera pose, metric depth (0 means
// no measurement).
struct CameraFrame {
    Tensor k;  // [3,3]
    Tensor r;  // [3,3]
    Tensor t;  // [3]
    DepthMap depth;
};

// K must be upper triangular with positive focals, R orthonormal to 1e-9.
void check_frame(const CameraFrame& f);

// Structured-text frame bundle; the depth path inside is resolved relative
// to the bundle's directory.
CameraFrame load_frame(const std::string& path);
void save_frame(const std::string& path, const CameraFrame& f, const std::string& depth_name);

struct WarpResult {
    Tensor points;  // [n,2] positions in image B
    std::vector<std::uint8_t> valid;
};

// Back-project with A's depth, move through both poses, project into B.
// Zero depth, a non-positive forward coordinate, or leaving B's frame all
// flag the point invalid.
WarpResult warp_with_depth(const Tensor& pts, const CameraFrame& a, const CameraFrame& b);

struct Homography {
    double m[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};

    std::pair<double, double> apply(double x, double y) const;
    double det() const;
    Homography normalized() const;  // bottom-right scaled to 1 when nonzero
};

// Hartley-normalized direct linear transform, least squares over all pairs.
Homography estimate_homography_dlt(const std::vector<Match>& ms);

struct RansacResult {
    bool ok = false;
    Homography h;
    std::vector<std::uint8_t> inliers;
};

// Seeded consensus loop over 4-point samples, refit on the winners.
RansacResult ransac_homography(const std::vector<Match>& ms, double threshold, int iterations,
                               std::uint64_t seed);

// Mean distance between the two warps of the image's four corners.
double ccm(const Homography& est, const Homography& gt, std::int64_t w, std::int64_t h);

// Area under the cumulative error curve per threshold: piecewise-linear
// interpolation through the sorted errors, held flat past the last one below
// the threshold, normalized by the threshold.
std::vector<double> pose_auc(const std::vector<double>& errors,
                             const std::vector<double>& thresholds);

void save_homography(const std::string& path, const Homography& h);
Homography load_homography(const std::string& path);

}  // namespace covis
