#pragma once

// Two-view geometry: homographies, relative poses, ground-truth correspondence,
// robust estimation and the AUC metrics used by the evaluation harness.
//
// Pixel convention: pixel centers sit at integer coordinates, so an image of
// width W spans [-0.5, W - 0.5]. A cell of size s (s = 8 at 1/8 scale) with
// index i covers pixels [i*s, i*s + s - 1] and has its center at
// i*s + (s - 1) / 2.

#include <Eigen/Core>

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace cascade_match {

using Vec2 = Eigen::Vector2d;
using Mat3 = Eigen::Matrix3d;

/// Row-major H x W x C float image with values in [0, 1].
struct Image {
    int width = 0;
    int height = 0;
    int channels = 1;
    std::vector<float> data;

    Image() = default;
    Image(int w, int h, int c = 1, float fill = 0.0f)
        : width(w), height(h), channels(c), data(static_cast<size_t>(w) * h * c, fill) {}

    float& at(int x, int y, int c = 0) { return data[(static_cast<size_t>(y) * width + x) * channels + c]; }
    float at(int x, int y, int c = 0) const { return data[(static_cast<size_t>(y) * width + x) * channels + c]; }
    bool empty() const { return data.empty(); }
    Image to_gray() const;
};

struct Homography {
    Mat3 m = Mat3::Identity();

    static Homography identity() { return {}; }
    /// Rescales so that m(2,2) == 1. Throws ValidationError on a singular matrix.
    static Homography normalized(const Mat3& m);
    Homography inverse() const;
    Vec2 apply(const Vec2& p) const;
};

struct RelativePose {
    Mat3 r = Mat3::Identity();
    Eigen::Vector3d t = Eigen::Vector3d::UnitX();  // unit direction

    /// Orthonormality and unit-translation check (1e-9 tolerances).
    bool valid() const;
};

struct CameraTruth {
    Mat3 k = Mat3::Identity();
    Mat3 r = Mat3::Identity();
    Eigen::Vector3d t = Eigen::Vector3d::Zero();  // metric: X_b = r * X_a + t
    std::vector<float> depth_a;                   // z-depth per pixel of image_a
    std::vector<float> depth_b;                   // z-depth per pixel of image_b

    RelativePose pose() const;
};

struct SyntheticPair {
    Image image_a;
    Image image_b;
    std::variant<Homography, CameraTruth> truth;
    uint64_t seed = 0;

    bool is_homography() const { return std::holds_alternative<Homography>(truth); }
};

/// The same pair seen from image_b: images swapped and the truth inverted.
SyntheticPair swapped_pair(const SyntheticPair& pair);

struct Match {
    double xa = 0, ya = 0, xb = 0, yb = 0;
    double conf = 0;
    double scale = 0.125;  // 1/8, 1/4 or 1/2
};
using MatchSet = std::vector<Match>;

void write_matches_jsonl(std::ostream& os, const MatchSet& matches);
MatchSet read_matches_jsonl(std::istream& is);

struct HomographyBounds {
    double rotation_deg = 0;  // |angle| <= rotation_deg
    double scale = 0;         // log-uniform in [1/(1+scale), 1+scale]
    double tx = 0;            // pixels
    double ty = 0;
    double perspective = 0;   // |p_i| * image extent <= perspective
};

/// Random rotation/scale/translation/perspective about the image center. Resamples
/// until at least half of the 1/8 cell centers land inside the image.
Homography sample_homography(uint64_t seed, const HomographyBounds& bounds, int width, int height,
                             int max_retries = 100);

/// Projective transform with homogeneous divide. Throws on points mapped to infinity.
std::vector<Vec2> warp_points(std::span<const Vec2> points, const Homography& h);

/// Exact target location of every cell center of image_a at the given cell size.
struct DenseCorrespondence {
    int rows = 0;
    int cols = 0;
    int cell = 8;
    std::vector<Vec2> target;    // full-image pixel coordinates in image_b
    std::vector<uint8_t> valid;  // in bounds and (camera mode) not occluded

    int size() const { return rows * cols; }
};

/// Image-b cell index containing `p`, or -1 when p lies outside the image.
int cell_index(const Vec2& p, int cell, int width, int height);
double cell_center(int index, int cell);

DenseCorrespondence gt_correspondence(const SyntheticPair& pair, int cell);
/// Ground-truth target of an arbitrary source point (camera mode uses the
/// same occlusion rule as gt_correspondence).
std::optional<Vec2> gt_target(const SyntheticPair& pair, const Vec2& source);

struct RansacOptions {
    double threshold_px = 1.0;
    int iterations = 2000;
    uint64_t seed = 0;
    double confidence = 0.9999;  // adaptive early stop
};

struct HomographyEstimate {
    Homography h;
    std::vector<uint8_t> inliers;
    int inlier_count = 0;
};

struct PoseEstimate {
    RelativePose pose;
    Mat3 essential;
    std::vector<uint8_t> inliers;
    int inlier_count = 0;
};

/// Normalized DLT on >= 4 correspondences (least squares for more).
Mat3 homography_dlt(std::span<const Vec2> src, std::span<const Vec2> dst);
HomographyEstimate estimate_homography_ransac(const MatchSet& matches, const RansacOptions& opts);

/// Normalized 8-point essential matrix from calibrated (K^-1 x) coordinates.
/// Returns nullopt when the linear system is rank deficient (pure rotation, planar scene).
std::optional<Mat3> essential_eight_point(std::span<const Vec2> xa, std::span<const Vec2> xb);
PoseEstimate estimate_pose_ransac(const MatchSet& matches, const Mat3& k_a, const Mat3& k_b,
                                  const RansacOptions& opts);

double rotation_angle_deg(const Mat3& r);
double translation_angle_deg(const Eigen::Vector3d& a, const Eigen::Vector3d& b);
/// max(rotation error, translation direction error up to sign), degrees.
double pose_error(const RelativePose& est, const RelativePose& gt);
/// Mean displacement of the four image corners under `est` vs `gt`.
double corner_error(const Homography& est, const Homography& gt, int width, int height);

/// Area under the cumulative error curve up to `threshold`, normalized to [0, 1].
/// Errors are sorted ascending and the curve is integrated with the trapezoidal
/// rule; failures are encoded as +inf.
double auc(std::span<const double> errors, double threshold);

Mat3 rotation_from_axis_angle(const Eigen::Vector3d& axis, double angle_rad);

}  // namespace cascade_match
