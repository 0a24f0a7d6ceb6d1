#include "cascade_match/geometry.hpp"

#include "cascade_match/error.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <istream>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>

namespace cascade_match {

namespace {

constexpr double kRadToDeg = 180.0 / M_PI;

/// Hartley normalization: centroid at origin, mean distance sqrt(2).
Mat3 normalizing_transform(std::span<const Vec2> pts) {
    Vec2 c = Vec2::Zero();
    for (const auto& p : pts) c += p;
    c /= static_cast<double>(pts.size());
    double mean_dist = 0;
    for (const auto& p : pts) mean_dist += (p - c).norm();
    mean_dist /= static_cast<double>(pts.size());
    const double s = mean_dist > 1e-15 ? std::sqrt(2.0) / mean_dist : 1.0;
    Mat3 t;
    t << s, 0, -s * c.x(), 0, s, -s * c.y(), 0, 0, 1;
    return t;
}

Vec2 transform(const Mat3& t, const Vec2& p) {
    Eigen::Vector3d q = t * p.homogeneous();
    return q.hnormalized();
}

std::vector<int> sample_distinct(std::mt19937_64& rng, int n, int k) {
    std::vector<int> out;
    out.reserve(k);
    std::uniform_int_distribution<int> dist(0, n - 1);
    while (static_cast<int>(out.size()) < k) {
        int v = dist(rng);
        if (std::find(out.begin(), out.end(), v) == out.end()) out.push_back(v);
    }
    return out;
}

bool collinear(const Vec2& a, const Vec2& b, const Vec2& c) {
    const Vec2 u = b - a;
    const Vec2 v = c - a;
    const double cross = u.x() * v.y() - u.y() * v.x();
    return std::abs(cross) <= 1e-9 * std::max(1.0, u.norm() * v.norm());
}

bool degenerate_quad(std::span<const Vec2> p) {
    for (int i = 0; i < 4; ++i)
        for (int j = i + 1; j < 4; ++j)
            for (int k = j + 1; k < 4; ++k)
                if (collinear(p[i], p[j], p[k])) return true;
    return false;
}

int adaptive_iterations(int inliers, int n, int sample, double confidence, int cap) {
    if (inliers <= 0) return cap;
    const double w = static_cast<double>(inliers) / n;
    const double p_good = std::pow(w, sample);
    if (p_good >= 1.0 - 1e-12) return 0;
    const double needed = std::log(1.0 - confidence) / std::log(1.0 - p_good);
    if (!std::isfinite(needed)) return cap;
    return static_cast<int>(std::min<double>(cap, std::ceil(needed)));
}

double inverse_depth_at(const std::vector<float>& depth, int w, int h, const Vec2& p, bool& consistent) {
    consistent = false;
    const double x = std::clamp(p.x(), 0.0, static_cast<double>(w - 1));
    const double y = std::clamp(p.y(), 0.0, static_cast<double>(h - 1));
    const int x0 = std::min(static_cast<int>(std::floor(x)), w - 1);
    const int y0 = std::min(static_cast<int>(std::floor(y)), h - 1);
    const int x1 = std::min(x0 + 1, w - 1);
    const int y1 = std::min(y0 + 1, h - 1);
    const double fx = x - x0;
    const double fy = y - y0;
    const double d00 = depth[static_cast<size_t>(y0) * w + x0];
    const double d01 = depth[static_cast<size_t>(y0) * w + x1];
    const double d10 = depth[static_cast<size_t>(y1) * w + x0];
    const double d11 = depth[static_cast<size_t>(y1) * w + x1];
    if (!(d00 > 0 && d01 > 0 && d10 > 0 && d11 > 0)) return 0;
    const double i00 = 1.0 / d00, i01 = 1.0 / d01, i10 = 1.0 / d10, i11 = 1.0 / d11;
    const double lo = std::min({i00, i01, i10, i11});
    const double hi = std::max({i00, i01, i10, i11});
    // Neighbors straddling a depth discontinuity cannot be interpolated.
    consistent = (hi - lo) <= 0.01 * hi;
    return (1 - fy) * ((1 - fx) * i00 + fx * i01) + fy * ((1 - fx) * i10 + fx * i11);
}

bool in_image(const Vec2& p, int w, int h) {
    return p.x() >= -0.5 && p.x() < w - 0.5 && p.y() >= -0.5 && p.y() < h - 0.5;
}

std::optional<Vec2> camera_target(const CameraTruth& cam, int w, int h, const Vec2& p) {
    bool ok = false;
    const double inv_a = inverse_depth_at(cam.depth_a, w, h, p, ok);
    if (!ok || inv_a <= 0) return std::nullopt;
    const Eigen::Vector3d ray = cam.k.inverse() * p.homogeneous();
    const Eigen::Vector3d xa = ray / inv_a;
    const Eigen::Vector3d xb = cam.r * xa + cam.t;
    if (xb.z() <= 1e-9) return std::nullopt;
    const Vec2 q = (cam.k * xb).hnormalized();
    if (!in_image(q, w, h)) return std::nullopt;
    const double inv_b = inverse_depth_at(cam.depth_b, w, h, q, ok);
    if (!ok || inv_b <= 0) return std::nullopt;
    const double zb = 1.0 / inv_b;
    if (std::abs(zb - xb.z()) > 0.01 * xb.z()) return std::nullopt;
    return q;
}

}  // namespace

Image Image::to_gray() const {
    if (channels == 1) return *this;
    Image g(width, height, 1);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            float s = 0;
            for (int c = 0; c < channels; ++c) s += at(x, y, c);
            g.at(x, y) = s / static_cast<float>(channels);
        }
    return g;
}

Homography Homography::normalized(const Mat3& m) {
    if (!m.allFinite() || std::abs(m.determinant()) < 1e-300)
        throw ValidationError("homography is singular");
    Homography h;
    const double s = m(2, 2);
    h.m = std::abs(s) > 1e-300 ? Mat3(m / s) : m;
    return h;
}

Homography Homography::inverse() const { return normalized(m.inverse()); }

Vec2 Homography::apply(const Vec2& p) const {
    const Eigen::Vector3d q = m * p.homogeneous();
    if (std::abs(q.z()) < 1e-12) throw ValidationError("point maps to infinity under homography");
    return q.hnormalized();
}

bool RelativePose::valid() const {
    return (r.transpose() * r - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-9 &&
           std::abs(r.determinant() - 1.0) < 1e-9 && std::abs(t.norm() - 1.0) < 1e-9;
}

RelativePose CameraTruth::pose() const {
    RelativePose p;
    p.r = r;
    const double n = t.norm();
    p.t = n > 0 ? Eigen::Vector3d(t / n) : Eigen::Vector3d::UnitX();
    return p;
}

SyntheticPair swapped_pair(const SyntheticPair& pair) {
    SyntheticPair out;
    out.image_a = pair.image_b;
    out.image_b = pair.image_a;
    out.seed = pair.seed;
    if (const auto* h = std::get_if<Homography>(&pair.truth)) {
        out.truth = h->inverse();
    } else {
        const auto& cam = std::get<CameraTruth>(pair.truth);
        CameraTruth inv;
        inv.k = cam.k;
        inv.r = cam.r.transpose();
        inv.t = -(cam.r.transpose() * cam.t);
        inv.depth_a = cam.depth_b;
        inv.depth_b = cam.depth_a;
        out.truth = std::move(inv);
    }
    return out;
}

void write_matches_jsonl(std::ostream& os, const MatchSet& matches) {
    for (const auto& m : matches) {
        nlohmann::json j = {{"xa", m.xa}, {"ya", m.ya}, {"xb", m.xb}, {"yb", m.yb},
                            {"conf", m.conf}, {"scale", m.scale}};
        os << j.dump() << '\n';
    }
}

MatchSet read_matches_jsonl(std::istream& is) {
    MatchSet out;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto j = nlohmann::json::parse(line);
        Match m;
        m.xa = j.at("xa").get<double>();
        m.ya = j.at("ya").get<double>();
        m.xb = j.at("xb").get<double>();
        m.yb = j.at("yb").get<double>();
        m.conf = j.at("conf").get<double>();
        m.scale = j.at("scale").get<double>();
        out.push_back(m);
    }
    return out;
}

Mat3 rotation_from_axis_angle(const Eigen::Vector3d& axis, double angle_rad) {
    return Eigen::AngleAxisd(angle_rad, axis.normalized()).toRotationMatrix();
}

Homography sample_homography(uint64_t seed, const HomographyBounds& b, int width, int height, int max_retries) {
    if (b.rotation_deg < 0 || b.scale < 0 || b.tx < 0 || b.ty < 0 || b.perspective < 0)
        throw ValidationError("homography bounds must be non-negative");
    if (width <= 0 || height <= 0) throw ValidationError("image size must be positive");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double cx = (width - 1) / 2.0;
    const double cy = (height - 1) / 2.0;
    const int cell = 8;
    const int rows = std::max(1, height / cell);
    const int cols = std::max(1, width / cell);
    for (int attempt = 0; attempt <= max_retries; ++attempt) {
        const double angle = u(rng) * b.rotation_deg * M_PI / 180.0;
        const double s = std::exp(u(rng) * std::log1p(b.scale));
        const double tx = u(rng) * b.tx;
        const double ty = u(rng) * b.ty;
        const double p1 = u(rng) * b.perspective / width;
        const double p2 = u(rng) * b.perspective / height;
        Mat3 to_origin, from_origin, rot, persp;
        to_origin << 1, 0, -cx, 0, 1, -cy, 0, 0, 1;
        from_origin << 1, 0, cx + tx, 0, 1, cy + ty, 0, 0, 1;
        rot << s * std::cos(angle), -s * std::sin(angle), 0, s * std::sin(angle), s * std::cos(angle), 0, 0, 0, 1;
        persp << 1, 0, 0, 0, 1, 0, p1, p2, 1;
        const Homography h = Homography::normalized(from_origin * rot * persp * to_origin);
        int inside = 0;
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) {
                const Eigen::Vector3d q = h.m * Vec2(cell_center(c, cell), cell_center(r, cell)).homogeneous();
                if (q.z() > 1e-12 && in_image(q.hnormalized(), width, height)) ++inside;
            }
        if (2 * inside >= rows * cols) return h;
    }
    throw ValidationError("could not sample a homography with enough overlap");
}

std::vector<Vec2> warp_points(std::span<const Vec2> points, const Homography& h) {
    std::vector<Vec2> out;
    out.reserve(points.size());
    for (const auto& p : points) {
        if (!p.allFinite()) throw ValidationError("warp_points: non-finite input point");
        out.push_back(h.apply(p));
    }
    return out;
}

int cell_index(const Vec2& p, int cell, int width, int height) {
    if (!in_image(p, width, height)) return -1;
    const int cols = width / cell;
    const int rows = height / cell;
    const int cx = static_cast<int>(std::floor((p.x() + 0.5) / cell));
    const int cy = static_cast<int>(std::floor((p.y() + 0.5) / cell));
    if (cx < 0 || cy < 0 || cx >= cols || cy >= rows) return -1;
    return cy * cols + cx;
}

double cell_center(int index, int cell) { return index * cell + (cell - 1) / 2.0; }

std::optional<Vec2> gt_target(const SyntheticPair& pair, const Vec2& source) {
    const int w = pair.image_a.width;
    const int h = pair.image_a.height;
    if (const auto* hom = std::get_if<Homography>(&pair.truth)) {
        const Eigen::Vector3d q = hom->m * source.homogeneous();
        if (std::abs(q.z()) < 1e-12) return std::nullopt;
        const Vec2 t = q.hnormalized();
        if (!in_image(t, pair.image_b.width, pair.image_b.height)) return std::nullopt;
        return t;
    }
    const auto& cam = std::get<CameraTruth>(pair.truth);
    if (cam.depth_a.size() != static_cast<size_t>(w) * h || cam.depth_b.size() != cam.depth_a.size())
        throw ValidationError("camera-mode pair is missing its depth maps");
    return camera_target(cam, w, h, source);
}

DenseCorrespondence gt_correspondence(const SyntheticPair& pair, int cell) {
    if (cell <= 0) throw ValidationError("cell size must be positive");
    if (const auto* cam = std::get_if<CameraTruth>(&pair.truth)) {
        const size_t n = static_cast<size_t>(pair.image_a.width) * pair.image_a.height;
        if (cam->depth_a.size() != n || cam->depth_b.size() != n)
            throw ValidationError("camera-mode pair is missing its depth maps");
    }
    DenseCorrespondence out;
    out.cell = cell;
    out.rows = pair.image_a.height / cell;
    out.cols = pair.image_a.width / cell;
    out.target.assign(out.size(), Vec2::Zero());
    out.valid.assign(out.size(), 0);
    for (int r = 0; r < out.rows; ++r)
        for (int c = 0; c < out.cols; ++c) {
            const int idx = r * out.cols + c;
            const auto t = gt_target(pair, Vec2(cell_center(c, cell), cell_center(r, cell)));
            if (t) {
                out.target[idx] = *t;
                out.valid[idx] = 1;
            }
        }
    return out;
}

Mat3 homography_dlt(std::span<const Vec2> src, std::span<const Vec2> dst) {
    if (src.size() < 4 || src.size() != dst.size()) throw ValidationError("homography_dlt needs >= 4 pairs");
    const Mat3 ts = normalizing_transform(src);
    const Mat3 td = normalizing_transform(dst);
    const int n = static_cast<int>(src.size());
    Eigen::MatrixXd a(2 * n, 9);
    for (int i = 0; i < n; ++i) {
        const Vec2 p = transform(ts, src[i]);
        const Vec2 q = transform(td, dst[i]);
        a.row(2 * i) << -p.x(), -p.y(), -1, 0, 0, 0, q.x() * p.x(), q.x() * p.y(), q.x();
        a.row(2 * i + 1) << 0, 0, 0, -p.x(), -p.y(), -1, q.y() * p.x(), q.y() * p.y(), q.y();
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    const Eigen::VectorXd v = svd.matrixV().col(8);
    Mat3 hn;
    hn << v(0), v(1), v(2), v(3), v(4), v(5), v(6), v(7), v(8);
    const Mat3 h = td.inverse() * hn * ts;
    return h / h(2, 2);
}

HomographyEstimate estimate_homography_ransac(const MatchSet& matches, const RansacOptions& opts) {
    const int n = static_cast<int>(matches.size());
    if (n < 4) throw ValidationError("homography estimation needs at least 4 matches");
    std::vector<Vec2> src(n), dst(n);
    for (int i = 0; i < n; ++i) {
        src[i] = Vec2(matches[i].xa, matches[i].ya);
        dst[i] = Vec2(matches[i].xb, matches[i].yb);
    }
    const double thr2 = opts.threshold_px * opts.threshold_px;
    auto score = [&](const Mat3& h, std::vector<uint8_t>& mask) {
        int count = 0;
        mask.assign(n, 0);
        for (int i = 0; i < n; ++i) {
            const Eigen::Vector3d q = h * src[i].homogeneous();
            if (std::abs(q.z()) < 1e-12) continue;
            if ((q.hnormalized() - dst[i]).squaredNorm() < thr2) {
                mask[i] = 1;
                ++count;
            }
        }
        return count;
    };

    std::mt19937_64 rng(opts.seed);
    Mat3 best = Mat3::Identity();
    std::vector<uint8_t> best_mask, mask;
    int best_count = -1;
    int budget = opts.iterations;
    std::array<Vec2, 4> s4, d4;
    for (int it = 0; it < budget; ++it) {
        const auto idx = sample_distinct(rng, n, 4);
        for (int k = 0; k < 4; ++k) {
            s4[k] = src[idx[k]];
            d4[k] = dst[idx[k]];
        }
        if (degenerate_quad(s4) || degenerate_quad(d4)) continue;
        const Mat3 h = homography_dlt(s4, d4);
        if (!h.allFinite()) continue;
        const int c = score(h, mask);
        if (c > best_count) {
            best_count = c;
            best = h;
            best_mask = mask;
            budget = std::min(budget, std::max(it + 1, adaptive_iterations(c, n, 4, opts.confidence, opts.iterations)));
        }
    }
    if (best_count < 4) throw EstimationFailure("no homography reached 4 inliers");

    // Least-squares refit on the consensus set, repeated while it grows.
    for (int round = 0; round < 3; ++round) {
        std::vector<Vec2> si, di;
        for (int i = 0; i < n; ++i)
            if (best_mask[i]) {
                si.push_back(src[i]);
                di.push_back(dst[i]);
            }
        const Mat3 h = homography_dlt(si, di);
        if (!h.allFinite()) break;
        const int c = score(h, mask);
        if (c < best_count) break;
        const bool grew = c > best_count;
        best = h;
        best_count = c;
        best_mask = mask;
        if (!grew) break;
    }
    HomographyEstimate out;
    out.h = Homography::normalized(best);
    out.inliers = std::move(best_mask);
    out.inlier_count = best_count;
    return out;
}

std::optional<Mat3> essential_eight_point(std::span<const Vec2> xa, std::span<const Vec2> xb) {
    const int n = static_cast<int>(xa.size());
    if (n < 8 || xb.size() != xa.size()) return std::nullopt;
    const Mat3 ta = normalizing_transform(xa);
    const Mat3 tb = normalizing_transform(xb);
    Eigen::MatrixXd a(std::max(n, 9), 9);
    a.setZero();
    for (int i = 0; i < n; ++i) {
        const Vec2 p = transform(ta, xa[i]);
        const Vec2 q = transform(tb, xb[i]);
        a.row(i) << q.x() * p.x(), q.x() * p.y(), q.x(), q.y() * p.x(), q.y() * p.y(), q.y(), p.x(), p.y(), 1;
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
    const auto& sv = svd.singularValues();
    // A one-dimensional null space is required; a second vanishing singular
    // value means the correspondences do not constrain E (no parallax, planar).
    if (sv(7) < 1e-8 * sv(0)) return std::nullopt;
    const Eigen::VectorXd v = svd.matrixV().col(8);
    Mat3 en;
    en << v(0), v(1), v(2), v(3), v(4), v(5), v(6), v(7), v(8);
    Mat3 e = tb.transpose() * en * ta;
    Eigen::JacobiSVD<Mat3> es(e, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Eigen::Vector3d d(1, 1, 0);
    e = es.matrixU() * d.asDiagonal() * es.matrixV().transpose();
    return e;
}

namespace {

double sampson_error(const Mat3& e, const Vec2& a, const Vec2& b) {
    const Eigen::Vector3d pa = a.homogeneous();
    const Eigen::Vector3d pb = b.homogeneous();
    const Eigen::Vector3d ea = e * pa;
    const Eigen::Vector3d eb = e.transpose() * pb;
    const double num = pb.dot(ea);
    const double den = ea.x() * ea.x() + ea.y() * ea.y() + eb.x() * eb.x() + eb.y() * eb.y();
    return den > 0 ? num * num / den : std::numeric_limits<double>::infinity();
}

/// Linear triangulation; returns depths in both cameras.
std::pair<double, double> triangulate_depths(const Mat3& r, const Eigen::Vector3d& t, const Vec2& a, const Vec2& b) {
    Eigen::Matrix4d m;
    Eigen::Matrix<double, 3, 4> pa = Eigen::Matrix<double, 3, 4>::Zero();
    pa.leftCols<3>() = Mat3::Identity();
    Eigen::Matrix<double, 3, 4> pb;
    pb.leftCols<3>() = r;
    pb.col(3) = t;
    m.row(0) = a.x() * pa.row(2) - pa.row(0);
    m.row(1) = a.y() * pa.row(2) - pa.row(1);
    m.row(2) = b.x() * pb.row(2) - pb.row(0);
    m.row(3) = b.y() * pb.row(2) - pb.row(1);
    Eigen::JacobiSVD<Eigen::Matrix4d> svd(m, Eigen::ComputeFullV);
    Eigen::Vector4d x = svd.matrixV().col(3);
    if (std::abs(x(3)) < 1e-15) return {-1, -1};
    const Eigen::Vector3d p = x.head<3>() / x(3);
    return {p.z(), (r * p + t).z()};
}

/// Picks the (R, t) decomposition of E with the most points in front of both cameras.
std::pair<RelativePose, int> decompose_essential(const Mat3& e, std::span<const Vec2> xa, std::span<const Vec2> xb,
                                                 const std::vector<uint8_t>& mask) {
    Eigen::JacobiSVD<Mat3> svd(e, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Mat3 u = svd.matrixU();
    Mat3 v = svd.matrixV();
    if (u.determinant() < 0) u = -u;
    if (v.determinant() < 0) v = -v;
    Mat3 w;
    w << 0, -1, 0, 1, 0, 0, 0, 0, 1;
    const Mat3 r1 = u * w * v.transpose();
    const Mat3 r2 = u * w.transpose() * v.transpose();
    const Eigen::Vector3d t = u.col(2).normalized();
    const std::array<std::pair<Mat3, Eigen::Vector3d>, 4> candidates{
        std::pair{r1, t}, std::pair{r1, Eigen::Vector3d(-t)}, std::pair{r2, t}, std::pair{r2, Eigen::Vector3d(-t)}};
    int best = -1;
    RelativePose best_pose;
    for (const auto& [r, tt] : candidates) {
        int good = 0;
        for (size_t i = 0; i < xa.size(); ++i) {
            if (!mask[i]) continue;
            const auto [za, zb] = triangulate_depths(r, tt, xa[i], xb[i]);
            if (za > 0 && zb > 0) ++good;
        }
        if (good > best) {
            best = good;
            best_pose.r = r;
            best_pose.t = tt;
        }
    }
    return {best_pose, best};
}

}  // namespace

PoseEstimate estimate_pose_ransac(const MatchSet& matches, const Mat3& k_a, const Mat3& k_b, const RansacOptions& opts) {
    const int n = static_cast<int>(matches.size());
    if (n < 8) throw ValidationError("pose estimation needs at least 8 matches");
    const Mat3 ka_inv = k_a.inverse();
    const Mat3 kb_inv = k_b.inverse();
    std::vector<Vec2> xa(n), xb(n);
    for (int i = 0; i < n; ++i) {
        xa[i] = (ka_inv * Vec2(matches[i].xa, matches[i].ya).homogeneous()).hnormalized();
        xb[i] = (kb_inv * Vec2(matches[i].xb, matches[i].yb).homogeneous()).hnormalized();
    }
    const double focal = 0.25 * (k_a(0, 0) + k_a(1, 1) + k_b(0, 0) + k_b(1, 1));
    const double thr = opts.threshold_px / focal;
    const double thr2 = thr * thr;
    auto score = [&](const Mat3& e, std::vector<uint8_t>& mask) {
        int count = 0;
        mask.assign(n, 0);
        for (int i = 0; i < n; ++i)
            if (sampson_error(e, xa[i], xb[i]) < thr2) {
                mask[i] = 1;
                ++count;
            }
        return count;
    };

    std::mt19937_64 rng(opts.seed);
    std::optional<Mat3> best;
    std::vector<uint8_t> best_mask, mask;
    int best_count = -1;
    int budget = opts.iterations;
    std::vector<Vec2> sa(8), sb(8);
    for (int it = 0; it < budget; ++it) {
        const auto idx = sample_distinct(rng, n, 8);
        for (int k = 0; k < 8; ++k) {
            sa[k] = xa[idx[k]];
            sb[k] = xb[idx[k]];
        }
        const auto e = essential_eight_point(sa, sb);
        if (!e) continue;
        const int c = score(*e, mask);
        if (c > best_count) {
            best_count = c;
            best = e;
            best_mask = mask;
            budget = std::min(budget, std::max(it + 1, adaptive_iterations(c, n, 8, opts.confidence, opts.iterations)));
        }
    }
    if (!best || best_count < 8) throw EstimationFailure("no essential matrix reached 8 inliers (degenerate matches?)");

    for (int round = 0; round < 3; ++round) {
        std::vector<Vec2> ia, ib;
        for (int i = 0; i < n; ++i)
            if (best_mask[i]) {
                ia.push_back(xa[i]);
                ib.push_back(xb[i]);
            }
        const auto e = essential_eight_point(ia, ib);
        if (!e) break;
        const int c = score(*e, mask);
        if (c < best_count) break;
        const bool grew = c > best_count;
        best = e;
        best_count = c;
        best_mask = mask;
        if (!grew) break;
    }

    auto [pose, in_front] = decompose_essential(*best, xa, xb, best_mask);
    if (in_front < std::max(8, best_count / 2))
        throw EstimationFailure("cheirality check failed for every essential-matrix decomposition");
    PoseEstimate out;
    out.pose = pose;
    out.essential = *best;
    out.inliers = std::move(best_mask);
    out.inlier_count = best_count;
    return out;
}

double rotation_angle_deg(const Mat3& r) {
    const Eigen::Vector3d axis(r(2, 1) - r(1, 2), r(0, 2) - r(2, 0), r(1, 0) - r(0, 1));
    const double s = 0.5 * axis.norm();
    const double c = 0.5 * (r.trace() - 1.0);
    return std::atan2(s, c) * kRadToDeg;
}

double translation_angle_deg(const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
    return std::atan2(a.cross(b).norm(), std::abs(a.dot(b))) * kRadToDeg;
}

double pose_error(const RelativePose& est, const RelativePose& gt) {
    const double r_err = rotation_angle_deg(est.r * gt.r.transpose());
    const double t_err = translation_angle_deg(est.t, gt.t);
    return std::max(r_err, t_err);
}

double corner_error(const Homography& est, const Homography& gt, int width, int height) {
    const std::array<Vec2, 4> corners{Vec2(0, 0), Vec2(width - 1, 0), Vec2(0, height - 1), Vec2(width - 1, height - 1)};
    double sum = 0;
    for (const auto& c : corners) {
        const Eigen::Vector3d a = est.m * c.homogeneous();
        const Eigen::Vector3d b = gt.m * c.homogeneous();
        if (std::abs(a.z()) < 1e-12 || std::abs(b.z()) < 1e-12) return std::numeric_limits<double>::infinity();
        sum += (a.hnormalized() - b.hnormalized()).norm();
    }
    return sum / 4.0;
}

double auc(std::span<const double> errors, double threshold) {
    if (errors.empty()) throw ValidationError("auc of an empty error list");
    if (!(threshold > 0)) throw ValidationError("auc threshold must be positive");
    std::vector<double> e(errors.begin(), errors.end());
    for (double v : e)
        if (std::isnan(v)) throw ValidationError("auc: NaN error value");
    std::sort(e.begin(), e.end());
    const size_t n = e.size();
    // Curve points (0,0), (e_i, (i+1)/n) ..., truncated at the threshold.
    double area = 0;
    double prev_e = 0;
    double prev_r = 0;
    for (size_t i = 0; i < n; ++i) {
        if (e[i] >= threshold) break;
        const double r = static_cast<double>(i + 1) / n;
        area += 0.5 * (prev_r + r) * (e[i] - prev_e);
        prev_e = e[i];
        prev_r = r;
    }
    area += prev_r * (threshold - prev_e);
    return area / threshold;
}

}  // namespace cascade_match
