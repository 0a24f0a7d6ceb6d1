#include "cascade_match/error.hpp"
#include "cascade_match/geometry.hpp"
#include "cascade_match/synthetic.hpp"

#include "testing.hpp"

#include <Eigen/Geometry>

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

using namespace cascade_match;

namespace {

// Plain 3x3 multiply and divide, kept apart from Eigen's homogeneous helpers.
Vec2 apply_by_hand(const Mat3& m, double x, double y) {
    const double u = m(0, 0) * x + m(0, 1) * y + m(0, 2);
    const double v = m(1, 0) * x + m(1, 1) * y + m(1, 2);
    const double w = m(2, 0) * x + m(2, 1) * y + m(2, 2);
    return {u / w, v / w};
}

std::vector<Vec2> random_points(uint64_t seed, int n, double w, double h) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> ux(0, w - 1), uy(0, h - 1);
    std::vector<Vec2> pts;
    for (int i = 0; i < n; ++i) pts.emplace_back(ux(rng), uy(rng));
    return pts;
}

}  // namespace

TEST_CASE("zero bounds give the identity homography") {
    const auto h = sample_homography(3, HomographyBounds{}, 256, 256);
    CHECK((h.m - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("translation-only bounds stay within the translation range") {
    HomographyBounds b;
    b.tx = 4;
    for (uint64_t s = 0; s < 50; ++s) {
        const auto h = sample_homography(s, b, 256, 256);
        const Vec2 q = h.apply(Vec2(10, 20));
        CHECK(std::abs(q.y() - 20) < 1e-12);
        CHECK(std::abs(q.x() - 10) <= 4 + 1e-12);
    }
}

TEST_CASE("sampling is deterministic in the seed") {
    HomographyBounds b{15, 0.15, 24, 24, 0.1};
    CHECK(sample_homography(7, b, 256, 256).m == sample_homography(7, b, 256, 256).m);
    CHECK(sample_homography(7, b, 256, 256).m != sample_homography(8, b, 256, 256).m);
}

TEST_CASE("warp round trip and agreement with the hand-written projection") {
    HomographyBounds b{15, 0.15, 24, 24, 0.1};
    const auto h = sample_homography(7, b, 256, 256);
    const auto pts = random_points(11, 100, 256, 256);
    const auto fwd = warp_points(pts, h);
    const auto back = warp_points(fwd, h.inverse());
    for (size_t i = 0; i < pts.size(); ++i) {
        CHECK((back[i] - pts[i]).norm() < 1e-9);
        CHECK((fwd[i] - apply_by_hand(h.m, pts[i].x(), pts[i].y())).norm() < 1e-9);
    }
}

TEST_CASE("points sent to infinity are rejected") {
    Mat3 m = Mat3::Identity();
    m(2, 0) = 1.0;
    m(2, 2) = -5.0;  // w = x - 5
    Homography h;
    h.m = m;
    const std::vector<Vec2> pts{Vec2(5, 3)};
    CHECK_THROWS_AS(warp_points(pts, h), ValidationError);
}

TEST_CASE("singular homographies are rejected") {
    CHECK_THROWS_AS(Homography::normalized(Mat3::Zero()), ValidationError);
}

TEST_CASE("cell centers and cell indices follow the pixel-center convention") {
    CHECK(cell_center(0, 8) == doctest::Approx(3.5));
    CHECK(cell_center(3, 8) == doctest::Approx(27.5));
    CHECK(cell_center(5, 2) == doctest::Approx(10.5));
    CHECK(cell_index(Vec2(3.5, 3.5), 8, 256, 256) == 0);
    CHECK(cell_index(Vec2(8.0, 0.0), 8, 256, 256) == 1);
    CHECK(cell_index(Vec2(7.4, 8.0), 8, 256, 256) == 32);
    CHECK(cell_index(Vec2(-0.6, 4), 8, 256, 256) == -1);
    CHECK(cell_index(Vec2(4, 255.6), 8, 256, 256) == -1);
}

TEST_CASE("identity ground truth maps every cell center onto itself") {
    SyntheticPair pair;
    pair.image_a = Image(64, 48);
    pair.image_b = Image(64, 48);
    pair.truth = Homography::identity();
    const auto gt = gt_correspondence(pair, 8);
    CHECK(gt.rows == 6);
    CHECK(gt.cols == 8);
    for (int r = 0; r < gt.rows; ++r)
        for (int c = 0; c < gt.cols; ++c) {
            const int i = r * gt.cols + c;
            CHECK(gt.valid[i] == 1);
            CHECK((gt.target[i] - Vec2(8 * c + 3.5, 8 * r + 3.5)).norm() < 1e-12);
        }
}

TEST_CASE("two-view ground truth matches an independent reprojection") {
    PairOptions po;
    po.width = 128;
    po.height = 96;
    const auto pair = make_two_view_pair(5, po);
    const auto& cam = std::get<CameraTruth>(pair.truth);
    std::mt19937_64 rng(3);
    std::uniform_int_distribution<int> ux(0, po.width - 1), uy(0, po.height - 1);
    int checked = 0;
    for (int trial = 0; trial < 2000 && checked < 100; ++trial) {
        const int x = ux(rng), y = uy(rng);
        const auto t = gt_target(pair, Vec2(x, y));
        if (!t) continue;
        const double z = cam.depth_a[static_cast<size_t>(y) * po.width + x];
        const Eigen::Vector3d xa = z * (cam.k.inverse() * Eigen::Vector3d(x, y, 1));
        const Eigen::Vector3d xb = cam.r * xa + cam.t;
        const Vec2 q(cam.k(0, 0) * xb.x() / xb.z() + cam.k(0, 2), cam.k(1, 1) * xb.y() / xb.z() + cam.k(1, 2));
        CHECK((q - *t).norm() < 1e-4);
        ++checked;
    }
    CHECK(checked == 100);
    CHECK(cam.pose().valid());
}

TEST_CASE("swapping a pair inverts the truth") {
    PairOptions po;
    po.width = 128;
    po.height = 128;
    const auto hp = make_homography_pair(9, po);
    const auto hs = swapped_pair(hp);
    const Mat3 prod = std::get<Homography>(hs.truth).m * std::get<Homography>(hp.truth).m;
    CHECK((prod / prod(2, 2) - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-9);

    const auto cp = make_two_view_pair(2, po);
    const auto cs = swapped_pair(cp);
    int round_trips = 0;
    for (int y = 4; y < 128; y += 8)
        for (int x = 4; x < 128; x += 8) {
            const auto t = gt_target(cp, Vec2(x, y));
            if (!t) continue;
            const auto back = gt_target(cs, *t);
            if (!back) continue;
            CHECK((*back - Vec2(x, y)).norm() < 0.05);
            ++round_trips;
        }
    CHECK(round_trips > 20);
}

TEST_CASE("matches survive a JSONL round trip") {
    MatchSet m{{1.5, 2.5, 3.25, 4.0, 0.75, 0.125}, {10, 20, 30, 40, 0.5, 0.5}};
    std::stringstream ss;
    write_matches_jsonl(ss, m);
    const auto back = read_matches_jsonl(ss);
    REQUIRE(back.size() == 2);
    CHECK(back[1].xb == 30);
    CHECK(back[0].conf == 0.75);
    CHECK(back[1].scale == 0.5);
}

TEST_CASE("RANSAC recovers exact homographies") {
    HomographyBounds b{15, 0.15, 24, 24, 0.1};
    for (uint64_t s = 0; s < 100; ++s) {
        const auto h = sample_homography(s, b, 256, 256);
        const auto src = random_points(1000 + s, 60, 256, 256);
        MatchSet m;
        for (const auto& p : src) {
            const Vec2 q = apply_by_hand(h.m, p.x(), p.y());
            m.push_back({p.x(), p.y(), q.x(), q.y(), 1.0});
        }
        RansacOptions ro;
        ro.seed = s;
        const auto est = estimate_homography_ransac(m, ro);
        CHECK(corner_error(est.h, h, 256, 256) < 1e-6);
    }
}

TEST_CASE("RANSAC ignores gross outliers") {
    HomographyBounds b{15, 0.15, 24, 24, 0.1};
    const auto h = sample_homography(4, b, 256, 256);
    auto src = random_points(77, 100, 256, 256);
    const auto junk = random_points(78, 40, 256, 256);
    MatchSet m;
    for (size_t i = 0; i < src.size(); ++i) {
        const Vec2 q = i < 60 ? apply_by_hand(h.m, src[i].x(), src[i].y()) : junk[i - 60];
        m.push_back({src[i].x(), src[i].y(), q.x(), q.y(), 1.0});
    }
    RansacOptions ro;
    const auto est = estimate_homography_ransac(m, ro);
    CHECK(corner_error(est.h, h, 256, 256) < 1e-6);
    CHECK(est.inlier_count >= 60);
}

TEST_CASE("eight-point pose on exact correspondences") {
    std::mt19937_64 rng(5);
    std::normal_distribution<double> n01;
    std::uniform_real_distribution<double> u(-1, 1), depth(3, 8);
    for (int trial = 0; trial < 20; ++trial) {
        const Eigen::Vector3d axis(n01(rng), n01(rng), n01(rng));
        const Mat3 r = rotation_from_axis_angle(axis.normalized(), 0.2 * u(rng));
        const Eigen::Vector3d t = Eigen::Vector3d(n01(rng), n01(rng), n01(rng)).normalized();
        std::vector<Vec2> xa, xb;
        for (int i = 0; i < 30; ++i) {
            const Eigen::Vector3d p(u(rng), u(rng), depth(rng));
            const Eigen::Vector3d q = r * p + t;
            xa.emplace_back(p.x() / p.z(), p.y() / p.z());
            xb.emplace_back(q.x() / q.z(), q.y() / q.z());
        }
        const auto e = essential_eight_point(xa, xb);
        REQUIRE(e);
        for (size_t i = 0; i < xa.size(); ++i)
            CHECK(std::abs(xb[i].homogeneous().dot(*e * xa[i].homogeneous())) < 1e-8);

        MatchSet m;
        for (size_t i = 0; i < xa.size(); ++i) m.push_back({xa[i].x(), xa[i].y(), xb[i].x(), xb[i].y(), 1.0});
        RansacOptions ro;
        ro.threshold_px = 1e-4;
        const auto est = estimate_pose_ransac(m, Mat3::Identity(), Mat3::Identity(), ro);
        RelativePose gt;
        gt.r = r;
        gt.t = t;
        CHECK(pose_error(est.pose, gt) < 0.1);
    }
}

TEST_CASE("pose error is symmetric in the translation sign") {
    RelativePose a, b;
    a.t = Eigen::Vector3d::UnitZ();
    b.t = -Eigen::Vector3d::UnitZ();
    CHECK(pose_error(a, b) == doctest::Approx(0).epsilon(1e-9));
    b.r = rotation_from_axis_angle(Eigen::Vector3d::UnitY(), M_PI / 18);
    CHECK(pose_error(a, b) == doctest::Approx(10.0));
}

TEST_CASE("AUC of the reference error list") {
    const std::vector<double> e{1, 3, 7};
    CHECK(auc(e, 5) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("AUC edge cases") {
    const double inf = std::numeric_limits<double>::infinity();
    CHECK(auc(std::vector<double>{0, 0}, 3) == doctest::Approx(1.0));
    CHECK(auc(std::vector<double>{inf, inf}, 3) == 0.0);
    CHECK(auc(std::vector<double>{0, inf}, 3) == doctest::Approx(0.5));
    CHECK(auc(std::vector<double>{3, 5}, 3) == 0.0);
    CHECK_THROWS_AS(auc(std::vector<double>{}, 3), ValidationError);
    CHECK_THROWS_AS(auc(std::vector<double>{1.0}, 0), ValidationError);
    CHECK_THROWS_AS(auc(std::vector<double>{std::nan("")}, 3), ValidationError);
}

TEST_CASE("AUC is bounded and decreases as errors grow") {
    std::mt19937_64 rng(1);
    std::exponential_distribution<double> ex(0.3);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> e;
        for (int i = 0; i < 20; ++i) e.push_back(ex(rng));
        std::vector<double> worse = e;
        for (auto& v : worse) v *= 1.5;
        CHECK(auc(worse, 5) <= auc(e, 5) + 1e-12);
        for (double t : {2.0, 5.0, 10.0, 20.0}) {
            const double a = auc(e, t);
            CHECK(a >= 0);
            CHECK(a <= 1);
        }
    }
}

TEST_CASE("pair files round-trip through disk") {
    PairOptions po;
    po.width = 64;
    po.height = 64;
    const auto dir = std::filesystem::temp_directory_path() / "cm_pair_roundtrip";
    std::filesystem::remove_all(dir);
    const auto p = make_two_view_pair(12, po);
    save_pair(dir, "x", p);
    const auto q = load_pair(dir, "x");
    CHECK(list_pairs(dir) == std::vector<std::string>{"x"});
    const auto& ca = std::get<CameraTruth>(p.truth);
    const auto& cb = std::get<CameraTruth>(q.truth);
    CHECK((ca.r - cb.r).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(ca.depth_a == cb.depth_a);
    CHECK(q.image_a.width == 64);
    std::filesystem::remove_all(dir);
}

TEST_CASE("a fronto-parallel plane reprojects like its induced homography") {
    const int w = 96, h = 80;
    const double d = 5.0;
    CameraTruth cam;
    cam.k << 80, 0, 47.5, 0, 80, 39.5, 0, 0, 1;
    cam.r = rotation_from_axis_angle(Eigen::Vector3d(0.2, 1, 0.1).normalized(), 0.08);
    cam.t = Eigen::Vector3d(0.3, -0.1, 0.05);
    cam.depth_a.assign(static_cast<size_t>(w) * h, static_cast<float>(d));
    cam.depth_b.resize(cam.depth_a.size());
    const Eigen::Vector3d n = Eigen::Vector3d::UnitZ();
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            // ray s * K^-1 q in view b meets the plane n . X_a = d
            const Eigen::Vector3d ray = cam.k.inverse() * Eigen::Vector3d(x, y, 1);
            const Eigen::Vector3d rn = cam.r * n;  // n . (R^T v) = (R n) . v
            const double s = (d + rn.dot(cam.t)) / rn.dot(ray);
            cam.depth_b[static_cast<size_t>(y) * w + x] = static_cast<float>(s * ray.z());
        }
    SyntheticPair pair;
    pair.image_a = Image(w, h);
    pair.image_b = Image(w, h);
    pair.truth = cam;
    Homography hom;
    hom.m = cam.k * (cam.r + cam.t * n.transpose() / d) * cam.k.inverse();
    int checked = 0;
    for (int y = 0; y < h; y += 7)
        for (int x = 0; x < w; x += 7) {
            const auto t = gt_target(pair, Vec2(x, y));
            if (!t) continue;
            CHECK((*t - hom.apply(Vec2(x, y))).norm() < 1e-6);
            ++checked;
        }
    CHECK(checked > 50);
}

TEST_CASE("rotation error agrees with the quaternion angular distance") {
    std::mt19937_64 rng(21);
    std::normal_distribution<double> n01;
    for (int i = 0; i < 100; ++i) {
        const Eigen::Quaterniond qa = Eigen::Quaterniond(n01(rng), n01(rng), n01(rng), n01(rng)).normalized();
        const Eigen::Quaterniond qb = Eigen::Quaterniond(n01(rng), n01(rng), n01(rng), n01(rng)).normalized();
        RelativePose a, b;
        a.r = qa.toRotationMatrix();
        b.r = qb.toRotationMatrix();
        a.t = b.t = Eigen::Vector3d::UnitX();
        const double expect = qa.angularDistance(qb) * 180.0 / M_PI;
        CHECK(std::abs(pose_error(a, b) - expect) < 1e-6);
    }
}
