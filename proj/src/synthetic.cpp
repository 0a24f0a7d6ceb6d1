#include "cascade_match/synthetic.hpp"

#include "cascade_match/error.hpp"

#include <Eigen/Dense>
#include <nlohmann/json.hpp>
#include <opencv2/core.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

namespace cascade_match {

namespace {

using json = nlohmann::json;
namespace fs = std::filesystem;

cv::Mat to_mat(const Image& img) {
    cv::Mat m(img.height, img.width, CV_32FC(img.channels));
    std::memcpy(m.data, img.data.data(), img.data.size() * sizeof(float));
    return m;
}

Image from_mat(const cv::Mat& m) {
    cv::Mat f;
    m.convertTo(f, CV_32F);
    Image img(f.cols, f.rows, f.channels());
    if (!f.isContinuous()) f = f.clone();
    std::memcpy(img.data.data(), f.data, img.data.size() * sizeof(float));
    return img;
}

float sample_reflect(const Image& img, double x, double y, int c = 0) {
    auto reflect = [](double v, int n) {
        if (n == 1) return 0.0;
        const double period = 2.0 * (n - 1);
        v = std::fmod(std::abs(v), period);
        return v > n - 1 ? period - v : v;
    };
    x = reflect(x, img.width);
    y = reflect(y, img.height);
    const int x0 = std::min(static_cast<int>(x), img.width - 1);
    const int y0 = std::min(static_cast<int>(y), img.height - 1);
    const int x1 = std::min(x0 + 1, img.width - 1);
    const int y1 = std::min(y0 + 1, img.height - 1);
    const double fx = x - x0;
    const double fy = y - y0;
    const double v = (1 - fy) * ((1 - fx) * img.at(x0, y0, c) + fx * img.at(x1, y0, c)) +
                     fy * ((1 - fx) * img.at(x0, y1, c) + fx * img.at(x1, y1, c));
    return static_cast<float>(v);
}

void photometric_jitter(Image& img, std::mt19937_64& rng, double amount, double sigma) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::normal_distribution<double> noise(0.0, sigma);
    const double gain = 1.0 + amount * u(rng);
    const double bias = amount * 0.5 * u(rng);
    for (auto& v : img.data)
        v = static_cast<float>(std::clamp(gain * v + bias + (sigma > 0 ? noise(rng) : 0.0), 0.0, 1.0));
}

std::string base64_encode(const uint8_t* data, size_t n) {
    static constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((n + 2) / 3 * 4);
    for (size_t i = 0; i < n; i += 3) {
        uint32_t v = static_cast<uint32_t>(data[i]) << 16;
        if (i + 1 < n) v |= static_cast<uint32_t>(data[i + 1]) << 8;
        if (i + 2 < n) v |= data[i + 2];
        out.push_back(kAlphabet[(v >> 18) & 63]);
        out.push_back(kAlphabet[(v >> 12) & 63]);
        out.push_back(i + 1 < n ? kAlphabet[(v >> 6) & 63] : '=');
        out.push_back(i + 2 < n ? kAlphabet[v & 63] : '=');
    }
    return out;
}

std::vector<uint8_t> base64_decode(const std::string& s) {
    auto val = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    std::vector<uint8_t> out;
    uint32_t buf = 0;
    int bits = 0;
    for (char c : s) {
        const int v = val(c);
        if (v < 0) continue;
        buf = (buf << 6) | static_cast<uint32_t>(v);
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<uint8_t>((buf >> bits) & 0xFF));
        }
    }
    return out;
}

json encode_f32(const std::vector<float>& v, int h, int w) {
    // Payload is little-endian float32; x86/ARM hosts store floats that way natively.
    return {{"encoding", "base64-f32le"},
            {"shape", {h, w}},
            {"data", base64_encode(reinterpret_cast<const uint8_t*>(v.data()), v.size() * sizeof(float))}};
}

std::vector<float> decode_f32(const json& j) {
    if (j.at("encoding") != "base64-f32le") throw ValidationError("unsupported array encoding");
    const auto bytes = base64_decode(j.at("data").get<std::string>());
    const auto shape = j.at("shape").get<std::vector<int>>();
    const size_t n = static_cast<size_t>(shape.at(0)) * shape.at(1);
    if (bytes.size() != n * sizeof(float)) throw ValidationError("array payload size mismatch");
    std::vector<float> out(n);
    std::memcpy(out.data(), bytes.data(), bytes.size());
    return out;
}

json mat3_json(const Mat3& m) {
    return json::array({{m(0, 0), m(0, 1), m(0, 2)}, {m(1, 0), m(1, 1), m(1, 2)}, {m(2, 0), m(2, 1), m(2, 2)}});
}

Mat3 mat3_from(const json& j) {
    Mat3 m;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) m(r, c) = j.at(r).at(c).get<double>();
    return m;
}

struct ScenePlane {
    Eigen::Vector3d origin;
    Eigen::Vector3d normal;
    Eigen::Vector3d u_axis;
    Eigen::Vector3d v_axis;
    double half_u = 1e9;
    double half_v = 1e9;
    double texel = 0.02;  // world units per texture pixel
    Image texture;
    float gain = 1.0f;
};

struct Hit {
    double depth = -1;
    float value = 0.5f;
};

Hit cast(const std::vector<ScenePlane>& planes, const Eigen::Vector3d& center, const Eigen::Vector3d& dir) {
    Hit best;
    for (const auto& pl : planes) {
        const double denom = pl.normal.dot(dir);
        if (std::abs(denom) < 1e-12) continue;
        const double s = pl.normal.dot(pl.origin - center) / denom;
        if (s <= 1e-6 || (best.depth > 0 && s >= best.depth)) continue;
        const Eigen::Vector3d x = center + s * dir - pl.origin;
        const double pu = x.dot(pl.u_axis);
        const double pv = x.dot(pl.v_axis);
        if (std::abs(pu) > pl.half_u || std::abs(pv) > pl.half_v) continue;
        best.depth = s;
        const double tx = pu / pl.texel + pl.texture.width / 2.0;
        const double ty = pv / pl.texel + pl.texture.height / 2.0;
        best.value = std::clamp(pl.gain * sample_reflect(pl.texture, tx, ty), 0.0f, 1.0f);
    }
    return best;
}

void render(const std::vector<ScenePlane>& planes, const Mat3& k, const Mat3& r, const Eigen::Vector3d& center,
            Image& image, std::vector<float>& depth) {
    const Mat3 k_inv = k.inverse();
    depth.assign(static_cast<size_t>(image.width) * image.height, 0.0f);
    for (int y = 0; y < image.height; ++y)
        for (int x = 0; x < image.width; ++x) {
            const Eigen::Vector3d dir = r.transpose() * (k_inv * Eigen::Vector3d(x, y, 1.0));
            const Hit h = cast(planes, center, dir);
            image.at(x, y) = h.value;
            depth[static_cast<size_t>(y) * image.width + x] = static_cast<float>(h.depth);
        }
}

Eigen::Vector3d tilted_normal(std::mt19937_64& rng, double max_tilt_deg) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    const double a = u(rng) * max_tilt_deg * M_PI / 180.0;
    const double b = u(rng) * max_tilt_deg * M_PI / 180.0;
    const Mat3 r = rotation_from_axis_angle(Eigen::Vector3d::UnitX(), a) *
                   rotation_from_axis_angle(Eigen::Vector3d::UnitY(), b);
    return r * Eigen::Vector3d(0, 0, -1);
}

void plane_axes(ScenePlane& p) {
    const Eigen::Vector3d up = std::abs(p.normal.y()) < 0.9 ? Eigen::Vector3d::UnitY() : Eigen::Vector3d::UnitX();
    p.u_axis = up.cross(p.normal).normalized();
    p.v_axis = p.normal.cross(p.u_axis).normalized();
}

}  // namespace

Image procedural_texture(uint64_t seed, int width, int height) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    cv::Mat acc = cv::Mat::zeros(height, width, CV_32F);

    // Value-noise octaves from coarse to fine.
    double amp = 1.0;
    for (int cells = 4; cells <= std::max(width, height) / 4; cells *= 2) {
        cv::Mat grid(cells + 1, cells + 1, CV_32F);
        for (int r = 0; r <= cells; ++r)
            for (int c = 0; c <= cells; ++c) grid.at<float>(r, c) = static_cast<float>(u01(rng) - 0.5);
        cv::Mat up;
        cv::resize(grid, up, cv::Size(width, height), 0, 0, cv::INTER_CUBIC);
        acc += amp * up;
        amp *= 0.6;
    }

    // Structured layer: polygons, ellipses and strokes with random intensities.
    cv::Mat shapes(height, width, CV_32F, cv::Scalar(0.5));
    const int n_shapes = 30 + static_cast<int>(u01(rng) * 30);
    const double extent = std::min(width, height);
    for (int s = 0; s < n_shapes; ++s) {
        const float value = static_cast<float>(u01(rng));
        const cv::Point center(static_cast<int>(u01(rng) * width), static_cast<int>(u01(rng) * height));
        const double radius = extent * (0.02 + 0.12 * u01(rng));
        const int kind = static_cast<int>(u01(rng) * 3);
        if (kind == 0) {
            const int verts = 3 + static_cast<int>(u01(rng) * 5);
            std::vector<cv::Point> poly;
            for (int v = 0; v < verts; ++v) {
                const double a = 2 * M_PI * (v + 0.6 * u01(rng)) / verts;
                const double rr = radius * (0.5 + 0.5 * u01(rng));
                poly.emplace_back(center.x + static_cast<int>(rr * std::cos(a)),
                                  center.y + static_cast<int>(rr * std::sin(a)));
            }
            cv::fillPoly(shapes, std::vector<std::vector<cv::Point>>{poly}, cv::Scalar(value), cv::LINE_AA);
        } else if (kind == 1) {
            cv::ellipse(shapes, center,
                        cv::Size(static_cast<int>(radius), static_cast<int>(radius * (0.3 + 0.7 * u01(rng)))),
                        u01(rng) * 180.0, 0, 360, cv::Scalar(value), cv::FILLED, cv::LINE_AA);
        } else {
            const cv::Point end(center.x + static_cast<int>((u01(rng) - 0.5) * 4 * radius),
                                center.y + static_cast<int>((u01(rng) - 0.5) * 4 * radius));
            cv::line(shapes, center, end, cv::Scalar(value), 1 + static_cast<int>(u01(rng) * 4), cv::LINE_AA);
        }
    }
    cv::Mat combined = 0.6 * shapes + 0.4 * (acc + 0.5);
    double lo = 0, hi = 1;
    cv::minMaxLoc(combined, &lo, &hi);
    combined = (combined - lo) / std::max(hi - lo, 1e-6);
    return from_mat(combined);
}

Image bilinear_warp(const Image& src, const Homography& dst_to_src, int width, int height) {
    Image out(width, height, src.channels);
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
            const Eigen::Vector3d q = dst_to_src.m * Eigen::Vector3d(x, y, 1.0);
            const double sx = q.x() / q.z();
            const double sy = q.y() / q.z();
            for (int c = 0; c < src.channels; ++c) out.at(x, y, c) = sample_reflect(src, sx, sy, c);
        }
    return out;
}

SyntheticPair make_homography_pair_from_image(uint64_t seed, const Image& source, const PairOptions& opts) {
    const Image canvas = source.to_gray();
    std::mt19937_64 rng(seed ^ 0x9E3779B97F4A7C15ULL);
    const Homography h = sample_homography(seed, opts.bounds, opts.width, opts.height);
    // image_a is a centered crop of the canvas; image_b samples the canvas through H^-1.
    const double ox = (canvas.width - opts.width) / 2.0;
    const double oy = (canvas.height - opts.height) / 2.0;
    Mat3 crop;
    crop << 1, 0, ox, 0, 1, oy, 0, 0, 1;
    SyntheticPair pair;
    pair.seed = seed;
    pair.truth = h;
    pair.image_a = bilinear_warp(canvas, Homography::normalized(crop), opts.width, opts.height);
    pair.image_b = bilinear_warp(canvas, Homography::normalized(crop * h.inverse().m), opts.width, opts.height);
    photometric_jitter(pair.image_b, rng, opts.photometric, opts.noise_sigma);
    return pair;
}

SyntheticPair make_homography_pair(uint64_t seed, const PairOptions& opts) {
    const Image canvas = procedural_texture(seed * 7919 + 17, 2 * opts.width, 2 * opts.height);
    return make_homography_pair_from_image(seed, canvas, opts);
}

SyntheticPair make_two_view_pair(uint64_t seed, const PairOptions& opts) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    const int w = opts.width;
    const int h = opts.height;
    Mat3 k;
    const double f = 0.9 * w;
    k << f, 0, (w - 1) / 2.0, 0, f, (h - 1) / 2.0, 0, 0, 1;

    for (int attempt = 0; attempt < 50; ++attempt) {
        std::vector<ScenePlane> planes;
        ScenePlane bg;
        bg.origin = Eigen::Vector3d(0, 0, 7.0 + 2.0 * u01(rng));
        bg.normal = tilted_normal(rng, 25.0);
        plane_axes(bg);
        bg.texel = 24.0 / 768.0;
        bg.texture = procedural_texture(rng(), 768, 768);
        planes.push_back(std::move(bg));
        const int n_cards = 3 + static_cast<int>(u01(rng) * 2);
        for (int c = 0; c < n_cards; ++c) {
            ScenePlane card;
            const double z = 3.5 + 2.0 * u01(rng);
            card.origin = Eigen::Vector3d(z * (u01(rng) - 0.5) * 0.7 * w / f, z * (u01(rng) - 0.5) * 0.7 * h / f, z);
            card.normal = tilted_normal(rng, 20.0);
            plane_axes(card);
            card.half_u = 0.4 + 0.6 * u01(rng);
            card.half_v = 0.4 + 0.6 * u01(rng);
            card.texel = 2.0 * std::max(card.half_u, card.half_v) / 256.0;
            card.texture = procedural_texture(rng(), 256, 256);
            card.gain = static_cast<float>(0.8 + 0.4 * u01(rng));
            planes.push_back(std::move(card));
        }

        const Eigen::Vector3d axis(u01(rng) - 0.5, u01(rng) - 0.5, u01(rng) - 0.5);
        const Mat3 r = rotation_from_axis_angle(axis, (2.0 + 6.0 * u01(rng)) * M_PI / 180.0);
        const double phi = 2 * M_PI * u01(rng);
        const Eigen::Vector3d center_b =
            (0.5 + 0.4 * u01(rng)) * Eigen::Vector3d(std::cos(phi), std::sin(phi), 0.3 * (u01(rng) - 0.5)).normalized();

        CameraTruth cam;
        cam.k = k;
        cam.r = r;
        cam.t = -r * center_b;
        SyntheticPair pair;
        pair.seed = seed;
        pair.image_a = Image(w, h);
        pair.image_b = Image(w, h);
        render(planes, k, Mat3::Identity(), Eigen::Vector3d::Zero(), pair.image_a, cam.depth_a);
        render(planes, k, r, center_b, pair.image_b, cam.depth_b);
        pair.truth = std::move(cam);

        const auto corr = gt_correspondence(pair, 8);
        const int valid = static_cast<int>(std::count(corr.valid.begin(), corr.valid.end(), 1));
        if (2 * valid < corr.size()) continue;
        photometric_jitter(pair.image_b, rng, opts.photometric, opts.noise_sigma);
        return pair;
    }
    throw ValidationError("could not render a two-view pair with enough overlap");
}

Image load_png(const fs::path& path) {
    cv::Mat m = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
    if (m.empty()) throw ValidationError("cannot read image " + path.string());
    if (m.channels() == 4) cv::cvtColor(m, m, cv::COLOR_BGRA2BGR);
    if (m.channels() == 3) cv::cvtColor(m, m, cv::COLOR_BGR2RGB);
    const double scale = m.depth() == CV_16U ? 1.0 / 65535.0 : (m.depth() == CV_8U ? 1.0 / 255.0 : 1.0);
    cv::Mat f;
    m.convertTo(f, CV_32F, scale);
    return from_mat(f);
}

void save_png(const fs::path& path, const Image& image) {
    cv::Mat m = to_mat(image);
    cv::Mat out;
    m.convertTo(out, CV_8U, 255.0);
    if (out.channels() == 3) cv::cvtColor(out, out, cv::COLOR_RGB2BGR);
    if (!cv::imwrite(path.string(), out)) throw std::runtime_error("cannot write image " + path.string());
}

void save_pair(const fs::path& dir, const std::string& stem, const SyntheticPair& pair) {
    fs::create_directories(dir);
    save_png(dir / (stem + "_a.png"), pair.image_a);
    save_png(dir / (stem + "_b.png"), pair.image_b);
    json j;
    j["seed"] = pair.seed;
    j["width"] = pair.image_a.width;
    j["height"] = pair.image_a.height;
    if (const auto* hom = std::get_if<Homography>(&pair.truth)) {
        j["mode"] = "homography";
        j["homography"] = mat3_json(hom->m);
    } else {
        const auto& cam = std::get<CameraTruth>(pair.truth);
        j["mode"] = "two_view";
        j["K"] = mat3_json(cam.k);
        j["R"] = mat3_json(cam.r);
        j["t"] = {cam.t.x(), cam.t.y(), cam.t.z()};
        j["depth_a"] = encode_f32(cam.depth_a, pair.image_a.height, pair.image_a.width);
        j["depth_b"] = encode_f32(cam.depth_b, pair.image_b.height, pair.image_b.width);
    }
    std::ofstream os(dir / (stem + ".json"));
    if (!os) throw std::runtime_error("cannot write truth file in " + dir.string());
    os << j.dump(1) << '\n';
}

SyntheticPair load_pair(const fs::path& dir, const std::string& stem) {
    std::ifstream is(dir / (stem + ".json"));
    if (!is) throw ValidationError("missing truth file " + (dir / (stem + ".json")).string());
    const json j = json::parse(is);
    SyntheticPair pair;
    pair.seed = j.value("seed", uint64_t{0});
    pair.image_a = load_png(dir / (stem + "_a.png")).to_gray();
    pair.image_b = load_png(dir / (stem + "_b.png")).to_gray();
    const std::string mode = j.at("mode");
    if (mode == "homography") {
        pair.truth = Homography::normalized(mat3_from(j.at("homography")));
    } else if (mode == "two_view") {
        CameraTruth cam;
        cam.k = mat3_from(j.at("K"));
        cam.r = mat3_from(j.at("R"));
        const auto t = j.at("t").get<std::vector<double>>();
        cam.t = Eigen::Vector3d(t.at(0), t.at(1), t.at(2));
        cam.depth_a = decode_f32(j.at("depth_a"));
        cam.depth_b = decode_f32(j.at("depth_b"));
        pair.truth = std::move(cam);
    } else {
        throw ValidationError("unknown truth mode '" + mode + "'");
    }
    return pair;
}

std::vector<std::string> list_pairs(const fs::path& dir) {
    std::vector<std::string> out;
    if (!fs::is_directory(dir)) throw ValidationError("corpus directory not found: " + dir.string());
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.path().extension() != ".json") continue;
        const std::string stem = entry.path().stem().string();
        if (fs::exists(dir / (stem + "_a.png")) && fs::exists(dir / (stem + "_b.png"))) out.push_back(stem);
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace cascade_match
