#include "cascade_match/report.hpp"

#include "cascade_match/error.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace cascade_match {

namespace {

cv::Mat to_bgr(const Image& img) {
    cv::Mat out(img.height, img.width, CV_8UC3);
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) {
            cv::Vec3b px;
            for (int c = 0; c < 3; ++c) {
                const float v = img.at(x, y, img.channels == 3 ? 2 - c : 0);
                px[c] = static_cast<uchar>(std::clamp(v, 0.0f, 1.0f) * 255.0f + 0.5f);
            }
            out.at<cv::Vec3b>(y, x) = px;
        }
    return out;
}

void write_png(const std::filesystem::path& path, const cv::Mat& img) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    if (!cv::imwrite(path.string(), img)) throw std::runtime_error("cannot write " + path.string());
}

const cv::Scalar kPalette[] = {{180, 90, 30}, {40, 130, 230}, {60, 160, 60}, {40, 40, 200}, {150, 80, 150},
                               {80, 80, 80},  {20, 180, 200}, {200, 150, 40}};

}  // namespace

void plot_error_curves(const std::filesystem::path& path, const EvalReport& report, double max_error) {
    if (max_error <= 0) throw ValidationError("plot range must be positive");
    const int w = 640, h = 420, left = 60, right = 200, top = 20, bottom = 50;
    cv::Mat img(h, w, CV_8UC3, cv::Scalar(255, 255, 255));
    const int pw = w - left - right, ph = h - top - bottom;
    auto px = [&](double e, double f) {
        return cv::Point(left + static_cast<int>(std::lround(e / max_error * pw)),
                         top + static_cast<int>(std::lround((1 - f) * ph)));
    };
    cv::rectangle(img, px(0, 1), px(max_error, 0), cv::Scalar(0, 0, 0), 1);
    for (int i = 0; i <= 4; ++i) {
        const double f = i / 4.0;
        std::ostringstream s;
        s << f;
        cv::putText(img, s.str(), px(0, f) + cv::Point(-40, 4), cv::FONT_HERSHEY_SIMPLEX, 0.4, cv::Scalar(0, 0, 0));
        std::ostringstream e;
        e << max_error * f;
        cv::putText(img, e.str(), px(max_error * f, 0) + cv::Point(-8, 18), cv::FONT_HERSHEY_SIMPLEX, 0.4,
                    cv::Scalar(0, 0, 0));
    }
    cv::putText(img, report.task == "homography" ? "corner error (px)" : "pose error (deg)",
                cv::Point(left + pw / 2 - 60, h - 8), cv::FONT_HERSHEY_SIMPLEX, 0.45, cv::Scalar(0, 0, 0));
    for (size_t r = 0; r < report.rows.size(); ++r) {
        const auto& row = report.rows[r];
        std::vector<double> errs = row.errors;
        std::sort(errs.begin(), errs.end());
        const double n = static_cast<double>(std::max<size_t>(1, errs.size()));
        std::vector<cv::Point> pts{px(0, 0)};
        for (size_t i = 0; i < errs.size() && errs[i] <= max_error; ++i) {
            pts.push_back(px(errs[i], i / n));
            pts.push_back(px(errs[i], (i + 1) / n));
        }
        const double reached = pts.size() > 1 ? (pts.size() - 1) / 2 / n : 0;
        pts.push_back(px(max_error, reached));
        const auto color = kPalette[r % std::size(kPalette)];
        cv::polylines(img, pts, false, color, 2, cv::LINE_AA);
        std::string name = row.label + " " + row.detector;
        if (row.resolution > 0) name += " " + std::to_string(row.resolution);
        const cv::Point at(w - right + 10, top + 16 + 18 * static_cast<int>(r));
        cv::line(img, at + cv::Point(0, -4), at + cv::Point(16, -4), color, 2);
        cv::putText(img, name, at + cv::Point(22, 0), cv::FONT_HERSHEY_SIMPLEX, 0.4, cv::Scalar(0, 0, 0));
    }
    write_png(path, img);
}

void draw_matches(const std::filesystem::path& path, const SyntheticPair& pair, const MatchSet& matches,
                  double tolerance, int max_lines) {
    const cv::Mat a = to_bgr(pair.image_a), b = to_bgr(pair.image_b);
    cv::Mat canvas(std::max(a.rows, b.rows), a.cols + b.cols, CV_8UC3, cv::Scalar(0, 0, 0));
    a.copyTo(canvas(cv::Rect(0, 0, a.cols, a.rows)));
    b.copyTo(canvas(cv::Rect(a.cols, 0, b.cols, b.rows)));
    const size_t stride = max_lines > 0 ? std::max<size_t>(1, (matches.size() + max_lines - 1) / max_lines) : 1;
    for (size_t i = 0; i < matches.size(); i += stride) {
        const auto& m = matches[i];
        const auto gt = gt_target(pair, Vec2(m.xa, m.ya));
        const bool ok = gt && (Vec2(m.xb, m.yb) - *gt).norm() <= tolerance;
        const cv::Scalar color = ok ? cv::Scalar(60, 200, 60) : cv::Scalar(40, 40, 220);
        cv::line(canvas, cv::Point2d(m.xa, m.ya), cv::Point2d(m.xb + a.cols, m.yb), color, 1, cv::LINE_AA);
    }
    write_png(path, canvas);
}

void write_json(const std::filesystem::path& path, const nlohmann::json& j) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    os << j.dump(2) << '\n';
}

}  // namespace cascade_match
