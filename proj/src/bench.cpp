#include "cascade_match/bench.hpp"

#include "cascade_match/error.hpp"
#include "cascade_match/synthetic.hpp"

#include <algorithm>
#include <chrono>
#include <iomanip>
#include <map>
#include <sstream>

namespace cascade_match {

namespace {

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

BenchReport bench(CascadeMatcher& model, int size, const MatchOptions& opts, const DetectorConfig& detector, int runs,
                  int warmup, uint64_t seed) {
    if (runs < 5) throw ValidationError("bench needs at least 5 timed runs");
    if (size < 16) throw ValidationError("bench image size must be at least 16");
    PairOptions po;
    po.width = size;
    po.height = size;
    const auto pair = make_homography_pair(seed, po);
    model->eval();

    std::vector<std::string> order;
    std::map<std::string, std::vector<double>> samples;
    auto record = [&](const std::string& name, double ms) {
        if (!samples.count(name)) order.push_back(name);
        samples[name].push_back(ms);
    };
    for (int i = 0; i < warmup + runs; ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        auto out = model->match(pair.image_a, pair.image_b, opts);
        const auto t1 = std::chrono::steady_clock::now();
        if (detector.kind != DetectorKind::none) apply_detector(detector, out.finest_confidence(), out.matches);
        const auto t2 = std::chrono::steady_clock::now();
        if (i < warmup) continue;
        for (const auto& [name, ms] : out.timings_ms) record(name, ms);
        record("detection", std::chrono::duration<double, std::milli>(t2 - t1).count());
        record("total", std::chrono::duration<double, std::milli>(t2 - t0).count());
    }

    BenchReport report;
    report.size = size;
    report.runs = runs;
    report.scales = opts.scales.empty() ? model->config().cells() : opts.scales;
    for (const auto& name : order) {
        const auto& v = samples[name];
        report.rows.push_back({name, median(v), *std::min_element(v.begin(), v.end()), *std::max_element(v.begin(), v.end())});
    }
    report.total_median_ms = report.find("total")->median_ms;
    return report;
}

const BenchRow* BenchReport::find(const std::string& stage) const {
    for (const auto& r : rows)
        if (r.stage == stage) return &r;
    return nullptr;
}

nlohmann::json BenchReport::to_json() const {
    nlohmann::json rows_j = nlohmann::json::array();
    for (const auto& r : rows)
        rows_j.push_back({{"stage", r.stage}, {"median_ms", r.median_ms}, {"min_ms", r.min_ms}, {"max_ms", r.max_ms}});
    std::vector<std::string> names;
    for (int s : scales) names.push_back(scale_name(s));
    return {{"size", size}, {"scales", names}, {"runs", runs}, {"rows", rows_j}, {"total_median_ms", total_median_ms}};
}

std::string BenchReport::table() const {
    std::ostringstream os;
    os << "image " << size << "x" << size << ", median of " << runs << " runs\n";
    os << std::left << std::setw(26) << "stage" << std::right << std::setw(12) << "median ms" << std::setw(12) << "min ms"
       << std::setw(12) << "max ms" << "\n";
    for (const auto& r : rows)
        os << std::left << std::setw(26) << r.stage << std::right << std::fixed << std::setprecision(2) << std::setw(12)
           << r.median_ms << std::setw(12) << r.min_ms << std::setw(12) << r.max_ms << "\n";
    return os.str();
}

}  // namespace cascade_match
