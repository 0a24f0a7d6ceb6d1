#include "cascade_match/detect.hpp"
#include "cascade_match/error.hpp"
#include "oracles.hpp"

#include "testing.hpp"

#include <random>

using namespace cascade_match;

TEST_CASE("NMS agrees with the brute-force rule on random maps") {
    std::mt19937_64 rng(2024);
    std::uniform_int_distribution<int> dim(1, 14);
    for (int trial = 0; trial < 300; ++trial) {
        const auto m = oracle::random_map(rng, dim(rng), dim(rng));
        for (int k : {3, 5, 7}) CHECK(nms_select(m, k) == oracle::nms(m, k));
    }
}

TEST_CASE("NMS spacing, subset and single-peak properties") {
    std::mt19937_64 rng(7);
    for (int trial = 0; trial < 100; ++trial) {
        const auto m = oracle::random_map(rng, 12, 12);
        const auto k3 = nms_select(m, 3);
        for (int k : {3, 5, 7}) {
            const auto keep = nms_select(m, k);
            if (std::count(keep.begin(), keep.end(), 1) > 1) CHECK(oracle::min_chebyshev(m, keep) >= (k + 1) / 2);
            // a larger window only removes cells
            for (int i = 0; i < m.size(); ++i) CHECK((keep[i] <= k3[i]));
        }
    }
    ConfidenceMap one(9, 9, 2);
    for (int i = 0; i < one.size(); ++i) {
        one.valid[i] = 1;
        one.values[i] = 0.1f;
    }
    one.values[40] = 0.9f;
    const auto keep = nms_select(one, 9);
    CHECK(std::count(keep.begin(), keep.end(), 1) == 1);
    CHECK(keep[40] == 1);
}

TEST_CASE("NMS on a constant map keeps the first cell of each plateau window") {
    ConfidenceMap m(8, 8, 2);
    std::fill(m.values.begin(), m.values.end(), 0.5f);
    std::fill(m.valid.begin(), m.valid.end(), 1);
    const auto keep = nms_select(m, 3);
    CHECK(keep == oracle::nms(m, 3));
    CHECK(keep[0] == 1);
    CHECK(std::count(keep.begin(), keep.end(), 1) == 1);
}

TEST_CASE("NMS is idempotent on its own selection") {
    std::mt19937_64 rng(9);
    for (int trial = 0; trial < 30; ++trial) {
        const auto m = oracle::random_map(rng, 10, 10);
        MatchSet matches;
        for (int i = 0; i < m.size(); ++i)
            matches.push_back({2.0 * (i % m.cols) + 0.5, 2.0 * (i / m.cols) + 0.5, 0, 0, m.values[i], 0.5});
        const auto once = nms_detect(m, 5, matches);
        const auto twice = nms_detect(m, 5, once);
        CHECK(once.size() == twice.size());
    }
}

TEST_CASE("NMS rejects bad kernels") {
    ConfidenceMap m(4, 4, 2);
    CHECK_THROWS_AS(nms_select(m, 4), ValidationError);
    CHECK_THROWS_AS(nms_select(m, 1), ValidationError);
}

TEST_CASE("grid selection agrees with the oracle and keeps one cell per tile") {
    std::mt19937_64 rng(31);
    std::uniform_int_distribution<int> dim(1, 15);
    for (int trial = 0; trial < 200; ++trial) {
        const auto m = oracle::random_map(rng, dim(rng), dim(rng));
        for (int g : {2, 3, 4}) {
            const auto keep = grid_select(m, g);
            CHECK(keep == oracle::grid(m, g));
            const int tiles = ((m.rows + g - 1) / g) * ((m.cols + g - 1) / g);
            CHECK(std::count(keep.begin(), keep.end(), 1) <= tiles);
        }
    }
    ConfidenceMap c(4, 4, 2);
    std::fill(c.values.begin(), c.values.end(), 0.3f);
    std::fill(c.valid.begin(), c.valid.end(), 1);
    const auto keep = grid_select(c, 2);
    for (int i : {0, 2, 8, 10}) CHECK(keep[i] == 1);
    CHECK(std::count(keep.begin(), keep.end(), 1) == 4);
}

TEST_CASE("threshold detector bounds") {
    MatchSet m{{0, 0, 0, 0, 0.2}, {0, 0, 0, 0, 0.6}, {0, 0, 0, 0, 1.0}};
    CHECK(threshold_filter(m, 0).size() == 3);
    CHECK(threshold_filter(m, 1).empty());
    CHECK(threshold_filter(m, 0.5).size() == 2);
    CHECK_THROWS_AS(threshold_filter(m, 1.5), ValidationError);
}

TEST_CASE("invalid cells are never selected") {
    ConfidenceMap m(3, 3, 2);
    m.values[4] = 1.0f;  // high but invalid
    m.valid[0] = 1;
    m.values[0] = 0.1f;
    CHECK(nms_select(m, 3)[4] == 0);
    CHECK(nms_select(m, 3)[0] == 1);
    CHECK(grid_select(m, 3)[0] == 1);
}

TEST_CASE("detector names") {
    CHECK(parse_detector("grid") == DetectorKind::grid);
    CHECK_THROWS_AS(parse_detector("harris"), ValidationError);
    DetectorConfig d;
    d.kind = DetectorKind::nms;
    d.nms_kernel = 5;
    CHECK(detector_label(d) == "nms-5");
}
