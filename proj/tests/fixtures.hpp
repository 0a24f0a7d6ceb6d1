#pragma once

#include "cascade_match/matcher.hpp"
#include "cascade_match/synthetic.hpp"

#include <filesystem>
#include <string>

namespace cascade_match::fixture {

// Small enough for a few optimizer steps per test on one core.
inline ModelConfig tiny_config() {
    ModelConfig c;
    c.encoder.c2 = 8;
    c.encoder.c4 = 16;
    c.encoder.c8 = 16;
    c.encoder.res_blocks = 1;
    c.encoder.ladder_width = 8;
    c.attention.heads = 2;
    c.attention.lsa_window = 4;
    c.attention.lw_window = 4;
    c.attention.mt_parents = 2;
    c.attention.topk = 8;
    c.coarse_blocks = 2;
    c.patterns = {{8, "self,cross"}, {4, "self,cross"}, {2, "cross"}};
    c.train_size = 64;
    return c;
}

inline SyntheticPair small_pair(uint64_t seed, int size = 64) {
    PairOptions po;
    po.width = size;
    po.height = size;
    return make_homography_pair(seed, po);
}

inline std::filesystem::path scratch(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / ("cm_test_" + name);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p;
}

}  // namespace cascade_match::fixture
