#pragma once

// Procedural image pairs with exact ground truth, and their on-disk format
// (two PNG images plus one JSON truth file per pair).

#include "cascade_match/geometry.hpp"

#include <filesystem>
#include <string>
#include <vector>

namespace cascade_match {

/// Multi-scale procedural texture: value-noise octaves plus random filled
/// polygons, ellipses and strokes. Deterministic in `seed`.
Image procedural_texture(uint64_t seed, int width, int height);

struct PairOptions {
    int width = 256;
    int height = 256;
    HomographyBounds bounds{15.0, 0.15, 24.0, 24.0, 0.1};
    double photometric = 0.15;  // gain/bias jitter on image_b
    double noise_sigma = 0.01;
};

/// image_b(x) = canvas(H^-1 x); image_a is the undistorted crop of the same canvas.
SyntheticPair make_homography_pair(uint64_t seed, const PairOptions& opts);
/// Same, but with a caller-supplied source image instead of a procedural canvas.
SyntheticPair make_homography_pair_from_image(uint64_t seed, const Image& source, const PairOptions& opts);

/// Ray-cast two-view scene: a tilted background plane and a few textured cards
/// in front of it, seen from two calibrated cameras. Depth maps for both views
/// are stored in the truth.
SyntheticPair make_two_view_pair(uint64_t seed, const PairOptions& opts);

Image bilinear_warp(const Image& src, const Homography& dst_to_src, int width, int height);

Image load_png(const std::filesystem::path& path);
void save_png(const std::filesystem::path& path, const Image& image);

/// Writes <stem>_a.png, <stem>_b.png and <stem>.json into `dir`.
void save_pair(const std::filesystem::path& dir, const std::string& stem, const SyntheticPair& pair);
SyntheticPair load_pair(const std::filesystem::path& dir, const std::string& stem);

/// Stems of all pairs in a corpus directory, sorted.
std::vector<std::string> list_pairs(const std::filesystem::path& dir);

}  // namespace cascade_match
