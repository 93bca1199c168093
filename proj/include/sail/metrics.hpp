#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <utility>
#include <vector>

#include "sail/image.hpp"
#include "sail/tensor.hpp"
#include "sail/vit.hpp"

namespace sail {

struct RelevanceMap;

/// Sample Pearson correlation in f64. Throws NumericError when either input
/// is constant, InvalidArgument on length mismatch or fewer than 2 values.
double pearson(std::span<const double> a, std::span<const double> b);

/// Per-pixel class ids; pixels equal to kIgnore are skipped by every metric.
struct LabelGrid {
    static constexpr int kIgnore = 255;

    int height = 0;
    int width = 0;
    std::vector<int> ids;

    int at(int y, int x) const { return ids[static_cast<std::size_t>(y) * width + x]; }

    static LabelGrid from_gray(const GrayImage& g);
    GrayImage to_gray() const;
    bool operator==(const LabelGrid&) const = default;
};

/// Mean IoU over classes present in pred or gt (non-ignore pixels only), in [0,1].
double miou(const LabelGrid& pred, const LabelGrid& gt, int n_classes);

/// Bilinear resampling of a patch map onto an H x W pixel grid, sampling at
/// pixel centres against patch centres and clamping at the edges.
RowMatrixXd upsample_map(const RelevanceMap& map, int height, int width);

/// Class embeddings: one unit vector per class (means of prompt sets are
/// normalized by the caller or by class_embeddings()).
LabelGrid seg_predict(const DenseFeatureMap& f, std::span<const Eigen::RowVectorXd> classes,
                      int height, int width);

/// Mean over classes present in gt of Pearson(cosine map, binary class mask);
/// classes whose mask is constant over the labelled pixels are skipped.
/// Returns nullopt when no class qualifies.
std::optional<double> seg_pearson(const DenseFeatureMap& f, std::span<const Eigen::RowVectorXd> classes,
                                  const LabelGrid& gt);

struct ColorMaps {
    RowMatrixXd saturation;  // HSV saturation, patch means
    RowMatrixXd luminance;   // Rec. 709 relative luminance, patch means
};

ColorMaps saturation_luminance(const ImageRGB& image, int patch_size);

/// Pearson r between all valid relevance values and the matching feature
/// values, concatenated across images.
double voxel_feature_correlation(std::span<const RelevanceMap> maps,
                                 std::span<const RowMatrixXd> features);

/// Pearson r of two maps after resampling both to height x width.
double backbone_map_similarity(const RelevanceMap& a, const RelevanceMap& b, int height, int width);

}  // namespace sail
