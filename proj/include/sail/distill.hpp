#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <utility>
#include <vector>

#include "sail/config.hpp"
#include "sail/image.hpp"
#include "sail/vit.hpp"

namespace sail {

/// One synthetic view: the image content moves right by shift_x and down by
/// shift_y pixels (edge-replicated), then is optionally mirrored left-right.
struct AugmentParams {
    int shift_x = 0;
    int shift_y = 0;
    bool flip = false;

    bool is_null() const { return shift_x == 0 && shift_y == 0 && !flip; }
    bool operator==(const AugmentParams&) const = default;
};

/// n parameter sets, element 0 null. Offsets are multiples of step drawn
/// uniformly from [-max_shift, max_shift]; flips are a fair coin.
std::vector<AugmentParams> sample_augmentations(int n, std::uint64_t seed, int max_shift,
                                                int step = 1);

/// Step size used for offsets: the patch size in exact mode, 1 in pixel mode.
int offset_step(OffsetMode mode, int patch_size);

/// Per-pixel source location in the canonical image, u,v in [0,1] (pixel
/// centres), u left-to-right, v top-to-bottom. Pixels that came from padding
/// are marked invalid.
struct CoordGrid {
    int height = 0;
    int width = 0;
    std::vector<float> u;
    std::vector<float> v;
    std::vector<std::uint8_t> valid;

    static CoordGrid identity(int height, int width);
    bool operator==(const CoordGrid&) const = default;
};

std::pair<ImageRGB, CoordGrid> apply_augmentation(const ImageRGB& image, const CoordGrid& coords,
                                                  const AugmentParams& params);

/// Running per-cell feature sum (Q) and candidate count (K) in f64.
struct Accumulator {
    int grid_h = 0;
    int grid_w = 0;
    int dim = 0;
    std::vector<double> sum;
    std::vector<std::uint32_t> count;

    Accumulator() = default;
    Accumulator(int grid_h, int grid_w, int dim);

    double* cell(int index) { return sum.data() + static_cast<std::size_t>(index) * dim; }
    const double* cell(int index) const { return sum.data() + static_cast<std::size_t>(index) * dim; }
    std::uint64_t total_count() const;
    void merge(const Accumulator& other);
};

/// Maps each patch of an augmented view back to the canonical cell nearest to
/// its source centre and adds its unit-normalized embedding there. Patches
/// containing any padded pixel are dropped. Returns the number of patches kept.
int invert_and_accumulate(const DenseFeatureMap& features, const CoordGrid& coords,
                          Accumulator& acc);

using DenseExtractor = std::function<DenseFeatureMap(const ImageRGB&)>;

struct DistillOptions {
    /// Unit-normalize each averaged cell.
    bool renormalize = true;
    /// Merge per-view partial sums in parameter order.
    bool deterministic = true;
    int threads = 1;
};

struct DistillResult {
    Accumulator acc;
    Eigen::RowVectorXf summary;  // from the null view
    std::vector<int> kept_per_view;
};

DistillResult accumulate_views(const ImageRGB& image, const DenseExtractor& extract,
                               std::span<const AugmentParams> params, const DistillOptions& opts);

/// Q/K per cell; cells with K = 0 are zero and marked invalid.
DenseFeatureMap finalize(const Accumulator& acc, const Eigen::RowVectorXf& summary, bool renormalize);

DenseFeatureMap distill(const ImageRGB& image, const DenseExtractor& extract,
                        std::span<const AugmentParams> params, const DistillOptions& opts = {});

DenseFeatureMap distill(const ImageRGB& image, const ViTModel& model, const AttentionConfig& cfg,
                        std::span<const AugmentParams> params, const DistillOptions& opts = {});

/// 51 views for models without registers, 25 with.
int default_augmentation_count(const ViTModel& model);

}  // namespace sail
