#include "sail/distill.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>
#include <thread>

#include "sail/error.hpp"
#include "sail/numeric.hpp"
#include "sail/rng.hpp"

namespace sail {


std::vector<AugmentParams> sample_augmentations(int n, std::uint64_t seed, int max_shift,
                                                int step) {
    if (n < 1) throw InvalidArgument("augmentation count must be >= 1");
    if (max_shift < 0) throw InvalidArgument("max shift must be >= 0");
    if (step < 1) throw InvalidArgument("offset step must be >= 1");
    Rng rng(seed);
    const int k = max_shift / step;
    std::vector<AugmentParams> out(static_cast<std::size_t>(n));
    for (int i = 1; i < n; ++i) {
        out[i].shift_x = step * rng.uniform_int(-k, k);
        out[i].shift_y = step * rng.uniform_int(-k, k);
        out[i].flip = rng.coin();
    }
    return out;
}

int offset_step(OffsetMode mode, int patch_size) {
    return mode == OffsetMode::exact ? patch_size : 1;
}

CoordGrid CoordGrid::identity(int height, int width) {
    if (height < 1 || width < 1) throw InvalidArgument("coordinate grid must be non-empty");
    CoordGrid g;
    g.height = height;
    g.width = width;
    const std::size_t n = static_cast<std::size_t>(height) * width;
    g.u.resize(n);
    g.v.resize(n);
    g.valid.assign(n, 1);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            const std::size_t i = static_cast<std::size_t>(y) * width + x;
            g.u[i] = static_cast<float>((x + 0.5) / width);
            g.v[i] = static_cast<float>((y + 0.5) / height);
        }
    }
    return g;
}

std::pair<ImageRGB, CoordGrid> apply_augmentation(const ImageRGB& image, const CoordGrid& coords,
                                                  const AugmentParams& params) {
    const int h = image.height();
    const int w = image.width();
    if (coords.height != h || coords.width != w) {
        throw InvalidArgument("coordinate grid does not match image size");
    }
    ImageRGB out_img(h, w);
    CoordGrid out = coords;
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int xs = params.flip ? w - 1 - x : x;
            const int sx = xs - params.shift_x;
            const int sy = y - params.shift_y;
            const bool inside = sx >= 0 && sx < w && sy >= 0 && sy < h;
            const int cx = std::clamp(sx, 0, w - 1);
            const int cy = std::clamp(sy, 0, h - 1);
            for (int c = 0; c < 3; ++c) out_img.at(y, x, c) = image.at(cy, cx, c);
            const std::size_t dst = static_cast<std::size_t>(y) * w + x;
            const std::size_t src = static_cast<std::size_t>(cy) * w + cx;
            out.u[dst] = coords.u[src];
            out.v[dst] = coords.v[src];
            out.valid[dst] = inside ? coords.valid[src] : 0;
        }
    }
    return {std::move(out_img), std::move(out)};
}

Accumulator::Accumulator(int grid_h_, int grid_w_, int dim_)
    : grid_h(grid_h_), grid_w(grid_w_), dim(dim_),
      sum(static_cast<std::size_t>(grid_h_) * grid_w_ * dim_, 0.0),
      count(static_cast<std::size_t>(grid_h_) * grid_w_, 0) {}

std::uint64_t Accumulator::total_count() const {
    std::uint64_t t = 0;
    for (auto k : count) t += k;
    return t;
}

void Accumulator::merge(const Accumulator& other) {
    if (other.grid_h != grid_h || other.grid_w != grid_w || other.dim != dim) {
        throw InvalidArgument("cannot merge accumulators of different shape");
    }
    for (std::size_t i = 0; i < sum.size(); ++i) sum[i] += other.sum[i];
    for (std::size_t i = 0; i < count.size(); ++i) count[i] += other.count[i];
}

int invert_and_accumulate(const DenseFeatureMap& features, const CoordGrid& coords,
                          Accumulator& acc) {
    if (features.grid_h != acc.grid_h || features.grid_w != acc.grid_w ||
        features.dim() != acc.dim) {
        throw InvalidArgument("feature grid does not match accumulator");
    }
    if (coords.height % features.grid_h != 0 || coords.width % features.grid_w != 0 ||
        coords.height / features.grid_h != coords.width / features.grid_w) {
        throw InvalidArgument("feature grid does not match coordinate grid");
    }
    const int p = coords.width / features.grid_w;
    const int gh = features.grid_h;
    const int gw = features.grid_w;
    int kept = 0;
    std::vector<float> row(static_cast<std::size_t>(acc.dim));
    for (int gy = 0; gy < gh; ++gy) {
        for (int gx = 0; gx < gw; ++gx) {
            const int patch = gy * gw + gx;
            if (!features.valid.empty() && !features.valid[patch]) continue;
            double su = 0.0, sv = 0.0;
            bool ok = true;
            for (int py = 0; py < p && ok; ++py) {
                for (int px = 0; px < p; ++px) {
                    const std::size_t i = static_cast<std::size_t>(gy * p + py) * coords.width + gx * p + px;
                    if (!coords.valid[i]) {
                        ok = false;
                        break;
                    }
                    su += coords.u[i];
                    sv += coords.v[i];
                }
            }
            if (!ok) continue;
            const double cu = su / (p * p);
            const double cv = sv / (p * p);
            if (cu < 0.0 || cu > 1.0 || cv < 0.0 || cv > 1.0) continue;
            // Nearest canonical patch centre; the epsilon settles exact midpoints
            // toward the higher index consistently despite rounding.
            const int tx = std::min(static_cast<int>(std::floor(cu * gw + 1e-9)), gw - 1);
            const int ty = std::min(static_cast<int>(std::floor(cv * gh + 1e-9)), gh - 1);
            const int target = ty * gw + tx;

            for (int c = 0; c < acc.dim; ++c) row[c] = features.patches(patch, c);
            if (!unit_normalize(row)) throw NumericError("zero patch embedding during distillation");
            double* q = acc.cell(target);
            for (int c = 0; c < acc.dim; ++c) q[c] += row[c];
            ++acc.count[target];
            ++kept;
        }
    }
    return kept;
}

DistillResult accumulate_views(const ImageRGB& image, const DenseExtractor& extract,
                               std::span<const AugmentParams> params, const DistillOptions& opts) {
    if (params.empty()) throw InvalidArgument("need at least one augmentation");
    if (!params[0].is_null()) throw InvalidArgument("first augmentation must be the null transform");
    const CoordGrid canonical = CoordGrid::identity(image.height(), image.width());

    DistillResult result;
    result.kept_per_view.assign(params.size(), 0);

    auto run_view = [&](std::size_t i, Accumulator& partial, DenseFeatureMap* first) {
        const auto [img, coords] = apply_augmentation(image, canonical, params[i]);
        DenseFeatureMap f = extract(img);
        if (partial.dim == 0) partial = Accumulator(f.grid_h, f.grid_w, f.dim());
        result.kept_per_view[i] = invert_and_accumulate(f, coords, partial);
        if (first) *first = std::move(f);
    };

    DenseFeatureMap null_view;
    Accumulator first_partial;
    run_view(0, first_partial, &null_view);
    result.summary = null_view.summary;
    result.acc = Accumulator(first_partial.grid_h, first_partial.grid_w, first_partial.dim);
    result.acc.merge(first_partial);

    const int threads = std::max(1, opts.threads);
    if (threads == 1 || params.size() <= 2) {
        for (std::size_t i = 1; i < params.size(); ++i) {
            Accumulator partial(result.acc.grid_h, result.acc.grid_w, result.acc.dim);
            run_view(i, partial, nullptr);
            result.acc.merge(partial);
        }
        return result;
    }

    std::vector<Accumulator> partials(params.size());
    std::atomic<std::size_t> next{1};
    std::mutex merge_mutex;
    std::exception_ptr failure;
    auto worker = [&]() {
        try {
            for (std::size_t i = next++; i < params.size(); i = next++) {
                Accumulator partial(result.acc.grid_h, result.acc.grid_w, result.acc.dim);
                run_view(i, partial, nullptr);
                if (opts.deterministic) {
                    partials[i] = std::move(partial);
                } else {
                    std::lock_guard lock(merge_mutex);
                    result.acc.merge(partial);
                }
            }
        } catch (...) {
            std::lock_guard lock(merge_mutex);
            if (!failure) failure = std::current_exception();
        }
    };
    std::vector<std::thread> pool;
    const auto n_workers = std::min<std::size_t>(static_cast<std::size_t>(threads), params.size() - 1);
    for (std::size_t t = 0; t < n_workers; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
    if (opts.deterministic) {
        for (std::size_t i = 1; i < params.size(); ++i) result.acc.merge(partials[i]);
    }
    return result;
}

DenseFeatureMap finalize(const Accumulator& acc, const Eigen::RowVectorXf& summary,
                         bool renormalize) {
    DenseFeatureMap out;
    out.grid_h = acc.grid_h;
    out.grid_w = acc.grid_w;
    out.patches = RowMatrixXf::Zero(acc.grid_h * acc.grid_w, acc.dim);
    out.summary = summary;
    out.valid.assign(static_cast<std::size_t>(acc.grid_h) * acc.grid_w, 0);
    std::vector<float> mean(static_cast<std::size_t>(acc.dim));
    for (int cell = 0; cell < acc.grid_h * acc.grid_w; ++cell) {
        const std::uint32_t k = acc.count[cell];
        if (k == 0) continue;
        const double* q = acc.cell(cell);
        for (int c = 0; c < acc.dim; ++c) mean[c] = static_cast<float>(q[c] / k);
        // Normalizing at f32 precision keeps a single unit-norm view bit-identical.
        if (renormalize && !unit_normalize(mean)) {
            throw NumericError("averaged embedding is zero; cannot renormalize");
        }
        for (int c = 0; c < acc.dim; ++c) out.patches(cell, c) = mean[c];
        out.valid[cell] = 1;
    }
    return out;
}

DenseFeatureMap distill(const ImageRGB& image, const DenseExtractor& extract,
                        std::span<const AugmentParams> params, const DistillOptions& opts) {
    const DistillResult r = accumulate_views(image, extract, params, opts);
    return finalize(r.acc, r.summary, opts.renormalize);
}

DenseFeatureMap distill(const ImageRGB& image, const ViTModel& model, const AttentionConfig& cfg,
                        std::span<const AugmentParams> params, const DistillOptions& opts) {
    const DenseExtractor extract = [&](const ImageRGB& img) { return forward_dense(img, model, cfg); };
    return distill(image, extract, params, opts);
}

int default_augmentation_count(const ViTModel& model) { return model.registers > 0 ? 25 : 51; }

}  // namespace sail
