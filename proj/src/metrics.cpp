#include "sail/metrics.hpp"

#include <algorithm>
#include <cmath>

#include "sail/error.hpp"
#include "sail/relevance.hpp"

namespace sail {

double pearson(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw InvalidArgument("pearson inputs differ in length");
    if (a.size() < 2) throw InvalidArgument("pearson needs at least 2 values");
    const double n = static_cast<double>(a.size());
    double ma = 0.0, mb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += a[i];
        mb += b[i];
    }
    ma /= n;
    mb /= n;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma;
        const double db = b[i] - mb;
        sab += da * db;
        saa += da * da;
        sbb += db * db;
    }
    if (saa == 0.0 || sbb == 0.0) throw NumericError("pearson undefined for constant input");
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

LabelGrid LabelGrid::from_gray(const GrayImage& g) {
    LabelGrid l{g.height, g.width, std::vector<int>(g.pixels.begin(), g.pixels.end())};
    return l;
}

GrayImage LabelGrid::to_gray() const {
    GrayImage g{height, width, std::vector<std::uint8_t>(ids.size())};
    for (std::size_t i = 0; i < ids.size(); ++i) {
        if (ids[i] < 0 || ids[i] > 255) throw InvalidArgument("label id does not fit in 8 bits");
        g.pixels[i] = static_cast<std::uint8_t>(ids[i]);
    }
    return g;
}

double miou(const LabelGrid& pred, const LabelGrid& gt, int n_classes) {
    if (pred.height != gt.height || pred.width != gt.width || pred.ids.size() != gt.ids.size()) {
        throw InvalidArgument("label grids differ in shape");
    }
    if (n_classes < 1) throw InvalidArgument("n_classes must be >= 1");
    std::vector<long long> inter(static_cast<std::size_t>(n_classes), 0);
    std::vector<long long> uni(static_cast<std::size_t>(n_classes), 0);
    auto check = [&](int id) {
        if (id != LabelGrid::kIgnore && (id < 0 || id >= n_classes)) {
            throw InvalidArgument("label id " + std::to_string(id) + " out of range");
        }
    };
    for (std::size_t i = 0; i < gt.ids.size(); ++i) {
        const int g = gt.ids[i];
        const int p = pred.ids[i];
        check(g);
        check(p);
        if (g == LabelGrid::kIgnore) continue;
        if (p == g) {
            ++inter[static_cast<std::size_t>(g)];
            ++uni[static_cast<std::size_t>(g)];
        } else {
            ++uni[static_cast<std::size_t>(g)];
            if (p != LabelGrid::kIgnore) ++uni[static_cast<std::size_t>(p)];
        }
    }
    double total = 0.0;
    int present = 0;
    for (int c = 0; c < n_classes; ++c) {
        if (uni[static_cast<std::size_t>(c)] == 0) continue;
        total += static_cast<double>(inter[static_cast<std::size_t>(c)]) /
                 static_cast<double>(uni[static_cast<std::size_t>(c)]);
        ++present;
    }
    if (present == 0) throw NumericError("mIoU undefined: no labelled pixels");
    return total / present;
}

namespace {

void taps(int i, int n_dst, int n_src, int& lo, int& hi, double& t) {
    double src = (i + 0.5) * static_cast<double>(n_src) / n_dst - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(n_src - 1));
    lo = static_cast<int>(std::floor(src));
    hi = std::min(lo + 1, n_src - 1);
    t = src - lo;
}

RowMatrixXd cosine_map(const DenseFeatureMap& f, const Eigen::RowVectorXd& q) {
    return query_relevance(f, q).values;
}

}  // namespace

RowMatrixXd upsample_map(const RelevanceMap& map, int height, int width) {
    if (height < 1 || width < 1) throw InvalidArgument("target size must be positive");
    if (!map.all_valid()) throw InvalidArgument("cannot upsample a map with invalid cells");
    RowMatrixXd out(height, width);
    for (int y = 0; y < height; ++y) {
        int y0, y1;
        double ty;
        taps(y, height, map.grid_h, y0, y1, ty);
        for (int x = 0; x < width; ++x) {
            int x0, x1;
            double tx;
            taps(x, width, map.grid_w, x0, x1, tx);
            const double top = (1 - tx) * map.values(y0, x0) + tx * map.values(y0, x1);
            const double bot = (1 - tx) * map.values(y1, x0) + tx * map.values(y1, x1);
            out(y, x) = (1 - ty) * top + ty * bot;
        }
    }
    return out;
}

LabelGrid seg_predict(const DenseFeatureMap& f, std::span<const Eigen::RowVectorXd> classes,
                      int height, int width) {
    if (classes.empty()) throw InvalidArgument("segmentation needs at least one class");
    if (height % f.grid_h != 0 || width % f.grid_w != 0) {
        throw InvalidArgument("pixel grid is not a multiple of the patch grid");
    }
    std::vector<int> patch_label(static_cast<std::size_t>(f.cell_count()), LabelGrid::kIgnore);
    std::vector<RowMatrixXd> maps;
    for (const auto& c : classes) maps.push_back(cosine_map(f, c));
    for (int p = 0; p < f.cell_count(); ++p) {
        if (!f.valid.empty() && !f.valid[static_cast<std::size_t>(p)]) continue;
        int best = 0;
        for (std::size_t c = 1; c < maps.size(); ++c) {
            if (maps[c](p / f.grid_w, p % f.grid_w) > maps[static_cast<std::size_t>(best)](p / f.grid_w, p % f.grid_w)) {
                best = static_cast<int>(c);
            }
        }
        patch_label[static_cast<std::size_t>(p)] = best;
    }
    LabelGrid out{height, width, std::vector<int>(static_cast<std::size_t>(height) * width)};
    const int py = height / f.grid_h;
    const int px = width / f.grid_w;
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
            out.ids[static_cast<std::size_t>(y) * width + x] =
                patch_label[static_cast<std::size_t>((y / py) * f.grid_w + x / px)];
        }
    }
    return out;
}

std::optional<double> seg_pearson(const DenseFeatureMap& f, std::span<const Eigen::RowVectorXd> classes,
                                  const LabelGrid& gt) {
    if (classes.empty()) throw InvalidArgument("segmentation needs at least one class");
    double total = 0.0;
    int used = 0;
    for (std::size_t c = 0; c < classes.size(); ++c) {
        RelevanceMap m = query_relevance(f, classes[c]);
        const RowMatrixXd up = upsample_map(m, gt.height, gt.width);
        std::vector<double> score, mask;
        for (int y = 0; y < gt.height; ++y) {
            for (int x = 0; x < gt.width; ++x) {
                const int id = gt.at(y, x);
                if (id == LabelGrid::kIgnore) continue;
                score.push_back(up(y, x));
                mask.push_back(id == static_cast<int>(c) ? 1.0 : 0.0);
            }
        }
        const auto positives = std::count(mask.begin(), mask.end(), 1.0);
        if (positives == 0 || positives == static_cast<long>(mask.size())) continue;
        try {
            total += pearson(score, mask);
            ++used;
        } catch (const NumericError&) {
            // constant score map: skip
        }
    }
    if (used == 0) return std::nullopt;
    return total / used;
}

ColorMaps saturation_luminance(const ImageRGB& image, int patch_size) {
    if (patch_size < 1 || image.height() % patch_size != 0 || image.width() % patch_size != 0) {
        throw InvalidArgument("image is not divisible by the patch size");
    }
    const int gh = image.height() / patch_size;
    const int gw = image.width() / patch_size;
    ColorMaps out{RowMatrixXd::Zero(gh, gw), RowMatrixXd::Zero(gh, gw)};
    for (int y = 0; y < image.height(); ++y) {
        for (int x = 0; x < image.width(); ++x) {
            const double r = image.at(y, x, 0), g = image.at(y, x, 1), b = image.at(y, x, 2);
            const double mx = std::max({r, g, b});
            const double mn = std::min({r, g, b});
            out.saturation(y / patch_size, x / patch_size) += mx > 0.0 ? (mx - mn) / mx : 0.0;
            out.luminance(y / patch_size, x / patch_size) += 0.2126 * r + 0.7152 * g + 0.0722 * b;
        }
    }
    const double area = static_cast<double>(patch_size) * patch_size;
    out.saturation /= area;
    out.luminance /= area;
    return out;
}

double voxel_feature_correlation(std::span<const RelevanceMap> maps,
                                 std::span<const RowMatrixXd> features) {
    if (maps.size() != features.size()) throw InvalidArgument("one feature map per relevance map required");
    if (maps.size() < 2) throw InvalidArgument("feature correlation needs at least 2 images");
    std::vector<double> rel, feat;
    for (std::size_t i = 0; i < maps.size(); ++i) {
        const RelevanceMap& m = maps[i];
        if (features[i].rows() != m.grid_h || features[i].cols() != m.grid_w) {
            throw InvalidArgument("feature map is not aligned to the relevance grid");
        }
        for (int p = 0; p < m.grid_h * m.grid_w; ++p) {
            if (!m.valid[static_cast<std::size_t>(p)]) continue;
            rel.push_back(m.values(p / m.grid_w, p % m.grid_w));
            feat.push_back(features[i](p / m.grid_w, p % m.grid_w));
        }
    }
    return pearson(rel, feat);
}

double backbone_map_similarity(const RelevanceMap& a, const RelevanceMap& b, int height, int width) {
    const RowMatrixXd ua = upsample_map(a, height, width);
    const RowMatrixXd ub = upsample_map(b, height, width);
    return pearson(std::span<const double>(ua.data(), static_cast<std::size_t>(ua.size())),
                   std::span<const double>(ub.data(), static_cast<std::size_t>(ub.size())));
}

}  // namespace sail
