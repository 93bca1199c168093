#include "sail/synth.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <string>

#include "sail/config.hpp"
#include "sail/error.hpp"
#include "sail/metrics.hpp"
#include "sail/numeric.hpp"
#include "sail/probe.hpp"
#include "sail/rng.hpp"

namespace sail::synth {

namespace fs = std::filesystem;

namespace {

constexpr int kPatch = 8;
constexpr int kGrid = kImageSize / kPatch;

constexpr double kBaseColor[4][3] = {
    {0.86, 0.58, 0.46},  // face
    {0.25, 0.35, 0.85},  // body
    {0.30, 0.70, 0.30},  // scene
    {0.95, 0.80, 0.10},  // food
};
constexpr double kDepthBase[4] = {0.30, 0.40, 0.85, 0.25};

RowMatrixXf gaussian(Rng& rng, int rows, int cols, double stddev) {
    RowMatrixXf m(rows, cols);
    for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) m(r, c) = static_cast<float>(rng.normal(0.0, stddev));
    }
    return m;
}

Eigen::RowVectorXf gaussian_row(Rng& rng, int n, double stddev) { return gaussian(rng, 1, n, stddev); }

// Textures are mirror-symmetric within every 8-pixel cell, so a left-right
// flip leaves each patch's pixels unchanged.
double texture(int category, int y, int x) {
    const int cx = x % kPatch;
    const bool band_x = cx >= 2 && cx <= 5;
    const bool band_y = (y % kPatch) >= 2 && (y % kPatch) <= 5;
    switch (category) {
        case 0: return (y % 2) ? 0.12 : -0.12;  // horizontal stripes
        case 1: return band_x ? 0.12 : -0.12;   // vertical bars
        case 2: return 0.15 * (y / double(kImageSize) - 0.5) + 0.05 * std::cos(0.8 * (cx - 3.5));
        default: return band_x != band_y ? 0.12 : -0.12;  // cross-hatch
    }
}

void paint(ImageRGB& img, int category, double saturation, double brightness, Rng& rng, int y0, int x0,
           int y1, int x1) {
    const double* base = kBaseColor[category];
    const double gray = (base[0] + base[1] + base[2]) / 3.0;
    for (int y = y0; y < y1; ++y) {
        for (int x = x0; x < x1; ++x) {
            const double t = texture(category, y, x);
            for (int c = 0; c < 3; ++c) {
                const double col = brightness * (gray + saturation * (base[c] - gray));
                img.at(y, x, c) = static_cast<float>(std::clamp(col + t + rng.normal(0.0, 0.02), 0.0, 1.0));
            }
        }
    }
}

struct Scene {
    ImageRGB image;
    LabelGrid labels;
    RowMatrixXd depth;
};

/// Same rounding as the PPM writer, so scenes equal their files.
void quantize_8bit(ImageRGB& img) {
    for (float& v : img.values()) {
        v = static_cast<float>(std::floor(std::clamp(static_cast<double>(v), 0.0, 1.0) * 255.0 + 0.5)) / 255.0f;
    }
}

Scene make_scene(Rng& rng) {
    Scene s{ImageRGB(kImageSize, kImageSize),
            LabelGrid{kImageSize, kImageSize, std::vector<int>(kImageSize * kImageSize)},
            RowMatrixXd(kGrid, kGrid)};
    std::vector<int> patch_cat(kGrid * kGrid);
    const int background = rng.uniform_int(0, 3);
    std::fill(patch_cat.begin(), patch_cat.end(), background);
    paint(s.image, background, rng.uniform(0.25, 1.0), rng.uniform(0.8, 1.0), rng, 0, 0, kImageSize,
          kImageSize);

    const int objects = rng.uniform_int(1, 2);
    for (int o = 0; o < objects; ++o) {
        int cat = rng.uniform_int(0, 2);
        if (cat >= background) ++cat;
        const int h = rng.uniform_int(1, 3);
        const int w = rng.uniform_int(1, 3);
        const int gy = rng.uniform_int(0, kGrid - h);
        const int gx = rng.uniform_int(0, kGrid - w);
        paint(s.image, cat, rng.uniform(0.25, 1.0), rng.uniform(0.8, 1.0), rng, gy * kPatch, gx * kPatch,
              (gy + h) * kPatch, (gx + w) * kPatch);
        for (int y = gy; y < gy + h; ++y) {
            for (int x = gx; x < gx + w; ++x) patch_cat[y * kGrid + x] = cat;
        }
    }
    for (int y = 0; y < kImageSize; ++y) {
        for (int x = 0; x < kImageSize; ++x) {
            s.labels.ids[y * kImageSize + x] = patch_cat[(y / kPatch) * kGrid + x / kPatch];
        }
    }
    for (int gy = 0; gy < kGrid; ++gy) {
        for (int gx = 0; gx < kGrid; ++gx) {
            s.depth(gy, gx) = kDepthBase[patch_cat[gy * kGrid + gx]] +
                              0.1 * (1.0 - gy / double(kGrid - 1)) + rng.normal(0.0, 0.02);
        }
    }
    quantize_8bit(s.image);
    return s;
}

std::uint64_t hash_image(const ImageRGB& img) {
    std::uint64_t h = 1469598103934665603ULL;
    for (float v : img.values()) {
        const auto bits = std::bit_cast<std::uint32_t>(v);
        for (int i = 0; i < 4; ++i) {
            h ^= (bits >> (8 * i)) & 0xffU;
            h *= 1099511628211ULL;
        }
    }
    return h;
}

Tensor matrix_tensor(const RowMatrixXd& m) { return Tensor::from_matrix(m.cast<float>()); }

std::string image_id(int i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "img_%03d", i);
    return buf;
}

}  // namespace

ViTModel make_model(std::uint64_t seed, int registers) {
    Rng rng(seed);
    constexpr int d = 32, f = 64, m = 16, heads = 4, layers = 2;
    ViTModel model;
    model.patch_size = kPatch;
    model.embed_dim = d;
    model.heads = heads;
    model.registers = registers;
    model.out_dim = m;
    model.grid_h = kGrid;
    model.grid_w = kGrid;
    model.pixel_mean = {0.5f, 0.5f, 0.5f};
    model.pixel_std = {0.25f, 0.25f, 0.25f};
    const int in = 3 * kPatch * kPatch;
    model.patch_w = gaussian(rng, in, d, 1.0 / std::sqrt(double(in)));
    model.patch_b = Eigen::RowVectorXf::Zero(d);
    model.cls_token = gaussian_row(rng, d, 0.02);
    model.pos_embed = gaussian(rng, 1 + kGrid * kGrid + registers, d, 0.02);
    if (registers > 0) model.reg_tokens = gaussian(rng, registers, d, 1.0);
    const double s = 1.0 / std::sqrt(double(d));
    for (int l = 0; l < layers; ++l) {
        ViTLayer layer;
        layer.ln1_g = Eigen::RowVectorXf::Ones(d);
        layer.ln1_b = Eigen::RowVectorXf::Zero(d);
        layer.wq = gaussian(rng, d, d, s);
        layer.wk = gaussian(rng, d, d, s);
        layer.wv = RowMatrixXf::Identity(d, d) + gaussian(rng, d, d, 0.1 * s);
        layer.wo = 0.5f * RowMatrixXf::Identity(d, d) + gaussian(rng, d, d, 0.1 * s);
        layer.bq = Eigen::RowVectorXf::Zero(d);
        layer.bk = Eigen::RowVectorXf::Zero(d);
        layer.bv = Eigen::RowVectorXf::Zero(d);
        layer.bo = Eigen::RowVectorXf::Zero(d);
        layer.ln2_g = Eigen::RowVectorXf::Ones(d);
        layer.ln2_b = Eigen::RowVectorXf::Zero(d);
        layer.mlp_in = gaussian(rng, d, f, 0.5 * s);
        layer.mlp_in_b = Eigen::RowVectorXf::Zero(f);
        layer.mlp_out = gaussian(rng, f, d, 0.5 / std::sqrt(double(f)));
        layer.mlp_out_b = Eigen::RowVectorXf::Zero(d);
        model.layers.push_back(std::move(layer));
    }
    model.lnf_g = Eigen::RowVectorXf::Ones(d);
    model.lnf_b = Eigen::RowVectorXf::Zero(d);
    model.proj_w = gaussian(rng, d, m, s);
    model.proj_b = gaussian_row(rng, m, 0.01);
    model.validate();
    return model;
}

ImageRGB category_texture(int category, double saturation, std::uint64_t seed) {
    if (category < 0 || category >= static_cast<int>(kCategories.size())) {
        throw InvalidArgument("unknown category index " + std::to_string(category));
    }
    Rng rng(seed);
    ImageRGB img(kImageSize, kImageSize);
    paint(img, category, saturation, 1.0, rng, 0, 0, kImageSize, kImageSize);
    return img;
}

Fixture build_fixture(const Options& options) {
    if (options.images < 2 || options.train < 1 || options.train >= options.images) {
        throw InvalidArgument("fixture needs >= 2 images and a non-empty test split");
    }
    const int n_cat = static_cast<int>(kCategories.size());
    if (options.voxels < n_cat || options.voxels % n_cat != 0) {
        throw InvalidArgument("voxel count must be a positive multiple of the category count");
    }
    if (options.prompts_per_category < 1) throw InvalidArgument("need at least one prompt per category");

    Fixture fx;
    fx.options = options;
    fx.model = make_model(options.seed * 1000003ULL + 1, 0);
    fx.model_registers = make_model(options.seed * 1000003ULL + 2, 4);
    const AttentionConfig summary_cfg{AttentionMode::mask, std::nullopt, 10.0};

    Rng rng(options.seed);
    for (int i = 0; i < options.images; ++i) {
        Scene s = make_scene(rng);
        fx.images.push_back(std::move(s.image));
        fx.labels.push_back(std::move(s.labels));
        fx.depth.push_back(std::move(s.depth));
    }

    // Prompt embeddings: summaries of pure category textures.
    for (int c = 0; c < n_cat; ++c) {
        QueryGroup g{std::string(kCategories[static_cast<std::size_t>(c)]), {}};
        for (int p = 0; p < options.prompts_per_category; ++p) {
            const double sat = options.prompts_per_category > 1
                                   ? 0.4 + 0.6 * p / double(options.prompts_per_category - 1)
                                   : 1.0;
            const ImageRGB tex = category_texture(c, sat, rng.bits());
            const Eigen::RowVectorXf e = encode_summary(tex, fx.model, summary_cfg);
            g.prompts.push_back(e.cast<double>());
        }
        fx.queries.groups.push_back(std::move(g));
    }
    const auto class_dirs = fx.queries.class_embeddings();

    // Planted probe: each region's voxels point at their category.
    const int m = fx.model.out_dim;
    const int per_region = options.voxels / n_cat;
    fx.probe.weights.resize(m, options.voxels);
    fx.probe.bias.resize(options.voxels);
    fx.regions.assign(static_cast<std::size_t>(n_cat), {});
    for (int j = 0; j < options.voxels; ++j) {
        const int c = j / per_region;
        fx.regions[static_cast<std::size_t>(c)].push_back(j);
        for (int r = 0; r < m; ++r) {
            fx.probe.weights(r, j) = 2.0 * class_dirs[static_cast<std::size_t>(c)](r) +
                                     rng.normal(0.0, 0.5 / std::sqrt(double(m)));
        }
        fx.probe.bias(j) = rng.normal(0.0, 0.3);
    }
    // Round-trip through f32 so the in-memory fixture equals what is written.
    fx.probe.weights = fx.probe.weights.cast<float>().cast<double>();
    fx.probe.bias = fx.probe.bias.cast<float>().cast<double>();

    fx.summaries.resize(options.images, m);
    for (int i = 0; i < options.images; ++i) {
        fx.summaries.row(i) = encode_summary(fx.images[static_cast<std::size_t>(i)], fx.model, summary_cfg).cast<double>();
    }
    fx.betas_clean = predict_rows(fx.probe, fx.summaries);
    fx.betas = fx.betas_clean;
    for (Eigen::Index i = 0; i < fx.betas.size(); ++i) fx.betas.data()[i] += rng.normal(0.0, options.beta_noise);
    return fx;
}

void write_fixture(const Fixture& fx, const fs::path& dir) {
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "labels");
    fs::create_directories(dir / "depth");
    save_model(fx.model, dir / "model");
    save_model(fx.model_registers, dir / "model_registers");
    for (std::size_t i = 0; i < fx.images.size(); ++i) {
        const std::string id = image_id(static_cast<int>(i));
        write_image(fx.images[i], dir / "images" / (id + ".ppm"));
        write_pgm(fx.labels[i].to_gray(), dir / "labels" / (id + ".pgm"));
        write_tensor(matrix_tensor(fx.depth[i]), dir / "depth" / (id + ".nst"));
    }
    save_query_set(fx.queries, dir / "queries");
    save_probe(fx.probe, dir / "probe_true");
    write_tensor(matrix_tensor(fx.betas), dir / "betas.nst");
    write_tensor(matrix_tensor(fx.betas_clean), dir / "betas_clean.nst");

    Manifest m;
    m.set("kind", "synthetic-fixture");
    m.set("seed", static_cast<long long>(fx.options.seed));
    m.set("images", fx.options.images);
    m.set("train", fx.options.train);
    m.set("voxels", fx.options.voxels);
    m.set_double("beta_noise", fx.options.beta_noise);
    m.set("patch_size", fx.model.patch_size);
    m.set("n_classes", static_cast<long long>(kCategories.size()));
    for (std::size_t c = 0; c < kCategories.size(); ++c) {
        m.set("class." + std::to_string(c), std::string(kCategories[c]));
    }
    for (std::size_t c = 0; c < fx.regions.size(); ++c) {
        m.set("region." + std::string(kCategories[c]), format_index_set(fx.regions[c]));
    }
    m.write(dir / "manifest.txt");
}

DenseExtractor artifact_extractor(const ViTModel& model, const AttentionConfig& cfg, int artifacts,
                                  double strength) {
    return [&model, cfg, artifacts, strength](const ImageRGB& img) {
        DenseFeatureMap f = forward_dense(img, model, cfg);
        Rng rng(hash_image(img));
        const int m = f.cell_count();
        std::vector<int> cells(static_cast<std::size_t>(m));
        for (int i = 0; i < m; ++i) cells[static_cast<std::size_t>(i)] = i;
        const int k = std::min(artifacts, m);
        for (int i = 0; i < k; ++i) {
            std::swap(cells[static_cast<std::size_t>(i)], cells[static_cast<std::size_t>(rng.uniform_int(i, m - 1))]);
            const int p = cells[static_cast<std::size_t>(i)];
            for (int c = 0; c < f.dim(); ++c) {
                f.patches(p, c) += static_cast<float>(strength * rng.normal() / std::sqrt(double(f.dim())));
            }
            unit_normalize(std::span<float>(f.patches.row(p).data(), static_cast<std::size_t>(f.dim())));
        }
        return f;
    };
}

Eigen::RowVectorXd saturation_direction(const ViTModel& model, const AttentionConfig& cfg,
                                        std::uint64_t seed) {
    // Ridge readout of patch saturation from patch features on held-out scenes.
    Rng rng(seed);
    constexpr int kScenes = 48;
    const int m = model.grid_h * model.grid_w;
    RowMatrixXd x(kScenes * m, model.out_dim);
    RowMatrixXd y(kScenes * m, 1);
    for (int i = 0; i < kScenes; ++i) {
        const Scene scene = make_scene(rng);
        x.middleRows(i * m, m) = forward_dense(scene.image, model, cfg).patches.cast<double>();
        const RowMatrixXd sat = saturation_luminance(scene.image, model.patch_size).saturation;
        for (int p = 0; p < m; ++p) y(i * m + p, 0) = sat(p / model.grid_w, p % model.grid_w);
    }
    const LinearProbe fit = fit_ridge(x, y, 1e-2);
    Eigen::RowVectorXd dir = fit.weights.col(0).transpose();
    if (!unit_normalize(std::span<double>(dir.data(), static_cast<std::size_t>(dir.size())))) {
        throw NumericError("saturation direction is degenerate");
    }
    return dir;
}

}  // namespace sail::synth
