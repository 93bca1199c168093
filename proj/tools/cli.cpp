#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "sail/attention.hpp"
#include "sail/basis.hpp"
#include "sail/config.hpp"
#include "sail/distill.hpp"
#include "sail/error.hpp"
#include "sail/image.hpp"
#include "sail/metrics.hpp"
#include "sail/pipeline.hpp"
#include "sail/probe.hpp"
#include "sail/relevance.hpp"
#include "sail/synth.hpp"
#include "sail/tensor.hpp"
#include "sail/vit.hpp"

namespace sail::cli {

namespace fs = std::filesystem;

namespace {

std::string fmt(double v) { return format_double(v); }

/// Settings shared by extract and distill.
struct ExtractFlags {
    std::string config;
    std::string model;
    std::string images;
    std::string out;
    std::string mode = "naclip";
    std::optional<double> sigma;
    std::optional<double> scale;
    int artifacts = 0;
    double artifact_strength = 2.0;
    int threads = 0;
    std::optional<std::uint64_t> seed;
};

struct DistillFlags {
    std::optional<int> n_aug;
    std::optional<int> max_shift;
    std::optional<std::string> offset_mode;
    bool deterministic = false;
    bool no_renormalize = false;
};

void add_extract_options(CLI::App* cmd, ExtractFlags& f) {
    cmd->add_option("--config", f.config, "key=value run configuration; flags override it");
    cmd->add_option("--model", f.model, "model directory (manifest.txt + NST1 weights)");
    cmd->add_option("--images", f.images, "directory of .ppm images")->required();
    cmd->add_option("--out", f.out, "output feature directory")->required();
    cmd->add_option("--mode", f.mode, "patch attention: orig, mask, naclip or sclip")->capture_default_str();
    cmd->add_option("--sigma", f.sigma, "naclip Gaussian width in patches (default 10)");
    cmd->add_option("--scale", f.scale, "attention temperature (default sqrt(head dim))");
    cmd->add_option("--artifacts", f.artifacts, "corrupt this many patches per view (synthetic evaluation)")
        ->check(CLI::NonNegativeNumber);
    cmd->add_option("--artifact-strength", f.artifact_strength, "artifact noise amplitude")->capture_default_str();
    cmd->add_option("--threads", f.threads, "worker cap (default SAIL_THREADS or 1)")->check(CLI::NonNegativeNumber);
    cmd->add_option("--seed", f.seed, "seed (recorded; drives augmentation sampling)");
}

struct Resolved {
    RunConfig run;
    Manifest config_file;
    ViTModel model;
    AttentionConfig attention;
    int threads = 1;
};

Resolved resolve(const ExtractFlags& f) {
    Resolved r;
    if (!f.config.empty()) {
        r.config_file = Manifest::read(f.config);
        r.run = RunConfig::from_manifest(r.config_file);
    }
    if (!f.model.empty()) r.run.model_path = f.model;
    if (r.run.model_path.empty()) throw InvalidArgument("--model is required (flag or config key 'model')");
    if (f.sigma) r.run.sigma = *f.sigma;
    if (f.seed) r.run.seed = *f.seed;
    r.run.validate();
    r.model = load_model(r.run.model_path);
    if (r.config_file.contains("patch_size") && r.run.patch_size != r.model.patch_size) {
        throw InvalidArgument("configured patch size " + std::to_string(r.run.patch_size) +
                              " does not match the model's " + std::to_string(r.model.patch_size));
    }
    r.run.patch_size = r.model.patch_size;
    r.attention.mode = parse_attention_mode(f.mode);
    r.attention.sigma = r.run.sigma;
    r.attention.scale = f.scale;
    r.attention.validate();
    r.threads = resolve_threads(f.threads);
    return r;
}

DenseExtractor make_extractor(const Resolved& r, const ExtractFlags& f) {
    if (f.artifacts > 0) return synth::artifact_extractor(r.model, r.attention, f.artifacts, f.artifact_strength);
    return [&r](const ImageRGB& img) { return forward_dense(img, r.model, r.attention); };
}

Manifest stage_manifest(const std::string& stage, std::uint64_t seed) {
    Manifest m;
    m.set("stage", stage);
    m.set("seed", static_cast<long long>(seed));
    return m;
}

void record_extract(Manifest& m, const Resolved& r, const ExtractFlags& f) {
    m.set("model", r.run.model_path);
    m.set("images_dir", f.images);
    m.set("mode", std::string(to_string(r.attention.mode)));
    m.set_double("sigma", r.attention.sigma);
    m.set_double("scale", r.attention.resolved_scale(r.model.head_dim()));
    m.set("patch_size", r.model.patch_size);
    if (f.artifacts > 0) {
        m.set("artifacts", f.artifacts);
        m.set_double("artifact_strength", f.artifact_strength);
    }
}

FeatureSet make_feature_set(const ImageCorpus& corpus, std::vector<DenseFeatureMap> maps, Manifest meta) {
    FeatureSet set;
    set.ids = corpus.ids;
    set.maps = std::move(maps);
    set.image_height = corpus.images.front().height();
    set.image_width = corpus.images.front().width();
    set.meta = std::move(meta);
    return set;
}

void check_same_size(const ImageCorpus& corpus) {
    for (const ImageRGB& img : corpus.images) {
        if (img.height() != corpus.images.front().height() || img.width() != corpus.images.front().width()) {
            throw InputError("all images in a corpus must share one size");
        }
    }
}

int cmd_extract(const ExtractFlags& f) {
    const Resolved r = resolve(f);
    const ImageCorpus corpus = load_images(f.images);
    check_same_size(corpus);
    Manifest meta = stage_manifest("extract", r.run.seed);
    record_extract(meta, r, f);
    auto maps = extract_corpus(corpus.images, make_extractor(r, f), r.threads);
    save_features(make_feature_set(corpus, std::move(maps), std::move(meta)), f.out);
    return kOk;
}

int cmd_distill(const ExtractFlags& f, const DistillFlags& d) {
    Resolved r = resolve(f);
    if (d.n_aug) {
        r.run.n_aug = *d.n_aug;
    } else if (!r.config_file.contains("n_aug")) {
        r.run.n_aug = default_augmentation_count(r.model);
    }
    if (d.max_shift) r.run.max_shift = *d.max_shift;
    if (d.offset_mode) r.run.offset_mode = parse_offset_mode(*d.offset_mode);
    r.run.validate();

    const ImageCorpus corpus = load_images(f.images);
    check_same_size(corpus);
    const int step = offset_step(r.run.offset_mode, r.model.patch_size);
    const int max_shift = r.run.max_shift.value_or(r.model.patch_size);
    const auto params = sample_augmentations(r.run.n_aug, r.run.seed, max_shift, step);
    DistillOptions opts;
    opts.renormalize = !d.no_renormalize;
    opts.deterministic = d.deterministic;
    opts.threads = r.threads;

    Manifest meta = stage_manifest("distill", r.run.seed);
    record_extract(meta, r, f);
    meta.set("n_aug", r.run.n_aug);
    meta.set("max_shift", max_shift);
    meta.set("offset_mode", std::string(to_string(r.run.offset_mode)));
    meta.set("renormalize", opts.renormalize ? "true" : "false");
    meta.set("deterministic", opts.deterministic ? "true" : "false");
    auto maps = distill_corpus(corpus.images, make_extractor(r, f), params, opts);
    save_features(make_feature_set(corpus, std::move(maps), std::move(meta)), f.out);
    return kOk;
}

struct FitFlags {
    std::string config;
    std::string features;
    std::string betas;
    std::string out;
    std::optional<int> train;
    std::optional<double> lambda;
    bool iterative = false;
    int epochs = 100;
    int batch_size = 8;
    std::uint64_t seed = 0;
};

RowMatrixXd read_matrix(const fs::path& path) {
    const Tensor t = read_tensor(path);
    if (t.rank() != 2) throw InputError(path.string() + ": expected a rank-2 tensor, got " + shape_string(t.shape()));
    return t.matrix().cast<double>();
}

int cmd_fit(const FitFlags& f) {
    RunConfig run;
    if (!f.config.empty()) run = RunConfig::from_manifest(Manifest::read(f.config));
    if (f.lambda) run.ridge_lambda = *f.lambda;
    run.seed = f.seed;
    run.validate();

    const FeatureSet set = load_features(f.features);
    const RowMatrixXd x = set.summaries();
    const RowMatrixXd y = read_matrix(f.betas);
    if (y.rows() != x.rows()) {
        throw InputError("betas have " + std::to_string(y.rows()) + " rows for " + std::to_string(x.rows()) + " images");
    }
    const int n = static_cast<int>(x.rows());
    const int train = f.train.value_or(n);
    if (train < 2 || train > n) throw InvalidArgument("--train must be in [2, " + std::to_string(n) + "]");

    Manifest meta = stage_manifest("fit-encoder", run.seed);
    meta.set("features", f.features);
    meta.set("betas", f.betas);
    meta.set("train", train);
    meta.set("test", n - train);
    LinearProbe probe;
    if (f.iterative) {
        AdamWOptions opts;
        opts.epochs = f.epochs;
        opts.batch_size = f.batch_size;
        opts.seed = run.seed;
        probe = fit_adamw(x.topRows(train), y.topRows(train), opts);
        meta.set("method", "adamw");
        meta.set("epochs", opts.epochs);
        meta.set("batch_size", opts.batch_size);
    } else {
        const double lambda = run.ridge_lambda.value_or(default_ridge_lambda(static_cast<std::size_t>(train)));
        probe = fit_ridge(x.topRows(train), y.topRows(train), lambda);
        meta.set("method", "ridge");
        meta.set_double("lambda", lambda);
    }
    save_probe(probe, f.out);
    if (n - train >= 2) {
        const R2Scores r2 = r2_score(predict_rows(probe, x.bottomRows(n - train)), y.bottomRows(n - train));
        CsvWriter csv({"voxel", "r2", "constant_truth"});
        for (Eigen::Index j = 0; j < r2.scores.size(); ++j) {
            csv.row({std::to_string(j), fmt(r2.scores(j)), r2.constant_truth[static_cast<std::size_t>(j)] ? "1" : "0"});
        }
        csv.write(fs::path(f.out) / "r2.csv");
    }
    Manifest probe_manifest = Manifest::read(fs::path(f.out) / "manifest.txt");
    for (const auto& [k, v] : meta.entries()) probe_manifest.set(k, v);
    probe_manifest.write(fs::path(f.out) / "manifest.txt");
    return kOk;
}

struct RelevanceFlags {
    std::string features;
    std::string probe;
    std::string voxels;
    std::string query;
    std::string agg = "mean";
    bool no_bias = false;
    std::string out;
};

VoxelRelevanceOptions relevance_options(const std::string& agg, bool no_bias) {
    VoxelRelevanceOptions o;
    o.agg = parse_aggregation(agg);
    o.include_bias = !no_bias;
    return o;
}

std::vector<int> all_voxels(const LinearProbe& p) {
    std::vector<int> v(static_cast<std::size_t>(p.voxels()));
    for (int i = 0; i < p.voxels(); ++i) v[static_cast<std::size_t>(i)] = i;
    return v;
}

int cmd_relevance(const RelevanceFlags& f) {
    const FeatureSet set = load_features(f.features);
    Manifest meta = stage_manifest("relevance", 0);
    meta.set("features", f.features);
    std::function<RelevanceMap(const DenseFeatureMap&)> make;
    LinearProbe probe;
    std::vector<int> voxels;
    Eigen::RowVectorXd query;
    if (!f.query.empty()) {
        if (!f.probe.empty()) throw InvalidArgument("--query and --probe are exclusive");
        const Tensor q = read_tensor(f.query);
        query = Eigen::Map<const Eigen::RowVectorXf>(q.data().data(), static_cast<Eigen::Index>(q.size())).cast<double>();
        make = [&](const DenseFeatureMap& fm) { return query_relevance(fm, query); };
        meta.set("query", f.query);
    } else {
        if (f.probe.empty()) throw InvalidArgument("one of --probe or --query is required");
        probe = load_probe(f.probe);
        voxels = f.voxels.empty() ? all_voxels(probe) : parse_index_set(f.voxels);
        const VoxelRelevanceOptions opts = relevance_options(f.agg, f.no_bias);
        make = [&, opts](const DenseFeatureMap& fm) { return voxel_relevance(fm, probe, voxels, opts); };
        meta.set("probe", f.probe);
        meta.set("voxels", format_index_set(voxels));
        meta.set("agg", f.agg);
        meta.set("bias", f.no_bias ? "false" : "true");
    }
    fs::create_directories(f.out);
    for (std::size_t i = 0; i < set.size(); ++i) {
        const RelevanceMap m = make(set.maps[i]);
        const RowMatrixXf values = m.values.cast<float>();
        write_tensor(Tensor::from_matrix(values), fs::path(f.out) / (set.ids[i] + ".nst"));
        write_heatmap(upsample_map(m, set.image_height, set.image_width), fs::path(f.out) / (set.ids[i] + ".pgm"));
    }
    meta.write(fs::path(f.out) / "manifest.txt");
    return kOk;
}

fs::path query_manifest_path(const std::string& p) {
    const fs::path path(p);
    return fs::is_directory(path) ? path / "manifest.txt" : path;
}

struct Region {
    std::string name;
    std::vector<int> voxels;
};

std::vector<Region> load_regions(const std::string& path) {
    const Manifest m = Manifest::read(path);
    std::vector<Region> out;
    for (const auto& [k, v] : m.entries()) {
        if (k.rfind("region.", 0) == 0) out.push_back({k.substr(7), parse_index_set(v)});
    }
    if (out.empty()) throw InputError(path + ": no region.<name> entries");
    return out;
}

struct AssignFlags {
    std::string features;
    std::string probe;
    std::string queries;
    std::string regions;
    std::string agg = "mean";
    bool no_bias = false;
    std::string out;
};

int cmd_assign(const AssignFlags& f) {
    const FeatureSet set = load_features(f.features);
    const LinearProbe probe = load_probe(f.probe);
    const QuerySet queries = load_query_set(query_manifest_path(f.queries));
    const std::vector<Region> regions = load_regions(f.regions);
    const VoxelRelevanceOptions opts = relevance_options(f.agg, f.no_bias);

    std::vector<std::vector<long long>> confusion(regions.size(), std::vector<long long>(queries.groups.size(), 0));
    CsvWriter rows({"image_id", "region", "group", "prompt", "r"});
    for (std::size_t i = 0; i < set.size(); ++i) {
        for (std::size_t r = 0; r < regions.size(); ++r) {
            const RelevanceMap brain = voxel_relevance(set.maps[i], probe, regions[r].voxels, opts);
            const CategoryAssignment a = assign_category(brain, queries, set.maps[i]);
            ++confusion[r][a.group];
            rows.row({set.ids[i], regions[r].name, queries.groups[a.group].name, std::to_string(a.prompt), fmt(a.r)});
        }
    }
    std::vector<std::string> header{"region"};
    for (const auto& g : queries.groups) header.push_back(g.name);
    CsvWriter table(header);
    for (std::size_t r = 0; r < regions.size(); ++r) {
        std::vector<std::string> row{regions[r].name};
        for (long long c : confusion[r]) row.push_back(std::to_string(c));
        table.row(row);
    }
    rows.write(fs::path(f.out) / "assignments.csv");
    table.write(fs::path(f.out) / "confusion.csv");
    Manifest meta = stage_manifest("assign", 0);
    meta.set("features", f.features);
    meta.set("probe", f.probe);
    meta.set("queries", f.queries);
    meta.set("regions", f.regions);
    meta.set("agg", f.agg);
    meta.write(fs::path(f.out) / "manifest.txt");
    return kOk;
}

struct SegFlags {
    std::string features;
    std::string labels;
    std::string queries;
    std::string out;
};

int cmd_seg_eval(const SegFlags& f) {
    const FeatureSet set = load_features(f.features);
    const QuerySet queries = load_query_set(query_manifest_path(f.queries));
    const auto classes = queries.class_embeddings();
    const int n_classes = static_cast<int>(classes.size());
    CsvWriter csv({"image_id", "metric", "value"});
    double miou_sum = 0.0, pearson_sum = 0.0;
    int pearson_n = 0;
    for (std::size_t i = 0; i < set.size(); ++i) {
        const LabelGrid gt = LabelGrid::from_gray(read_pgm(fs::path(f.labels) / (set.ids[i] + ".pgm")));
        if (gt.height != set.image_height || gt.width != set.image_width) {
            throw InputError("label grid for " + set.ids[i] + " does not match the image size");
        }
        const double m = 100.0 * miou(seg_predict(set.maps[i], classes, gt.height, gt.width), gt, n_classes);
        miou_sum += m;
        csv.row({set.ids[i], "miou", fmt(m)});
        if (const auto r = seg_pearson(set.maps[i], classes, gt)) {
            pearson_sum += *r;
            ++pearson_n;
            csv.row({set.ids[i], "pearson", fmt(*r)});
        }
    }
    csv.row({"mean", "miou", fmt(miou_sum / static_cast<double>(set.size()))});
    if (pearson_n > 0) csv.row({"mean", "pearson", fmt(pearson_sum / pearson_n)});
    csv.write(fs::path(f.out) / "metrics.csv");
    Manifest meta = stage_manifest("seg-eval", 0);
    meta.set("features", f.features);
    meta.set("labels", f.labels);
    meta.set("queries", f.queries);
    meta.write(fs::path(f.out) / "manifest.txt");
    return kOk;
}

struct CorrelateFlags {
    std::string features;
    std::string probe;
    std::string voxels;
    std::string images;
    std::string depth;
    std::string agg = "mean";
    bool no_bias = false;
    bool per_voxel = false;
    std::string compare_features;
    std::string compare_probe;
    std::string out;
};

RowMatrixXd read_depth(const fs::path& path, int gh, int gw) {
    RowMatrixXd d = read_matrix(path);
    if (d.rows() != gh || d.cols() != gw) {
        throw InputError(path.string() + ": depth map must be " + std::to_string(gh) + "x" + std::to_string(gw));
    }
    return d;
}

int cmd_correlate(const CorrelateFlags& f) {
    const FeatureSet set = load_features(f.features);
    const LinearProbe probe = load_probe(f.probe);
    const std::vector<int> voxels = f.voxels.empty() ? all_voxels(probe) : parse_index_set(f.voxels);
    const VoxelRelevanceOptions opts = relevance_options(f.agg, f.no_bias);
    const ImageCorpus corpus = load_images(f.images);
    if (corpus.ids != set.ids) throw InputError("image ids do not match the feature set");

    std::vector<std::pair<std::string, std::vector<RowMatrixXd>>> maps{{"saturation", {}}, {"luminance", {}}};
    const int patch = set.image_height / set.maps.front().grid_h;
    for (const ImageRGB& img : corpus.images) {
        ColorMaps c = saturation_luminance(img, patch);
        maps[0].second.push_back(std::move(c.saturation));
        maps[1].second.push_back(std::move(c.luminance));
    }
    if (!f.depth.empty()) {
        maps.push_back({"depth", {}});
        for (std::size_t i = 0; i < set.size(); ++i) {
            maps.back().second.push_back(read_depth(fs::path(f.depth) / (set.ids[i] + ".nst"), set.maps[i].grid_h, set.maps[i].grid_w));
        }
    }

    CsvWriter csv({"voxels", "feature", "r"});
    auto emit = [&](const std::vector<int>& vs) {
        std::vector<RelevanceMap> rel;
        for (const auto& fm : set.maps) rel.push_back(voxel_relevance(fm, probe, vs, opts));
        for (const auto& [name, feature] : maps) csv.row({format_index_set(vs), name, fmt(voxel_feature_correlation(rel, feature))});
    };
    emit(voxels);
    if (f.per_voxel) {
        for (int v : voxels) emit({v});
    }
    csv.write(fs::path(f.out) / "correlations.csv");

    if (!f.compare_features.empty()) {
        const FeatureSet other = load_features(f.compare_features);
        const LinearProbe other_probe = load_probe(f.compare_probe.empty() ? f.probe : f.compare_probe);
        if (other.ids != set.ids) throw InputError("compared feature sets hold different images");
        CsvWriter sim({"image_id", "metric", "value"});
        for (std::size_t i = 0; i < set.size(); ++i) {
            const double r = backbone_map_similarity(voxel_relevance(set.maps[i], probe, voxels, opts),
                                                     voxel_relevance(other.maps[i], other_probe, voxels, opts),
                                                     set.image_height, set.image_width);
            sim.row({set.ids[i], "backbone_similarity", fmt(r)});
        }
        sim.write(fs::path(f.out) / "backbone_similarity.csv");
    }
    Manifest meta = stage_manifest("correlate", 0);
    meta.set("features", f.features);
    meta.set("probe", f.probe);
    meta.set("voxels", format_index_set(voxels));
    meta.set("agg", f.agg);
    meta.write(fs::path(f.out) / "manifest.txt");
    return kOk;
}

struct BasisFlags {
    std::string probe;
    std::string features;
    std::optional<double> tau;
    int k = 3;
    std::string out;
};

RowMatrixXd voxel_vectors(const LinearProbe& probe) { return probe.weights.transpose(); }

void write_voxel_colors(const SharedBasis& basis, const RowMatrixXd& vectors, const fs::path& path) {
    const RowMatrixXd rgb = project_rgb(basis, vectors);
    CsvWriter csv({"voxel", "r", "g", "b"});
    for (Eigen::Index j = 0; j < rgb.rows(); ++j) {
        csv.row({std::to_string(j), fmt(rgb(j, 0)), fmt(rgb(j, 1)), fmt(rgb(j, 2))});
    }
    csv.write(path);
}

int cmd_basis(const BasisFlags& f) {
    const LinearProbe probe = load_probe(f.probe);
    RowMatrixXd vectors = voxel_vectors(probe);
    Manifest meta = stage_manifest("basis", 0);
    meta.set("probe", f.probe);
    if (f.tau) {
        if (f.features.empty()) throw InvalidArgument("--tau needs --features for the image embeddings");
        const RowMatrixXd e = load_features(f.features).summaries();
        for (Eigen::Index j = 0; j < vectors.rows(); ++j) {
            vectors.row(j) = softmax_image_projection(vectors.row(j), e, *f.tau);
        }
        meta.set("features", f.features);
        meta.set_double("tau", *f.tau);
    }
    const SharedBasis basis = fit_basis(vectors, f.k);
    save_basis(basis, f.out);
    Manifest basis_manifest = Manifest::read(fs::path(f.out) / "manifest.txt");
    for (const auto& [k, v] : meta.entries()) basis_manifest.set(k, v);
    basis_manifest.write(fs::path(f.out) / "manifest.txt");
    if (f.k >= 3) write_voxel_colors(basis, vectors, fs::path(f.out) / "voxel_colors.csv");
    return kOk;
}

struct RenderFlags {
    std::string basis;
    std::string features;
    std::string out;
};

int cmd_render(const RenderFlags& f) {
    const SharedBasis basis = load_basis(f.basis);
    const FeatureSet set = load_features(f.features);
    fs::create_directories(f.out);
    for (std::size_t i = 0; i < set.size(); ++i) {
        const DenseFeatureMap& fm = set.maps[i];
        const RowMatrixXd rgb = project_rgb(basis, fm.patches.cast<double>());
        ImageRGB img(set.image_height, set.image_width);
        for (int y = 0; y < img.height(); ++y) {
            for (int x = 0; x < img.width(); ++x) {
                const int cell = (y * fm.grid_h / img.height()) * fm.grid_w + x * fm.grid_w / img.width();
                if (!fm.valid[static_cast<std::size_t>(cell)]) continue;
                for (int c = 0; c < 3; ++c) img.at(y, x, c) = static_cast<float>(rgb(cell, c));
            }
        }
        write_image(img, fs::path(f.out) / (set.ids[i] + ".ppm"));
    }
    Manifest meta = stage_manifest("render", 0);
    meta.set("basis", f.basis);
    meta.set("features", f.features);
    meta.write(fs::path(f.out) / "manifest.txt");
    return kOk;
}

struct SynthFlags {
    std::uint64_t seed = 7;
    std::string out;
    int images = 32;
    int train = 28;
    int voxels = 64;
    double beta_noise = 0.05;
};

int cmd_synth(const SynthFlags& f) {
    synth::Options o;
    o.seed = f.seed;
    o.images = f.images;
    o.train = f.train;
    o.voxels = f.voxels;
    o.beta_noise = f.beta_noise;
    synth::write_fixture(synth::build_fixture(o), f.out);
    return kOk;
}

int dispatch(const std::vector<std::string>& args) {
    CLI::App app{"Dense brain-encoder relevance maps from vision transformers", "sail"};
    app.require_subcommand(1);

    ExtractFlags ex;
    CLI::App* extract = app.add_subcommand("extract", "dense patch features, single view");
    add_extract_options(extract, ex);

    ExtractFlags dx;
    DistillFlags dd;
    CLI::App* distill_cmd = app.add_subcommand("distill", "augmentation-averaged dense features");
    add_extract_options(distill_cmd, dx);
    distill_cmd->add_option("--n-aug", dd.n_aug, "views including the null view (default 51, 25 with registers)");
    distill_cmd->add_option("--max-shift", dd.max_shift, "largest offset in pixels (default one patch)");
    distill_cmd->add_option("--offset-mode", dd.offset_mode, "exact (patch multiples) or pixel");
    distill_cmd->add_flag("--deterministic", dd.deterministic, "merge views in a fixed order");
    distill_cmd->add_flag("--no-renormalize", dd.no_renormalize, "keep the raw cell means");

    FitFlags ff;
    CLI::App* fit = app.add_subcommand("fit-encoder", "fit the voxel-wise linear encoder on summary embeddings");
    fit->add_option("--config", ff.config, "key=value run configuration");
    fit->add_option("--features", ff.features, "feature directory")->required();
    fit->add_option("--betas", ff.betas, "responses, NST1 [images, voxels]")->required();
    fit->add_option("--out", ff.out, "probe directory")->required();
    fit->add_option("--train", ff.train, "leading images used for fitting (default all)");
    fit->add_option("--lambda", ff.lambda, "ridge penalty (default 1e-3 per training image)");
    fit->add_flag("--iterative", ff.iterative, "AdamW instead of the closed form");
    fit->add_option("--epochs", ff.epochs, "AdamW epochs")->capture_default_str();
    fit->add_option("--batch-size", ff.batch_size, "AdamW batch size")->capture_default_str();
    fit->add_option("--seed", ff.seed, "shuffle seed")->capture_default_str();

    RelevanceFlags rf;
    CLI::App* rel = app.add_subcommand("relevance", "per-patch relevance maps and heatmaps");
    rel->add_option("--features", rf.features, "feature directory")->required();
    rel->add_option("--probe", rf.probe, "probe directory");
    rel->add_option("--voxels", rf.voxels, "voxel index set, e.g. 0-15,32 (default all)");
    rel->add_option("--query", rf.query, "query embedding (NST1) instead of a probe");
    rel->add_option("--agg", rf.agg, "mean or max over voxels")->capture_default_str();
    rel->add_flag("--no-bias", rf.no_bias, "drop the probe bias");
    rel->add_option("--out", rf.out, "output directory")->required();

    AssignFlags af;
    CLI::App* assign = app.add_subcommand("assign", "category of the best-correlated prompt per region");
    assign->add_option("--features", af.features, "feature directory")->required();
    assign->add_option("--probe", af.probe, "probe directory")->required();
    assign->add_option("--queries", af.queries, "query-set manifest or its directory")->required();
    assign->add_option("--regions", af.regions, "manifest with region.<name>=<index set> lines")->required();
    assign->add_option("--agg", af.agg, "mean or max over voxels")->capture_default_str();
    assign->add_flag("--no-bias", af.no_bias, "drop the probe bias");
    assign->add_option("--out", af.out, "output directory")->required();

    SegFlags sf;
    CLI::App* seg = app.add_subcommand("seg-eval", "open-vocabulary segmentation mIoU and Pearson");
    seg->add_option("--features", sf.features, "feature directory")->required();
    seg->add_option("--labels", sf.labels, "directory of <id>.pgm label grids")->required();
    seg->add_option("--queries", sf.queries, "query-set manifest; group i is class id i")->required();
    seg->add_option("--out", sf.out, "output directory")->required();

    CorrelateFlags cf;
    CLI::App* corr = app.add_subcommand("correlate", "relevance vs saturation, luminance and depth");
    corr->add_option("--features", cf.features, "feature directory")->required();
    corr->add_option("--probe", cf.probe, "probe directory")->required();
    corr->add_option("--voxels", cf.voxels, "voxel index set (default all)");
    corr->add_option("--images", cf.images, "directory of the source .ppm images")->required();
    corr->add_option("--depth", cf.depth, "directory of <id>.nst depth maps at patch resolution");
    corr->add_option("--agg", cf.agg, "mean or max over voxels")->capture_default_str();
    corr->add_flag("--no-bias", cf.no_bias, "drop the probe bias");
    corr->add_flag("--per-voxel", cf.per_voxel, "also report every voxel on its own");
    corr->add_option("--compare-features", cf.compare_features, "second backbone's features for map similarity");
    corr->add_option("--compare-probe", cf.compare_probe, "second backbone's probe (default --probe)");
    corr->add_option("--out", cf.out, "output directory")->required();

    BasisFlags bf;
    CLI::App* basis = app.add_subcommand("basis", "shared PCA basis of voxel weights");
    basis->add_option("--probe", bf.probe, "probe directory")->required();
    basis->add_option("--k", bf.k, "components")->capture_default_str()->check(CLI::PositiveNumber);
    basis->add_option("--features", bf.features, "image embeddings for --tau");
    basis->add_option("--tau", bf.tau, "project weights onto image embeddings with this softmax temperature");
    basis->add_option("--out", bf.out, "output directory")->required();

    RenderFlags rn;
    CLI::App* render = app.add_subcommand("render", "color dense features with a shared basis");
    render->add_option("--basis", rn.basis, "basis directory")->required();
    render->add_option("--features", rn.features, "feature directory")->required();
    render->add_option("--out", rn.out, "output directory")->required();

    SynthFlags yf;
    CLI::App* synth_cmd = app.add_subcommand("synth", "write the synthetic fixture");
    synth_cmd->add_option("--seed", yf.seed, "fixture seed")->capture_default_str();
    synth_cmd->add_option("--out", yf.out, "output directory")->required();
    synth_cmd->add_option("--images", yf.images, "image count")->capture_default_str();
    synth_cmd->add_option("--train", yf.train, "training images")->capture_default_str();
    synth_cmd->add_option("--voxels", yf.voxels, "voxel count")->capture_default_str();
    synth_cmd->add_option("--beta-noise", yf.beta_noise, "response noise sd")->capture_default_str();

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kUsage;
    }

    if (extract->parsed()) return cmd_extract(ex);
    if (distill_cmd->parsed()) return cmd_distill(dx, dd);
    if (fit->parsed()) return cmd_fit(ff);
    if (rel->parsed()) return cmd_relevance(rf);
    if (assign->parsed()) return cmd_assign(af);
    if (seg->parsed()) return cmd_seg_eval(sf);
    if (corr->parsed()) return cmd_correlate(cf);
    if (basis->parsed()) return cmd_basis(bf);
    if (render->parsed()) return cmd_render(rn);
    if (synth_cmd->parsed()) return cmd_synth(yf);
    return kUsage;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    try {
        return dispatch(args);
    } catch (const InvalidArgument& e) {
        std::cerr << "error: invalid argument: " << e.what() << "\n";
        return kUsage;
    } catch (const NumericError& e) {
        std::cerr << "error: numeric: " << e.what() << "\n";
        return kNumeric;
    } catch (const InputError& e) {
        std::cerr << "error: input: " << e.what() << "\n";
        return kInput;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "error: input: " << e.what() << "\n";
        return kInput;
    } catch (const std::exception& e) {
        std::cerr << "error: internal: " << e.what() << "\n";
        return kInternal;
    }
}

}  // namespace sail::cli
