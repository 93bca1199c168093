#include "sail/vit.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "sail/config.hpp"
#include "sail/error.hpp"
#include "sail/numeric.hpp"

namespace sail {

namespace fs = std::filesystem;

namespace {

void expect_shape(const char* name, Eigen::Index rows, Eigen::Index cols, Eigen::Index want_rows,
                  Eigen::Index want_cols) {
    if (rows != want_rows || cols != want_cols) {
        throw InvalidArgument(std::string("weight ") + name + " has shape [" +
                              std::to_string(rows) + "," + std::to_string(cols) +
                              "], expected [" + std::to_string(want_rows) + "," +
                              std::to_string(want_cols) + "]");
    }
}

void expect_vec(const char* name, const Eigen::RowVectorXf& v, Eigen::Index n) {
    expect_shape(name, 1, v.size(), 1, n);
}

RowMatrixXf layer_norm(const Eigen::Ref<const RowMatrixXf>& x, const Eigen::RowVectorXf& g,
                       const Eigen::RowVectorXf& b, double eps) {
    RowMatrixXf out(x.rows(), x.cols());
    const double n = static_cast<double>(x.cols());
    for (Eigen::Index r = 0; r < x.rows(); ++r) {
        double mean = 0.0;
        for (Eigen::Index c = 0; c < x.cols(); ++c) mean += x(r, c);
        mean /= n;
        double var = 0.0;
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
            const double d = x(r, c) - mean;
            var += d * d;
        }
        var /= n;
        const double inv = 1.0 / std::sqrt(var + eps);
        for (Eigen::Index c = 0; c < x.cols(); ++c) {
            out(r, c) = static_cast<float>((x(r, c) - mean) * inv * g(c) + b(c));
        }
    }
    return out;
}

float gelu(float x) {
    const double xd = x;
    return static_cast<float>(0.5 * xd * (1.0 + std::erf(xd / std::sqrt(2.0))));
}

RowMatrixXf affine(const Eigen::Ref<const RowMatrixXf>& x, const RowMatrixXf& w,
                   const Eigen::RowVectorXf& b) {
    RowMatrixXf y = x * w;
    y.rowwise() += b;
    return y;
}

RowMatrixXf mlp(const ViTLayer& layer, const Eigen::Ref<const RowMatrixXf>& x) {
    RowMatrixXf h = affine(x, layer.mlp_in, layer.mlp_in_b);
    h = h.unaryExpr(&gelu);
    return affine(h, layer.mlp_out, layer.mlp_out_b);
}

AttentionState project_qkv(const ViTModel& model, const ViTLayer& layer,
                           const RowMatrixXf& residual, int grid_h, int grid_w) {
    const RowMatrixXf x = layer_norm(residual, layer.ln1_g, layer.ln1_b, model.ln_eps);
    AttentionState s;
    s.q = affine(x, layer.wq, layer.bq);
    s.k = affine(x, layer.wk, layer.bk);
    s.v = affine(x, layer.wv, layer.bv);
    s.heads = model.heads;
    s.grid_h = grid_h;
    s.grid_w = grid_w;
    s.registers = model.registers;
    return s;
}

/// Source coordinate of destination cell i when resampling n_src cells to n_dst.
void bilinear_taps(int i, int n_dst, int n_src, int& lo, int& hi, double& t) {
    double src = (i + 0.5) * static_cast<double>(n_src) / n_dst - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(n_src - 1));
    lo = static_cast<int>(std::floor(src));
    hi = std::min(lo + 1, n_src - 1);
    t = src - lo;
}

// Weight file helpers.
Eigen::RowVectorXf load_vec(const fs::path& dir, const std::string& name) {
    const Tensor t = read_tensor(dir / (name + ".nst"));
    if (t.rank() != 1) throw InputError(name + ": expected rank-1 tensor");
    return Eigen::Map<const Eigen::RowVectorXf>(t.data().data(), static_cast<Eigen::Index>(t.size()));
}

RowMatrixXf load_mat(const fs::path& dir, const std::string& name) {
    const Tensor t = read_tensor(dir / (name + ".nst"));
    if (t.rank() != 2) throw InputError(name + ": expected rank-2 tensor");
    return t.matrix();
}

void save_vec(const fs::path& dir, const std::string& name, const Eigen::RowVectorXf& v) {
    write_tensor(Tensor::from_vector(std::span<const float>(v.data(), static_cast<std::size_t>(v.size()))),
                 dir / (name + ".nst"));
}

void save_mat(const fs::path& dir, const std::string& name, const RowMatrixXf& m) {
    write_tensor(Tensor::from_matrix(m), dir / (name + ".nst"));
}

std::string layer_key(std::size_t i, const char* field) {
    return "layer" + std::to_string(i) + "." + field;
}

}  // namespace

void ViTModel::validate() const {
    if (patch_size < 1 || embed_dim < 1 || heads < 1 || out_dim < 1 || grid_h < 1 ||
        grid_w < 1 || registers < 0) {
        throw InvalidArgument("model hyperparameters must be positive");
    }
    if (embed_dim % heads != 0) throw InvalidArgument("embed dim not divisible by heads");
    if (layers.empty()) throw InvalidArgument("model has no layers");
    if (!(ln_eps > 0.0)) throw InvalidArgument("layer norm epsilon must be > 0");
    for (float sd : pixel_std) {
        if (!(sd > 0.0f)) throw InvalidArgument("pixel std must be > 0");
    }
    const Eigen::Index d = embed_dim;
    expect_shape("patch_w", patch_w.rows(), patch_w.cols(), 3LL * patch_size * patch_size, d);
    expect_vec("patch_b", patch_b, d);
    expect_vec("cls_token", cls_token, d);
    if (registers > 0) expect_shape("reg_tokens", reg_tokens.rows(), reg_tokens.cols(), registers, d);
    expect_shape("pos_embed", pos_embed.rows(), pos_embed.cols(),
                 1 + native_patches() + registers, d);
    const Eigen::Index f = layers[0].mlp_in.cols();
    for (const auto& l : layers) {
        expect_vec("ln1_g", l.ln1_g, d);
        expect_vec("ln1_b", l.ln1_b, d);
        expect_shape("wq", l.wq.rows(), l.wq.cols(), d, d);
        expect_shape("wk", l.wk.rows(), l.wk.cols(), d, d);
        expect_shape("wv", l.wv.rows(), l.wv.cols(), d, d);
        expect_shape("wo", l.wo.rows(), l.wo.cols(), d, d);
        expect_vec("bq", l.bq, d);
        expect_vec("bk", l.bk, d);
        expect_vec("bv", l.bv, d);
        expect_vec("bo", l.bo, d);
        expect_vec("ln2_g", l.ln2_g, d);
        expect_vec("ln2_b", l.ln2_b, d);
        expect_shape("mlp_in", l.mlp_in.rows(), l.mlp_in.cols(), d, f);
        expect_vec("mlp_in_b", l.mlp_in_b, f);
        expect_shape("mlp_out", l.mlp_out.rows(), l.mlp_out.cols(), f, d);
        expect_vec("mlp_out_b", l.mlp_out_b, d);
    }
    expect_vec("lnf_g", lnf_g, d);
    expect_vec("lnf_b", lnf_b, d);
    expect_shape("proj_w", proj_w.rows(), proj_w.cols(), d, out_dim);
    expect_vec("proj_b", proj_b, out_dim);
}

ViTModel load_model(const fs::path& dir) {
    const Manifest m = Manifest::read(dir / "manifest.txt");
    ViTModel model;
    model.patch_size = static_cast<int>(m.get_int("patch_size"));
    model.embed_dim = static_cast<int>(m.get_int("embed_dim"));
    model.heads = static_cast<int>(m.get_int("heads"));
    model.registers = static_cast<int>(m.get_int("registers"));
    model.out_dim = static_cast<int>(m.get_int("out_dim"));
    model.grid_h = static_cast<int>(m.get_int("grid_h"));
    model.grid_w = static_cast<int>(m.get_int("grid_w"));
    if (m.contains("ln_eps")) model.ln_eps = m.get_double("ln_eps");
    for (int c = 0; c < 3; ++c) {
        const std::string suffix = std::to_string(c);
        if (m.contains("pixel_mean" + suffix)) model.pixel_mean[c] = static_cast<float>(m.get_double("pixel_mean" + suffix));
        if (m.contains("pixel_std" + suffix)) model.pixel_std[c] = static_cast<float>(m.get_double("pixel_std" + suffix));
    }
    const long long n_layers = m.get_int("layers");
    if (n_layers < 1) throw InputError("model manifest: layers must be >= 1");

    model.patch_w = load_mat(dir, "patch_w");
    model.patch_b = load_vec(dir, "patch_b");
    model.cls_token = load_vec(dir, "cls_token");
    if (model.registers > 0) model.reg_tokens = load_mat(dir, "reg_tokens");
    model.pos_embed = load_mat(dir, "pos_embed");
    for (long long i = 0; i < n_layers; ++i) {
        const auto li = static_cast<std::size_t>(i);
        ViTLayer l;
        l.ln1_g = load_vec(dir, layer_key(li, "ln1_g"));
        l.ln1_b = load_vec(dir, layer_key(li, "ln1_b"));
        l.wq = load_mat(dir, layer_key(li, "wq"));
        l.wk = load_mat(dir, layer_key(li, "wk"));
        l.wv = load_mat(dir, layer_key(li, "wv"));
        l.wo = load_mat(dir, layer_key(li, "wo"));
        l.bq = load_vec(dir, layer_key(li, "bq"));
        l.bk = load_vec(dir, layer_key(li, "bk"));
        l.bv = load_vec(dir, layer_key(li, "bv"));
        l.bo = load_vec(dir, layer_key(li, "bo"));
        l.ln2_g = load_vec(dir, layer_key(li, "ln2_g"));
        l.ln2_b = load_vec(dir, layer_key(li, "ln2_b"));
        l.mlp_in = load_mat(dir, layer_key(li, "mlp_in"));
        l.mlp_in_b = load_vec(dir, layer_key(li, "mlp_in_b"));
        l.mlp_out = load_mat(dir, layer_key(li, "mlp_out"));
        l.mlp_out_b = load_vec(dir, layer_key(li, "mlp_out_b"));
        model.layers.push_back(std::move(l));
    }
    model.lnf_g = load_vec(dir, "lnf_g");
    model.lnf_b = load_vec(dir, "lnf_b");
    model.proj_w = load_mat(dir, "proj_w");
    model.proj_b = load_vec(dir, "proj_b");
    model.validate();
    return model;
}

void save_model(const ViTModel& model, const fs::path& dir) {
    model.validate();
    fs::create_directories(dir);
    Manifest m;
    m.set("patch_size", model.patch_size);
    m.set("embed_dim", model.embed_dim);
    m.set("heads", model.heads);
    m.set("layers", static_cast<long long>(model.layers.size()));
    m.set("registers", model.registers);
    m.set("out_dim", model.out_dim);
    m.set("grid_h", model.grid_h);
    m.set("grid_w", model.grid_w);
    m.set("mlp_dim", model.mlp_dim());
    m.set_double("ln_eps", model.ln_eps);
    for (int c = 0; c < 3; ++c) {
        m.set_double("pixel_mean" + std::to_string(c), model.pixel_mean[c]);
        m.set_double("pixel_std" + std::to_string(c), model.pixel_std[c]);
    }
    m.write(dir / "manifest.txt");

    save_mat(dir, "patch_w", model.patch_w);
    save_vec(dir, "patch_b", model.patch_b);
    save_vec(dir, "cls_token", model.cls_token);
    if (model.registers > 0) save_mat(dir, "reg_tokens", model.reg_tokens);
    save_mat(dir, "pos_embed", model.pos_embed);
    for (std::size_t i = 0; i < model.layers.size(); ++i) {
        const ViTLayer& l = model.layers[i];
        save_vec(dir, layer_key(i, "ln1_g"), l.ln1_g);
        save_vec(dir, layer_key(i, "ln1_b"), l.ln1_b);
        save_mat(dir, layer_key(i, "wq"), l.wq);
        save_mat(dir, layer_key(i, "wk"), l.wk);
        save_mat(dir, layer_key(i, "wv"), l.wv);
        save_mat(dir, layer_key(i, "wo"), l.wo);
        save_vec(dir, layer_key(i, "bq"), l.bq);
        save_vec(dir, layer_key(i, "bk"), l.bk);
        save_vec(dir, layer_key(i, "bv"), l.bv);
        save_vec(dir, layer_key(i, "bo"), l.bo);
        save_vec(dir, layer_key(i, "ln2_g"), l.ln2_g);
        save_vec(dir, layer_key(i, "ln2_b"), l.ln2_b);
        save_mat(dir, layer_key(i, "mlp_in"), l.mlp_in);
        save_vec(dir, layer_key(i, "mlp_in_b"), l.mlp_in_b);
        save_mat(dir, layer_key(i, "mlp_out"), l.mlp_out);
        save_vec(dir, layer_key(i, "mlp_out_b"), l.mlp_out_b);
    }
    save_vec(dir, "lnf_g", model.lnf_g);
    save_vec(dir, "lnf_b", model.lnf_b);
    save_mat(dir, "proj_w", model.proj_w);
    save_vec(dir, "proj_b", model.proj_b);
}

RowMatrixXf interpolate_pos_embed(const ViTModel& model, int grid_h, int grid_w) {
    if (grid_h < 1 || grid_w < 1) throw InvalidArgument("target grid must be at least 1x1");
    const int d = model.embed_dim;
    const int m0 = model.native_patches();
    if (model.pos_embed.rows() != 1 + m0 + model.registers || model.pos_embed.cols() != d) {
        throw InvalidArgument("positional table shape does not match the native grid");
    }
    if (grid_h == model.grid_h && grid_w == model.grid_w) return model.pos_embed;

    const int m = grid_h * grid_w;
    RowMatrixXf out(1 + m + model.registers, d);
    out.row(0) = model.pos_embed.row(0);
    if (model.registers > 0) {
        out.bottomRows(model.registers) = model.pos_embed.bottomRows(model.registers);
    }
    for (int y = 0; y < grid_h; ++y) {
        int y0, y1;
        double ty;
        bilinear_taps(y, grid_h, model.grid_h, y0, y1, ty);
        for (int x = 0; x < grid_w; ++x) {
            int x0, x1;
            double tx;
            bilinear_taps(x, grid_w, model.grid_w, x0, x1, tx);
            const auto src = [&](int yy, int xx) { return 1 + yy * model.grid_w + xx; };
            for (int c = 0; c < d; ++c) {
                const double top = (1 - tx) * model.pos_embed(src(y0, x0), c) +
                                   tx * model.pos_embed(src(y0, x1), c);
                const double bot = (1 - tx) * model.pos_embed(src(y1, x0), c) +
                                   tx * model.pos_embed(src(y1, x1), c);
                out(1 + y * grid_w + x, c) = static_cast<float>((1 - ty) * top + ty * bot);
            }
        }
    }
    return out;
}

bool DenseFeatureMap::all_valid() const {
    return std::all_of(valid.begin(), valid.end(), [](std::uint8_t v) { return v != 0; });
}

LastLayerInput prepare_last_layer(const ImageRGB& image, const ViTModel& model,
                                  AttentionTrace* trace) {
    const int p = model.patch_size;
    if (image.height() % p != 0 || image.width() % p != 0) {
        throw InvalidArgument("image " + std::to_string(image.height()) + "x" +
                              std::to_string(image.width()) +
                              " is not divisible by patch size " + std::to_string(p));
    }
    const int gh = image.height() / p;
    const int gw = image.width() / p;
    const int m = gh * gw;
    const int d = model.embed_dim;

    // Unfold into (m x 3PP) then project.
    RowMatrixXf unfolded(m, 3 * p * p);
    for (int gy = 0; gy < gh; ++gy) {
        for (int gx = 0; gx < gw; ++gx) {
            const int row = gy * gw + gx;
            for (int py = 0; py < p; ++py) {
                for (int px = 0; px < p; ++px) {
                    for (int c = 0; c < 3; ++c) {
                        unfolded(row, (py * p + px) * 3 + c) =
                            (image.at(gy * p + py, gx * p + px, c) - model.pixel_mean[c]) / model.pixel_std[c];
                    }
                }
            }
        }
    }

    RowMatrixXf x(1 + m + model.registers, d);
    x.row(0) = model.cls_token;
    x.middleRows(1, m) = affine(unfolded, model.patch_w, model.patch_b);
    if (model.registers > 0) x.bottomRows(model.registers) = model.reg_tokens;
    x += interpolate_pos_embed(model, gh, gw);

    const std::size_t n_layers = model.layers.size();
    for (std::size_t i = 0; i + 1 < n_layers; ++i) {
        const ViTLayer& layer = model.layers[i];
        const AttentionState s = project_qkv(model, layer, x, gh, gw);
        const RowMatrixXf mixed = full_attention(s, std::sqrt(static_cast<double>(model.head_dim())), trace);
        x += affine(mixed, layer.wo, layer.bo);
        x += mlp(layer, layer_norm(x, layer.ln2_g, layer.ln2_b, model.ln_eps));
    }
    LastLayerInput out;
    out.state = project_qkv(model, model.layers.back(), x, gh, gw);
    out.residual = std::move(x);
    return out;
}

RowMatrixXf finish_tokens(const ViTModel& model, const Eigen::Ref<const RowMatrixXf>& residual,
                          const Eigen::Ref<const RowMatrixXf>& mixed) {
    const ViTLayer& layer = model.layers.back();
    RowMatrixXf h = residual + affine(mixed, layer.wo, layer.bo);
    h += mlp(layer, layer_norm(h, layer.ln2_g, layer.ln2_b, model.ln_eps));
    return affine(layer_norm(h, model.lnf_g, model.lnf_b, model.ln_eps), model.proj_w, model.proj_b);
}

DenseFeatureMap forward_dense(const ImageRGB& image, const ViTModel& model,
                              const AttentionConfig& cfg, AttentionTrace* trace) {
    cfg.validate();
    const LastLayerInput in = prepare_last_layer(image, model, trace);
    const int m = in.state.patch_count();

    // CLS keeps the original attention over every token.
    const double native_scale = std::sqrt(static_cast<double>(model.head_dim()));
    const RowMatrixXf cls_mixed = token_attention(in.state, 0, native_scale, trace);
    const RowMatrixXf patch_mixed = dense_attend(in.state, cfg, trace);

    DenseFeatureMap out;
    out.grid_h = in.state.grid_h;
    out.grid_w = in.state.grid_w;
    out.patches = finish_tokens(model, in.residual.middleRows(1, m), patch_mixed);
    RowMatrixXf summary = finish_tokens(model, in.residual.topRows(1), cls_mixed);
    if (!unit_normalize_rows(out.patches) || !unit_normalize_rows(summary)) {
        throw NumericError("forward pass produced a zero embedding");
    }
    out.summary = summary.row(0);
    out.valid.assign(static_cast<std::size_t>(m), 1);
    return out;
}

Eigen::RowVectorXf encode_summary(const ImageRGB& image, const ViTModel& model,
                                  const AttentionConfig& cfg) {
    return forward_dense(image, model, cfg).summary;
}

}  // namespace sail
