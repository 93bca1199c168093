#include "sail/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include "sail/error.hpp"
#include "sail/tensor.hpp"

namespace sail {

namespace fs = std::filesystem;

ImageCorpus load_images(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw InputError("image directory not found: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && entry.path().extension() == ".ppm") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    if (files.empty()) throw InputError("no .ppm images in " + dir.string());
    ImageCorpus corpus;
    for (const auto& f : files) {
        corpus.ids.push_back(f.stem().string());
        corpus.images.push_back(read_image(f));
    }
    return corpus;
}

RowMatrixXd FeatureSet::summaries() const {
    if (maps.empty()) return RowMatrixXd();
    RowMatrixXd out(static_cast<Eigen::Index>(maps.size()), maps[0].dim());
    for (std::size_t i = 0; i < maps.size(); ++i) {
        out.row(static_cast<Eigen::Index>(i)) = maps[i].summary.cast<double>();
    }
    return out;
}

void save_features(const FeatureSet& set, const fs::path& dir) {
    if (set.maps.empty()) throw InvalidArgument("feature set is empty");
    if (set.ids.size() != set.maps.size()) throw InvalidArgument("one id per feature map required");
    const DenseFeatureMap& first = set.maps[0];
    const std::size_t n = set.maps.size();
    const auto gh = static_cast<std::size_t>(first.grid_h);
    const auto gw = static_cast<std::size_t>(first.grid_w);
    const auto dim = static_cast<std::size_t>(first.dim());
    std::vector<float> features, summary, valid;
    features.reserve(n * gh * gw * dim);
    for (const DenseFeatureMap& f : set.maps) {
        if (f.grid_h != first.grid_h || f.grid_w != first.grid_w || f.dim() != first.dim() ||
            f.summary.size() != first.dim()) {
            throw InvalidArgument("feature maps disagree in grid or width");
        }
        features.insert(features.end(), f.patches.data(), f.patches.data() + f.patches.size());
        summary.insert(summary.end(), f.summary.data(), f.summary.data() + f.summary.size());
        for (std::uint8_t v : f.valid) valid.push_back(v ? 1.0f : 0.0f);
    }
    fs::create_directories(dir);
    write_tensor(Tensor({n, gh, gw, dim}, std::move(features)), dir / "features.nst");
    write_tensor(Tensor({n, dim}, std::move(summary)), dir / "summary.nst");
    write_tensor(Tensor({n, gh, gw}, std::move(valid)), dir / "valid.nst");

    Manifest m = set.meta;
    m.set("images", static_cast<long long>(n));
    m.set("grid_h", first.grid_h);
    m.set("grid_w", first.grid_w);
    m.set("dim", first.dim());
    m.set("image_height", set.image_height);
    m.set("image_width", set.image_width);
    for (std::size_t i = 0; i < n; ++i) m.set("id." + std::to_string(i), set.ids[i]);
    m.write(dir / "manifest.txt");
}

FeatureSet load_features(const fs::path& dir) {
    const Manifest m = Manifest::read(dir / "manifest.txt");
    const Tensor features = read_tensor(dir / "features.nst");
    const Tensor summary = read_tensor(dir / "summary.nst");
    const Tensor valid = read_tensor(dir / "valid.nst");
    if (features.rank() != 4 || summary.rank() != 2 || valid.rank() != 3) {
        throw InputError("feature tensors in " + dir.string() + " have the wrong rank");
    }
    const std::size_t n = features.dim(0), gh = features.dim(1), gw = features.dim(2), dim = features.dim(3);
    if (summary.dim(0) != n || summary.dim(1) != dim || valid.dim(0) != n || valid.dim(1) != gh ||
        valid.dim(2) != gw || static_cast<std::size_t>(m.get_int("images")) != n) {
        throw InputError("feature tensors in " + dir.string() + " disagree in shape");
    }
    FeatureSet set;
    set.image_height = static_cast<int>(m.get_int("image_height"));
    set.image_width = static_cast<int>(m.get_int("image_width"));
    const std::size_t cells = gh * gw;
    for (std::size_t i = 0; i < n; ++i) {
        set.ids.push_back(m.get("id." + std::to_string(i)));
        DenseFeatureMap f;
        f.grid_h = static_cast<int>(gh);
        f.grid_w = static_cast<int>(gw);
        f.patches = Eigen::Map<const RowMatrixXf>(features.data().data() + i * cells * dim,
                                                  static_cast<Eigen::Index>(cells), static_cast<Eigen::Index>(dim));
        f.summary = Eigen::Map<const Eigen::RowVectorXf>(summary.data().data() + i * dim,
                                                         static_cast<Eigen::Index>(dim));
        f.valid.resize(cells);
        for (std::size_t c = 0; c < cells; ++c) f.valid[c] = valid.data()[i * cells + c] != 0.0f;
        set.maps.push_back(std::move(f));
    }
    for (const auto& [key, value] : m.entries()) {
        if (key.rfind("id.", 0) == 0) continue;
        set.meta.set(key, value);
    }
    return set;
}

void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn) {
    const auto workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(1, threads)), n);
    if (workers <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::atomic<bool> stop{false};
    std::exception_ptr failure;
    std::mutex mutex;
    auto worker = [&]() {
        for (std::size_t i = next++; i < n && !stop; i = next++) {
            try {
                fn(i);
            } catch (...) {
                std::lock_guard lock(mutex);
                if (!failure) failure = std::current_exception();
                stop = true;
            }
        }
    };
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < workers; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

int resolve_threads(int requested) {
    if (requested > 0) return requested;
    if (const char* env = std::getenv("SAIL_THREADS")) {
        char* end = nullptr;
        const long v = std::strtol(env, &end, 10);
        if (end == env || *end != '\0' || v < 1) {
            throw InvalidArgument(std::string("SAIL_THREADS must be a positive integer, got '") + env + "'");
        }
        return static_cast<int>(v);
    }
    return 1;
}

std::vector<DenseFeatureMap> extract_corpus(std::span<const ImageRGB> images, const DenseExtractor& extract,
                                            int threads) {
    std::vector<DenseFeatureMap> out(images.size());
    parallel_for(images.size(), threads, [&](std::size_t i) { out[i] = extract(images[i]); });
    return out;
}

std::vector<DenseFeatureMap> distill_corpus(std::span<const ImageRGB> images, const DenseExtractor& extract,
                                            std::span<const AugmentParams> params, const DistillOptions& opts) {
    std::vector<DenseFeatureMap> out;
    out.reserve(images.size());
    for (const ImageRGB& img : images) out.push_back(distill(img, extract, params, opts));
    return out;
}

std::string csv_field(const std::string& s) {
    if (s.find_first_of(",\"\r\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

CsvWriter::CsvWriter(std::vector<std::string> header) : columns_(header.size()) {
    if (header.empty()) throw InvalidArgument("csv header is empty");
    row(header);
}

void CsvWriter::row(const std::vector<std::string>& fields) {
    if (fields.size() != columns_) throw InvalidArgument("csv row has the wrong number of fields");
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) text_ += ',';
        text_ += csv_field(fields[i]);
    }
    text_ += "\r\n";
}

void CsvWriter::write(const fs::path& path) const { write_text(path, text_); }

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw InputError("write failed for " + path.string());
}

}  // namespace sail
