#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "sail/config.hpp"
#include "sail/distill.hpp"
#include "sail/image.hpp"
#include "sail/vit.hpp"

namespace sail {

/// Images of a directory (*.ppm), sorted by file name; ids are the stems.
struct ImageCorpus {
    std::vector<std::string> ids;
    std::vector<ImageRGB> images;
};

ImageCorpus load_images(const std::filesystem::path& dir);

/// Dense features for a corpus, one map per image, all on the same grid.
/// On disk: features.nst [n,Gh,Gw,M], summary.nst [n,M], valid.nst [n,Gh,Gw]
/// (1 or 0) and manifest.txt with the ids, the source image size and any
/// provenance keys in meta.
struct FeatureSet {
    std::vector<std::string> ids;
    std::vector<DenseFeatureMap> maps;
    int image_height = 0;
    int image_width = 0;
    Manifest meta;

    std::size_t size() const { return maps.size(); }
    /// Summary embeddings as rows (n x M).
    RowMatrixXd summaries() const;
};

void save_features(const FeatureSet& set, const std::filesystem::path& dir);
FeatureSet load_features(const std::filesystem::path& dir);

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index runs
/// exactly once; the first exception is rethrown after all workers stop.
void parallel_for(std::size_t n, int threads, const std::function<void(std::size_t)>& fn);

/// Worker count: explicit value if positive, else SAIL_THREADS, else 1.
int resolve_threads(int requested);

std::vector<DenseFeatureMap> extract_corpus(std::span<const ImageRGB> images, const DenseExtractor& extract,
                                            int threads);

/// Images are processed one after another; views inside an image use
/// opts.threads workers.
std::vector<DenseFeatureMap> distill_corpus(std::span<const ImageRGB> images, const DenseExtractor& extract,
                                            std::span<const AugmentParams> params, const DistillOptions& opts);

/// RFC 4180 field quoting.
std::string csv_field(const std::string& s);

class CsvWriter {
public:
    explicit CsvWriter(std::vector<std::string> header);
    void row(const std::vector<std::string>& fields);
    std::string str() const { return text_; }
    void write(const std::filesystem::path& path) const;

private:
    std::size_t columns_;
    std::string text_;
};

/// Writes bytes verbatim, creating parent directories.
void write_text(const std::filesystem::path& path, const std::string& text);

}  // namespace sail
