#pragma once

#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "sail/probe.hpp"
#include "sail/vit.hpp"

namespace sail {

struct RelevanceMap {
    int grid_h = 0;
    int grid_w = 0;
    RowMatrixXd values;  // grid_h x grid_w
    std::vector<std::uint8_t> valid;
    std::string source;

    bool all_valid() const;
    /// Values of valid cells in row-major order.
    std::vector<double> valid_values() const;
};

enum class Aggregation { mean, max };

Aggregation parse_aggregation(std::string_view s);

struct VoxelRelevanceOptions {
    Aggregation agg = Aggregation::mean;
    bool include_bias = true;
};

/// Per patch: agg over voxels j of (f_p . W[:,j] + b_j).
RelevanceMap voxel_relevance(const DenseFeatureMap& f, const LinearProbe& probe,
                             std::span<const int> voxels, const VoxelRelevanceOptions& opts = {});

/// Per patch cosine similarity with q (q is normalized; zero q is an error).
RelevanceMap query_relevance(const DenseFeatureMap& f, const Eigen::Ref<const Eigen::RowVectorXd>& q);

struct QueryGroup {
    std::string name;
    std::vector<Eigen::RowVectorXd> prompts;
};

/// Named prompt-embedding groups in declaration order.
struct QuerySet {
    std::vector<QueryGroup> groups;

    /// Unique names, non-empty groups, unit-norm embeddings of equal width.
    void validate() const;
    /// Normalized mean embedding of each group.
    std::vector<Eigen::RowVectorXd> class_embeddings() const;
};

/// Manifest lines "group.<name>=a.nst,b.nst"; paths relative to the manifest.
QuerySet load_query_set(const std::filesystem::path& manifest_path);
void save_query_set(const QuerySet& set, const std::filesystem::path& dir);

struct CategoryAssignment {
    std::size_t group = 0;
    std::size_t prompt = 0;
    double r = 0.0;
};

/// Group holding the prompt whose relevance map has the highest Pearson r with
/// brain_map. Ties go to the earlier group, then the earlier prompt.
CategoryAssignment assign_category(const RelevanceMap& brain_map, const QuerySet& queries,
                                   const DenseFeatureMap& f);

/// Inclusive ranges such as "0-15,32,40-41".
std::vector<int> parse_index_set(std::string_view text);
std::string format_index_set(std::span<const int> indices);

}  // namespace sail
