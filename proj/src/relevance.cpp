#include "sail/relevance.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <set>

#include "sail/config.hpp"
#include "sail/error.hpp"
#include "sail/metrics.hpp"

namespace sail {

bool RelevanceMap::all_valid() const {
    return std::all_of(valid.begin(), valid.end(), [](std::uint8_t v) { return v != 0; });
}

std::vector<double> RelevanceMap::valid_values() const {
    std::vector<double> out;
    out.reserve(valid.size());
    for (int i = 0; i < grid_h * grid_w; ++i) {
        if (valid[static_cast<std::size_t>(i)]) out.push_back(values(i / grid_w, i % grid_w));
    }
    return out;
}

Aggregation parse_aggregation(std::string_view s) {
    if (s == "mean") return Aggregation::mean;
    if (s == "max") return Aggregation::max;
    throw InvalidArgument("unknown aggregation '" + std::string(s) + "' (mean|max)");
}

namespace {

RelevanceMap empty_like(const DenseFeatureMap& f, std::string source) {
    RelevanceMap m;
    m.grid_h = f.grid_h;
    m.grid_w = f.grid_w;
    m.values = RowMatrixXd::Zero(f.grid_h, f.grid_w);
    m.valid = f.valid.empty() ? std::vector<std::uint8_t>(static_cast<std::size_t>(f.cell_count()), 1)
                              : f.valid;
    m.source = std::move(source);
    return m;
}

}  // namespace

RelevanceMap voxel_relevance(const DenseFeatureMap& f, const LinearProbe& probe,
                             std::span<const int> voxels, const VoxelRelevanceOptions& opts) {
    if (voxels.empty()) throw InvalidArgument("voxel set is empty");
    for (int j : voxels) {
        if (j < 0 || j >= probe.voxels()) {
            throw InvalidArgument("voxel index " + std::to_string(j) + " out of range [0," +
                                  std::to_string(probe.voxels()) + ")");
        }
    }
    if (f.dim() != probe.dim()) throw InvalidArgument("feature width does not match probe");
    RelevanceMap m = empty_like(f, "voxels:" + format_index_set(voxels));
    for (int p = 0; p < f.cell_count(); ++p) {
        if (!m.valid[static_cast<std::size_t>(p)]) continue;
        const Eigen::RowVectorXd fp = f.patches.row(p).cast<double>();
        double acc = opts.agg == Aggregation::max ? -std::numeric_limits<double>::infinity() : 0.0;
        for (int j : voxels) {
            double s = fp.dot(probe.weights.col(j));
            if (opts.include_bias) s += probe.bias(j);
            acc = opts.agg == Aggregation::max ? std::max(acc, s) : acc + s;
        }
        if (opts.agg == Aggregation::mean) acc /= static_cast<double>(voxels.size());
        m.values(p / f.grid_w, p % f.grid_w) = acc;
    }
    return m;
}

RelevanceMap query_relevance(const DenseFeatureMap& f, const Eigen::Ref<const Eigen::RowVectorXd>& q) {
    if (q.size() != f.dim()) throw InvalidArgument("query width does not match features");
    const double norm = q.norm();
    if (!(norm > 0.0)) throw InvalidArgument("query embedding has zero norm");
    const Eigen::RowVectorXd qn = q / norm;
    RelevanceMap m = empty_like(f, "query");
    for (int p = 0; p < f.cell_count(); ++p) {
        if (!m.valid[static_cast<std::size_t>(p)]) continue;
        const Eigen::RowVectorXd fp = f.patches.row(p).cast<double>();
        const double fn = fp.norm();
        m.values(p / f.grid_w, p % f.grid_w) = fn > 0.0 ? std::clamp(fp.dot(qn) / fn, -1.0, 1.0) : 0.0;
    }
    return m;
}

void QuerySet::validate() const {
    if (groups.empty()) throw InvalidArgument("query set has no groups");
    std::set<std::string> names;
    Eigen::Index width = -1;
    for (const auto& g : groups) {
        if (!names.insert(g.name).second) throw InvalidArgument("duplicate query group '" + g.name + "'");
        if (g.prompts.empty()) throw InvalidArgument("query group '" + g.name + "' is empty");
        for (const auto& q : g.prompts) {
            if (width < 0) width = q.size();
            if (q.size() != width) throw InvalidArgument("query embeddings differ in width");
            if (std::abs(q.norm() - 1.0) > 1e-4) {
                throw InvalidArgument("query embedding in group '" + g.name + "' is not unit-norm");
            }
        }
    }
}

std::vector<Eigen::RowVectorXd> QuerySet::class_embeddings() const {
    std::vector<Eigen::RowVectorXd> out;
    for (const auto& g : groups) {
        Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(g.prompts.at(0).size());
        for (const auto& q : g.prompts) mean += q;
        const double n = mean.norm();
        if (!(n > 0.0)) throw NumericError("query group '" + g.name + "' averages to zero");
        out.push_back(mean / n);
    }
    return out;
}

QuerySet load_query_set(const std::filesystem::path& manifest_path) {
    const Manifest m = Manifest::read(manifest_path);
    const auto base = manifest_path.parent_path();
    QuerySet set;
    for (const auto& [key, value] : m.entries()) {
        if (key.rfind("group.", 0) != 0) continue;
        QueryGroup g{key.substr(6), {}};
        std::string_view rest = value;
        while (!rest.empty()) {
            const auto comma = rest.find(',');
            const std::string file(rest.substr(0, comma));
            rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
            if (file.empty()) continue;
            const Tensor t = read_tensor(base / file);
            if (t.rank() != 1) throw InputError(file + ": query embedding must be rank 1");
            Eigen::RowVectorXd q(static_cast<Eigen::Index>(t.size()));
            for (std::size_t i = 0; i < t.size(); ++i) q(static_cast<Eigen::Index>(i)) = t[i];
            g.prompts.push_back(std::move(q));
        }
        set.groups.push_back(std::move(g));
    }
    try {
        set.validate();
    } catch (const InvalidArgument& e) {
        throw InputError(manifest_path.string() + ": " + e.what());
    }
    return set;
}

void save_query_set(const QuerySet& set, const std::filesystem::path& dir) {
    set.validate();
    std::filesystem::create_directories(dir);
    Manifest m;
    for (const auto& g : set.groups) {
        std::string files;
        for (std::size_t i = 0; i < g.prompts.size(); ++i) {
            const std::string name = g.name + "_" + std::to_string(i) + ".nst";
            const Eigen::RowVectorXf q = g.prompts[i].cast<float>();
            write_tensor(Tensor::from_vector(std::span<const float>(q.data(), static_cast<std::size_t>(q.size()))),
                         dir / name);
            files += (i ? "," : "") + name;
        }
        m.set("group." + g.name, files);
    }
    m.write(dir / "manifest.txt");
}

CategoryAssignment assign_category(const RelevanceMap& brain_map, const QuerySet& queries,
                                   const DenseFeatureMap& f) {
    queries.validate();
    const std::vector<double> brain = brain_map.valid_values();
    if (brain.size() < 2) throw NumericError("brain map has fewer than 2 valid cells");
    if (std::all_of(brain.begin(), brain.end(), [&](double v) { return v == brain.front(); })) {
        throw NumericError("brain relevance map is constant; Pearson r undefined");
    }
    CategoryAssignment best;
    bool found = false;
    for (std::size_t g = 0; g < queries.groups.size(); ++g) {
        const auto& prompts = queries.groups[g].prompts;
        for (std::size_t p = 0; p < prompts.size(); ++p) {
            RelevanceMap qm = query_relevance(f, prompts[p]);
            qm.valid = brain_map.valid;
            double r;
            try {
                r = pearson(brain, qm.valid_values());
            } catch (const NumericError&) {
                continue;  // constant prompt map carries no ranking information
            }
            if (!found || r > best.r) {
                best = {g, p, r};
                found = true;
            }
        }
    }
    if (!found) throw NumericError("every prompt relevance map is constant");
    return best;
}

std::vector<int> parse_index_set(std::string_view text) {
    std::vector<int> out;
    auto parse_int = [&](std::string_view s) {
        int v = 0;
        const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
        if (ec != std::errc{} || ptr != s.data() + s.size() || v < 0) {
            throw InvalidArgument("bad index '" + std::string(s) + "' in set '" + std::string(text) + "'");
        }
        return v;
    };
    std::string_view rest = text;
    while (!rest.empty()) {
        const auto comma = rest.find(',');
        const std::string_view item = rest.substr(0, comma);
        rest = comma == std::string_view::npos ? std::string_view{} : rest.substr(comma + 1);
        if (item.empty()) continue;
        const auto dash = item.find('-');
        if (dash == std::string_view::npos) {
            out.push_back(parse_int(item));
        } else {
            const int lo = parse_int(item.substr(0, dash));
            const int hi = parse_int(item.substr(dash + 1));
            if (hi < lo) throw InvalidArgument("descending range '" + std::string(item) + "'");
            for (int i = lo; i <= hi; ++i) out.push_back(i);
        }
    }
    if (out.empty()) throw InvalidArgument("empty index set");
    return out;
}

std::string format_index_set(std::span<const int> indices) {
    std::string out;
    std::size_t i = 0;
    while (i < indices.size()) {
        std::size_t j = i;
        while (j + 1 < indices.size() && indices[j + 1] == indices[j] + 1) ++j;
        if (!out.empty()) out += ',';
        out += std::to_string(indices[i]);
        if (j > i) out += "-" + std::to_string(indices[j]);
        i = j + 1;
    }
    return out;
}

}  // namespace sail
