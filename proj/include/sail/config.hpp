#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace sail {

/// Ordered key=value document. Lines starting with '#' are comments.
/// Used for run configs and for every artifact manifest.
class Manifest {
public:
    static Manifest parse(std::string_view text, std::string_view origin = "<string>");
    static Manifest read(const std::filesystem::path& path);

    void write(const std::filesystem::path& path) const;
    std::string to_string() const;

    bool contains(std::string_view key) const;
    /// Throws InputError when the key is absent.
    const std::string& get(std::string_view key) const;
    std::string get_or(std::string_view key, std::string fallback) const;
    long long get_int(std::string_view key) const;
    double get_double(std::string_view key) const;

    /// Replaces an existing key in place, otherwise appends.
    void set(std::string key, std::string value);
    void set(std::string key, long long value);
    void set_double(std::string key, double value);

    const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }

private:
    std::string origin_ = "<manifest>";
    std::vector<std::pair<std::string, std::string>> entries_;
};

/// Round-trip exact decimal rendering of a double.
std::string format_double(double v);

enum class OffsetMode { exact, pixel };

OffsetMode parse_offset_mode(std::string_view s);
std::string_view to_string(OffsetMode m);

struct RunConfig {
    std::string model_path;
    int patch_size = 8;
    int n_aug = 51;
    std::uint64_t seed = 0;
    double sigma = 10.0;
    /// Unset means 1e-3 * (number of training samples).
    std::optional<double> ridge_lambda;
    OffsetMode offset_mode = OffsetMode::exact;
    /// Unset means one patch.
    std::optional<int> max_shift;

    /// Throws InvalidArgument on n < 1, sigma <= 0 or lambda < 0.
    void validate() const;

    static RunConfig from_manifest(const Manifest& m);
    Manifest to_manifest() const;
};

}  // namespace sail
