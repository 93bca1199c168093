#include "sail/config.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "sail/error.hpp"

namespace sail {

namespace {

std::string_view trim(std::string_view s) {
    const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r'; };
    while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
    while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
    return s;
}

}  // namespace

Manifest Manifest::parse(std::string_view text, std::string_view origin) {
    Manifest m;
    m.origin_ = std::string(origin);
    std::size_t line_no = 0;
    while (!text.empty()) {
        const std::size_t nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        line = trim(line);
        if (line.empty() || line.front() == '#') continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw InputError(m.origin_ + ":" + std::to_string(line_no) + ": expected key=value");
        }
        const std::string_view key = trim(line.substr(0, eq));
        if (key.empty()) {
            throw InputError(m.origin_ + ":" + std::to_string(line_no) + ": empty key");
        }
        m.set(std::string(key), std::string(trim(line.substr(eq + 1))));
    }
    return m;
}

Manifest Manifest::read(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw InputError("cannot read " + path.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return parse(ss.str(), path.string());
}

void Manifest::write(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw InputError("cannot write " + path.string());
    os << to_string();
}

std::string Manifest::to_string() const {
    std::string out;
    for (const auto& [k, v] : entries_) out += k + "=" + v + "\n";
    return out;
}

bool Manifest::contains(std::string_view key) const {
    return std::any_of(entries_.begin(), entries_.end(),
                       [&](const auto& e) { return e.first == key; });
}

const std::string& Manifest::get(std::string_view key) const {
    for (const auto& [k, v] : entries_) {
        if (k == key) return v;
    }
    throw InputError(origin_ + ": missing key '" + std::string(key) + "'");
}

std::string Manifest::get_or(std::string_view key, std::string fallback) const {
    return contains(key) ? get(key) : std::move(fallback);
}

long long Manifest::get_int(std::string_view key) const {
    const std::string& v = get(key);
    long long out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || ptr != v.data() + v.size()) {
        throw InputError(origin_ + ": key '" + std::string(key) + "' is not an integer: " + v);
    }
    return out;
}

double Manifest::get_double(std::string_view key) const {
    const std::string& v = get(key);
    try {
        std::size_t used = 0;
        const double out = std::stod(v, &used);
        if (used == v.size()) return out;
    } catch (const std::exception&) {
    }
    throw InputError(origin_ + ": key '" + std::string(key) + "' is not a number: " + v);
}

void Manifest::set(std::string key, std::string value) {
    for (auto& [k, v] : entries_) {
        if (k == key) {
            v = std::move(value);
            return;
        }
    }
    entries_.emplace_back(std::move(key), std::move(value));
}

void Manifest::set(std::string key, long long value) {
    set(std::move(key), std::to_string(value));
}

void Manifest::set_double(std::string key, double value) {
    set(std::move(key), format_double(value));
}

std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

OffsetMode parse_offset_mode(std::string_view s) {
    if (s == "exact") return OffsetMode::exact;
    if (s == "pixel") return OffsetMode::pixel;
    throw InvalidArgument("unknown offset mode '" + std::string(s) + "' (exact|pixel)");
}

std::string_view to_string(OffsetMode m) {
    return m == OffsetMode::exact ? "exact" : "pixel";
}

void RunConfig::validate() const {
    if (patch_size < 1) throw InvalidArgument("patch size must be >= 1");
    if (n_aug < 1) throw InvalidArgument("augmentation count must be >= 1");
    if (!(sigma > 0.0)) throw InvalidArgument("sigma must be > 0");
    if (ridge_lambda && !(*ridge_lambda >= 0.0)) throw InvalidArgument("lambda must be >= 0");
    if (max_shift && *max_shift < 0) throw InvalidArgument("max shift must be >= 0");
}

RunConfig RunConfig::from_manifest(const Manifest& m) {
    RunConfig c;
    c.model_path = m.get_or("model", "");
    if (m.contains("patch_size")) c.patch_size = static_cast<int>(m.get_int("patch_size"));
    if (m.contains("n_aug")) c.n_aug = static_cast<int>(m.get_int("n_aug"));
    if (m.contains("seed")) c.seed = static_cast<std::uint64_t>(m.get_int("seed"));
    if (m.contains("sigma")) c.sigma = m.get_double("sigma");
    if (m.contains("lambda")) c.ridge_lambda = m.get_double("lambda");
    if (m.contains("offset_mode")) c.offset_mode = parse_offset_mode(m.get("offset_mode"));
    if (m.contains("max_shift")) c.max_shift = static_cast<int>(m.get_int("max_shift"));
    c.validate();
    return c;
}

Manifest RunConfig::to_manifest() const {
    Manifest m;
    if (!model_path.empty()) m.set("model", model_path);
    m.set("patch_size", patch_size);
    m.set("n_aug", n_aug);
    m.set("seed", static_cast<long long>(seed));
    m.set_double("sigma", sigma);
    if (ridge_lambda) m.set_double("lambda", *ridge_lambda);
    m.set("offset_mode", std::string(to_string(offset_mode)));
    if (max_shift) m.set("max_shift", *max_shift);
    return m;
}

}  // namespace sail
