#include "sail/image.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <string>

namespace sail {

ImageRGB::ImageRGB(int height, int width)
    : height_(height), width_(width),
      values_(static_cast<std::size_t>(height) * width * 3, 0.0f) {
    if (height < 1 || width < 1) throw InvalidArgument("image dimensions must be positive");
}

ImageRGB::ImageRGB(int height, int width, std::vector<float> values)
    : height_(height), width_(width), values_(std::move(values)) {
    if (height < 1 || width < 1) throw InvalidArgument("image dimensions must be positive");
    if (values_.size() != static_cast<std::size_t>(height) * width * 3) {
        throw InvalidArgument("image value count does not match 3*H*W");
    }
    for (float& v : values_) v = std::clamp(v, 0.0f, 1.0f);
}

namespace {

struct NetpbmHeader {
    std::string magic;
    int width = 0;
    int height = 0;
    int maxval = 0;
    std::size_t payload_offset = 0;
};

std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw InputError("cannot read " + path.string());
    return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

NetpbmHeader parse_header(const std::vector<std::uint8_t>& bytes, const std::string& name) {
    NetpbmHeader h;
    std::size_t pos = 0;
    auto next_token = [&]() -> std::string {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(bytes[pos])) {
                ++pos;
            } else {
                break;
            }
        }
        std::string tok;
        while (pos < bytes.size() && !std::isspace(bytes[pos]) && bytes[pos] != '#') {
            tok.push_back(static_cast<char>(bytes[pos++]));
        }
        if (tok.empty()) throw InputError(name + ": truncated header");
        return tok;
    };
    auto next_int = [&]() {
        const std::string tok = next_token();
        if (!std::all_of(tok.begin(), tok.end(), [](char c) { return std::isdigit(c); }) ||
            tok.size() > 9) {
            throw InputError(name + ": bad header field '" + tok + "'");
        }
        return std::stoi(tok);
    };
    h.magic = next_token();
    h.width = next_int();
    h.height = next_int();
    h.maxval = next_int();
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) {
        throw InputError(name + ": truncated header");
    }
    h.payload_offset = pos + 1;
    if (h.width < 1 || h.height < 1) throw InputError(name + ": empty image");
    return h;
}

void write_bytes(const std::filesystem::path& path, const std::string& header,
                 const std::vector<std::uint8_t>& payload) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw InputError("cannot write " + path.string());
    os << header;
    os.write(reinterpret_cast<const char*>(payload.data()),
             static_cast<std::streamsize>(payload.size()));
    if (!os) throw InputError("write failed: " + path.string());
}

std::uint8_t to_byte(double v) {
    return static_cast<std::uint8_t>(std::floor(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5));
}

}  // namespace

ImageRGB read_image(const std::filesystem::path& path) {
    const auto bytes = slurp(path);
    const auto h = parse_header(bytes, path.string());
    if (h.magic != "P6") throw InputError(path.string() + ": not a binary PPM (P6)");
    if (h.maxval != 255) {
        throw InputError(path.string() + ": unsupported maxval " + std::to_string(h.maxval));
    }
    const std::size_t n = static_cast<std::size_t>(h.width) * h.height * 3;
    if (bytes.size() - h.payload_offset < n) {
        throw InputError(path.string() + ": payload shorter than 3*H*W");
    }
    std::vector<float> values(n);
    for (std::size_t i = 0; i < n; ++i) {
        values[i] = static_cast<float>(bytes[h.payload_offset + i]) / 255.0f;
    }
    return ImageRGB(h.height, h.width, std::move(values));
}

void write_image(const ImageRGB& image, const std::filesystem::path& path) {
    std::vector<std::uint8_t> payload(image.values().size());
    std::transform(image.values().begin(), image.values().end(), payload.begin(),
                   [](float v) { return to_byte(v); });
    write_bytes(path,
                "P6\n" + std::to_string(image.width()) + " " + std::to_string(image.height()) +
                    "\n255\n",
                payload);
}

GrayImage read_pgm(const std::filesystem::path& path) {
    const auto bytes = slurp(path);
    const auto h = parse_header(bytes, path.string());
    if (h.magic != "P5") throw InputError(path.string() + ": not a binary PGM (P5)");
    if (h.maxval != 255) {
        throw InputError(path.string() + ": unsupported maxval " + std::to_string(h.maxval));
    }
    const std::size_t n = static_cast<std::size_t>(h.width) * h.height;
    if (bytes.size() - h.payload_offset < n) {
        throw InputError(path.string() + ": payload shorter than H*W");
    }
    GrayImage g{h.height, h.width, {}};
    g.pixels.assign(bytes.begin() + static_cast<std::ptrdiff_t>(h.payload_offset),
                    bytes.begin() + static_cast<std::ptrdiff_t>(h.payload_offset + n));
    return g;
}

void write_pgm(const GrayImage& image, const std::filesystem::path& path) {
    if (image.pixels.size() != static_cast<std::size_t>(image.height) * image.width) {
        throw InvalidArgument("gray image pixel count does not match H*W");
    }
    write_bytes(path,
                "P5\n" + std::to_string(image.width) + " " + std::to_string(image.height) +
                    "\n255\n",
                image.pixels);
}

GrayImage heatmap_bytes(const Eigen::Ref<const RowMatrixXd>& values) {
    if (values.size() == 0) throw InvalidArgument("empty heatmap");
    if (!values.allFinite()) throw InvalidArgument("heatmap contains non-finite values");
    const double lo = values.minCoeff();
    const double hi = values.maxCoeff();
    GrayImage g{static_cast<int>(values.rows()), static_cast<int>(values.cols()), {}};
    g.pixels.resize(static_cast<std::size_t>(values.size()));
    for (Eigen::Index r = 0; r < values.rows(); ++r) {
        for (Eigen::Index c = 0; c < values.cols(); ++c) {
            const std::size_t i = static_cast<std::size_t>(r * values.cols() + c);
            g.pixels[i] = hi > lo ? to_byte((values(r, c) - lo) / (hi - lo)) : 128;
        }
    }
    return g;
}

void write_heatmap(const Eigen::Ref<const RowMatrixXd>& values,
                   const std::filesystem::path& path) {
    write_pgm(heatmap_bytes(values), path);
}

}  // namespace sail
