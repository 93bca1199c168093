#include "sail/tensor.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <sstream>

namespace sail {

namespace {

constexpr char kMagic[4] = {'N', 'S', 'T', '1'};
constexpr std::size_t kPreambleBytes = 8;

static_assert(std::endian::native == std::endian::little,
              "NST1 encoding assumes a little-endian host");

void check_shape(const std::vector<std::size_t>& shape) {
    if (shape.empty()) {
        throw TensorFormatError(TensorErrorCode::bad_rank, "zero-rank rejected");
    }
    if (shape.size() > kMaxRank) {
        throw TensorFormatError(TensorErrorCode::bad_rank,
                                "rank " + std::to_string(shape.size()) + " exceeds 8");
    }
    for (std::size_t d : shape) {
        if (d == 0) {
            throw TensorFormatError(TensorErrorCode::bad_rank,
                                    "zero-sized dimension in " + shape_string(shape));
        }
    }
}

std::size_t checked_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        if (d != 0 && n > std::numeric_limits<std::size_t>::max() / d) {
            throw TensorFormatError(TensorErrorCode::shape_overflow,
                                    "shape overflow: " + shape_string(shape));
        }
        n *= d;
    }
    return n;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(checked_product(shape_), 0.0f);
}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (checked_product(shape_) != data_.size()) {
        throw InvalidArgument("tensor data length " + std::to_string(data_.size()) +
                              " does not match shape " + shape_string(shape_));
    }
}

Eigen::Map<const RowMatrixXf> Tensor::matrix() const {
    if (rank() != 2) {
        throw InvalidArgument("matrix view needs rank 2, got " + shape_string(shape_));
    }
    return {data_.data(), static_cast<Eigen::Index>(shape_[0]),
            static_cast<Eigen::Index>(shape_[1])};
}

Eigen::Map<RowMatrixXf> Tensor::matrix() {
    if (rank() != 2) {
        throw InvalidArgument("matrix view needs rank 2, got " + shape_string(shape_));
    }
    return {data_.data(), static_cast<Eigen::Index>(shape_[0]),
            static_cast<Eigen::Index>(shape_[1])};
}

Tensor Tensor::from_matrix(const Eigen::Ref<const RowMatrixXf>& m) {
    Tensor t({static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
    t.matrix() = m;
    return t;
}

Tensor Tensor::from_vector(std::span<const float> v) {
    return Tensor({v.size()}, std::vector<float>(v.begin(), v.end()));
}

std::string shape_string(const std::vector<std::size_t>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
    check_shape(t.shape());
    std::vector<std::uint8_t> out(kPreambleBytes + 8 * t.rank() + 4 * t.size(), 0);
    std::memcpy(out.data(), kMagic, 4);
    out[4] = kDtypeF32;
    out[5] = static_cast<std::uint8_t>(t.rank());
    std::size_t off = kPreambleBytes;
    for (std::size_t d : t.shape()) {
        const auto v = static_cast<std::uint64_t>(d);
        std::memcpy(out.data() + off, &v, 8);
        off += 8;
    }
    if (t.size() > 0) std::memcpy(out.data() + off, t.data().data(), 4 * t.size());
    return out;
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes) {
    if (bytes.size() < kPreambleBytes || std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw TensorFormatError(TensorErrorCode::bad_magic, "bad magic: not an NST1 tensor");
    }
    if (bytes[4] != kDtypeF32) {
        throw TensorFormatError(TensorErrorCode::bad_dtype,
                                "unsupported dtype code " + std::to_string(bytes[4]));
    }
    const std::size_t rank = bytes[5];
    if (rank == 0) throw TensorFormatError(TensorErrorCode::bad_rank, "zero-rank rejected");
    if (rank > kMaxRank) {
        throw TensorFormatError(TensorErrorCode::bad_rank,
                                "rank " + std::to_string(rank) + " exceeds 8");
    }
    if (bytes.size() < kPreambleBytes + 8 * rank) {
        throw TensorFormatError(TensorErrorCode::truncated, "truncated header");
    }
    std::vector<std::size_t> shape(rank);
    for (std::size_t i = 0; i < rank; ++i) {
        std::uint64_t d = 0;
        std::memcpy(&d, bytes.data() + kPreambleBytes + 8 * i, 8);
        if (d > std::numeric_limits<std::size_t>::max()) {
            throw TensorFormatError(TensorErrorCode::shape_overflow, "dimension overflow");
        }
        shape[i] = static_cast<std::size_t>(d);
    }
    check_shape(shape);
    const std::size_t count = checked_product(shape);
    if (count > std::numeric_limits<std::size_t>::max() / 4) {
        throw TensorFormatError(TensorErrorCode::shape_overflow,
                                "shape overflow: " + shape_string(shape));
    }
    const std::size_t header = kPreambleBytes + 8 * rank;
    const std::size_t payload = bytes.size() - header;
    if (payload < 4 * count) {
        throw TensorFormatError(TensorErrorCode::truncated,
                                "truncated payload: expected " + std::to_string(4 * count) +
                                    " bytes, found " + std::to_string(payload));
    }
    if (payload > 4 * count) {
        throw TensorFormatError(TensorErrorCode::trailing_bytes, "trailing bytes after payload");
    }
    std::vector<float> data(count);
    std::memcpy(data.data(), bytes.data() + header, 4 * count);
    return Tensor(std::move(shape), std::move(data));
}

void write_tensor(const Tensor& t, const std::filesystem::path& path) {
    const auto bytes = encode_tensor(t);
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw TensorFormatError(TensorErrorCode::io, "cannot write " + path.string());
    os.write(reinterpret_cast<const char*>(bytes.data()),
             static_cast<std::streamsize>(bytes.size()));
    if (!os) throw TensorFormatError(TensorErrorCode::io, "write failed: " + path.string());
}

Tensor read_tensor(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw TensorFormatError(TensorErrorCode::io, "cannot read " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)),
                                    std::istreambuf_iterator<char>());
    try {
        return decode_tensor(bytes);
    } catch (const TensorFormatError& e) {
        throw TensorFormatError(e.code(), path.string() + ": " + e.what());
    }
}

}  // namespace sail
