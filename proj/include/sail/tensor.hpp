#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "sail/error.hpp"

namespace sail {

using RowMatrixXf = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMatrixXd = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Dense row-major f32 array of rank 1..8.
class Tensor {
public:
    Tensor() = default;
    /// Zero-filled tensor of the given shape.
    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<float> data);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    std::size_t size() const { return data_.size(); }

    std::span<float> data() { return data_; }
    std::span<const float> data() const { return data_; }
    float& operator[](std::size_t i) { return data_[i]; }
    float operator[](std::size_t i) const { return data_[i]; }

    bool operator==(const Tensor&) const = default;

    /// Views a rank-2 tensor as a row-major matrix.
    Eigen::Map<const RowMatrixXf> matrix() const;
    Eigen::Map<RowMatrixXf> matrix();

    static Tensor from_matrix(const Eigen::Ref<const RowMatrixXf>& m);
    static Tensor from_vector(std::span<const float> v);

private:
    std::vector<std::size_t> shape_;
    std::vector<float> data_;
};

std::string shape_string(const std::vector<std::size_t>& shape);

enum class TensorErrorCode {
    io,
    bad_magic,
    bad_dtype,
    bad_rank,
    truncated,
    shape_overflow,
    trailing_bytes,
};

/// Failure reading or writing an NST1 archive; code() identifies the cause.
class TensorFormatError : public InputError {
public:
    TensorFormatError(TensorErrorCode code, const std::string& what)
        : InputError(what), code_(code) {}
    TensorErrorCode code() const { return code_; }

private:
    TensorErrorCode code_;
};

// NST1 layout: "NST1" | u8 dtype (1 = f32 LE) | u8 rank | 2 zero bytes |
// rank x u64 LE dims | row-major payload.
inline constexpr std::uint8_t kDtypeF32 = 1;
inline constexpr std::size_t kMaxRank = 8;

std::vector<std::uint8_t> encode_tensor(const Tensor& t);
Tensor decode_tensor(std::span<const std::uint8_t> bytes);

void write_tensor(const Tensor& t, const std::filesystem::path& path);
Tensor read_tensor(const std::filesystem::path& path);

}  // namespace sail
