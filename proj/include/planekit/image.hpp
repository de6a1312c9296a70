#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "planekit/error.hpp"

namespace planekit {

/// Dense row-major H x W x C grid.
template <typename T>
class Image {
public:
    using value_type = T;

    Image() = default;
    Image(int height, int width, int channels = 1, T fill = T{})
        : height_(height), width_(width), channels_(channels) {
        require(height >= 0 && width >= 0 && channels >= 1, Errc::invalid_input,
                "image dimensions must be non-negative with at least one channel");
        data_.assign(static_cast<std::size_t>(height) * width * channels, fill);
    }

    int height() const noexcept { return height_; }
    int width() const noexcept { return width_; }
    int channels() const noexcept { return channels_; }
    std::size_t pixels() const noexcept { return static_cast<std::size_t>(height_) * width_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    bool same_shape(int height, int width) const noexcept {
        return height_ == height && width_ == width;
    }
    template <typename U>
    bool same_shape(const Image<U>& other) const noexcept {
        return height_ == other.height() && width_ == other.width();
    }

    T& operator()(int row, int col, int ch = 0) { return data_[index(row, col, ch)]; }
    const T& operator()(int row, int col, int ch = 0) const { return data_[index(row, col, ch)]; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    std::span<T> pixel(int row, int col) {
        return {data_.data() + index(row, col, 0), static_cast<std::size_t>(channels_)};
    }
    std::span<const T> pixel(int row, int col) const {
        return {data_.data() + index(row, col, 0), static_cast<std::size_t>(channels_)};
    }
    std::span<T> pixel(std::size_t flat) {
        return {data_.data() + flat * channels_, static_cast<std::size_t>(channels_)};
    }
    std::span<const T> pixel(std::size_t flat) const {
        return {data_.data() + flat * channels_, static_cast<std::size_t>(channels_)};
    }

    std::vector<T>& data() noexcept { return data_; }
    const std::vector<T>& data() const noexcept { return data_; }

    bool operator==(const Image&) const = default;

private:
    std::size_t index(int row, int col, int ch) const noexcept {
        return (static_cast<std::size_t>(row) * width_ + col) * channels_ + ch;
    }

    int height_ = 0;
    int width_ = 0;
    int channels_ = 1;
    std::vector<T> data_;
};

/// Depth (meters), image gradient, soft masks.
using ScalarMap = Image<double>;
/// Features, RGB, per-pixel plane parameters (C = 3).
using VectorMap = Image<double>;
/// Per-pixel instance id, 0 = none.
using InstanceMap = Image<std::int32_t>;
/// Per-pixel boolean stored as 0/1.
using Mask = Image<std::uint8_t>;

template <typename T>
bool all_finite(const Image<T>& image) {
    for (const auto& v : image.data()) {
        if (!std::isfinite(static_cast<double>(v))) {
            return false;
        }
    }
    return true;
}

inline Mask full_mask(int height, int width) { return Mask(height, width, 1, 1); }

inline std::size_t count(const Mask& mask) {
    std::size_t n = 0;
    for (auto v : mask.data()) {
        n += v ? 1 : 0;
    }
    return n;
}

inline bool is_set(const Mask* mask, std::size_t flat) { return mask == nullptr || (*mask)[flat] != 0; }

} // namespace planekit
