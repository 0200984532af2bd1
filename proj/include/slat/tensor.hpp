#pragma once
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

// Dense row-major tensor of doubles. Files store f32 ("DNSE" format), the
// in-memory representation is always double.

namespace slat {

class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0)
        : shape_(std::move(shape)),
          data_(count(shape_), fill) {}

    Tensor(std::initializer_list<std::size_t> shape, double fill = 0.0)
        : Tensor(std::vector<std::size_t>(shape), fill) {}

    static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

    std::size_t ndim() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    const std::vector<std::size_t>& shape() const { return shape_; }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& values() { return data_; }
    const std::vector<double>& values() const { return data_; }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    template <typename... Is>
    double& at(Is... idx) { return data_[offset(idx...)]; }
    template <typename... Is>
    double at(Is... idx) const { return data_[offset(idx...)]; }

    template <typename... Is>
    std::size_t offset(Is... idx) const {
        const std::size_t is[] = {static_cast<std::size_t>(idx)...};
        if (sizeof...(idx) != shape_.size()) throw std::invalid_argument("tensor: rank mismatch in index");
        std::size_t off = 0;
        for (std::size_t d = 0; d < shape_.size(); ++d) {
            if (is[d] >= shape_[d]) throw std::out_of_range("tensor: index out of range");
            off = off * shape_[d] + is[d];
        }
        return off;
    }

    Tensor reshaped(std::vector<std::size_t> new_shape) const {
        if (count(new_shape) != size()) throw std::invalid_argument("tensor: reshape size mismatch");
        Tensor t = *this;
        t.shape_ = std::move(new_shape);
        return t;
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    void fill(double v) { std::fill(data_.begin(), data_.end(), v); }

private:
    static std::size_t count(const std::vector<std::size_t>& shape) {
        std::size_t n = 1;
        for (std::size_t d : shape) n *= d;
        return n;
    }

    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

namespace detail {

inline void write_bytes(std::ostream& os, const void* p, std::size_t n) {
    os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void read_bytes(std::istream& is, void* p, std::size_t n) {
    is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (!is) throw std::runtime_error("file: unexpected end of stream");
}

template <typename T>
void write_le(std::ostream& os, T v) {
    static_assert(std::is_trivially_copyable_v<T>);
    write_bytes(os, &v, sizeof(T));  // host is little-endian
}

template <typename T>
T read_le(std::istream& is) {
    T v{};
    read_bytes(is, &v, sizeof(T));
    return v;
}

}  // namespace detail

// "DNSE" tensor file: magic, version u32, ndim u32, dims u32[], f32 data row-major.
inline void save_dnse(const std::string& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("dnse: cannot open for write: " + path);
    os.write("DNSE", 4);
    detail::write_le<std::uint32_t>(os, 1u);
    detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.ndim()));
    for (std::size_t d = 0; d < t.ndim(); ++d)
        detail::write_le<std::uint32_t>(os, static_cast<std::uint32_t>(t.dim(d)));
    for (std::size_t i = 0; i < t.size(); ++i)
        detail::write_le<float>(os, static_cast<float>(t[i]));
    if (!os) throw std::runtime_error("dnse: write failed: " + path);
}

inline Tensor load_dnse(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("dnse: cannot open: " + path);
    char magic[4];
    detail::read_bytes(is, magic, 4);
    if (std::memcmp(magic, "DNSE", 4) != 0) throw std::runtime_error("dnse: bad magic in " + path);
    const auto version = detail::read_le<std::uint32_t>(is);
    if (version != 1u) throw std::runtime_error("dnse: unsupported version in " + path);
    const auto ndim = detail::read_le<std::uint32_t>(is);
    if (ndim > 8) throw std::runtime_error("dnse: implausible rank in " + path);
    std::vector<std::size_t> shape(ndim);
    for (auto& d : shape) d = detail::read_le<std::uint32_t>(is);
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i)
        t[i] = static_cast<double>(detail::read_le<float>(is));
    return t;
}

}  // namespace slat
