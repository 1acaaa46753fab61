#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "attreid/errors.hpp"

namespace attreid {

// Dense row-major tensor of doubles. Shapes are immutable after
// construction; the public API treats tensors as values.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> shape);
    Tensor(std::vector<std::size_t> shape, std::vector<double> data);

    static Tensor zeros(std::vector<std::size_t> shape);
    static Tensor full(std::vector<std::size_t> shape, double value);
    static Tensor scalar(double value);

    const std::vector<std::size_t>& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t dim(std::size_t i) const;

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    // Indexed access for rank 2/3/4 tensors.
    double& at(std::size_t i, std::size_t j);
    double at(std::size_t i, std::size_t j) const;
    double& at(std::size_t c, std::size_t y, std::size_t x);
    double at(std::size_t c, std::size_t y, std::size_t x) const;
    double& at(std::size_t o, std::size_t i, std::size_t y, std::size_t x);
    double at(std::size_t o, std::size_t i, std::size_t y, std::size_t x) const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    bool all_finite() const;
    void require_finite(const char* what) const;

    bool operator==(const Tensor& other) const {
        return shape_ == other.shape_ && data_ == other.data_;
    }

    // Binary format: magic "ATRT", version u8, rank u8, little-endian u32
    // per dim, then row-major little-endian f64 payload.
    void save(const std::string& path) const;
    void save(std::ostream& out) const;
    static Tensor load(const std::string& path);
    static Tensor load(std::istream& in);

private:
    std::vector<std::size_t> shape_;
    std::vector<double> data_;
};

// splitmix64, used to derive independent per-item seeds from a master seed.
std::uint64_t splitmix64(std::uint64_t& state);
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

}  // namespace attreid
