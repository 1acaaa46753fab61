#include "attreid/tensor.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace attreid {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) n *= d;
    return n;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_product(shape_))
        throw ShapeMismatch("tensor data length does not match shape");
}

Tensor Tensor::zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }

Tensor Tensor::full(std::vector<std::size_t> shape, double value) {
    Tensor t(std::move(shape));
    std::fill(t.data_.begin(), t.data_.end(), value);
    return t;
}

Tensor Tensor::scalar(double value) { return Tensor({1}, {value}); }

std::size_t Tensor::dim(std::size_t i) const {
    if (i >= shape_.size()) throw ShapeMismatch("dimension index out of range");
    return shape_[i];
}

double& Tensor::at(std::size_t i, std::size_t j) {
    return data_[i * shape_[1] + j];
}
double Tensor::at(std::size_t i, std::size_t j) const {
    return data_[i * shape_[1] + j];
}
double& Tensor::at(std::size_t c, std::size_t y, std::size_t x) {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
}
double Tensor::at(std::size_t c, std::size_t y, std::size_t x) const {
    return data_[(c * shape_[1] + y) * shape_[2] + x];
}
double& Tensor::at(std::size_t o, std::size_t i, std::size_t y, std::size_t x) {
    return data_[((o * shape_[1] + i) * shape_[2] + y) * shape_[3] + x];
}
double Tensor::at(std::size_t o, std::size_t i, std::size_t y, std::size_t x) const {
    return data_[((o * shape_[1] + i) * shape_[2] + y) * shape_[3] + x];
}

bool Tensor::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

void Tensor::require_finite(const char* what) const {
    if (!all_finite()) throw NonFinite(std::string("non-finite values in ") + what);
}

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                          static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff),
                          static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f64(std::ostream& out, double v) {
    std::uint64_t bits;
    std::memcpy(&bits, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xff);
    out.write(reinterpret_cast<const char*>(b), 8);
}

double get_f64(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

constexpr char kMagic[4] = {'A', 'T', 'R', 'T'};
constexpr unsigned char kVersion = 1;

}  // namespace

void Tensor::save(std::ostream& out) const {
    out.write(kMagic, 4);
    out.put(static_cast<char>(kVersion));
    out.put(static_cast<char>(shape_.size()));
    for (std::size_t d : shape_) put_u32(out, static_cast<std::uint32_t>(d));
    for (double v : data_) put_f64(out, v);
}

void Tensor::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + path);
    save(out);
    if (!out) throw IoError("write failed: " + path);
}

Tensor Tensor::load(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0)
        throw ParseError("bad tensor magic (expected ATRT)");
    int version = in.get();
    if (version != kVersion) throw ParseError("unsupported tensor version");
    int rank = in.get();
    if (rank < 0) throw ParseError("truncated tensor header");
    std::vector<std::size_t> shape(static_cast<std::size_t>(rank));
    for (auto& d : shape) d = get_u32(in);
    Tensor t(shape);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = get_f64(in);
    if (!in) throw ParseError("truncated tensor payload");
    return t;
}

Tensor Tensor::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open for reading: " + path);
    return load(in);
}

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
    std::uint64_t state = master + 0x632be59bd9b4e019ULL * (stream + 1);
    return splitmix64(state);
}

}  // namespace attreid
