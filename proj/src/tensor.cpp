#include "n2b/tensor.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace n2b {

namespace {

void check_shape_positive(const std::vector<int>& shape) {
    for (int e : shape) {
        if (e <= 0) {
            throw std::invalid_argument("tensor extents must be positive, got shape " +
                                        shape_string(shape));
        }
    }
}

}  // namespace

std::string shape_string(const std::vector<int>& shape) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ",";
        os << shape[i];
    }
    os << "]";
    return os.str();
}

std::size_t shape_size(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int e : shape) n *= static_cast<std::size_t>(e);
    return n;
}

Tensor::Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
    check_shape_positive(shape_);
    data_.assign(shape_size(shape_), 0.0);
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape_positive(shape_);
    if (shape_size(shape_) != data_.size()) {
        throw std::invalid_argument("tensor data length " + std::to_string(data_.size()) +
                                    " does not match shape " + shape_string(shape_));
    }
}

Tensor Tensor::full(std::vector<int> shape, double value) {
    Tensor t(std::move(shape));
    t.fill(value);
    return t;
}

std::size_t Tensor::flat_index(const std::vector<int>& index) const {
    if (index.size() != shape_.size()) {
        throw std::invalid_argument("index rank " + std::to_string(index.size()) +
                                    " does not match tensor shape " + shape_string(shape_));
    }
    std::size_t flat = 0;
    for (std::size_t d = 0; d < shape_.size(); ++d) {
        if (index[d] < 0 || index[d] >= shape_[d]) {
            throw std::out_of_range("index " + std::to_string(index[d]) + " out of range for axis " +
                                    std::to_string(d) + " of shape " + shape_string(shape_));
        }
        flat = flat * static_cast<std::size_t>(shape_[d]) + static_cast<std::size_t>(index[d]);
    }
    return flat;
}

Tensor Tensor::reshaped(std::vector<int> shape) const {
    if (shape_size(shape) != data_.size()) {
        throw std::invalid_argument("cannot reshape " + shape_string(shape_) + " to " +
                                    shape_string(shape));
    }
    return Tensor(std::move(shape), data_);
}

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

Tensor& Tensor::operator+=(const Tensor& rhs) {
    require_same_shape(*this, rhs, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += rhs.data_[i];
    return *this;
}

Tensor& Tensor::operator-=(const Tensor& rhs) {
    require_same_shape(*this, rhs, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= rhs.data_[i];
    return *this;
}

Tensor& Tensor::operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() != b.shape()) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_string(a.shape()) +
                                    " vs " + shape_string(b.shape()));
    }
}

Tensor add(const Tensor& a, const Tensor& b) {
    Tensor out = a;
    out += b;
    return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
    Tensor out = a;
    out -= b;
    return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "mul");
    Tensor out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b[i];
    return out;
}

Tensor scaled(const Tensor& a, double s) {
    Tensor out = a;
    out *= s;
    return out;
}

double dot(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "dot");
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

double sum(const Tensor& a) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i];
    return acc;
}

double mean(const Tensor& a) { return a.size() ? sum(a) / static_cast<double>(a.size()) : 0.0; }

double sum_sq(const Tensor& a) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * a[i];
    return acc;
}

double norm2(const Tensor& a) { return std::sqrt(sum_sq(a)); }

double max_abs(const Tensor& a) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i]));
    return m;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    require_same_shape(a, b, "max_abs_diff");
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
    return m;
}

namespace {

void put_u32_le(std::ostream& os, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xFF),
                          static_cast<unsigned char>((v >> 8) & 0xFF),
                          static_cast<unsigned char>((v >> 16) & 0xFF),
                          static_cast<unsigned char>((v >> 24) & 0xFF)};
    os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32_le(std::istream& is) {
    unsigned char b[4];
    is.read(reinterpret_cast<char*>(b), 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

void put_f64_le(std::ostream& os, double v) {
    std::uint64_t u;
    std::memcpy(&u, &v, 8);
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((u >> (8 * i)) & 0xFF);
    os.write(reinterpret_cast<const char*>(b), 8);
}

double get_f64_le(std::istream& is) {
    unsigned char b[8];
    is.read(reinterpret_cast<char*>(b), 8);
    std::uint64_t u = 0;
    for (int i = 0; i < 8; ++i) u |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    double v;
    std::memcpy(&v, &u, 8);
    return v;
}

}  // namespace

void write_tensor(const std::filesystem::path& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
    os.write("N2BT", 4);
    put_u32_le(os, static_cast<std::uint32_t>(t.rank()));
    for (int d = 0; d < t.rank(); ++d) put_u32_le(os, static_cast<std::uint32_t>(t.extent(d)));
    for (std::size_t i = 0; i < t.size(); ++i) put_f64_le(os, t[i]);
    if (!os) throw std::runtime_error("write failed on " + path.string());
}

Tensor read_tensor(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path.string() + " for reading");
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "N2BT", 4) != 0) {
        throw std::runtime_error(path.string() + " is not an N2BT tensor file");
    }
    const std::uint32_t rank = get_u32_le(is);
    if (rank > 8) throw std::runtime_error("implausible tensor rank in " + path.string());
    std::vector<int> shape(rank);
    for (std::uint32_t d = 0; d < rank; ++d) shape[d] = static_cast<int>(get_u32_le(is));
    const std::size_t n = shape_size(shape);
    std::vector<double> data(n);
    for (std::size_t i = 0; i < n; ++i) data[i] = get_f64_le(is);
    if (!is) throw std::runtime_error("truncated tensor file " + path.string());
    return Tensor(std::move(shape), std::move(data));
}

}  // namespace n2b
