#ifndef LEMOL_TENSOR_HPP
#define LEMOL_TENSOR_HPP

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace lemol {

using Shape = std::vector<std::size_t>;
using Vec = std::vector<double>;

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << 'x';
        os << s[i];
    }
    os << ']';
    return os.str();
}

inline std::size_t shape_size(const Shape& s) {
    return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>{});
}

class ShapeError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Dense row-major array of doubles.
///
/// Rank 0 is a scalar, rank 1 is treated as a single row by the matrix
/// accessors, rank 2 is rows x cols. Construction from caller-supplied data
/// rejects non-finite entries; tensors produced by arithmetic skip that scan.
class Tensor {
  public:
    Tensor() : shape_{0, 0} {}

    explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}

    Tensor(Shape shape, Vec data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (shape_size(shape_) != data_.size()) {
            throw ShapeError("tensor shape " + shape_str(shape_) + " does not match " +
                             std::to_string(data_.size()) + " values");
        }
        for (double x : data_) {
            if (!std::isfinite(x)) throw std::invalid_argument("tensor data contains a non-finite value");
        }
    }

    static Tensor scalar(double x) { return Tensor(Shape{}, Vec{x}); }
    static Tensor row(Vec v) {
        const std::size_t n = v.size();
        return Tensor(Shape{1, n}, std::move(v));
    }
    static Tensor matrix(std::size_t r, std::size_t c, Vec v) { return Tensor(Shape{r, c}, std::move(v)); }
    static Tensor zeros(Shape s) { return Tensor(std::move(s), 0.0); }
    static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_, 0.0); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }

    std::size_t rows() const {
        if (shape_.size() == 2) return shape_[0];
        return 1;
    }
    std::size_t cols() const {
        if (shape_.size() == 2) return shape_[1];
        if (shape_.size() == 1) return shape_[0];
        return 1;
    }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }
    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

    Vec& data() { return data_; }
    const Vec& data() const { return data_; }
    double* ptr() { return data_.data(); }
    const double* ptr() const { return data_.data(); }

    Vec row_vec(std::size_t r) const {
        const std::size_t c = cols();
        return Vec(data_.begin() + static_cast<std::ptrdiff_t>(r * c),
                   data_.begin() + static_cast<std::ptrdiff_t>((r + 1) * c));
    }

    double item() const {
        if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
        return data_[0];
    }

    bool all_finite() const {
        for (double x : data_)
            if (!std::isfinite(x)) return false;
        return true;
    }

    friend bool operator==(const Tensor& a, const Tensor& b) { return a.shape_ == b.shape_ && a.data_ == b.data_; }

  private:
    Shape shape_;
    Vec data_;
};

/// Stacks equal-length vectors into a rows x cols matrix.
inline Tensor stack_rows(const std::vector<Vec>& rows) {
    if (rows.empty()) return Tensor(Shape{0, 0});
    const std::size_t c = rows.front().size();
    Tensor out(Shape{rows.size(), c});
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (rows[r].size() != c) throw ShapeError("stack_rows: ragged input");
        std::copy(rows[r].begin(), rows[r].end(), out.ptr() + r * c);
    }
    return out;
}

inline Vec one_hot(std::size_t index, std::size_t n) {
    if (index >= n) throw std::out_of_range("one_hot index out of range");
    Vec v(n, 0.0);
    v[index] = 1.0;
    return v;
}

inline std::size_t argmax(const double* p, std::size_t n) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < n; ++i)
        if (p[i] > p[best]) best = i;
    return best;
}

inline std::size_t argmax(const Vec& v) { return argmax(v.data(), v.size()); }

}  // namespace lemol

#endif
