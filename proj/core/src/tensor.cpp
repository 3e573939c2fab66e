#include "bitsift/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "bitsift/error.hpp"

namespace bitsift {

std::size_t shape_size(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t d : shape) {
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor(Shape s, std::vector<double> d) : shape(std::move(s)), data(std::move(d)) {
    if (shape_size(shape) != data.size()) {
        throw ShapeError("tensor: shape " + shape_str(shape) + " does not match data length " +
                         std::to_string(data.size()));
    }
}

Tensor Tensor::zeros(const Shape& shape) {
    Tensor t;
    t.shape = shape;
    t.data.assign(shape_size(shape), 0.0);
    return t;
}

Tensor Tensor::full(const Shape& shape, double value) {
    Tensor t;
    t.shape = shape;
    t.data.assign(shape_size(shape), value);
    return t;
}

Tensor Tensor::scalar(double value) {
    Tensor t;
    t.data.assign(1, value);
    return t;
}

double Tensor::scalar_value() const {
    if (data.size() != 1) {
        throw ShapeError("tensor: expected scalar, got " + shape_str(shape));
    }
    return data[0];
}

bool Tensor::all_finite() const {
    return std::all_of(data.begin(), data.end(), [](double v) { return std::isfinite(v); });
}

double Tensor::max_abs() const {
    double m = 0.0;
    for (double v : data) {
        m = std::max(m, std::fabs(v));
    }
    return m;
}

IntTensor IntTensor::zeros(const Shape& shape) {
    IntTensor t;
    t.shape = shape;
    t.data.assign(shape_size(shape), 0);
    return t;
}

void add_scaled(Tensor& dst, const Tensor& src, double factor) {
    require_same_shape(dst, src, "add_scaled");
    for (std::size_t i = 0; i < dst.data.size(); ++i) {
        dst.data[i] += factor * src.data[i];
    }
}

void clamp_inplace(Tensor& t, double lo, double hi) {
    for (double& v : t.data) {
        v = std::clamp(v, lo, hi);
    }
}

Tensor scaled(const Tensor& t, double factor) {
    Tensor out = t;
    for (double& v : out.data) {
        v *= factor;
    }
    return out;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape != b.shape) {
        throw ShapeError(std::string(op) + ": expected shape " + shape_str(a.shape) + ", got " +
                         shape_str(b.shape));
    }
}

}  // namespace bitsift
