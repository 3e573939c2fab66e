#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

namespace bitsift {

using Shape = std::vector<std::size_t>;

std::size_t shape_size(const Shape& shape);
std::string shape_str(const Shape& shape);

// Dense row-major tensor of 64-bit reals. Rank-0 tensors are scalars
// (one element, empty shape).
struct Tensor {
    Shape shape;
    std::vector<double> data;

    Tensor() = default;
    Tensor(Shape s, std::vector<double> d);

    static Tensor zeros(const Shape& shape);
    static Tensor full(const Shape& shape, double value);
    static Tensor scalar(double value);

    std::size_t size() const { return data.size(); }
    bool is_scalar() const { return data.size() == 1 && shape.empty(); }
    double scalar_value() const;

    double& operator[](std::size_t i) { return data[i]; }
    double operator[](std::size_t i) const { return data[i]; }

    bool same_shape(const Tensor& other) const { return shape == other.shape; }
    bool all_finite() const;

    double max_abs() const;
};

// Integer codes produced by the quantizers; signed so that re-quantization can
// carry both weight signs in one tensor.
struct IntTensor {
    Shape shape;
    std::vector<long long> data;

    static IntTensor zeros(const Shape& shape);
    std::size_t size() const { return data.size(); }
};

// In-place elementwise helpers used by the optimizer and quantizers.
void add_scaled(Tensor& dst, const Tensor& src, double factor);  // dst += factor*src
void clamp_inplace(Tensor& t, double lo, double hi);
Tensor scaled(const Tensor& t, double factor);

void require_same_shape(const Tensor& a, const Tensor& b, const char* op);

}  // namespace bitsift
