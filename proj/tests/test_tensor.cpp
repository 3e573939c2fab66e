#include <doctest.h>

#include "bitsift/error.hpp"
#include "bitsift/tensor.hpp"

using namespace bitsift;

TEST_CASE("shape size and construction") {
    CHECK(shape_size({}) == 1);
    CHECK(shape_size({2, 3, 4}) == 24);
    CHECK(Tensor::zeros({2, 2}).size() == 4);
    CHECK(Tensor::scalar(3.5).is_scalar());
    CHECK(Tensor::scalar(3.5).scalar_value() == 3.5);
    CHECK_THROWS_AS(Tensor({2, 2}, {1.0, 2.0}), ShapeError);
}

TEST_CASE("full and clamp") {
    Tensor t = Tensor::full({3}, 5.0);
    CHECK(t.data == std::vector<double>{5.0, 5.0, 5.0});
    t.data = {-1.0, 0.5, 3.0};
    clamp_inplace(t, 0.0, 2.0);
    CHECK(t.data == std::vector<double>{0.0, 0.5, 2.0});
}

TEST_CASE("add_scaled requires matching shapes") {
    Tensor a = Tensor::zeros({2});
    Tensor b = Tensor::zeros({3});
    CHECK_THROWS_AS(add_scaled(a, b, 1.0), ShapeError);
    Tensor c = Tensor({2}, {1.0, 2.0});
    add_scaled(a, c, 2.0);
    CHECK(a.data == std::vector<double>{2.0, 4.0});
}

TEST_CASE("max_abs and finiteness") {
    Tensor t({3}, {-4.0, 2.0, 1.0});
    CHECK(t.max_abs() == 4.0);
    CHECK(t.all_finite());
    t.data[1] = std::numeric_limits<double>::quiet_NaN();
    CHECK_FALSE(t.all_finite());
}
