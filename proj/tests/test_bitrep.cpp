#include <doctest.h>

#include <cmath>

#include "bitsift/bitrep.hpp"
#include "bitsift/error.hpp"
#include "bitsift/rng.hpp"

using namespace bitsift;

namespace {

// Independent scalar rounding oracle under the ties-away-from-zero rule.
long long oracle_round(double v) {
    const double a = std::fabs(v);
    const double fl = std::floor(a);
    const double rem = a - fl;
    long long mag = static_cast<long long>(fl);
    if (rem > 0.5 || rem == 0.5) {
        ++mag;
    }
    return v < 0.0 ? -mag : mag;
}

}  // namespace

TEST_CASE("extract_scale") {
    {
        auto [s, ws] = extract_scale(Tensor({3}, {0.5, -1.0, 0.25}));
        CHECK(s == 1.0);
        CHECK(ws.data == std::vector<double>{0.5, -1.0, 0.25});
    }
    {
        auto [s, ws] = extract_scale(Tensor({2}, {2.0, -4.0}));
        CHECK(s == 4.0);
        CHECK(ws.data == std::vector<double>{0.5, -1.0});
    }
    {
        auto [s, ws] = extract_scale(Tensor({2}, {0.0, 0.0}));
        CHECK(s == 1.0);
        CHECK(ws.data == std::vector<double>{0.0, 0.0});
    }
    Tensor bad({1}, {std::numeric_limits<double>::infinity()});
    CHECK_THROWS_AS(extract_scale(bad), ValueError);
}

TEST_CASE("sign_split") {
    {
        const SignSplit s = sign_split(Tensor({2}, {0.5, -0.25}));
        CHECK(s.pos.data == std::vector<double>{0.5, 0.0});
        CHECK(s.neg.data == std::vector<double>{0.0, 0.25});
    }
    {
        const SignSplit s = sign_split(Tensor({1}, {0.0}));
        CHECK(s.pos.data[0] == 0.0);
        CHECK(s.neg.data[0] == 0.0);
    }
    {
        const SignSplit s = sign_split(Tensor({2}, {-1.0, 1.0}));
        CHECK(s.pos.data == std::vector<double>{0.0, 1.0});
        CHECK(s.neg.data == std::vector<double>{1.0, 0.0});
    }
    CHECK_THROWS_AS(sign_split(Tensor({1}, {1.5})), ValueError);
}

TEST_CASE("quantize_uniform codes and the tie rule") {
    CHECK(quantize_uniform(Tensor({1}, {1.0}), 3).data[0] == 7);
    CHECK(quantize_uniform(Tensor({1}, {0.5}), 3).data[0] == 4);  // Round(3.5) ties away
    CHECK(quantize_uniform(Tensor({1}, {0.0}), 8).data[0] == 0);
    CHECK_THROWS_AS(quantize_uniform(Tensor({1}, {1.1}), 3), ValueError);
    CHECK_THROWS_AS(quantize_uniform(Tensor({1}, {-0.1}), 3), ValueError);
    CHECK_THROWS_AS(quantize_uniform(Tensor({1}, {0.5}), 0), ValueError);

    Rng rng(5);
    for (int i = 0; i < 2000; ++i) {
        const double x = rng.uniform();
        const int n = 1 + static_cast<int>(rng.uniform_int(10));
        const double v = x * static_cast<double>((1 << n) - 1);
        CHECK(quantize_uniform(Tensor({1}, {x}), n).data[0] == oracle_round(v));
    }
}

TEST_CASE("decompose_bits and exhaustive recomposition") {
    {
        const auto planes = decompose_bits(IntTensor{{1}, {5}}, 3);
        CHECK(planes[0].data[0] == 1.0);
        CHECK(planes[1].data[0] == 0.0);
        CHECK(planes[2].data[0] == 1.0);
    }
    {
        const auto planes = decompose_bits(IntTensor{{1}, {0}}, 4);
        for (const Tensor& p : planes) {
            CHECK(p.data[0] == 0.0);
        }
    }
    CHECK_THROWS_AS(decompose_bits(IntTensor{{1}, {8}}, 3), ValueError);
    CHECK_THROWS_AS(decompose_bits(IntTensor{{1}, {-1}}, 3), ValueError);

    // decompose then recompose is the identity on every code, n <= 10
    for (int n = 1; n <= 10; ++n) {
        const long long max_code = (1LL << n) - 1;
        IntTensor codes;
        codes.shape = {static_cast<std::size_t>(max_code + 1)};
        for (long long c = 0; c <= max_code; ++c) {
            codes.data.push_back(c);
        }
        const auto planes = decompose_bits(codes, n);
        for (std::size_t i = 0; i < codes.data.size(); ++i) {
            long long recomposed = 0;
            for (int b = 0; b < n; ++b) {
                recomposed += static_cast<long long>(planes[b].data[i]) << b;
            }
            REQUIRE(recomposed == codes.data[i]);
        }
    }
}

TEST_CASE("to_bit_representation pipeline") {
    {
        const BitTensor bt = to_bit_representation(Tensor({2}, {1.0, -1.0}), 1);
        CHECK(bt.scale == 1.0);
        CHECK(bt.pos_planes[0].data == std::vector<double>{1.0, 0.0});
        CHECK(bt.neg_planes[0].data == std::vector<double>{0.0, 1.0});
        bt.validate(/*require_binary=*/true);
    }
    {
        const BitTensor bt = to_bit_representation(Tensor({1}, {0.5}), 3);
        CHECK(bt.scale == 0.5);
        CHECK(bt.pos_planes[0].data[0] == 1.0);
        CHECK(bt.pos_planes[1].data[0] == 1.0);
        CHECK(bt.pos_planes[2].data[0] == 1.0);
    }
}

TEST_CASE("reconstruction error stays within half a quantization step") {
    Rng rng(17);
    Tensor w = Tensor::zeros({1000});
    for (double& v : w.data) {
        v = rng.normal();
    }
    const BitTensor bt = to_bit_representation(w, 8);
    const Tensor recon = represented_weights(bt);
    const double bound = bt.scale / (2.0 * 255.0) + 1e-12;
    for (std::size_t i = 0; i < w.size(); ++i) {
        CHECK(std::fabs(recon.data[i] - w.data[i]) <= bound);
    }
}

TEST_CASE("represented_weights") {
    {
        const BitTensor bt = to_bit_representation(Tensor({1}, {0.75}), 2);
        CHECK(represented_weights(bt).data[0] == 0.75);  // scales to full code exactly
    }
    {
        BitTensor empty;
        empty.shape = {3};
        CHECK(represented_weights(empty).data == std::vector<double>(3, 0.0));
    }
}

TEST_CASE("round trip equals the scalar quantization oracle exactly") {
    Rng rng(23);
    for (int rep = 0; rep < 500; ++rep) {
        const int n = 1 + static_cast<int>(rng.uniform_int(8));
        Tensor w = Tensor::zeros({1 + rng.uniform_int(16)});
        for (double& v : w.data) {
            v = rng.normal() * rng.uniform(0.1, 3.0);
        }
        const BitTensor bt = to_bit_representation(w, n);
        const Tensor recon = represented_weights(bt);
        double s = w.max_abs();
        if (s == 0.0) s = 1.0;
        const double step = s / static_cast<double>((1 << n) - 1);
        double max_mag = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) {
            const long long code = oracle_round(std::fabs(w.data[i]) / s *
                                                static_cast<double>((1 << n) - 1));
            const double expected = (w.data[i] < 0.0 ? -1.0 : 1.0) *
                                    (step * static_cast<double>(code));
            REQUIRE(recon.data[i] == expected);  // bitwise: same canonical evaluation order
            max_mag = std::max(max_mag, std::fabs(recon.data[i]));
        }
        // dynamic range is preserved
        CHECK(max_mag <= s * (1.0 + 1e-15));

        // conversion-time planes are binary and sign-disjoint
        bt.validate(/*require_binary=*/true);
    }
}
