#include <doctest.h>

#include <cmath>

#include "bitsift/error.hpp"
#include "bitsift/precision_adjust.hpp"
#include "bitsift/rng.hpp"
#include "bitsift/ste.hpp"

using namespace bitsift;

namespace {

BitTensor make_bt(int bits, double scale, const Shape& shape) {
    BitTensor bt;
    bt.shape = shape;
    bt.bits = bits;
    bt.scale = scale;
    for (int b = 0; b < bits; ++b) {
        bt.pos_planes.push_back(Tensor::zeros(shape));
        bt.neg_planes.push_back(Tensor::zeros(shape));
    }
    return bt;
}

BitTensor random_bt(Rng& rng, int max_bits = 8, std::size_t max_elems = 64) {
    BitTensor bt = make_bt(1 + static_cast<int>(rng.uniform_int(max_bits)),
                           rng.uniform(0.05, 4.0), {1 + rng.uniform_int(max_elems)});
    for (int b = 0; b < bt.bits; ++b) {
        for (std::size_t i = 0; i < bt.size(); ++i) {
            bt.pos_planes[b].data[i] = rng.uniform(0.0, 2.0);
            bt.neg_planes[b].data[i] = rng.uniform(0.0, 2.0);
        }
    }
    return bt;
}

}  // namespace

TEST_CASE("requantize rounds the signed recomposition") {
    BitTensor bt = make_bt(2, 1.0, {1});
    bt.pos_planes[0].data[0] = 1.4;
    bt.pos_planes[1].data[0] = 0.6;
    CHECK(requantize(bt).data[0] == 3);  // Round(1.4 + 1.2)

    BitTensor neg = make_bt(3, 1.0, {1});
    neg.neg_planes[0].data[0] = 1.0;
    neg.neg_planes[2].data[0] = 1.0;
    CHECK(requantize(neg).data[0] == -5);

    // carry into bit n: a 1-bit layer saturated at 2.0 produces code 2
    BitTensor carry = make_bt(1, 1.0, {1});
    carry.pos_planes[0].data[0] = 2.0;
    CHECK(requantize(carry).data[0] == 2);

    CHECK(requantize(BitTensor{}).data.empty());
}

TEST_CASE("strip_zero_planes drops empty extremal planes and compensates s") {
    {
        // codes {0, +-2} at n=2: MSB of width 3 empty, LSB empty -> n'=1, s'=2s/3
        const IntTensor codes{{3}, {0, 2, -2}};
        const StripResult r = strip_zero_planes(codes, 1.5, 2);
        CHECK(r.bits == 1);
        CHECK(r.msb_removed == 1);
        CHECK(r.lsb_removed == 1);
        CHECK(r.codes.data == std::vector<long long>{0, 1, -1});
        CHECK(r.scale == doctest::Approx(2.0 * 1.5 / 3.0).epsilon(1e-15));
        // representation equivalence, elementwise
        const double step_before = 1.5 / 3.0;
        const double step_after = r.scale / 1.0;
        for (std::size_t i = 0; i < codes.data.size(); ++i) {
            REQUIRE(step_before * static_cast<double>(codes.data[i]) ==
                    step_after * static_cast<double>(r.codes.data[i]));
        }
    }
    {
        // all-zero codes: the layer is skippable
        const StripResult r = strip_zero_planes(IntTensor{{2}, {0, 0}}, 0.7, 3);
        CHECK(r.bits == 0);
        CHECK(r.scale == 0.7);
        CHECK(r.msb_removed == 4);
        CHECK(r.lsb_removed == 0);
    }
    {
        // all three low planes used, widened MSB empty: no-op apart from the drop
        const IntTensor codes{{3}, {1, -7, 5}};
        const StripResult r = strip_zero_planes(codes, 0.9, 3);
        CHECK(r.bits == 3);
        CHECK(r.msb_removed == 1);
        CHECK(r.lsb_removed == 0);
        CHECK(r.scale == doctest::Approx(0.9).epsilon(1e-15));
        CHECK(r.codes.data == codes.data);
    }
    CHECK_THROWS_AS(strip_zero_planes(IntTensor{{1}, {8}}, 1.0, 2), ValueError);
}

TEST_CASE("resplit rebuilds binary sign-disjoint planes") {
    {
        const BitTensor bt = resplit(IntTensor{{1}, {-3}}, 2, 1.0);
        CHECK(bt.neg_planes[0].data[0] == 1.0);
        CHECK(bt.neg_planes[1].data[0] == 1.0);
        CHECK(bt.pos_planes[0].data[0] == 0.0);
        bt.validate(/*require_binary=*/true);
    }
    {
        const BitTensor bt = resplit(IntTensor{{2}, {0, 0}}, 3, 1.0);
        CHECK(bit_ste_forward(bt).data == std::vector<double>{0.0, 0.0});
    }
    CHECK_THROWS_AS(resplit(IntTensor{{1}, {4}}, 2, 1.0), ValueError);

    // resplit of requantized binary codes round-trips exactly
    Rng rng(3);
    for (int rep = 0; rep < 100; ++rep) {
        BitTensor bt = random_bt(rng, 6, 16);
        const IntTensor codes = requantize(bt);
        const StripResult r = strip_zero_planes(codes, bt.scale, bt.bits);
        const BitTensor rebuilt = resplit(r.codes, r.bits, r.scale);
        REQUIRE(requantize(rebuilt).data == r.codes.data);
    }
}

TEST_CASE("adjust_layer preserves the represented weights exactly") {
    Rng rng(7);
    for (int rep = 0; rep < 2000; ++rep) {
        const BitTensor bt = random_bt(rng);
        const IntTensor codes = requantize(bt);
        const double step_before = bt.weight_step();

        auto [adjusted, report] = adjust_layer(bt, "layer");
        adjusted.validate(/*require_binary=*/true);

        // n' within [0, n+1]
        REQUIRE(report.n_after >= 0);
        REQUIRE(report.n_after <= report.n_before + 1);
        REQUIRE(report.msb_removed + report.lsb_removed ==
                report.n_before + 1 - report.n_after);

        // representation equivalence: bitwise under the canonical step order
        const Tensor after = represented_weights(adjusted);
        for (std::size_t i = 0; i < codes.data.size(); ++i) {
            const double before = step_before * static_cast<double>(codes.data[i]);
            REQUIRE(after.data[i] == before);
        }

        // idempotence
        auto [again, report2] = adjust_layer(adjusted, "layer");
        REQUIRE(again.bits == adjusted.bits);
        REQUIRE(again.scale == adjusted.scale);
        REQUIRE(requantize(again).data == requantize(adjusted).data);
    }
}

TEST_CASE("constructed carry and skip cases") {
    {
        // every element saturated high: codes use bit n -> precision grows to n+1
        BitTensor bt = make_bt(2, 1.0, {3});
        for (int b = 0; b < 2; ++b) {
            for (auto& v : bt.pos_planes[b].data) v = 2.0;
        }
        // numerator = 2+4 = 6 = 110b, occupying bit 2 of the widened width
        auto [adjusted, report] = adjust_layer(bt, "carry");
        CHECK(report.carried);
        CHECK(report.n_after == 2);  // 6 >> 1 = 3 after the LSB drop
        CHECK(report.lsb_removed == 1);
        CHECK(represented_weights(adjusted).data[0] == doctest::Approx(2.0).epsilon(1e-12));
    }
    {
        // a genuine n+1 outcome: odd saturated numerator keeps all widened bits
        BitTensor bt = make_bt(2, 1.0, {1});
        bt.pos_planes[0].data[0] = 1.9;  // numerator Round(1.9+3.8) = 6? use planes -> 5
        bt.pos_planes[1].data[0] = 1.9;
        const IntTensor codes = requantize(bt);
        CHECK(codes.data[0] == 6);
        bt.pos_planes[0].data[0] = 0.9;  // Round(0.9 + 3.8) = 5: odd, bit2 set
        const IntTensor odd = requantize(bt);
        CHECK(odd.data[0] == 5);
        auto [adjusted, report] = adjust_layer(bt, "carry-odd");
        CHECK(report.n_after == report.n_before + 1);
        CHECK(report.carried);
    }
    {
        // all-zero planes: skipped layer
        auto [adjusted, report] = adjust_layer(make_bt(4, 2.0, {5}), "skip");
        CHECK(report.n_after == 0);
        CHECK(adjusted.bits == 0);
        CHECK(adjusted.scale == 2.0);
        CHECK(represented_weights(adjusted).data == std::vector<double>(5, 0.0));
    }
}

TEST_CASE("scale_for_step finds an exact preimage of the division") {
    Rng rng(11);
    for (int rep = 0; rep < 5000; ++rep) {
        const double step = rng.uniform(1e-8, 10.0);
        const long long denom = static_cast<long long>((1ULL << (1 + rng.uniform_int(16))) - 1ULL);
        const double s = scale_for_step(step, denom);
        REQUIRE(s / static_cast<double>(denom) == step);
    }
    CHECK(scale_for_step(0.0, 7) == 0.0);
}

TEST_CASE("compensated scale stays within rounding of the printed formula") {
    Rng rng(13);
    for (int rep = 0; rep < 500; ++rep) {
        const BitTensor bt = random_bt(rng);
        auto [adjusted, report] = adjust_layer(bt);
        if (report.n_after == 0) {
            continue;
        }
        const double formula = bt.scale * std::ldexp(1.0, report.lsb_removed) *
                               (std::ldexp(1.0, report.n_after) - 1.0) /
                               (std::ldexp(1.0, report.n_before) - 1.0);
        REQUIRE(std::fabs(adjusted.scale - formula) <= 1e-12 * std::fabs(formula));
    }
}
