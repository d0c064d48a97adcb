#include <doctest.h>

#include <cmath>
#include <limits>

#include "idcompose/array.hpp"
#include "idcompose/errors.hpp"
#include "idcompose/rng.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using idc::RealArray;

TEST_CASE("construction validates shape product and finiteness") {
    CHECK_THROWS_AS(RealArray({2, 3}, {1.0, 2.0}), idc::shape_error);
    CHECK_THROWS_AS(RealArray({2, 0}, {}), idc::shape_error);
    CHECK_THROWS_AS(RealArray({1}, {std::numeric_limits<double>::quiet_NaN()}),
                    idc::validation_error);
    CHECK_THROWS_AS(RealArray({1}, {std::numeric_limits<double>::infinity()}),
                    idc::validation_error);

    RealArray a({2, 2}, {1, 2, 3, 4});
    CHECK(a.rank() == 2);
    CHECK(a.size() == 4);
    CHECK(a.at(1, 0) == 3.0);
}

TEST_CASE("zeros and full factories") {
    RealArray z = RealArray::zeros({3, 2});
    CHECK(idc::max_abs(z) == 0.0);
    RealArray f = RealArray::full({2, 2}, 0.5);
    for (std::size_t i = 0; i < f.size(); ++i)
        CHECK(f[i] == 0.5);
}

TEST_CASE("matmul matches the triple-loop oracle") {
    idc::SeededRng rng(11);
    RealArray a = rng.gaussian_array({3, 4});
    RealArray b = rng.gaussian_array({4, 5});
    CHECK(idc::max_abs_diff(a.matmul(b), oracle::matmul(a, b)) <= 1e-12);

    CHECK(throws_with<idc::shape_error>([&] { (void)a.matmul(a); }, "3x4"));
}

TEST_CASE("transpose, blocks and concatenation") {
    RealArray a({2, 3}, {1, 2, 3, 4, 5, 6});
    RealArray t = a.transposed();
    CHECK(t.rows() == 3);
    CHECK(t.at(0, 1) == 4.0);

    RealArray rb = a.row_block(1, 1);
    CHECK(rb.rows() == 1);
    CHECK(rb.at(0, 2) == 6.0);

    RealArray cb = a.col_block(1, 2);
    CHECK(cb.cols() == 2);
    CHECK(cb.at(1, 0) == 5.0);

    const RealArray vparts[] = {a, a};
    RealArray v = RealArray::vconcat(vparts);
    CHECK(v.rows() == 4);
    CHECK(v.at(3, 2) == 6.0);

    const RealArray hparts[] = {a, a};
    RealArray h = RealArray::hconcat(hparts);
    CHECK(h.cols() == 6);
    CHECK(h.at(1, 4) == 5.0);
}

TEST_CASE("reshape preserves data and rejects bad products") {
    RealArray a({2, 3}, {1, 2, 3, 4, 5, 6});
    RealArray r = a.reshape({3, 2});
    CHECK(r.at(2, 1) == 6.0);
    CHECK_THROWS_AS(a.reshape({4, 2}), idc::shape_error);
}

TEST_CASE("arithmetic and comparisons") {
    RealArray a({2}, {1.0, -2.0});
    RealArray b({2}, {0.5, 0.5});
    CHECK(idc::max_abs_diff(a + b, RealArray({2}, {1.5, -1.5})) == 0.0);
    CHECK(idc::max_abs_diff(a - b, RealArray({2}, {0.5, -2.5})) == 0.0);
    CHECK(idc::max_abs_diff(2.0 * a, RealArray({2}, {2.0, -4.0})) == 0.0);
    CHECK(a.bitwise_equal(RealArray({2}, {1.0, -2.0})));
    CHECK(!a.bitwise_equal(b));
    // bitwise comparison distinguishes signed zeros
    CHECK(!RealArray({1}, {0.0}).bitwise_equal(RealArray({1}, {-0.0})));
    CHECK(idc::max_abs(a) == 2.0);
}

TEST_CASE("rng streams are deterministic and Box-Muller pairs reproduce") {
    idc::SeededRng r1(42), r2(42);
    for (int i = 0; i < 100; ++i)
        CHECK(r1.gaussian() == r2.gaussian());
    RealArray g = idc::SeededRng(7).gaussian_array({4, 4});
    RealArray g2 = idc::SeededRng(7).gaussian_array({4, 4});
    CHECK(g.bitwise_equal(g2));

    idc::SeededRng r3(9);
    for (int i = 0; i < 1000; ++i) {
        const double u = r3.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
        CHECK(r3.uniform_index(7) < 7);
    }
}
