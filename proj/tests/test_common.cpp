#include "gsopt/common.hpp"
#include "gsopt/image.hpp"

#include "doctest.h"

#include <set>

using namespace gsopt;

TEST_SUITE("common") {

TEST_CASE("derive_seed separates tags and indices but repeats exactly") {
    CHECK(derive_seed(7, "alpha", 0) == derive_seed(7, "alpha", 0));
    std::set<std::uint64_t> seen;
    for (std::uint64_t base : {0ull, 7ull, 123456789ull}) {
        for (const char* tag : {"alpha", "beta", "alph"}) {
            for (std::uint64_t idx : {0ull, 1ull, 2ull}) {
                seen.insert(derive_seed(base, tag, idx));
            }
        }
    }
    CHECK(seen.size() == 27);  // no collisions across this grid
}

TEST_CASE("logit inverts logistic") {
    for (double p : {1e-6, 0.25, 0.5, 0.9, 1.0 - 1e-9}) {
        CHECK(logistic(logit(p)) == doctest::Approx(p).epsilon(1e-12));
    }
    CHECK_THROWS_AS((void)logit(0.0), ContractError);
    CHECK_THROWS_AS((void)logit(1.0), ContractError);
}

TEST_CASE("require throws ContractError with the message") {
    CHECK_NOTHROW(require(true, "fine"));
    CHECK_THROWS_WITH_AS(require(false, "broken"), "broken", ContractError);
}

TEST_CASE("flat_span views Eigen vectors without copying") {
    std::vector<Vec3> v = {Vec3(1, 2, 3), Vec3(4, 5, 6)};
    auto s = flat_span(v);
    REQUIRE(s.size() == 6);
    CHECK(s[0] == 1.0);
    CHECK(s[4] == 5.0);
    s[4] = 50.0;
    CHECK(v[1][1] == 50.0);
}

TEST_CASE("image axpby, mse, psnr closed forms") {
    Image a(2, 2, 1, 1.0);
    Image b(2, 2, 1, 3.0);
    axpby(2.0, a, 0.5, b);  // b = 2*1 + 0.5*3 = 3.5
    for (double v : b.span()) CHECK(v == 3.5);
    Image x(1, 2, 1);
    Image y(1, 2, 1);
    x.at(0, 0, 0) = 1.0;
    x.at(0, 1, 0) = 0.0;
    // mse = (1 + 0)/2 = 0.5; psnr = -10 log10(0.5)
    CHECK(mse(x, y) == doctest::Approx(0.5));
    CHECK(psnr(x, y) == doctest::Approx(-10.0 * std::log10(0.5)));
}

TEST_CASE("resize_nearest picks the containing source pixel") {
    Image src(2, 2, 1);
    src.at(0, 0, 0) = 1.0;
    src.at(0, 1, 0) = 2.0;
    src.at(1, 0, 0) = 3.0;
    src.at(1, 1, 0) = 4.0;
    const Image up = resize_nearest(src, 4, 4);
    CHECK(up.at(0, 0, 0) == 1.0);
    CHECK(up.at(0, 3, 0) == 2.0);
    CHECK(up.at(3, 0, 0) == 3.0);
    CHECK(up.at(3, 3, 0) == 4.0);
    const Image down = resize_nearest(up, 2, 2);
    CHECK(down.at(0, 0, 0) == 1.0);
    CHECK(down.at(1, 1, 0) == 4.0);
}

} // TEST_SUITE
