#include <cmath>
#include <vector>

#include "doctest.h"

#include "ape/common.hpp"
#include "ape/rope.hpp"

using namespace ape;

namespace {

Mat seeded_mat(std::uint64_t seed, std::size_t rows, std::size_t cols) {
    SplitMix64 rng(seed);
    Mat m(rows, cols);
    for (float& f : m.data) f = static_cast<float>(rng.next_gaussian());
    return m;
}

double dot(std::span<const float> a, std::span<const float> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        acc += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    }
    return acc;
}

}  // namespace

TEST_CASE("apply_rope: position 0 is the identity") {
    const Mat x = seeded_mat(11, 3, 8);
    const std::vector<std::size_t> pos{0, 0, 0};
    const Mat out = apply_rope(x, pos, RopeParams{8});
    CHECK(out.data == x.data);
}

TEST_CASE("apply_rope: head_dim 2 rotates by the position in radians") {
    Mat x(1, 2);
    x.at(0, 0) = 1.0f;
    x.at(0, 1) = 0.0f;
    const std::vector<std::size_t> pos{3};
    const Mat out = apply_rope(x, pos, RopeParams{2, 12345.0});
    // Pair 0 has frequency base^0 = 1, so the angle is exactly p.
    CHECK(out.at(0, 0) == doctest::Approx(std::cos(3.0)).epsilon(1e-6));
    CHECK(out.at(0, 1) == doctest::Approx(std::sin(3.0)).epsilon(1e-6));
    CHECK(l2_norm(out.row(0)) == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("apply_rope: rejects odd head_dim") {
    Mat x(1, 3);
    const std::vector<std::size_t> pos{0};
    CHECK_THROWS_AS(apply_rope(x, pos, RopeParams{3}), value_error);
}

TEST_CASE("apply_rope: preserves row norms") {
    const Mat x = seeded_mat(12, 5, 16);
    const std::vector<std::size_t> pos{0, 7, 100, 999, 31};
    const Mat out = apply_rope(x, pos, RopeParams{16});
    for (std::size_t r = 0; r < x.rows; ++r) {
        CHECK(l2_norm(out.row(r)) == doctest::Approx(l2_norm(x.row(r))).epsilon(1e-6));
    }
}

TEST_CASE("apply_rope: q.k depends only on the position difference") {
    const Mat q = seeded_mat(13, 1, 16);
    const Mat k = seeded_mat(14, 1, 16);
    const RopeParams params{16};
    const std::size_t cases[][3] = {{5, 2, 9}, {0, 7, 3}, {40, 11, 100}};
    for (const auto& c : cases) {
        const std::size_t m = c[0], n = c[1], s = c[2];
        const std::vector<std::size_t> pm{m}, pn{n}, pms{m + s}, pns{n + s};
        const double base = dot(apply_rope(q, pm, params).row(0),
                                apply_rope(k, pn, params).row(0));
        const double shifted = dot(apply_rope(q, pms, params).row(0),
                                   apply_rope(k, pns, params).row(0));
        CHECK(std::abs(base - shifted) < 1e-5);
    }
}

TEST_CASE("plan_positions: parallel re-uses one start for every context") {
    const std::vector<std::size_t> lens{10, 7, 10};
    const PositionPlan plan = plan_positions(Layout::parallel, 4, lens);
    CHECK(plan.prefix_start == 0);
    CHECK(plan.context_starts == std::vector<std::size_t>{4, 4, 4});
    CHECK(plan.query_start == 14);
}

TEST_CASE("plan_positions: sequential accumulates context lengths") {
    const std::vector<std::size_t> lens{10, 7};
    const PositionPlan plan = plan_positions(Layout::sequential, 4, lens);
    CHECK(plan.context_starts == std::vector<std::size_t>{4, 14});
    CHECK(plan.query_start == 21);
}

TEST_CASE("plan_positions: zero contexts puts the query at the prefix end") {
    const std::vector<std::size_t> lens;
    CHECK(plan_positions(Layout::parallel, 4, lens).query_start == 4);
    CHECK(plan_positions(Layout::sequential, 4, lens).query_start == 4);
}
