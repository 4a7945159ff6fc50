#include <cmath>
#include <vector>

#include "doctest.h"

#include "ape/common.hpp"
#include "ape/mat.hpp"

using namespace ape;

namespace {

Mat seeded_mat(std::uint64_t seed, std::size_t rows, std::size_t cols, double scale = 1.0) {
    SplitMix64 rng(seed);
    Mat m(rows, cols);
    for (float& f : m.data) f = static_cast<float>(rng.next_gaussian() * scale);
    return m;
}

// Naive triple-loop re-derivation, written independently of matmul.
Mat matmul_oracle(const Mat& a, const Mat& bt) {
    Mat out(a.rows, bt.rows);
    for (std::size_t i = 0; i < a.rows; ++i) {
        for (std::size_t j = 0; j < bt.rows; ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols; ++k) {
                acc += static_cast<double>(a.at(i, k)) * static_cast<double>(bt.at(j, k));
            }
            out.at(i, j) = static_cast<float>(acc);
        }
    }
    return out;
}

// Kahan-compensated long double LSE.
double lse_oracle(const std::vector<float>& x) {
    long double m = x[0];
    for (float v : x) m = std::max(m, static_cast<long double>(v));
    long double sum = 0.0L, comp = 0.0L;
    for (float v : x) {
        const long double term = std::exp(static_cast<long double>(v) - m);
        const long double y = term - comp;
        const long double t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    return static_cast<double>(m + std::log(sum));
}

double entropy(const std::vector<float>& p) {
    double h = 0.0;
    for (float w : p) {
        if (w > 0.0f) h -= static_cast<double>(w) * std::log(static_cast<double>(w));
    }
    return h;
}

}  // namespace

TEST_CASE("matmul: identity passes b through transposed") {
    Mat id(2, 2);
    id.at(0, 0) = 1.0f;
    id.at(1, 1) = 1.0f;
    Mat b(2, 2);
    b.at(0, 0) = 3.0f;
    b.at(0, 1) = 4.0f;
    b.at(1, 0) = 5.0f;
    b.at(1, 1) = 6.0f;
    const Mat out = matmul(id, b);
    CHECK(out.at(0, 0) == 3.0f);
    CHECK(out.at(0, 1) == 5.0f);
    CHECK(out.at(1, 0) == 4.0f);
    CHECK(out.at(1, 1) == 6.0f);
}

TEST_CASE("matmul: 1x1") {
    Mat a(1, 1), b(1, 1);
    a.at(0, 0) = 2.0f;
    b.at(0, 0) = 3.0f;
    CHECK(matmul(a, b).at(0, 0) == 6.0f);
}

TEST_CASE("matmul: seeded 7x5 by 9x5 matches triple-loop oracle exactly") {
    const Mat a = seeded_mat(101, 7, 5);
    const Mat b = seeded_mat(102, 9, 5);
    const Mat got = matmul(a, b);
    const Mat want = matmul_oracle(a, b);
    double max_diff = 0.0;
    for (std::size_t i = 0; i < got.data.size(); ++i) {
        max_diff = std::max(max_diff, std::abs(static_cast<double>(got.data[i]) -
                                               static_cast<double>(want.data[i])));
    }
    CHECK(max_diff == 0.0);
}

TEST_CASE("matmul: exact for integer-valued inputs") {
    SplitMix64 rng(7);
    Mat a(6, 4), b(5, 4);
    for (float& f : a.data) f = static_cast<float>(static_cast<int>(rng.next_u64() % 17) - 8);
    for (float& f : b.data) f = static_cast<float>(static_cast<int>(rng.next_u64() % 17) - 8);
    const Mat got = matmul(a, b);
    const Mat want = matmul_oracle(a, b);
    CHECK(got.data == want.data);
}

TEST_CASE("matmul: dimension mismatch is a shape error") {
    CHECK_THROWS_AS(matmul(Mat(2, 3), Mat(2, 4)), shape_error);
}

TEST_CASE("logsumexp_row: ln 2 for [0, 0]") {
    const std::vector<float> x{0.0f, 0.0f};
    CHECK(logsumexp_row(std::span<const float>(x)) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("logsumexp_row: no overflow at 1000") {
    const std::vector<float> x{1000.0f, 1000.0f};
    CHECK(logsumexp_row(std::span<const float>(x)) ==
          doctest::Approx(1000.0 + std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("logsumexp_row: seeded length-17 vector matches extended-precision oracle") {
    SplitMix64 rng(55);
    std::vector<float> x(17);
    for (float& f : x) f = static_cast<float>(rng.next_gaussian() * 3.0);
    const double got = logsumexp_row(std::span<const float>(x));
    const double want = lse_oracle(x);
    CHECK(std::abs(got - want) <= 1e-6 * std::abs(want));
}

TEST_CASE("logsumexp_row: rejects empty input") {
    const std::vector<float> x;
    CHECK_THROWS_AS(logsumexp_row(std::span<const float>(x)), value_error);
}

TEST_CASE("logsumexp_row: shift invariance") {
    SplitMix64 rng(56);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<float> x(1 + rng.next_u64() % 12);
        for (float& f : x) f = static_cast<float>(rng.next_gaussian() * 2.0);
        const double c = rng.next_gaussian() * 5.0;
        std::vector<float> shifted(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) {
            shifted[i] = static_cast<float>(static_cast<double>(x[i]) + c);
        }
        // Shift by the value actually representable in the f32 inputs.
        const double applied = static_cast<double>(shifted[0]) - static_cast<double>(x[0]);
        const double lhs = logsumexp_row(std::span<const float>(shifted));
        const double rhs = logsumexp_row(std::span<const float>(x)) + applied;
        CHECK(std::abs(lhs - rhs) < 1e-5);
    }
}

TEST_CASE("softmax_row: symmetry and closed forms") {
    const std::vector<float> zeros{0.0f, 0.0f};
    auto w = softmax_row(zeros, 1.0);
    CHECK(w[0] == doctest::Approx(0.5));
    CHECK(w[1] == doctest::Approx(0.5));

    const std::vector<float> ln3{0.0f, static_cast<float>(std::log(3.0))};
    w = softmax_row(ln3, 1.0);
    CHECK(w[0] == doctest::Approx(0.25).epsilon(1e-6));
    CHECK(w[1] == doctest::Approx(0.75).epsilon(1e-6));

    // Halving the temperature doubles the logits.
    w = softmax_row(ln3, 0.5);
    CHECK(w[0] == doctest::Approx(0.1).epsilon(1e-6));
    CHECK(w[1] == doctest::Approx(0.9).epsilon(1e-6));
}

TEST_CASE("softmax_row: rejects non-positive temperature") {
    const std::vector<float> x{1.0f, 2.0f};
    CHECK_THROWS_AS(softmax_row(x, 0.0), value_error);
    CHECK_THROWS_AS(softmax_row(x, -1.0), value_error);
}

TEST_CASE("softmax_row: sums to 1 for any finite input and T > 0") {
    SplitMix64 rng(77);
    const double temps[] = {0.1, 0.3, 0.5, 1.0};
    for (int trial = 0; trial < 30; ++trial) {
        std::vector<float> x(1 + rng.next_u64() % 24);
        for (float& f : x) f = static_cast<float>(rng.next_gaussian() * 10.0);
        for (double t : temps) {
            const auto w = softmax_row(x, t);
            double sum = 0.0;
            for (float v : w) sum += v;
            CHECK(std::abs(sum - 1.0) < 1e-6);
        }
    }
}

TEST_CASE("softmax_row: entropy non-increasing as T decreases") {
    SplitMix64 rng(78);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<float> x(3 + rng.next_u64() % 10);
        for (float& f : x) f = static_cast<float>(rng.next_gaussian() * 2.0);
        x[0] += 1.0f;  // guarantee non-constant
        double prev = entropy(softmax_row(x, 1.0));
        for (double t = 0.9; t >= 0.1 - 1e-12; t -= 0.1) {
            const double h = entropy(softmax_row(x, t));
            CHECK(h <= prev + 1e-9);
            prev = h;
        }
    }
}

TEST_CASE("cosine: identity, orthogonal, negation") {
    const std::vector<float> u{1.0f, 2.0f, 3.0f};
    const std::vector<float> neg{-1.0f, -2.0f, -3.0f};
    const std::vector<float> e1{1.0f, 0.0f, 0.0f};
    const std::vector<float> e2{0.0f, 1.0f, 0.0f};
    CHECK(cosine(u, u) == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(cosine(e1, e2) == doctest::Approx(0.0));
    CHECK(cosine(u, neg) == doctest::Approx(-1.0).epsilon(1e-12));
}

TEST_CASE("cosine: rejects zero-norm input") {
    const std::vector<float> u{1.0f, 0.0f};
    const std::vector<float> z{0.0f, 0.0f};
    CHECK_THROWS_AS(cosine(u, z), value_error);
    CHECK_THROWS_AS(cosine(z, u), value_error);
}

TEST_CASE("l2_norm: 3-4-5, zero, and seeded oracle") {
    const std::vector<float> v{3.0f, 4.0f};
    CHECK(l2_norm(v) == doctest::Approx(5.0).epsilon(1e-12));
    const std::vector<float> z{0.0f, 0.0f, 0.0f};
    CHECK(l2_norm(z) == 0.0);

    SplitMix64 rng(91);
    std::vector<float> x(64);
    for (float& f : x) f = static_cast<float>(rng.next_gaussian());
    long double acc = 0.0L;
    for (float f : x) acc += static_cast<long double>(f) * static_cast<long double>(f);
    const double want = static_cast<double>(std::sqrt(acc));
    CHECK(std::abs(l2_norm(x) - want) <= 1e-6 * want);
}

TEST_CASE("RowMask: full and causal visibility") {
    const RowMask full = RowMask::full(2, 3);
    CHECK(full.visible(0, 2));
    CHECK(full.visible_end(0) == 3);

    const RowMask causal = RowMask::causal(3, 5, 2);
    CHECK(causal.visible(0, 2));
    CHECK(!causal.visible(0, 3));
    CHECK(causal.visible_end(1) == 4);
    CHECK(causal.visible_end(2) == 5);

    CHECK_THROWS_AS(RowMask::full(2, 0), value_error);
}
