#include <doctest.h>

#include <cmath>
#include <sstream>

#include "flowkd/kernels.hpp"
#include "flowkd/optim.hpp"
#include "flowkd/rng.hpp"
#include "oracles.hpp"

using namespace flowkd;
using Tensor = TensorT<double>;

namespace {

Mat<double> random_batch(int n, int d, Rng& rng, double scale = 1.0) {
    Mat<double> m(n, d);
    for (auto& v : m.v) v = rng.normal() * scale;
    return m;
}

}  // namespace

TEST_CASE("cosine kernel: fixed points") {
    CHECK(cosine_kernel<double>({1, 2}, {1, 2}) == doctest::Approx(1.0).epsilon(1e-7));
    CHECK(cosine_kernel<double>({1, 0}, {-1, 0}) == doctest::Approx(0.0).epsilon(1e-7));
    CHECK(cosine_kernel<double>({1, 0}, {0, 1}) == doctest::Approx(0.5).epsilon(1e-12));
    // zero vectors stay defined through the norm epsilon
    CHECK(std::isfinite(cosine_kernel<double>({0, 0}, {0, 0})));
}

TEST_CASE("t-student kernel: fixed points") {
    CHECK(tstudent_kernel<double>({1, 1}, {1, 1}, 1) == 1.0);
    CHECK(tstudent_kernel<double>({0, 0}, {1, 0}, 1) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(tstudent_kernel<double>({0, 0}, {3, 0}, 2) == doctest::Approx(0.1).epsilon(1e-12));
    CHECK_THROWS_AS(tstudent_kernel<double>({0.0}, {1.0}, 0), std::invalid_argument);
}

TEST_CASE("kernel symmetry and range over random inputs") {
    Rng rng(101);
    for (int trial = 0; trial < 200; ++trial) {
        const int d = 1 + static_cast<int>(rng.uniform_u64_below(6));
        std::vector<double> a(d), b(d);
        for (auto& x : a) x = rng.normal() * 3;
        for (auto& x : b) x = rng.normal() * 3;
        const int deg = 1 + static_cast<int>(rng.uniform_u64_below(3));
        const double kc = cosine_kernel(a, b);
        const double kt = tstudent_kernel(a, b, deg);
        CHECK(kc == cosine_kernel(b, a));
        CHECK(kt == tstudent_kernel(b, a, deg));
        CHECK(kc >= 0.0);
        CHECK(kc <= 1.0);
        CHECK(kt > 0.0);
        CHECK(kt <= 1.0);
        CHECK(tstudent_kernel(a, a, deg) == 1.0);
        CHECK(cosine_kernel(a, a) == doctest::Approx(1.0).epsilon(1e-5));
    }
}

TEST_CASE("cond_prob_matrix: N=2 is the single-neighbor matrix") {
    Mat<double> x(2, 3);
    x.v = {0.0, 1.0, 2.0, 5.0, -1.0, 0.5};
    for (auto kernel : {KernelKind::cosine(), KernelKind::tstudent(1)}) {
        auto p = cond_prob_matrix(x, kernel);
        CHECK(p.p.at(0, 0) == 0.0);
        CHECK(p.p.at(1, 1) == 0.0);
        CHECK(p.p.at(1, 0) == doctest::Approx(1.0).epsilon(1e-15));
        CHECK(p.p.at(0, 1) == doctest::Approx(1.0).epsilon(1e-15));
    }
}

TEST_CASE("cond_prob_matrix: pairwise-equidistant points give uniform neighbors") {
    // equilateral triangle in 2-d
    Mat<double> x(3, 2);
    const double h = std::sqrt(3.0) / 2.0;
    x.v = {0.0, 0.0, 1.0, 0.0, 0.5, h};
    auto p = cond_prob_matrix(x, KernelKind::tstudent(1));
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            if (i != j) CHECK(p.p.at(i, j) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("cond_prob_matrix matches the two-loop oracle on random batches") {
    Rng rng(7);
    for (int trial = 0; trial < 30; ++trial) {
        const int n = 4 + static_cast<int>(rng.uniform_u64_below(6));
        const int d = 2 + static_cast<int>(rng.uniform_u64_below(4));
        auto x = random_batch(n, d, rng);
        const bool cosine = trial % 2 == 0;
        const int deg = 1 + trial % 3;
        auto got = cond_prob_matrix(x, cosine ? KernelKind::cosine() : KernelKind::tstudent(deg));
        auto want = oracle::cond_prob(x, cosine, deg);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                CHECK(got.p.at(i, j) == doctest::Approx(want.at(i, j)).epsilon(1e-12));
    }
    CHECK_THROWS_AS(cond_prob_matrix(Mat<double>(1, 2), KernelKind::cosine()), std::invalid_argument);
}

TEST_CASE("cond_prob_matrix invariants: zero diagonal, floored entries, unit columns") {
    Rng rng(8);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 2 + static_cast<int>(rng.uniform_u64_below(10));
        auto x = random_batch(n, 3, rng, trial % 5 ? 1.0 : 1e-4);
        auto kernel = trial % 2 ? KernelKind::cosine() : KernelKind::tstudent(1 + trial % 2);
        auto p = cond_prob_matrix(x, kernel);
        for (int j = 0; j < n; ++j) {
            double colsum = 0;
            for (int i = 0; i < n; ++i) {
                if (i == j) {
                    CHECK(p.p.at(i, j) == 0.0);
                    continue;
                }
                // the floor is applied before the final renormalization,
                // which can shrink entries by at most 1/(1 + n*floor)
                CHECK(p.p.at(i, j) >= kProbFloor / (1 + n * kProbFloor));
                CHECK(p.p.at(i, j) <= 1.0);
                colsum += p.p.at(i, j);
            }
            CHECK(colsum == doctest::Approx(1.0).epsilon(1e-9));
        }
    }
}

TEST_CASE("jeffreys divergence: zero at equality, symmetric, positive otherwise") {
    Rng rng(9);
    auto x = random_batch(6, 3, rng);
    auto y = random_batch(6, 3, rng);
    auto px = cond_prob_matrix(x, KernelKind::tstudent(1));
    auto py = cond_prob_matrix(y, KernelKind::tstudent(1));
    CHECK(jeffreys_divergence(px, px) == 0.0);
    CHECK(jeffreys_divergence(px, py) == doctest::Approx(jeffreys_divergence(py, px)).epsilon(1e-12));
    CHECK(jeffreys_divergence(px, py) > 0.0);
    CHECK(jeffreys_divergence(px, py) ==
          doctest::Approx(oracle::jeffreys(px.p, py.p)).epsilon(1e-12));

    auto small = cond_prob_matrix(random_batch(4, 3, rng), KernelKind::tstudent(1));
    CHECK_THROWS_AS(jeffreys_divergence(px, small), std::invalid_argument);
}

TEST_CASE("taped cond prob equals the value path") {
    Rng rng(10);
    for (auto kernel : {KernelKind::cosine(), KernelKind::tstudent(1), KernelKind::tstudent(2)}) {
        auto x = random_batch(7, 4, rng);
        auto taped = taped_cond_prob(Tensor::from_mat(x, true), kernel);
        auto plain = cond_prob_matrix(x, kernel);
        for (int i = 0; i < 7; ++i)
            for (int j = 0; j < 7; ++j)
                CHECK(taped.value()[static_cast<size_t>(i) * 7 + j] ==
                      doctest::Approx(plain.p.at(i, j)).epsilon(1e-12));
    }
}

TEST_CASE("hybrid loss is zero when the student equals the teacher") {
    Rng rng(12);
    auto t = random_batch(8, 4, rng);
    auto loss = hybrid_layer_loss(t, Tensor::from_mat(t, true));
    CHECK(loss.item() == doctest::Approx(0.0).epsilon(1e-18));
}

TEST_CASE("hybrid loss decomposes into the two kernel divergences") {
    Rng rng(13);
    auto t = random_batch(8, 4, rng);
    auto s = random_batch(8, 4, rng);
    const double loss = hybrid_layer_loss(t, Tensor::from_mat(s)).item();
    const double want = oracle::jeffreys(oracle::cond_prob(t, true), oracle::cond_prob(s, true)) +
                        oracle::jeffreys(oracle::cond_prob(t, false), oracle::cond_prob(s, false));
    CHECK(loss == doctest::Approx(want).epsilon(1e-10));
    CHECK(loss >= 0.0);

    RepresentationBatch<double> tb{t, 0, RepSourceKind::Teacher};
    RepresentationBatch<double> sb{s, 0, RepSourceKind::Student};
    CHECK(hybrid_layer_loss_value(tb, sb) == doctest::Approx(loss).epsilon(1e-12));
}

TEST_CASE("hybrid loss gradient matches finite differences") {
    Rng rng(14);
    auto t = random_batch(8, 4, rng);
    auto s = Tensor::from_mat(random_batch(8, 4, rng), true);
    auto lossfn = [&] { return hybrid_layer_loss(t, s); };
    auto report = gradient_check(lossfn, {{"student", s}}, 1e-5, 1e-4);
    INFO("max rel error " << report.max_rel_error);
    CHECK(report.passed);
}

TEST_CASE("hybrid loss is invariant to a common row permutation") {
    Rng rng(15);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 4 + static_cast<int>(rng.uniform_u64_below(5));
        auto t = random_batch(n, 3, rng);
        auto s = random_batch(n, 3, rng);
        std::vector<int> perm(static_cast<size_t>(n));
        for (int i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
        rng.shuffle(perm);
        Mat<double> tp(n, 3), sp(n, 3);
        for (int i = 0; i < n; ++i)
            for (int k = 0; k < 3; ++k) {
                tp.at(i, k) = t.at(perm[static_cast<size_t>(i)], k);
                sp.at(i, k) = s.at(perm[static_cast<size_t>(i)], k);
            }
        const double base = hybrid_layer_loss(t, Tensor::from_mat(s)).item();
        const double permuted = hybrid_layer_loss(tp, Tensor::from_mat(sp)).item();
        CHECK(base == doctest::Approx(permuted).epsilon(1e-9));
    }
}

TEST_CASE("cosine-kernel probabilities are invariant to positive row scaling") {
    Rng rng(16);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 3 + static_cast<int>(rng.uniform_u64_below(5));
        auto x = random_batch(n, 4, rng);
        const double c = 0.25 + 4.0 * rng.uniform_real01();
        Mat<double> xs = x;
        for (auto& v : xs.v) v *= c;
        auto p1 = cond_prob_matrix(x, KernelKind::cosine());
        auto p2 = cond_prob_matrix(xs, KernelKind::cosine());
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                CHECK(p1.p.at(i, j) == doctest::Approx(p2.p.at(i, j)).epsilon(1e-6));
    }
}

TEST_CASE("cond prob matrix dumps as 17-digit csv") {
    Mat<double> x(2, 2);
    x.v = {0, 0, 1, 0};
    auto p = cond_prob_matrix(x, KernelKind::tstudent(1));
    std::ostringstream os;
    dump_csv(p, os);
    CHECK(os.str() == "0,1\n1,0\n");
}
