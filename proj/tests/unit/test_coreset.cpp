#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "metacore/coreset.hpp"
#include "metacore/errors.hpp"
#include "support/generators.hpp"

using metacore::Coreset;
using metacore::GradientTable;
using metacore::Matrix;
using testsupport::Gen;

namespace {

GradientTable line(std::initializer_list<double> xs) {
    GradientTable t;
    for (double x : xs) t.grads.push_back(Matrix::Constant(1, 1, x));
    return t;
}

std::size_t weight_sum(const Coreset& c) {
    return std::accumulate(c.weights.begin(), c.weights.end(), std::size_t{0});
}

/// Random gradient table: points scattered around a few clusters.
GradientTable random_table(Gen& gen, std::size_t M, Eigen::Index rows, Eigen::Index cols) {
    std::vector<Matrix> centers;
    const std::size_t k = 1 + gen.index(3);
    for (std::size_t c = 0; c < k; ++c) centers.push_back(3.0 * gen.gaussian(rows, cols));
    GradientTable t;
    for (std::size_t j = 0; j < M; ++j) {
        t.grads.push_back(centers[gen.index(k)] + gen.uniform(0.1, 1.0) * gen.gaussian(rows, cols));
    }
    return t;
}

/// True when some greedy step has two candidates with residuals within 1e-9.
bool has_greedy_tie(const Matrix& D, std::size_t L) {
    std::vector<std::size_t> chosen;
    for (std::size_t step = 0; step < L; ++step) {
        std::vector<double> res;
        for (Eigen::Index i = 0; i < D.rows(); ++i) {
            if (std::find(chosen.begin(), chosen.end(), static_cast<std::size_t>(i)) != chosen.end()) continue;
            auto trial = chosen;
            trial.push_back(static_cast<std::size_t>(i));
            res.push_back(metacore::residual(D, trial));
        }
        std::sort(res.begin(), res.end());
        if (res.size() > 1 && res[1] - res[0] <= 1e-9) return true;
        chosen = metacore::greedy_select(D, step + 1);
    }
    return false;
}

}  // namespace

TEST_CASE("pairwise distances") {
    GradientTable same;
    for (int j = 0; j < 4; ++j) same.grads.push_back(Matrix::Ones(2, 3));
    CHECK(metacore::pairwise_distances(same).norm() == 0.0);

    const Matrix D = metacore::pairwise_distances(line({0, 1, 10, 11}));
    CHECK(D(0, 2) == 10.0);
    CHECK(D(1, 3) == 10.0);
    CHECK(D(0, 1) == 1.0);
    CHECK((D - D.transpose()).norm() == 0.0);
    CHECK(D.diagonal().norm() == 0.0);

    GradientTable two;
    two.grads.push_back(Matrix::Zero(2, 2));
    Matrix diff = Matrix::Zero(2, 2);
    diff(0, 0) = 3.0;
    two.grads.push_back(diff);
    CHECK(metacore::pairwise_distances(two)(0, 1) == doctest::Approx(3.0).epsilon(1e-14));

    // Spectral, not Frobenius: diag(3, 4) has operator norm 4.
    diff(1, 1) = 4.0;
    two.grads[1] = diff;
    CHECK(metacore::pairwise_distances(two)(0, 1) == doctest::Approx(4.0).epsilon(1e-14));
}

TEST_CASE("greedy selection examples") {
    CHECK(metacore::greedy_select(Matrix::Zero(5, 5), 2) == std::vector<std::size_t>{0, 1});

    const Matrix D = metacore::pairwise_distances(line({0, 1, 10, 11}));
    const auto picks = metacore::greedy_select(D, 2);
    CHECK(metacore::residual(D, picks) == 2.0);
    CHECK(testsupport::optimal_residual(D, 2) == 2.0);

    const auto all = metacore::greedy_select(D, 4);
    CHECK(std::set<std::size_t>(all.begin(), all.end()).size() == 4);
    CHECK(metacore::residual(D, all) == 0.0);

    CHECK_THROWS_AS(metacore::greedy_select(D, 0), metacore::ParameterError);
    CHECK_THROWS_AS(metacore::greedy_select(D, 5), metacore::ParameterError);
}

TEST_CASE("first greedy pick is the 1-medoid") {
    Gen gen(4);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix D = metacore::pairwise_distances(random_table(gen, 9, 2, 1));
        Eigen::Index medoid = 0;
        D.colwise().sum().minCoeff(&medoid);
        CHECK(metacore::greedy_select(D, 1).front() == static_cast<std::size_t>(medoid));
    }
}

TEST_CASE("weight allocation") {
    const Matrix D = metacore::pairwise_distances(line({0, 1, 10, 11}));
    const Coreset c = metacore::allocate_weights(D, {1, 2});
    CHECK(c.indices == std::vector<std::size_t>{1, 2});
    CHECK(c.weights == std::vector<std::size_t>{2, 2});

    const Coreset id = metacore::allocate_weights(D, {0, 1, 2, 3});
    CHECK(id.weights == std::vector<std::size_t>{1, 1, 1, 1});

    Gen gen(12);
    const Matrix R = metacore::pairwise_distances(random_table(gen, 7, 2, 2));
    const Coreset one = metacore::allocate_weights(R, {4});
    CHECK(one.weights == std::vector<std::size_t>{7});

    // Identical points: selected tasks keep themselves, the rest go to the lowest index.
    const Coreset tie = metacore::allocate_weights(Matrix::Zero(5, 5), {3, 1});
    CHECK(weight_sum(tie) == 5);
    for (auto w : tie.weights) CHECK(w >= 1);
}

TEST_CASE("coreset validation and identity") {
    const Coreset id = Coreset::identity(6);
    CHECK_NOTHROW(id.validate());
    CHECK(weight_sum(id) == 6);

    Coreset bad = id;
    bad.weights[0] = 2;
    CHECK_THROWS_AS(bad.validate(), metacore::ParameterError);
    Coreset dup{{1, 1}, {3, 3}, 6};
    CHECK_THROWS_AS(dup.validate(), metacore::ParameterError);
    Coreset out_of_range{{0, 6}, {3, 3}, 6};
    CHECK_THROWS_AS(out_of_range.validate(), metacore::ParameterError);
}

TEST_CASE("brute force selection") {
    const Matrix D = metacore::pairwise_distances(line({0, 1, 10, 11}));
    const auto best = metacore::brute_force_select(D, 2);
    CHECK(best.residual == 2.0);
    CHECK(metacore::residual(D, best.indices) == 2.0);
    CHECK(metacore::brute_force_select(D, 4).residual == 0.0);

    Gen gen(6);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t M = 3 + gen.index(8);
        const Matrix R = metacore::pairwise_distances(random_table(gen, M, 2, 2));
        const std::size_t L = 1 + gen.index(M);
        CHECK(metacore::brute_force_select(R, L).residual ==
              doctest::Approx(testsupport::optimal_residual(R, L)).epsilon(1e-12));
    }
}

TEST_CASE("greedy achieves the (1 - 1/e) guarantee on seeded instances") {
    Gen gen(2718);
    const double factor = 1.0 - std::exp(-1.0);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t M = 4 + gen.index(9);
        const Matrix D = metacore::pairwise_distances(random_table(gen, M, 2, 1 + gen.index(2)));
        const std::size_t L = 1 + gen.index(M);
        const double base = metacore::empty_residual(D);
        const double opt = testsupport::optimal_residual(D, L);
        const double greedy = metacore::residual(D, metacore::greedy_select(D, L));
        CHECK(base - greedy >= factor * (base - opt) - 1e-12);
    }
}

TEST_CASE("greedy residual is non-increasing in L") {
    Gen gen(1);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t M = 6 + gen.index(10);
        const Matrix D = metacore::pairwise_distances(random_table(gen, M, 3, 1));
        const auto full = metacore::greedy_select(D, M);
        double prev = metacore::empty_residual(D);
        for (std::size_t L = 1; L <= M; ++L) {
            // Greedy is incremental: the size-L selection is a prefix of the size-M one.
            const auto picks = metacore::greedy_select(D, L);
            CHECK(std::equal(picks.begin(), picks.end(), full.begin()));
            const double res = metacore::residual(D, picks);
            CHECK(res <= prev);
            prev = res;
        }
        CHECK(prev == 0.0);
    }
}

TEST_CASE("weights always sum to the pool size") {
    Gen gen(99);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t M = 1 + gen.index(15);
        const Matrix D = metacore::pairwise_distances(random_table(gen, M, 2, 2));
        const std::size_t L = 1 + gen.index(M);
        const Coreset c = metacore::allocate_weights(D, metacore::greedy_select(D, L));
        CHECK(weight_sum(c) == M);
        CHECK(c.indices.size() == L);
        CHECK_NOTHROW(c.validate());
    }
}

TEST_CASE("relabeling the pool permutes the selection") {
    Gen gen(17);
    int untied = 0;
    for (int trial = 0; trial < 40; ++trial) {
        const std::size_t M = 8;
        const GradientTable t = random_table(gen, M, 2, 2);
        std::vector<std::size_t> perm(M);
        std::iota(perm.begin(), perm.end(), 0);
        std::shuffle(perm.begin(), perm.end(), gen.engine());
        GradientTable pt;
        for (std::size_t j = 0; j < M; ++j) pt.grads.push_back(t.grads[perm[j]]);

        const Matrix D = metacore::pairwise_distances(t);
        const Matrix PD = metacore::pairwise_distances(pt);
        const Coreset a = metacore::allocate_weights(D, metacore::greedy_select(D, 3));
        const Coreset b = metacore::allocate_weights(PD, metacore::greedy_select(PD, 3));
        std::vector<std::size_t> mapped;
        for (auto i : b.indices) mapped.push_back(perm[i]);
        CHECK(metacore::residual(D, a.indices) == doctest::Approx(metacore::residual(D, mapped)).epsilon(1e-12));
        if (has_greedy_tie(D, 3)) continue;  // two-point clusters: either member is optimal

        ++untied;
        std::vector<std::pair<std::size_t, std::size_t>> ma, mb;
        for (std::size_t k = 0; k < 3; ++k) {
            ma.emplace_back(a.indices[k], a.weights[k]);
            mb.emplace_back(mapped[k], b.weights[k]);
        }
        std::sort(ma.begin(), ma.end());
        std::sort(mb.begin(), mb.end());
        CHECK(ma == mb);
    }
    CHECK(untied >= 10);
}

TEST_CASE("identical gradients collapse to the pool mean for any selection") {
    Gen gen(23);
    const Matrix g = gen.gaussian(2, 3);
    GradientTable t;
    for (int j = 0; j < 10; ++j) t.grads.push_back(g);
    const Matrix D = metacore::pairwise_distances(t);
    for (std::size_t L = 1; L <= 10; ++L) {
        const Coreset c = metacore::allocate_weights(D, metacore::greedy_select(D, L));
        Matrix weighted = Matrix::Zero(2, 3);
        for (std::size_t k = 0; k < c.indices.size(); ++k)
            for (std::size_t w = 0; w < c.weights[k]; ++w) weighted += t.grads[c.indices[k]];
        Matrix full = Matrix::Zero(2, 3);
        for (const auto& x : t.grads) full += x;
        CHECK((weighted / 10.0 - full / 10.0).norm() == 0.0);
        CHECK(metacore::residual(D, c.indices) == 0.0);
    }
}
