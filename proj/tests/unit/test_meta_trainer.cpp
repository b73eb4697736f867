#include <doctest.h>

#include <cmath>
#include <numeric>

#include "metacore/errors.hpp"
#include "metacore/meta_trainer.hpp"
#include "metacore/task_generators.hpp"
#include "support/generators.hpp"

using metacore::Coreset;
using metacore::GradMode;
using metacore::Matrix;
using metacore::SelectionMode;
using metacore::TaskFunction;
using metacore::TrainConfig;
using testsupport::Gen;

namespace {

TrainConfig config(SelectionMode mode, std::size_t L, std::size_t n_s, std::size_t iters) {
    TrainConfig cfg;
    cfg.mode = mode;
    cfg.L = L;
    cfg.zo.n_s = n_s;
    cfg.zo.r = 1e-2;
    cfg.zo.eta_inn = 1e-2;
    cfg.zo.seed = 3;
    cfg.eta_out = 0.1;
    cfg.n_iters = iters;
    return cfg;
}

std::vector<TaskFunction> quadratic_pool(std::size_t M, std::uint64_t seed) {
    Gen gen(seed);
    std::vector<TaskFunction> pool;
    for (std::size_t j = 0; j < M; ++j) pool.push_back(testsupport::quadratic_task(gen.gaussian(2, 2)));
    return pool;
}

struct LqrFixture {
    metacore::LqrPool pool;
    std::vector<TaskFunction> tasks;
    Matrix theta0;

    explicit LqrFixture(std::size_t M, double eps = 0.05, std::uint64_t seed = 0)
        : pool(metacore::generate_lqr_pool([&] {
              metacore::PoolSpec s;
              s.M = M;
              s.eps = {eps, eps, eps, eps};
              s.seed = seed;
              return s;
          }())),
          tasks(metacore::lqr_task_functions(pool.tasks, Matrix::Identity(3, 3))),
          theta0(Matrix::Zero(2, 3)) {}
};

}  // namespace

TEST_CASE("mode names") {
    CHECK(metacore::parse_selection_mode("full") == SelectionMode::full_pool);
    CHECK(metacore::parse_selection_mode("full_pool") == SelectionMode::full_pool);
    CHECK(metacore::parse_selection_mode("unweighted") == SelectionMode::unweighted_coreset);
    CHECK(metacore::parse_selection_mode("random_subset") == SelectionMode::random_subset);
    CHECK(metacore::to_string(SelectionMode::coreset) == "coreset");
    CHECK_THROWS_AS(metacore::parse_selection_mode("nope"), metacore::ParameterError);
    CHECK(metacore::parse_grad_mode("oracle") == GradMode::oracle);
    CHECK_THROWS_AS(metacore::parse_grad_mode("sgd"), metacore::ParameterError);
}

TEST_CASE("query accounting") {
    const auto pool = quadratic_pool(10, 1);
    const Matrix theta0 = Matrix::Zero(2, 2);

    const auto sel = metacore::select_phase(pool, theta0, config(SelectionMode::coreset, 2, 5, 3));
    CHECK(sel.queries == 200);

    metacore::MetaState state{theta0, sel.coreset, 0, sel.queries};
    const auto [next, rec] = metacore::meta_step(state, pool, config(SelectionMode::coreset, 2, 5, 3));
    CHECK(rec.cum_queries - sel.queries == 40);

    const auto res = metacore::train(pool, theta0, config(SelectionMode::coreset, 2, 5, 3));
    CHECK(res.total_queries == 320);
    CHECK(res.selection_queries == 200);
    REQUIRE(res.records.size() == 3);
    CHECK(res.records[0].cum_queries == 240);
    CHECK(res.records[2].cum_queries == 320);

    const auto full = metacore::train(pool, theta0, config(SelectionMode::full_pool, 2, 5, 3));
    CHECK(full.selection_queries == 0);
    CHECK(full.total_queries == 600);

    const auto rnd = metacore::train(pool, theta0, config(SelectionMode::random_subset, 2, 5, 3));
    CHECK(rnd.selection_queries == 0);
    CHECK(rnd.total_queries == 120);
}

TEST_CASE("recorded query counts equal actual evaluations") {
    LqrFixture fx(6);
    std::vector<testsupport::CountingTask> counted;
    std::vector<TaskFunction> tasks;
    for (const auto& t : fx.tasks) {
        counted.emplace_back(t);
        tasks.push_back(counted.back().f);
    }
    auto cfg = config(SelectionMode::coreset, 2, 20, 4);
    cfg.eta_out = 1e-2;
    cfg.zo.r = 0.05;
    cfg.zo.eta_inn = 1e-3;
    const auto tally = [&] {
        std::size_t n = 0;
        for (const auto& c : counted) n += *c.calls;
        return n;
    };
    metacore::train(tasks, fx.theta0, cfg, [&](const metacore::TrainRecord& rec) {
        CHECK(rec.cum_queries == tally());
        return true;
    });
}

TEST_CASE("selection phase") {
    const auto pool = quadratic_pool(10, 2);
    const Matrix theta0 = Matrix::Zero(2, 2);

    const auto full = metacore::select_phase(pool, theta0, config(SelectionMode::full_pool, 3, 5, 1));
    CHECK(full.coreset.indices == Coreset::identity(10).indices);
    CHECK(full.coreset.weights == std::vector<std::size_t>(10, 1));

    const auto unw = metacore::select_phase(pool, theta0, config(SelectionMode::unweighted_coreset, 3, 5, 1));
    CHECK(unw.coreset.weights == std::vector<std::size_t>{4, 3, 3});
    CHECK(std::is_sorted(unw.coreset.indices.begin(), unw.coreset.indices.end()));

    const auto r1 = metacore::select_phase(pool, theta0, config(SelectionMode::random_subset, 4, 5, 1));
    const auto r2 = metacore::select_phase(pool, theta0, config(SelectionMode::random_subset, 4, 5, 1));
    CHECK(r1.coreset.indices == r2.coreset.indices);
    CHECK(r1.coreset.weights == std::vector<std::size_t>{3, 3, 2, 2});
    CHECK_NOTHROW(r1.coreset.validate());

    const auto big = metacore::select_phase(pool, theta0, config(SelectionMode::coreset, 25, 5, 1));
    CHECK(big.coreset.indices.size() == 10);
    CHECK(big.coreset.weights == std::vector<std::size_t>(10, 1));
}

TEST_CASE("one exact ascent step on -|theta|^2/2 lands at zero") {
    std::vector<TaskFunction> pool{testsupport::quadratic_task(Matrix::Zero(3, 1))};
    TrainConfig cfg = config(SelectionMode::coreset, 1, 5, 1);
    cfg.grad_mode = GradMode::oracle;
    cfg.zo.eta_inn = 0.0;
    cfg.eta_out = 1.0;
    const Matrix theta0 = (Matrix(3, 1) << 1.5, -2.0, 0.25).finished();
    const auto res = metacore::train(pool, theta0, cfg);
    CHECK(res.theta_final.norm() == 0.0);
}

TEST_CASE("identical pools: weighted coreset equals full pool") {
    LqrFixture fx(10, 0.0);
    for (std::size_t L : {1, 3, 10}) {
        auto cfg = config(SelectionMode::coreset, L, 30, 1);
        cfg.zo.r = 0.05;
        cfg.zo.eta_inn = 1e-3;
        cfg.shared_probe_streams = true;
        const auto sel = metacore::select_phase(fx.tasks, fx.theta0, cfg);
        CHECK(std::accumulate(sel.coreset.weights.begin(), sel.coreset.weights.end(), std::size_t{0}) == 10);
        const auto mg = metacore::meta_gradient(fx.tasks, sel.coreset, fx.theta0, cfg, 0);
        const auto full = metacore::meta_gradient(fx.tasks, Coreset::identity(10), fx.theta0, cfg, 0);
        CHECK(mg.g == full.g);
    }

    // Oracle mode: the weighted average of equal gradients is the single-task step.
    auto cfg = config(SelectionMode::coreset, 2, 5, 1);
    cfg.grad_mode = GradMode::oracle;
    cfg.eta_out = 1e-2;
    const auto res = metacore::train(fx.tasks, fx.theta0, cfg);
    const Matrix single = fx.theta0 + cfg.eta_out * fx.tasks[0].exact_grad(
                                          fx.theta0 + cfg.zo.eta_inn * fx.tasks[0].exact_grad(fx.theta0));
    CHECK((res.theta_final - single).norm() <= 1e-15 * single.norm());
}

TEST_CASE("coreset with L = M follows the full-pool trajectory exactly") {
    LqrFixture fx(5);
    auto cfg = config(SelectionMode::coreset, 5, 40, 10);
    cfg.eta_out = 1e-2;
    cfg.zo.r = 0.05;
    cfg.zo.eta_inn = 1e-3;
    const auto core = metacore::train(fx.tasks, fx.theta0, cfg);
    cfg.mode = SelectionMode::full_pool;
    const auto full = metacore::train(fx.tasks, fx.theta0, cfg);
    REQUIRE(core.records.size() == full.records.size());
    for (std::size_t n = 0; n < core.records.size(); ++n) {
        CHECK(core.records[n].theta == full.records[n].theta);
        CHECK(core.records[n].per_task_gap == full.records[n].per_task_gap);
        CHECK(core.records[n].cum_queries == full.records[n].cum_queries + core.selection_queries);
    }
}

TEST_CASE("oracle ascent on a strongly concave pool reduces the gradient") {
    metacore::SyntheticTaskSpec spec;
    spec.alpha = 0.0;
    const auto tasks = metacore::synthetic_task_functions(metacore::generate_synthetic_pool(spec, 8, 4));
    auto cfg = config(SelectionMode::full_pool, 8, 5, 30);
    cfg.grad_mode = GradMode::oracle;
    cfg.zo.eta_inn = 0.0;
    cfg.eta_out = 0.3;
    const auto res = metacore::train(tasks, Matrix::Constant(4, 1, 2.0), cfg);
    CHECK(res.records.back().grad_norm_sq < res.records.front().grad_norm_sq);
    CHECK(std::isfinite(res.records.front().full_grad_norm_sq));
    CHECK(res.records.front().full_grad_norm_sq == doctest::Approx(res.records.front().grad_norm_sq));
}

TEST_CASE("records") {
    LqrFixture fx(4);
    auto cfg = config(SelectionMode::coreset, 2, 10, 5);
    cfg.eta_out = 1e-2;
    cfg.zo.r = 0.05;
    const auto res = metacore::train(fx.tasks, fx.theta0, cfg);
    REQUIRE(res.records.size() == 5);
    for (std::size_t n = 0; n < 5; ++n) {
        const auto& rec = res.records[n];
        CHECK(rec.iter == n);
        CHECK(rec.all_stable);
        CHECK(rec.per_task_gap.size() == 4);
        CHECK(std::isnan(rec.full_grad_norm_sq));
        CHECK(rec.per_task_gap == metacore::task_gaps(fx.tasks, rec.theta));
    }
    CHECK(res.theta_final == res.records.back().theta);
    CHECK(res.initial_gap == metacore::task_gaps(fx.tasks, fx.theta0));

    std::size_t seen = 0;
    const auto early = metacore::train(fx.tasks, fx.theta0, cfg, [&](const metacore::TrainRecord&) {
        return ++seen < 2;
    });
    CHECK(early.records.size() == 2);
    CHECK(early.records[1].theta == res.records[1].theta);
}

TEST_CASE("training is deterministic") {
    LqrFixture fx(6);
    auto cfg = config(SelectionMode::coreset, 2, 20, 5);
    cfg.eta_out = 1e-2;
    cfg.zo.r = 0.05;
    const auto a = metacore::train(fx.tasks, fx.theta0, cfg);
    const auto b = metacore::train(fx.tasks, fx.theta0, cfg);
    CHECK(a.theta_final == b.theta_final);
    CHECK(a.coreset.indices == b.coreset.indices);
    cfg.zo.seed = 4;
    CHECK_FALSE(metacore::train(fx.tasks, fx.theta0, cfg).theta_final == a.theta_final);
}

TEST_CASE("stability guard") {
    LqrFixture fx(6);
    auto cfg = config(SelectionMode::coreset, 2, 20, 10);
    cfg.zo.r = 0.05;
    cfg.eta_out = 1.0;
    CHECK_THROWS_AS(metacore::train(fx.tasks, fx.theta0, cfg), metacore::StabilityViolation);

    cfg.eta_out = 1e-2;
    CHECK_THROWS_AS(metacore::train(fx.tasks, 100.0 * Matrix::Ones(2, 3), cfg), metacore::ParameterError);
    CHECK_THROWS_AS(metacore::train(fx.tasks, Matrix::Zero(3, 2), cfg), metacore::DimensionError);
}

TEST_CASE("config validation") {
    auto cfg = config(SelectionMode::coreset, 0, 5, 1);
    CHECK_THROWS_AS(cfg.validate(4), metacore::ParameterError);
    cfg = config(SelectionMode::coreset, 1, 5, 0);
    CHECK_THROWS_AS(cfg.validate(4), metacore::ParameterError);
    cfg = config(SelectionMode::coreset, 1, 5, 1);
    cfg.eta_out = 0.0;
    CHECK_THROWS_AS(cfg.validate(4), metacore::ParameterError);
    CHECK_THROWS_AS(config(SelectionMode::coreset, 1, 5, 1).validate(0), metacore::ParameterError);
}

TEST_CASE("adaptation on test tasks") {
    LqrFixture fx(3);
    const Matrix K = Matrix::Zero(2, 3);

    const auto zero_steps = metacore::adapt_and_test(K, fx.tasks, 0, 0.05);
    for (std::size_t j = 0; j < 3; ++j) {
        REQUIRE(zero_steps[j].size() == 1);
        CHECK(zero_steps[j][0] == fx.tasks[j].gap(K));
    }

    const Matrix Ks = metacore::riccati_optimal(fx.pool.tasks[1]);
    const auto at_opt = metacore::adapt_and_test(Ks, {fx.tasks[1]}, 0, 0.05);
    CHECK(std::abs(at_opt[0][0]) <= 1e-10);

    const auto long_run = metacore::adapt_and_test(K, {fx.tasks[0]}, 3000, 0.05);
    const auto& row = long_run[0];
    CHECK(row.size() == 3001);
    CHECK(row.back() <= 1e-6);
    for (std::size_t k = 1; k < row.size(); ++k) CHECK(row[k] <= row[k - 1] + 1e-12);

    CHECK_THROWS_AS(metacore::adapt_and_test(100.0 * Matrix::Ones(2, 3), fx.tasks, 1, 0.01),
                    metacore::StabilityViolation);
    CHECK_THROWS_AS(metacore::adapt_and_test(K, fx.tasks, 50, 5.0), metacore::StabilityViolation);
}

TEST_CASE("selection bias snapshot") {
    const auto pool = quadratic_pool(4, 8);
    const Matrix theta = Matrix::Zero(2, 2);
    CHECK(metacore::selection_bias_snapshot(pool, Coreset::identity(4), theta) == 0.0);
    const double one = metacore::selection_bias_snapshot(pool, Coreset{{0}, {4}, 4}, theta);
    CHECK(one > 0.0);

}
