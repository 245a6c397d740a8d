#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "oracles.hpp"
#include "rbc/experiments.hpp"

using namespace rbc;

namespace {

/// Small, fast sweep defaults shared by the harness tests.
SweepSpec small_spec() {
    SweepSpec s;
    s.env_id = "gridworld5";
    s.expert_softness = 0.0;
    s.n_values = {1500};
    s.eps_values = {0.0, 0.2};
    s.algorithms = {Algo::bc, Algo::rbc};
    s.n_seeds = 3;
    s.n_eval_trials = 20;
    s.train.epochs = 150;
    s.train.learning_rate = 0.0035;
    s.train.entropy_coef = 0.0;
    s.train.median_window = 0;
    s.train.seed = 2024;
    return s;
}

}  // namespace

// ---------------------------------------------------------------------------
// Statistics helpers
// ---------------------------------------------------------------------------

TEST_CASE("average ranks break ties by averaging") {
    const std::vector<double> x{10.0, 20.0, 20.0, 5.0};
    const auto r = average_ranks(x);
    CHECK(r[3] == 1.0);
    CHECK(r[0] == 2.0);
    CHECK(r[1] == 3.5);
    CHECK(r[2] == 3.5);
}

TEST_CASE("spearman is one for any monotone map and minus one for its reverse") {
    Rng rng = make_rng(3);
    std::vector<double> x(30), y(30), z(30);
    for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] = uniform_in(rng, -5.0, 5.0);
        y[i] = std::exp(0.3 * x[i]) + 7.0;  // strictly increasing in x
        z[i] = -y[i];
    }
    CHECK_THAT(spearman(x, y), Catch::Matchers::WithinAbs(1.0, 1e-12));
    CHECK_THAT(spearman(x, z), Catch::Matchers::WithinAbs(-1.0, 1e-12));
    CHECK(spearman(x, x) == 1.0);
    CHECK_THROWS_AS(spearman(x, std::vector<double>{1.0}), config_error);
}

TEST_CASE("spearman of independent noise is near zero") {
    Rng rng = make_rng(5);
    std::vector<double> x(500), y(500);
    for (std::size_t i = 0; i < x.size(); ++i) {
        x[i] = uniform01(rng);
        y[i] = uniform01(rng);
    }
    CHECK(std::abs(spearman(x, y)) < 0.1);
}

TEST_CASE("linear fit recovers an exact line and its residual") {
    const std::vector<double> x{1.0, 2.0, 3.0, 4.0};
    std::vector<double> y;
    for (double v : x) y.push_back(-2.5 * v + 1.25);
    const auto f = linear_fit(x, y);
    CHECK_THAT(f.slope, Catch::Matchers::WithinAbs(-2.5, 1e-12));
    CHECK_THAT(f.intercept, Catch::Matchers::WithinAbs(1.25, 1e-12));
    CHECK_THAT(f.residual, Catch::Matchers::WithinAbs(0.0, 1e-12));
    CHECK_THROWS_AS(linear_fit(std::vector<double>{1.0, 1.0}, std::vector<double>{1.0, 2.0}),
                    config_error);
}

TEST_CASE("pooled standard error matches the direct formula") {
    const std::vector<double> a{1.0, 2.0, 3.0, 4.0};
    const std::vector<double> b{10.0, 14.0};
    const double sa = stddev_of(a) / 2.0;          // n = 4
    const double sb = stddev_of(b) / std::sqrt(2.0);
    CHECK_THAT(pooled_stderr(a, b), Catch::Matchers::WithinAbs(std::sqrt(sa * sa + sb * sb), 1e-12));
}

// ---------------------------------------------------------------------------
// SweepSpec
// ---------------------------------------------------------------------------

TEST_CASE("sweep spec round-trips through json") {
    auto s = small_spec();
    s.algorithms = {Algo::bc, Algo::rbc, Algo::mom_min, Algo::noisy_bc, Algo::oracle_bc};
    s.corruption_mode = CorruptionMode::boundary;
    const auto j = s.to_json();
    const auto s2 = SweepSpec::from_json(j);
    CHECK(s2.to_json() == j);
    CHECK(s2.algorithms.size() == 5);
    CHECK(s2.corruption_mode == CorruptionMode::boundary);
}

TEST_CASE("sweep spec validation rejects malformed inputs") {
    auto s = small_spec();
    s.eps_values = {0.5};
    CHECK_THROWS_AS(s.validate(), config_error);
    s = small_spec();
    s.n_values.clear();
    CHECK_THROWS_AS(s.validate(), config_error);
    s = small_spec();
    s.n_seeds = 0;
    CHECK_THROWS_AS(s.validate(), config_error);
    s = small_spec();
    s.algorithms.clear();
    CHECK_THROWS_AS(s.validate(), config_error);
    nlohmann::json j = small_spec().to_json();
    j["algorithms"] = {"bc", "dagger"};
    CHECK_THROWS_AS(SweepSpec::from_json(j), config_error);
}

TEST_CASE("sweep entry points enforce their grid shapes") {
    const auto ctx = make_tabular_context(gridworld5(), 0.0);
    auto s = small_spec();
    s.n_values = {100, 200};
    CHECK_THROWS_AS(sweep_epsilon(ctx, s), config_error);
    s = small_spec();
    s.eps_values = {0.1};
    CHECK_THROWS_AS(sweep_epsilon(ctx, s), config_error);
    s = small_spec();
    s.n_values = {100, 200};  // needs >= 3 for the sample-size sweep
    s.eps_values = {0.1};
    CHECK_THROWS_AS(sweep_sample_size(ctx, s), config_error);
    s = small_spec();
    CHECK_THROWS_AS(reward_vs_epoch(ctx, s), config_error);  // two eps values
}

// ---------------------------------------------------------------------------
// sweep_epsilon on the gridworld
// ---------------------------------------------------------------------------

TEST_CASE("epsilon sweep reproduces the robustness gap at desk scale") {
    const auto spec = small_spec();
    const auto ctx = make_tabular_context(gridworld5(), spec.expert_softness);
    const auto report = sweep_epsilon(ctx, spec);

    // Shape: one final row per (algorithm, eps, seed).
    CHECK(report.rows.size() == 2 * 2 * 3);
    for (const auto& row : report.rows) {
        CHECK(row.epoch == -1);
        CHECK(row.n == 1500);
        CHECK(std::isfinite(row.tv_sq));
        CHECK(std::isfinite(row.j_exact));
        CHECK(std::isfinite(row.final_tau));
    }

    const auto rbc0 = report.cell_returns("rbc", 1500, 0.0);
    const auto rbc2 = report.cell_returns("rbc", 1500, 0.2);
    const auto bc2 = report.cell_returns("bc", 1500, 0.2);
    REQUIRE(rbc0.size() == 3);
    REQUIRE(rbc2.size() == 3);
    // The robust learner barely moves under 20% corruption...
    CHECK(mean_of(rbc2) >= 0.9 * mean_of(rbc0));
    // ...while vanilla cloning collapses by much more than the noise floor.
    CHECK(mean_of(bc2) <= mean_of(rbc2) - 3.0 * pooled_stderr(bc2, rbc2));
}

TEST_CASE("rbc and the oracle are indistinguishable without corruption") {
    auto spec = small_spec();
    spec.expert_softness = 0.3;  // soft expert: returns carry real seed noise
    spec.eps_values = {0.0, 0.1};
    spec.algorithms = {Algo::rbc, Algo::oracle_bc};
    spec.n_seeds = 4;
    const auto ctx = make_tabular_context(gridworld5(), spec.expert_softness);
    const auto report = sweep_epsilon(ctx, spec);
    const auto rbc = report.cell_returns("rbc", 1500, 0.0);
    const auto orc = report.cell_returns("oracle_bc", 1500, 0.0);
    CHECK(std::abs(mean_of(rbc) - mean_of(orc)) <=
          2.0 * pooled_stderr(rbc, orc) + 0.02 * ctx.expert_return);
}

TEST_CASE("sweeps are bit-identical across reruns and worker counts") {
    auto spec = small_spec();
    spec.train.epochs = 40;  // shape test only; no convergence needed
    const auto ctx = make_tabular_context(gridworld5(), spec.expert_softness);
    auto csv_of = [&](const EvalReport& r) {
        std::ostringstream os;
        r.write_csv(os);
        return os.str();
    };
    const auto a = csv_of(sweep_epsilon(ctx, spec));
    const auto b = csv_of(sweep_epsilon(ctx, spec));
    CHECK(a == b);
    spec.workers = 3;
    auto c = sweep_epsilon(ctx, spec);
    // Worker scheduling must not leak into results; rows may arrive in any
    // order, so compare them sorted.
    auto lines = [&](std::string s) {
        std::vector<std::string> out;
        std::istringstream is(s);
        for (std::string l; std::getline(is, l);) out.push_back(l);
        std::sort(out.begin(), out.end());
        return out;
    };
    CHECK(lines(a) == lines(csv_of(c)));
}

TEST_CASE("a vanishing corruption count makes bc and rbc agree") {
    auto spec = small_spec();
    spec.n_values = {45};          // floor(0.02 * 45) = 0 corrupted pairs
    spec.eps_values = {0.0, 0.02};
    spec.n_seeds = 4;
    spec.train.epochs = 500;  // tiny N: few steps per epoch, so train longer
    spec.train.learning_rate = 0.01;
    const auto ctx = make_tabular_context(gridworld5(), spec.expert_softness);
    const auto report = sweep_epsilon(ctx, spec);
    const auto bc = report.cell_returns("bc", 45, 0.02);
    const auto rbc = report.cell_returns("rbc", 45, 0.02);
    CHECK(std::abs(mean_of(bc) - mean_of(rbc)) <=
          2.0 * pooled_stderr(bc, rbc) + 0.05 * ctx.expert_return);
}

TEST_CASE("report summary aggregates cells with seed counts") {
    auto spec = small_spec();
    spec.train.epochs = 30;
    const auto ctx = make_tabular_context(gridworld5(), spec.expert_softness);
    const auto report = sweep_epsilon(ctx, spec);
    const auto j = report.summary();
    CHECK(j.at("env") == "gridworld5");
    CHECK(j.at("cells").size() == 4);
    for (const auto& [key, cell] : j.at("cells").items()) {
        CHECK(cell.at("n_seeds") == 3);
        CHECK(cell.contains("ret_stderr"));
        CHECK(cell.contains("tv_sq_mean"));
    }
}

// ---------------------------------------------------------------------------
// sweep_sample_size / reward_vs_epoch
// ---------------------------------------------------------------------------

TEST_CASE("sample-size sweep shows rbc improving while bc stalls") {
    auto spec = small_spec();
    spec.n_values = {250, 500, 1000, 2000};
    spec.eps_values = {0.15};
    spec.n_seeds = 3;
    const auto ctx = make_tabular_context(gridworld5(), spec.expert_softness);
    const auto report = sweep_sample_size(ctx, spec);
    std::vector<double> ns, rbc_means;
    for (std::size_t n : spec.n_values) {
        ns.push_back(static_cast<double>(n));
        rbc_means.push_back(mean_of(report.cell_returns("rbc", n, 0.15)));
    }
    CHECK(spearman(ns, rbc_means) >= 0.6);
    const auto bc_big = report.cell_returns("bc", 2000, 0.15);
    CHECK(mean_of(bc_big) < 0.95 * ctx.expert_return);
}

TEST_CASE("reward-vs-epoch curves start at the init and converge for rbc") {
    auto spec = small_spec();
    spec.n_values = {1000};
    spec.eps_values = {0.2};
    spec.algorithms = {Algo::rbc};
    spec.n_seeds = 2;
    spec.train.epochs = 200;
    spec.eval_every = 5;
    const auto ctx = make_tabular_context(gridworld5(), spec.expert_softness);
    const auto report = reward_vs_epoch(ctx, spec);
    // 0, 5, ..., 200 plus the final row, per seed.
    CHECK(report.rows.size() == 2 * (1 + 40 + 1));
    for (int seed = 0; seed < 2; ++seed) {
        std::vector<const CellRow*> curve;
        for (const auto& r : report.rows)
            if (r.seed == seed) curve.push_back(&r);
        // Epoch-0 row is the uniform random init: exact return of uniform.
        const auto uniform = TabularSoftmaxPolicy::zeros(25, 4);
        const auto* first = curve.front();
        CHECK(first->epoch == 0);
        CHECK_THAT(first->j_exact,
                   Catch::Matchers::WithinAbs(exact_return(ctx.mdp, uniform.probs_table()), 1e-12));
        // The curve converges well above the corrupted-mixture plateau.
        const auto* last = curve.back();
        CHECK(last->epoch == -1);
        CHECK(last->ret_norm >= 0.9);
    }
}

// ---------------------------------------------------------------------------
// tv_bound_check and the suboptimality bridge
// ---------------------------------------------------------------------------

TEST_CASE("clean bc squared tv error decays at the 1/N rate") {
    const auto ctx = make_tabular_context(gridworld5(), 0.3);
    TrainConfig cfg;
    cfg.epochs = 200;
    cfg.learning_rate = 0.005;
    cfg.entropy_coef = 0.0;
    cfg.seed = 7;
    const std::vector<std::size_t> ns{500, 1000, 2000, 4000};
    const auto report = tv_bound_check(ctx, ns, 3, cfg);
    CHECK(report.rows.size() == 12);
    CHECK(report.slope > -1.35);
    CHECK(report.slope < -0.65);
    std::ostringstream os;
    report.write_csv(os);
    CHECK(os.str().find("slope=") != std::string::npos);
}

TEST_CASE("the expert itself has zero tv error") {
    const auto ctx = make_tabular_context(gridworld5(), 0.3);
    CHECK(tv_distance(ctx.expert, ctx.expert, ctx.expert_state_w) == 0.0);
}

TEST_CASE("the counting mle of greedy demos has vanishing tv error") {
    const auto ctx = make_tabular_context(gridworld5(), 0.0);
    const auto d = collect_demos_tabular(ctx.mdp, ctx.expert, 4000, 0, 9);
    const auto mle = oracle::tabular_mle(d, 25, 4);
    auto pol = TabularSoftmaxPolicy::zeros(25, 4);
    for (std::size_t i = 0; i < mle.size(); ++i)
        pol.logits[i] = mle[i] > 0.0 ? std::log(mle[i]) : -1e9;
    CHECK(tv_distance(pol, ctx.expert, ctx.expert_state_w) < 1e-6);
}

TEST_CASE("the suboptimality of every tabular cell obeys the tv bound") {
    const auto spec = small_spec();
    const auto ctx = make_tabular_context(gridworld5(), spec.expert_softness);
    const auto report = sweep_epsilon(ctx, spec);
    const double gamma = ctx.mdp.gamma;
    for (const auto& [algo, eps] : std::vector<std::pair<std::string, double>>{
             {"bc", 0.0}, {"bc", 0.2}, {"rbc", 0.0}, {"rbc", 0.2}}) {
        std::vector<double> gaps, bounds;
        for (const auto& r : report.rows) {
            if (r.algorithm != algo || r.eps != eps) continue;
            gaps.push_back(ctx.expert_return - r.j_exact);
            bounds.push_back(2.0 * std::sqrt(r.tv_sq) / ((1.0 - gamma) * (1.0 - gamma)));
        }
        REQUIRE(gaps.size() == 3);
        const double slack = 5.0 * stderr_of(gaps);
        CHECK(mean_of(gaps) <= mean_of(bounds) + slack + 1e-9);
    }
}
