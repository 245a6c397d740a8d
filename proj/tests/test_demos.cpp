#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "oracles.hpp"
#include "rbc/demos.hpp"
#include "rbc/policy.hpp"
#include "rbc/pointmass.hpp"
#include "rbc/tabular_mdp.hpp"

using namespace rbc;

namespace {

TabularMDP chain_mdp(int n = 5, double gamma = 0.9) {
    auto m = TabularMDP::zeros(n, 2, gamma);
    for (int s = 0; s < n; ++s) {
        const int next = std::min(s + 1, n - 1);
        m.p(s, 0, next) = 1.0;
        m.p(s, 1, s) = 1.0;
        if (s == n - 1) m.r(s, 0) = m.r(s, 1) = 1.0;
    }
    m.initial_dist.assign(n, 0.0);
    m.initial_dist[0] = 1.0;
    m.validate();
    return m;
}

TabularSoftmaxPolicy advance_policy(int n) {
    auto pi = TabularSoftmaxPolicy::zeros(n, 2);
    for (int s = 0; s < n; ++s) pi.logits[s * 2 + 1] = -1e9;
    return pi;
}

std::string temp_path(const char* name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("demos from a deterministic chain and expert are the unique pairs") {
    const auto m = chain_mdp();
    const auto pi = advance_policy(5);
    const auto d = collect_demos_tabular(m, pi, 5, 100, 1);
    REQUIRE(d.size() == 5);
    // Action is always 0; states advance from the start until an episode
    // reset, which also restarts at state 0 (deterministic layout).
    for (std::size_t i = 0; i < 5; ++i) CHECK(d.actions[i] == 0);
    CHECK(d.states[0] == 0);
    for (std::size_t i = 1; i < 5; ++i) {
        const bool advanced = d.states[i] == std::min<std::uint32_t>(d.states[i - 1] + 1, 4);
        const bool reset = d.states[i] == 0;
        CHECK((advanced || reset));
    }
    for (auto mset : d.corrupted_mask) CHECK(mset == 0);
}

TEST_CASE("collect_demos is deterministic under a fixed seed") {
    const auto m = gridworld5();
    const auto pi = expert_policy(m, 0.5);
    const auto d1 = collect_demos_tabular(m, pi, 500, 0, 42);
    const auto d2 = collect_demos_tabular(m, pi, 500, 0, 42);
    CHECK(d1.states == d2.states);
    CHECK(d1.actions == d2.actions);
    const auto d3 = collect_demos_tabular(m, pi, 500, 0, 43);
    CHECK(d1.states != d3.states);
}

TEST_CASE("demo pair frequencies match the exact visitation distribution") {
    // A dense random MDP mixes quickly, so the temporal correlation within
    // episodes does not dominate the sampling noise of the frequency table.
    auto m = TabularMDP::zeros(6, 3, 0.9);
    Rng rng = make_rng(5);
    for (int s = 0; s < 6; ++s)
        for (int a = 0; a < 3; ++a) {
            double tot = 0.0;
            for (int s2 = 0; s2 < 6; ++s2) {
                m.p(s, a, s2) = 0.05 + uniform01(rng);
                tot += m.p(s, a, s2);
            }
            for (int s2 = 0; s2 < 6; ++s2) m.p(s, a, s2) /= tot;
            m.r(s, a) = uniform01(rng);
        }
    m.initial_dist.assign(6, 1.0 / 6);
    m.validate();
    const auto pi = expert_policy(m, 0.5);
    const std::size_t n = 100000;
    const auto d = collect_demos_tabular(m, pi, n, 0, 7);
    const auto rho = stationary_visitation(m, pi.probs_table());
    std::vector<double> freq(rho.size(), 0.0);
    for (std::size_t i = 0; i < n; ++i) freq[d.states[i] * 3 + d.actions[i]] += 1.0 / n;
    double l1 = 0.0;
    for (std::size_t i = 0; i < rho.size(); ++i) l1 += std::abs(freq[i] - rho[i]);
    CHECK(l1 < 0.02);
}

TEST_CASE("corrupt with epsilon 0 is the identity") {
    const auto m = chain_mdp();
    const auto d = collect_demos_tabular(m, advance_policy(5), 50, 0, 3);
    CorruptionSpec spec;
    spec.epsilon = 0.0;
    const auto c = corrupt(d, spec, 2);
    CHECK(c.states == d.states);
    CHECK(c.actions == d.actions);
    CHECK(c.corrupted_mask == d.corrupted_mask);
}

TEST_CASE("corrupt flips exactly floor(eps N) pairs and leaves states alone") {
    const auto m = gridworld5();
    const auto d = collect_demos_tabular(m, expert_policy(m, 0.5), 10, 0, 5);
    CorruptionSpec spec;
    spec.epsilon = 0.2;
    spec.seed = 9;
    const auto c = corrupt(d, spec, 4);
    CHECK(c.states == d.states);
    std::size_t flips = 0;
    for (std::size_t i = 0; i < c.size(); ++i) {
        if (c.corrupted_mask[i]) {
            ++flips;
            CHECK(c.actions[i] != d.actions[i]);  // never a no-op corruption
            CHECK(c.actions[i] < 4);
        } else {
            CHECK(c.actions[i] == d.actions[i]);  // measure-preserving off-mask
        }
    }
    CHECK(flips == 2);
}

TEST_CASE("boundary corruption sets continuous actions to -1 or +1") {
    const auto env = PointMassEnv::make_default();
    const auto expert = expert_policy(env, 0.1);
    const auto d = collect_demos_continuous(env, expert, 10, 0, 11);
    CorruptionSpec spec;
    spec.epsilon = 0.2;
    spec.mode = CorruptionMode::boundary;
    spec.seed = 1;
    const auto c = corrupt(d, spec);
    std::size_t flips = 0;
    for (std::size_t i = 0; i < c.size(); ++i) {
        if (!c.corrupted_mask[i]) continue;
        ++flips;
        const double a = c.action(i)[0];
        CHECK((a == -1.0 || a == 1.0));
    }
    CHECK(flips == 2);
}

TEST_CASE("uniform corruption has near-zero mean over many corrupted entries") {
    const auto env = PointMassEnv::make_default();
    const auto expert = expert_policy(env, 0.1);
    const auto d = collect_demos_continuous(env, expert, 50000, 0, 13);
    CorruptionSpec spec;
    spec.epsilon = 0.2;
    spec.mode = CorruptionMode::uniform;
    spec.seed = 21;
    const auto c = corrupt(d, spec);
    double sum = 0.0;
    std::size_t k = 0;
    for (std::size_t i = 0; i < c.size(); ++i)
        if (c.corrupted_mask[i]) {
            sum += c.action(i)[0];
            ++k;
        }
    REQUIRE(k == 10000);
    CHECK(std::abs(sum / k) <= 0.02);
}

TEST_CASE("corruption spec validation") {
    CorruptionSpec spec;
    spec.epsilon = 0.5;
    CHECK_THROWS_AS(spec.validate(), config_error);
    spec.epsilon = -0.1;
    CHECK_THROWS_AS(spec.validate(), config_error);
    spec.epsilon = 0.49;
    CHECK_NOTHROW(spec.validate());
}

TEST_CASE("eps*N < 1 corrupts zero pairs") {
    const auto m = chain_mdp();
    const auto d = collect_demos_tabular(m, advance_policy(5), 4, 0, 3);
    CorruptionSpec spec;
    spec.epsilon = 0.2;  // floor(0.8) = 0
    const auto c = corrupt(d, spec, 2);
    for (auto mset : c.corrupted_mask) CHECK(mset == 0);
}

TEST_CASE("adversarial index hook corrupts exactly the requested pairs") {
    const auto m = gridworld5();
    const auto d = collect_demos_tabular(m, expert_policy(m, 0.5), 20, 0, 2);
    CorruptionSpec spec;
    spec.epsilon = 0.2;
    spec.custom_indices = std::vector<std::uint32_t>{3, 7, 11};
    spec.fixed_action = 0;
    const auto c = corrupt(d, spec, 4);
    for (std::size_t i = 0; i < c.size(); ++i) {
        const bool expected = (i == 3 || i == 7 || i == 11);
        CHECK(static_cast<bool>(c.corrupted_mask[i]) == expected);
        if (expected) CHECK(c.actions[i] == 0);
    }
}

TEST_CASE("tabular dataset IO round-trips bit-exactly") {
    const auto m = gridworld5();
    auto d = collect_demos_tabular(m, expert_policy(m, 0.5), 333, 0, 6);
    d.meta.env_id = "gridworld5";
    d.meta.expert_softness = 0.5;
    CorruptionSpec spec;
    spec.epsilon = 0.1;
    spec.seed = 2;
    d = corrupt(d, spec, 4);
    const auto path = temp_path("ds_tab.rbcd");
    save_dataset(d, path);
    const auto d2 = load_tabular_dataset(path);
    CHECK(d2.states == d.states);
    CHECK(d2.actions == d.actions);
    CHECK(d2.corrupted_mask == d.corrupted_mask);
    CHECK(d2.meta.env_id == d.meta.env_id);
    CHECK(d2.meta.expert_softness == d.meta.expert_softness);
    CHECK(d2.meta.epsilon == d.meta.epsilon);
    CHECK(d2.meta.seed == d.meta.seed);
}

TEST_CASE("continuous dataset IO round-trips bit-exactly") {
    const auto env = PointMassEnv::make_default();
    const auto d = collect_demos_continuous(env, expert_policy(env, 0.1), 123, 0, 8);
    const auto path = temp_path("ds_cont.rbcd");
    save_dataset(d, path);
    const auto d2 = load_continuous_dataset(path);
    CHECK(d2.state_dim == d.state_dim);
    CHECK(d2.action_dim == d.action_dim);
    CHECK(d2.states == d.states);
    CHECK(d2.actions == d.actions);
    CHECK(d2.corrupted_mask == d.corrupted_mask);
}

TEST_CASE("truncated dataset files fail closed") {
    const auto m = gridworld5();
    const auto d = collect_demos_tabular(m, expert_policy(m, 0.5), 100, 0, 6);
    const auto path = temp_path("ds_trunc.rbcd");
    save_dataset(d, path);
    std::ifstream in(path, std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    for (const std::size_t cut : {std::size_t{3}, std::size_t{10}, bytes.size() / 2, bytes.size() - 2}) {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        out.write(bytes.data(), static_cast<std::streamsize>(cut));
        out.close();
        CHECK_THROWS_AS(load_dataset(path), parse_error);
    }
}

TEST_CASE("a 60000-pair dataset round-trips with the right size") {
    const auto m = gridworld5();
    const auto d = collect_demos_tabular(m, expert_policy(m, 0.5), 60000, 0, 12);
    const auto path = temp_path("ds_60k.rbcd");
    save_dataset(d, path);
    const auto d2 = load_tabular_dataset(path);
    CHECK(d2.size() == 60000);
    CHECK(d2.states == d.states);
}

TEST_CASE("softness-0 demos admit exact expert recovery by counting") {
    const auto m = gridworld5();
    const auto vi = value_iteration(m, 1e-10);
    const auto pi = expert_policy(m, 0.0);
    const auto d = collect_demos_tabular(m, pi, 5000, 0, 19);
    const auto mle = oracle::tabular_mle(d, m.n_states, m.n_actions);
    for (std::size_t i = 0; i < d.size(); ++i) {
        const int s = d.states[i];
        // Every observed state's MLE argmax is the greedy expert action.
        int best = 0;
        for (int a = 1; a < 4; ++a)
            if (mle[s * 4 + a] > mle[s * 4 + best]) best = a;
        CHECK(best == vi.greedy[s]);
    }
}
