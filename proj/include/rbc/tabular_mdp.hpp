#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cmath>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rbc/common.hpp"

namespace rbc {

/// Finite MDP with dense transition tensor P[s][a][s'] and reward table r[s][a].
struct TabularMDP {
    int n_states = 0;
    int n_actions = 0;
    std::vector<double> transition;  // n_states * n_actions * n_states, row-major
    std::vector<double> reward;      // n_states * n_actions
    double gamma = 0.95;
    std::vector<double> initial_dist;  // over states
    double r_max = 1.0;

    using state_t = int;
    using action_t = int;

    double p(int s, int a, int s2) const {
        return transition[(static_cast<std::size_t>(s) * n_actions + a) * n_states + s2];
    }
    double& p(int s, int a, int s2) {
        return transition[(static_cast<std::size_t>(s) * n_actions + a) * n_states + s2];
    }
    double r(int s, int a) const { return reward[static_cast<std::size_t>(s) * n_actions + a]; }
    double& r(int s, int a) { return reward[static_cast<std::size_t>(s) * n_actions + a]; }

    std::span<const double> row(int s, int a) const {
        return {transition.data() + (static_cast<std::size_t>(s) * n_actions + a) * n_states,
                static_cast<std::size_t>(n_states)};
    }

    void validate() const {
        if (n_states <= 0 || n_actions <= 0) throw config_error("TabularMDP: n_states and n_actions must be positive");
        if (gamma <= 0.0 || gamma >= 1.0) throw config_error("TabularMDP: gamma must lie in (0,1)");
        if (r_max <= 0.0) throw config_error("TabularMDP: r_max must be positive");
        double mu = 0.0;
        for (double x : initial_dist) {
            if (x < 0.0) throw config_error("TabularMDP: initial_dist has a negative entry");
            mu += x;
        }
        if (std::abs(mu - 1.0) > 1e-9) throw config_error("TabularMDP: initial_dist does not sum to 1");
        for (int s = 0; s < n_states; ++s)
            for (int a = 0; a < n_actions; ++a) {
                double sum = 0.0;
                for (int s2 = 0; s2 < n_states; ++s2) {
                    const double x = p(s, a, s2);
                    if (x < 0.0) throw config_error("TabularMDP: negative transition probability");
                    sum += x;
                }
                if (std::abs(sum - 1.0) > 1e-9) throw config_error("TabularMDP: transition row does not sum to 1");
                if (r(s, a) < 0.0 || r(s, a) > r_max) throw config_error("TabularMDP: reward outside [0, r_max]");
            }
    }

    static TabularMDP zeros(int n_states, int n_actions, double gamma) {
        TabularMDP m;
        m.n_states = n_states;
        m.n_actions = n_actions;
        m.gamma = gamma;
        m.transition.assign(static_cast<std::size_t>(n_states) * n_actions * n_states, 0.0);
        m.reward.assign(static_cast<std::size_t>(n_states) * n_actions, 0.0);
        m.initial_dist.assign(n_states, 0.0);
        return m;
    }

    int initial_state(Rng& rng) const { return sample_discrete(initial_dist, rng); }

    std::pair<int, double> step(int s, int a, Rng& rng) const {
        return {sample_discrete(row(s, a), rng), r(s, a)};
    }
};

struct ValueIterationResult {
    std::vector<double> q;          // n_states * n_actions
    std::vector<int> greedy;        // per-state argmax, ties to smallest index
    double residual = 0.0;
    int iterations = 0;

    double q_at(int s, int a, int n_actions) const {
        return q[static_cast<std::size_t>(s) * n_actions + a];
    }
};

/// Q-value iteration to Bellman residual ||TQ - Q||inf <= tol.
inline ValueIterationResult value_iteration(const TabularMDP& mdp, double tol, int max_iters = 1000000) {
    if (tol <= 0.0) throw config_error("value_iteration: tol must be positive");
    mdp.validate();
    const int S = mdp.n_states, A = mdp.n_actions;
    std::vector<double> q(static_cast<std::size_t>(S) * A, 0.0), q_next(q.size());
    std::vector<double> v(S, 0.0);
    double res = 0.0;
    int it = 0;
    for (; it < max_iters; ++it) {
        for (int s = 0; s < S; ++s) {
            double best = q[static_cast<std::size_t>(s) * A];
            for (int a = 1; a < A; ++a) best = std::max(best, q[static_cast<std::size_t>(s) * A + a]);
            v[s] = best;
        }
        res = 0.0;
        for (int s = 0; s < S; ++s)
            for (int a = 0; a < A; ++a) {
                double ev = 0.0;
                const auto row = mdp.row(s, a);
                for (int s2 = 0; s2 < S; ++s2) ev += row[s2] * v[s2];
                const double t = mdp.r(s, a) + mdp.gamma * ev;
                res = std::max(res, std::abs(t - q[static_cast<std::size_t>(s) * A + a]));
                q_next[static_cast<std::size_t>(s) * A + a] = t;
            }
        q.swap(q_next);
        if (res <= tol) break;
    }
    if (res > tol)
        throw std::runtime_error("value_iteration: no convergence within iteration cap, residual " +
                                 std::to_string(res));
    ValueIterationResult out;
    out.q = std::move(q);
    out.residual = res;
    out.iterations = it + 1;
    out.greedy.resize(S);
    for (int s = 0; s < S; ++s) {
        int best = 0;
        for (int a = 1; a < A; ++a)
            if (out.q[static_cast<std::size_t>(s) * A + a] > out.q[static_cast<std::size_t>(s) * A + best]) best = a;
        out.greedy[s] = best;
    }
    return out;
}

/// Exact V^pi by solving (I - gamma P_pi) V = r_pi. probs is pi[s][a], row-major.
inline std::vector<double> policy_evaluation(const TabularMDP& mdp, std::span<const double> probs) {
    const int S = mdp.n_states, A = mdp.n_actions;
    Eigen::MatrixXd m = Eigen::MatrixXd::Identity(S, S);
    Eigen::VectorXd rpi(S);
    for (int s = 0; s < S; ++s) {
        double rs = 0.0;
        for (int a = 0; a < A; ++a) {
            const double pa = probs[static_cast<std::size_t>(s) * A + a];
            rs += pa * mdp.r(s, a);
            const auto row = mdp.row(s, a);
            for (int s2 = 0; s2 < S; ++s2) m(s, s2) -= mdp.gamma * pa * row[s2];
        }
        rpi(s) = rs;
    }
    const Eigen::VectorXd v = m.partialPivLu().solve(rpi);
    return {v.data(), v.data() + S};
}

/// J_pi = mu0 . V^pi, exact.
inline double exact_return(const TabularMDP& mdp, std::span<const double> probs) {
    const auto v = policy_evaluation(mdp, probs);
    double j = 0.0;
    for (int s = 0; s < mdp.n_states; ++s) j += mdp.initial_dist[s] * v[s];
    return j;
}

/// Discounted state-action visitation rho_pi(s,a) = (1-gamma) sum_t gamma^t rho_t.
/// Solves the flow equation d = (1-gamma) mu0 + gamma P_pi^T d, then rho(s,a) = d(s) pi(a|s).
inline std::vector<double> stationary_visitation(const TabularMDP& mdp, std::span<const double> probs) {
    const int S = mdp.n_states, A = mdp.n_actions;
    Eigen::MatrixXd m = Eigen::MatrixXd::Identity(S, S);
    for (int s = 0; s < S; ++s)
        for (int a = 0; a < A; ++a) {
            const double pa = probs[static_cast<std::size_t>(s) * A + a];
            const auto row = mdp.row(s, a);
            for (int s2 = 0; s2 < S; ++s2) m(s2, s) -= mdp.gamma * pa * row[s2];
        }
    Eigen::VectorXd mu0(S);
    for (int s = 0; s < S; ++s) mu0(s) = (1.0 - mdp.gamma) * mdp.initial_dist[s];
    const Eigen::VectorXd d = m.partialPivLu().solve(mu0);
    std::vector<double> rho(static_cast<std::size_t>(S) * A);
    for (int s = 0; s < S; ++s)
        for (int a = 0; a < A; ++a)
            rho[static_cast<std::size_t>(s) * A + a] = d(s) * probs[static_cast<std::size_t>(s) * A + a];
    return rho;
}

/// Marginal over states of a state-action distribution.
inline std::vector<double> state_marginal(const TabularMDP& mdp, std::span<const double> rho) {
    std::vector<double> d(mdp.n_states, 0.0);
    for (int s = 0; s < mdp.n_states; ++s)
        for (int a = 0; a < mdp.n_actions; ++a) d[s] += rho[static_cast<std::size_t>(s) * mdp.n_actions + a];
    return d;
}

// ---------------------------------------------------------------------------
// Gridworld construction
// ---------------------------------------------------------------------------

// Rows of '.', '#' (wall), 'S' (start), 'G' (goal). Actions: 0 up, 1 down,
// 2 left, 3 right; bumping a wall or the border stays put. Reward 1 on every
// action taken at the goal cell; the goal transitions back to the start.
inline TabularMDP gridworld_from_ascii(const std::vector<std::string>& rows, double gamma) {
    if (rows.empty()) throw config_error("gridworld: empty map");
    const int h = static_cast<int>(rows.size());
    const int w = static_cast<int>(rows[0].size());
    int start = -1, goal = -1;
    for (int y = 0; y < h; ++y) {
        if (static_cast<int>(rows[y].size()) != w) throw config_error("gridworld: ragged map rows");
        for (int x = 0; x < w; ++x) {
            const char c = rows[y][x];
            if (c == 'S') start = y * w + x;
            else if (c == 'G') goal = y * w + x;
            else if (c != '.' && c != '#') throw config_error("gridworld: unknown map character");
        }
    }
    if (start < 0 || goal < 0) throw config_error("gridworld: map needs exactly one S and one G");

    auto wall = [&](int y, int x) { return y < 0 || y >= h || x < 0 || x >= w || rows[y][x] == '#'; };
    TabularMDP m = TabularMDP::zeros(h * w, 4, gamma);
    m.r_max = 1.0;
    m.initial_dist[start] = 1.0;
    constexpr int dy[4] = {-1, 1, 0, 0};
    constexpr int dx[4] = {0, 0, -1, 1};
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int s = y * w + x;
            for (int a = 0; a < 4; ++a) {
                if (s == goal) {
                    m.r(s, a) = 1.0;
                    m.p(s, a, start) = 1.0;
                    continue;
                }
                const int ny = y + dy[a], nx = x + dx[a];
                m.p(s, a, wall(ny, nx) ? s : ny * w + nx) = 1.0;
            }
        }
    m.validate();
    return m;
}

/// The default 5x5 desk-scale task: start top-left, goal bottom-right.
inline TabularMDP gridworld5(double gamma = 0.95) {
    return gridworld_from_ascii({"S....", ".....", ".....", ".....", "....G"}, gamma);
}

inline TabularMDP tabular_from_json(const nlohmann::json& j) {
    const std::string type = j.value("type", "tabular");
    if (type == "gridworld") {
        return gridworld_from_ascii(j.at("map").get<std::vector<std::string>>(), j.value("gamma", 0.95));
    }
    if (type != "tabular") throw config_error("tabular_from_json: unknown env type '" + type + "'");
    TabularMDP m;
    m.n_states = j.at("n_states").get<int>();
    m.n_actions = j.at("n_actions").get<int>();
    m.gamma = j.at("gamma").get<double>();
    m.r_max = j.value("r_max", 1.0);
    m.transition = j.at("transition").get<std::vector<double>>();
    m.reward = j.at("reward").get<std::vector<double>>();
    m.initial_dist = j.at("initial_dist").get<std::vector<double>>();
    if (m.transition.size() != static_cast<std::size_t>(m.n_states) * m.n_actions * m.n_states)
        throw config_error("tabular_from_json: transition size mismatch");
    if (m.reward.size() != static_cast<std::size_t>(m.n_states) * m.n_actions)
        throw config_error("tabular_from_json: reward size mismatch");
    m.validate();
    return m;
}

}  // namespace rbc
