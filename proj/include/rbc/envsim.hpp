#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include "rbc/common.hpp"

namespace rbc {

template <class State, class Action>
struct Trajectory {
    struct Step {
        State state;
        Action action;
        double reward;
    };
    std::vector<Step> steps;

    double discounted_return(double gamma) const {
        double j = 0.0, g = 1.0;
        for (const auto& st : steps) {
            j += g * st.reward;
            g *= gamma;
        }
        return j;
    }
};

/// Smallest H with gamma^H <= 1e-3 (1-gamma), so the truncation bias of a
/// discounted return is below 1e-3 r_max/(1-gamma).
inline int default_horizon(double gamma) {
    const double target = 1e-3 * (1.0 - gamma);
    return static_cast<int>(std::ceil(std::log(target) / std::log(gamma)));
}

template <class Env, class Pol>
Trajectory<typename Env::state_t, typename Env::action_t> rollout(const Env& env, const Pol& policy,
                                                                  int horizon, seed_t seed) {
    if (horizon < 1) throw config_error("rollout: horizon must be >= 1");
    Rng rng = make_rng(seed);
    Trajectory<typename Env::state_t, typename Env::action_t> traj;
    traj.steps.reserve(horizon);
    auto state = env.initial_state(rng);
    for (int t = 0; t < horizon; ++t) {
        auto action = policy.sample_action(state, rng);
        auto [next, reward] = env.step(state, action, rng);
        traj.steps.push_back({std::move(state), std::move(action), reward});
        state = std::move(next);
    }
    return traj;
}

struct ReturnEstimate {
    double mean = 0.0;
    double std = 0.0;
};

/// Monte-Carlo estimate of J_pi over n_trials independent rollouts.
/// horizon <= 0 selects default_horizon(env.gamma).
template <class Env, class Pol>
ReturnEstimate estimate_return(const Env& env, const Pol& policy, int n_trials, int horizon,
                               seed_t seed) {
    if (n_trials < 1) throw config_error("estimate_return: n_trials must be >= 1");
    if (horizon <= 0) horizon = default_horizon(env.gamma);
    std::vector<double> returns(n_trials);
    for (int k = 0; k < n_trials; ++k)
        returns[k] = rollout(env, policy, horizon, split_seed(seed, k)).discounted_return(env.gamma);
    return {mean_of(returns), stddev_of(returns)};
}

}  // namespace rbc
