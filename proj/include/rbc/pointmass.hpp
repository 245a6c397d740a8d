#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cmath>
#include <utility>
#include <vector>

#include "rbc/common.hpp"

namespace rbc {

/// Linear point-mass (double integrator by default) with bounded actions in
/// [-1, 1] and reward exp(-||s||^2) in (0, 1].
struct PointMassEnv {
    int state_dim = 2;
    int action_dim = 1;
    Eigen::MatrixXd dynamics_a;  // state_dim x state_dim
    Eigen::MatrixXd dynamics_b;  // state_dim x action_dim
    double noise_std = 0.0;
    double gamma = 0.95;
    double action_low = -1.0;
    double action_high = 1.0;
    Eigen::VectorXd init_mean;
    double init_std = 0.05;

    using state_t = std::vector<double>;
    using action_t = std::vector<double>;

    static PointMassEnv make_default(double dt = 0.2, double noise_std = 0.0, double gamma = 0.95) {
        PointMassEnv e;
        e.noise_std = noise_std;
        e.gamma = gamma;
        e.dynamics_a.resize(2, 2);
        e.dynamics_a << 1.0, dt, 0.0, 1.0;
        e.dynamics_b.resize(2, 1);
        e.dynamics_b << 0.0, dt;
        e.init_mean.resize(2);
        e.init_mean << 1.0, 0.0;
        return e;
    }

    double clip_action(double a) const { return std::clamp(a, action_low, action_high); }

    std::vector<double> initial_state(Rng& rng) const {
        std::vector<double> s(state_dim);
        for (int i = 0; i < state_dim; ++i) s[i] = init_mean(i) + init_std * normal01(rng);
        return s;
    }

    double reward_of(const std::vector<double>& s) const {
        double n2 = 0.0;
        for (double x : s) n2 += x * x;
        return std::exp(-n2);
    }

    // Reward depends on the current state only; the action is clipped before
    // the dynamics are applied.
    std::pair<std::vector<double>, double> step(const std::vector<double>& s,
                                                const std::vector<double>& a, Rng& rng) const {
        Eigen::VectorXd sv = Eigen::Map<const Eigen::VectorXd>(s.data(), state_dim);
        Eigen::VectorXd av(action_dim);
        for (int i = 0; i < action_dim; ++i) av(i) = clip_action(a[i]);
        Eigen::VectorXd next = dynamics_a * sv + dynamics_b * av;
        for (int i = 0; i < state_dim; ++i) next(i) += noise_std * normal01(rng);
        return {std::vector<double>(next.data(), next.data() + state_dim), reward_of(s)};
    }
};

/// Infinite-horizon LQR gain by Riccati iteration for cost s'Qs + a'Ra.
inline Eigen::MatrixXd riccati_gain(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                                    const Eigen::MatrixXd& q, const Eigen::MatrixXd& r,
                                    int iters = 500) {
    Eigen::MatrixXd p = q;
    for (int i = 0; i < iters; ++i) {
        const Eigen::MatrixXd btp = b.transpose() * p;
        const Eigen::MatrixXd k = (r + btp * b).ldlt().solve(btp * a);
        p = q + a.transpose() * p * a - a.transpose() * p * b * k;
    }
    const Eigen::MatrixXd btp = b.transpose() * p;
    return (r + btp * b).ldlt().solve(btp * a);
}

/// Near-optimal expert for PointMassEnv: mean = clip(-K s), Gaussian noise
/// with std = softness added after clipping.
struct LqrExpertPolicy {
    Eigen::MatrixXd gain;  // action_dim x state_dim
    double noise_std = 0.0;
    double action_low = -1.0;
    double action_high = 1.0;

    std::vector<double> mean_action(const std::vector<double>& s) const {
        Eigen::VectorXd sv = Eigen::Map<const Eigen::VectorXd>(s.data(), s.size());
        Eigen::VectorXd m = -gain * sv;
        std::vector<double> out(m.size());
        for (int i = 0; i < m.size(); ++i) out[i] = std::clamp(m(i), action_low, action_high);
        return out;
    }

    std::vector<double> sample_action(const std::vector<double>& s, Rng& rng) const {
        auto a = mean_action(s);
        for (double& x : a) x += noise_std * normal01(rng);
        return a;
    }

    double log_prob(const std::vector<double>& s, const std::vector<double>& a) const {
        if (noise_std <= 0.0) throw unsupported_operation("LqrExpertPolicy: log_prob needs noise_std > 0");
        const auto m = mean_action(s);
        double lp = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) {
            const double z = (a[i] - m[i]) / noise_std;
            lp += -0.5 * z * z - std::log(noise_std) - 0.5 * std::log(2.0 * M_PI);
        }
        return lp;
    }
};

inline LqrExpertPolicy expert_policy(const PointMassEnv& env, double softness,
                                     double control_weight = 0.1) {
    LqrExpertPolicy pol;
    pol.gain = riccati_gain(env.dynamics_a, env.dynamics_b,
                            Eigen::MatrixXd::Identity(env.state_dim, env.state_dim),
                            control_weight * Eigen::MatrixXd::Identity(env.action_dim, env.action_dim));
    pol.noise_std = softness;
    pol.action_low = env.action_low;
    pol.action_high = env.action_high;
    return pol;
}

inline PointMassEnv pointmass_from_json(const nlohmann::json& j) {
    PointMassEnv e = PointMassEnv::make_default(j.value("dt", 0.2), j.value("noise_std", 0.0),
                                                j.value("gamma", 0.95));
    if (j.contains("init_mean")) {
        const auto v = j.at("init_mean").get<std::vector<double>>();
        e.init_mean = Eigen::Map<const Eigen::VectorXd>(v.data(), v.size());
    }
    e.init_std = j.value("init_std", 0.05);
    return e;
}

}  // namespace rbc
