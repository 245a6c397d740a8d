#pragma once

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <variant>
#include <vector>

#include "rbc/common.hpp"
#include "rbc/demos.hpp"
#include "rbc/envsim.hpp"
#include "rbc/pointmass.hpp"
#include "rbc/policy.hpp"
#include "rbc/tabular_mdp.hpp"
#include "rbc/train.hpp"

namespace rbc {

// ---------------------------------------------------------------------------
// Small statistics helpers
// ---------------------------------------------------------------------------

/// Ranks with ties assigned their average rank (1-based).
inline std::vector<double> average_ranks(std::span<const double> x) {
    const std::size_t n = x.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && x[idx[j + 1]] == x[idx[i]]) ++j;
        const double r = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
        i = j + 1;
    }
    return ranks;
}

/// Spearman rank correlation (Pearson correlation of average ranks).
inline double spearman(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw config_error("spearman: need two equal lists of size >= 2");
    const auto rx = average_ranks(x), ry = average_ranks(y);
    const double mx = mean_of(rx), my = mean_of(ry);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < rx.size(); ++i) {
        sxy += (rx[i] - mx) * (ry[i] - my);
        sxx += (rx[i] - mx) * (rx[i] - mx);
        syy += (ry[i] - my) * (ry[i] - my);
    }
    if (sxx == 0.0 || syy == 0.0) return 0.0;
    return sxy / std::sqrt(sxx * syy);
}

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double residual = 0.0;  // root-mean-square residual
};

inline LinearFit linear_fit(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) throw config_error("linear_fit: need two equal lists of size >= 2");
    const double mx = mean_of(x), my = mean_of(y);
    double sxy = 0.0, sxx = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
    }
    if (sxx == 0.0) throw config_error("linear_fit: x values are constant");
    LinearFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    double ss = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double r = y[i] - (f.intercept + f.slope * x[i]);
        ss += r * r;
    }
    f.residual = std::sqrt(ss / static_cast<double>(x.size()));
    return f;
}

/// Standard error of the mean.
inline double stderr_of(std::span<const double> x) {
    return stddev_of(x) / std::sqrt(static_cast<double>(x.size()));
}

/// Pooled standard error of a difference of two cell means.
inline double pooled_stderr(std::span<const double> a, std::span<const double> b) {
    const double sa = stderr_of(a), sb = stderr_of(b);
    return std::sqrt(sa * sa + sb * sb);
}

// ---------------------------------------------------------------------------
// Sweep specification and report
// ---------------------------------------------------------------------------

enum class Algo { bc, rbc, mom_min, noisy_bc, oracle_bc };

inline std::string algo_name(Algo a) {
    switch (a) {
        case Algo::bc: return "bc";
        case Algo::rbc: return "rbc";
        case Algo::mom_min: return "mom_min";
        case Algo::noisy_bc: return "noisy_bc";
        case Algo::oracle_bc: return "oracle_bc";
    }
    throw config_error("algo_name: bad enum");
}

inline Algo algo_from_string(const std::string& s) {
    if (s == "bc") return Algo::bc;
    if (s == "rbc") return Algo::rbc;
    if (s == "mom_min") return Algo::mom_min;
    if (s == "noisy_bc") return Algo::noisy_bc;
    if (s == "oracle_bc") return Algo::oracle_bc;
    throw config_error("unknown algorithm '" + s + "'");
}

struct SweepSpec {
    std::string env_id = "gridworld5";
    double expert_softness = 0.3;
    std::vector<std::size_t> n_values;
    std::vector<double> eps_values;
    CorruptionMode corruption_mode = CorruptionMode::uniform;
    std::vector<Algo> algorithms{Algo::bc, Algo::rbc};
    int n_eval_trials = 20;
    int n_seeds = 20;
    int eval_every = 5;
    int workers = 1;
    TrainConfig train;

    void validate() const {
        if (n_values.empty()) throw config_error("SweepSpec: n_values must be non-empty");
        if (eps_values.empty()) throw config_error("SweepSpec: eps_values must be non-empty");
        for (double e : eps_values)
            if (e < 0.0 || e >= 0.5) throw config_error("SweepSpec: all epsilon values must lie in [0, 0.5)");
        if (algorithms.empty()) throw config_error("SweepSpec: algorithms must be non-empty");
        if (n_seeds < 1) throw config_error("SweepSpec: n_seeds must be >= 1");
        if (n_eval_trials < 1) throw config_error("SweepSpec: n_eval_trials must be >= 1");
        if (eval_every < 1) throw config_error("SweepSpec: eval_every must be >= 1");
        if (workers < 1) throw config_error("SweepSpec: workers must be >= 1");
    }

    nlohmann::json to_json() const {
        std::vector<std::string> algos;
        for (Algo a : algorithms) algos.push_back(algo_name(a));
        return {{"env", env_id},
                {"expert_softness", expert_softness},
                {"n_values", n_values},
                {"eps_values", eps_values},
                {"corruption_mode", corruption_mode == CorruptionMode::boundary ? "boundary" : "uniform"},
                {"algorithms", algos},
                {"n_eval_trials", n_eval_trials},
                {"n_seeds", n_seeds},
                {"eval_every", eval_every},
                {"workers", workers},
                {"train", train.to_json()}};
    }

    static SweepSpec from_json(const nlohmann::json& j) {
        SweepSpec s;
        s.env_id = j.value("env", s.env_id);
        s.expert_softness = j.value("expert_softness", s.expert_softness);
        s.n_values = j.at("n_values").get<std::vector<std::size_t>>();
        s.eps_values = j.at("eps_values").get<std::vector<double>>();
        const std::string mode = j.value("corruption_mode", "uniform");
        if (mode == "boundary") s.corruption_mode = CorruptionMode::boundary;
        else if (mode == "uniform") s.corruption_mode = CorruptionMode::uniform;
        else throw config_error("SweepSpec: unknown corruption_mode '" + mode + "'");
        if (j.contains("algorithms")) {
            s.algorithms.clear();
            for (const auto& a : j.at("algorithms")) s.algorithms.push_back(algo_from_string(a.get<std::string>()));
        }
        s.n_eval_trials = j.value("n_eval_trials", s.n_eval_trials);
        s.n_seeds = j.value("n_seeds", s.n_seeds);
        s.eval_every = j.value("eval_every", s.eval_every);
        s.workers = j.value("workers", s.workers);
        if (j.contains("train")) s.train = TrainConfig::from_json(j.at("train"));
        s.validate();
        return s;
    }
};

struct CellRow {
    std::string algorithm;
    std::size_t n = 0;
    double eps = 0.0;
    int seed = 0;
    int epoch = -1;  // -1 marks the final policy
    double ret_mean = 0.0;
    double ret_std = 0.0;
    double ret_norm = 0.0;  // ret_mean / expert return
    double tv_sq = std::nan("");    // rho_E-weighted squared TV to the expert (tabular only)
    double j_exact = std::nan("");  // exact discounted return (tabular only)
    double final_tau = std::nan("");
};

struct EvalReport {
    std::string env_id;
    double expert_return = 0.0;
    std::vector<CellRow> rows;

    void write_csv(std::ostream& os) const {
        os << "algorithm,env,n,eps,seed,epoch,ret_mean,ret_std,ret_norm,tv_sq,j_exact,final_tau\n";
        char line[512];
        for (const auto& r : rows) {
            std::snprintf(line, sizeof(line), "%s,%s,%zu,%.17g,%d,%d,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n",
                          r.algorithm.c_str(), env_id.c_str(), r.n, r.eps, r.seed, r.epoch, r.ret_mean,
                          r.ret_std, r.ret_norm, r.tv_sq, r.j_exact, r.final_tau);
            os << line;
        }
    }

    /// Final-policy returns of one (algorithm, N, eps) cell across seeds.
    std::vector<double> cell_returns(const std::string& algo, std::size_t n, double eps) const {
        std::vector<double> out;
        for (const auto& r : rows)
            if (r.epoch == -1 && r.algorithm == algo && r.n == n && r.eps == eps) out.push_back(r.ret_mean);
        return out;
    }

    nlohmann::json summary() const {
        std::map<std::string, std::vector<const CellRow*>> cells;
        for (const auto& r : rows) {
            if (r.epoch != -1) continue;
            char key[128];
            std::snprintf(key, sizeof(key), "%s,n=%zu,eps=%g", r.algorithm.c_str(), r.n, r.eps);
            cells[key].push_back(&r);
        }
        nlohmann::json j{{"env", env_id}, {"expert_return", expert_return}};
        for (const auto& [key, rs] : cells) {
            std::vector<double> ret, tv, tau;
            for (const auto* r : rs) {
                ret.push_back(r->ret_mean);
                if (std::isfinite(r->tv_sq)) tv.push_back(r->tv_sq);
                if (std::isfinite(r->final_tau)) tau.push_back(r->final_tau);
            }
            nlohmann::json cell{{"n_seeds", ret.size()},
                                {"ret_mean", mean_of(ret)},
                                {"ret_std", stddev_of(ret)},
                                {"ret_stderr", stderr_of(ret)}};
            if (!tv.empty()) cell["tv_sq_mean"] = mean_of(tv);
            if (!tau.empty()) cell["final_tau_mean"] = mean_of(tau);
            j["cells"][key] = cell;
        }
        return j;
    }
};

// ---------------------------------------------------------------------------
// Environment registry
// ---------------------------------------------------------------------------

using AnyEnv = std::variant<TabularMDP, PointMassEnv>;

inline AnyEnv env_from_json(const nlohmann::json& j) {
    const std::string type = j.value("type", "tabular");
    if (type == "pointmass") return pointmass_from_json(j);
    return tabular_from_json(j);
}

/// Resolves an environment id: a builtin name ("gridworld5", "pointmass") or
/// the path of a JSON file with a "type" field.
inline AnyEnv load_env(const std::string& env_id) {
    if (env_id == "gridworld5") return gridworld5();
    if (env_id == "pointmass") return PointMassEnv::make_default();
    std::ifstream in(env_id);
    if (!in) throw config_error("load_env: unknown environment '" + env_id + "' (not a builtin or readable file)");
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw parse_error("load_env: failed to parse '" + env_id + "': " + e.what());
    }
    return env_from_json(j);
}

struct TabularContext {
    TabularMDP mdp;
    TabularSoftmaxPolicy expert;
    std::vector<double> expert_state_w;  // state marginal of rho_{pi_E}
    double expert_return = 0.0;          // exact
};

inline TabularContext make_tabular_context(TabularMDP mdp, double softness) {
    TabularContext c;
    c.mdp = std::move(mdp);
    c.expert = expert_policy(c.mdp, softness);
    const auto probs = c.expert.probs_table();
    c.expert_return = exact_return(c.mdp, probs);
    const auto rho = stationary_visitation(c.mdp, probs);
    c.expert_state_w = state_marginal(c.mdp, rho);
    return c;
}

struct PointMassContext {
    PointMassEnv env;
    LqrExpertPolicy expert;
    double expert_return = 0.0;  // Monte-Carlo estimate
};

inline PointMassContext make_pointmass_context(PointMassEnv env, double softness, seed_t seed,
                                               int n_eval_trials) {
    PointMassContext c;
    c.env = std::move(env);
    c.expert = expert_policy(c.env, softness);
    c.expert_return = estimate_return(c.env, c.expert, std::max(n_eval_trials, 100), 0,
                                      split_seed(seed, 0x65787072 /* "expr" */))
                          .mean;
    return c;
}

// ---------------------------------------------------------------------------
// Cell runner
// ---------------------------------------------------------------------------

namespace detail {

struct CellDesc {
    Algo algo;
    std::size_t n;
    double eps;
    int seed;
};

/// Per-cell seed stream; depends only on the cell coordinates, never on
/// sweep iteration order or worker scheduling.
inline seed_t cell_seed(seed_t base, const CellDesc& c) {
    seed_t h = split_seed(base, static_cast<seed_t>(c.algo) + 1);
    h = split_seed(h, static_cast<seed_t>(c.n));
    h = split_seed(h, static_cast<seed_t>(std::llround(c.eps * 1e6)));
    return split_seed(h, static_cast<seed_t>(c.seed));
}

template <class Ctx>
struct EnvTraits;

template <>
struct EnvTraits<TabularContext> {
    using policy_t = TabularSoftmaxPolicy;
    using dataset_t = TabularDataset;

    static dataset_t collect(const TabularContext& c, std::size_t n, seed_t seed) {
        return collect_demos_tabular(c.mdp, c.expert, n, 0, seed);
    }
    static dataset_t corrupt_data(const TabularContext& c, const dataset_t& d, const CorruptionSpec& spec) {
        return corrupt(d, spec, c.mdp.n_actions);
    }
    static policy_t init(const TabularContext& c, const TrainConfig&, seed_t) {
        return policy_t::zeros(c.mdp.n_states, c.mdp.n_actions);
    }
    static ReturnEstimate evaluate(const TabularContext& c, const policy_t& p, int trials, seed_t seed) {
        return estimate_return(c.mdp, p, trials, 0, seed);
    }
    static void exact_metrics(const TabularContext& c, const policy_t& p, CellRow& row) {
        row.tv_sq = tv_distance(p, c.expert, c.expert_state_w);
        row.j_exact = exact_return(c.mdp, p.probs_table());
    }
};

template <>
struct EnvTraits<PointMassContext> {
    using policy_t = GaussianMlpPolicy;
    using dataset_t = ContinuousDataset;

    static dataset_t collect(const PointMassContext& c, std::size_t n, seed_t seed) {
        return collect_demos_continuous(c.env, c.expert, n, 0, seed);
    }
    static dataset_t corrupt_data(const PointMassContext&, const dataset_t& d, const CorruptionSpec& spec) {
        return corrupt(d, spec);
    }
    static policy_t init(const PointMassContext& c, const TrainConfig& cfg, seed_t seed) {
        return policy_t::init(c.env.state_dim, c.env.action_dim, cfg.hidden, seed);
    }
    static ReturnEstimate evaluate(const PointMassContext& c, const policy_t& p, int trials, seed_t seed) {
        return estimate_return(c.env, p, trials, 0, seed);
    }
    static void exact_metrics(const PointMassContext&, const policy_t&, CellRow&) {}
};

template <class Ctx>
std::vector<CellRow> run_cell(const Ctx& ctx, const SweepSpec& spec, const CellDesc& cell,
                              double expert_return, bool per_epoch) {
    using T = EnvTraits<Ctx>;
    using Pol = typename T::policy_t;
    const seed_t h = cell_seed(spec.train.seed, cell);
    const seed_t demo_seed = split_seed(h, 1), corrupt_seed = split_seed(h, 2),
                 train_seed = split_seed(h, 3), eval_seed = split_seed(h, 4),
                 init_seed = split_seed(h, 5);

    auto data = T::collect(ctx, cell.n, demo_seed);
    if (cell.eps > 0.0 && cell.algo != Algo::oracle_bc) {
        CorruptionSpec cs;
        cs.epsilon = cell.eps;
        cs.mode = spec.corruption_mode;
        cs.seed = corrupt_seed;
        data = T::corrupt_data(ctx, data, cs);
    }

    TrainConfig cfg = spec.train;
    cfg.seed = train_seed;
    // Only the MOM-based learners know (and need) the corruption budget; the
    // baselines train with ordinary minibatches.
    cfg.epsilon_declared = (cell.algo == Algo::rbc || cell.algo == Algo::mom_min) ? cell.eps : 0.0;

    Pol init = T::init(ctx, cfg, init_seed);

    std::vector<CellRow> out;
    auto push_row = [&](int epoch, const Pol& p) {
        CellRow row;
        row.algorithm = algo_name(cell.algo);
        row.n = cell.n;
        row.eps = cell.eps;
        row.seed = cell.seed;
        row.epoch = epoch;
        const auto est = T::evaluate(ctx, p, spec.n_eval_trials,
                                     split_seed(eval_seed, static_cast<seed_t>(epoch + 1)));
        row.ret_mean = est.mean;
        row.ret_std = est.std;
        row.ret_norm = expert_return != 0.0 ? est.mean / expert_return : est.mean;
        T::exact_metrics(ctx, p, row);
        out.push_back(std::move(row));
    };

    EpochCallback<Pol> on_epoch;
    if (per_epoch) {
        push_row(0, init);  // the random-init point of the learning curve
        on_epoch = [&](int e, const Pol& p) {
            if (e % spec.eval_every == 0) push_row(e, p);
        };
    }

    TrainHistory hist;
    Pol trained = init;
    switch (cell.algo) {
        case Algo::bc:
        case Algo::oracle_bc: {
            auto r = train_bc(data, std::move(trained), cfg, on_epoch);
            trained = std::move(r.policy);
            hist = std::move(r.history);
            break;
        }
        case Algo::rbc: {
            Pol adversary = T::init(ctx, cfg, split_seed(init_seed, 1));
            auto r = train_rbc(data, std::move(trained), std::move(adversary), cfg, on_epoch);
            trained = std::move(r.policy);
            hist = std::move(r.history);
            break;
        }
        case Algo::mom_min: {
            auto r = train_mom_min(data, std::move(trained), cfg, on_epoch);
            trained = std::move(r.policy);
            hist = std::move(r.history);
            break;
        }
        case Algo::noisy_bc: {
            auto r = train_noisy_bc(data, std::move(trained), cfg, cfg.noisy_outer_iters, on_epoch);
            trained = std::move(r.policy);
            hist = std::move(r.history);
            break;
        }
    }

    push_row(-1, trained);
    out.back().final_tau = hist.final_tau;
    return out;
}

template <class Ctx>
EvalReport run_sweep(const Ctx& ctx, const SweepSpec& spec, double expert_return, bool per_epoch) {
    std::vector<CellDesc> cells;
    for (Algo a : spec.algorithms)
        for (std::size_t n : spec.n_values)
            for (double eps : spec.eps_values)
                for (int s = 0; s < spec.n_seeds; ++s) cells.push_back({a, n, eps, s});

    std::vector<std::vector<CellRow>> results(cells.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mu;
    auto worker = [&] {
        for (;;) {
            const std::size_t i = next.fetch_add(1);
            if (i >= cells.size()) return;
            try {
                results[i] = run_cell(ctx, spec, cells[i], expert_return, per_epoch);
            } catch (...) {
                std::lock_guard lock(error_mu);
                if (!error) error = std::current_exception();
                return;
            }
        }
    };
    if (spec.workers <= 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int w = 0; w < spec.workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (error) std::rethrow_exception(error);

    EvalReport report;
    report.env_id = spec.env_id;
    report.expert_return = expert_return;
    for (auto& rs : results)
        for (auto& r : rs) report.rows.push_back(std::move(r));
    return report;
}

}  // namespace detail

template <class Ctx>
EvalReport sweep_epsilon(const Ctx& ctx, const SweepSpec& spec) {
    spec.validate();
    if (spec.n_values.size() != 1) throw config_error("sweep_epsilon: exactly one N value required");
    if (spec.eps_values.size() < 2) throw config_error("sweep_epsilon: at least two epsilon values required");
    return detail::run_sweep(ctx, spec, ctx.expert_return, /*per_epoch=*/false);
}

template <class Ctx>
EvalReport sweep_sample_size(const Ctx& ctx, const SweepSpec& spec) {
    spec.validate();
    if (spec.eps_values.size() != 1) throw config_error("sweep_sample_size: exactly one epsilon value required");
    if (spec.n_values.size() < 3) throw config_error("sweep_sample_size: at least three N values required");
    return detail::run_sweep(ctx, spec, ctx.expert_return, /*per_epoch=*/false);
}

template <class Ctx>
EvalReport reward_vs_epoch(const Ctx& ctx, const SweepSpec& spec) {
    spec.validate();
    if (spec.n_values.size() != 1 || spec.eps_values.size() != 1)
        throw config_error("reward_vs_epoch: exactly one (N, epsilon) cell required");
    return detail::run_sweep(ctx, spec, ctx.expert_return, /*per_epoch=*/true);
}

// ---------------------------------------------------------------------------
// TV-rate check
// ---------------------------------------------------------------------------

struct TvCheckRow {
    std::size_t n = 0;
    int seed = 0;
    double tv_sq = 0.0;
    double final_tau = 0.0;
};

struct TvCheckReport {
    std::vector<TvCheckRow> rows;
    double slope = 0.0;
    double intercept = 0.0;
    double residual = 0.0;

    void write_csv(std::ostream& os) const {
        os << "n,seed,tv_sq,final_tau\n";
        char line[256];
        for (const auto& r : rows) {
            std::snprintf(line, sizeof(line), "%zu,%d,%.17g,%.17g\n", r.n, r.seed, r.tv_sq, r.final_tau);
            os << line;
        }
        std::snprintf(line, sizeof(line), "# slope=%.17g intercept=%.17g residual=%.17g\n", slope,
                      intercept, residual);
        os << line;
    }
};

/// Fits the log-log slope of BC's squared TV error against N on clean data,
/// where the tau offset of the error bound is near zero and the 1/N rate is
/// visible.
inline TvCheckReport tv_bound_check(const TabularContext& ctx, std::span<const std::size_t> n_values,
                                    int n_seeds, const TrainConfig& base_cfg) {
    if (n_values.size() < 2) throw config_error("tv_bound_check: need at least two N values");
    if (n_seeds < 1) throw config_error("tv_bound_check: n_seeds must be >= 1");
    TvCheckReport report;
    std::vector<double> log_n, log_tv;
    for (std::size_t n : n_values) {
        std::vector<double> tvs;
        for (int s = 0; s < n_seeds; ++s) {
            detail::CellDesc cell{Algo::bc, n, 0.0, s};
            const seed_t h = detail::cell_seed(base_cfg.seed, cell);
            auto data = collect_demos_tabular(ctx.mdp, ctx.expert, n, 0, split_seed(h, 1));
            TrainConfig cfg = base_cfg;
            cfg.seed = split_seed(h, 3);
            cfg.epsilon_declared = 0.0;
            auto r = train_bc(data, TabularSoftmaxPolicy::zeros(ctx.mdp.n_states, ctx.mdp.n_actions), cfg);
            TvCheckRow row;
            row.n = n;
            row.seed = s;
            row.tv_sq = tv_distance(r.policy, ctx.expert, ctx.expert_state_w);
            row.final_tau = r.history.final_tau;
            tvs.push_back(row.tv_sq);
            report.rows.push_back(row);
        }
        log_n.push_back(std::log(static_cast<double>(n)));
        log_tv.push_back(std::log(std::max(mean_of(tvs), 1e-300)));
    }
    const auto fit = linear_fit(log_n, log_tv);
    report.slope = fit.slope;
    report.intercept = fit.intercept;
    report.residual = fit.residual;
    return report;
}

}  // namespace rbc
