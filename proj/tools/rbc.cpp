// Command-line front end: one subcommand per pipeline stage, so datasets and
// policies are inspectable files between stages.
//
//   gen-demos  collect expert demonstrations into a .rbcd dataset
//   corrupt    replace an epsilon fraction of recorded actions
//   train      fit a policy (bc | rbc | mom_min | noisy_bc) to a dataset
//   eval       Monte-Carlo return of a saved policy in an environment
//   sweep      run a sweep spec and write CSV/JSON reports
//   tv-check   clean-data TV-vs-N rate fit for the bc trainer
//
// Exit codes: 0 success, 2 usage error, 3 config/validation error, 1 other.
// stdout carries key=value progress lines only; diagnostics go to stderr.

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "rbc/crc32.hpp"
#include "rbc/demos.hpp"
#include "rbc/envsim.hpp"
#include "rbc/experiments.hpp"
#include "rbc/mom.hpp"
#include "rbc/policy.hpp"
#include "rbc/pointmass.hpp"
#include "rbc/tabular_mdp.hpp"
#include "rbc/train.hpp"

namespace {

using nlohmann::json;

std::string iso_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

std::uint32_t file_crc32(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw rbc::config_error("cannot open input file '" + path + "'");
    std::vector<char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return rbc::crc32(bytes.data(), bytes.size());
}

/// Every run drops a manifest next to its primary output so any artifact can
/// be traced back to the exact command and inputs that produced it.
void write_manifest(const std::string& out_path, const std::string& command, const json& config,
                    const std::vector<std::string>& inputs, const std::vector<std::string>& outputs) {
    json m{{"command", command}, {"config", config}, {"timestamp", iso_timestamp()}};
    for (const auto& p : inputs) m["inputs"][p] = file_crc32(p);
    m["outputs"] = outputs;
    std::ofstream os(out_path + ".manifest.json");
    os << m.dump(2) << "\n";
}

json load_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw rbc::config_error("cannot open config file '" + path + "'");
    try {
        json j;
        in >> j;
        return j;
    } catch (const json::exception& e) {
        throw rbc::parse_error("config file '" + path + "': " + e.what());
    }
}

/// Dimensions for a tabular policy: from the environment named in the
/// dataset's metadata when present, otherwise from the largest index seen.
std::pair<int, int> tabular_dims(const rbc::TabularDataset& d) {
    if (!d.meta.env_id.empty()) {
        const auto env = rbc::load_env(d.meta.env_id);
        if (const auto* mdp = std::get_if<rbc::TabularMDP>(&env)) return {mdp->n_states, mdp->n_actions};
    }
    std::uint32_t s = 0, a = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        s = std::max(s, d.states[i]);
        a = std::max(a, d.actions[i]);
    }
    return {static_cast<int>(s) + 1, static_cast<int>(a) + 1};
}

// ---- gen-demos ------------------------------------------------------------

struct GenDemosArgs {
    std::string env = "gridworld5";
    std::size_t n = 1000;
    rbc::seed_t seed = 0;
    double softness = 0.3;
    int horizon = 0;
    std::string out;
};

int run_gen_demos(const GenDemosArgs& a) {
    const auto env = rbc::load_env(a.env);
    rbc::AnyDataset data = std::visit(
        [&](const auto& e) -> rbc::AnyDataset {
            const auto expert = rbc::expert_policy(e, a.softness);
            if constexpr (std::is_same_v<std::decay_t<decltype(e)>, rbc::TabularMDP>)
                return rbc::collect_demos_tabular(e, expert, a.n, a.horizon, a.seed);
            else
                return rbc::collect_demos_continuous(e, expert, a.n, a.horizon, a.seed);
        },
        env);
    std::visit(
        [&](auto& d) {
            d.meta.env_id = a.env;
            d.meta.expert_softness = a.softness;
            rbc::save_dataset(d, a.out);
        },
        data);
    write_manifest(a.out, "gen-demos",
                   json{{"env", a.env}, {"n", a.n}, {"seed", a.seed}, {"softness", a.softness},
                        {"horizon", a.horizon}},
                   {}, {a.out});
    std::cout << "n=" << a.n << "\nout=" << a.out << "\n";
    return 0;
}

// ---- corrupt --------------------------------------------------------------

struct CorruptArgs {
    std::string in, out;
    double eps = 0.1;
    std::string mode = "uniform";
    rbc::seed_t seed = 0;
};

int run_corrupt(const CorruptArgs& a) {
    rbc::CorruptionSpec spec;
    spec.epsilon = a.eps;
    spec.seed = a.seed;
    if (a.mode == "boundary") spec.mode = rbc::CorruptionMode::boundary;
    else if (a.mode == "uniform") spec.mode = rbc::CorruptionMode::uniform;
    else throw rbc::config_error("corrupt: unknown --mode '" + a.mode + "'");
    spec.validate();

    auto data = rbc::load_dataset(a.in);
    std::size_t corrupted = 0;
    std::visit(
        [&](auto& d) {
            using D = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<D, rbc::TabularDataset>) {
                const auto [s_dim, a_dim] = tabular_dims(d);
                (void)s_dim;
                d = rbc::corrupt(d, spec, a_dim);
            } else {
                d = rbc::corrupt(d, spec);
            }
            for (auto m : d.corrupted_mask) corrupted += m;
            rbc::save_dataset(d, a.out);
        },
        data);
    write_manifest(a.out, "corrupt",
                   json{{"eps", a.eps}, {"mode", a.mode}, {"seed", a.seed}}, {a.in}, {a.out});
    std::cout << "corrupted=" << corrupted << "\nout=" << a.out << "\n";
    return 0;
}

// ---- train ----------------------------------------------------------------

struct TrainArgs {
    std::string algo = "rbc";
    std::string data, config, out, history;
    std::optional<rbc::seed_t> seed;
    std::optional<double> eps;
};

template <class Pol, class Dataset>
std::pair<Pol, rbc::TrainHistory> train_dispatch(const std::string& algo, const Dataset& data,
                                                 Pol init, Pol adversary, const rbc::TrainConfig& cfg) {
    if (algo == "bc") {
        auto r = rbc::train_bc(data, std::move(init), cfg);
        return {std::move(r.policy), std::move(r.history)};
    }
    if (algo == "rbc") {
        auto r = rbc::train_rbc(data, std::move(init), std::move(adversary), cfg);
        return {std::move(r.policy), std::move(r.history)};
    }
    if (algo == "mom_min") {
        auto r = rbc::train_mom_min(data, std::move(init), cfg);
        return {std::move(r.policy), std::move(r.history)};
    }
    if (algo == "noisy_bc") {
        auto r = rbc::train_noisy_bc(data, std::move(init), cfg, cfg.noisy_outer_iters);
        return {std::move(r.policy), std::move(r.history)};
    }
    throw rbc::config_error("train: unknown --algo '" + algo + "'");
}

int run_train(const TrainArgs& a) {
    rbc::TrainConfig cfg;
    if (!a.config.empty()) cfg = rbc::TrainConfig::from_json(load_json_file(a.config));
    if (a.seed) cfg.seed = *a.seed;
    if (a.eps) cfg.epsilon_declared = *a.eps;

    auto data = rbc::load_dataset(a.data);
    rbc::TrainHistory hist;
    rbc::AnyPolicy trained = std::visit(
        [&](const auto& d) -> rbc::AnyPolicy {
            using D = std::decay_t<decltype(d)>;
            if (cfg.epsilon_declared == 0.0 && d.meta.epsilon > 0.0) cfg.epsilon_declared = d.meta.epsilon;
            if constexpr (std::is_same_v<D, rbc::TabularDataset>) {
                const auto [S, A] = tabular_dims(d);
                auto init = rbc::TabularSoftmaxPolicy::zeros(S, A);
                auto [pol, h] = train_dispatch(a.algo, d, init, init, cfg);
                hist = std::move(h);
                return pol;
            } else {
                auto init = rbc::GaussianMlpPolicy::init(d.state_dim, d.action_dim, cfg.hidden,
                                                         rbc::split_seed(cfg.seed, 5));
                auto adv = rbc::GaussianMlpPolicy::init(d.state_dim, d.action_dim, cfg.hidden,
                                                        rbc::split_seed(cfg.seed, 6));
                auto [pol, h] = train_dispatch(a.algo, d, std::move(init), std::move(adv), cfg);
                hist = std::move(h);
                return pol;
            }
        },
        data);

    rbc::save_policy(trained, a.out);
    if (!a.history.empty()) {
        std::ofstream hs(a.history);
        hist.write_csv(hs);
    }
    std::vector<std::string> inputs{a.data};
    if (!a.config.empty()) inputs.push_back(a.config);
    write_manifest(a.out, "train", json{{"algo", a.algo}, {"train", cfg.to_json()}}, inputs, {a.out});
    std::cout << "epochs=" << hist.epochs.size() << "\nfinal_tau=" << hist.final_tau << "\nout=" << a.out
              << "\n";
    return 0;
}

// ---- eval -----------------------------------------------------------------

struct EvalArgs {
    std::string env, policy;
    int trials = 20;
    int horizon = 0;
    rbc::seed_t seed = 0;
};

int run_eval(const EvalArgs& a) {
    const auto env = rbc::load_env(a.env);
    const auto pol = rbc::load_policy(a.policy);
    rbc::ReturnEstimate est;
    if (const auto* mdp = std::get_if<rbc::TabularMDP>(&env)) {
        const auto* p = std::get_if<rbc::TabularSoftmaxPolicy>(&pol);
        if (!p) throw rbc::config_error("eval: tabular environment needs a tabular policy");
        est = rbc::estimate_return(*mdp, *p, a.trials, a.horizon, a.seed);
    } else {
        const auto* p = std::get_if<rbc::GaussianMlpPolicy>(&pol);
        if (!p) throw rbc::config_error("eval: continuous environment needs a Gaussian MLP policy");
        est = rbc::estimate_return(std::get<rbc::PointMassEnv>(env), *p, a.trials, a.horizon, a.seed);
    }
    char line[128];
    std::snprintf(line, sizeof(line), "return_mean=%.17g\nreturn_std=%.17g\n", est.mean, est.std);
    std::cout << line;
    return 0;
}

// ---- sweep ----------------------------------------------------------------

struct SweepArgs {
    std::string spec, out, kind = "auto";
    std::optional<int> workers;
};

int run_sweep(const SweepArgs& a) {
    auto spec = rbc::SweepSpec::from_json(load_json_file(a.spec));
    if (a.workers) spec.workers = *a.workers;

    std::string kind = a.kind;
    if (kind == "auto") {
        if (spec.n_values.size() == 1 && spec.eps_values.size() == 1) kind = "epoch";
        else if (spec.n_values.size() == 1) kind = "epsilon";
        else kind = "sample-size";
    }

    const auto env = rbc::load_env(spec.env_id);
    rbc::EvalReport report;
    auto run = [&](const auto& ctx) {
        if (kind == "epsilon") return rbc::sweep_epsilon(ctx, spec);
        if (kind == "sample-size") return rbc::sweep_sample_size(ctx, spec);
        if (kind == "epoch") return rbc::reward_vs_epoch(ctx, spec);
        throw rbc::config_error("sweep: unknown --kind '" + kind + "'");
    };
    if (const auto* mdp = std::get_if<rbc::TabularMDP>(&env)) {
        report = run(rbc::make_tabular_context(*mdp, spec.expert_softness));
    } else {
        report = run(rbc::make_pointmass_context(std::get<rbc::PointMassEnv>(env), spec.expert_softness,
                                                 spec.train.seed, spec.n_eval_trials));
    }

    std::filesystem::create_directories(a.out);
    const std::string stem = "sweep_" + std::filesystem::path(spec.env_id).stem().string() + "_" + kind;
    const std::string csv_path = (std::filesystem::path(a.out) / (stem + ".csv")).string();
    const std::string json_path = (std::filesystem::path(a.out) / (stem + ".json")).string();
    {
        std::ofstream cs(csv_path);
        report.write_csv(cs);
        std::ofstream js(json_path);
        js << report.summary().dump(2) << "\n";
    }
    write_manifest(csv_path, "sweep", spec.to_json(), {a.spec}, {csv_path, json_path});
    std::cout << "rows=" << report.rows.size() << "\nexpert_return=" << report.expert_return
              << "\ncsv=" << csv_path << "\njson=" << json_path << "\n";
    return 0;
}

// ---- tv-check -------------------------------------------------------------

struct TvCheckArgs {
    std::string env = "gridworld5";
    std::vector<std::size_t> n_values;
    int seeds = 5;
    double softness = 0.3;
    std::string config, out;
};

int run_tv_check(const TvCheckArgs& a) {
    const auto env = rbc::load_env(a.env);
    const auto* mdp = std::get_if<rbc::TabularMDP>(&env);
    if (!mdp) throw rbc::config_error("tv-check: requires a tabular environment");
    rbc::TrainConfig cfg;
    if (!a.config.empty()) cfg = rbc::TrainConfig::from_json(load_json_file(a.config));
    const auto ctx = rbc::make_tabular_context(*mdp, a.softness);
    const auto report = rbc::tv_bound_check(ctx, a.n_values, a.seeds, cfg);
    if (!a.out.empty()) {
        std::ofstream os(a.out);
        report.write_csv(os);
        std::vector<std::string> inputs;
        if (!a.config.empty()) inputs.push_back(a.config);
        write_manifest(a.out, "tv-check",
                       json{{"env", a.env}, {"n_values", a.n_values}, {"seeds", a.seeds},
                            {"softness", a.softness}},
                       inputs, {a.out});
    }
    char line[128];
    std::snprintf(line, sizeof(line), "slope=%.17g\nresidual=%.17g\n", report.slope, report.residual);
    std::cout << line;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Robust behavior cloning from corrupted demonstrations"};
    app.require_subcommand(1);

    GenDemosArgs gd;
    auto* gen = app.add_subcommand("gen-demos", "Collect expert demonstrations");
    gen->add_option("--env", gd.env, "Environment id or JSON file");
    gen->add_option("--n", gd.n, "Number of state-action pairs")->required();
    gen->add_option("--seed", gd.seed, "Random seed");
    gen->add_option("--softness", gd.softness, "Expert softness (temperature / action noise)");
    gen->add_option("--horizon", gd.horizon, "Episode cap (0 = automatic)");
    gen->add_option("--out", gd.out, "Output dataset path")->required();

    CorruptArgs co;
    auto* cor = app.add_subcommand("corrupt", "Corrupt a fraction of recorded actions");
    cor->add_option("--in", co.in, "Input dataset")->required();
    cor->add_option("--eps", co.eps, "Corruption fraction in [0, 0.5)")->required();
    cor->add_option("--mode", co.mode, "Corruption mode: uniform | boundary");
    cor->add_option("--seed", co.seed, "Random seed");
    cor->add_option("--out", co.out, "Output dataset path")->required();

    TrainArgs tr;
    auto* trn = app.add_subcommand("train", "Train a policy on a dataset");
    trn->add_option("--algo", tr.algo, "Algorithm: bc | rbc | mom_min | noisy_bc");
    trn->add_option("--data", tr.data, "Input dataset")->required();
    trn->add_option("--config", tr.config, "Training config JSON");
    trn->add_option("--seed", tr.seed, "Random seed (overrides config)");
    trn->add_option("--eps", tr.eps, "Declared corruption level (overrides config/metadata)");
    trn->add_option("--out", tr.out, "Output policy path")->required();
    trn->add_option("--history", tr.history, "Optional per-epoch CSV path");

    EvalArgs ev;
    auto* evl = app.add_subcommand("eval", "Estimate a policy's discounted return");
    evl->add_option("--env", ev.env, "Environment id or JSON file")->required();
    evl->add_option("--policy", ev.policy, "Policy file")->required();
    evl->add_option("--trials", ev.trials, "Number of evaluation rollouts");
    evl->add_option("--horizon", ev.horizon, "Rollout horizon (0 = automatic)");
    evl->add_option("--seed", ev.seed, "Random seed");

    SweepArgs sw;
    auto* swp = app.add_subcommand("sweep", "Run a sweep spec and write reports");
    swp->add_option("--spec", sw.spec, "Sweep spec JSON")->required();
    swp->add_option("--out", sw.out, "Output directory")->required();
    swp->add_option("--kind", sw.kind, "Sweep kind: epsilon | sample-size | epoch | auto");
    swp->add_option("--workers", sw.workers, "Concurrent cell workers");

    TvCheckArgs tv;
    auto* tvc = app.add_subcommand("tv-check", "Fit the clean-data TV-vs-N rate for bc");
    tvc->add_option("--env", tv.env, "Tabular environment id or JSON file");
    tvc->add_option("--n", tv.n_values, "Dataset sizes (repeatable)")->required();
    tvc->add_option("--seeds", tv.seeds, "Seeds per N");
    tvc->add_option("--softness", tv.softness, "Expert softness");
    tvc->add_option("--config", tv.config, "Training config JSON");
    tvc->add_option("--out", tv.out, "Output CSV path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*gen) return run_gen_demos(gd);
        if (*cor) return run_corrupt(co);
        if (*trn) return run_train(tr);
        if (*evl) return run_eval(ev);
        if (*swp) return run_sweep(sw);
        if (*tvc) return run_tv_check(tv);
    } catch (const rbc::config_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const rbc::parse_error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
