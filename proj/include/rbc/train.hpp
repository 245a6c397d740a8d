#pragma once

#include <nlohmann/json.hpp>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "rbc/common.hpp"
#include "rbc/mom.hpp"
#include "rbc/policy.hpp"

namespace rbc {

enum class Optimizer { sgd, adam };

struct TrainConfig {
    int epochs = 200;
    double learning_rate = 7.5e-4;
    double grad_clip = 0.1;
    double entropy_coef = 0.01;
    double l2_coef = 0.0;
    double epsilon_declared = 0.0;
    std::optional<int> batch_size_override;
    int median_window = 1;   // 0 = auto (largest odd window within M/6)
    seed_t seed = 0;
    Optimizer optimizer = Optimizer::adam;
    int ascent_steps = 1;    // ascent iterations of pi' per descent step of pi
    // Restart the ascent player from its initial parameters every this many
    // epochs (0 = never). While the restarted player re-converges, corrupted
    // batches carry large positive loss gaps and drop out of the median
    // window, so the learner trains on clean batches at every state. This
    // breaks the stalemate where both players settle on the corrupted
    // mixture and the gap signal vanishes.
    int adversary_reset_period = 50;
    int clean_batch_cap = 64;
    int noisy_outer_iters = 5;
    std::vector<int> hidden{64, 64, 64};  // MLP width for continuous policies

    /// Batch size in effect for a dataset of n pairs. Throws when the
    /// declared epsilon admits no valid batch (Def. of the MOM split needs
    /// b <= 1/(3 eps) and b >= 1).
    int effective_batch(std::size_t n) const {
        const int cap = max_batch_size(epsilon_declared, clean_batch_cap);
        int b = batch_size_override ? std::min(*batch_size_override, cap) : cap;
        if (batch_size_override && *batch_size_override > cap)
            throw config_error("TrainConfig: batch_size_override " + std::to_string(*batch_size_override) +
                               " exceeds max batch size " + std::to_string(cap) +
                               " for declared epsilon");
        if (b < 1)
            throw config_error("TrainConfig: no batch size >= 1 satisfies b <= 1/(3 eps) for epsilon_declared=" +
                               std::to_string(epsilon_declared));
        if (static_cast<std::size_t>(b) > n) b = static_cast<int>(n);
        return b;
    }

    /// Window of batches whose gradients are averaged around the median, for
    /// a partition of m batches. median_window = 0 picks the widest odd
    /// window that keeps the clean-batch majority intact (<= m/6).
    int resolved_window(std::size_t m) const {
        if (median_window >= 1) return median_window;
        // Cap the automatic window: past ~100 batches per step the loss
        // ranking goes stale between repartitions and training slows down.
        std::size_t w = std::min<std::size_t>(m / 6, 101);
        if (w % 2 == 0 && w > 0) --w;
        return w >= 3 ? static_cast<int>(w) : 1;
    }

    void validate(std::size_t n) const {
        if (epochs < 1) throw config_error("TrainConfig: epochs must be >= 1");
        if (learning_rate < 0.0) throw config_error("TrainConfig: learning_rate must be >= 0");
        if (median_window < 0 || (median_window > 0 && median_window % 2 == 0))
            throw config_error("TrainConfig: median_window must be odd, or 0 for automatic");
        const int b = effective_batch(n);
        const auto m = n / static_cast<std::size_t>(b);
        if (static_cast<std::size_t>(median_window) > m)
            throw config_error("TrainConfig: median_window exceeds the number of batches");
        if (median_window > 1 && static_cast<std::size_t>(median_window) > m / 6)
            throw config_error("TrainConfig: median_window must stay within M/6 to preserve the clean-batch majority");
        if (ascent_steps < 1) throw config_error("TrainConfig: ascent_steps must be >= 1");
        if (adversary_reset_period < 0)
            throw config_error("TrainConfig: adversary_reset_period must be >= 0");
    }

    nlohmann::json to_json() const {
        nlohmann::json j{{"epochs", epochs},
                         {"learning_rate", learning_rate},
                         {"grad_clip", grad_clip},
                         {"entropy_coef", entropy_coef},
                         {"l2_coef", l2_coef},
                         {"epsilon_declared", epsilon_declared},
                         {"median_window", median_window},
                         {"seed", seed},
                         {"optimizer", optimizer == Optimizer::adam ? "adam" : "sgd"},
                         {"ascent_steps", ascent_steps},
                         {"adversary_reset_period", adversary_reset_period},
                         {"clean_batch_cap", clean_batch_cap},
                         {"noisy_outer_iters", noisy_outer_iters},
                         {"hidden", hidden}};
        if (batch_size_override) j["batch_size_override"] = *batch_size_override;
        return j;
    }

    static TrainConfig from_json(const nlohmann::json& j) {
        TrainConfig c;
        c.epochs = j.value("epochs", c.epochs);
        c.learning_rate = j.value("learning_rate", c.learning_rate);
        c.grad_clip = j.value("grad_clip", c.grad_clip);
        c.entropy_coef = j.value("entropy_coef", c.entropy_coef);
        c.l2_coef = j.value("l2_coef", c.l2_coef);
        c.epsilon_declared = j.value("epsilon_declared", c.epsilon_declared);
        if (j.contains("batch_size_override")) c.batch_size_override = j.at("batch_size_override").get<int>();
        c.median_window = j.value("median_window", c.median_window);
        c.seed = j.value("seed", c.seed);
        const std::string opt = j.value("optimizer", "adam");
        if (opt == "adam") c.optimizer = Optimizer::adam;
        else if (opt == "sgd") c.optimizer = Optimizer::sgd;
        else throw config_error("TrainConfig: unknown optimizer '" + opt + "'");
        c.ascent_steps = j.value("ascent_steps", c.ascent_steps);
        c.adversary_reset_period = j.value("adversary_reset_period", c.adversary_reset_period);
        c.clean_batch_cap = j.value("clean_batch_cap", c.clean_batch_cap);
        c.noisy_outer_iters = j.value("noisy_outer_iters", c.noisy_outer_iters);
        c.hidden = j.value("hidden", c.hidden);
        return c;
    }
};

struct EpochRecord {
    double tau = 0.0;         // objective value at the end of the epoch
    double nll_clean = 0.0;   // mean NLL on ground-truth clean pairs
    double nll_corrupt = 0.0; // mean NLL on ground-truth corrupted pairs (NaN if none)
    double wall_ms = 0.0;
};

struct TrainHistory {
    std::vector<EpochRecord> epochs;
    double final_tau = 0.0;

    void write_csv(std::ostream& os) const {
        os << "epoch,tau,nll_clean,nll_corrupt,wall_ms\n";
        char line[256];
        for (std::size_t e = 0; e < epochs.size(); ++e) {
            const auto& r = epochs[e];
            std::snprintf(line, sizeof(line), "%zu,%.17g,%.17g,%.17g,%.17g\n", e + 1, r.tau,
                          r.nll_clean, r.nll_corrupt, r.wall_ms);
            os << line;
        }
    }
};

// ---------------------------------------------------------------------------
// Optimizer step
// ---------------------------------------------------------------------------

struct AdamState {
    std::vector<double> m, v;
    long t = 0;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;

    void reset(std::size_t n) {
        m.assign(n, 0.0);
        v.assign(n, 0.0);
        t = 0;
    }

    void step(std::span<double> params, std::span<const double> grad, double lr) {
        if (m.size() != params.size()) reset(params.size());
        ++t;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (std::size_t i = 0; i < params.size(); ++i) {
            m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
            params[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
        }
    }
};

/// Clips the gradient in L2 norm, then applies one sgd or adam update.
struct OptimizerState {
    Optimizer kind = Optimizer::adam;
    AdamState adam;

    void apply(std::span<double> params, Gradient& grad, const TrainConfig& cfg) {
        clip_l2(grad, cfg.grad_clip);
        if (kind == Optimizer::sgd) {
            for (std::size_t i = 0; i < params.size(); ++i) params[i] -= cfg.learning_rate * grad[i];
        } else {
            adam.step(params, grad, cfg.learning_rate);
        }
    }
};

namespace detail {

inline void add_l2_grad(std::span<const double> params, double coef, Gradient& grad) {
    if (coef == 0.0) return;
    for (std::size_t i = 0; i < params.size(); ++i) grad[i] += coef * params[i];
}

/// Mean NLL split by the ground-truth corruption mask (evaluation only).
template <class Pol>
std::pair<double, double> mask_split_nll(const Pol& policy, const typename Pol::dataset_t& d,
                                         std::vector<double>& scratch) {
    policy.per_sample_nll(d, scratch);
    double sc = 0.0, scc = 0.0;
    std::size_t nc = 0, ncc = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        if (d.corrupted_mask[i]) {
            scc += scratch[i];
            ++ncc;
        } else {
            sc += scratch[i];
            ++nc;
        }
    }
    return {nc ? sc / static_cast<double>(nc) : std::nan(""),
            ncc ? scc / static_cast<double>(ncc) : std::nan("")};
}

inline void check_finite(double value, int epoch, const char* trainer) {
    if (!std::isfinite(value))
        throw std::runtime_error(std::string(trainer) + ": training diverged (non-finite NLL) at epoch " +
                                 std::to_string(epoch));
}

/// Batches whose gradients are averaged. The first entry is always the
/// lower-median batch (rank k under the (value, index) order); the remaining
/// window - 1 entries are drawn uniformly from the ranks within m/6 of the
/// median. Sampling around the median instead of taking a fixed slice keeps
/// tie-heavy losses (common with tiny batches on discrete data) from pinning
/// the selection to one batch forever, while every candidate still lies in
/// the bracket guarded by the clean-batch majority.
inline void median_window_batches(std::span<const double> diffs, int window, Rng& rng,
                                  std::vector<std::uint32_t>& scratch_idx,
                                  std::vector<std::uint32_t>& out) {
    const std::size_t m = diffs.size();
    const std::size_t k = (m + 1) / 2;
    const std::size_t lo = k > m / 6 ? k - m / 6 : 1;
    const std::size_t hi = std::min(m, k + m / 6);
    scratch_idx.resize(m);
    std::iota(scratch_idx.begin(), scratch_idx.end(), 0u);
    auto cmp = [&](std::uint32_t a, std::uint32_t b) {
        return diffs[a] != diffs[b] ? diffs[a] < diffs[b] : a < b;
    };
    const auto first = scratch_idx.begin();
    std::nth_element(first, first + static_cast<std::ptrdiff_t>(lo - 1), scratch_idx.end(), cmp);
    std::nth_element(first + static_cast<std::ptrdiff_t>(lo - 1),
                     first + static_cast<std::ptrdiff_t>(hi - 1), scratch_idx.end(), cmp);
    std::nth_element(first + static_cast<std::ptrdiff_t>(lo - 1),
                     first + static_cast<std::ptrdiff_t>(k - 1),
                     first + static_cast<std::ptrdiff_t>(hi), cmp);
    out.clear();
    out.push_back(scratch_idx[k - 1]);
    for (int w = 1; w < window; ++w)
        out.push_back(scratch_idx[lo - 1 + uniform_index(rng, hi - lo + 1)]);
}

}  // namespace detail

template <class Pol>
struct TrainResult {
    Pol policy;
    TrainHistory history;
};

/// Invoked after each completed epoch with (epoch, current policy).
template <class Pol>
using EpochCallback = std::function<void(int, const Pol&)>;

// ---------------------------------------------------------------------------
// Vanilla Behavior Cloning: minibatch descent on the full-data mean NLL.
// ---------------------------------------------------------------------------

template <class Pol>
TrainResult<Pol> train_bc(const typename Pol::dataset_t& dataset, Pol policy, const TrainConfig& cfg,
                          const EpochCallback<Pol>& on_epoch = {}) {
    const std::size_t n = dataset.size();
    cfg.validate(n);
    const int b = cfg.effective_batch(n);
    Rng rng = make_rng(split_seed(cfg.seed, 0x6263 /* "bc" */));
    OptimizerState opt{cfg.optimizer};

    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    Gradient grad;
    std::vector<double> scratch;
    TrainHistory hist;
    hist.epochs.reserve(cfg.epochs);
    for (int e = 1; e <= cfg.epochs; ++e) {
        const auto t0 = std::chrono::steady_clock::now();
        fisher_yates(order, rng);
        for (std::size_t off = 0; off < n; off += static_cast<std::size_t>(b)) {
            const std::size_t len = std::min(static_cast<std::size_t>(b), n - off);
            policy.nll_and_grad(dataset, {order.data() + off, len}, grad);
            policy.add_entropy_grad(dataset, {order.data() + off, len}, cfg.entropy_coef, grad);
            detail::add_l2_grad(policy.params(), cfg.l2_coef, grad);
            opt.apply(policy.params(), grad, cfg);
        }
        EpochRecord rec;
        auto [nc, ncc] = detail::mask_split_nll(policy, dataset, scratch);
        rec.nll_clean = nc;
        rec.nll_corrupt = ncc;
        rec.tau = mean_of(scratch);  // full-data NLL
        detail::check_finite(rec.tau, e, "train_bc");
        rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        hist.epochs.push_back(rec);
        if (on_epoch) on_epoch(e, policy);
    }
    hist.final_tau = hist.epochs.back().tau;
    return {std::move(policy), std::move(hist)};
}

// ---------------------------------------------------------------------------
// Robust Behavior Cloning: per-step random repartition, median batch of the
// per-batch NLL differences, descent on pi / ascent on pi'.
// ---------------------------------------------------------------------------

template <class Pol>
struct RbcScratch {
    BatchPartition part;
    std::vector<double> nll_pi, nll_pp, diffs;
    std::vector<std::uint32_t> idx_scratch, window;
    std::vector<std::uint32_t> grad_indices;
    Gradient grad;
};

struct RbcStepInfo {
    double tau = 0.0;                          // median objective value
    std::vector<std::uint32_t> median_batch;   // indices the gradients were taken on
};

/// One iteration of the min-max tournament. Exposed so tests can replay the
/// exact gradient target of a recorded step.
template <class Pol>
RbcStepInfo rbc_step(Pol& pi, Pol& pi_prime, const typename Pol::dataset_t& dataset,
                     const TrainConfig& cfg, int b, OptimizerState& opt_pi, OptimizerState& opt_pp,
                     Rng& rng, RbcScratch<Pol>& ws, bool update_pi = true) {
    repartition(ws.part, static_cast<std::uint32_t>(dataset.size()), b, rng);
    pi.per_sample_nll(dataset, ws.nll_pi);
    pi_prime.per_sample_nll(dataset, ws.nll_pp);
    for (std::size_t i = 0; i < ws.nll_pi.size(); ++i) ws.nll_pi[i] -= ws.nll_pp[i];
    detail::batch_means(ws.part, ws.nll_pi, ws.diffs);
    detail::median_window_batches(ws.diffs, cfg.resolved_window(ws.diffs.size()), rng, ws.idx_scratch,
                                  ws.window);

    RbcStepInfo info;
    info.tau = ws.diffs[ws.window[0]];
    ws.grad_indices.clear();
    for (std::uint32_t j : ws.window) {
        const auto span = ws.part.batch(j);
        ws.grad_indices.insert(ws.grad_indices.end(), span.begin(), span.end());
    }
    info.median_batch = ws.grad_indices;

    // Ascent on pi' maximizes median(l(pi) - l(pi')), i.e. descends its own
    // NLL on the median batch.
    pi_prime.nll_and_grad(dataset, ws.grad_indices, ws.grad);
    opt_pp.apply(pi_prime.params(), ws.grad, cfg);

    if (update_pi) {
        pi.nll_and_grad(dataset, ws.grad_indices, ws.grad);
        pi.add_entropy_grad(dataset, ws.grad_indices, cfg.entropy_coef, ws.grad);
        detail::add_l2_grad(pi.params(), cfg.l2_coef, ws.grad);
        opt_pi.apply(pi.params(), ws.grad, cfg);
    }
    return info;
}

template <class Pol>
TrainResult<Pol> train_rbc(const typename Pol::dataset_t& dataset, Pol pi, Pol pi_prime,
                           const TrainConfig& cfg, const EpochCallback<Pol>& on_epoch = {}) {
    const std::size_t n = dataset.size();
    cfg.validate(n);
    if (pi.param_count() != pi_prime.param_count())
        throw config_error("train_rbc: pi and pi_prime must share the same class and shape");
    const int b = cfg.effective_batch(n);
    // One pass over the data in expectation: each step consumes b * window
    // samples for the gradient.
    const std::size_t batches = (n + static_cast<std::size_t>(b) - 1) / static_cast<std::size_t>(b);
    const auto w = static_cast<std::size_t>(cfg.resolved_window(n / static_cast<std::size_t>(b)));
    const std::size_t steps_per_epoch = (batches + w - 1) / w;
    Rng rng = make_rng(split_seed(cfg.seed, 0x726263 /* "rbc" */));
    OptimizerState opt_pi{cfg.optimizer}, opt_pp{cfg.optimizer};
    const Pol pp_init = pi_prime;
    RbcScratch<Pol> ws;
    std::vector<double> scratch;

    TrainHistory hist;
    hist.epochs.reserve(cfg.epochs);
    for (int e = 1; e <= cfg.epochs; ++e) {
        if (cfg.adversary_reset_period > 0 && e > 1 && (e - 1) % cfg.adversary_reset_period == 0) {
            pi_prime = pp_init;
            opt_pp = OptimizerState{cfg.optimizer};
            opt_pi = OptimizerState{cfg.optimizer};  // stale momentum points at the old game
        }
        const auto t0 = std::chrono::steady_clock::now();
        double tau = 0.0;
        for (std::size_t step = 0; step < steps_per_epoch; ++step) {
            for (int extra = 1; extra < cfg.ascent_steps; ++extra)
                rbc_step(pi, pi_prime, dataset, cfg, b, opt_pi, opt_pp, rng, ws, /*update_pi=*/false);
            tau = rbc_step(pi, pi_prime, dataset, cfg, b, opt_pi, opt_pp, rng, ws).tau;
        }
        EpochRecord rec;
        rec.tau = tau;
        auto [nc, ncc] = detail::mask_split_nll(pi, dataset, scratch);
        rec.nll_clean = nc;
        rec.nll_corrupt = ncc;
        detail::check_finite(rec.nll_clean, e, "train_rbc");
        rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        hist.epochs.push_back(rec);
        if (on_epoch) on_epoch(e, pi);
    }
    // tau consumed by the error bound comes from a fresh held-out partition,
    // not the last training split.
    const auto fresh = partition(static_cast<std::uint32_t>(n), b, split_seed(cfg.seed, 0x746175 /* "tau" */));
    hist.final_tau = mom_objective(pi, pi_prime, dataset, fresh).value;
    return {std::move(pi), std::move(hist)};
}

// ---------------------------------------------------------------------------
// Plain MOM minimization: the tournament with the ascent player removed.
// ---------------------------------------------------------------------------

template <class Pol>
TrainResult<Pol> train_mom_min(const typename Pol::dataset_t& dataset, Pol policy, const TrainConfig& cfg,
                               const EpochCallback<Pol>& on_epoch = {}) {
    const std::size_t n = dataset.size();
    cfg.validate(n);
    const int b = cfg.effective_batch(n);
    const std::size_t batches = (n + static_cast<std::size_t>(b) - 1) / static_cast<std::size_t>(b);
    const auto w = static_cast<std::size_t>(cfg.resolved_window(n / static_cast<std::size_t>(b)));
    const std::size_t steps_per_epoch = (batches + w - 1) / w;
    Rng rng = make_rng(split_seed(cfg.seed, 0x6d6f6d /* "mom" */));
    OptimizerState opt{cfg.optimizer};
    BatchPartition part;
    std::vector<double> nll, diffs, scratch;
    std::vector<std::uint32_t> idx_scratch, window, grad_indices;
    Gradient grad;

    TrainHistory hist;
    hist.epochs.reserve(cfg.epochs);
    for (int e = 1; e <= cfg.epochs; ++e) {
        const auto t0 = std::chrono::steady_clock::now();
        double tau = 0.0;
        for (std::size_t step = 0; step < steps_per_epoch; ++step) {
            repartition(part, static_cast<std::uint32_t>(n), b, rng);
            policy.per_sample_nll(dataset, nll);
            detail::batch_means(part, nll, diffs);
            detail::median_window_batches(diffs, cfg.resolved_window(diffs.size()), rng, idx_scratch, window);
            tau = diffs[window[0]];
            grad_indices.clear();
            for (std::uint32_t j : window) {
                const auto span = part.batch(j);
                grad_indices.insert(grad_indices.end(), span.begin(), span.end());
            }
            policy.nll_and_grad(dataset, grad_indices, grad);
            policy.add_entropy_grad(dataset, grad_indices, cfg.entropy_coef, grad);
            detail::add_l2_grad(policy.params(), cfg.l2_coef, grad);
            opt.apply(policy.params(), grad, cfg);
        }
        EpochRecord rec;
        rec.tau = tau;
        auto [nc, ncc] = detail::mask_split_nll(policy, dataset, scratch);
        rec.nll_clean = nc;
        rec.nll_corrupt = ncc;
        detail::check_finite(rec.nll_clean, e, "train_mom_min");
        rec.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
        hist.epochs.push_back(rec);
        if (on_epoch) on_epoch(e, policy);
    }
    const auto fresh = partition(static_cast<std::uint32_t>(n), b, split_seed(cfg.seed, 0x746175));
    policy.per_sample_nll(dataset, nll);
    detail::batch_means(fresh, nll, diffs);
    hist.final_tau = median_lower(diffs).first;
    return {std::move(policy), std::move(hist)};
}

// ---------------------------------------------------------------------------
// Noisy BC: iteratively re-fit the likelihood-weighted NLL; weights come
// from the previous outer iterate (the initial policy on the first pass).
// ---------------------------------------------------------------------------

template <class Pol>
struct NoisyBcResult {
    Pol policy;
    TrainHistory history;
    std::vector<double> last_weights;  // weights used in the final outer iteration
};

template <class Pol>
NoisyBcResult<Pol> train_noisy_bc(const typename Pol::dataset_t& dataset, Pol policy,
                                  const TrainConfig& cfg, int outer_iters,
                                  const EpochCallback<Pol>& on_epoch = {}) {
    const std::size_t n = dataset.size();
    if (outer_iters < 1) throw config_error("train_noisy_bc: outer_iters must be >= 1");
    cfg.validate(n);
    const int b = cfg.effective_batch(n);
    Rng rng = make_rng(split_seed(cfg.seed, 0x6e627363 /* "nbsc" */));
    TrainHistory hist;
    std::vector<double> weights, scratch;
    Gradient grad;
    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);

    Pol frozen = policy;  // pi_old providing the weights
    for (int outer = 0; outer < outer_iters; ++outer) {
        frozen.per_sample_nll(dataset, weights);
        for (double& w : weights) w = std::exp(-w);  // likelihood pi_old(a|s)
        OptimizerState opt{cfg.optimizer};
        for (int e = 1; e <= cfg.epochs; ++e) {
            const auto t0 = std::chrono::steady_clock::now();
            fisher_yates(order, rng);
            for (std::size_t off = 0; off < n; off += static_cast<std::size_t>(b)) {
                const std::size_t len = std::min(static_cast<std::size_t>(b), n - off);
                policy.nll_and_grad(dataset, {order.data() + off, len}, grad, &weights);
                policy.add_entropy_grad(dataset, {order.data() + off, len}, cfg.entropy_coef, grad);
                detail::add_l2_grad(policy.params(), cfg.l2_coef, grad);
                opt.apply(policy.params(), grad, cfg);
            }
            EpochRecord rec;
            auto [nc, ncc] = detail::mask_split_nll(policy, dataset, scratch);
            rec.nll_clean = nc;
            rec.nll_corrupt = ncc;
            double wn = 0.0;
            for (std::size_t i = 0; i < n; ++i) wn += weights[i] * scratch[i];
            rec.tau = wn / static_cast<double>(n);  // weighted NLL objective
            detail::check_finite(rec.tau, e, "train_noisy_bc");
            rec.wall_ms =
                std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
            hist.epochs.push_back(rec);
            if (on_epoch) on_epoch(outer * cfg.epochs + e, policy);
        }
        frozen = policy;
    }
    hist.final_tau = hist.epochs.back().tau;
    return {std::move(policy), std::move(hist), std::move(weights)};
}

}  // namespace rbc
