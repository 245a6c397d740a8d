#pragma once

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstring>
#include <numbers>
#include <fstream>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "rbc/common.hpp"
#include "rbc/crc32.hpp"
#include "rbc/demos.hpp"
#include "rbc/tabular_mdp.hpp"

namespace rbc {

/// Flat gradient aligned with a policy's parameter vector.
using Gradient = std::vector<double>;

inline void clip_l2(Gradient& g, double max_norm) {
    if (max_norm <= 0.0) return;
    const double n = l2_norm(g);
    if (n > max_norm) {
        const double scale = max_norm / n;
        for (double& x : g) x *= scale;
    }
}

// ---------------------------------------------------------------------------
// TabularSoftmaxPolicy
// ---------------------------------------------------------------------------

/// pi(a|s) = softmax over a row of logits, computed with max-subtraction.
struct TabularSoftmaxPolicy {
    int n_states = 0;
    int n_actions = 0;
    std::vector<double> logits;  // n_states * n_actions

    using dataset_t = TabularDataset;

    static TabularSoftmaxPolicy zeros(int n_states, int n_actions) {
        TabularSoftmaxPolicy p;
        p.n_states = n_states;
        p.n_actions = n_actions;
        p.logits.assign(static_cast<std::size_t>(n_states) * n_actions, 0.0);
        return p;
    }

    std::size_t param_count() const { return logits.size(); }
    std::span<double> params() { return logits; }
    std::span<const double> params() const { return logits; }

    std::span<const double> logit_row(int s) const {
        return {logits.data() + static_cast<std::size_t>(s) * n_actions,
                static_cast<std::size_t>(n_actions)};
    }

    void check_indices(int s, int a) const {
        if (s < 0 || s >= n_states || a < 0 || a >= n_actions)
            throw std::out_of_range("TabularSoftmaxPolicy: state/action index out of range");
    }

    double log_prob(int s, int a) const {
        check_indices(s, a);
        const auto row = logit_row(s);
        return row[a] - logsumexp(row);
    }

    std::vector<double> probs_row(int s) const {
        const auto row = logit_row(s);
        const double lse = logsumexp(row);
        std::vector<double> p(n_actions);
        for (int a = 0; a < n_actions; ++a) p[a] = std::exp(row[a] - lse);
        return p;
    }

    /// Full pi[s][a] table.
    std::vector<double> probs_table() const {
        std::vector<double> p(logits.size());
        for (int s = 0; s < n_states; ++s) {
            const auto row = probs_row(s);
            std::copy(row.begin(), row.end(), p.begin() + static_cast<std::size_t>(s) * n_actions);
        }
        return p;
    }

    /// log pi[s][a] for every cell; the workhorse behind per-sample NLL.
    void log_prob_table(std::vector<double>& out) const {
        out.resize(logits.size());
        for (int s = 0; s < n_states; ++s) {
            const auto row = logit_row(s);
            const double lse = logsumexp(row);
            for (int a = 0; a < n_actions; ++a)
                out[static_cast<std::size_t>(s) * n_actions + a] = row[a] - lse;
        }
    }

    int sample_action(int s, Rng& rng) const { return sample_discrete(probs_row(s), rng); }

    void per_sample_nll(const TabularDataset& d, std::vector<double>& out) const {
        std::vector<double> table;
        log_prob_table(table);
        out.resize(d.size());
        for (std::size_t i = 0; i < d.size(); ++i)
            out[i] = -table[static_cast<std::size_t>(d.states[i]) * n_actions + d.actions[i]];
    }

    /// Mean NLL over the indexed pairs and its exact gradient w.r.t. logits.
    /// Optional per-sample weights multiply each pair's NLL.
    double nll_and_grad(const TabularDataset& d, std::span<const std::uint32_t> idx, Gradient& grad,
                        const std::vector<double>* weights = nullptr) const {
        if (idx.empty()) throw config_error("nll_and_grad: empty batch");
        grad.assign(param_count(), 0.0);
        const double inv = 1.0 / static_cast<double>(idx.size());
        double nll = 0.0;
        std::vector<double> table;
        log_prob_table(table);
        for (std::uint32_t i : idx) {
            const int s = static_cast<int>(d.states[i]);
            const int a = static_cast<int>(d.actions[i]);
            const double w = weights ? (*weights)[i] : 1.0;
            nll += -w * table[static_cast<std::size_t>(s) * n_actions + a] * inv;
            for (int a2 = 0; a2 < n_actions; ++a2) {
                const double pa = std::exp(table[static_cast<std::size_t>(s) * n_actions + a2]);
                grad[static_cast<std::size_t>(s) * n_actions + a2] +=
                    w * inv * (pa - (a2 == a ? 1.0 : 0.0));
            }
        }
        return nll;
    }

    double entropy(int s) const {
        const auto p = probs_row(s);
        double h = 0.0;
        for (double x : p)
            if (x > 0.0) h -= x * std::log(x);
        return h;
    }

    /// Adds the gradient of -coef * mean_i H(pi(.|s_i)) over the batch.
    void add_entropy_grad(const TabularDataset& d, std::span<const std::uint32_t> idx, double coef,
                          Gradient& grad) const {
        if (coef == 0.0) return;
        const double inv = 1.0 / static_cast<double>(idx.size());
        for (std::uint32_t i : idx) {
            const int s = static_cast<int>(d.states[i]);
            const auto p = probs_row(s);
            double h = 0.0;
            for (double x : p)
                if (x > 0.0) h -= x * std::log(x);
            for (int a = 0; a < n_actions; ++a) {
                const double pa = p[a];
                if (pa > 0.0)
                    grad[static_cast<std::size_t>(s) * n_actions + a] +=
                        coef * inv * pa * (std::log(pa) + h);
            }
        }
    }
};

/// Softmax of Q*/softness; softness 0 degenerates to the greedy policy.
inline TabularSoftmaxPolicy expert_policy(const TabularMDP& mdp, double softness, double vi_tol = 1e-10) {
    if (softness < 0.0) throw config_error("expert_policy: softness must be >= 0");
    const auto vi = value_iteration(mdp, vi_tol);
    TabularSoftmaxPolicy p = TabularSoftmaxPolicy::zeros(mdp.n_states, mdp.n_actions);
    for (int s = 0; s < mdp.n_states; ++s)
        for (int a = 0; a < mdp.n_actions; ++a) {
            const double q = vi.q[static_cast<std::size_t>(s) * mdp.n_actions + a];
            p.logits[static_cast<std::size_t>(s) * mdp.n_actions + a] =
                softness > 0.0 ? q / softness : (a == vi.greedy[s] ? 0.0 : -1e9);
        }
    return p;
}

/// Weighted square-mean of per-state total variation between two tabular
/// policies: sum_s w(s) (0.5 sum_a |p1 - p2|)^2.
inline double tv_distance(const TabularSoftmaxPolicy& p1, const TabularSoftmaxPolicy& p2,
                          std::span<const double> state_weights) {
    if (p1.n_states != p2.n_states || p1.n_actions != p2.n_actions)
        throw config_error("tv_distance: mismatched state/action spaces");
    double out = 0.0;
    for (int s = 0; s < p1.n_states; ++s) {
        if (state_weights[s] == 0.0) continue;
        const auto a1 = p1.probs_row(s);
        const auto a2 = p2.probs_row(s);
        double tv = 0.0;
        for (int a = 0; a < p1.n_actions; ++a) tv += std::abs(a1[a] - a2[a]);
        tv *= 0.5;
        out += state_weights[s] * tv * tv;
    }
    return out;
}

// ---------------------------------------------------------------------------
// GaussianMlpPolicy
// ---------------------------------------------------------------------------

/// Feed-forward Gaussian policy: ReLU hidden layers, tanh-squashed mean in
/// [-1, 1], state-independent per-dimension log-std clamped to [-5, 2]. The
/// density is evaluated on the raw (unclipped) action.
struct GaussianMlpPolicy {
    int state_dim = 0;
    int action_dim = 0;
    std::vector<int> hidden;     // layer widths, default {64, 64, 64}
    std::vector<double> theta;   // [W1 b1 ... Wout bout log_std]

    using dataset_t = ContinuousDataset;

    static constexpr double kLogStdMin = -5.0;
    static constexpr double kLogStdMax = 2.0;

    std::vector<int> dims() const {
        std::vector<int> d;
        d.push_back(state_dim);
        d.insert(d.end(), hidden.begin(), hidden.end());
        d.push_back(action_dim);
        return d;
    }

    static std::size_t weight_count(const std::vector<int>& d) {
        std::size_t n = 0;
        for (std::size_t l = 0; l + 1 < d.size(); ++l)
            n += static_cast<std::size_t>(d[l + 1]) * d[l] + d[l + 1];
        return n;
    }

    std::size_t param_count() const { return weight_count(dims()) + action_dim; }
    std::span<double> params() { return theta; }
    std::span<const double> params() const { return theta; }

    std::size_t log_std_offset() const { return theta.size() - action_dim; }

    double sigma(int k) const {
        return std::exp(std::clamp(theta[log_std_offset() + k], kLogStdMin, kLogStdMax));
    }
    bool log_std_clamped(int k) const {
        const double v = theta[log_std_offset() + k];
        return v < kLogStdMin || v > kLogStdMax;
    }

    /// Symmetric uniform fan-in initialization with a fixed seed; log_std
    /// starts at init_log_std.
    static GaussianMlpPolicy init(int state_dim, int action_dim, std::vector<int> hidden,
                                  seed_t seed, double init_log_std = -0.5) {
        GaussianMlpPolicy p;
        p.state_dim = state_dim;
        p.action_dim = action_dim;
        p.hidden = std::move(hidden);
        const auto d = p.dims();
        p.theta.assign(weight_count(d) + action_dim, 0.0);
        Rng rng = make_rng(split_seed(seed, 0x6d6c70 /* "mlp" */));
        std::size_t off = 0;
        for (std::size_t l = 0; l + 1 < d.size(); ++l) {
            const double bound = 1.0 / std::sqrt(static_cast<double>(d[l]));
            for (int i = 0; i < d[l + 1] * d[l]; ++i) p.theta[off++] = uniform_in(rng, -bound, bound);
            for (int i = 0; i < d[l + 1]; ++i) p.theta[off++] = uniform_in(rng, -bound, bound);
        }
        for (int k = 0; k < action_dim; ++k) p.theta[off++] = init_log_std;
        return p;
    }

    /// Scratch buffers for forward/backward; reusable across calls.
    struct Workspace {
        std::vector<std::vector<double>> act;   // act[l]: post-activation of layer l (act[0] = input)
        std::vector<double> mean;               // tanh-squashed output
        std::vector<std::vector<double>> delta; // backprop buffers
    };

    void forward(const double* state, Workspace& ws) const {
        const auto d = dims();
        const std::size_t layers = d.size() - 1;
        ws.act.resize(layers + 1);
        ws.act[0].assign(state, state + state_dim);
        std::size_t off = 0;
        for (std::size_t l = 0; l < layers; ++l) {
            ws.act[l + 1].assign(d[l + 1], 0.0);
            const double* w = theta.data() + off;
            const double* b = w + static_cast<std::size_t>(d[l + 1]) * d[l];
            for (int i = 0; i < d[l + 1]; ++i) {
                double z = b[i];
                const double* wi = w + static_cast<std::size_t>(i) * d[l];
                for (int j = 0; j < d[l]; ++j) z += wi[j] * ws.act[l][j];
                ws.act[l + 1][i] = (l + 1 < layers) ? std::max(z, 0.0) : z;
            }
            off += static_cast<std::size_t>(d[l + 1]) * d[l] + d[l + 1];
        }
        ws.mean.resize(action_dim);
        for (int k = 0; k < action_dim; ++k) ws.mean[k] = std::tanh(ws.act[layers][k]);
    }

    double nll_of(const double* action, const Workspace& ws) const {
        double nll = 0.5 * action_dim * std::log(2.0 * M_PI);
        for (int k = 0; k < action_dim; ++k) {
            const double sd = sigma(k);
            const double z = (action[k] - ws.mean[k]) / sd;
            nll += 0.5 * z * z + std::log(sd);
        }
        return nll;
    }

    double log_prob(const std::vector<double>& state, const std::vector<double>& action) const {
        Workspace ws;
        forward(state.data(), ws);
        return -nll_of(action.data(), ws);
    }

    std::vector<double> sample_action(const std::vector<double>& state, Rng& rng) const {
        Workspace ws;
        forward(state.data(), ws);
        std::vector<double> a(action_dim);
        for (int k = 0; k < action_dim; ++k) a[k] = ws.mean[k] + sigma(k) * normal01(rng);
        return a;
    }

    void per_sample_nll(const ContinuousDataset& d, std::vector<double>& out) const {
        Workspace ws;
        out.resize(d.size());
        for (std::size_t i = 0; i < d.size(); ++i) {
            forward(d.state(i), ws);
            out[i] = nll_of(d.action(i), ws);
        }
    }

    // Backprop for one sample; accumulates scale * dNLL/dtheta into grad.
    void backward_sample(const double* action, const Workspace& ws, double scale,
                         Gradient& grad, Workspace& scratch) const {
        const auto d = dims();
        const std::size_t layers = d.size() - 1;
        scratch.delta.resize(layers + 1);
        // Output layer: dNLL/dout_k through the tanh squash.
        scratch.delta[layers].assign(action_dim, 0.0);
        for (int k = 0; k < action_dim; ++k) {
            const double sd = sigma(k);
            const double z = (action[k] - ws.mean[k]) / sd;
            const double dmu = -z / sd;                      // dNLL/dmean
            scratch.delta[layers][k] = dmu * (1.0 - ws.mean[k] * ws.mean[k]);
            if (!log_std_clamped(k))
                grad[log_std_offset() + k] += scale * (1.0 - z * z);
        }
        // Walk layers backwards; parameter offsets recomputed from the front.
        std::vector<std::size_t> offs(layers);
        std::size_t off = 0;
        for (std::size_t l = 0; l < layers; ++l) {
            offs[l] = off;
            off += static_cast<std::size_t>(d[l + 1]) * d[l] + d[l + 1];
        }
        for (std::size_t l = layers; l-- > 0;) {
            const double* w = theta.data() + offs[l];
            double* gw = grad.data() + offs[l];
            double* gb = gw + static_cast<std::size_t>(d[l + 1]) * d[l];
            const auto& delta_out = scratch.delta[l + 1];
            for (int i = 0; i < d[l + 1]; ++i) {
                const double di = delta_out[i] * scale;
                double* gwi = gw + static_cast<std::size_t>(i) * d[l];
                for (int j = 0; j < d[l]; ++j) gwi[j] += di * ws.act[l][j];
                gb[i] += di;
            }
            if (l == 0) break;
            scratch.delta[l].assign(d[l], 0.0);
            for (int j = 0; j < d[l]; ++j) {
                if (ws.act[l][j] <= 0.0) continue;  // ReLU gate
                double acc = 0.0;
                for (int i = 0; i < d[l + 1]; ++i)
                    acc += delta_out[i] * w[static_cast<std::size_t>(i) * d[l] + j];
                scratch.delta[l][j] = acc;
            }
        }
    }

    double nll_and_grad(const ContinuousDataset& d, std::span<const std::uint32_t> idx, Gradient& grad,
                        const std::vector<double>* weights = nullptr) const {
        if (idx.empty()) throw config_error("nll_and_grad: empty batch");
        grad.assign(param_count(), 0.0);
        const double inv = 1.0 / static_cast<double>(idx.size());
        double nll = 0.0;
        Workspace ws, scratch;
        for (std::uint32_t i : idx) {
            forward(d.state(i), ws);
            const double w = weights ? (*weights)[i] : 1.0;
            nll += w * inv * nll_of(d.action(i), ws);
            backward_sample(d.action(i), ws, w * inv, grad, scratch);
        }
        return nll;
    }

    double entropy() const {
        double h = 0.5 * action_dim * std::log(2.0 * M_PI * std::numbers::e_v<double>);
        for (int k = 0; k < action_dim; ++k)
            h += std::clamp(theta[log_std_offset() + k], kLogStdMin, kLogStdMax);
        return h;
    }

    /// Gaussian entropy depends only on log_std, not the batch states.
    void add_entropy_grad(const ContinuousDataset&, std::span<const std::uint32_t>, double coef,
                          Gradient& grad) const {
        if (coef == 0.0) return;
        for (int k = 0; k < action_dim; ++k)
            if (!log_std_clamped(k)) grad[log_std_offset() + k] -= coef;
    }
};

using AnyPolicy = std::variant<TabularSoftmaxPolicy, GaussianMlpPolicy>;

// ---------------------------------------------------------------------------
// Policy serialization: magic "RBCP", version u16, class tag u8, shape
// descriptor (u32 count + u32 dims), f64 parameter vector, CRC32. A JSON
// sidecar at <path>.json records the architecture.
// ---------------------------------------------------------------------------

namespace detail {
constexpr std::uint16_t kPolicyVersion = 1;
}

inline void save_policy(const AnyPolicy& pol, const std::string& path) {
    detail::ByteWriter w;
    w.put_bytes("RBCP", 4);
    w.put(detail::kPolicyVersion);
    nlohmann::json sidecar;
    std::visit(
        [&](const auto& p) {
            using T = std::decay_t<decltype(p)>;
            if constexpr (std::is_same_v<T, TabularSoftmaxPolicy>) {
                w.put(std::uint8_t{0});
                w.put(std::uint32_t{2});
                w.put(static_cast<std::uint32_t>(p.n_states));
                w.put(static_cast<std::uint32_t>(p.n_actions));
                sidecar = {{"class", "tabular_softmax"},
                           {"n_states", p.n_states},
                           {"n_actions", p.n_actions}};
            } else {
                w.put(std::uint8_t{1});
                const auto dims = p.dims();
                w.put(static_cast<std::uint32_t>(dims.size()));
                for (int dim : dims) w.put(static_cast<std::uint32_t>(dim));
                sidecar = {{"class", "gaussian_mlp"},
                           {"state_dim", p.state_dim},
                           {"action_dim", p.action_dim},
                           {"hidden", p.hidden}};
            }
            const auto params = p.params();
            w.put(static_cast<std::uint64_t>(params.size()));
            w.put_bytes(params.data(), params.size() * sizeof(double));
        },
        pol);
    detail::finish_and_write(w, path);
    std::ofstream side(path + ".json", std::ios::trunc);
    side << sidecar.dump(2) << "\n";
}

inline AnyPolicy load_policy(const std::string& path) {
    const auto bytes = detail::read_all(path);
    if (bytes.size() < 8) throw parse_error("policy file truncated at field 'magic'");
    std::uint32_t stored_crc;
    std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);
    if (crc32(bytes.data(), bytes.size() - 4) != stored_crc)
        throw parse_error("policy file failed checksum at field 'crc32'");
    detail::ByteReader r{bytes.data(), bytes.size() - 4};
    char magic[4];
    r.get_bytes(magic, 4, "magic");
    if (std::memcmp(magic, "RBCP", 4) != 0) throw parse_error("policy file has bad value in field 'magic'");
    const auto version = r.get<std::uint16_t>("version");
    if (version != detail::kPolicyVersion)
        throw parse_error("policy file version mismatch in field 'version': got " + std::to_string(version));
    const auto tag = r.get<std::uint8_t>("class_tag");
    const auto ndims = r.get<std::uint32_t>("shape_count");
    std::vector<std::uint32_t> dims(ndims);
    for (auto& dim : dims) dim = r.get<std::uint32_t>("shape");
    const auto n_params = static_cast<std::size_t>(r.get<std::uint64_t>("param_count"));

    if (tag == 0) {
        if (ndims != 2) throw parse_error("policy file has bad value in field 'shape_count'");
        TabularSoftmaxPolicy p = TabularSoftmaxPolicy::zeros(static_cast<int>(dims[0]),
                                                             static_cast<int>(dims[1]));
        if (n_params != p.param_count()) throw parse_error("policy file has bad value in field 'param_count'");
        r.get_bytes(p.logits.data(), n_params * sizeof(double), "params");
        return p;
    }
    if (tag == 1) {
        if (ndims < 2) throw parse_error("policy file has bad value in field 'shape_count'");
        GaussianMlpPolicy p;
        p.state_dim = static_cast<int>(dims.front());
        p.action_dim = static_cast<int>(dims.back());
        p.hidden.assign(dims.begin() + 1, dims.end() - 1);
        p.theta.resize(n_params);
        if (n_params != p.param_count()) throw parse_error("policy file has bad value in field 'param_count'");
        r.get_bytes(p.theta.data(), n_params * sizeof(double), "params");
        return p;
    }
    throw parse_error("policy file has bad value in field 'class_tag'");
}

}  // namespace rbc
