#pragma once

#include <nlohmann/json.hpp>

#include <cstdint>
#include <cstring>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "rbc/common.hpp"
#include "rbc/crc32.hpp"
#include "rbc/envsim.hpp"

namespace rbc {

struct SourceMeta {
    std::string env_id;
    double expert_softness = 0.0;
    int horizon = 0;
    seed_t seed = 0;
    double epsilon = 0.0;
    std::string corruption_mode;

    nlohmann::json to_json() const {
        return {{"env_id", env_id},       {"expert_softness", expert_softness},
                {"horizon", horizon},     {"seed", seed},
                {"epsilon", epsilon},     {"corruption_mode", corruption_mode}};
    }
    static SourceMeta from_json(const nlohmann::json& j) {
        SourceMeta m;
        m.env_id = j.value("env_id", "");
        m.expert_softness = j.value("expert_softness", 0.0);
        m.horizon = j.value("horizon", 0);
        m.seed = j.value("seed", seed_t{0});
        m.epsilon = j.value("epsilon", 0.0);
        m.corruption_mode = j.value("corruption_mode", "");
        return m;
    }
};

/// Demonstrations over a finite state/action space. The corruption mask is
/// ground truth for evaluation only; trainers must not read it.
struct TabularDataset {
    std::vector<std::uint32_t> states;
    std::vector<std::uint32_t> actions;
    std::vector<std::uint8_t> corrupted_mask;
    SourceMeta meta;

    std::size_t size() const { return states.size(); }
};

/// Demonstrations with real-valued states and actions, row-major.
struct ContinuousDataset {
    int state_dim = 0;
    int action_dim = 0;
    std::vector<double> states;   // size() * state_dim
    std::vector<double> actions;  // size() * action_dim
    std::vector<std::uint8_t> corrupted_mask;
    SourceMeta meta;

    std::size_t size() const { return corrupted_mask.size(); }
    const double* state(std::size_t i) const { return states.data() + i * state_dim; }
    const double* action(std::size_t i) const { return actions.data() + i * action_dim; }
};

using AnyDataset = std::variant<TabularDataset, ContinuousDataset>;

enum class CorruptionMode { boundary, uniform, custom };

inline CorruptionMode corruption_mode_from_string(const std::string& s) {
    if (s == "boundary") return CorruptionMode::boundary;
    if (s == "uniform") return CorruptionMode::uniform;
    if (s == "custom") return CorruptionMode::custom;
    throw config_error("unknown corruption mode '" + s + "'");
}

struct CorruptionSpec {
    double epsilon = 0.0;
    CorruptionMode mode = CorruptionMode::uniform;
    seed_t seed = 0;
    // Adversarial-placement hook: when set, these indices are corrupted
    // instead of a random floor(eps*N) subset.
    std::optional<std::vector<std::uint32_t>> custom_indices;
    // Test hook: replace with this fixed action instead of a random draw.
    std::optional<std::uint32_t> fixed_action;
    std::optional<std::vector<double>> fixed_action_vec;

    void validate() const {
        if (epsilon < 0.0 || epsilon >= 0.5)
            throw config_error("CorruptionSpec: epsilon must lie in [0, 0.5)");
    }
};

// ---------------------------------------------------------------------------
// Demo collection
// ---------------------------------------------------------------------------

namespace detail {

// Episodes are restarted with probability (1-gamma) per step (capped at the
// default truncation horizon), so each recorded pair is a draw from the
// discounted visitation rho_{pi_E}. Appends pairs until n are collected.
template <class Env, class Pol, class Sink>
void collect_pairs(const Env& env, const Pol& expert, std::size_t n, int horizon, seed_t seed,
                   Sink&& sink) {
    if (n < 1) throw config_error("collect_demos: n must be >= 1");
    if (horizon <= 0) horizon = default_horizon(env.gamma);
    Rng rng = make_rng(split_seed(seed, 0x646d6f73 /* "dmos" */));
    std::size_t got = 0;
    while (got < n) {
        auto state = env.initial_state(rng);
        for (int t = 0; t < horizon && got < n; ++t) {
            auto action = expert.sample_action(state, rng);
            auto [next, reward] = env.step(state, action, rng);
            (void)reward;
            sink(state, action);
            ++got;
            if (uniform01(rng) >= env.gamma) break;  // geometric episode length
            state = std::move(next);
        }
    }
}

}  // namespace detail

template <class Env, class Pol>
TabularDataset collect_demos_tabular(const Env& env, const Pol& expert, std::size_t n, int horizon,
                                     seed_t seed) {
    TabularDataset d;
    d.states.reserve(n);
    d.actions.reserve(n);
    detail::collect_pairs(env, expert, n, horizon, seed, [&](int s, int a) {
        d.states.push_back(static_cast<std::uint32_t>(s));
        d.actions.push_back(static_cast<std::uint32_t>(a));
    });
    d.corrupted_mask.assign(n, 0);
    d.meta.horizon = horizon > 0 ? horizon : default_horizon(env.gamma);
    d.meta.seed = seed;
    return d;
}

template <class Env, class Pol>
ContinuousDataset collect_demos_continuous(const Env& env, const Pol& expert, std::size_t n,
                                           int horizon, seed_t seed) {
    ContinuousDataset d;
    d.state_dim = env.state_dim;
    d.action_dim = env.action_dim;
    d.states.reserve(n * env.state_dim);
    d.actions.reserve(n * env.action_dim);
    detail::collect_pairs(env, expert, n, horizon, seed,
                          [&](const std::vector<double>& s, const std::vector<double>& a) {
                              d.states.insert(d.states.end(), s.begin(), s.end());
                              d.actions.insert(d.actions.end(), a.begin(), a.end());
                          });
    d.corrupted_mask.assign(n, 0);
    d.meta.horizon = horizon > 0 ? horizon : default_horizon(env.gamma);
    d.meta.seed = seed;
    return d;
}

// ---------------------------------------------------------------------------
// Corruption (Huber-style: floor(eps*N) pairs replaced, states untouched)
// ---------------------------------------------------------------------------

namespace detail {

inline std::vector<std::uint32_t> corruption_indices(std::size_t n, const CorruptionSpec& spec,
                                                     Rng& rng) {
    if (spec.custom_indices) return *spec.custom_indices;
    const auto k = static_cast<std::size_t>(spec.epsilon * static_cast<double>(n));
    if (k == 0 && spec.epsilon > 0.0)
        std::cerr << "warning: epsilon*N < 1, zero pairs corrupted\n";
    std::vector<std::uint32_t> all(n);
    for (std::size_t i = 0; i < n; ++i) all[i] = static_cast<std::uint32_t>(i);
    fisher_yates(all, rng);
    all.resize(k);
    return all;
}

}  // namespace detail

/// Tabular corruption: the recorded action is replaced with a uniformly
/// random different action (never a no-op).
inline TabularDataset corrupt(const TabularDataset& input, const CorruptionSpec& spec, int n_actions) {
    spec.validate();
    TabularDataset out = input;
    Rng rng = make_rng(split_seed(spec.seed, 0x63727074 /* "crpt" */));
    for (std::uint32_t i : detail::corruption_indices(input.size(), spec, rng)) {
        if (spec.fixed_action) {
            out.actions[i] = *spec.fixed_action;
        } else {
            if (n_actions < 2) throw config_error("corrupt: need at least 2 actions");
            auto a = static_cast<std::uint32_t>(uniform_index(rng, n_actions - 1));
            if (a >= input.actions[i]) ++a;
            out.actions[i] = a;
        }
        out.corrupted_mask[i] = 1;
    }
    out.meta.epsilon = spec.epsilon;
    return out;
}

/// Continuous corruption: boundary sets each action dimension to -1 or +1 at
/// random; uniform redraws it from U(-1, 1).
inline ContinuousDataset corrupt(const ContinuousDataset& input, const CorruptionSpec& spec) {
    spec.validate();
    ContinuousDataset out = input;
    Rng rng = make_rng(split_seed(spec.seed, 0x63727074));
    for (std::uint32_t i : detail::corruption_indices(input.size(), spec, rng)) {
        double* a = out.actions.data() + static_cast<std::size_t>(i) * out.action_dim;
        for (int k = 0; k < out.action_dim; ++k) {
            if (spec.fixed_action_vec) a[k] = (*spec.fixed_action_vec)[k];
            else if (spec.mode == CorruptionMode::boundary) a[k] = uniform01(rng) < 0.5 ? -1.0 : 1.0;
            else a[k] = uniform_in(rng, -1.0, 1.0);
        }
        out.corrupted_mask[i] = 1;
    }
    out.meta.epsilon = spec.epsilon;
    out.meta.corruption_mode = spec.mode == CorruptionMode::boundary ? "boundary" : "uniform";
    return out;
}

// ---------------------------------------------------------------------------
// Binary dataset format: magic "RBCD", version u16, N u64, state_dim u32,
// action_dim u32 (0,0 for tabular => u32 indices), little-endian payload,
// mask bitset, JSON metadata trailer, CRC32 of everything before it.
// ---------------------------------------------------------------------------

namespace detail {

constexpr std::uint16_t kDatasetVersion = 1;

struct ByteWriter {
    std::vector<std::uint8_t> buf;
    template <class T>
    void put(const T& v) {
        const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
        buf.insert(buf.end(), p, p + sizeof(T));
    }
    void put_bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const std::uint8_t*>(p);
        buf.insert(buf.end(), b, b + n);
    }
};

struct ByteReader {
    const std::uint8_t* p;
    std::size_t left;
    template <class T>
    T get(const char* field) {
        if (left < sizeof(T)) throw parse_error(std::string("dataset file truncated at field '") + field + "'");
        T v;
        std::memcpy(&v, p, sizeof(T));
        p += sizeof(T);
        left -= sizeof(T);
        return v;
    }
    void get_bytes(void* out, std::size_t n, const char* field) {
        if (left < n) throw parse_error(std::string("dataset file truncated at field '") + field + "'");
        std::memcpy(out, p, n);
        p += n;
        left -= n;
    }
};

inline void write_common_tail(ByteWriter& w, const std::vector<std::uint8_t>& mask,
                              const SourceMeta& meta) {
    std::vector<std::uint8_t> bits((mask.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < mask.size(); ++i)
        if (mask[i]) bits[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
    w.put_bytes(bits.data(), bits.size());
    const std::string meta_str = meta.to_json().dump();
    w.put(static_cast<std::uint32_t>(meta_str.size()));
    w.put_bytes(meta_str.data(), meta_str.size());
}

inline void read_common_tail(ByteReader& r, std::size_t n, std::vector<std::uint8_t>& mask,
                             SourceMeta& meta) {
    std::vector<std::uint8_t> bits((n + 7) / 8);
    r.get_bytes(bits.data(), bits.size(), "mask");
    mask.assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) mask[i] = (bits[i / 8] >> (i % 8)) & 1u;
    const auto meta_len = r.get<std::uint32_t>("meta_length");
    std::string meta_str(meta_len, '\0');
    r.get_bytes(meta_str.data(), meta_len, "meta");
    try {
        meta = SourceMeta::from_json(nlohmann::json::parse(meta_str));
    } catch (const nlohmann::json::exception&) {
        throw parse_error("dataset file has malformed JSON metadata");
    }
}

inline void finish_and_write(ByteWriter& w, const std::string& path) {
    const std::uint32_t crc = crc32(w.buf.data(), w.buf.size());
    w.put(crc);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
    f.write(reinterpret_cast<const char*>(w.buf.data()), static_cast<std::streamsize>(w.buf.size()));
    if (!f) throw std::runtime_error("failed writing '" + path + "'");
}

inline std::vector<std::uint8_t> read_all(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open '" + path + "'");
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

}  // namespace detail

inline void save_dataset(const TabularDataset& d, const std::string& path) {
    detail::ByteWriter w;
    w.put_bytes("RBCD", 4);
    w.put(detail::kDatasetVersion);
    w.put(static_cast<std::uint64_t>(d.size()));
    w.put(std::uint32_t{0});
    w.put(std::uint32_t{0});
    w.put_bytes(d.states.data(), d.states.size() * sizeof(std::uint32_t));
    w.put_bytes(d.actions.data(), d.actions.size() * sizeof(std::uint32_t));
    detail::write_common_tail(w, d.corrupted_mask, d.meta);
    detail::finish_and_write(w, path);
}

inline void save_dataset(const ContinuousDataset& d, const std::string& path) {
    detail::ByteWriter w;
    w.put_bytes("RBCD", 4);
    w.put(detail::kDatasetVersion);
    w.put(static_cast<std::uint64_t>(d.size()));
    w.put(static_cast<std::uint32_t>(d.state_dim));
    w.put(static_cast<std::uint32_t>(d.action_dim));
    w.put_bytes(d.states.data(), d.states.size() * sizeof(double));
    w.put_bytes(d.actions.data(), d.actions.size() * sizeof(double));
    detail::write_common_tail(w, d.corrupted_mask, d.meta);
    detail::finish_and_write(w, path);
}

inline void save_dataset(const AnyDataset& d, const std::string& path) {
    std::visit([&](const auto& x) { save_dataset(x, path); }, d);
}

inline AnyDataset load_dataset(const std::string& path) {
    const auto bytes = detail::read_all(path);
    if (bytes.size() < 4 + sizeof(std::uint32_t)) throw parse_error("dataset file truncated at field 'magic'");
    std::uint32_t stored_crc;
    std::memcpy(&stored_crc, bytes.data() + bytes.size() - 4, 4);
    if (crc32(bytes.data(), bytes.size() - 4) != stored_crc)
        throw parse_error("dataset file failed checksum at field 'crc32'");
    detail::ByteReader r{bytes.data(), bytes.size() - 4};

    char magic[4];
    r.get_bytes(magic, 4, "magic");
    if (std::memcmp(magic, "RBCD", 4) != 0) throw parse_error("dataset file has bad value in field 'magic'");
    const auto version = r.get<std::uint16_t>("version");
    if (version != detail::kDatasetVersion)
        throw parse_error("dataset file version mismatch in field 'version': got " + std::to_string(version));
    const auto n = static_cast<std::size_t>(r.get<std::uint64_t>("n"));
    const auto state_dim = r.get<std::uint32_t>("state_dim");
    const auto action_dim = r.get<std::uint32_t>("action_dim");

    if (state_dim == 0 && action_dim == 0) {
        TabularDataset d;
        d.states.resize(n);
        d.actions.resize(n);
        r.get_bytes(d.states.data(), n * sizeof(std::uint32_t), "states");
        r.get_bytes(d.actions.data(), n * sizeof(std::uint32_t), "actions");
        detail::read_common_tail(r, n, d.corrupted_mask, d.meta);
        return d;
    }
    ContinuousDataset d;
    d.state_dim = static_cast<int>(state_dim);
    d.action_dim = static_cast<int>(action_dim);
    d.states.resize(n * state_dim);
    d.actions.resize(n * action_dim);
    r.get_bytes(d.states.data(), d.states.size() * sizeof(double), "states");
    r.get_bytes(d.actions.data(), d.actions.size() * sizeof(double), "actions");
    detail::read_common_tail(r, n, d.corrupted_mask, d.meta);
    return d;
}

inline TabularDataset load_tabular_dataset(const std::string& path) {
    auto d = load_dataset(path);
    if (auto* t = std::get_if<TabularDataset>(&d)) return std::move(*t);
    throw parse_error("dataset at '" + path + "' is not tabular");
}

inline ContinuousDataset load_continuous_dataset(const std::string& path) {
    auto d = load_dataset(path);
    if (auto* c = std::get_if<ContinuousDataset>(&d)) return std::move(*c);
    throw parse_error("dataset at '" + path + "' is not continuous");
}

}  // namespace rbc
