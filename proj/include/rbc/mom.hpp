#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "rbc/common.hpp"

namespace rbc {

/// Largest batch size compatible with the corruption level: floor(1/(3 eps)).
/// This is 0 for eps > 1/3, in which case no valid batch size exists and
/// trainers must refuse the configuration. For eps = 0 the batch size is
/// unconstrained and a moderate cap is returned instead.
inline int max_batch_size(double epsilon, int clean_cap = 64) {
    if (epsilon < 0.0 || epsilon >= 0.5) throw config_error("max_batch_size: epsilon must lie in [0, 0.5)");
    if (epsilon == 0.0) return clean_cap;
    return static_cast<int>(1.0 / (3.0 * epsilon));
}

/// Uniformly-random equal-size partition of {0..n-1} into batches of size b.
/// The first num_batches * b entries of `order` form the batches; the
/// n mod b remainder is held out for this round and rotates across draws.
struct BatchPartition {
    std::vector<std::uint32_t> order;
    std::uint32_t n = 0;
    int batch_size = 0;
    std::uint32_t num_batches = 0;

    std::span<const std::uint32_t> batch(std::size_t j) const {
        return {order.data() + j * batch_size, static_cast<std::size_t>(batch_size)};
    }
    std::span<const std::uint32_t> held_out() const {
        return {order.data() + static_cast<std::size_t>(num_batches) * batch_size,
                n - static_cast<std::size_t>(num_batches) * batch_size};
    }
};

/// In-place repartition; `part.order` is reused to avoid reallocation.
inline void repartition(BatchPartition& part, std::uint32_t n, int b, Rng& rng) {
    if (b < 1) throw config_error("partition: batch size must be >= 1");
    if (n < static_cast<std::uint32_t>(b)) throw config_error("partition: n must be >= batch size");
    if (part.order.size() != n) {
        part.order.resize(n);
        std::iota(part.order.begin(), part.order.end(), 0u);
    }
    fisher_yates(part.order, rng);
    part.n = n;
    part.batch_size = b;
    part.num_batches = n / static_cast<std::uint32_t>(b);
}

inline BatchPartition partition(std::uint32_t n, int b, seed_t seed) {
    Rng rng = make_rng(split_seed(seed, 0x70617274 /* "part" */));
    BatchPartition part;
    repartition(part, n, b, rng);
    return part;
}

/// Lower median: the value of ascending rank ceil(M/2) and the smallest
/// original index holding that value.
inline std::pair<double, std::size_t> median_lower(std::span<const double> values) {
    if (values.empty()) throw config_error("median_lower: empty list");
    const std::size_t k = (values.size() + 1) / 2;  // 1-based rank
    std::vector<double> tmp(values.begin(), values.end());
    std::nth_element(tmp.begin(), tmp.begin() + (k - 1), tmp.end());
    const double med = tmp[k - 1];
    for (std::size_t i = 0; i < values.size(); ++i)
        if (values[i] == med) return {med, i};
    return {med, 0};  // unreachable
}

/// Average NLL over one batch: l_j(pi) = (1/b) sum -log pi(a|s).
template <class Pol>
double batch_nll(const Pol& policy, const typename Pol::dataset_t& dataset,
                 std::span<const std::uint32_t> batch_indices) {
    if (batch_indices.empty()) throw config_error("batch_nll: empty batch");
    std::vector<double> nll;
    policy.per_sample_nll(dataset, nll);
    double s = 0.0;
    for (std::uint32_t i : batch_indices) s += nll[i];
    return s / static_cast<double>(batch_indices.size());
}

namespace detail {

/// Per-batch means of a per-sample vector under a partition.
inline void batch_means(const BatchPartition& part, std::span<const double> per_sample,
                        std::vector<double>& out) {
    out.resize(part.num_batches);
    const double inv = 1.0 / part.batch_size;
    for (std::uint32_t j = 0; j < part.num_batches; ++j) {
        double s = 0.0;
        for (std::uint32_t i : part.batch(j)) s += per_sample[i];
        out[j] = s * inv;
    }
}

}  // namespace detail

struct MomValue {
    double value = 0.0;
    std::size_t median_batch = 0;  // argmedian batch, the gradient target
};

/// The min-max MOM tournament objective: median_j (l_j(pi) - l_j(pi_prime)).
template <class Pol>
MomValue mom_objective(const Pol& pi, const Pol& pi_prime, const typename Pol::dataset_t& dataset,
                       const BatchPartition& part) {
    if (part.n != dataset.size()) throw config_error("mom_objective: partition size mismatch");
    std::vector<double> nll_pi, nll_pp, diffs;
    pi.per_sample_nll(dataset, nll_pi);
    pi_prime.per_sample_nll(dataset, nll_pp);
    for (std::size_t i = 0; i < nll_pi.size(); ++i) nll_pi[i] -= nll_pp[i];
    detail::batch_means(part, nll_pi, diffs);
    const auto [value, j] = median_lower(diffs);
    return {value, j};
}

}  // namespace rbc
