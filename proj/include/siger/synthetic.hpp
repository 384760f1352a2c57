#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "siger/dataset.hpp"
#include "siger/dense.hpp"
#include "siger/rng.hpp"

namespace siger {

/// Planted-structure generator for desk-scale experiments: users and items
/// live near cluster centers in a latent space, interactions are sampled
/// from a softmax over latent affinities, and modality features are noisy
/// views of the item latents.
struct SyntheticSpec {
    int n_users = 200;
    int n_items = 100;
    int latent_dim = 16;
    int interactions_per_user = 15;
    double noise_std = 0.3;
    int clusters = 5;
    std::uint64_t seed = 7;
    int feat_dim_visual = 24;
    int feat_dim_textual = 12;

    void validate() const {
        if (n_users < 1 || n_items < 1 || latent_dim < 1 || interactions_per_user < 1 || clusters < 1 ||
            feat_dim_visual < 1 || feat_dim_textual < 1)
            throw std::runtime_error("synthetic spec: counts must be positive");
        if (noise_std < 0) throw std::runtime_error("synthetic spec: noise std must be >= 0");
    }
};

struct SyntheticData {
    InteractionTable table;
    IndexMaps maps;
    ModalityFeatureMatrix visual;
    ModalityFeatureMatrix textual;
    Dense item_latents;  // exposed for diagnostics
    int total_draws = 0;  // pair count before dedup (= n_users * interactions_per_user)
};

namespace detail {

inline Dense cluster_points(RngStream& rng, const Dense& centers, int n, int dim, int clusters, double spread) {
    Dense out(n, dim);
    for (int i = 0; i < n; ++i) {
        const double* c = centers.row(i % clusters);
        double* r = out.row(i);
        for (int j = 0; j < dim; ++j) r[j] = c[j] + spread * rng.normal();
    }
    return out;
}

/// Item latent padded with zeros or truncated to the feature dimension,
/// plus per-entry Gaussian noise.
inline Dense noisy_feature_view(RngStream& rng, const Dense& latents, int feat_dim, double noise_std) {
    Dense out(latents.rows, feat_dim);
    for (int i = 0; i < latents.rows; ++i) {
        const double* z = latents.row(i);
        double* r = out.row(i);
        for (int j = 0; j < feat_dim; ++j) r[j] = (j < latents.cols ? z[j] : 0.0) + noise_std * rng.normal();
    }
    return out;
}

}  // namespace detail

inline SyntheticData generate_synthetic(const SyntheticSpec& spec) {
    spec.validate();
    SyntheticData out;

    RngStream rng_centers(spec.seed, "synth.centers");
    Dense centers(spec.clusters, spec.latent_dim);
    for (std::size_t i = 0; i < centers.size(); ++i) centers.v[i] = rng_centers.normal();

    RngStream rng_users(spec.seed, "synth.users");
    RngStream rng_items(spec.seed, "synth.items");
    Dense user_latents = detail::cluster_points(rng_users, centers, spec.n_users, spec.latent_dim, spec.clusters, 0.25);
    out.item_latents = detail::cluster_points(rng_items, centers, spec.n_items, spec.latent_dim, spec.clusters, 0.25);

    // Interactions: per user, interactions_per_user draws (with replacement)
    // from softmax(z_u . z_i); duplicates collapse in the table.
    RngStream rng_inter(spec.seed, "synth.interactions");
    std::vector<double> cdf(static_cast<std::size_t>(spec.n_items));
    std::vector<std::pair<int, int>> pairs;
    for (int u = 0; u < spec.n_users; ++u) {
        const double* zu = user_latents.row(u);
        double max_dot = -1e300;
        std::vector<double> dots(static_cast<std::size_t>(spec.n_items));
        for (int i = 0; i < spec.n_items; ++i) {
            const double* zi = out.item_latents.row(i);
            double d = 0.0;
            for (int j = 0; j < spec.latent_dim; ++j) d += zu[j] * zi[j];
            dots[static_cast<std::size_t>(i)] = d;
            max_dot = std::max(max_dot, d);
        }
        double acc = 0.0;
        for (int i = 0; i < spec.n_items; ++i) {
            acc += std::exp(dots[static_cast<std::size_t>(i)] - max_dot);
            cdf[static_cast<std::size_t>(i)] = acc;
        }
        for (int k = 0; k < spec.interactions_per_user; ++k) {
            double x = rng_inter.uniform() * acc;
            int i = static_cast<int>(std::lower_bound(cdf.begin(), cdf.end(), x) - cdf.begin());
            if (i >= spec.n_items) i = spec.n_items - 1;
            pairs.emplace_back(u, i);
            out.total_draws++;
        }
    }
    detail::sort_dedup(pairs);
    out.table.n_users = spec.n_users;
    out.table.n_items = spec.n_items;
    out.table.pairs = std::move(pairs);
    out.table.validate();

    RngStream rng_v(spec.seed, "synth.features.visual");
    RngStream rng_t(spec.seed, "synth.features.textual");
    out.visual = {Modality::visual, detail::noisy_feature_view(rng_v, out.item_latents, spec.feat_dim_visual, spec.noise_std)};
    out.textual = {Modality::textual, detail::noisy_feature_view(rng_t, out.item_latents, spec.feat_dim_textual, spec.noise_std)};

    out.maps.user_tokens.reserve(static_cast<std::size_t>(spec.n_users));
    out.maps.item_tokens.reserve(static_cast<std::size_t>(spec.n_items));
    for (int u = 0; u < spec.n_users; ++u) out.maps.user_tokens.push_back("u" + std::to_string(u));
    for (int i = 0; i < spec.n_items; ++i) out.maps.item_tokens.push_back("i" + std::to_string(i));
    return out;
}

}  // namespace siger
