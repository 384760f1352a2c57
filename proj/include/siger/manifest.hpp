#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "siger/graphs.hpp"
#include "siger/rng.hpp"

namespace siger {

inline constexpr const char* kToolVersion = "siger 1.0.0";

inline std::uint64_t hash_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open for hashing: " + path);
    std::uint64_t h = 1469598103934665603ull;  // FNV-1a
    char buf[1 << 16];
    while (is.read(buf, sizeof buf) || is.gcount() > 0) {
        std::streamsize n = is.gcount();
        for (std::streamsize i = 0; i < n; ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 1099511628211ull;
        }
        if (!is) break;
    }
    return h;
}

inline std::string hex64(std::uint64_t h) {
    std::ostringstream os;
    os << std::hex << h;
    return os.str();
}

/// Cache key for frozen graphs: dataset content plus the knobs that change them.
inline std::string graph_cache_key(std::uint64_t dataset_hash, const GraphConfig& cfg) {
    std::ostringstream os;
    os << dataset_hash << '|' << cfg.k_c << '|' << cfg.k_m << '|' << cfg.beta << '|'
       << (cfg.include_self_modality ? 1 : 0);
    return hex64(fnv1a64(os.str()));
}

namespace detail {

inline std::string graph_file(const std::string& dir, const std::string& key, const std::string& name) {
    return (std::filesystem::path(dir) / (key + "." + name + ".csr")).string();
}

}  // namespace detail

inline std::vector<std::string> graph_set_files(const std::string& dir, const std::string& key,
                                                const std::vector<Modality>& modalities) {
    std::vector<std::string> files = {
        detail::graph_file(dir, key, "counts"),
        detail::graph_file(dir, key, "c_bar"),
        detail::graph_file(dir, key, "g_hat"),
        detail::graph_file(dir, key, "r_bar"),
    };
    for (Modality m : modalities) {
        files.push_back(detail::graph_file(dir, key, std::string("h_pattern_") + modality_name(m)));
        files.push_back(detail::graph_file(dir, key, std::string("h_bar_") + modality_name(m)));
        files.push_back(detail::graph_file(dir, key, std::string("s_bar_") + modality_name(m)));
    }
    return files;
}

inline void save_graph_set(const GraphSet& g, const std::string& dir, const std::string& key) {
    std::filesystem::create_directories(dir);
    save_csr(detail::graph_file(dir, key, "counts"), g.counts);
    save_csr(detail::graph_file(dir, key, "c_bar"), g.c_bar);
    save_csr(detail::graph_file(dir, key, "g_hat"), g.g_hat);
    save_csr(detail::graph_file(dir, key, "r_bar"), g.r_bar);
    for (const auto& [m, s] : g.h_pattern)
        save_csr(detail::graph_file(dir, key, std::string("h_pattern_") + modality_name(m)), s);
    for (const auto& [m, s] : g.h_bar)
        save_csr(detail::graph_file(dir, key, std::string("h_bar_") + modality_name(m)), s);
    for (const auto& [m, s] : g.s_bar)
        save_csr(detail::graph_file(dir, key, std::string("s_bar_") + modality_name(m)), s);
}

inline GraphSet load_graph_set(const std::string& dir, const std::string& key,
                               const std::vector<Modality>& modalities) {
    GraphSet g;
    g.counts = load_csr(detail::graph_file(dir, key, "counts"));
    g.c_bar = load_csr(detail::graph_file(dir, key, "c_bar"));
    g.g_hat = load_csr(detail::graph_file(dir, key, "g_hat"));
    g.r_bar = load_csr(detail::graph_file(dir, key, "r_bar"));
    for (Modality m : modalities) {
        g.h_pattern[m] = load_csr(detail::graph_file(dir, key, std::string("h_pattern_") + modality_name(m)));
        g.h_bar[m] = load_csr(detail::graph_file(dir, key, std::string("h_bar_") + modality_name(m)));
        g.s_bar[m] = load_csr(detail::graph_file(dir, key, std::string("s_bar_") + modality_name(m)));
    }
    g.n_users = g.r_bar.rows;
    g.n_items = g.r_bar.cols;
    return g;
}

/// Loads the frozen graphs for (dataset, config) from the cache, or builds and
/// stores them. Sets `cache_hit` when no recomputation happened.
inline GraphSet graphs_cached(const std::string& cache_dir, std::uint64_t dataset_hash,
                              const std::vector<std::pair<int, int>>& train,
                              const std::map<Modality, ModalityFeatureMatrix>& features,
                              const GraphConfig& cfg, int n_users, int n_items, bool* cache_hit = nullptr) {
    std::vector<Modality> mods;
    for (const auto& [m, f] : features) {
        (void)f;
        mods.push_back(m);
    }
    std::string key = graph_cache_key(dataset_hash, cfg);
    bool all_present = !cache_dir.empty();
    if (all_present)
        for (const auto& f : graph_set_files(cache_dir, key, mods))
            if (!std::filesystem::exists(f)) {
                all_present = false;
                break;
            }
    if (all_present) {
        if (cache_hit) *cache_hit = true;
        return load_graph_set(cache_dir, key, mods);
    }
    if (cache_hit) *cache_hit = false;
    GraphSet g = build_graph_set(train, features, cfg, n_users, n_items);
    if (!cache_dir.empty()) save_graph_set(g, cache_dir, key);
    return g;
}

inline void write_manifest(const nlohmann::json& manifest, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os << manifest.dump(2) << '\n';
}

inline void write_coverage_csv(const std::vector<CoverageHistogram>& hists, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os << "modality,bin,count,eligible_items\n";
    for (const auto& h : hists)
        for (std::size_t bin = 0; bin < h.counts.size(); ++bin)
            os << modality_name(h.modality) << ',' << bin << ',' << h.counts[bin] << ',' << h.eligible_items
               << '\n';
}

}  // namespace siger
