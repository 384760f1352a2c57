#pragma once

#include <algorithm>
#include <cmath>
#include <iostream>
#include <map>
#include <stdexcept>
#include <tuple>
#include <unordered_map>
#include <vector>

#include "siger/dataset.hpp"
#include "siger/dense.hpp"
#include "siger/sparse.hpp"

namespace siger {

struct GraphConfig {
    int k_c = 5;    // top-K collaborative neighbors
    int k_m = 10;   // top-K modality neighbors
    double beta = 0.3;
    bool include_self_modality = true;

    void validate() const {
        if (k_c < 1 || k_m < 1) throw std::runtime_error("graph config: top-K must be >= 1");
        if (beta < 0.0 || beta > 1.0) throw std::runtime_error("graph config: beta must be in [0, 1]");
    }
};

struct CoverageHistogram {
    Modality modality = Modality::visual;
    std::vector<long> counts;  // counts[n] = items with exactly n covered, n = 0..top_n
    long eligible_items = 0;   // items with at least one co-occurring item
};

inline double sigmoid(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    double e = std::exp(x);
    return e / (1.0 + e);
}

/// Symmetric item co-occurrence counts: C[i][j] = number of users that
/// interacted with both i and j. Diagonal is zero; only counts >= 1 stored.
inline SparseMatrix cooccurrence_counts(const std::vector<std::pair<int, int>>& train, int n_items) {
    if (train.empty()) throw std::runtime_error("cooccurrence: empty train set");
    int n_users = 0;
    for (auto [u, i] : train) n_users = std::max(n_users, u + 1);
    std::vector<std::vector<int>> by_user(static_cast<std::size_t>(n_users));
    for (auto [u, i] : train) by_user[static_cast<std::size_t>(u)].push_back(i);
    std::vector<std::unordered_map<int, double>> rows(static_cast<std::size_t>(n_items));
    for (auto& items : by_user) {
        std::sort(items.begin(), items.end());
        items.erase(std::unique(items.begin(), items.end()), items.end());
        for (std::size_t a = 0; a < items.size(); ++a)
            for (std::size_t b = a + 1; b < items.size(); ++b) {
                rows[static_cast<std::size_t>(items[a])][items[b]] += 1.0;
                rows[static_cast<std::size_t>(items[b])][items[a]] += 1.0;
            }
    }
    std::vector<std::tuple<int, int, double>> trip;
    for (int i = 0; i < n_items; ++i)
        for (auto& [j, c] : rows[static_cast<std::size_t>(i)]) trip.emplace_back(i, j, c);
    return csr_from_triplets(n_items, n_items, std::move(trip));
}

namespace detail {

/// Keeps the K largest values per row; ties broken by smaller column index.
/// Rows with fewer than K entries are kept whole.
inline SparseMatrix topk_rows(const SparseMatrix& m, int k) {
    std::vector<std::tuple<int, int, double>> trip;
    std::vector<std::pair<double, int>> row;
    for (int i = 0; i < m.rows; ++i) {
        row.clear();
        for (std::int64_t p = m.offsets[i]; p < m.offsets[i + 1]; ++p)
            row.emplace_back(m.values[p], static_cast<int>(m.indices[p]));
        std::sort(row.begin(), row.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        std::size_t keep = std::min<std::size_t>(row.size(), static_cast<std::size_t>(k));
        for (std::size_t r = 0; r < keep; ++r) trip.emplace_back(i, row[r].second, row[r].first);
    }
    return csr_from_triplets(m.rows, m.cols, std::move(trip));
}

}  // namespace detail

/// Collaborative weights CR = sigmoid(ln C), top-K per row, self excluded
/// (the co-occurrence diagonal is already empty).
inline SparseMatrix collaborative_graph(const SparseMatrix& counts, int k_c) {
    SparseMatrix cr = counts;
    for (auto& v : cr.values) {
        if (v < 1.0) throw std::runtime_error("collaborative_graph: counts must be >= 1");
        v = sigmoid(std::log(v));
    }
    return detail::topk_rows(cr, k_c);
}

/// out_ij = m_ij / sqrt(deg_i * deg_j), degrees taken as row sums on both
/// sides; zero-degree normalization factors are defined as 0.
inline SparseMatrix sym_normalize(const SparseMatrix& m) {
    auto deg = csr_row_sums(m);
    std::vector<double> inv(deg.size());
    for (std::size_t i = 0; i < deg.size(); ++i) inv[i] = deg[i] > 0.0 ? 1.0 / std::sqrt(deg[i]) : 0.0;
    SparseMatrix out = m;
    for (int i = 0; i < m.rows; ++i)
        for (std::int64_t p = m.offsets[i]; p < m.offsets[i + 1]; ++p)
            out.values[p] = m.values[p] * inv[static_cast<std::size_t>(i)] * inv[static_cast<std::size_t>(m.indices[p])];
    return out;
}

struct ModalityGraphResult {
    SparseMatrix pattern;     // top-K similarity rows before normalization
    SparseMatrix normalized;  // sym-normalized graph used for propagation
    int zero_feature_rows = 0;
};

/// kNN graph over (1 + cosine)/2 similarities of raw modality features.
/// All-zero feature rows get similarity 0.5 to everything (cosine defined
/// as 0) and are reported in zero_feature_rows.
inline ModalityGraphResult modality_graph(const ModalityFeatureMatrix& features, int k_m, bool include_self) {
    const Dense& f = features.data;
    Dense unit = row_l2_normalize(f);
    std::vector<char> zero_row(static_cast<std::size_t>(f.rows), 0);
    for (int i = 0; i < f.rows; ++i) {
        double s = 0.0;
        const double* r = unit.row(i);
        for (int j = 0; j < f.cols; ++j) s += r[j] * r[j];
        if (s == 0.0) zero_row[static_cast<std::size_t>(i)] = 1;
    }
    ModalityGraphResult out;
    for (int i = 0; i < f.rows; ++i)
        if (zero_row[static_cast<std::size_t>(i)]) out.zero_feature_rows++;
    if (out.zero_feature_rows > 0)
        std::cerr << "warning: " << out.zero_feature_rows << " all-zero " << modality_name(features.modality)
                  << " feature rows; cosine defined as 0 for them\n";

    std::vector<std::tuple<int, int, double>> trip;
    std::vector<std::pair<double, int>> row(static_cast<std::size_t>(f.rows));
    for (int i = 0; i < f.rows; ++i) {
        const double* ri = unit.row(i);
        for (int j = 0; j < f.rows; ++j) {
            double c;
            if (zero_row[static_cast<std::size_t>(i)] || zero_row[static_cast<std::size_t>(j)]) {
                c = 0.0;
            } else {
                const double* rj = unit.row(j);
                c = 0.0;
                for (int k = 0; k < f.cols; ++k) c += ri[k] * rj[k];
                c = std::clamp(c, -1.0, 1.0);
            }
            row[static_cast<std::size_t>(j)] = {(1.0 + c) / 2.0, j};
        }
        if (!include_self) row[static_cast<std::size_t>(i)].first = -1.0;
        std::sort(row.begin(), row.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        int keep = std::min(f.rows, k_m);
        for (int r = 0; r < keep; ++r)
            if (row[static_cast<std::size_t>(r)].first >= 0.0)
                trip.emplace_back(i, row[static_cast<std::size_t>(r)].second, row[static_cast<std::size_t>(r)].first);
    }
    out.pattern = csr_from_triplets(f.rows, f.rows, std::move(trip));
    out.normalized = sym_normalize(out.pattern);
    return out;
}

/// S_m = beta * C + (1 - beta) * H over the union sparsity pattern. The
/// beta = 0 / beta = 1 endpoints return the untouched input so serialized
/// graphs stay byte-identical.
inline SparseMatrix fuse_graphs(const SparseMatrix& collab, const SparseMatrix& semantic, double beta) {
    if (collab.rows != semantic.rows || collab.cols != semantic.cols)
        throw std::runtime_error("fuse_graphs: dimension mismatch");
    if (beta == 0.0) return semantic;
    if (beta == 1.0) return collab;
    std::vector<std::tuple<int, int, double>> trip;
    for (int i = 0; i < collab.rows; ++i) {
        std::int64_t pa = collab.offsets[i], ea = collab.offsets[i + 1];
        std::int64_t pb = semantic.offsets[i], eb = semantic.offsets[i + 1];
        while (pa < ea || pb < eb) {
            int ca = pa < ea ? collab.indices[pa] : collab.cols;
            int cb = pb < eb ? semantic.indices[pb] : semantic.cols;
            if (ca == cb) {
                trip.emplace_back(i, ca, beta * collab.values[pa] + (1.0 - beta) * semantic.values[pb]);
                ++pa;
                ++pb;
            } else if (ca < cb) {
                trip.emplace_back(i, ca, beta * collab.values[pa]);
                ++pa;
            } else {
                trip.emplace_back(i, cb, (1.0 - beta) * semantic.values[pb]);
                ++pb;
            }
        }
    }
    return csr_from_triplets(collab.rows, collab.cols, std::move(trip));
}

/// Normalized (|U|+|I|)^2 adjacency of the user-item graph, users first.
inline SparseMatrix bipartite_adjacency(const std::vector<std::pair<int, int>>& train, int n_users, int n_items) {
    if (train.empty()) throw std::runtime_error("bipartite_adjacency: empty train set");
    std::vector<std::tuple<int, int, double>> trip;
    trip.reserve(train.size() * 2);
    for (auto [u, i] : train) {
        trip.emplace_back(u, n_users + i, 1.0);
        trip.emplace_back(n_users + i, u, 1.0);
    }
    return sym_normalize(csr_from_triplets(n_users + n_items, n_users + n_items, std::move(trip)));
}

/// Normalized |U| x |I| interaction matrix: entries 1/sqrt(deg_u * deg_i).
inline SparseMatrix user_item_norm(const std::vector<std::pair<int, int>>& train, int n_users, int n_items) {
    if (train.empty()) throw std::runtime_error("user_item_norm: empty train set");
    std::vector<double> udeg(static_cast<std::size_t>(n_users), 0.0), ideg(static_cast<std::size_t>(n_items), 0.0);
    for (auto [u, i] : train) {
        udeg[static_cast<std::size_t>(u)] += 1.0;
        ideg[static_cast<std::size_t>(i)] += 1.0;
    }
    std::vector<std::tuple<int, int, double>> trip;
    trip.reserve(train.size());
    for (auto [u, i] : train)
        trip.emplace_back(u, i, 1.0 / std::sqrt(udeg[static_cast<std::size_t>(u)] * ideg[static_cast<std::size_t>(i)]));
    return csr_from_triplets(n_users, n_items, std::move(trip));
}

/// Figure-style diagnostic: how many of each item's top_n highest-count
/// co-occurring items show up among its semantic neighbors. Items without
/// any co-occurring item are skipped.
inline CoverageHistogram collaborative_coverage(const SparseMatrix& semantic_pattern, const SparseMatrix& counts,
                                                int top_n = 5) {
    if (semantic_pattern.rows != counts.rows) throw std::runtime_error("coverage: dimension mismatch");
    CoverageHistogram h;
    h.counts.assign(static_cast<std::size_t>(top_n) + 1, 0);
    std::vector<std::pair<double, int>> row;
    for (int i = 0; i < counts.rows; ++i) {
        row.clear();
        for (std::int64_t p = counts.offsets[i]; p < counts.offsets[i + 1]; ++p)
            row.emplace_back(counts.values[p], static_cast<int>(counts.indices[p]));
        if (row.empty()) continue;
        std::sort(row.begin(), row.end(), [](const auto& a, const auto& b) {
            if (a.first != b.first) return a.first > b.first;
            return a.second < b.second;
        });
        std::size_t take = std::min<std::size_t>(row.size(), static_cast<std::size_t>(top_n));
        int covered = 0;
        for (std::size_t r = 0; r < take; ++r) {
            int j = row[r].second;
            auto lo = semantic_pattern.indices.begin() + semantic_pattern.offsets[i];
            auto hi = semantic_pattern.indices.begin() + semantic_pattern.offsets[i + 1];
            if (std::binary_search(lo, hi, j)) ++covered;
        }
        h.counts[static_cast<std::size_t>(covered)]++;
        h.eligible_items++;
    }
    return h;
}

/// Every graph the model propagates on, built once from the train pairs and
/// frozen.
struct GraphSet {
    SparseMatrix counts;  // raw co-occurrence (coverage diagnostic input)
    SparseMatrix c_bar;   // normalized collaborative graph
    std::map<Modality, SparseMatrix> h_pattern;  // pre-normalization top-K rows
    std::map<Modality, SparseMatrix> h_bar;
    std::map<Modality, SparseMatrix> s_bar;  // fused EISG per modality
    SparseMatrix g_hat;  // normalized bipartite adjacency
    SparseMatrix r_bar;  // normalized user-item matrix
    int n_users = 0, n_items = 0;
};

inline GraphSet build_graph_set(const std::vector<std::pair<int, int>>& train,
                                const std::map<Modality, ModalityFeatureMatrix>& features, const GraphConfig& cfg,
                                int n_users, int n_items) {
    cfg.validate();
    GraphSet g;
    g.n_users = n_users;
    g.n_items = n_items;
    g.counts = cooccurrence_counts(train, n_items);
    g.c_bar = sym_normalize(collaborative_graph(g.counts, cfg.k_c));
    for (auto& [m, f] : features) {
        auto mg = modality_graph(f, cfg.k_m, cfg.include_self_modality);
        g.h_pattern[m] = std::move(mg.pattern);
        g.h_bar[m] = std::move(mg.normalized);
        g.s_bar[m] = fuse_graphs(g.c_bar, g.h_bar[m], cfg.beta);
    }
    g.g_hat = bipartite_adjacency(train, n_users, n_items);
    g.r_bar = user_item_norm(train, n_users, n_items);
    return g;
}

}  // namespace siger
