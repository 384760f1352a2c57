#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "siger/dataset.hpp"
#include "siger/dense.hpp"
#include "siger/model.hpp"

namespace siger {

struct MetricReport {
    std::vector<int> ks;
    std::map<int, double> recall;  // empty when no eligible users
    std::map<int, double> ndcg;
    int eligible_users = 0;
    std::string split_tag = "general";
    std::string variant_tag = "full";
};

/// All non-excluded items ordered by score descending, ties by ascending index.
inline std::vector<int> rank_items(const Dense& e, int user, const std::vector<int>& exclusion, int n_users,
                                   int n_items) {
    std::vector<char> skip(static_cast<std::size_t>(n_items), 0);
    for (int i : exclusion) skip[static_cast<std::size_t>(i)] = 1;
    const double* u = e.row(user);
    std::vector<std::pair<double, int>> scored;
    scored.reserve(static_cast<std::size_t>(n_items));
    for (int i = 0; i < n_items; ++i) {
        if (skip[static_cast<std::size_t>(i)]) continue;
        const double* x = e.row(n_users + i);
        double s = 0.0;
        for (int j = 0; j < e.cols; ++j) s += u[j] * x[j];
        scored.emplace_back(s, i);
    }
    std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    std::vector<int> out;
    out.reserve(scored.size());
    for (auto& [s, i] : scored) out.push_back(i);
    return out;
}

inline double recall_at_k(const std::vector<int>& ranked, const std::set<int>& relevant, int k) {
    if (relevant.empty()) throw std::runtime_error("recall_at_k: empty relevant set");
    int hits = 0;
    int top = std::min<int>(k, static_cast<int>(ranked.size()));
    for (int r = 0; r < top; ++r)
        if (relevant.count(ranked[static_cast<std::size_t>(r)])) ++hits;
    return static_cast<double>(hits) / static_cast<double>(relevant.size());
}

inline double ndcg_at_k(const std::vector<int>& ranked, const std::set<int>& relevant, int k) {
    if (relevant.empty()) throw std::runtime_error("ndcg_at_k: empty relevant set");
    double dcg = 0.0;
    int top = std::min<int>(k, static_cast<int>(ranked.size()));
    for (int r = 0; r < top; ++r)
        if (relevant.count(ranked[static_cast<std::size_t>(r)])) dcg += 1.0 / std::log2(r + 2.0);
    double idcg = 0.0;
    int ideal = std::min<int>(k, static_cast<int>(relevant.size()));
    for (int r = 0; r < ideal; ++r) idcg += 1.0 / std::log2(r + 2.0);
    return idcg == 0.0 ? 0.0 : dcg / idcg;
}

/// Full-ranking metrics from precomputed final representations. Each user's
/// training items are excluded from the candidate list; users whose relevant
/// set is empty are skipped. `cold_restrict`, when non-null, intersects every
/// relevant set with the given item list.
inline MetricReport evaluate_representations(const Dense& e, int n_users, int n_items,
                                             const std::vector<std::pair<int, int>>& train,
                                             const std::vector<std::pair<int, int>>& relevant_pairs,
                                             const std::vector<int>& ks,
                                             const std::vector<int>* cold_restrict = nullptr) {
    MetricReport rep;
    rep.ks = ks;
    std::vector<std::vector<int>> train_items(static_cast<std::size_t>(n_users));
    for (auto [u, i] : train) train_items[static_cast<std::size_t>(u)].push_back(i);
    std::vector<std::set<int>> rel(static_cast<std::size_t>(n_users));
    if (cold_restrict) {
        std::set<int> cold(cold_restrict->begin(), cold_restrict->end());
        for (auto [u, i] : relevant_pairs)
            if (cold.count(i)) rel[static_cast<std::size_t>(u)].insert(i);
    } else {
        for (auto [u, i] : relevant_pairs) rel[static_cast<std::size_t>(u)].insert(i);
    }
    std::map<int, double> rsum, nsum;
    for (int k : ks) {
        rsum[k] = 0.0;
        nsum[k] = 0.0;
    }
    for (int u = 0; u < n_users; ++u) {
        const auto& r = rel[static_cast<std::size_t>(u)];
        if (r.empty()) continue;
        ++rep.eligible_users;
        std::vector<int> ranked = rank_items(e, u, train_items[static_cast<std::size_t>(u)], n_users, n_items);
        for (int k : ks) {
            rsum[k] += recall_at_k(ranked, r, k);
            nsum[k] += ndcg_at_k(ranked, r, k);
        }
    }
    if (rep.eligible_users > 0) {
        for (int k : ks) {
            rep.recall[k] = rsum[k] / rep.eligible_users;
            rep.ndcg[k] = nsum[k] / rep.eligible_users;
        }
    }
    return rep;
}

/// One clean forward pass, then full-ranking metrics on the chosen pair set.
inline MetricReport evaluate(const ModelParams& params, const GraphSet& graphs,
                             const std::map<Modality, ModalityFeatureMatrix>& features, const ModelHyper& hyper,
                             const DatasetSplit& split, const std::vector<std::pair<int, int>>& relevant_pairs,
                             const std::vector<int>& ks) {
    ForwardOutputs fwd = forward_clean(params, graphs, features, hyper);
    // Restrict relevance to cold items only when the pair set touches them;
    // a cold split's validation pairs are all warm, and zeroing them would
    // make the report useless for model selection.
    const std::vector<int>* cold = nullptr;
    if (split.mode == SplitMode::cold_start) {
        for (auto [u, i] : relevant_pairs) {
            (void)u;
            if (std::binary_search(split.cold_items.begin(), split.cold_items.end(), i)) {
                cold = &split.cold_items;
                break;
            }
        }
    }
    MetricReport rep = evaluate_representations(fwd.e_final, params.n_users, params.n_items, split.train,
                                                relevant_pairs, ks, cold);
    rep.split_tag = split.mode == SplitMode::cold_start ? "cold-start" : "general";
    return rep;
}

inline void write_metric_csv(const std::vector<MetricReport>& reports, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os << "variant,split,k,recall,ndcg,eligible_users\n";
    os << std::setprecision(10);
    for (const auto& r : reports)
        for (int k : r.ks) {
            os << r.variant_tag << ',' << r.split_tag << ',' << k << ',';
            if (r.recall.count(k))
                os << r.recall.at(k) << ',' << r.ndcg.at(k);
            else
                os << "absent,absent";
            os << ',' << r.eligible_users << '\n';
        }
}

/// Aligned-column table with one row per variant: R@10 R@20 N@10 N@20.
inline std::string format_metric_table(const std::vector<MetricReport>& reports) {
    std::ostringstream os;
    os << std::left << std::setw(20) << "variant" << std::setw(12) << "split";
    std::vector<int> ks = reports.empty() ? std::vector<int>{10, 20} : reports.front().ks;
    for (int k : ks) os << std::right << std::setw(10) << ("R@" + std::to_string(k));
    for (int k : ks) os << std::right << std::setw(10) << ("N@" + std::to_string(k));
    os << '\n';
    os << std::fixed << std::setprecision(4);
    for (const auto& r : reports) {
        os << std::left << std::setw(20) << r.variant_tag << std::setw(12) << r.split_tag;
        for (int k : r.ks) {
            if (r.recall.count(k))
                os << std::right << std::setw(10) << r.recall.at(k);
            else
                os << std::right << std::setw(10) << "absent";
        }
        for (int k : r.ks) {
            if (r.ndcg.count(k))
                os << std::right << std::setw(10) << r.ndcg.at(k);
            else
                os << std::right << std::setw(10) << "absent";
        }
        os << '\n';
    }
    return os.str();
}

}  // namespace siger
