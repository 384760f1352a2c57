#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "siger/dense.hpp"
#include "siger/rng.hpp"

namespace siger {

enum class Modality { visual, textual };

inline const char* modality_name(Modality m) { return m == Modality::visual ? "visual" : "textual"; }

inline Modality modality_from_name(const std::string& s) {
    if (s == "visual" || s == "v") return Modality::visual;
    if (s == "textual" || s == "t") return Modality::textual;
    throw std::runtime_error("unknown modality: " + s);
}

/// Observed user-item pairs over contiguous index spaces. Pairs are kept
/// sorted and unique.
struct InteractionTable {
    int n_users = 0;
    int n_items = 0;
    std::vector<std::pair<int, int>> pairs;
    std::vector<std::int64_t> timestamps;  // empty, or aligned with pairs

    void validate() const {
        if (pairs.empty()) throw std::runtime_error("interaction table is empty");
        if (!timestamps.empty() && timestamps.size() != pairs.size())
            throw std::runtime_error("timestamps misaligned with pairs");
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            auto [u, it] = pairs[i];
            if (u < 0 || u >= n_users || it < 0 || it >= n_items)
                throw std::runtime_error("interaction index out of range");
            if (i > 0 && pairs[i] <= pairs[i - 1]) throw std::runtime_error("pairs not sorted unique");
        }
    }
};

/// Token <-> dense-index maps; index is the position in the token vector.
struct IndexMaps {
    std::vector<std::string> user_tokens;
    std::vector<std::string> item_tokens;
};

struct ModalityFeatureMatrix {
    Modality modality = Modality::visual;
    Dense data;  // |I| x d_m
};

enum class SplitMode { general, cold_start };

struct DatasetSplit {
    std::vector<std::pair<int, int>> train, valid, test;
    SplitMode mode = SplitMode::general;
    std::uint64_t seed = 0;
    std::vector<int> cold_items;       // cold_start mode only
    int users_dropped_from_train = 0;  // users whose every pair went cold
};

struct LoadedInteractions {
    InteractionTable table;
    IndexMaps maps;
};

namespace detail {

inline std::vector<std::string> split_ws(const std::string& line) {
    std::vector<std::string> out;
    std::istringstream ss(line);
    std::string tok;
    while (ss >> tok) out.push_back(tok);
    return out;
}

inline void sort_dedup(std::vector<std::pair<int, int>>& pairs) {
    std::sort(pairs.begin(), pairs.end());
    pairs.erase(std::unique(pairs.begin(), pairs.end()), pairs.end());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Interaction text format: one pair per line, `user item [timestamp]`,
// whitespace separated; '#'-prefixed lines are comments.
// ---------------------------------------------------------------------------

/// Reads interactions, assigning contiguous indices in first-appearance
/// order. Duplicate pairs are collapsed (first timestamp wins).
inline LoadedInteractions load_interactions(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open: " + path);
    LoadedInteractions out;
    std::unordered_map<std::string, int> umap, imap;
    std::map<std::pair<int, int>, std::optional<std::int64_t>> seen;
    std::string line;
    int lineno = 0;
    bool any_ts = false;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        auto toks = detail::split_ws(line);
        if (toks.empty()) continue;
        if (toks.size() != 2 && toks.size() != 3)
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected `user item [timestamp]`");
        auto [uit, unew] = umap.try_emplace(toks[0], static_cast<int>(out.maps.user_tokens.size()));
        if (unew) out.maps.user_tokens.push_back(toks[0]);
        auto [iit, inew] = imap.try_emplace(toks[1], static_cast<int>(out.maps.item_tokens.size()));
        if (inew) out.maps.item_tokens.push_back(toks[1]);
        std::optional<std::int64_t> ts;
        if (toks.size() == 3) {
            try {
                ts = std::stoll(toks[2]);
            } catch (const std::exception&) {
                throw std::runtime_error(path + ":" + std::to_string(lineno) + ": bad timestamp `" + toks[2] + "`");
            }
            any_ts = true;
        }
        seen.try_emplace({uit->second, iit->second}, ts);
    }
    if (seen.empty()) throw std::runtime_error(path + ": no interactions");
    out.table.n_users = static_cast<int>(out.maps.user_tokens.size());
    out.table.n_items = static_cast<int>(out.maps.item_tokens.size());
    out.table.pairs.reserve(seen.size());
    for (auto& [p, ts] : seen) {
        out.table.pairs.push_back(p);
        if (any_ts) out.table.timestamps.push_back(ts.value_or(0));
    }
    out.table.validate();
    return out;
}

/// Reads interactions against fixed token maps (e.g. a split file of an
/// already prepared dataset). Unknown tokens are an error.
inline InteractionTable load_interactions_mapped(const std::string& path, const IndexMaps& maps) {
    std::unordered_map<std::string, int> umap, imap;
    for (std::size_t i = 0; i < maps.user_tokens.size(); ++i) umap[maps.user_tokens[i]] = static_cast<int>(i);
    for (std::size_t i = 0; i < maps.item_tokens.size(); ++i) imap[maps.item_tokens[i]] = static_cast<int>(i);
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open: " + path);
    InteractionTable t;
    t.n_users = static_cast<int>(maps.user_tokens.size());
    t.n_items = static_cast<int>(maps.item_tokens.size());
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        auto toks = detail::split_ws(line);
        if (toks.size() != 2 && toks.size() != 3)
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected `user item [timestamp]`");
        auto u = umap.find(toks[0]);
        auto i = imap.find(toks[1]);
        if (u == umap.end()) throw std::runtime_error(path + ":" + std::to_string(lineno) + ": unknown user token");
        if (i == imap.end()) throw std::runtime_error(path + ":" + std::to_string(lineno) + ": unknown item token");
        t.pairs.emplace_back(u->second, i->second);
    }
    detail::sort_dedup(t.pairs);
    if (t.pairs.empty()) throw std::runtime_error(path + ": no interactions");
    t.validate();
    return t;
}

inline void save_interactions(const InteractionTable& table, const IndexMaps& maps, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    for (std::size_t k = 0; k < table.pairs.size(); ++k) {
        auto [u, i] = table.pairs[k];
        f << maps.user_tokens[static_cast<std::size_t>(u)] << '\t' << maps.item_tokens[static_cast<std::size_t>(i)];
        if (!table.timestamps.empty()) f << '\t' << table.timestamps[k];
        f << '\n';
    }
    if (!f) throw std::runtime_error("write failed: " + path);
}

/// Pair-set writer for split files; indices rendered as tokens via the maps.
inline void save_pairs(const std::vector<std::pair<int, int>>& pairs, const IndexMaps& maps,
                       const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    for (auto [u, i] : pairs)
        f << maps.user_tokens[static_cast<std::size_t>(u)] << '\t'
          << maps.item_tokens[static_cast<std::size_t>(i)] << '\n';
    if (!f) throw std::runtime_error("write failed: " + path);
}

/// Pair-set reader against fixed maps; tolerates an empty file.
inline std::vector<std::pair<int, int>> load_pairs(const std::string& path, const IndexMaps& maps) {
    std::unordered_map<std::string, int> umap, imap;
    for (std::size_t i = 0; i < maps.user_tokens.size(); ++i) umap[maps.user_tokens[i]] = static_cast<int>(i);
    for (std::size_t i = 0; i < maps.item_tokens.size(); ++i) imap[maps.item_tokens[i]] = static_cast<int>(i);
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open: " + path);
    std::vector<std::pair<int, int>> pairs;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        auto toks = detail::split_ws(line);
        if (toks.size() != 2 && toks.size() != 3)
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected `user item [timestamp]`");
        auto u = umap.find(toks[0]);
        auto i = imap.find(toks[1]);
        if (u == umap.end()) throw std::runtime_error(path + ":" + std::to_string(lineno) + ": unknown user token");
        if (i == imap.end()) throw std::runtime_error(path + ":" + std::to_string(lineno) + ": unknown item token");
        pairs.emplace_back(u->second, i->second);
    }
    detail::sort_dedup(pairs);
    return pairs;
}

inline void save_index_map(const std::vector<std::string>& tokens, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    for (std::size_t i = 0; i < tokens.size(); ++i) f << tokens[i] << '\t' << i << '\n';
    if (!f) throw std::runtime_error("write failed: " + path);
}

inline std::vector<std::string> load_index_map(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open: " + path);
    std::vector<std::string> tokens;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        auto toks = detail::split_ws(line);
        if (toks.size() != 2) throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected `token index`");
        if (std::stoll(toks[1]) != static_cast<long long>(tokens.size()))
            throw std::runtime_error(path + ":" + std::to_string(lineno) + ": indices must be contiguous from 0");
        tokens.push_back(toks[0]);
    }
    return tokens;
}

// ---------------------------------------------------------------------------
// Feature matrices. Two on-disk formats:
//   SIGER-FEAT v1 binary: "SIGER-FEAT 1 <rows> <cols>\n" + rows*cols f32 LE.
//   plain text: "<rows> <cols>" header then rows*cols whitespace floats.
// ---------------------------------------------------------------------------

inline void check_features_finite(const Dense& d, const std::string& path) {
    for (int i = 0; i < d.rows; ++i)
        for (int j = 0; j < d.cols; ++j)
            if (!std::isfinite(d.at(i, j)))
                throw std::runtime_error(path + ": non-finite feature at row " + std::to_string(i));
}

inline ModalityFeatureMatrix load_modality_features(const std::string& path, Modality modality) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open: " + path);
    char magic[11] = {0};
    f.read(magic, 10);
    f.seekg(0);
    ModalityFeatureMatrix out;
    out.modality = modality;
    if (std::string(magic, 10) == "SIGER-FEAT") {
        std::string header;
        std::getline(f, header);
        int rows = 0, cols = 0;
        if (std::sscanf(header.c_str(), "SIGER-FEAT 1 %d %d", &rows, &cols) != 2)
            throw std::runtime_error("bad SIGER-FEAT header in " + path);
        if (rows <= 0 || cols <= 0) throw std::runtime_error("bad dimensions in " + path);
        std::vector<float> buf(static_cast<std::size_t>(rows) * static_cast<std::size_t>(cols));
        f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
        if (!f) throw std::runtime_error(path + ": truncated payload, expected " + std::to_string(buf.size()) + " floats");
        out.data = Dense(rows, cols);
        for (std::size_t i = 0; i < buf.size(); ++i) out.data.v[i] = static_cast<double>(buf[i]);
    } else {
        int rows = 0, cols = 0;
        if (!(f >> rows >> cols) || rows <= 0 || cols <= 0)
            throw std::runtime_error("bad text feature header in " + path);
        out.data = Dense(rows, cols);
        for (std::size_t i = 0; i < out.data.size(); ++i) {
            if (!(f >> out.data.v[i]))
                throw std::runtime_error(path + ": truncated payload, expected " +
                                         std::to_string(out.data.size()) + " values");
        }
    }
    check_features_finite(out.data, path);
    return out;
}

inline void save_modality_features(const Dense& data, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    char header[64];
    int n = std::snprintf(header, sizeof(header), "SIGER-FEAT 1 %d %d\n", data.rows, data.cols);
    f.write(header, n);
    std::vector<float> buf(data.size());
    for (std::size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(data.v[i]);
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!f) throw std::runtime_error("write failed: " + path);
}

// ---------------------------------------------------------------------------
// K-core filtering and splits.
// ---------------------------------------------------------------------------

struct KcoreResult {
    InteractionTable table;
    std::vector<int> kept_users;  // original indices, ascending
    std::vector<int> kept_items;
};

/// Iteratively removes users and items with degree < k until fixpoint, then
/// re-densifies the index spaces (preserving relative order).
inline KcoreResult kcore_filter(const InteractionTable& table, int k) {
    if (k < 1) throw std::runtime_error("kcore: k must be >= 1");
    std::vector<char> ukeep(static_cast<std::size_t>(table.n_users), 1);
    std::vector<char> ikeep(static_cast<std::size_t>(table.n_items), 1);
    bool changed = true;
    while (changed) {
        changed = false;
        std::vector<int> udeg(static_cast<std::size_t>(table.n_users), 0);
        std::vector<int> ideg(static_cast<std::size_t>(table.n_items), 0);
        for (auto [u, i] : table.pairs) {
            if (ukeep[static_cast<std::size_t>(u)] && ikeep[static_cast<std::size_t>(i)]) {
                udeg[static_cast<std::size_t>(u)]++;
                ideg[static_cast<std::size_t>(i)]++;
            }
        }
        for (int u = 0; u < table.n_users; ++u)
            if (ukeep[static_cast<std::size_t>(u)] && udeg[static_cast<std::size_t>(u)] < k) {
                ukeep[static_cast<std::size_t>(u)] = 0;
                changed = true;
            }
        for (int i = 0; i < table.n_items; ++i)
            if (ikeep[static_cast<std::size_t>(i)] && ideg[static_cast<std::size_t>(i)] < k) {
                ikeep[static_cast<std::size_t>(i)] = 0;
                changed = true;
            }
    }
    KcoreResult out;
    std::vector<int> unew(static_cast<std::size_t>(table.n_users), -1);
    std::vector<int> inew(static_cast<std::size_t>(table.n_items), -1);
    for (int u = 0; u < table.n_users; ++u)
        if (ukeep[static_cast<std::size_t>(u)]) {
            unew[static_cast<std::size_t>(u)] = static_cast<int>(out.kept_users.size());
            out.kept_users.push_back(u);
        }
    for (int i = 0; i < table.n_items; ++i)
        if (ikeep[static_cast<std::size_t>(i)]) {
            inew[static_cast<std::size_t>(i)] = static_cast<int>(out.kept_items.size());
            out.kept_items.push_back(i);
        }
    if (out.kept_users.empty() || out.kept_items.empty()) throw std::runtime_error("k-core empty");
    out.table.n_users = static_cast<int>(out.kept_users.size());
    out.table.n_items = static_cast<int>(out.kept_items.size());
    for (std::size_t p = 0; p < table.pairs.size(); ++p) {
        auto [u, i] = table.pairs[p];
        if (ukeep[static_cast<std::size_t>(u)] && ikeep[static_cast<std::size_t>(i)]) {
            out.table.pairs.emplace_back(unew[static_cast<std::size_t>(u)], inew[static_cast<std::size_t>(i)]);
            if (!table.timestamps.empty()) out.table.timestamps.push_back(table.timestamps[p]);
        }
    }
    if (out.table.pairs.empty()) throw std::runtime_error("k-core empty");
    out.table.validate();
    return out;
}

namespace detail {

/// Per-user shuffle and floor-proportional assignment; train takes the
/// remainder. Users with fewer than 3 interactions go entirely to train.
inline void split_user_pairs(std::vector<std::pair<int, int>>& user_pairs, std::uint64_t seed, int user,
                             double valid_ratio, double test_ratio, DatasetSplit& out) {
    RngStream rng(seed, "split.user", static_cast<std::uint64_t>(user));
    rng.shuffle(user_pairs);
    int n = static_cast<int>(user_pairs.size());
    int n_valid = 0, n_test = 0;
    if (n >= 3) {
        n_valid = static_cast<int>(std::floor(valid_ratio * n));
        n_test = static_cast<int>(std::floor(test_ratio * n));
    }
    int n_train = n - n_valid - n_test;
    for (int k = 0; k < n; ++k) {
        if (k < n_train)
            out.train.push_back(user_pairs[static_cast<std::size_t>(k)]);
        else if (k < n_train + n_valid)
            out.valid.push_back(user_pairs[static_cast<std::size_t>(k)]);
        else
            out.test.push_back(user_pairs[static_cast<std::size_t>(k)]);
    }
}

inline std::vector<std::vector<std::pair<int, int>>> pairs_by_user(const InteractionTable& t) {
    std::vector<std::vector<std::pair<int, int>>> by_user(static_cast<std::size_t>(t.n_users));
    for (auto p : t.pairs) by_user[static_cast<std::size_t>(p.first)].push_back(p);
    return by_user;
}

}  // namespace detail

inline DatasetSplit split_general(const InteractionTable& table, double train_ratio, double valid_ratio,
                                  double test_ratio, std::uint64_t seed) {
    if (train_ratio <= 0 || valid_ratio <= 0 || test_ratio <= 0 ||
        std::abs(train_ratio + valid_ratio + test_ratio - 1.0) > 1e-9)
        throw std::runtime_error("split ratios must be positive and sum to 1");
    DatasetSplit out;
    out.mode = SplitMode::general;
    out.seed = seed;
    auto by_user = detail::pairs_by_user(table);
    for (int u = 0; u < table.n_users; ++u)
        detail::split_user_pairs(by_user[static_cast<std::size_t>(u)], seed, u, valid_ratio, test_ratio, out);
    detail::sort_dedup(out.train);
    detail::sort_dedup(out.valid);
    detail::sort_dedup(out.test);
    return out;
}

/// Samples ceil(fraction * |I|) items uniformly; all their pairs become the
/// test set. Remaining pairs get a per-user 9:1 train/valid split.
inline DatasetSplit split_cold_start(const InteractionTable& table, double item_fraction, std::uint64_t seed) {
    int n_cold = static_cast<int>(std::ceil(item_fraction * table.n_items));
    if (item_fraction <= 0.0 || item_fraction >= 1.0 || n_cold < 1 || n_cold >= table.n_items)
        throw std::runtime_error("cold-start fraction out of range");
    DatasetSplit out;
    out.mode = SplitMode::cold_start;
    out.seed = seed;
    RngStream rng(seed, "split.cold");
    std::vector<int> items(static_cast<std::size_t>(table.n_items));
    for (int i = 0; i < table.n_items; ++i) items[static_cast<std::size_t>(i)] = i;
    rng.shuffle(items);
    items.resize(static_cast<std::size_t>(n_cold));
    std::sort(items.begin(), items.end());
    out.cold_items = items;
    std::vector<char> is_cold(static_cast<std::size_t>(table.n_items), 0);
    for (int i : items) is_cold[static_cast<std::size_t>(i)] = 1;

    std::vector<std::vector<std::pair<int, int>>> warm(static_cast<std::size_t>(table.n_users));
    std::vector<char> had_pairs(static_cast<std::size_t>(table.n_users), 0);
    for (auto [u, i] : table.pairs) {
        had_pairs[static_cast<std::size_t>(u)] = 1;
        if (is_cold[static_cast<std::size_t>(i)])
            out.test.emplace_back(u, i);
        else
            warm[static_cast<std::size_t>(u)].push_back({u, i});
    }
    for (int u = 0; u < table.n_users; ++u) {
        if (had_pairs[static_cast<std::size_t>(u)] && warm[static_cast<std::size_t>(u)].empty())
            out.users_dropped_from_train++;
        detail::split_user_pairs(warm[static_cast<std::size_t>(u)], seed, u, 0.1, 0.0, out);
    }
    detail::sort_dedup(out.train);
    detail::sort_dedup(out.valid);
    detail::sort_dedup(out.test);
    return out;
}

}  // namespace siger
