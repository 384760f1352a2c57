#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "siger/dense.hpp"

namespace siger {

/// CSR matrix with non-negative finite weights. Column indices are strictly
/// increasing within each row; this is checked on construction.
struct SparseMatrix {
    int rows = 0;
    int cols = 0;
    std::vector<std::int64_t> offsets;  // rows + 1 entries, last == nnz
    std::vector<std::int32_t> indices;
    std::vector<double> values;

    SparseMatrix() : offsets(1, 0) {}
    SparseMatrix(int r, int c) : rows(r), cols(c), offsets(static_cast<std::size_t>(r) + 1, 0) {}

    std::int64_t nnz() const { return offsets.empty() ? 0 : offsets.back(); }

    void validate() const {
        if (offsets.size() != static_cast<std::size_t>(rows) + 1 || offsets.front() != 0)
            throw std::runtime_error("csr: bad offsets");
        if (indices.size() != values.size() || static_cast<std::int64_t>(indices.size()) != offsets.back())
            throw std::runtime_error("csr: offsets disagree with nnz");
        for (int i = 0; i < rows; ++i) {
            if (offsets[i + 1] < offsets[i]) throw std::runtime_error("csr: offsets not monotone");
            for (std::int64_t p = offsets[i]; p < offsets[i + 1]; ++p) {
                if (indices[p] < 0 || indices[p] >= cols) throw std::runtime_error("csr: column out of range");
                if (p > offsets[i] && indices[p] <= indices[p - 1])
                    throw std::runtime_error("csr: columns not strictly increasing");
                if (!std::isfinite(values[p])) throw std::runtime_error("csr: non-finite value");
            }
        }
    }

    bool operator==(const SparseMatrix& o) const {
        return rows == o.rows && cols == o.cols && offsets == o.offsets && indices == o.indices &&
               values == o.values;
    }
};

/// Builds a CSR matrix from (row, col, value) triplets. Duplicate slots are
/// rejected; zero-valued triplets are kept as explicit entries.
inline SparseMatrix csr_from_triplets(int rows, int cols,
                                      std::vector<std::tuple<int, int, double>> triplets) {
    std::sort(triplets.begin(), triplets.end());
    SparseMatrix m(rows, cols);
    m.indices.reserve(triplets.size());
    m.values.reserve(triplets.size());
    int prev_r = -1, prev_c = -1;
    std::vector<std::int64_t> row_nnz(static_cast<std::size_t>(rows), 0);
    for (auto& [r, c, v] : triplets) {
        if (r == prev_r && c == prev_c) throw std::runtime_error("csr: duplicate triplet");
        prev_r = r;
        prev_c = c;
        row_nnz[static_cast<std::size_t>(r)]++;
        m.indices.push_back(c);
        m.values.push_back(v);
    }
    for (int i = 0; i < rows; ++i) m.offsets[i + 1] = m.offsets[i] + row_nnz[static_cast<std::size_t>(i)];
    m.validate();
    return m;
}

inline SparseMatrix csr_transpose(const SparseMatrix& m) {
    SparseMatrix t(m.cols, m.rows);
    std::vector<std::int64_t> cnt(static_cast<std::size_t>(m.cols), 0);
    for (std::int32_t c : m.indices) cnt[static_cast<std::size_t>(c)]++;
    for (int i = 0; i < m.cols; ++i) t.offsets[i + 1] = t.offsets[i] + cnt[static_cast<std::size_t>(i)];
    t.indices.resize(m.indices.size());
    t.values.resize(m.values.size());
    std::vector<std::int64_t> pos(t.offsets.begin(), t.offsets.end() - 1);
    for (int r = 0; r < m.rows; ++r) {
        for (std::int64_t p = m.offsets[r]; p < m.offsets[r + 1]; ++p) {
            std::int64_t q = pos[static_cast<std::size_t>(m.indices[p])]++;
            t.indices[q] = r;
            t.values[q] = m.values[p];
        }
    }
    return t;
}

/// out = S * X (sparse times dense).
inline Dense spmm(const SparseMatrix& s, const Dense& x) {
    if (s.cols != x.rows) throw std::runtime_error("spmm: dimension mismatch");
    Dense out(s.rows, x.cols);
    for (int i = 0; i < s.rows; ++i) {
        double* oi = out.row(i);
        for (std::int64_t p = s.offsets[i]; p < s.offsets[i + 1]; ++p) {
            double w = s.values[p];
            const double* xr = x.row(s.indices[p]);
            for (int j = 0; j < x.cols; ++j) oi[j] += w * xr[j];
        }
    }
    return out;
}

inline std::vector<double> csr_row_sums(const SparseMatrix& m) {
    std::vector<double> d(static_cast<std::size_t>(m.rows), 0.0);
    for (int i = 0; i < m.rows; ++i)
        for (std::int64_t p = m.offsets[i]; p < m.offsets[i + 1]; ++p) d[static_cast<std::size_t>(i)] += m.values[p];
    return d;
}

inline Dense csr_to_dense(const SparseMatrix& m) {
    Dense out(m.rows, m.cols);
    for (int i = 0; i < m.rows; ++i)
        for (std::int64_t p = m.offsets[i]; p < m.offsets[i + 1]; ++p) out.at(i, m.indices[p]) = m.values[p];
    return out;
}

// ---------------------------------------------------------------------------
// SIGER-CSR v1 container: ASCII header "SIGER-CSR 1 <rows> <cols> <nnz>\n",
// then offsets (int64 LE), indices (int32 LE), values (float64 LE).
// ---------------------------------------------------------------------------

static_assert(sizeof(double) == 8, "expects 64-bit IEEE doubles");

inline void save_csr(const std::string& path, const SparseMatrix& m) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    char header[96];
    int n = std::snprintf(header, sizeof(header), "SIGER-CSR 1 %d %d %lld\n", m.rows, m.cols,
                          static_cast<long long>(m.nnz()));
    f.write(header, n);
    f.write(reinterpret_cast<const char*>(m.offsets.data()),
            static_cast<std::streamsize>(m.offsets.size() * sizeof(std::int64_t)));
    f.write(reinterpret_cast<const char*>(m.indices.data()),
            static_cast<std::streamsize>(m.indices.size() * sizeof(std::int32_t)));
    f.write(reinterpret_cast<const char*>(m.values.data()),
            static_cast<std::streamsize>(m.values.size() * sizeof(double)));
    if (!f) throw std::runtime_error("write failed: " + path);
}

inline SparseMatrix load_csr(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open: " + path);
    std::string header;
    std::getline(f, header);
    int rows = 0, cols = 0;
    long long nnz = 0;
    if (std::sscanf(header.c_str(), "SIGER-CSR 1 %d %d %lld", &rows, &cols, &nnz) != 3)
        throw std::runtime_error("bad SIGER-CSR header in " + path);
    if (rows < 0 || cols < 0 || nnz < 0) throw std::runtime_error("bad dimensions in " + path);
    SparseMatrix m(rows, cols);
    m.indices.resize(static_cast<std::size_t>(nnz));
    m.values.resize(static_cast<std::size_t>(nnz));
    f.read(reinterpret_cast<char*>(m.offsets.data()),
           static_cast<std::streamsize>(m.offsets.size() * sizeof(std::int64_t)));
    f.read(reinterpret_cast<char*>(m.indices.data()),
           static_cast<std::streamsize>(m.indices.size() * sizeof(std::int32_t)));
    f.read(reinterpret_cast<char*>(m.values.data()),
           static_cast<std::streamsize>(m.values.size() * sizeof(double)));
    if (!f) throw std::runtime_error("truncated SIGER-CSR file: " + path);
    m.validate();
    return m;
}

}  // namespace siger
