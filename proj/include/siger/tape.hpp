#pragma once

#include <cassert>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <utility>
#include <vector>

#include "siger/dense.hpp"
#include "siger/sparse.hpp"

namespace siger {

struct Var {
    int id = -1;
};

/// Eager reverse-mode tape over dense matrices. Values are computed at op
/// creation; backward() walks the nodes in reverse creation order. Sparse
/// operands are frozen graphs and enter as raw pointers (caller keeps them
/// alive and supplies the transpose).
class Tape {
public:
    Var leaf(Dense value, bool requires_grad) {
        return make(std::move(value), requires_grad, {});
    }
    Var constant(Dense value) { return leaf(std::move(value), false); }

    const Dense& value(Var v) const { return nodes_[check(v)].val; }

    /// Gradient of the last backward() root w.r.t. v; zeros if untouched.
    Dense grad(Var v) const {
        const Node& n = nodes_[check(v)];
        if (grads_[check(v)].size() == 0) return Dense(n.val.rows, n.val.cols);
        return grads_[check(v)];
    }

    std::size_t node_count() const { return nodes_.size(); }

    void backward(Var root) {
        const Dense& r = nodes_[check(root)].val;
        if (r.rows != 1 || r.cols != 1) throw std::runtime_error("backward: root must be scalar");
        grads_.assign(nodes_.size(), Dense());
        grad_ref(root.id) = Dense(1, 1, 1.0);
        for (int i = root.id; i >= 0; --i) {
            Node& n = nodes_[static_cast<std::size_t>(i)];
            if (!n.needs || !n.back) continue;
            if (grads_[static_cast<std::size_t>(i)].size() == 0) continue;
            n.back(*this, i);
        }
    }

    // -- arithmetic ---------------------------------------------------------

    Var add(Var a, Var b) {
        Dense out = siger::add(value(a), value(b));
        return make(std::move(out), needs(a) || needs(b), [a, b](Tape& t, int id) {
            const Dense& g = t.grads_[static_cast<std::size_t>(id)];
            if (t.needs(a)) add_inplace(t.grad_ref(a.id), g);
            if (t.needs(b)) add_inplace(t.grad_ref(b.id), g);
        });
    }

    Var sub(Var a, Var b) {
        Dense out = siger::sub(value(a), value(b));
        return make(std::move(out), needs(a) || needs(b), [a, b](Tape& t, int id) {
            const Dense& g = t.grads_[static_cast<std::size_t>(id)];
            if (t.needs(a)) add_inplace(t.grad_ref(a.id), g);
            if (t.needs(b)) axpy_inplace(t.grad_ref(b.id), -1.0, g);
        });
    }

    Var hadamard(Var a, Var b) {
        Dense out = siger::hadamard(value(a), value(b));
        return make(std::move(out), needs(a) || needs(b), [a, b](Tape& t, int id) {
            const Dense& g = t.grads_[static_cast<std::size_t>(id)];
            if (t.needs(a)) add_inplace(t.grad_ref(a.id), siger::hadamard(g, t.value(b)));
            if (t.needs(b)) add_inplace(t.grad_ref(b.id), siger::hadamard(g, t.value(a)));
        });
    }

    Var scale(Var a, double s) {
        Dense out = siger::scale(value(a), s);
        return make(std::move(out), needs(a), [a, s](Tape& t, int id) {
            axpy_inplace(t.grad_ref(a.id), s, t.grads_[static_cast<std::size_t>(id)]);
        });
    }

    Var matmul(Var a, Var b) {
        Dense out = siger::matmul(value(a), value(b));
        return make(std::move(out), needs(a) || needs(b), [a, b](Tape& t, int id) {
            const Dense& g = t.grads_[static_cast<std::size_t>(id)];
            if (t.needs(a)) add_inplace(t.grad_ref(a.id), siger::matmul_nt(g, t.value(b)));
            if (t.needs(b)) add_inplace(t.grad_ref(b.id), siger::matmul_tn(t.value(a), g));
        });
    }

    /// C = A * B^T
    Var matmul_nt(Var a, Var b) {
        Dense out = siger::matmul_nt(value(a), value(b));
        return make(std::move(out), needs(a) || needs(b), [a, b](Tape& t, int id) {
            const Dense& g = t.grads_[static_cast<std::size_t>(id)];
            if (t.needs(a)) add_inplace(t.grad_ref(a.id), siger::matmul(g, t.value(b)));
            if (t.needs(b)) add_inplace(t.grad_ref(b.id), matmul_tn(g, t.value(a)));
        });
    }

    /// out = S * X for a frozen sparse S; st must be S transposed.
    Var spmm(const SparseMatrix* s, const SparseMatrix* st, Var x) {
        Dense out = siger::spmm(*s, value(x));
        return make(std::move(out), needs(x), [st, x](Tape& t, int id) {
            add_inplace(t.grad_ref(x.id), siger::spmm(*st, t.grads_[static_cast<std::size_t>(id)]));
        });
    }

    // -- shape --------------------------------------------------------------

    Var rows_head(Var a, int n) {
        const Dense& x = value(a);
        Dense out(n, x.cols);
        std::copy(x.v.begin(), x.v.begin() + static_cast<std::ptrdiff_t>(out.size()), out.v.begin());
        return make(std::move(out), needs(a), [a, n](Tape& t, int id) {
            const Dense& g = t.grads_[static_cast<std::size_t>(id)];
            Dense& da = t.grad_ref(a.id);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < g.cols; ++j) da.at(i, j) += g.at(i, j);
        });
    }

    Var rows_tail(Var a, int n) {
        const Dense& x = value(a);
        int skip = x.rows - n;
        Dense out(n, x.cols);
        std::copy(x.v.begin() + static_cast<std::ptrdiff_t>(skip) * x.cols, x.v.end(), out.v.begin());
        return make(std::move(out), needs(a), [a, skip, n](Tape& t, int id) {
            const Dense& g = t.grads_[static_cast<std::size_t>(id)];
            Dense& da = t.grad_ref(a.id);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < g.cols; ++j) da.at(skip + i, j) += g.at(i, j);
        });
    }

    Var concat_rows(Var a, Var b) {
        const Dense& xa = value(a);
        const Dense& xb = value(b);
        assert(xa.cols == xb.cols);
        Dense out(xa.rows + xb.rows, xa.cols);
        std::copy(xa.v.begin(), xa.v.end(), out.v.begin());
        std::copy(xb.v.begin(), xb.v.end(), out.v.begin() + static_cast<std::ptrdiff_t>(xa.size()));
        int na = xa.rows;
        return make(std::move(out), needs(a) || needs(b), [a, b, na](Tape& t, int id) {
            const Dense& g = t.grads_[static_cast<std::size_t>(id)];
            if (t.needs(a)) {
                Dense& da = t.grad_ref(a.id);
                for (int i = 0; i < na; ++i)
                    for (int j = 0; j < g.cols; ++j) da.at(i, j) += g.at(i, j);
            }
            if (t.needs(b)) {
                Dense& db = t.grad_ref(b.id);
                for (int i = 0; i < g.rows - na; ++i)
                    for (int j = 0; j < g.cols; ++j) db.at(i, j) += g.at(na + i, j);
            }
        });
    }

    Var gather_rows(Var a, std::vector<int> idx) {
        const Dense& x = value(a);
        Dense out(static_cast<int>(idx.size()), x.cols);
        for (std::size_t k = 0; k < idx.size(); ++k)
            std::copy(x.row(idx[k]), x.row(idx[k]) + x.cols, out.row(static_cast<int>(k)));
        return make(std::move(out), needs(a), [a, idx = std::move(idx)](Tape& t, int id) {
            const Dense& g = t.grads_[static_cast<std::size_t>(id)];
            Dense& da = t.grad_ref(a.id);
            for (std::size_t k = 0; k < idx.size(); ++k) {
                double* dst = da.row(idx[k]);
                const double* src = g.row(static_cast<int>(k));
                for (int j = 0; j < g.cols; ++j) dst[j] += src[j];
            }
        });
    }

    Var permute_rows(Var a, std::vector<int> perm) { return gather_rows(a, std::move(perm)); }

    /// out = a + bias broadcast over rows; bias is 1 x d.
    Var add_bias_rows(Var a, Var bias) {
        const Dense& x = value(a);
        const Dense& b = value(bias);
        assert(b.rows == 1 && b.cols == x.cols);
        Dense out(x.rows, x.cols);
        for (int i = 0; i < x.rows; ++i)
            for (int j = 0; j < x.cols; ++j) out.at(i, j) = x.at(i, j) + b.v[static_cast<std::size_t>(j)];
        return make(std::move(out), needs(a) || needs(bias), [a, bias](Tape& t, int id) {
            const Dense& g = t.grads_[static_cast<std::size_t>(id)];
            if (t.needs(a)) add_inplace(t.grad_ref(a.id), g);
            if (t.needs(bias)) {
                Dense& db = t.grad_ref(bias.id);
                for (int i = 0; i < g.rows; ++i)
                    for (int j = 0; j < g.cols; ++j) db.v[static_cast<std::size_t>(j)] += g.at(i, j);
            }
        });
    }

    // -- nonlinearities -----------------------------------------------------

    Var sigmoid(Var a) {
        const Dense& x = value(a);
        Dense out(x.rows, x.cols);
        for (std::size_t i = 0; i < x.size(); ++i) {
            double v = x.v[i];
            out.v[i] = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        }
        return make(std::move(out), needs(a), [a](Tape& t, int id) {
            const Dense& g = t.grads_[static_cast<std::size_t>(id)];
            const Dense& y = t.nodes_[static_cast<std::size_t>(id)].val;
            Dense& da = t.grad_ref(a.id);
            for (std::size_t i = 0; i < g.size(); ++i) da.v[i] += g.v[i] * y.v[i] * (1.0 - y.v[i]);
        });
    }

    Var leaky_relu(Var a, double slope) {
        const Dense& x = value(a);
        Dense out(x.rows, x.cols);
        for (std::size_t i = 0; i < x.size(); ++i) out.v[i] = x.v[i] > 0 ? x.v[i] : slope * x.v[i];
        return make(std::move(out), needs(a), [a, slope](Tape& t, int id) {
            const Dense& g = t.grads_[static_cast<std::size_t>(id)];
            const Dense& x = t.value(a);
            Dense& da = t.grad_ref(a.id);
            for (std::size_t i = 0; i < g.size(); ++i) da.v[i] += g.v[i] * (x.v[i] > 0 ? 1.0 : slope);
        });
    }

    /// log(1 + e^x), overflow-safe.
    Var softplus(Var a) {
        const Dense& x = value(a);
        Dense out(x.rows, x.cols);
        for (std::size_t i = 0; i < x.size(); ++i) {
            double v = x.v[i];
            out.v[i] = std::max(v, 0.0) + std::log1p(std::exp(-std::abs(v)));
        }
        return make(std::move(out), needs(a), [a](Tape& t, int id) {
            const Dense& g = t.grads_[static_cast<std::size_t>(id)];
            const Dense& x = t.value(a);
            Dense& da = t.grad_ref(a.id);
            for (std::size_t i = 0; i < g.size(); ++i) {
                double v = x.v[i];
                double s = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
                da.v[i] += g.v[i] * s;
            }
        });
    }

    // -- rows and norms -----------------------------------------------------

    /// Rows rescaled to unit L2 norm; zero rows stay zero.
    Var row_normalize(Var a) {
        const Dense& x = value(a);
        Dense out = row_l2_normalize(x);
        return make(std::move(out), needs(a), [a](Tape& t, int id) {
            const Dense& g = t.grads_[static_cast<std::size_t>(id)];
            const Dense& x = t.value(a);
            Dense& da = t.grad_ref(a.id);
            for (int i = 0; i < x.rows; ++i) {
                const double* xi = x.row(i);
                const double* gi = g.row(i);
                double nsq = 0.0, xg = 0.0;
                for (int j = 0; j < x.cols; ++j) {
                    nsq += xi[j] * xi[j];
                    xg += xi[j] * gi[j];
                }
                if (nsq == 0.0) continue;
                double n = std::sqrt(nsq);
                double n3 = n * nsq;
                double* di = da.row(i);
                for (int j = 0; j < x.cols; ++j) di[j] += gi[j] / n - xi[j] * xg / n3;
            }
        });
    }

    /// Column of per-row L2 norms.
    Var row_norms(Var a) {
        Dense out = row_l2_norms(value(a));
        return make(std::move(out), needs(a), [a](Tape& t, int id) {
            const Dense& g = t.grads_[static_cast<std::size_t>(id)];
            const Dense& x = t.value(a);
            const Dense& r = t.nodes_[static_cast<std::size_t>(id)].val;
            Dense& da = t.grad_ref(a.id);
            for (int i = 0; i < x.rows; ++i) {
                double ri = r.v[static_cast<std::size_t>(i)];
                if (ri == 0.0) continue;
                double c = g.v[static_cast<std::size_t>(i)] / ri;
                const double* xi = x.row(i);
                double* di = da.row(i);
                for (int j = 0; j < x.cols; ++j) di[j] += c * xi[j];
            }
        });
    }

    /// Largest entry as a 1 x 1 scalar; subgradient goes to the first max.
    Var max_entry(Var a) {
        const Dense& x = value(a);
        std::size_t arg = 0;
        for (std::size_t i = 1; i < x.size(); ++i)
            if (x.v[i] > x.v[arg]) arg = i;
        Dense out(1, 1, x.v[arg]);
        return make(std::move(out), needs(a), [a, arg](Tape& t, int id) {
            t.grad_ref(a.id).v[arg] += t.grads_[static_cast<std::size_t>(id)].v[0];
        });
    }

    /// out = a / s for a 1 x 1 scalar s; defined as all-zeros when s == 0.
    Var div_guarded(Var a, Var s) {
        const Dense& x = value(a);
        double sv = value(s).v[0];
        Dense out = sv == 0.0 ? Dense(x.rows, x.cols) : siger::scale(x, 1.0 / sv);
        return make(std::move(out), needs(a) || needs(s), [a, s, sv](Tape& t, int id) {
            if (sv == 0.0) return;
            const Dense& g = t.grads_[static_cast<std::size_t>(id)];
            if (t.needs(a)) axpy_inplace(t.grad_ref(a.id), 1.0 / sv, g);
            if (t.needs(s)) {
                const Dense& x = t.value(a);
                double acc = 0.0;
                for (std::size_t i = 0; i < g.size(); ++i) acc += g.v[i] * x.v[i];
                t.grad_ref(s.id).v[0] -= acc / (sv * sv);
            }
        });
    }

    /// out_ij = a_ij * w_i for a column vector w.
    Var row_scale(Var a, Var w) {
        const Dense& x = value(a);
        const Dense& wv = value(w);
        assert(wv.rows == x.rows && wv.cols == 1);
        Dense out(x.rows, x.cols);
        for (int i = 0; i < x.rows; ++i) {
            double wi = wv.v[static_cast<std::size_t>(i)];
            const double* xi = x.row(i);
            double* oi = out.row(i);
            for (int j = 0; j < x.cols; ++j) oi[j] = xi[j] * wi;
        }
        return make(std::move(out), needs(a) || needs(w), [a, w](Tape& t, int id) {
            const Dense& g = t.grads_[static_cast<std::size_t>(id)];
            const Dense& x = t.value(a);
            const Dense& wv = t.value(w);
            if (t.needs(a)) {
                Dense& da = t.grad_ref(a.id);
                for (int i = 0; i < g.rows; ++i) {
                    double wi = wv.v[static_cast<std::size_t>(i)];
                    const double* gi = g.row(i);
                    double* di = da.row(i);
                    for (int j = 0; j < g.cols; ++j) di[j] += gi[j] * wi;
                }
            }
            if (t.needs(w)) {
                Dense& dw = t.grad_ref(w.id);
                for (int i = 0; i < g.rows; ++i) {
                    const double* gi = g.row(i);
                    const double* xi = x.row(i);
                    double acc = 0.0;
                    for (int j = 0; j < g.cols; ++j) acc += gi[j] * xi[j];
                    dw.v[static_cast<std::size_t>(i)] += acc;
                }
            }
        });
    }

    /// Column of per-row dot products of two equally shaped matrices.
    Var rowdot(Var a, Var b) {
        const Dense& x = value(a);
        const Dense& y = value(b);
        assert(x.same_shape(y));
        Dense out(x.rows, 1);
        for (int i = 0; i < x.rows; ++i) {
            const double* xi = x.row(i);
            const double* yi = y.row(i);
            double s = 0.0;
            for (int j = 0; j < x.cols; ++j) s += xi[j] * yi[j];
            out.v[static_cast<std::size_t>(i)] = s;
        }
        return make(std::move(out), needs(a) || needs(b), [a, b](Tape& t, int id) {
            const Dense& g = t.grads_[static_cast<std::size_t>(id)];
            const Dense& x = t.value(a);
            const Dense& y = t.value(b);
            if (t.needs(a)) {
                Dense& da = t.grad_ref(a.id);
                for (int i = 0; i < x.rows; ++i) {
                    double gi = g.v[static_cast<std::size_t>(i)];
                    const double* yi = y.row(i);
                    double* di = da.row(i);
                    for (int j = 0; j < x.cols; ++j) di[j] += gi * yi[j];
                }
            }
            if (t.needs(b)) {
                Dense& db = t.grad_ref(b.id);
                for (int i = 0; i < x.rows; ++i) {
                    double gi = g.v[static_cast<std::size_t>(i)];
                    const double* xi = x.row(i);
                    double* di = db.row(i);
                    for (int j = 0; j < x.cols; ++j) di[j] += gi * xi[j];
                }
            }
        });
    }

    // -- square-matrix and reduction helpers ---------------------------------

    /// Square matrix with its diagonal replaced by the column vector d.
    Var set_diag(Var z, Var d) {
        const Dense& x = value(z);
        const Dense& dv = value(d);
        assert(x.rows == x.cols && dv.rows == x.rows && dv.cols == 1);
        Dense out = x;
        for (int i = 0; i < x.rows; ++i) out.at(i, i) = dv.v[static_cast<std::size_t>(i)];
        return make(std::move(out), needs(z) || needs(d), [z, d](Tape& t, int id) {
            const Dense& g = t.grads_[static_cast<std::size_t>(id)];
            if (t.needs(z)) {
                Dense& dz = t.grad_ref(z.id);
                for (int i = 0; i < g.rows; ++i)
                    for (int j = 0; j < g.cols; ++j)
                        if (i != j) dz.at(i, j) += g.at(i, j);
            }
            if (t.needs(d)) {
                Dense& dd = t.grad_ref(d.id);
                for (int i = 0; i < g.rows; ++i) dd.v[static_cast<std::size_t>(i)] += g.at(i, i);
            }
        });
    }

    Var get_diag(Var z) {
        const Dense& x = value(z);
        assert(x.rows == x.cols);
        Dense out(x.rows, 1);
        for (int i = 0; i < x.rows; ++i) out.v[static_cast<std::size_t>(i)] = x.at(i, i);
        return make(std::move(out), needs(z), [z](Tape& t, int id) {
            const Dense& g = t.grads_[static_cast<std::size_t>(id)];
            Dense& dz = t.grad_ref(z.id);
            for (int i = 0; i < g.rows; ++i) dz.at(i, i) += g.v[static_cast<std::size_t>(i)];
        });
    }

    /// Row-wise log-sum-exp, max-shifted.
    Var logsumexp_rows(Var z) {
        const Dense& x = value(z);
        Dense out(x.rows, 1);
        for (int i = 0; i < x.rows; ++i) {
            const double* xi = x.row(i);
            double m = xi[0];
            for (int j = 1; j < x.cols; ++j) m = std::max(m, xi[j]);
            double s = 0.0;
            for (int j = 0; j < x.cols; ++j) s += std::exp(xi[j] - m);
            out.v[static_cast<std::size_t>(i)] = m + std::log(s);
        }
        return make(std::move(out), needs(z), [z](Tape& t, int id) {
            const Dense& g = t.grads_[static_cast<std::size_t>(id)];
            const Dense& x = t.value(z);
            const Dense& l = t.nodes_[static_cast<std::size_t>(id)].val;
            Dense& dz = t.grad_ref(z.id);
            for (int i = 0; i < x.rows; ++i) {
                double gi = g.v[static_cast<std::size_t>(i)];
                if (gi == 0.0) continue;
                double li = l.v[static_cast<std::size_t>(i)];
                const double* xi = x.row(i);
                double* di = dz.row(i);
                for (int j = 0; j < x.cols; ++j) di[j] += gi * std::exp(xi[j] - li);
            }
        });
    }

    Var mean_all(Var a) {
        const Dense& x = value(a);
        double s = 0.0;
        for (double v : x.v) s += v;
        double inv = 1.0 / static_cast<double>(x.size());
        Dense out(1, 1, s * inv);
        return make(std::move(out), needs(a), [a, inv](Tape& t, int id) {
            double g = t.grads_[static_cast<std::size_t>(id)].v[0] * inv;
            Dense& da = t.grad_ref(a.id);
            for (std::size_t i = 0; i < da.size(); ++i) da.v[i] += g;
        });
    }

    Var sum_all(Var a) {
        const Dense& x = value(a);
        double s = 0.0;
        for (double v : x.v) s += v;
        Dense out(1, 1, s);
        return make(std::move(out), needs(a), [a](Tape& t, int id) {
            double g = t.grads_[static_cast<std::size_t>(id)].v[0];
            Dense& da = t.grad_ref(a.id);
            for (std::size_t i = 0; i < da.size(); ++i) da.v[i] += g;
        });
    }

    /// Constant leaf holding sign(value(a)); sign(0) = 0. Gradients do not
    /// flow through the sign (its derivative is zero almost everywhere).
    Var sign_of(Var a) {
        const Dense& x = value(a);
        Dense out(x.rows, x.cols);
        for (std::size_t i = 0; i < x.size(); ++i) out.v[i] = x.v[i] > 0 ? 1.0 : (x.v[i] < 0 ? -1.0 : 0.0);
        return constant(std::move(out));
    }

private:
    struct Node {
        Dense val;
        bool needs = false;
        std::function<void(Tape&, int)> back;
    };

    bool needs(Var v) const { return nodes_[check(v)].needs; }

    Dense& grad_ref(int id) {
        Dense& g = grads_[static_cast<std::size_t>(id)];
        if (g.size() == 0) {
            const Dense& v = nodes_[static_cast<std::size_t>(id)].val;
            g = Dense(v.rows, v.cols);
        }
        return g;
    }

    std::size_t check(Var v) const {
        if (v.id < 0 || static_cast<std::size_t>(v.id) >= nodes_.size())
            throw std::runtime_error("tape: invalid var");
        return static_cast<std::size_t>(v.id);
    }

    Var make(Dense value, bool requires_grad, std::function<void(Tape&, int)> back) {
        nodes_.push_back({std::move(value), requires_grad, requires_grad ? std::move(back) : nullptr});
        grads_.emplace_back();
        return Var{static_cast<int>(nodes_.size()) - 1};
    }

    std::vector<Node> nodes_;
    std::vector<Dense> grads_;
};

}  // namespace siger
