#pragma once

#include <array>
#include <cmath>
#include <iterator>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "siger/dense.hpp"
#include "siger/graphs.hpp"
#include "siger/model.hpp"
#include "siger/tape.hpp"

namespace siger {

struct LossWeights {
    double lambda_p = 0.01;
    double lambda_a = 0.01;
    double lambda_r = 1e-5;
    double tau0 = 0.2;
    double tau1 = 0.2;
    double tau2 = 0.2;

    void validate() const {
        if (tau0 <= 0 || tau1 <= 0 || tau2 <= 0) throw std::runtime_error("losses: temperatures must be positive");
        if (lambda_p < 0 || lambda_a < 0 || lambda_r < 0)
            throw std::runtime_error("losses: weights must be non-negative");
        if (!std::isfinite(lambda_p) || !std::isfinite(lambda_a) || !std::isfinite(lambda_r))
            throw std::runtime_error("losses: weights must be finite");
    }
};

struct BatchTriples {
    std::vector<int> users;      // parallel arrays
    std::vector<int> pos_items;
    std::vector<int> neg_items;
    std::vector<int> user_set;   // sorted unique users
    std::vector<int> item_set;   // sorted unique items (positives and negatives)
};

struct LossBreakdown {
    double bpr = 0;
    double l_p = 0;
    double l_mm_user = 0;
    double l_mm_item = 0;
    double l_bm = 0;
    double l2 = 0;
    double total = 0;
};

// -- plain (reference) losses -------------------------------------------------

/// Cosine similarity; zero vectors yield 0.
inline double cosine(const double* x, const double* y, int n) {
    double xy = 0, xx = 0, yy = 0;
    for (int j = 0; j < n; ++j) {
        xy += x[j] * y[j];
        xx += x[j] * x[j];
        yy += y[j] * y[j];
    }
    if (xx == 0.0 || yy == 0.0) return 0.0;
    return xy / (std::sqrt(xx) * std::sqrt(yy));
}

/// -mean ln sigmoid(pos - neg), computed via softplus for stability.
inline double bpr_loss(const std::vector<double>& pos, const std::vector<double>& neg) {
    if (pos.empty() || pos.size() != neg.size()) throw std::runtime_error("bpr_loss: bad score lists");
    double acc = 0.0;
    for (std::size_t k = 0; k < pos.size(); ++k) {
        double x = neg[k] - pos[k];  // softplus(-(pos-neg))
        acc += std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
    }
    return acc / static_cast<double>(pos.size());
}

namespace detail {

inline double logsumexp(const std::vector<double>& xs) {
    double m = xs[0];
    for (double x : xs) m = std::max(m, x);
    double s = 0.0;
    for (double x : xs) s += std::exp(x - m);
    return m + std::log(s);
}

}  // namespace detail

/// Standard InfoNCE with matching rows as positives: mean over anchors k of
/// -log softmax(s(a_k, b_j)/tau) at j = k, over the given row universe.
inline double standard_infonce(const Dense& a, const Dense& b, double tau, const std::vector<int>& universe) {
    if (universe.empty()) throw std::runtime_error("infonce: empty universe");
    std::size_t n = universe.size();
    double acc = 0.0;
    std::vector<double> z(n);
    for (std::size_t k = 0; k < n; ++k) {
        const double* ak = a.row(universe[k]);
        for (std::size_t j = 0; j < n; ++j) z[j] = cosine(ak, b.row(universe[j]), a.cols) / tau;
        acc += detail::logsumexp(z) - z[k];
    }
    return acc / static_cast<double>(n);
}

/// InfoNCE between two perturbed views, summed over modalities; anchors and
/// negatives both range over the given item universe.
inline double perturbation_loss(const std::vector<std::pair<const Dense*, const Dense*>>& views, double tau0,
                                const std::vector<int>& negatives) {
    if (negatives.empty()) throw std::runtime_error("perturbation_loss: empty negative set");
    double acc = 0.0;
    for (const auto& [v1, v2] : views) acc += standard_infonce(*v1, *v2, tau0, negatives);
    return acc;
}

/// Anchor-based alignment of two modality views: positive affinity is the
/// averaged similarity of both views to the anchor; negatives pair view one
/// of anchor k against view two of every other row.
inline double anchor_infonce(const Dense& ev, const Dense& et, const Dense& anchors, double tau1,
                             const std::vector<int>& universe) {
    if (universe.empty()) throw std::runtime_error("anchor_infonce: empty universe");
    std::size_t n = universe.size();
    double acc = 0.0;
    std::vector<double> z(n);
    for (std::size_t k = 0; k < n; ++k) {
        const double* vk = ev.row(universe[k]);
        const double* tk = et.row(universe[k]);
        const double* ak = anchors.row(universe[k]);
        double pos = (cosine(vk, ak, ev.cols) + cosine(tk, ak, ev.cols)) / (2.0 * tau1);
        for (std::size_t j = 0; j < n; ++j)
            z[j] = j == k ? pos : cosine(vk, et.row(universe[j]), ev.cols) / tau1;
        acc += detail::logsumexp(z) - pos;
    }
    return acc / static_cast<double>(n);
}

/// Fused-semantic vs behavior alignment: user-side and item-side standard
/// InfoNCE terms, summed.
inline double behavior_semantic_loss(const Dense& e_mf, const Dense& e_hat_id, double tau2,
                                     const std::vector<int>& user_rows, const std::vector<int>& item_rows) {
    return standard_infonce(e_mf, e_hat_id, tau2, user_rows) +
           standard_infonce(e_mf, e_hat_id, tau2, item_rows);
}

/// Squared Frobenius norm of the selected rows.
inline double l2_term(const Dense& e, const std::vector<int>& rows) {
    double acc = 0.0;
    for (int r : rows) {
        const double* x = e.row(r);
        for (int j = 0; j < e.cols; ++j) acc += x[j] * x[j];
    }
    return acc;
}

inline LossBreakdown total_loss(double bpr, double l_p, double l_mm_user, double l_mm_item, double l_bm,
                                double l2, const LossWeights& w) {
    auto check = [](double v, const char* name) {
        if (!std::isfinite(v)) throw std::runtime_error(std::string("non-finite loss component: ") + name);
    };
    check(bpr, "bpr");
    check(l_p, "l_p");
    check(l_mm_user, "l_mm_user");
    check(l_mm_item, "l_mm_item");
    check(l_bm, "l_bm");
    check(l2, "l2");
    LossBreakdown b;
    b.bpr = bpr;
    b.l_p = l_p;
    b.l_mm_user = l_mm_user;
    b.l_mm_item = l_mm_item;
    b.l_bm = l_bm;
    b.l2 = l2;
    b.total = bpr + w.lambda_p * l_p + w.lambda_a * (l_mm_user + l_mm_item + l_bm) + w.lambda_r * l2;
    check(b.total, "total");
    return b;
}

// -- training graph -----------------------------------------------------------

struct PipelineOptions {
    bool perturb = true;             // modulus-weighted perturbation pass + L_p
    bool modulus = true;             // false: perturbation weights forced to all-ones
    bool anchored_alignment = true;  // false: plain pairwise InfoNCE between modality views
    bool align_semantics = true;     // false: L_mm dropped (single-modality runs)
    bool full_universe = false;      // InfoNCE universes: batch-unique (default) or all users/items
};

/// Frozen noise and shuffle draws for the two perturbed views of each modality,
/// materialized before graph construction so a re-evaluation (e.g. finite
/// differences) replays the identical randomness.
struct ForwardPlan {
    std::map<Modality, std::array<PerturbDraws, 2>> draws;
};

inline ForwardPlan make_forward_plan(RngStream& rng, const std::vector<Modality>& modalities, int layers,
                                     int n_items, int dim) {
    ForwardPlan plan;
    for (Modality m : modalities) {
        plan.draws[m][0] = make_perturb_draws(rng, layers, n_items, dim);
        plan.draws[m][1] = make_perturb_draws(rng, layers, n_items, dim);
    }
    return plan;
}

/// Graphs plus the transposes the backward pass needs; built once per fit.
struct TrainContext {
    const GraphSet* graphs = nullptr;
    std::map<Modality, const Dense*> features;
    SparseMatrix g_hat_t;
    SparseMatrix r_bar_t;
    std::map<Modality, SparseMatrix> s_bar_t;
    int n_users = 0;
    int n_items = 0;

    static TrainContext make(const GraphSet& graphs, const std::map<Modality, ModalityFeatureMatrix>& feats) {
        TrainContext ctx;
        ctx.graphs = &graphs;
        ctx.n_users = graphs.n_users;
        ctx.n_items = graphs.n_items;
        ctx.g_hat_t = csr_transpose(graphs.g_hat);
        ctx.r_bar_t = csr_transpose(graphs.r_bar);
        for (const auto& [m, f] : feats) {
            ctx.features[m] = &f.data;
            ctx.s_bar_t[m] = csr_transpose(graphs.s_bar.at(m));
        }
        return ctx;
    }
};

struct ParamGrads {
    Dense e_id;
    std::map<Modality, ModalityTransform> transforms;
};

struct LossResult {
    LossBreakdown breakdown;
    ParamGrads grads;
};

namespace detail {

struct ModalityVars {
    Var item_sem;  // clean item semantics, |I| x d
    Var user_sem;  // aggregated user semantics, |U| x d
    Var full;      // concat(user, item)
    std::array<Var, 2> views{};  // perturbed item views (when active)
};

inline Var tape_infonce(Tape& t, Var a, Var b, double tau) {
    Var an = t.row_normalize(a);
    Var bn = t.row_normalize(b);
    Var z = t.scale(t.matmul_nt(an, bn), 1.0 / tau);
    return t.mean_all(t.sub(t.logsumexp_rows(z), t.get_diag(z)));
}

inline Var tape_anchor_infonce(Tape& t, Var ev, Var et, Var anchors, double tau1) {
    Var vn = t.row_normalize(ev);
    Var tn = t.row_normalize(et);
    Var an = t.row_normalize(anchors);
    Var pos = t.scale(t.add(t.rowdot(vn, an), t.rowdot(tn, an)), 1.0 / (2.0 * tau1));
    Var z = t.set_diag(t.scale(t.matmul_nt(vn, tn), 1.0 / tau1), pos);
    return t.mean_all(t.sub(t.logsumexp_rows(z), pos));
}

inline Var tape_perturb_layer(Tape& t, Var h, double eps, bool modulus, const Dense& raw_noise,
                              const std::vector<int>& perm) {
    Var wp;
    if (modulus) {
        Var rn = t.row_norms(h);
        wp = t.div_guarded(rn, t.max_entry(rn));
    } else {
        wp = t.constant(Dense(t.value(h).rows, 1, 1.0));
    }
    Var noise = t.constant(row_l2_normalize(raw_noise));
    Var step1 = t.add(h, t.scale(t.row_scale(t.hadamard(t.sign_of(h), noise), wp), eps));
    Var shuffled = t.permute_rows(t.row_normalize(step1), perm);
    return t.add(h, t.scale(t.row_scale(shuffled, wp), eps));
}

}  // namespace detail

/// Builds the full training objective for one batch on a fresh tape, runs
/// backward, and returns the per-component values plus parameter gradients.
/// The caller owns the frozen randomness (plan); a re-run with identical
/// inputs reproduces identical values and gradients.
inline LossResult batch_loss(const ModelParams& params, const TrainContext& ctx, const ModelHyper& hyper,
                             const LossWeights& weights, const PipelineOptions& opt, const BatchTriples& batch,
                             const ForwardPlan& plan, bool want_grads = true) {
    weights.validate();
    hyper.validate();
    if (batch.users.empty()) throw std::runtime_error("batch_loss: empty batch");
    const int n_users = ctx.n_users;
    const int n_items = ctx.n_items;
    Tape t;

    Var e_id = t.leaf(params.e_id, true);
    std::map<Modality, std::array<Var, 4>> tvars;
    for (const auto& [m, tr] : params.transforms) {
        if (!ctx.features.count(m)) continue;  // dropped modality
        tvars[m] = {t.leaf(tr.w1, true), t.leaf(tr.b1, true), t.leaf(tr.w2, true), t.leaf(tr.b2, true)};
    }

    // Behavior propagation: layer-averaged walk on the bipartite graph.
    Var e_hat = e_id;
    {
        Var cur = e_id;
        for (int l = 0; l < hyper.layers_ui; ++l) {
            cur = t.spmm(&ctx.graphs->g_hat, &ctx.g_hat_t, cur);
            e_hat = t.add(e_hat, cur);
        }
        e_hat = t.scale(e_hat, 1.0 / (hyper.layers_ui + 1));
    }

    Var e_id_items = t.rows_tail(e_id, n_items);

    const bool want_views = opt.perturb && weights.lambda_p > 0;
    std::map<Modality, detail::ModalityVars> mods;
    for (const auto& [m, fp] : ctx.features) {
        const auto& tv = tvars.at(m);
        detail::ModalityVars mv;
        Var f = t.constant(*fp);
        Var h1 = t.add_bias_rows(t.matmul_nt(f, tv[0]), tv[1]);
        Var z = t.add_bias_rows(t.matmul_nt(h1, tv[2]), tv[3]);
        Var gate = hyper.activation == Activation::sigmoid ? t.sigmoid(z) : t.leaky_relu(z, hyper.leaky_slope);
        Var e0 = t.hadamard(e_id_items, gate);
        const SparseMatrix* s = &ctx.graphs->s_bar.at(m);
        const SparseMatrix* st = &ctx.s_bar_t.at(m);
        Var item_sem = e0;
        for (int l = 0; l < hyper.layers_ii; ++l) item_sem = t.spmm(s, st, item_sem);
        mv.item_sem = item_sem;
        mv.user_sem = t.spmm(&ctx.graphs->r_bar, &ctx.r_bar_t, item_sem);
        mv.full = t.concat_rows(mv.user_sem, mv.item_sem);
        if (want_views) {
            const auto& draws = plan.draws.at(m);
            for (int view = 0; view < 2; ++view) {
                Var cur = e0;
                for (int l = 0; l < hyper.layers_ii; ++l) {
                    Var h = t.spmm(s, st, cur);
                    cur = hyper.epsilon == 0.0
                              ? h
                              : detail::tape_perturb_layer(t, h, hyper.epsilon, opt.modulus,
                                                           draws[static_cast<std::size_t>(view)]
                                                               .noise[static_cast<std::size_t>(l)],
                                                           draws[static_cast<std::size_t>(view)]
                                                               .perms[static_cast<std::size_t>(l)]);
                }
                mv.views[static_cast<std::size_t>(view)] = cur;
            }
        }
        mods[m] = mv;
    }
    if (mods.empty()) throw std::runtime_error("batch_loss: no modalities");

    Var e_mf;
    {
        bool first = true;
        for (auto& [m, mv] : mods) {
            (void)m;
            e_mf = first ? mv.full : t.add(e_mf, mv.full);
            first = false;
        }
        if (mods.size() > 1) e_mf = t.scale(e_mf, 1.0 / static_cast<double>(mods.size()));
    }
    Var e_fin = t.add(e_hat, e_mf);

    // BPR over the sampled triples.
    std::vector<int> pos_rows(batch.users.size()), neg_rows(batch.users.size());
    for (std::size_t k = 0; k < batch.users.size(); ++k) {
        pos_rows[k] = n_users + batch.pos_items[k];
        neg_rows[k] = n_users + batch.neg_items[k];
    }
    Var eu = t.gather_rows(e_fin, batch.users);
    Var ep = t.gather_rows(e_fin, pos_rows);
    Var en = t.gather_rows(e_fin, neg_rows);
    Var bpr = t.mean_all(t.softplus(t.sub(t.rowdot(eu, en), t.rowdot(eu, ep))));

    // InfoNCE universes.
    std::vector<int> item_univ, user_univ;
    if (opt.full_universe) {
        item_univ.resize(static_cast<std::size_t>(n_items));
        for (int i = 0; i < n_items; ++i) item_univ[static_cast<std::size_t>(i)] = i;
        user_univ.resize(static_cast<std::size_t>(n_users));
        for (int u = 0; u < n_users; ++u) user_univ[static_cast<std::size_t>(u)] = u;
    } else {
        item_univ = batch.item_set;
        user_univ = batch.user_set;
    }
    std::vector<int> item_univ_rows(item_univ.size());
    for (std::size_t k = 0; k < item_univ.size(); ++k) item_univ_rows[k] = n_users + item_univ[k];

    Var zero = t.constant(Dense(1, 1, 0.0));
    Var l_p = zero;
    if (want_views) {
        bool first = true;
        for (auto& [m, mv] : mods) {
            (void)m;
            Var a = t.gather_rows(mv.views[0], item_univ);
            Var b = t.gather_rows(mv.views[1], item_univ);
            Var term = detail::tape_infonce(t, a, b, weights.tau0);
            l_p = first ? term : t.add(l_p, term);
            first = false;
        }
    }

    Var l_mm_user = zero, l_mm_item = zero;
    const bool want_mm = opt.align_semantics && weights.lambda_a > 0 && mods.size() >= 2;
    if (want_mm) {
        auto it = mods.begin();
        detail::ModalityVars& mv_v = it->second;
        detail::ModalityVars& mv_t = std::next(it)->second;
        Var vu = t.gather_rows(mv_v.user_sem, user_univ);
        Var tu = t.gather_rows(mv_t.user_sem, user_univ);
        Var vi = t.gather_rows(mv_v.item_sem, item_univ);
        Var ti = t.gather_rows(mv_t.item_sem, item_univ);
        Var au = t.gather_rows(e_hat, user_univ);
        Var ai = t.gather_rows(e_hat, item_univ_rows);
        if (opt.anchored_alignment) {
            l_mm_user = detail::tape_anchor_infonce(t, vu, tu, au, weights.tau1);
            l_mm_item = detail::tape_anchor_infonce(t, vi, ti, ai, weights.tau1);
        } else {
            l_mm_user = detail::tape_infonce(t, vu, tu, weights.tau1);
            l_mm_item = detail::tape_infonce(t, vi, ti, weights.tau1);
        }
    }

    Var l_bm = zero;
    if (weights.lambda_a > 0) {
        Var mu = t.gather_rows(e_mf, user_univ);
        Var hu = t.gather_rows(e_hat, user_univ);
        Var mi = t.gather_rows(e_mf, item_univ_rows);
        Var hi = t.gather_rows(e_hat, item_univ_rows);
        l_bm = t.add(detail::tape_infonce(t, mu, hu, weights.tau2),
                     detail::tape_infonce(t, mi, hi, weights.tau2));
    }

    Var l2 = zero;
    if (weights.lambda_r > 0) {
        std::vector<int> touched = batch.user_set;
        for (int i : batch.item_set) touched.push_back(n_users + i);
        Var sel = t.gather_rows(e_fin, touched);
        l2 = t.sum_all(t.hadamard(sel, sel));
    }

    Var total = bpr;
    if (weights.lambda_p > 0 && want_views) total = t.add(total, t.scale(l_p, weights.lambda_p));
    if (weights.lambda_a > 0) {
        Var align = t.add(t.add(l_mm_user, l_mm_item), l_bm);
        total = t.add(total, t.scale(align, weights.lambda_a));
    }
    if (weights.lambda_r > 0) total = t.add(total, t.scale(l2, weights.lambda_r));

    LossResult res;
    res.breakdown = total_loss(t.value(bpr).v[0], t.value(l_p).v[0], t.value(l_mm_user).v[0],
                               t.value(l_mm_item).v[0], t.value(l_bm).v[0], t.value(l2).v[0], weights);

    if (want_grads) {
        t.backward(total);
        res.grads.e_id = t.grad(e_id);
        for (const auto& [m, tv] : tvars) {
            ModalityTransform g;
            g.w1 = t.grad(tv[0]);
            g.b1 = t.grad(tv[1]);
            g.w2 = t.grad(tv[2]);
            g.b2 = t.grad(tv[3]);
            res.grads.transforms[m] = std::move(g);
        }
    }
    return res;
}

}  // namespace siger
