#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "siger/dataset.hpp"
#include "siger/dense.hpp"
#include "siger/graphs.hpp"
#include "siger/rng.hpp"
#include "siger/sparse.hpp"

namespace siger {

enum class Activation { sigmoid, leaky_relu };

inline const char* activation_name(Activation a) { return a == Activation::sigmoid ? "sigmoid" : "leaky_relu"; }

inline Activation activation_from_name(const std::string& s) {
    if (s == "sigmoid") return Activation::sigmoid;
    if (s == "leaky_relu") return Activation::leaky_relu;
    throw std::runtime_error("unknown activation: " + s);
}

struct ModelHyper {
    int dim = 64;        // embedding width d
    int layers_ui = 3;   // user-item propagation depth
    int layers_ii = 2;   // item-item propagation depth
    double epsilon = 0.05;  // perturbation intensity
    Activation activation = Activation::sigmoid;
    double leaky_slope = 0.2;

    void validate() const {
        if (dim <= 0) throw std::runtime_error("model: dim must be positive");
        if (layers_ui < 0) throw std::runtime_error("model: layers_ui must be >= 0");
        if (layers_ii < 1) throw std::runtime_error("model: layers_ii must be >= 1");
        if (epsilon < 0) throw std::runtime_error("model: epsilon must be >= 0");
    }
};

/// The two stacked affine maps that gate ID embeddings with modality content.
struct ModalityTransform {
    Dense w1;  // dim x d_m
    Dense b1;  // 1 x dim
    Dense w2;  // dim x dim
    Dense b2;  // 1 x dim
};

struct ModelParams {
    int n_users = 0;
    int n_items = 0;
    int dim = 0;
    Dense e_id;  // (n_users + n_items) x dim, user rows first
    std::map<Modality, ModalityTransform> transforms;

    int item_row(int i) const { return n_users + i; }

    bool all_finite() const {
        if (!e_id.all_finite()) return false;
        for (const auto& [m, t] : transforms) {
            (void)m;
            if (!t.w1.all_finite() || !t.b1.all_finite() || !t.w2.all_finite() || !t.b2.all_finite()) return false;
        }
        return true;
    }
};

namespace detail {

inline Dense xavier_uniform(int rows, int cols, RngStream& rng) {
    double limit = std::sqrt(6.0 / (rows + cols));
    Dense out(rows, cols);
    for (std::size_t i = 0; i < out.size(); ++i) out.v[i] = rng.uniform(-limit, limit);
    return out;
}

}  // namespace detail

inline ModelParams init_params(int n_users, int n_items, const ModelHyper& hyper,
                               const std::map<Modality, int>& feature_dims, std::uint64_t seed) {
    hyper.validate();
    ModelParams p;
    p.n_users = n_users;
    p.n_items = n_items;
    p.dim = hyper.dim;
    {
        RngStream rng(seed, "init.e_id");
        p.e_id = detail::xavier_uniform(n_users + n_items, hyper.dim, rng);
    }
    for (auto& [m, d_m] : feature_dims) {
        ModalityTransform t;
        {
            RngStream rng(seed, std::string("init.w1.") + modality_name(m));
            t.w1 = detail::xavier_uniform(hyper.dim, d_m, rng);
        }
        {
            RngStream rng(seed, std::string("init.w2.") + modality_name(m));
            t.w2 = detail::xavier_uniform(hyper.dim, hyper.dim, rng);
        }
        t.b1 = Dense(1, hyper.dim);
        t.b2 = Dense(1, hyper.dim);
        p.transforms[m] = std::move(t);
    }
    return p;
}

// -- forward pieces ----------------------------------------------------------

/// Layer-averaged propagation on the normalized bipartite graph:
/// mean of E^0 .. E^L with E^l = G * E^{l-1}.
inline Dense behavior_propagate(const SparseMatrix& g_hat, const Dense& e_id, int layers) {
    Dense acc = e_id;
    Dense cur = e_id;
    for (int l = 0; l < layers; ++l) {
        cur = spmm(g_hat, cur);
        add_inplace(acc, cur);
    }
    return scale(acc, 1.0 / (layers + 1));
}

inline Dense apply_activation(const Dense& x, Activation act, double slope) {
    Dense out(x.rows, x.cols);
    if (act == Activation::sigmoid) {
        for (std::size_t i = 0; i < x.size(); ++i) {
            double v = x.v[i];
            out.v[i] = v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        }
    } else {
        for (std::size_t i = 0; i < x.size(); ++i) out.v[i] = x.v[i] > 0 ? x.v[i] : slope * x.v[i];
    }
    return out;
}

inline Dense add_bias(const Dense& x, const Dense& bias) {
    Dense out(x.rows, x.cols);
    for (int i = 0; i < x.rows; ++i)
        for (int j = 0; j < x.cols; ++j) out.at(i, j) = x.at(i, j) + bias.v[static_cast<std::size_t>(j)];
    return out;
}

/// Two affine maps with the activation applied once at the end.
inline Dense transform_modality(const ModalityTransform& t, const Dense& features, Activation act,
                                double slope = 0.2) {
    Dense h = add_bias(matmul_nt(features, t.w1), t.b1);
    Dense z = add_bias(matmul_nt(h, t.w2), t.b2);
    return apply_activation(z, act, slope);
}

/// Element-wise gating of item ID embeddings by transformed modality content.
inline Dense purify(const Dense& e_id_items, const Dense& transformed) {
    if (!e_id_items.same_shape(transformed)) throw std::runtime_error("purify: shape mismatch");
    return hadamard(e_id_items, transformed);
}

/// Last-layer item-item propagation (no layer averaging).
inline Dense semantic_propagate(const SparseMatrix& s_bar, const Dense& e0, int layers) {
    Dense cur = e0;
    for (int l = 0; l < layers; ++l) cur = spmm(s_bar, cur);
    return cur;
}

/// User semantics by aggregating interacted-item embeddings.
inline Dense user_semantics(const SparseMatrix& r_bar, const Dense& item_sem) {
    return spmm(r_bar, item_sem);
}

/// Per-row modulus weights: L2 norms divided by the max norm (zeros if all zero).
inline Dense modulus_weights(const Dense& emb) {
    Dense norms = row_l2_norms(emb);
    double mx = 0.0;
    for (double v : norms.v) mx = std::max(mx, v);
    if (mx == 0.0) return Dense(emb.rows, 1);
    for (double& v : norms.v) v /= mx;
    return norms;
}

/// Frozen randomness for one perturbed propagation pass (one view).
struct PerturbDraws {
    std::vector<Dense> noise;             // layers x (n x d), raw U(0,1)
    std::vector<std::vector<int>> perms;  // layers x row permutation
};

inline PerturbDraws make_perturb_draws(RngStream& rng, int layers, int rows, int cols) {
    PerturbDraws d;
    d.noise.reserve(static_cast<std::size_t>(layers));
    d.perms.reserve(static_cast<std::size_t>(layers));
    for (int l = 0; l < layers; ++l) {
        Dense n(rows, cols);
        for (std::size_t i = 0; i < n.size(); ++i) n.v[i] = rng.uniform();
        d.noise.push_back(std::move(n));
        d.perms.push_back(rng.permutation(rows));
    }
    return d;
}

inline Dense permute_rows(const Dense& x, const std::vector<int>& perm) {
    Dense out(x.rows, x.cols);
    for (int i = 0; i < x.rows; ++i) {
        const double* src = x.row(perm[static_cast<std::size_t>(i)]);
        std::copy(src, src + x.cols, out.row(i));
    }
    return out;
}

inline Dense sign_matrix(const Dense& x) {
    Dense out(x.rows, x.cols);
    for (std::size_t i = 0; i < x.size(); ++i) out.v[i] = x.v[i] > 0 ? 1.0 : (x.v[i] < 0 ? -1.0 : 0.0);
    return out;
}

struct PerturbTrace {
    std::vector<Dense> w_p;  // one column vector per layer
};

/// Item-item propagation with per-layer modulus-weighted perturbation. Each
/// layer output h gets two additive terms: sign-aligned normalized noise, then
/// a shuffled normalization of that intermediate, both scaled by epsilon and
/// the per-row modulus weight; the perturbed result feeds the next layer.
inline Dense perturb_propagate(const SparseMatrix& s_bar, const Dense& e0, int layers, double eps,
                               const PerturbDraws& draws, bool use_modulus = true,
                               PerturbTrace* trace = nullptr) {
    Dense cur = e0;
    for (int l = 0; l < layers; ++l) {
        Dense h = spmm(s_bar, cur);
        if (eps == 0.0) {
            cur = std::move(h);
            continue;
        }
        Dense wp = use_modulus ? modulus_weights(h) : Dense(h.rows, 1, 1.0);
        if (trace) trace->w_p.push_back(wp);
        Dense noise = row_l2_normalize(draws.noise[static_cast<std::size_t>(l)]);
        Dense step1 = h;
        {
            Dense term = hadamard(sign_matrix(h), noise);
            for (int i = 0; i < term.rows; ++i) {
                double c = eps * wp.v[static_cast<std::size_t>(i)];
                double* ti = term.row(i);
                for (int j = 0; j < term.cols; ++j) step1.at(i, j) += c * ti[j];
            }
        }
        Dense shuffled = permute_rows(row_l2_normalize(step1), draws.perms[static_cast<std::size_t>(l)]);
        Dense out = h;
        for (int i = 0; i < out.rows; ++i) {
            double c = eps * wp.v[static_cast<std::size_t>(i)];
            const double* si = shuffled.row(i);
            for (int j = 0; j < out.cols; ++j) out.at(i, j) += c * si[j];
        }
        cur = std::move(out);
    }
    return cur;
}

/// Convenience overload drawing fresh noise/permutations from the stream.
inline Dense perturb_propagate(const SparseMatrix& s_bar, const Dense& e0, int layers, double eps,
                               RngStream& rng, bool use_modulus = true, PerturbTrace* trace = nullptr) {
    PerturbDraws draws = make_perturb_draws(rng, layers, e0.rows, e0.cols);
    return perturb_propagate(s_bar, e0, layers, eps, draws, use_modulus, trace);
}

/// Element-wise mean over the modality set.
inline Dense fuse_semantics(const std::vector<const Dense*>& views) {
    if (views.empty()) throw std::runtime_error("fuse_semantics: empty modality set");
    Dense out = *views[0];
    for (std::size_t k = 1; k < views.size(); ++k) add_inplace(out, *views[k]);
    return scale(out, 1.0 / static_cast<double>(views.size()));
}

inline Dense final_representations(const Dense& e_hat_id, const Dense& e_mf) {
    if (!e_hat_id.same_shape(e_mf)) throw std::runtime_error("final_representations: shape mismatch");
    return add(e_hat_id, e_mf);
}

inline double score(const Dense& e, int user, int item, int n_users) {
    const double* u = e.row(user);
    const double* i = e.row(n_users + item);
    double s = 0.0;
    for (int j = 0; j < e.cols; ++j) s += u[j] * i[j];
    return s;
}

struct ForwardOutputs {
    Dense e_hat_id;                    // behavior representations, (U+I) x d
    std::map<Modality, Dense> e_sem;   // clean semantic representations, (U+I) x d
    Dense e_mf;                        // fused semantics
    Dense e_final;                     // e_hat_id + e_mf
};

/// Clean (perturbation-free) forward pass used for evaluation.
inline ForwardOutputs forward_clean(const ModelParams& params, const GraphSet& graphs,
                                    const std::map<Modality, ModalityFeatureMatrix>& features,
                                    const ModelHyper& hyper) {
    ForwardOutputs out;
    out.e_hat_id = behavior_propagate(graphs.g_hat, params.e_id, hyper.layers_ui);
    Dense e_id_items(params.n_items, params.dim);
    std::copy(params.e_id.row(params.n_users), params.e_id.row(params.n_users) + e_id_items.size(),
              e_id_items.v.begin());
    std::vector<const Dense*> fused_inputs;
    for (const auto& [m, f] : features) {
        const ModalityTransform& t = params.transforms.at(m);
        Dense gate = transform_modality(t, f.data, hyper.activation, hyper.leaky_slope);
        Dense e0 = purify(e_id_items, gate);
        Dense item_sem = semantic_propagate(graphs.s_bar.at(m), e0, hyper.layers_ii);
        Dense user_sem = user_semantics(graphs.r_bar, item_sem);
        Dense full(params.n_users + params.n_items, params.dim);
        std::copy(user_sem.v.begin(), user_sem.v.end(), full.v.begin());
        std::copy(item_sem.v.begin(), item_sem.v.end(), full.row(params.n_users));
        out.e_sem[m] = std::move(full);
    }
    for (const auto& [m, e] : out.e_sem) {
        (void)m;
        fused_inputs.push_back(&e);
    }
    out.e_mf = fuse_semantics(fused_inputs);
    out.e_final = final_representations(out.e_hat_id, out.e_mf);
    return out;
}

// -- checkpoints --------------------------------------------------------------

namespace detail {

inline void write_tensor(std::ostream& os, const std::string& name, const Dense& t) {
    os << name << ' ' << t.rows << ' ' << t.cols << '\n';
    os.write(reinterpret_cast<const char*>(t.v.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
}

inline std::pair<std::string, Dense> read_tensor(std::istream& is) {
    std::string name;
    int rows = 0, cols = 0;
    if (!(is >> name >> rows >> cols)) throw std::runtime_error("checkpoint: truncated tensor header");
    is.get();  // newline
    if (rows < 0 || cols < 0) throw std::runtime_error("checkpoint: bad tensor shape");
    Dense t(rows, cols);
    is.read(reinterpret_cast<char*>(t.v.data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!is) throw std::runtime_error("checkpoint: truncated tensor payload for " + name);
    return {name, std::move(t)};
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ModelParams& params) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    int n_tensors = 1 + 4 * static_cast<int>(params.transforms.size());
    os << "SIGER-CKPT 1 " << params.n_users << ' ' << params.n_items << ' ' << params.dim << ' ' << n_tensors
       << '\n';
    detail::write_tensor(os, "e_id", params.e_id);
    for (const auto& [m, t] : params.transforms) {
        std::string suffix = std::string(".") + modality_name(m);
        detail::write_tensor(os, "w1" + suffix, t.w1);
        detail::write_tensor(os, "b1" + suffix, t.b1);
        detail::write_tensor(os, "w2" + suffix, t.w2);
        detail::write_tensor(os, "b2" + suffix, t.b2);
    }
    if (!os) throw std::runtime_error("write failed: " + path);
}

inline ModelParams load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open: " + path);
    std::string magic, version;
    int n_tensors = 0;
    ModelParams p;
    if (!(is >> magic >> version >> p.n_users >> p.n_items >> p.dim >> n_tensors) || magic != "SIGER-CKPT" ||
        version != "1")
        throw std::runtime_error("not a SIGER-CKPT file: " + path);
    is.get();
    for (int k = 0; k < n_tensors; ++k) {
        auto [name, t] = detail::read_tensor(is);
        if (name == "e_id") {
            p.e_id = std::move(t);
            continue;
        }
        auto dot = name.find('.');
        if (dot == std::string::npos) throw std::runtime_error("checkpoint: unknown tensor " + name);
        std::string field = name.substr(0, dot);
        Modality m = modality_from_name(name.substr(dot + 1));
        ModalityTransform& tr = p.transforms[m];
        if (field == "w1")
            tr.w1 = std::move(t);
        else if (field == "b1")
            tr.b1 = std::move(t);
        else if (field == "w2")
            tr.w2 = std::move(t);
        else if (field == "b2")
            tr.b2 = std::move(t);
        else
            throw std::runtime_error("checkpoint: unknown tensor " + name);
    }
    return p;
}

}  // namespace siger
