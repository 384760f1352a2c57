#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "siger/dataset.hpp"
#include "siger/eval.hpp"
#include "siger/graphs.hpp"
#include "siger/losses.hpp"
#include "siger/model.hpp"
#include "siger/rng.hpp"

namespace siger {

enum class Variant {
    full,
    no_eisg,
    no_mp,
    no_da,
    no_modulus_weight,
    standard_infonce,
    text_only,
    image_only,
};

inline const std::vector<std::pair<Variant, const char*>>& variant_table() {
    static const std::vector<std::pair<Variant, const char*>> table = {
        {Variant::full, "full"},
        {Variant::no_eisg, "no-eisg"},
        {Variant::no_mp, "no-mp"},
        {Variant::no_da, "no-da"},
        {Variant::no_modulus_weight, "no-modulus-weight"},
        {Variant::standard_infonce, "standard-infonce"},
        {Variant::text_only, "text-only"},
        {Variant::image_only, "image-only"},
    };
    return table;
}

inline const char* variant_name(Variant v) {
    for (auto& [var, name] : variant_table())
        if (var == v) return name;
    throw std::runtime_error("unknown variant");
}

inline Variant variant_from_name(const std::string& s) {
    std::string valid;
    for (auto& [var, name] : variant_table()) {
        if (s == name) return var;
        valid += valid.empty() ? name : std::string(", ") + name;
    }
    throw std::runtime_error("invalid variant '" + s + "' (valid: " + valid + ")");
}

struct PipelineConfig {
    GraphConfig graph;
    ModelHyper hyper;
    LossWeights weights;
    PipelineOptions options;
    std::vector<Modality> modalities = {Modality::visual, Modality::textual};
};

inline PipelineConfig apply_ablation(PipelineConfig cfg, Variant v) {
    switch (v) {
        case Variant::full:
            break;
        case Variant::no_eisg:
            cfg.graph.beta = 0.0;
            break;
        case Variant::no_mp:
            cfg.weights.lambda_p = 0.0;
            cfg.options.perturb = false;
            break;
        case Variant::no_da:
            cfg.weights.lambda_a = 0.0;
            break;
        case Variant::no_modulus_weight:
            cfg.options.modulus = false;
            break;
        case Variant::standard_infonce:
            cfg.options.anchored_alignment = false;
            break;
        case Variant::text_only:
            cfg.modalities = {Modality::textual};
            cfg.options.align_semantics = false;
            break;
        case Variant::image_only:
            cfg.modalities = {Modality::visual};
            cfg.options.align_semantics = false;
            break;
    }
    return cfg;
}

struct TrainConfig {
    double lr = 1e-3;
    int batch_size = 2048;
    int max_epochs = 1000;
    int patience = 20;
    std::uint64_t seed = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    bool deterministic = true;
    int eval_k = 20;  // early-stopping metric
    std::vector<int> report_ks = {10, 20};

    void validate() const {
        if (lr <= 0) throw std::runtime_error("train: lr must be positive");
        if (patience < 1) throw std::runtime_error("train: patience must be >= 1");
        if (batch_size < 1) throw std::runtime_error("train: batch size must be >= 1");
        if (max_epochs < 1) throw std::runtime_error("train: max epochs must be >= 1");
    }
};

/// Uniform positives over train pairs; one rejection-sampled negative each.
inline BatchTriples sample_bpr_batch(const std::vector<std::pair<int, int>>& train,
                                     const std::vector<std::vector<int>>& user_items, int n_items,
                                     int batch_size, RngStream& rng) {
    if (train.empty()) throw std::runtime_error("sample_bpr_batch: no train pairs");
    BatchTriples b;
    b.users.reserve(static_cast<std::size_t>(batch_size));
    b.pos_items.reserve(static_cast<std::size_t>(batch_size));
    b.neg_items.reserve(static_cast<std::size_t>(batch_size));
    for (int k = 0; k < batch_size; ++k) {
        auto [u, pos] = train[rng.uniform_int(train.size())];
        const auto& owned = user_items[static_cast<std::size_t>(u)];
        if (static_cast<int>(owned.size()) >= n_items)
            throw std::runtime_error("sample_bpr_batch: user " + std::to_string(u) +
                                     " interacts with every item, no negative exists");
        int neg;
        do {
            neg = static_cast<int>(rng.uniform_int(static_cast<std::size_t>(n_items)));
        } while (std::binary_search(owned.begin(), owned.end(), neg));
        b.users.push_back(u);
        b.pos_items.push_back(pos);
        b.neg_items.push_back(neg);
    }
    b.user_set = b.users;
    std::sort(b.user_set.begin(), b.user_set.end());
    b.user_set.erase(std::unique(b.user_set.begin(), b.user_set.end()), b.user_set.end());
    b.item_set = b.pos_items;
    b.item_set.insert(b.item_set.end(), b.neg_items.begin(), b.neg_items.end());
    std::sort(b.item_set.begin(), b.item_set.end());
    b.item_set.erase(std::unique(b.item_set.begin(), b.item_set.end()), b.item_set.end());
    return b;
}

// -- optimizer -----------------------------------------------------------------

struct AdamSlot {
    Dense m, v;
};

struct AdamState {
    long step = 0;
    AdamSlot e_id;
    std::map<Modality, std::array<AdamSlot, 4>> transforms;
};

inline void adam_update(Dense& param, const Dense& grad, AdamSlot& slot, long step, const TrainConfig& tc) {
    if (slot.m.size() == 0) {
        slot.m = Dense(param.rows, param.cols);
        slot.v = Dense(param.rows, param.cols);
    }
    double c1 = 1.0 - std::pow(tc.beta1, static_cast<double>(step));
    double c2 = 1.0 - std::pow(tc.beta2, static_cast<double>(step));
    for (std::size_t i = 0; i < param.size(); ++i) {
        double g = grad.v[i];
        slot.m.v[i] = tc.beta1 * slot.m.v[i] + (1.0 - tc.beta1) * g;
        slot.v.v[i] = tc.beta2 * slot.v.v[i] + (1.0 - tc.beta2) * g * g;
        double mhat = slot.m.v[i] / c1;
        double vhat = slot.v.v[i] / c2;
        param.v[i] -= tc.lr * mhat / (std::sqrt(vhat) + tc.adam_eps);
    }
}

// -- training loop ---------------------------------------------------------------

struct TrainState {
    ModelParams params;
    AdamState opt;
    int epoch = 0;
    double best_metric = -1.0;
    int best_epoch = -1;
    int epochs_since_best = 0;
};

/// One pass over ~|train| positives in sampled batches; returns the mean
/// per-component loss over the epoch's batches.
inline LossBreakdown train_epoch(TrainState& state, const TrainContext& ctx,
                                 const std::vector<std::pair<int, int>>& train,
                                 const std::vector<std::vector<int>>& user_items, const PipelineConfig& pipe,
                                 const TrainConfig& tc, RngStream& batch_rng, RngStream& perturb_rng) {
    std::size_t n_batches = (train.size() + static_cast<std::size_t>(tc.batch_size) - 1) /
                            static_cast<std::size_t>(tc.batch_size);
    if (n_batches == 0) n_batches = 1;
    LossBreakdown sum;
    const bool want_views = pipe.options.perturb && pipe.weights.lambda_p > 0;
    for (std::size_t bi = 0; bi < n_batches; ++bi) {
        BatchTriples batch = sample_bpr_batch(train, user_items, ctx.n_items, tc.batch_size, batch_rng);
        ForwardPlan plan;
        if (want_views)
            plan = make_forward_plan(perturb_rng, pipe.modalities, pipe.hyper.layers_ii, ctx.n_items,
                                     pipe.hyper.dim);
        LossResult res;
        try {
            res = batch_loss(state.params, ctx, pipe.hyper, pipe.weights, pipe.options, batch, plan);
        } catch (const std::exception& e) {
            std::ostringstream msg;
            msg << e.what() << " [epoch " << state.epoch + 1 << ", batch " << bi << ", first triple ("
                << batch.users[0] << ", " << batch.pos_items[0] << ", " << batch.neg_items[0] << ")]";
            throw std::runtime_error(msg.str());
        }
        ++state.opt.step;
        adam_update(state.params.e_id, res.grads.e_id, state.opt.e_id, state.opt.step, tc);
        for (auto& [m, g] : res.grads.transforms) {
            ModalityTransform& p = state.params.transforms.at(m);
            auto& slots = state.opt.transforms[m];
            adam_update(p.w1, g.w1, slots[0], state.opt.step, tc);
            adam_update(p.b1, g.b1, slots[1], state.opt.step, tc);
            adam_update(p.w2, g.w2, slots[2], state.opt.step, tc);
            adam_update(p.b2, g.b2, slots[3], state.opt.step, tc);
        }
        sum.bpr += res.breakdown.bpr;
        sum.l_p += res.breakdown.l_p;
        sum.l_mm_user += res.breakdown.l_mm_user;
        sum.l_mm_item += res.breakdown.l_mm_item;
        sum.l_bm += res.breakdown.l_bm;
        sum.l2 += res.breakdown.l2;
        sum.total += res.breakdown.total;
    }
    double inv = 1.0 / static_cast<double>(n_batches);
    sum.bpr *= inv;
    sum.l_p *= inv;
    sum.l_mm_user *= inv;
    sum.l_mm_item *= inv;
    sum.l_bm *= inv;
    sum.l2 *= inv;
    sum.total *= inv;
    ++state.epoch;
    return sum;
}

struct EpochRecord {
    int epoch = 0;
    LossBreakdown losses;
    std::map<int, double> recall, ndcg;  // validation metrics
};

struct FitResult {
    ModelParams best_params;
    std::vector<EpochRecord> history;
    int best_epoch = -1;
    double best_metric = 0.0;
};

/// Trains with early stopping on validation Recall@eval_k and returns the
/// parameter snapshot from the best epoch.
inline FitResult fit(const DatasetSplit& split, const std::map<Modality, ModalityFeatureMatrix>& features,
                     const GraphSet& graphs, const PipelineConfig& pipe, const TrainConfig& tc) {
    tc.validate();
    pipe.hyper.validate();
    pipe.weights.validate();
    std::map<Modality, ModalityFeatureMatrix> used;
    std::map<Modality, int> feat_dims;
    for (Modality m : pipe.modalities) {
        auto it = features.find(m);
        if (it == features.end())
            throw std::runtime_error(std::string("fit: missing features for modality ") + modality_name(m));
        used[m] = it->second;
        feat_dims[m] = it->second.data.cols;
    }
    TrainContext ctx = TrainContext::make(graphs, used);

    TrainState state;
    state.params = init_params(graphs.n_users, graphs.n_items, pipe.hyper, feat_dims, tc.seed);

    std::vector<std::vector<int>> user_items(static_cast<std::size_t>(graphs.n_users));
    for (auto [u, i] : split.train) user_items[static_cast<std::size_t>(u)].push_back(i);
    for (auto& v : user_items) std::sort(v.begin(), v.end());

    RngStream batch_rng(tc.seed, "train.batch");
    RngStream perturb_rng(tc.seed, "train.perturb");

    std::vector<int> val_ks = tc.report_ks;
    if (std::find(val_ks.begin(), val_ks.end(), tc.eval_k) == val_ks.end()) val_ks.push_back(tc.eval_k);

    FitResult out;
    out.best_params = state.params;
    for (int epoch = 1; epoch <= tc.max_epochs; ++epoch) {
        EpochRecord rec;
        rec.epoch = epoch;
        rec.losses = train_epoch(state, ctx, split.train, user_items, pipe, tc, batch_rng, perturb_rng);
        ForwardOutputs fwd = forward_clean(state.params, graphs, used, pipe.hyper);
        // Validation pairs are warm even in a cold-start split, so no cold
        // restriction here; the held-out cold items are scored at test time.
        MetricReport rep = evaluate_representations(fwd.e_final, graphs.n_users, graphs.n_items, split.train,
                                                    split.valid, val_ks, nullptr);
        rec.recall = rep.recall;
        rec.ndcg = rep.ndcg;
        out.history.push_back(rec);
        double metric = rep.recall.count(tc.eval_k) ? rep.recall.at(tc.eval_k) : 0.0;
        if (metric > state.best_metric) {
            state.best_metric = metric;
            state.best_epoch = epoch;
            state.epochs_since_best = 0;
            out.best_params = state.params;
        } else {
            ++state.epochs_since_best;
        }
        if (state.epochs_since_best >= tc.patience) break;
    }
    out.best_epoch = state.best_epoch;
    out.best_metric = state.best_metric < 0 ? 0.0 : state.best_metric;
    return out;
}

inline void write_history_csv(const std::vector<EpochRecord>& history, const std::vector<int>& ks,
                              const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    os << "epoch,bpr,l_p,l_mm_user,l_mm_item,l_bm,l2,total";
    for (int k : ks) os << ",r@" << k;
    for (int k : ks) os << ",n@" << k;
    os << '\n';
    os << std::setprecision(17);
    for (const auto& r : history) {
        os << r.epoch << ',' << r.losses.bpr << ',' << r.losses.l_p << ',' << r.losses.l_mm_user << ','
           << r.losses.l_mm_item << ',' << r.losses.l_bm << ',' << r.losses.l2 << ',' << r.losses.total;
        for (int k : ks) os << ',' << (r.recall.count(k) ? r.recall.at(k) : 0.0);
        for (int k : ks) os << ',' << (r.ndcg.count(k) ? r.ndcg.at(k) : 0.0);
        os << '\n';
    }
}

// -- hyperparameter sweep --------------------------------------------------------

struct SweepPoint {
    std::map<std::string, double> overrides;  // keys mirror CLI flags
};

struct SweepRow {
    SweepPoint point;
    double valid_metric = 0.0;  // best validation R@eval_k
    MetricReport test_report;
};

inline void apply_override(PipelineConfig& pipe, TrainConfig& tc, const std::string& key, double value) {
    if (key == "beta")
        pipe.graph.beta = value;
    else if (key == "kc")
        pipe.graph.k_c = static_cast<int>(value);
    else if (key == "km")
        pipe.graph.k_m = static_cast<int>(value);
    else if (key == "layers-ui")
        pipe.hyper.layers_ui = static_cast<int>(value);
    else if (key == "layers-ii")
        pipe.hyper.layers_ii = static_cast<int>(value);
    else if (key == "epsilon")
        pipe.hyper.epsilon = value;
    else if (key == "tau0")
        pipe.weights.tau0 = value;
    else if (key == "tau1")
        pipe.weights.tau1 = value;
    else if (key == "tau2")
        pipe.weights.tau2 = value;
    else if (key == "lambda-p")
        pipe.weights.lambda_p = value;
    else if (key == "lambda-a")
        pipe.weights.lambda_a = value;
    else if (key == "lambda-r")
        pipe.weights.lambda_r = value;
    else if (key == "lr")
        tc.lr = value;
    else if (key == "batch")
        tc.batch_size = static_cast<int>(value);
    else
        throw std::runtime_error("sweep: unknown grid key '" + key + "'");
}

/// Trains one model per grid point (graphs rebuilt per point) and reports
/// rows sorted by validation metric descending.
inline std::vector<SweepRow> sweep(const std::vector<SweepPoint>& grid, const DatasetSplit& split,
                                   const std::map<Modality, ModalityFeatureMatrix>& features,
                                   const PipelineConfig& base_pipe, const TrainConfig& base_tc, int n_users,
                                   int n_items) {
    if (grid.empty()) throw std::runtime_error("sweep: empty grid");
    std::vector<SweepRow> rows;
    for (const auto& point : grid) {
        PipelineConfig pipe = base_pipe;
        TrainConfig tc = base_tc;
        for (const auto& [k, v] : point.overrides) apply_override(pipe, tc, k, v);
        std::map<Modality, ModalityFeatureMatrix> used;
        for (Modality m : pipe.modalities) used[m] = features.at(m);
        GraphSet graphs = build_graph_set(split.train, used, pipe.graph, n_users, n_items);
        FitResult res = fit(split, used, graphs, pipe, tc);
        SweepRow row;
        row.point = point;
        row.valid_metric = res.best_metric;
        row.test_report = evaluate(res.best_params, graphs, used, pipe.hyper, split, split.test, tc.report_ks);
        rows.push_back(std::move(row));
    }
    std::stable_sort(rows.begin(), rows.end(),
                     [](const SweepRow& a, const SweepRow& b) { return a.valid_metric > b.valid_metric; });
    return rows;
}

inline void write_sweep_csv(const std::vector<SweepRow>& rows, const std::vector<int>& ks,
                            const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot open for writing: " + path);
    std::vector<std::string> keys;
    for (const auto& row : rows)
        for (const auto& [k, v] : row.point.overrides) {
            (void)v;
            if (std::find(keys.begin(), keys.end(), k) == keys.end()) keys.push_back(k);
        }
    std::sort(keys.begin(), keys.end());
    for (const auto& k : keys) os << k << ',';
    os << "valid_metric";
    for (int k : ks) os << ",test_r@" << k;
    for (int k : ks) os << ",test_n@" << k;
    os << '\n';
    os << std::setprecision(10);
    for (const auto& row : rows) {
        for (const auto& k : keys) {
            auto it = row.point.overrides.find(k);
            if (it != row.point.overrides.end()) os << it->second;
            os << ',';
        }
        os << row.valid_metric;
        for (int k : ks) os << ',' << (row.test_report.recall.count(k) ? row.test_report.recall.at(k) : 0.0);
        for (int k : ks) os << ',' << (row.test_report.ndcg.count(k) ? row.test_report.ndcg.at(k) : 0.0);
        os << '\n';
    }
}

}  // namespace siger
