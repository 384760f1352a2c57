// Command-line front end: synthesize data, prepare splits, build graphs,
// train, evaluate, ablate, and sweep. Every command writes a run manifest
// next to its outputs so a run can be reproduced from disk.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "siger/siger.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Options {
    // paths
    std::string data_dir;
    std::string out_dir;
    std::string cache_dir;
    std::string checkpoint;
    std::string grid_file;
    bool force = false;
    // synth
    siger::SyntheticSpec synth;
    // prepare
    int kcore = 0;
    std::string split_mode = "general";
    std::vector<double> ratios = {0.8, 0.1, 0.1};
    double cold_fraction = 0.1;
    // pipeline
    siger::PipelineConfig pipe;
    siger::TrainConfig train;
    std::string variant = "full";
    std::string activation = "sigmoid";
    std::vector<int> ks = {10, 20};
    int coverage_top_n = 5;
    std::uint64_t seed = 0;
};

json config_json(const Options& o) {
    return json{
        {"graph",
         {{"kc", o.pipe.graph.k_c},
          {"km", o.pipe.graph.k_m},
          {"beta", o.pipe.graph.beta},
          {"include_self_modality", o.pipe.graph.include_self_modality}}},
        {"model",
         {{"dim", o.pipe.hyper.dim},
          {"layers_ui", o.pipe.hyper.layers_ui},
          {"layers_ii", o.pipe.hyper.layers_ii},
          {"epsilon", o.pipe.hyper.epsilon},
          {"activation", o.activation}}},
        {"loss",
         {{"lambda_p", o.pipe.weights.lambda_p},
          {"lambda_a", o.pipe.weights.lambda_a},
          {"lambda_r", o.pipe.weights.lambda_r},
          {"tau0", o.pipe.weights.tau0},
          {"tau1", o.pipe.weights.tau1},
          {"tau2", o.pipe.weights.tau2},
          {"full_universe", o.pipe.options.full_universe}}},
        {"train",
         {{"lr", o.train.lr},
          {"batch", o.train.batch_size},
          {"max_epochs", o.train.max_epochs},
          {"patience", o.train.patience},
          {"deterministic", o.train.deterministic}}},
        {"seed", o.seed},
        {"variant", o.variant},
    };
}

void add_pipeline_flags(CLI::App* cmd, Options& o) {
    cmd->add_option("--beta", o.pipe.graph.beta, "graph fusion coefficient")->capture_default_str();
    cmd->add_option("--kc", o.pipe.graph.k_c, "collaborative top-K")->capture_default_str();
    cmd->add_option("--km", o.pipe.graph.k_m, "modality top-K")->capture_default_str();
    cmd->add_flag("--include-self,!--no-include-self", o.pipe.graph.include_self_modality,
                  "include each item in its modality neighbor list");
}

void add_model_flags(CLI::App* cmd, Options& o) {
    cmd->add_option("--dim", o.pipe.hyper.dim, "embedding dimension")->capture_default_str();
    cmd->add_option("--layers-ui", o.pipe.hyper.layers_ui, "user-item propagation layers")
        ->capture_default_str();
    cmd->add_option("--layers-ii", o.pipe.hyper.layers_ii, "item-item propagation layers")
        ->capture_default_str();
    cmd->add_option("--epsilon", o.pipe.hyper.epsilon, "perturbation intensity")->capture_default_str();
    cmd->add_option("--activation", o.activation, "gate activation (sigmoid|leaky_relu)")
        ->check(CLI::IsMember({"sigmoid", "leaky_relu"}))
        ->capture_default_str();
    cmd->add_option("--tau0", o.pipe.weights.tau0, "perturbation-contrast temperature")->capture_default_str();
    cmd->add_option("--tau1", o.pipe.weights.tau1, "semantic-alignment temperature")->capture_default_str();
    cmd->add_option("--tau2", o.pipe.weights.tau2, "behavior-alignment temperature")->capture_default_str();
    cmd->add_option("--lambda-p", o.pipe.weights.lambda_p, "perturbation loss weight")->capture_default_str();
    cmd->add_option("--lambda-a", o.pipe.weights.lambda_a, "alignment loss weight")->capture_default_str();
    cmd->add_option("--lambda-r", o.pipe.weights.lambda_r, "L2 weight")->capture_default_str();
    cmd->add_flag("--full-universe", o.pipe.options.full_universe,
                  "contrast against all users/items instead of the batch");
}

void add_train_flags(CLI::App* cmd, Options& o) {
    cmd->add_option("--lr", o.train.lr, "learning rate")->capture_default_str();
    cmd->add_option("--batch", o.train.batch_size, "batch size")->capture_default_str();
    cmd->add_option("--max-epochs", o.train.max_epochs, "epoch cap")->capture_default_str();
    cmd->add_option("--patience", o.train.patience, "early-stopping patience")->capture_default_str();
    cmd->add_flag("--deterministic,!--no-deterministic", o.train.deterministic,
                  "single-stream deterministic mode");
}

std::vector<std::string> variant_names() {
    std::vector<std::string> names;
    for (auto& [v, n] : siger::variant_table()) {
        (void)v;
        names.push_back(n);
    }
    return names;
}

std::string feature_file(const std::string& dir, siger::Modality m) {
    return (fs::path(dir) / (std::string(siger::modality_name(m)) + ".feat")).string();
}

void ensure_out_dir(const std::string& dir, bool force) {
    fs::path p(dir);
    if (fs::exists(p) && !fs::is_directory(p)) throw std::runtime_error(dir + " exists and is not a directory");
    if (fs::exists(p) && !fs::is_empty(p) && !force)
        throw std::runtime_error("output directory " + dir + " is not empty (use --force to overwrite)");
    fs::create_directories(p);
}

struct Prepared {
    siger::IndexMaps maps;
    siger::DatasetSplit split;
    std::map<siger::Modality, siger::ModalityFeatureMatrix> features;
    int n_users = 0;
    int n_items = 0;
    std::uint64_t dataset_hash = 0;
};

Prepared load_prepared(const std::string& dir, const std::vector<siger::Modality>& modalities) {
    Prepared p;
    p.maps.user_tokens = siger::load_index_map((fs::path(dir) / "user_map.tsv").string());
    p.maps.item_tokens = siger::load_index_map((fs::path(dir) / "item_map.tsv").string());
    p.n_users = static_cast<int>(p.maps.user_tokens.size());
    p.n_items = static_cast<int>(p.maps.item_tokens.size());
    std::string train_path = (fs::path(dir) / "train.tsv").string();
    p.split.train = siger::load_pairs(train_path, p.maps);
    p.split.valid = siger::load_pairs((fs::path(dir) / "valid.tsv").string(), p.maps);
    p.split.test = siger::load_pairs((fs::path(dir) / "test.tsv").string(), p.maps);
    std::ifstream meta_in((fs::path(dir) / "split_meta.json").string());
    if (meta_in) {
        json meta = json::parse(meta_in);
        p.split.mode = meta.value("mode", "general") == "cold-start" ? siger::SplitMode::cold_start
                                                                     : siger::SplitMode::general;
        p.split.seed = meta.value("seed", 0ull);
        if (meta.contains("cold_items")) p.split.cold_items = meta["cold_items"].get<std::vector<int>>();
        p.split.users_dropped_from_train = meta.value("users_dropped_from_train", 0);
    }
    std::ostringstream hash_input;
    hash_input << siger::hex64(siger::hash_file(train_path));
    for (siger::Modality m : modalities) {
        std::string path = feature_file(dir, m);
        if (!fs::exists(path))
            throw std::runtime_error(std::string("missing feature file for modality ") +
                                     siger::modality_name(m) + ": " + path);
        auto f = siger::load_modality_features(path, m);
        if (f.data.rows != p.n_items)
            throw std::runtime_error(path + ": feature rows " + std::to_string(f.data.rows) +
                                     " != item count " + std::to_string(p.n_items));
        p.features[m] = std::move(f);
        hash_input << '|' << siger::modality_name(m) << ':' << siger::hex64(siger::hash_file(path));
    }
    p.dataset_hash = siger::fnv1a64(hash_input.str());
    return p;
}

std::string default_cache_dir(const std::string& data_dir) {
    return (fs::path(data_dir) / "graph-cache").string();
}

siger::GraphSet build_graphs_for(const Prepared& p, const Options& o, bool* cache_hit = nullptr) {
    std::string cache = o.cache_dir.empty() ? default_cache_dir(o.data_dir) : o.cache_dir;
    return siger::graphs_cached(cache, p.dataset_hash, p.split.train, p.features, o.pipe.graph, p.n_users,
                                p.n_items, cache_hit);
}

json dataset_hash_json(const Prepared& p) {
    return json{{"dataset", siger::hex64(p.dataset_hash)}};
}

// -- commands -----------------------------------------------------------------

int cmd_synth(Options& o) {
    ensure_out_dir(o.out_dir, o.force);
    siger::SyntheticData data = siger::generate_synthetic(o.synth);
    fs::path out(o.out_dir);
    siger::save_interactions(data.table, data.maps, (out / "interactions.tsv").string());
    siger::save_index_map(data.maps.user_tokens, (out / "user_map.tsv").string());
    siger::save_index_map(data.maps.item_tokens, (out / "item_map.tsv").string());
    siger::save_modality_features(data.visual.data, (out / "visual.feat").string());
    siger::save_modality_features(data.textual.data, (out / "textual.feat").string());
    json manifest{
        {"tool_version", siger::kToolVersion},
        {"command", "synth"},
        {"seed", o.synth.seed},
        {"config",
         {{"users", o.synth.n_users},
          {"items", o.synth.n_items},
          {"latent_dim", o.synth.latent_dim},
          {"per_user", o.synth.interactions_per_user},
          {"noise", o.synth.noise_std},
          {"clusters", o.synth.clusters},
          {"feat_dim_visual", o.synth.feat_dim_visual},
          {"feat_dim_textual", o.synth.feat_dim_textual}}},
        {"artifacts", {"interactions.tsv", "user_map.tsv", "item_map.tsv", "visual.feat", "textual.feat"}},
        {"hashes",
         {{"interactions.tsv", siger::hex64(siger::hash_file((out / "interactions.tsv").string()))},
          {"visual.feat", siger::hex64(siger::hash_file((out / "visual.feat").string()))},
          {"textual.feat", siger::hex64(siger::hash_file((out / "textual.feat").string()))}}},
    };
    siger::write_manifest(manifest, (out / "manifest.json").string());
    std::cout << "synth: " << data.table.n_users << " users, " << data.table.n_items << " items, "
              << data.table.pairs.size() << " interactions -> " << o.out_dir << "\n";
    return 0;
}

int cmd_prepare(Options& o) {
    ensure_out_dir(o.out_dir, o.force);
    fs::path in(o.data_dir), out(o.out_dir);
    auto loaded_maps = siger::IndexMaps{siger::load_index_map((in / "user_map.tsv").string()),
                                        siger::load_index_map((in / "item_map.tsv").string())};
    siger::InteractionTable table =
        siger::load_interactions_mapped((in / "interactions.tsv").string(), loaded_maps);
    siger::IndexMaps maps = loaded_maps;

    std::map<siger::Modality, siger::ModalityFeatureMatrix> feats;
    for (siger::Modality m : {siger::Modality::visual, siger::Modality::textual}) {
        std::string path = feature_file(o.data_dir, m);
        if (fs::exists(path)) feats[m] = siger::load_modality_features(path, m);
    }

    if (o.kcore > 0) {
        siger::KcoreResult res = siger::kcore_filter(table, o.kcore);
        siger::IndexMaps kept;
        for (int u : res.kept_users) kept.user_tokens.push_back(maps.user_tokens[static_cast<std::size_t>(u)]);
        for (int i : res.kept_items) kept.item_tokens.push_back(maps.item_tokens[static_cast<std::size_t>(i)]);
        for (auto& [m, f] : feats) {
            siger::Dense sub(static_cast<int>(res.kept_items.size()), f.data.cols);
            for (std::size_t k = 0; k < res.kept_items.size(); ++k) {
                const double* src = f.data.row(res.kept_items[k]);
                std::copy(src, src + f.data.cols, sub.row(static_cast<int>(k)));
            }
            f.data = std::move(sub);
            (void)m;
        }
        table = std::move(res.table);
        maps = std::move(kept);
    }

    siger::DatasetSplit split;
    if (o.split_mode == "cold") {
        split = siger::split_cold_start(table, o.cold_fraction, o.seed);
        if (split.users_dropped_from_train > 0)
            std::cerr << "warning: " << split.users_dropped_from_train
                      << " users lost every train pair to the cold set\n";
    } else {
        if (o.ratios.size() != 3) throw std::runtime_error("--ratios needs exactly three values");
        split = siger::split_general(table, o.ratios[0], o.ratios[1], o.ratios[2], o.seed);
    }

    siger::save_interactions(table, maps, (out / "interactions.tsv").string());
    siger::save_index_map(maps.user_tokens, (out / "user_map.tsv").string());
    siger::save_index_map(maps.item_tokens, (out / "item_map.tsv").string());
    siger::save_pairs(split.train, maps, (out / "train.tsv").string());
    siger::save_pairs(split.valid, maps, (out / "valid.tsv").string());
    siger::save_pairs(split.test, maps, (out / "test.tsv").string());
    for (auto& [m, f] : feats) siger::save_modality_features(f.data, feature_file(o.out_dir, m));
    json meta{{"mode", split.mode == siger::SplitMode::cold_start ? "cold-start" : "general"},
              {"seed", split.seed},
              {"users_dropped_from_train", split.users_dropped_from_train}};
    if (split.mode == siger::SplitMode::cold_start) meta["cold_items"] = split.cold_items;
    siger::write_manifest(meta, (out / "split_meta.json").string());

    json manifest{{"tool_version", siger::kToolVersion},
                  {"command", "prepare"},
                  {"seed", o.seed},
                  {"config",
                   {{"kcore", o.kcore},
                    {"split", o.split_mode},
                    {"ratios", o.ratios},
                    {"cold_fraction", o.cold_fraction}}},
                  {"counts",
                   {{"users", table.n_users},
                    {"items", table.n_items},
                    {"train", split.train.size()},
                    {"valid", split.valid.size()},
                    {"test", split.test.size()}}}};
    siger::write_manifest(manifest, (out / "manifest.json").string());
    std::cout << "prepare: " << table.n_users << " users, " << table.n_items << " items; train/valid/test = "
              << split.train.size() << '/' << split.valid.size() << '/' << split.test.size() << "\n";
    return 0;
}

int cmd_build_graphs(Options& o) {
    Prepared p = load_prepared(o.data_dir, {siger::Modality::visual, siger::Modality::textual});
    bool hit = false;
    siger::GraphSet g = build_graphs_for(p, o, &hit);
    std::string key = siger::graph_cache_key(p.dataset_hash, o.pipe.graph);
    std::cout << (hit ? "graph cache hit: " : "graphs built: ") << key << "\n";
    std::cout << "  c_bar nnz=" << g.c_bar.values.size() << " g_hat nnz=" << g.g_hat.values.size()
              << " r_bar nnz=" << g.r_bar.values.size() << "\n";
    std::vector<siger::CoverageHistogram> hists;
    for (auto& [m, pattern] : g.h_pattern) {
        auto h = siger::collaborative_coverage(pattern, g.counts, o.coverage_top_n);
        h.modality = m;
        std::cout << "  s_bar[" << siger::modality_name(m) << "] nnz=" << g.s_bar.at(m).values.size()
                  << " coverage bins:";
        for (long c : h.counts) std::cout << ' ' << c;
        std::cout << " (eligible " << h.eligible_items << ")\n";
        hists.push_back(std::move(h));
    }
    std::string out_dir = o.out_dir.empty() ? o.data_dir : o.out_dir;
    fs::create_directories(out_dir);
    siger::write_coverage_csv(hists, (fs::path(out_dir) / "coverage.csv").string());
    json manifest{{"tool_version", siger::kToolVersion}, {"command", "build-graphs"},
                  {"seed", o.seed},          {"config", config_json(o)},
                  {"hashes", dataset_hash_json(p)}, {"graph_cache_key", key},
                  {"cache_hit", hit}};
    siger::write_manifest(manifest, (fs::path(out_dir) / "build-graphs.manifest.json").string());
    return 0;
}

int cmd_diagnose_coverage(Options& o) {
    Prepared p = load_prepared(o.data_dir, {siger::Modality::visual, siger::Modality::textual});
    siger::SparseMatrix counts = siger::cooccurrence_counts(p.split.train, p.n_items);
    std::vector<siger::CoverageHistogram> hists;
    for (auto& [m, f] : p.features) {
        auto mg = siger::modality_graph(f, o.pipe.graph.k_m, o.pipe.graph.include_self_modality);
        auto h = siger::collaborative_coverage(mg.pattern, counts, o.coverage_top_n);
        h.modality = m;
        hists.push_back(std::move(h));
    }
    std::string out_dir = o.out_dir.empty() ? o.data_dir : o.out_dir;
    fs::create_directories(out_dir);
    std::string csv = (fs::path(out_dir) / "coverage.csv").string();
    siger::write_coverage_csv(hists, csv);
    for (auto& h : hists) {
        std::cout << siger::modality_name(h.modality) << " coverage:";
        for (long c : h.counts) std::cout << ' ' << c;
        std::cout << " (eligible " << h.eligible_items << ")\n";
    }
    json manifest{{"tool_version", siger::kToolVersion},
                  {"command", "diagnose-coverage"},
                  {"config", {{"km", o.pipe.graph.k_m}, {"top_n", o.coverage_top_n}}},
                  {"hashes", dataset_hash_json(p)},
                  {"artifacts", {csv}}};
    siger::write_manifest(manifest, (fs::path(out_dir) / "diagnose-coverage.manifest.json").string());
    return 0;
}

siger::MetricReport run_eval(const siger::ModelParams& params, const siger::GraphSet& graphs,
                             const Prepared& p, const Options& o,
                             const std::vector<std::pair<int, int>>& pairs, const std::string& variant) {
    siger::MetricReport rep =
        siger::evaluate(params, graphs, p.features, o.pipe.hyper, p.split, pairs, o.ks);
    rep.variant_tag = variant;
    return rep;
}

int cmd_train(Options& o) {
    siger::Variant variant = siger::variant_from_name(o.variant);
    siger::PipelineConfig pipe = siger::apply_ablation(o.pipe, variant);
    pipe.hyper.activation = siger::activation_from_name(o.activation);
    Prepared p = load_prepared(o.data_dir, pipe.modalities);
    Options graph_opts = o;
    graph_opts.pipe = pipe;
    bool hit = false;
    siger::GraphSet graphs = build_graphs_for(p, graph_opts, &hit);
    o.train.seed = o.seed;
    o.train.report_ks = o.ks;
    siger::FitResult res = siger::fit(p.split, p.features, graphs, pipe, o.train);

    ensure_out_dir(o.out_dir, true);
    fs::path out(o.out_dir);
    siger::write_history_csv(res.history, o.ks, (out / "history.csv").string());
    siger::save_checkpoint((out / "best.ckpt").string(), res.best_params);

    std::vector<siger::MetricReport> reports;
    {
        siger::MetricReport valid = run_eval(res.best_params, graphs, p, graph_opts, p.split.valid, o.variant);
        valid.split_tag += "/valid";
        reports.push_back(valid);
        siger::MetricReport test = run_eval(res.best_params, graphs, p, graph_opts, p.split.test, o.variant);
        test.split_tag += "/test";
        reports.push_back(test);
    }
    siger::write_metric_csv(reports, (out / "metrics.csv").string());
    std::cout << "train: variant=" << o.variant << " best epoch " << res.best_epoch << " (valid r@"
              << o.train.eval_k << " = " << res.best_metric << ")\n"
              << siger::format_metric_table(reports);

    Options manifest_opts = o;
    manifest_opts.pipe = pipe;
    json manifest{{"tool_version", siger::kToolVersion},
                  {"command", "train"},
                  {"seed", o.seed},
                  {"config", config_json(manifest_opts)},
                  {"hashes", dataset_hash_json(p)},
                  {"graph_cache_key", siger::graph_cache_key(p.dataset_hash, pipe.graph)},
                  {"best_epoch", res.best_epoch},
                  {"best_valid_metric", res.best_metric},
                  {"artifacts", {"history.csv", "best.ckpt", "metrics.csv"}}};
    siger::write_manifest(manifest, (out / "manifest.json").string());
    return 0;
}

int cmd_evaluate(Options& o) {
    if (!fs::exists(o.checkpoint)) throw std::runtime_error("missing checkpoint: " + o.checkpoint);
    siger::ModelParams params = siger::load_checkpoint(o.checkpoint);
    std::vector<siger::Modality> mods;
    for (auto& [m, t] : params.transforms) {
        (void)t;
        mods.push_back(m);
    }
    Prepared p = load_prepared(o.data_dir, mods);
    if (params.n_users != p.n_users || params.n_items != p.n_items)
        throw std::runtime_error("checkpoint shape (" + std::to_string(params.n_users) + "x" +
                                 std::to_string(params.n_items) + ") does not match dataset (" +
                                 std::to_string(p.n_users) + "x" + std::to_string(p.n_items) + ")");
    Options graph_opts = o;
    graph_opts.pipe.modalities = mods;
    graph_opts.pipe.hyper.activation = siger::activation_from_name(o.activation);
    siger::GraphSet graphs = build_graphs_for(p, graph_opts, nullptr);
    siger::MetricReport rep = run_eval(params, graphs, p, graph_opts, p.split.test, o.variant);
    std::string out_dir = o.out_dir.empty() ? o.data_dir : o.out_dir;
    fs::create_directories(out_dir);
    siger::write_metric_csv({rep}, (fs::path(out_dir) / "evaluate.csv").string());
    std::cout << siger::format_metric_table({rep});
    json manifest{{"tool_version", siger::kToolVersion},
                  {"command", "evaluate"},
                  {"checkpoint", o.checkpoint},
                  {"config", config_json(graph_opts)},
                  {"hashes", dataset_hash_json(p)},
                  {"artifacts", {"evaluate.csv"}}};
    siger::write_manifest(manifest, (fs::path(out_dir) / "evaluate.manifest.json").string());
    return 0;
}

int cmd_ablate(Options& o) {
    ensure_out_dir(o.out_dir, true);
    std::vector<siger::MetricReport> reports;
    for (auto& [variant, name] : siger::variant_table()) {
        siger::PipelineConfig pipe = siger::apply_ablation(o.pipe, variant);
        pipe.hyper.activation = siger::activation_from_name(o.activation);
        Prepared p = load_prepared(o.data_dir, pipe.modalities);
        Options graph_opts = o;
        graph_opts.pipe = pipe;
        siger::GraphSet graphs = build_graphs_for(p, graph_opts, nullptr);
        o.train.seed = o.seed;
        o.train.report_ks = o.ks;
        siger::FitResult res = siger::fit(p.split, p.features, graphs, pipe, o.train);
        siger::MetricReport rep = run_eval(res.best_params, graphs, p, graph_opts, p.split.test, name);
        reports.push_back(rep);
        std::cout << "ablate: " << name << " best epoch " << res.best_epoch << " valid=" << res.best_metric
                  << "\n";
    }
    fs::path out(o.out_dir);
    siger::write_metric_csv(reports, (out / "ablate.csv").string());
    std::cout << siger::format_metric_table(reports);
    json manifest{{"tool_version", siger::kToolVersion},
                  {"command", "ablate"},
                  {"seed", o.seed},
                  {"config", config_json(o)},
                  {"artifacts", {"ablate.csv"}}};
    siger::write_manifest(manifest, (out / "manifest.json").string());
    return 0;
}

std::vector<siger::SweepPoint> parse_grid_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open grid file: " + path);
    std::vector<std::pair<std::string, std::vector<double>>> axes;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ss(line);
        std::string key;
        ss >> key;
        std::vector<double> values;
        double v;
        while (ss >> v) values.push_back(v);
        if (values.empty()) throw std::runtime_error("grid line has no values: " + line);
        axes.emplace_back(key, values);
    }
    if (axes.empty()) throw std::runtime_error("grid file is empty: " + path);
    std::vector<siger::SweepPoint> points{{}};
    for (auto& [key, values] : axes) {
        std::vector<siger::SweepPoint> next;
        for (const auto& p : points)
            for (double v : values) {
                siger::SweepPoint q = p;
                q.overrides[key] = v;
                next.push_back(std::move(q));
            }
        points = std::move(next);
    }
    return points;
}

int cmd_sweep(Options& o) {
    std::vector<siger::SweepPoint> grid;
    try {
        grid = parse_grid_file(o.grid_file);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    siger::PipelineConfig pipe = o.pipe;
    pipe.hyper.activation = siger::activation_from_name(o.activation);
    Prepared p = load_prepared(o.data_dir, pipe.modalities);
    o.train.seed = o.seed;
    o.train.report_ks = o.ks;
    std::vector<siger::SweepRow> rows =
        siger::sweep(grid, p.split, p.features, pipe, o.train, p.n_users, p.n_items);
    std::string out_dir = o.out_dir.empty() ? o.data_dir : o.out_dir;
    fs::create_directories(out_dir);
    std::string csv = (fs::path(out_dir) / "sweep.csv").string();
    siger::write_sweep_csv(rows, o.ks, csv);
    std::cout << "sweep: " << rows.size() << " grid points -> " << csv << "\n";
    for (const auto& row : rows) {
        for (auto& [k, v] : row.point.overrides) std::cout << k << '=' << v << ' ';
        std::cout << "valid=" << row.valid_metric << "\n";
    }
    json manifest{{"tool_version", siger::kToolVersion},
                  {"command", "sweep"},
                  {"seed", o.seed},
                  {"config", config_json(o)},
                  {"grid_points", rows.size()},
                  {"artifacts", {csv}}};
    siger::write_manifest(manifest, (fs::path(out_dir) / "sweep.manifest.json").string());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"SIGER multimodal recommender"};
    app.set_version_flag("--version", siger::kToolVersion);
    app.require_subcommand(1);
    app.set_config("--config", "", "key=value config file (sections per subcommand)");

    Options o;

    auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
    synth->add_option("--out", o.out_dir, "output directory")->required();
    synth->add_option("--users", o.synth.n_users, "user count")->capture_default_str();
    synth->add_option("--items", o.synth.n_items, "item count")->capture_default_str();
    synth->add_option("--latent-dim", o.synth.latent_dim, "planted latent dimension")->capture_default_str();
    synth->add_option("--per-user", o.synth.interactions_per_user, "interaction draws per user")
        ->capture_default_str();
    synth->add_option("--noise", o.synth.noise_std, "feature noise std")->capture_default_str();
    synth->add_option("--clusters", o.synth.clusters, "latent cluster count")->capture_default_str();
    synth->add_option("--feat-dim-visual", o.synth.feat_dim_visual, "visual feature dim")
        ->capture_default_str();
    synth->add_option("--feat-dim-textual", o.synth.feat_dim_textual, "textual feature dim")
        ->capture_default_str();
    synth->add_option("--seed", o.synth.seed, "root seed")->capture_default_str();
    synth->add_flag("--force", o.force, "overwrite non-empty output directory");

    auto* prepare = app.add_subcommand("prepare", "k-core filter and split a dataset");
    prepare->add_option("--data", o.data_dir, "dataset directory (from synth or external)")->required();
    prepare->add_option("--out", o.out_dir, "output directory")->required();
    prepare->add_option("--kcore", o.kcore, "k-core threshold (0 = off)")->capture_default_str();
    prepare->add_option("--split", o.split_mode, "split mode")
        ->check(CLI::IsMember({"general", "cold"}))
        ->capture_default_str();
    prepare->add_option("--ratios", o.ratios, "train/valid/test ratios")->expected(3);
    prepare->add_option("--cold-fraction", o.cold_fraction, "fraction of items made cold")
        ->capture_default_str();
    prepare->add_option("--seed", o.seed, "split seed")->capture_default_str();
    prepare->add_flag("--force", o.force, "overwrite non-empty output directory");

    auto* build = app.add_subcommand("build-graphs", "build and cache the frozen graphs");
    build->add_option("--data", o.data_dir, "prepared dataset directory")->required();
    build->add_option("--out", o.out_dir, "output directory (default: data dir)");
    build->add_option("--cache", o.cache_dir, "graph cache directory");
    build->add_option("--top-n", o.coverage_top_n, "coverage bins")->capture_default_str();
    add_pipeline_flags(build, o);

    auto* diag = app.add_subcommand("diagnose-coverage", "co-occurrence coverage of modality neighbors");
    diag->add_option("--data", o.data_dir, "prepared dataset directory")->required();
    diag->add_option("--out", o.out_dir, "output directory (default: data dir)");
    diag->add_option("--top-n", o.coverage_top_n, "coverage bins")->capture_default_str();
    diag->add_option("--km", o.pipe.graph.k_m, "modality top-K")->capture_default_str();
    diag->add_flag("--include-self,!--no-include-self", o.pipe.graph.include_self_modality,
                   "include each item in its modality neighbor list");

    auto* train = app.add_subcommand("train", "train a model variant");
    train->add_option("--data", o.data_dir, "prepared dataset directory")->required();
    train->add_option("--out", o.out_dir, "output directory")->required();
    train->add_option("--cache", o.cache_dir, "graph cache directory");
    train->add_option("--variant", o.variant, "ablation variant")
        ->check(CLI::IsMember(variant_names()))
        ->capture_default_str();
    train->add_option("--seed", o.seed, "root seed")->capture_default_str();
    train->add_option("--ks", o.ks, "metric cutoffs")->expected(-1);
    add_pipeline_flags(train, o);
    add_model_flags(train, o);
    add_train_flags(train, o);

    auto* evaluate = app.add_subcommand("evaluate", "evaluate a checkpoint on a prepared split");
    evaluate->add_option("--checkpoint", o.checkpoint, "checkpoint file")->required();
    evaluate->add_option("--data", o.data_dir, "prepared dataset directory")->required();
    evaluate->add_option("--out", o.out_dir, "output directory (default: data dir)");
    evaluate->add_option("--cache", o.cache_dir, "graph cache directory");
    evaluate->add_option("--ks", o.ks, "metric cutoffs")->expected(-1);
    evaluate->add_option("--variant", o.variant, "variant tag for the report")->capture_default_str();
    add_pipeline_flags(evaluate, o);
    add_model_flags(evaluate, o);

    auto* ablate = app.add_subcommand("ablate", "train and compare all ablation variants");
    ablate->add_option("--data", o.data_dir, "prepared dataset directory")->required();
    ablate->add_option("--out", o.out_dir, "output directory")->required();
    ablate->add_option("--cache", o.cache_dir, "graph cache directory");
    ablate->add_option("--seed", o.seed, "root seed")->capture_default_str();
    ablate->add_option("--ks", o.ks, "metric cutoffs")->expected(-1);
    add_pipeline_flags(ablate, o);
    add_model_flags(ablate, o);
    add_train_flags(ablate, o);

    auto* sweep = app.add_subcommand("sweep", "grid-search hyperparameters");
    sweep->add_option("--data", o.data_dir, "prepared dataset directory")->required();
    sweep->add_option("--grid", o.grid_file, "grid file: one `key v1 v2 ...` line per axis")->required();
    sweep->add_option("--out", o.out_dir, "output directory (default: data dir)");
    sweep->add_option("--seed", o.seed, "root seed")->capture_default_str();
    sweep->add_option("--ks", o.ks, "metric cutoffs")->expected(-1);
    add_pipeline_flags(sweep, o);
    add_model_flags(sweep, o);
    add_train_flags(sweep, o);

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (synth->parsed()) return cmd_synth(o);
        if (prepare->parsed()) return cmd_prepare(o);
        if (build->parsed()) return cmd_build_graphs(o);
        if (diag->parsed()) return cmd_diagnose_coverage(o);
        if (train->parsed()) return cmd_train(o);
        if (evaluate->parsed()) return cmd_evaluate(o);
        if (ablate->parsed()) return cmd_ablate(o);
        if (sweep->parsed()) return cmd_sweep(o);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
