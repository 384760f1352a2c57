// Ranking-metric tests: pinned closed-form values, exact agreement with a
// brute-force oracle over random instances, and the structural properties a
// full-ranking evaluation must satisfy (monotonicity, hit/NDCG coupling,
// repeatability, indifference to items below the cutoff).

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <vector>

#include "oracles.hpp"
#include "siger/dataset.hpp"
#include "siger/eval.hpp"
#include "siger/rng.hpp"

using Catch::Matchers::ContainsSubstring;

namespace {

// One user, d = 1, unit user embedding: item scores are the item embeddings.
siger::Dense scores_as_embedding(const std::vector<double>& scores) {
    siger::Dense e(1 + static_cast<int>(scores.size()), 1);
    e.at(0, 0) = 1.0;
    for (std::size_t i = 0; i < scores.size(); ++i) e.at(1 + static_cast<int>(i), 0) = scores[i];
    return e;
}

struct Instance {
    int n_users, n_items;
    siger::Dense e;
    std::vector<std::pair<int, int>> train, test;
};

Instance random_instance(std::uint64_t seed) {
    siger::RngStream rng(seed, "test.eval.instance");
    Instance inst;
    inst.n_users = 4 + static_cast<int>(rng.uniform_int(6));
    inst.n_items = 6 + static_cast<int>(rng.uniform_int(10));
    int d = 3 + static_cast<int>(rng.uniform_int(4));
    inst.e = siger::Dense(inst.n_users + inst.n_items, d);
    for (double& x : inst.e.v) x = rng.uniform(-1.0, 1.0);
    // Occasional exact score ties via duplicated item rows.
    if (seed % 3 == 0 && inst.n_items >= 2) {
        for (int j = 0; j < d; ++j)
            inst.e.at(inst.n_users + 1, j) = inst.e.at(inst.n_users + 0, j);
    }
    auto all = oracle::random_table(inst.n_users, inst.n_items, inst.n_users * 4, seed * 7 + 1);
    for (std::size_t k = 0; k < all.size(); ++k)
        (k % 3 == 0 ? inst.test : inst.train).push_back(all[k]);
    return inst;
}

// Brute-force mean metrics over eligible users, mirroring the evaluation
// contract with independent ranking code.
void oracle_metrics(const Instance& inst, const std::vector<int>& ks, std::map<int, double>& recall_out,
                    std::map<int, double>& ndcg_out, int& eligible_out) {
    std::vector<std::set<int>> train_items(static_cast<std::size_t>(inst.n_users));
    std::vector<std::set<int>> rel(static_cast<std::size_t>(inst.n_users));
    for (auto [u, i] : inst.train) train_items[static_cast<std::size_t>(u)].insert(i);
    for (auto [u, i] : inst.test) rel[static_cast<std::size_t>(u)].insert(i);
    std::map<int, double> rsum, nsum;
    for (int k : ks) rsum[k] = nsum[k] = 0.0;
    eligible_out = 0;
    for (int u = 0; u < inst.n_users; ++u) {
        if (rel[static_cast<std::size_t>(u)].empty()) continue;
        ++eligible_out;
        std::vector<double> scores(static_cast<std::size_t>(inst.n_items));
        for (int i = 0; i < inst.n_items; ++i) {
            double s = 0.0;
            for (int j = 0; j < inst.e.cols; ++j)
                s += inst.e.at(u, j) * inst.e.at(inst.n_users + i, j);
            scores[static_cast<std::size_t>(i)] = s;
        }
        std::vector<int> ranked = oracle::rank(scores, train_items[static_cast<std::size_t>(u)]);
        for (int k : ks) {
            rsum[k] += oracle::recall(ranked, rel[static_cast<std::size_t>(u)], k);
            nsum[k] += oracle::ndcg(ranked, rel[static_cast<std::size_t>(u)], k);
        }
    }
    recall_out.clear();
    ndcg_out.clear();
    if (eligible_out > 0) {
        for (int k : ks) {
            recall_out[k] = rsum[k] / eligible_out;
            ndcg_out[k] = nsum[k] / eligible_out;
        }
    }
}

}  // namespace

TEST_CASE("rank_items orders by score descending with index tie-break") {
    siger::Dense e = scores_as_embedding({0.1, 0.9, 0.5});
    REQUIRE(siger::rank_items(e, 0, {}, 1, 3) == std::vector<int>{1, 2, 0});

    SECTION("ties fall back to ascending item index") {
        siger::Dense tied = scores_as_embedding({0.5, 0.5, 0.5, 0.7});
        REQUIRE(siger::rank_items(tied, 0, {}, 1, 4) == std::vector<int>{3, 0, 1, 2});
    }
    SECTION("excluded items never appear") {
        REQUIRE(siger::rank_items(e, 0, {1}, 1, 3) == std::vector<int>{2, 0});
        REQUIRE(siger::rank_items(e, 0, {0, 1, 2}, 1, 3).empty());
    }
}

TEST_CASE("recall at k: pinned values") {
    std::vector<int> ranked = {1, 2, 0};
    REQUIRE(siger::recall_at_k(ranked, {1}, 1) == 1.0);
    REQUIRE(siger::recall_at_k(ranked, {0}, 1) == 0.0);
    REQUIRE(siger::recall_at_k(ranked, {0, 1}, 2) == 0.5);
    REQUIRE(siger::recall_at_k(ranked, {0, 1, 2}, 10) == 1.0);  // k beyond the list
    REQUIRE_THROWS_WITH(siger::recall_at_k(ranked, {}, 1), ContainsSubstring("empty relevant set"));
}

TEST_CASE("ndcg at k: pinned values") {
    SECTION("perfect ordering scores 1") {
        REQUIRE(siger::ndcg_at_k({1, 2, 0}, {1, 2}, 2) == 1.0);
        REQUIRE(siger::ndcg_at_k({4, 0, 3}, {4}, 1) == 1.0);
    }
    SECTION("a single hit at the second position") {
        double got = siger::ndcg_at_k({7, 3, 9}, {3}, 2);
        REQUIRE(std::abs(got - 1.0 / std::log2(3.0)) < 1e-12);
        REQUIRE(got == Catch::Approx(0.63092975357).margin(1e-9));
    }
    SECTION("no hit scores 0") {
        REQUIRE(siger::ndcg_at_k({1, 2, 0}, {5}, 3) == 0.0);
    }
    REQUIRE_THROWS_WITH(siger::ndcg_at_k({1}, {}, 1), ContainsSubstring("empty relevant set"));
}

TEST_CASE("evaluation agrees exactly with the brute-force oracle") {
    std::vector<int> ks = {3, 5, 10};
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Instance inst = random_instance(seed);
        auto rep = siger::evaluate_representations(inst.e, inst.n_users, inst.n_items, inst.train, inst.test, ks);
        std::map<int, double> orecall, ondcg;
        int oeligible = 0;
        oracle_metrics(inst, ks, orecall, ondcg, oeligible);
        REQUIRE(rep.eligible_users == oeligible);
        for (int k : ks) {
            REQUIRE(rep.recall.at(k) == orecall.at(k));  // exact, same-order arithmetic
            REQUIRE(rep.ndcg.at(k) == ondcg.at(k));
        }
    }
}

TEST_CASE("metric structure over random instances") {
    std::vector<int> ks = {3, 5, 10};
    for (std::uint64_t seed = 30; seed < 42; ++seed) {
        Instance inst = random_instance(seed);
        auto rep = siger::evaluate_representations(inst.e, inst.n_users, inst.n_items, inst.train, inst.test, ks);
        SECTION("recall grows with k (seed " + std::to_string(seed) + ")") {
            REQUIRE(rep.recall.at(3) <= rep.recall.at(5));
            REQUIRE(rep.recall.at(5) <= rep.recall.at(10));
        }
        SECTION("zero NDCG exactly when no relevant item makes the cutoff (seed " + std::to_string(seed) + ")") {
            std::vector<std::vector<int>> train_items(static_cast<std::size_t>(inst.n_users));
            std::vector<std::set<int>> rel(static_cast<std::size_t>(inst.n_users));
            for (auto [u, i] : inst.train) train_items[static_cast<std::size_t>(u)].push_back(i);
            for (auto [u, i] : inst.test) rel[static_cast<std::size_t>(u)].insert(i);
            for (int u = 0; u < inst.n_users; ++u) {
                if (rel[static_cast<std::size_t>(u)].empty()) continue;
                auto ranked = siger::rank_items(inst.e, u, train_items[static_cast<std::size_t>(u)],
                                                inst.n_users, inst.n_items);
                for (int k : ks) {
                    bool hit = siger::recall_at_k(ranked, rel[static_cast<std::size_t>(u)], k) > 0.0;
                    bool scored = siger::ndcg_at_k(ranked, rel[static_cast<std::size_t>(u)], k) > 0.0;
                    REQUIRE(hit == scored);
                }
            }
        }
        SECTION("repeat evaluation is bit-identical (seed " + std::to_string(seed) + ")") {
            auto again =
                siger::evaluate_representations(inst.e, inst.n_users, inst.n_items, inst.train, inst.test, ks);
            REQUIRE(again.recall == rep.recall);
            REQUIRE(again.ndcg == rep.ndcg);
            REQUIRE(again.eligible_users == rep.eligible_users);
        }
    }
}

TEST_CASE("items below the cutoff cannot move the metrics") {
    // Ten items, one user; the relevant item sits on top, and the bottom item
    // is pushed arbitrarily lower without touching anything above it.
    std::vector<double> scores = {0.9, 0.8, 0.7, 0.6, 0.5, 0.4, 0.3, 0.2, 0.1, 0.05};
    siger::Dense e = scores_as_embedding(scores);
    std::vector<std::pair<int, int>> test = {{0, 0}, {0, 2}};
    auto before = siger::evaluate_representations(e, 1, 10, {}, test, {3});

    scores[9] = -100.0;
    siger::Dense e2 = scores_as_embedding(scores);
    auto after = siger::evaluate_representations(e2, 1, 10, {}, test, {3});
    REQUIRE(before.recall == after.recall);
    REQUIRE(before.ndcg == after.ndcg);
}

TEST_CASE("users without relevant items are skipped; none eligible leaves metrics absent") {
    siger::Dense e(3 + 4, 2);
    for (std::size_t k = 0; k < e.v.size(); ++k) e.v[k] = 0.1 * static_cast<double>(k);
    auto rep = siger::evaluate_representations(e, 3, 4, {{0, 1}}, {{1, 2}}, {2});
    REQUIRE(rep.eligible_users == 1);  // only user 1 has a relevant item

    auto none = siger::evaluate_representations(e, 3, 4, {{0, 1}}, {}, {2});
    REQUIRE(none.eligible_users == 0);
    REQUIRE(none.recall.empty());
    REQUIRE(none.ndcg.empty());

    SECTION("absent metrics serialize as absent") {
        std::string path = "/tmp/test_eval_metrics.csv";
        none.variant_tag = "full";
        siger::write_metric_csv({none}, path);
        std::ifstream is(path);
        std::stringstream ss;
        ss << is.rdbuf();
        REQUIRE_THAT(ss.str(), ContainsSubstring("variant,split,k,recall,ndcg,eligible_users"));
        REQUIRE_THAT(ss.str(), ContainsSubstring("full,general,2,absent,absent,0"));
        std::remove(path.c_str());
    }
    SECTION("table formatter prints absent cells") {
        std::string table = siger::format_metric_table({none});
        REQUIRE_THAT(table, ContainsSubstring("R@2"));
        REQUIRE_THAT(table, ContainsSubstring("N@2"));
        REQUIRE_THAT(table, ContainsSubstring("absent"));
    }
}

TEST_CASE("cold-item restriction narrows relevance to the held-out items") {
    // Items 2 and 3 are cold. User 0's test pairs mix warm and cold; user 1
    // has only a warm test pair and must drop out of the eligible set.
    siger::Dense e(2 + 5, 3);
    siger::RngStream rng(5, "test.eval.cold");
    for (double& x : e.v) x = rng.uniform(-1.0, 1.0);
    std::vector<std::pair<int, int>> test = {{0, 0}, {0, 2}, {0, 3}, {1, 1}};
    std::vector<int> cold = {2, 3};

    auto open = siger::evaluate_representations(e, 2, 5, {}, test, {5});
    auto restricted = siger::evaluate_representations(e, 2, 5, {}, test, {5}, &cold);
    REQUIRE(open.eligible_users == 2);
    REQUIRE(restricted.eligible_users == 1);
    REQUIRE(restricted.recall.at(5) == 1.0);  // both cold items rank within 5 of 5

    SECTION("full evaluate wrapper: cold test pairs restricted, warm validation untouched") {
        siger::InteractionTable table;
        table.n_users = 12;
        table.n_items = 10;
        table.pairs = oracle::random_table(12, 10, 70, 91);
        auto split = siger::split_cold_start(table, 0.2, 3);
        REQUIRE(split.mode == siger::SplitMode::cold_start);
        REQUIRE_FALSE(split.cold_items.empty());

        siger::ModelHyper hyper;
        hyper.dim = 8;
        std::map<siger::Modality, siger::ModalityFeatureMatrix> feats;
        {
            siger::Dense f(10, 4);
            siger::RngStream frng(17, "test.eval.feat");
            for (double& x : f.v) x = frng.uniform(-1.0, 1.0);
            feats[siger::Modality::visual] = {siger::Modality::visual, f};
        }
        auto graphs = siger::build_graph_set(split.train, feats, siger::GraphConfig{}, 12, 10);
        auto params = siger::init_params(12, 10, hyper, {{siger::Modality::visual, 4}}, 7);

        auto test_rep = siger::evaluate(params, graphs, feats, hyper, split, split.test, {5});
        REQUIRE(test_rep.split_tag == "cold-start");
        // Every test pair involves a cold item by construction, so the
        // restriction changes nothing relative to the raw pair set.
        auto raw = siger::evaluate_representations(
            siger::forward_clean(params, graphs, feats, hyper).e_final, 12, 10, split.train, split.test, {5});
        REQUIRE(test_rep.recall == raw.recall);
        REQUIRE(test_rep.eligible_users == raw.eligible_users);

        // Validation pairs are all warm; the wrapper must keep them eligible
        // rather than intersecting them away.
        if (!split.valid.empty()) {
            auto val_rep = siger::evaluate(params, graphs, feats, hyper, split, split.valid, {5});
            REQUIRE(val_rep.eligible_users > 0);
            REQUIRE(val_rep.recall.count(5) == 1);
        }
    }
}

TEST_CASE("metric csv lists one row per variant and cutoff") {
    siger::MetricReport a;
    a.ks = {10, 20};
    a.recall = {{10, 0.25}, {20, 0.5}};
    a.ndcg = {{10, 0.125}, {20, 0.25}};
    a.eligible_users = 8;
    a.variant_tag = "full";
    siger::MetricReport b = a;
    b.variant_tag = "no-eisg";
    b.split_tag = "cold-start";

    std::string path = "/tmp/test_eval_rows.csv";
    siger::write_metric_csv({a, b}, path);
    std::ifstream is(path);
    std::vector<std::string> lines;
    for (std::string line; std::getline(is, line);) lines.push_back(line);
    std::remove(path.c_str());

    REQUIRE(lines.size() == 5);  // header + 2 variants x 2 cutoffs
    REQUIRE(lines[1] == "full,general,10,0.25,0.125,8");
    REQUIRE(lines[4] == "no-eisg,cold-start,20,0.5,0.25,8");

    std::string table = siger::format_metric_table({a, b});
    REQUIRE_THAT(table, ContainsSubstring("R@10"));
    REQUIRE_THAT(table, ContainsSubstring("N@20"));
    REQUIRE_THAT(table, ContainsSubstring("no-eisg"));
    REQUIRE_THAT(table, ContainsSubstring("0.2500"));
}
