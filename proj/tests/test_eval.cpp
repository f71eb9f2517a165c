#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>

#include "testutil.hpp"
#include "xmodal/evalharness.hpp"

using namespace xmodal;
using test::tiny_config;

namespace {

RankedList make_list(const std::string& qid, std::vector<std::pair<std::string, double>> r) {
    RankedList rl;
    rl.query_id = qid;
    rl.ranked = std::move(r);
    return rl;
}

std::vector<std::vector<double>> random_embeddings(int n, int d, Rng& rng) {
    std::vector<std::vector<double>> out;
    for (int i = 0; i < n; ++i) {
        std::vector<double> v(static_cast<size_t>(d));
        for (auto& x : v) x = rng.gaussian();
        out.push_back(std::move(v));
    }
    return out;
}

RetrievalTask tiny_task(const BackboneConfig& cfg, Rng& rng, int n_queries, int n_docs) {
    RetrievalTask task;
    task.name = "tiny";
    for (int i = 0; i < n_docs; ++i) {
        char id[16];
        std::snprintf(id, sizeof id, "d%03d", i);
        task.pool.emplace_back(id, test::random_sequence(cfg, rng, 3, 1, 4));
    }
    for (int q = 0; q < n_queries; ++q) {
        char id[16];
        std::snprintf(id, sizeof id, "q%03d", q);
        task.queries.emplace_back(id, test::random_sequence(cfg, rng, 4, 0));
        char did[16];
        std::snprintf(did, sizeof did, "d%03d", q % n_docs);
        task.judgments[id] = {did};
    }
    return task;
}

}  // namespace

// ---- metric unit cases ----

TEST_CASE("precision@1 basics") {
    std::map<std::string, std::set<std::string>> judg{{"q1", {"a"}}, {"q2", {"b"}},
                                                      {"q3", {"c"}}, {"q4", {"d"}}};
    std::vector<RankedList> all_hit{make_list("q1", {{"a", 0.9}, {"x", 0.1}}),
                                    make_list("q2", {{"b", 0.8}, {"x", 0.2}})};
    CHECK(precision_at_1(all_hit, judg) == 1.0);

    std::vector<RankedList> half{make_list("q1", {{"a", 0.9}}), make_list("q2", {{"x", 0.9}, {"b", 0.1}}),
                                 make_list("q3", {{"c", 0.9}}), make_list("q4", {{"x", 0.9}})};
    CHECK(precision_at_1(half, judg) == 0.5);

    std::vector<RankedList> missing{make_list("q9", {{"a", 0.9}})};
    CHECK_THROWS_AS(precision_at_1(missing, judg), data_error);
}

TEST_CASE("ndcg@5 formula cases") {
    std::map<std::string, std::set<std::string>> judg{{"q", {"rel"}}};

    CHECK(ndcg_at_k({make_list("q", {{"rel", 1.0}, {"x", 0.5}})}, judg, 5) == 1.0);

    // single relevant doc at rank 3 -> 1/log2(4) = 0.5 exactly
    const auto rank3 = make_list(
        "q", {{"x1", 0.9}, {"x2", 0.8}, {"rel", 0.7}, {"x3", 0.6}, {"x4", 0.5}, {"x5", 0.4}});
    CHECK(ndcg_at_k({rank3}, judg, 5) == 0.5);

    // relevant doc at rank 6 with k = 5 -> 0
    const auto rank6 = make_list("q", {{"x1", 0.9},
                                       {"x2", 0.8},
                                       {"x3", 0.7},
                                       {"x4", 0.6},
                                       {"x5", 0.5},
                                       {"rel", 0.4}});
    CHECK(ndcg_at_k({rank6}, judg, 5) == 0.0);

    // queries with no relevant docs are excluded
    std::map<std::string, std::set<std::string>> with_empty{{"q", {"rel"}}, {"z", {}}};
    const double both = ndcg_at_k({rank3, make_list("z", {{"x", 1.0}})}, with_empty, 5);
    CHECK(both == 0.5);
}

TEST_CASE("metrics are invariant to permuting irrelevant docs below the cutoff") {
    std::map<std::string, std::set<std::string>> judg{{"q", {"rel"}}};
    auto base = make_list("q", {{"rel", 0.9},
                                {"a", 0.8},
                                {"b", 0.7},
                                {"c", 0.6},
                                {"d", 0.5},
                                {"e", 0.4},
                                {"f", 0.3}});
    auto permuted = base;
    std::swap(permuted.ranked[5], permuted.ranked[6]);  // below k = 5
    CHECK(ndcg_at_k({base}, judg, 5) == ndcg_at_k({permuted}, judg, 5));

    auto below1 = base;
    std::swap(below1.ranked[1], below1.ranked[3]);  // below rank 1
    CHECK(precision_at_1({base}, judg) == precision_at_1({below1}, judg));
}

TEST_CASE("metrics stay within [0, 1]") {
    Rng rng(1);
    std::map<std::string, std::set<std::string>> judg;
    std::vector<RankedList> lists;
    for (int q = 0; q < 20; ++q) {
        const std::string qid = "q" + std::to_string(q);
        std::vector<std::pair<std::string, double>> r;
        for (int d = 0; d < 10; ++d)
            r.emplace_back("d" + std::to_string(d), rng.gaussian());
        std::sort(r.begin(), r.end(),
                  [](const auto& a, const auto& b) { return a.second > b.second; });
        lists.push_back(make_list(qid, r));
        judg[qid] = {"d" + std::to_string(static_cast<int>(rng.uniform_below(10)))};
    }
    const double p = precision_at_1(lists, judg);
    const double n = ndcg_at_k(lists, judg, 5);
    CHECK((p >= 0.0 && p <= 1.0));
    CHECK((n >= 0.0 && n <= 1.0));
}

// ---- ranking ----

TEST_CASE("rank_by_cosine matches a brute-force nearest-neighbor scan") {
    Rng rng(2);
    const int d = 8, n_docs = 20, n_queries = 6;
    auto cfg = tiny_config();
    std::vector<std::pair<std::string, InterleavedSequence>> queries, pool;
    for (int i = 0; i < n_docs; ++i)
        pool.emplace_back("d" + std::to_string(100 + i), InterleavedSequence(1));
    for (int q = 0; q < n_queries; ++q)
        queries.emplace_back("q" + std::to_string(q), InterleavedSequence(1));
    const auto qe = random_embeddings(n_queries, d, rng);
    const auto pe = random_embeddings(n_docs, d, rng);

    const auto lists = rank_by_cosine(queries, qe, pool, pe);
    for (int q = 0; q < n_queries; ++q) {
        // independent scan for the best doc
        int best = 0;
        double best_cos = -2;
        for (int i = 0; i < n_docs; ++i) {
            double dot = 0, na = 0, nb = 0;
            for (int j = 0; j < d; ++j) {
                dot += qe[static_cast<size_t>(q)][static_cast<size_t>(j)] *
                       pe[static_cast<size_t>(i)][static_cast<size_t>(j)];
                na += qe[static_cast<size_t>(q)][static_cast<size_t>(j)] *
                      qe[static_cast<size_t>(q)][static_cast<size_t>(j)];
                nb += pe[static_cast<size_t>(i)][static_cast<size_t>(j)] *
                      pe[static_cast<size_t>(i)][static_cast<size_t>(j)];
            }
            const double c = dot / std::sqrt(na * nb);
            if (c > best_cos) {
                best_cos = c;
                best = i;
            }
        }
        CHECK(lists[static_cast<size_t>(q)].ranked.front().first == pool[static_cast<size_t>(best)].first);
        // scores in non-increasing order, ids unique
        const auto& r = lists[static_cast<size_t>(q)].ranked;
        for (size_t i = 1; i < r.size(); ++i) CHECK(r[i - 1].second >= r[i].second);
    }
}

TEST_CASE("exact ties break by ascending doc id") {
    std::vector<std::pair<std::string, InterleavedSequence>> queries{
        {"q", InterleavedSequence(1)}};
    std::vector<std::pair<std::string, InterleavedSequence>> pool{
        {"zz", InterleavedSequence(1)}, {"aa", InterleavedSequence(1)}};
    const std::vector<std::vector<double>> qe{{1.0, 0.0}};
    const std::vector<std::vector<double>> pe{{2.0, 0.0}, {3.0, 0.0}};  // both cos = 1
    const auto lists = rank_by_cosine(queries, qe, pool, pe);
    CHECK(lists[0].ranked[0].first == "aa");
    CHECK(lists[0].ranked[1].first == "zz");
}

TEST_CASE("model ranking: pool of one, self-retrieval, determinism") {
    auto cfg = tiny_config();
    auto params = BackboneParams<double>::random_init(cfg, 3);
    Rng rng(4);

    RetrievalTask one;
    one.name = "one";
    one.queries.emplace_back("q0", test::random_sequence(cfg, rng, 3, 0));
    one.pool.emplace_back("d0", test::random_sequence(cfg, rng, 2, 1, 4));
    one.judgments["q0"] = {"d0"};
    const auto lists = rank(one, params, EmbedMode::bidirectional_mean);
    CHECK(lists.size() == 1);
    CHECK(lists[0].ranked[0].first == "d0");

    // a pool doc identical to the query ranks first with cos = 1
    RetrievalTask self;
    self.name = "self";
    const auto probe = test::random_sequence(cfg, rng, 4, 1, 4);
    self.queries.emplace_back("q0", probe);
    self.pool.emplace_back("same", probe);
    for (int i = 0; i < 6; ++i)
        self.pool.emplace_back("other" + std::to_string(i), test::random_sequence(cfg, rng, 4, 1, 4));
    self.judgments["q0"] = {"same"};
    const auto sl = rank(self, params, EmbedMode::bidirectional_mean);
    CHECK(sl[0].ranked[0].first == "same");
    CHECK(sl[0].ranked[0].second == doctest::Approx(1.0).epsilon(1e-12));

    const auto task = tiny_task(cfg, rng, 5, 9);
    const auto a = rank(task, params, EmbedMode::bidirectional_mean);
    const auto b = rank(task, params, EmbedMode::bidirectional_mean);
    for (size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].ranked == b[i].ranked);
    }
}

TEST_CASE("empty pools and bad judgments are rejected") {
    auto cfg = tiny_config();
    auto params = BackboneParams<double>::random_init(cfg, 5);
    Rng rng(6);
    RetrievalTask task;
    task.queries.emplace_back("q0", test::random_sequence(cfg, rng, 3, 0));
    task.judgments["q0"] = {"missing"};
    CHECK_THROWS_AS(rank(task, params, EmbedMode::bidirectional_mean), input_error);

    task.pool.emplace_back("d0", test::random_sequence(cfg, rng, 3, 0));
    CHECK_THROWS_AS(task.validate(), data_error);  // judged doc not in pool
}

TEST_CASE("harness metrics equal a brute-force recomputation from raw embeddings") {
    auto cfg = tiny_config();
    auto params = BackboneParams<double>::random_init(cfg, 7);
    Rng rng(8);
    const auto task = tiny_task(cfg, rng, 12, 40);

    const auto lists = rank(task, params, EmbedMode::bidirectional_mean);
    const double p1 = precision_at_1(lists, task.judgments);
    const double n5 = ndcg_at_k(lists, task.judgments, 5);

    // independent path: embeddings -> cosines -> sort -> metrics, all inline
    const auto qe = embed_items(task.queries, params, EmbedMode::bidirectional_mean);
    const auto pe = embed_items(task.pool, params, EmbedMode::bidirectional_mean);
    int hits = 0;
    double ndcg_sum = 0;
    for (size_t q = 0; q < task.queries.size(); ++q) {
        std::vector<std::pair<std::string, double>> scored;
        for (size_t i = 0; i < task.pool.size(); ++i) {
            double dot = 0, na = 0, nb = 0;
            for (size_t j = 0; j < qe[q].size(); ++j) {
                dot += qe[q][j] * pe[i][j];
                na += qe[q][j] * qe[q][j];
                nb += pe[i][j] * pe[i][j];
            }
            scored.emplace_back(task.pool[i].first, dot / (std::sqrt(na) * std::sqrt(nb)));
        }
        std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        const auto& rel = task.judgments.at(task.queries[q].first);
        if (rel.count(scored[0].first)) ++hits;
        double dcg = 0;
        for (int r = 0; r < 5 && r < static_cast<int>(scored.size()); ++r)
            if (rel.count(scored[static_cast<size_t>(r)].first))
                dcg += 1.0 / std::log2(r + 2.0);
        double idcg = 0;
        for (int r = 0; r < 5 && r < static_cast<int>(rel.size()); ++r)
            idcg += 1.0 / std::log2(r + 2.0);
        ndcg_sum += dcg / idcg;
    }
    const double p1_oracle = static_cast<double>(hits) / static_cast<double>(task.queries.size());
    const double n5_oracle = ndcg_sum / static_cast<double>(task.queries.size());
    CHECK(std::abs(p1 - p1_oracle) < 1e-9);
    CHECK(std::abs(n5 - n5_oracle) < 1e-9);
}
