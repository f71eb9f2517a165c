#include "xmodal/evalharness.hpp"

#include <cmath>

namespace xmodal {

double cosine_double(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size()) throw input_error("cosine dimension mismatch");
    double dot = 0, na = 0, nb = 0;
    for (size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    if (!(na > 0.0) || !(nb > 0.0)) throw input_error("cosine of a zero-norm vector");
    return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<RankedList> rank_by_cosine(
    const std::vector<std::pair<std::string, InterleavedSequence>>& queries,
    const std::vector<std::vector<double>>& query_embs,
    const std::vector<std::pair<std::string, InterleavedSequence>>& pool,
    const std::vector<std::vector<double>>& pool_embs) {
    if (queries.size() != query_embs.size() || pool.size() != pool_embs.size())
        throw input_error("embedding count mismatch");
    std::vector<RankedList> lists;
    lists.reserve(queries.size());
    for (size_t q = 0; q < queries.size(); ++q) {
        RankedList rl;
        rl.query_id = queries[q].first;
        rl.ranked.reserve(pool.size());
        for (size_t d = 0; d < pool.size(); ++d)
            rl.ranked.emplace_back(pool[d].first, cosine_double(query_embs[q], pool_embs[d]));
        std::sort(rl.ranked.begin(), rl.ranked.end(), [](const auto& x, const auto& y) {
            if (x.second != y.second) return x.second > y.second;
            return x.first < y.first;
        });
        lists.push_back(std::move(rl));
    }
    return lists;
}

double precision_at_1(const std::vector<RankedList>& lists,
                      const std::map<std::string, std::set<std::string>>& judgments) {
    if (lists.empty()) throw input_error("precision_at_1 over no queries");
    int hits = 0;
    for (const auto& rl : lists) {
        if (rl.ranked.empty()) throw input_error("empty ranked list for query " + rl.query_id);
        auto it = judgments.find(rl.query_id);
        if (it == judgments.end())
            throw data_error("missing judgments for query " + rl.query_id);
        if (it->second.count(rl.ranked.front().first)) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(lists.size());
}

double ndcg_at_k(const std::vector<RankedList>& lists,
                 const std::map<std::string, std::set<std::string>>& judgments, int k) {
    if (k < 1) throw input_error("ndcg cutoff must be >= 1");
    if (lists.empty()) throw input_error("ndcg over no queries");
    double sum = 0;
    int counted = 0;
    for (const auto& rl : lists) {
        auto it = judgments.find(rl.query_id);
        if (it == judgments.end())
            throw data_error("missing judgments for query " + rl.query_id);
        const auto& rel = it->second;
        if (rel.empty()) {
            log_warn("query " + rl.query_id + " has no relevant documents; excluded from NDCG");
            continue;
        }
        double dcg = 0;
        const int top = std::min<int>(k, static_cast<int>(rl.ranked.size()));
        for (int r = 0; r < top; ++r)
            if (rel.count(rl.ranked[static_cast<size_t>(r)].first))
                dcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
        double idcg = 0;
        const int ideal = std::min<int>(k, static_cast<int>(rel.size()));
        for (int r = 0; r < ideal; ++r) idcg += 1.0 / std::log2(static_cast<double>(r) + 2.0);
        sum += dcg / idcg;
        ++counted;
    }
    return counted > 0 ? sum / counted : 0.0;
}

}  // namespace xmodal
