#pragma once

#include <algorithm>
#include <string>
#include <vector>

#include "xmodal/contrastive.hpp"
#include "xmodal/dataset.hpp"

namespace xmodal {

struct RankedList {
    std::string query_id;
    std::vector<std::pair<std::string, double>> ranked;  // (doc id, cosine), scores non-increasing
};

// Embeds a list of (id, sequence) items; sequences are processed in fixed
// groups of `group` per forward pass. Returns one d_model vector per item.
template <typename Real>
std::vector<std::vector<double>> embed_items(
    const std::vector<std::pair<std::string, InterleavedSequence>>& items,
    BackboneParams<Real>& params, EmbedMode mode, int group = 64) {
    std::vector<std::vector<double>> out;
    out.reserve(items.size());
    for (size_t at = 0; at < items.size(); at += static_cast<size_t>(group)) {
        const size_t end = std::min(items.size(), at + static_cast<size_t>(group));
        std::vector<InterleavedSequence> adjusted;
        adjusted.reserve(end - at);
        for (size_t i = at; i < end; ++i) {
            InterleavedSequence s = strip_padding(items[i].second);
            if (mode == EmbedMode::causal_eos && !s.ends_with_eos())
                s.append_token(special::kEos);
            s.validate(params.config.vocab_size);
            adjusted.push_back(std::move(s));
        }
        std::vector<const InterleavedSequence*> ptrs;
        for (const auto& s : adjusted) ptrs.push_back(&s);

        Graph<Real> g;
        const auto nb = bind_backbone(g, params);
        const PackedBatch packed = pack_batch(ptrs);
        const AttentionMode attn = mode == EmbedMode::bidirectional_mean
                                       ? AttentionMode::bidirectional
                                       : AttentionMode::causal;
        const int hidden = build_forward(g, packed, nb, params.config, attn);
        if (mode == EmbedMode::bidirectional_mean) {
            const int pooled = g.segment_mean_rows(hidden, packed.spans);
            const auto& v = g.value(pooled);
            for (Eigen::Index r = 0; r < v.rows(); ++r) {
                std::vector<double> e(static_cast<size_t>(v.cols()));
                for (Eigen::Index j = 0; j < v.cols(); ++j)
                    e[static_cast<size_t>(j)] = static_cast<double>(v(r, j));
                out.push_back(std::move(e));
            }
        } else {
            const auto& v = g.value(hidden);
            for (const auto& [b, e] : packed.spans) {
                std::vector<double> emb(static_cast<size_t>(v.cols()));
                for (Eigen::Index j = 0; j < v.cols(); ++j)
                    emb[static_cast<size_t>(j)] = static_cast<double>(v(e - 1, j));
                out.push_back(std::move(emb));
            }
        }
    }
    return out;
}

double cosine_double(const std::vector<double>& a, const std::vector<double>& b);

// Ranks every pool document for every query by cosine similarity of the
// embeddings; ties broken by ascending doc id for reproducibility.
std::vector<RankedList> rank_by_cosine(
    const std::vector<std::pair<std::string, InterleavedSequence>>& queries,
    const std::vector<std::vector<double>>& query_embs,
    const std::vector<std::pair<std::string, InterleavedSequence>>& pool,
    const std::vector<std::vector<double>>& pool_embs);

template <typename Real>
std::vector<RankedList> rank(const RetrievalTask& task, BackboneParams<Real>& params,
                             EmbedMode mode) {
    if (task.pool.empty()) throw input_error("retrieval task with an empty candidate pool");
    task.validate();
    const auto query_embs = embed_items(task.queries, params, mode);
    const auto pool_embs = embed_items(task.pool, params, mode);
    return rank_by_cosine(task.queries, query_embs, task.pool, pool_embs);
}

// Fraction of queries whose rank-1 document is relevant.
double precision_at_1(const std::vector<RankedList>& lists,
                      const std::map<std::string, std::set<std::string>>& judgments);

// Binary-gain NDCG at cutoff k, averaged over queries. Queries without any
// relevant document are excluded with a warning.
double ndcg_at_k(const std::vector<RankedList>& lists,
                 const std::map<std::string, std::set<std::string>>& judgments, int k = 5);

struct TaskResult {
    std::string task;
    double p_at_1 = 0;
    double ndcg_at_5 = 0;
    int n_queries = 0;
};

}  // namespace xmodal
