#pragma once

#include <map>
#include <string>
#include <vector>

#include "xmodal/backbone.hpp"
#include "xmodal/optim.hpp"

namespace xmodal {

struct ClConfig {
    double tau = 0.03;
    double learning_rate = 1e-5;
    int batch_size = 64;
    int steps = 2000;
    bool dedup_in_batch = true;   // drop in-batch docs sharing the anchor's positive id
    bool drop_partial = false;    // trailing per-task batches are emitted by default
    bool task_batching = true;

    void validate() const {
        if (!(tau > 0.0)) throw config_error("tau must be positive");
        if (batch_size < 1 || steps < 0) throw config_error("cl batch_size/steps out of range");
        if (batch_size < 2)
            log_warn("contrastive batch_size < 2: in-batch negatives are degenerate");
    }
};

// Training tuple: query, positive document, hard negative documents.
struct ContrastiveInstance {
    std::string task_id;
    std::string query_id;
    std::string positive_id;
    std::vector<std::string> negative_ids;
    InterleavedSequence query;
    InterleavedSequence positive;
    std::vector<InterleavedSequence> negatives;

    void validate() const {
        if (task_id.empty()) throw input_error("instance without task_id");
        if (negatives.size() != negative_ids.size())
            throw input_error("negative ids do not match negatives");
        for (const auto& id : negative_ids)
            if (id == positive_id)
                throw input_error("hard negative shares the positive document id " + id);
    }
};

enum class EmbedMode { bidirectional_mean, causal_eos };

inline std::string to_string(EmbedMode m) {
    return m == EmbedMode::bidirectional_mean ? "bidirectional-mean" : "causal-eos";
}
inline EmbedMode embed_mode_from_string(const std::string& s) {
    if (s == "bidirectional-mean" || s == "bidirectional") return EmbedMode::bidirectional_mean;
    if (s == "causal-eos" || s == "causal") return EmbedMode::causal_eos;
    throw config_error("unknown embedding mode: " + s);
}

template <typename Real>
struct Embedding {
    Matrix<Real> vector;  // 1 x d_model
    EmbedMode mode = EmbedMode::bidirectional_mean;
};

// Mean of the hidden states over the real (non padding) positions under
// bidirectional attention. Right-padded batched forms are accepted; the
// padding never enters attention or the mean.
template <typename Real>
Embedding<Real> embed_bidirectional(const InterleavedSequence& seq, BackboneParams<Real>& params) {
    const InterleavedSequence real = strip_padding(seq);
    const Matrix<Real> h = forward_hidden(real, params, AttentionMode::bidirectional);
    Embedding<Real> e;
    e.mode = EmbedMode::bidirectional_mean;
    e.vector = h.colwise().sum() / Real(h.rows());
    return e;
}

// Hidden state at the trailing EOS token under causal attention; EOS is
// appended when the input does not already end with it.
template <typename Real>
Embedding<Real> embed_causal(const InterleavedSequence& seq, BackboneParams<Real>& params) {
    InterleavedSequence real = strip_padding(seq);
    if (!real.ends_with_eos()) real.append_token(special::kEos);
    const Matrix<Real> h = forward_hidden(real, params, AttentionMode::causal);
    Embedding<Real> e;
    e.mode = EmbedMode::causal_eos;
    e.vector = h.row(h.rows() - 1);
    return e;
}

template <typename Real>
Embedding<Real> embed_sequence(const InterleavedSequence& seq, BackboneParams<Real>& params,
                               EmbedMode mode) {
    return mode == EmbedMode::bidirectional_mean ? embed_bidirectional(seq, params)
                                                 : embed_causal(seq, params);
}

struct SimilarityValue {
    double cosine = 0;
    double log_phi = 0;  // cos / tau
    double phi = 0;      // exp(cos / tau)
};

template <typename Real>
SimilarityValue similarity(const Embedding<Real>& a, const Embedding<Real>& b, double tau) {
    if (!(tau > 0.0)) throw input_error("tau must be positive");
    const double na = a.vector.template cast<double>().norm();
    const double nb = b.vector.template cast<double>().norm();
    if (!(na > 0.0) || !(nb > 0.0)) throw input_error("cosine of a zero-norm vector");
    SimilarityValue s;
    s.cosine = a.vector.template cast<double>().cwiseProduct(b.vector.template cast<double>()).sum() /
               (na * nb);
    s.log_phi = s.cosine / tau;
    s.phi = std::exp(s.log_phi);
    return s;
}

// ---- loss ----

template <typename Real>
struct ClLossNodes {
    int loss = -1;       // scalar
    int cos = -1;        // B x M cosine matrix (queries x documents)
    int query_emb = -1;  // B x d
    int doc_emb = -1;    // M x d
    std::vector<int> positive_col;               // per instance
    std::vector<std::vector<int>> negative_cols; // per instance, own hard negatives
    std::vector<std::vector<int>> candidate_cols;  // per instance, softmax support
};

// InfoNCE-style objective: every query is scored against its positive, its
// own hard negatives, and the documents of the other instances in the batch
// (their positives and hard negatives). Documents of other instances whose id
// equals the anchor's positive id are dropped when dedup is on. Scores are
// cos/tau and the normalizer is evaluated with log-sum-exp.
template <typename Real>
ClLossNodes<Real> build_contrastive_loss(Graph<Real>& g, BackboneParams<Real>& params,
                                         const std::vector<const ContrastiveInstance*>& batch,
                                         double tau, bool dedup) {
    if (batch.empty()) throw input_error("empty contrastive batch");
    if (!(tau > 0.0)) throw input_error("tau must be positive");
    const int b_size = static_cast<int>(batch.size());

    std::vector<const InterleavedSequence*> seqs;
    ClLossNodes<Real> r;
    std::vector<std::string> doc_ids;
    std::vector<int> doc_owner;
    for (int i = 0; i < b_size; ++i) seqs.push_back(&batch[static_cast<size_t>(i)]->query);
    for (int i = 0; i < b_size; ++i) {
        const auto& z = *batch[static_cast<size_t>(i)];
        z.validate();
        r.positive_col.push_back(static_cast<int>(doc_ids.size()));
        seqs.push_back(&z.positive);
        doc_ids.push_back(z.positive_id);
        doc_owner.push_back(i);
        r.negative_cols.emplace_back();
        for (size_t k = 0; k < z.negatives.size(); ++k) {
            r.negative_cols.back().push_back(static_cast<int>(doc_ids.size()));
            seqs.push_back(&z.negatives[k]);
            doc_ids.push_back(z.negative_ids[k]);
            doc_owner.push_back(i);
        }
    }
    const int m_docs = static_cast<int>(doc_ids.size());

    const auto nb = bind_backbone(g, params);
    const PackedBatch packed = pack_batch(seqs);
    const int hidden = build_forward(g, packed, nb, params.config, AttentionMode::bidirectional);
    const int pooled = g.segment_mean_rows(hidden, packed.spans);

    std::vector<int> qrows(static_cast<size_t>(b_size)), drows(static_cast<size_t>(m_docs));
    for (int i = 0; i < b_size; ++i) qrows[static_cast<size_t>(i)] = i;
    for (int j = 0; j < m_docs; ++j) drows[static_cast<size_t>(j)] = b_size + j;
    r.query_emb = g.gather_rows(pooled, qrows);
    r.doc_emb = g.gather_rows(pooled, drows);
    r.cos = g.cosine_matrix(r.query_emb, r.doc_emb);
    const int scores = g.scale(r.cos, static_cast<Real>(1.0 / tau));

    std::vector<std::pair<int, int>> pos_entries;
    for (int i = 0; i < b_size; ++i) {
        const auto& z = *batch[static_cast<size_t>(i)];
        std::vector<int> cols;
        cols.push_back(r.positive_col[static_cast<size_t>(i)]);
        for (int c : r.negative_cols[static_cast<size_t>(i)]) cols.push_back(c);
        for (int j = 0; j < m_docs; ++j) {
            if (doc_owner[static_cast<size_t>(j)] == i) continue;
            if (dedup && doc_ids[static_cast<size_t>(j)] == z.positive_id) continue;
            cols.push_back(j);
        }
        r.candidate_cols.push_back(std::move(cols));
        pos_entries.emplace_back(i, r.positive_col[static_cast<size_t>(i)]);
    }

    const int lse = g.masked_lse_rows(scores, r.candidate_cols);
    const int pos = g.gather_entries(scores, pos_entries);
    r.loss = g.mean_all(g.sub(lse, pos));
    return r;
}

// Scalar batch loss (spec operation).
template <typename Real>
double contrastive_loss(const std::vector<const ContrastiveInstance*>& batch,
                        BackboneParams<Real>& params, double tau, bool dedup = true) {
    Graph<Real> g;
    const auto nodes = build_contrastive_loss(g, params, batch, tau, dedup);
    return static_cast<double>(g.scalar(nodes.loss));
}

// ---- batching ----

struct InstanceBatch {
    std::vector<int> indices;
    std::string task_id;
    bool partial = false;
};

// Single-task batches: instances are grouped by task_id, shuffled within the
// task, cut into batches, and the batch order is shuffled across tasks. Every
// instance appears exactly once per epoch; trailing partial batches are
// flagged and either emitted or dropped.
template <typename Instance>
std::vector<InstanceBatch> task_aware_batches(const std::vector<Instance>& data, int batch_size,
                                              Rng& rng, bool drop_partial = false) {
    if (batch_size < 1) throw config_error("batch_size must be >= 1");
    if (batch_size < 2) log_warn("batch_size < 2: in-batch negatives are degenerate");
    std::map<std::string, std::vector<int>> by_task;
    for (size_t i = 0; i < data.size(); ++i) {
        if (data[i].task_id.empty()) throw input_error("instance without task_id");
        by_task[data[i].task_id].push_back(static_cast<int>(i));
    }
    std::vector<InstanceBatch> batches;
    for (auto& [task, idx] : by_task) {
        rng.shuffle(idx);
        for (size_t at = 0; at < idx.size(); at += static_cast<size_t>(batch_size)) {
            InstanceBatch b;
            b.task_id = task;
            const size_t end = std::min(idx.size(), at + static_cast<size_t>(batch_size));
            b.indices.assign(idx.begin() + static_cast<std::ptrdiff_t>(at),
                             idx.begin() + static_cast<std::ptrdiff_t>(end));
            b.partial = b.indices.size() < static_cast<size_t>(batch_size);
            if (b.partial && drop_partial) continue;
            batches.push_back(std::move(b));
        }
    }
    rng.shuffle(batches);
    return batches;
}

// Plain shuffled batching (task-aware batching toggled off): batches may mix
// tasks.
template <typename Instance>
std::vector<InstanceBatch> shuffled_batches(const std::vector<Instance>& data, int batch_size,
                                            Rng& rng, bool drop_partial = false) {
    if (batch_size < 1) throw config_error("batch_size must be >= 1");
    std::vector<int> idx(data.size());
    for (size_t i = 0; i < data.size(); ++i) idx[i] = static_cast<int>(i);
    rng.shuffle(idx);
    std::vector<InstanceBatch> batches;
    for (size_t at = 0; at < idx.size(); at += static_cast<size_t>(batch_size)) {
        InstanceBatch b;
        b.task_id = "mixed";
        const size_t end = std::min(idx.size(), at + static_cast<size_t>(batch_size));
        b.indices.assign(idx.begin() + static_cast<std::ptrdiff_t>(at),
                         idx.begin() + static_cast<std::ptrdiff_t>(end));
        b.partial = b.indices.size() < static_cast<size_t>(batch_size);
        if (b.partial && drop_partial) continue;
        batches.push_back(std::move(b));
    }
    return batches;
}

// ---- training ----

template <typename Real>
struct ClState {
    BackboneParams<Real> backbone;
    AdamOptimizer<Real> optimizer;
    ClConfig config;
    int64_t step = 0;

    static ClState init(const BackboneConfig& bc, const ClConfig& cc, uint64_t seed) {
        bc.validate();
        cc.validate();
        ClState s;
        s.backbone = BackboneParams<Real>::random_init(bc, derive_seed(seed, "backbone-init"));
        s.optimizer = AdamOptimizer<Real>(cc.learning_rate);
        s.config = cc;
        return s;
    }
};

struct ClStepMetrics {
    int64_t step = 0;
    double loss = 0;
    double mean_cos_positive = 0;
    double mean_cos_negative = 0;  // over the instances' own hard negatives
    double grad_norm = 0;
};

template <typename Real>
ClStepMetrics cl_train_step(ClState<Real>& state,
                            const std::vector<const ContrastiveInstance*>& batch) {
    auto params = state.backbone.registry();
    zero_gradients(params);
    Graph<Real> g;
    const auto nodes =
        build_contrastive_loss(g, state.backbone, batch, state.config.tau, state.config.dedup_in_batch);

    ClStepMetrics m;
    m.loss = static_cast<double>(g.scalar(nodes.loss));
    if (!std::isfinite(m.loss)) {
        std::string ids;
        for (const auto* z : batch) ids += " " + z->query_id;
        throw numeric_error("non-finite contrastive loss on batch of queries:" + ids);
    }
    const auto& cos = g.value(nodes.cos);
    double pos_sum = 0, neg_sum = 0;
    int neg_count = 0;
    for (size_t i = 0; i < batch.size(); ++i) {
        pos_sum += static_cast<double>(
            cos(static_cast<Eigen::Index>(i), nodes.positive_col[i]));
        for (int c : nodes.negative_cols[i]) {
            neg_sum += static_cast<double>(cos(static_cast<Eigen::Index>(i), c));
            ++neg_count;
        }
    }
    m.mean_cos_positive = pos_sum / static_cast<double>(batch.size());
    m.mean_cos_negative = neg_count > 0 ? neg_sum / neg_count : 0.0;

    g.backward(nodes.loss);
    m.grad_norm = gradient_norm(params);
    if (!std::isfinite(m.grad_norm)) throw numeric_error("non-finite contrastive gradient norm");
    state.optimizer.step(params);
    state.step += 1;
    m.step = state.step;
    return m;
}

}  // namespace xmodal
