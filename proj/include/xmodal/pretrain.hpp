#pragma once

#include <algorithm>
#include <optional>
#include <vector>

#include "xmodal/backbone.hpp"
#include "xmodal/optim.hpp"

namespace xmodal {

// Raised when a sequence has no maskable text position. Callers that stream
// corpora catch it and skip the MLM term for that sequence.
struct mask_error : std::runtime_error {
    explicit mask_error(const std::string& msg) : std::runtime_error(msg) {}
};

struct CptConfig {
    double p_mlm = 0.4;
    double r_mae = 0.5;
    double loss_weight = 0.5;  // w in L = L_mlm + w * L_mae
    double learning_rate = 2e-6;
    int steps = 500;
    int batch_size = 16;
    int workers = 4;  // logical workers for cost-balanced packing
    bool mlm_on = true;
    bool mae_on = true;
    bool tie_mlm_head = false;

    void validate() const {
        if (!(p_mlm > 0.0 && p_mlm < 1.0)) throw config_error("p_mlm must be in (0, 1)");
        if (!(r_mae >= 0.0 && r_mae < 1.0)) throw config_error("r_mae must be in [0, 1)");
        if (loss_weight < 0.0) throw config_error("loss weight w must be >= 0");
        if (steps < 0 || batch_size < 1 || workers < 1)
            throw config_error("cpt steps/batch_size/workers out of range");
    }
};

struct MaskPlan {
    std::vector<int> mlm_indices;  // ascending text positions
    std::vector<int> mae_indices;  // ascending image-patch positions
    uint64_t rng_seed = 0;
};

// Corrupted input plus the targets it was derived from.
struct MaskedSequence {
    InterleavedSequence corrupted;
    InterleavedSequence original;
    MaskPlan plan;
};

inline bool mlm_maskable(const InterleavedSequence& seq, int i) {
    return i > 0 && seq.is_text(i) && seq.token_at(i) >= special::kFirstFree;
}

// Independent Bernoulli(p_mlm) over eligible text positions (never position
// 0, never special tokens). An empty draw is resampled a bounded number of
// times, then one eligible position is forced (unless force_nonempty is off).
inline std::vector<int> sample_mlm_mask(const InterleavedSequence& seq, double p_mlm, Rng& rng,
                                        bool force_nonempty = true) {
    std::vector<int> eligible;
    for (int i = 0; i < seq.length(); ++i)
        if (mlm_maskable(seq, i)) eligible.push_back(i);
    if (eligible.empty()) throw mask_error("no maskable text position in sequence");

    constexpr int kMaxRetries = 16;
    for (int attempt = 0; attempt <= kMaxRetries; ++attempt) {
        std::vector<int> picked;
        for (int i : eligible)
            if (rng.bernoulli(p_mlm)) picked.push_back(i);
        if (!picked.empty()) return picked;
        if (!force_nonempty || p_mlm <= 0.0) return picked;
    }
    return {eligible[static_cast<size_t>(rng.uniform_below(eligible.size()))]};
}

// Exact-count sampling: per image with P patches, floor(r_mae * P) distinct
// patches chosen uniformly. Sequences without images yield an empty set.
inline std::vector<int> sample_mae_mask(const InterleavedSequence& seq, double r_mae, Rng& rng) {
    std::vector<int> picked;
    for (const auto& [begin, end] : seq.image_spans()) {
        const int p = end - begin;
        const int k = static_cast<int>(r_mae * p);
        if (k <= 0) continue;
        for (int off : rng.sample_without_replacement(p, k)) picked.push_back(begin + off);
    }
    std::sort(picked.begin(), picked.end());
    return picked;
}

inline MaskPlan make_mask_plan(const InterleavedSequence& seq, double p_mlm, double r_mae,
                               uint64_t seed) {
    MaskPlan plan;
    plan.rng_seed = seed;
    Rng rng(seed);
    try {
        plan.mlm_indices = sample_mlm_mask(seq, p_mlm, rng);
        std::sort(plan.mlm_indices.begin(), plan.mlm_indices.end());
    } catch (const mask_error&) {
        // no maskable text; the sequence still participates through MAE
    }
    plan.mae_indices = sample_mae_mask(seq, r_mae, rng);
    return plan;
}

// Replaces MLM positions with the mask token and MAE positions with fresh
// unit-Gaussian patch vectors; everything else stays bit-identical.
inline MaskedSequence apply_masks(const InterleavedSequence& seq, const MaskPlan& plan, Rng& rng) {
    MaskedSequence ms;
    ms.original = seq;
    ms.corrupted = seq;
    ms.plan = plan;
    for (int i : plan.mlm_indices) {
        if (i < 0 || i >= seq.length() || !seq.is_text(i))
            throw input_error("MLM mask index " + std::to_string(i) + " is not a text position");
        ms.corrupted.set_token(i, special::kMask);
    }
    std::vector<double> noise(static_cast<size_t>(seq.d_patch()));
    for (int i : plan.mae_indices) {
        if (i < 0 || i >= seq.length() || !seq.is_image(i))
            throw input_error("MAE mask index " + std::to_string(i) + " is not an image position");
        for (auto& v : noise) v = rng.gaussian();
        ms.corrupted.set_patch(i, noise);
    }
    return ms;
}

// ---- heads ----

template <typename Real>
struct MlmHead {
    bool tied = false;         // when tied, logits use the token embedding table
    TensorSlot<Real> weight;   // d_model x V (empty when tied)
    TensorSlot<Real> bias;     // 1 x V

    static MlmHead random_init(const BackboneConfig& cfg, uint64_t seed, bool tie = false) {
        MlmHead h;
        h.tied = tie;
        Rng rng(seed);
        if (!tie)
            h.weight = BackboneParams<Real>::make_weight("mlm_head.weight", cfg.d_model,
                                                         cfg.vocab_size, rng);
        h.bias = BackboneParams<Real>::make_zeros("mlm_head.bias", 1, cfg.vocab_size);
        return h;
    }

    std::vector<TensorSlot<Real>*> registry() {
        std::vector<TensorSlot<Real>*> r;
        if (!tied) r.push_back(&weight);
        r.push_back(&bias);
        return r;
    }
};

// Shallow bidirectional transformer over the backbone hidden states plus a
// linear map back to patch space.
template <typename Real>
struct MaeDecoder {
    static constexpr int kLayers = 2;
    std::vector<TransformerLayerParams<Real>> layers;
    TensorSlot<Real> final_ln_gamma, final_ln_beta;
    TensorSlot<Real> out_w;  // d_model x d_patch
    TensorSlot<Real> out_b;  // 1 x d_patch

    static MaeDecoder random_init(const BackboneConfig& cfg, uint64_t seed) {
        MaeDecoder d;
        Rng rng(seed);
        for (int l = 0; l < kLayers; ++l)
            d.layers.push_back(BackboneParams<Real>::init_layer(
                "mae_decoder.layers." + std::to_string(l) + ".", cfg.d_model, cfg.d_ff, rng));
        d.final_ln_gamma = BackboneParams<Real>::make_ones("mae_decoder.final_ln.gamma", 1, cfg.d_model);
        d.final_ln_beta = BackboneParams<Real>::make_zeros("mae_decoder.final_ln.beta", 1, cfg.d_model);
        d.out_w = BackboneParams<Real>::make_weight("mae_decoder.out.weight", cfg.d_model,
                                                    cfg.d_patch, rng);
        d.out_b = BackboneParams<Real>::make_zeros("mae_decoder.out.bias", 1, cfg.d_patch);
        return d;
    }

    std::vector<TensorSlot<Real>*> registry() {
        std::vector<TensorSlot<Real>*> r;
        for (auto& L : layers)
            for (TensorSlot<Real>* s : BackboneParams<Real>::layer_registry(L)) r.push_back(s);
        r.push_back(&final_ln_gamma);
        r.push_back(&final_ln_beta);
        r.push_back(&out_w);
        r.push_back(&out_b);
        return r;
    }
};

// ---- loss builders ----
// Losses follow the mean reduction: each sequence contributes the mean over
// its masked elements, and a batch of B sequences contributes 1/B of each
// per-sequence loss (absent terms count as zero).

template <typename Real>
struct MlmLossNodes {
    int loss = -1;    // scalar node, -1 when no sequence had an MLM mask
    int logits = -1;  // n_masked x V, rows in batch order then ascending position
    std::vector<int> targets;
    bool empty = true;
};

// hidden must come from a bidirectional forward over the corrupted batch.
// The masked token at position i is predicted from hidden row i-1 (labels
// shifted to match autoregressive convention), so position 0 is never masked.
template <typename Real>
MlmLossNodes<Real> build_mlm_loss(Graph<Real>& g, int hidden, const PackedBatch& batch,
                                  const std::vector<const MaskedSequence*>& seqs,
                                  MlmHead<Real>& head, int head_weight_or_table_node,
                                  int head_bias_node, int batch_denominator) {
    MlmLossNodes<Real> r;
    std::vector<int> shifted_rows;
    std::vector<Real> weights;
    for (size_t s = 0; s < seqs.size(); ++s) {
        const auto& plan = seqs[s]->plan;
        if (plan.mlm_indices.empty()) continue;
        const int offset = batch.spans[s].first;
        const Real w = Real(1) / (Real(plan.mlm_indices.size()) * Real(batch_denominator));
        for (int i : plan.mlm_indices) {
            if (i <= 0) throw input_error("MLM mask at position 0 has no preceding state");
            shifted_rows.push_back(offset + i - 1);
            r.targets.push_back(seqs[s]->original.token_at(i));
            weights.push_back(w);
        }
    }
    if (shifted_rows.empty()) return r;

    const int states = g.gather_rows(hidden, shifted_rows);
    const int logits = head.tied
                           ? g.add_row_broadcast(g.matmul_nt(states, head_weight_or_table_node),
                                                 head_bias_node)
                           : g.add_row_broadcast(g.matmul(states, head_weight_or_table_node),
                                                 head_bias_node);
    const int ce = g.cross_entropy_rows(logits, r.targets);
    r.loss = g.weighted_sum(ce, weights);
    r.logits = logits;
    r.empty = false;
    return r;
}

template <typename Real>
struct MaeLossNodes {
    int loss = -1;         // scalar node, -1 when no sequence had an MAE mask
    int predictions = -1;  // n_masked x d_patch, batch order then ascending position
    Matrix<Real> targets;  // same layout
    bool empty = true;
};

template <typename Real>
struct MaeDecoderNodes {
    std::vector<typename BackboneNodes<Real>::Layer> layers;
    int final_ln_g, final_ln_b, out_w, out_b;
};

template <typename Real>
MaeDecoderNodes<Real> bind_mae_decoder(Graph<Real>& g, MaeDecoder<Real>& d) {
    MaeDecoderNodes<Real> n;
    for (auto& L : d.layers) n.layers.push_back(bind_layer(g, L));
    n.final_ln_g = g.param(d.final_ln_gamma);
    n.final_ln_b = g.param(d.final_ln_beta);
    n.out_w = g.param(d.out_w);
    n.out_b = g.param(d.out_b);
    return n;
}

// Decoder runs bidirectionally over the full hidden sequence; the loss is the
// mean squared error over masked patches only, against the original patches.
template <typename Real>
MaeLossNodes<Real> build_mae_loss(Graph<Real>& g, int hidden, const PackedBatch& batch,
                                  const std::vector<const MaskedSequence*>& seqs,
                                  const MaeDecoderNodes<Real>& dec, int n_heads,
                                  int batch_denominator) {
    MaeLossNodes<Real> r;
    std::vector<int> masked_rows;
    std::vector<Real> weights;
    std::vector<std::pair<size_t, int>> origin;
    for (size_t s = 0; s < seqs.size(); ++s) {
        const auto& plan = seqs[s]->plan;
        if (plan.mae_indices.empty()) continue;
        const int offset = batch.spans[s].first;
        const int d_patch = seqs[s]->original.d_patch();
        const Real w = Real(1) / (Real(plan.mae_indices.size()) * Real(d_patch) *
                                  Real(batch_denominator));
        for (int i : plan.mae_indices) {
            masked_rows.push_back(offset + i);
            weights.push_back(w);
            origin.emplace_back(s, i);
        }
    }
    if (masked_rows.empty()) return r;

    const auto ranges = make_attention_ranges(batch, AttentionMode::bidirectional);
    int x = hidden;
    for (const auto& L : dec.layers) x = build_transformer_layer(g, x, L, ranges, n_heads);
    x = g.layer_norm(x, dec.final_ln_g, dec.final_ln_b, static_cast<Real>(kLayerNormEps));
    const int pred_all = g.add_row_broadcast(g.matmul(x, dec.out_w), dec.out_b);
    const int pred = g.gather_rows(pred_all, masked_rows);

    const int d_patch = static_cast<int>(g.value(pred).cols());
    Matrix<Real> targets(static_cast<Eigen::Index>(masked_rows.size()), d_patch);
    for (size_t m = 0; m < origin.size(); ++m) {
        const auto [s, i] = origin[m];
        const auto pv = seqs[s]->original.patch_at(i);
        for (int j = 0; j < d_patch; ++j)
            targets(static_cast<Eigen::Index>(m), j) = static_cast<Real>(pv[static_cast<size_t>(j)]);
    }
    r.targets = targets;
    const int diff = g.sub(pred, g.input(std::move(targets)));
    const int sq = g.hadamard(diff, diff);
    r.loss = g.weighted_sum(g.row_sum(sq), weights);
    r.predictions = pred;
    r.empty = false;
    return r;
}

template <typename Real>
struct CptLossNodes {
    int hidden = -1;  // the single bidirectional forward both heads consume
    int total = -1;   // scalar node
    MlmLossNodes<Real> mlm;
    MaeLossNodes<Real> mae;
};

// Joint stage-1 objective L = L_mlm + w * L_mae. Both terms are computed
// from one bidirectional forward pass over the same corrupted input, which
// carries masked text tokens and masked image patches together.
template <typename Real>
CptLossNodes<Real> build_cpt_loss(Graph<Real>& g, BackboneParams<Real>& backbone,
                                  MlmHead<Real>& head, MaeDecoder<Real>& decoder,
                                  const std::vector<const MaskedSequence*>& seqs, double w,
                                  bool mlm_on = true, bool mae_on = true) {
    if (seqs.empty()) throw input_error("empty pre-training batch");
    const auto nb = bind_backbone(g, backbone);
    std::vector<const InterleavedSequence*> corrupted;
    for (const auto* s : seqs) corrupted.push_back(&s->corrupted);
    const PackedBatch batch = pack_batch(corrupted);

    CptLossNodes<Real> r;
    r.hidden = build_forward(g, batch, nb, backbone.config, AttentionMode::bidirectional);
    const int denom = static_cast<int>(seqs.size());

    std::optional<int> total;
    if (mlm_on) {
        const int hw = head.tied ? nb.token_embedding : g.param(head.weight);
        const int hb = g.param(head.bias);
        r.mlm = build_mlm_loss(g, r.hidden, batch, seqs, head, hw, hb, denom);
        if (!r.mlm.empty) total = r.mlm.loss;
    }
    if (mae_on) {
        const auto dn = bind_mae_decoder(g, decoder);
        r.mae = build_mae_loss(g, r.hidden, batch, seqs, dn, backbone.config.n_heads, denom);
        if (!r.mae.empty) {
            const int scaled = g.scale(r.mae.loss, static_cast<Real>(w));
            total = total ? g.add(*total, scaled) : scaled;
        }
    }
    r.total = total ? *total : g.input(Matrix<Real>::Zero(1, 1));
    return r;
}

// ---- value-level wrappers (single sequence, spec operations) ----

template <typename Real>
struct MlmLossValue {
    Real loss = 0;
    Matrix<Real> logits;  // one row per masked position, ascending
    bool empty = true;
};

template <typename Real>
MlmLossValue<Real> mlm_loss(const Matrix<Real>& hidden, const MaskedSequence& ms,
                            MlmHead<Real>& head, TensorSlot<Real>* tied_table = nullptr) {
    Graph<Real> g;
    const int h = g.input(hidden);
    PackedBatch batch = pack_batch({&ms.corrupted});
    const int hw = head.tied ? g.param(*tied_table) : g.param(head.weight);
    const int hb = g.param(head.bias);
    const auto nodes = build_mlm_loss(g, h, batch, {&ms}, head, hw, hb, 1);
    MlmLossValue<Real> v;
    v.empty = nodes.empty;
    if (!nodes.empty) {
        v.loss = g.scalar(nodes.loss);
        v.logits = g.value(nodes.logits);
    }
    return v;
}

template <typename Real>
struct MaeLossValue {
    Real loss = 0;
    Matrix<Real> predictions;  // one row per masked patch, ascending
    Matrix<Real> targets;
    bool empty = true;
};

template <typename Real>
MaeLossValue<Real> mae_loss(const Matrix<Real>& hidden, const MaskedSequence& ms,
                            MaeDecoder<Real>& decoder, int n_heads) {
    Graph<Real> g;
    const int h = g.input(hidden);
    PackedBatch batch = pack_batch({&ms.corrupted});
    const auto dn = bind_mae_decoder(g, decoder);
    const auto nodes = build_mae_loss(g, h, batch, {&ms}, dn, n_heads, 1);
    MaeLossValue<Real> v;
    v.empty = nodes.empty;
    if (!nodes.empty) {
        v.loss = g.scalar(nodes.loss);
        v.predictions = g.value(nodes.predictions);
        v.targets = nodes.targets;
    }
    return v;
}

// Scalar stage-1 loss of one sequence (forward pass included).
template <typename Real>
Real cpt_loss(const MaskedSequence& ms, BackboneParams<Real>& backbone, MlmHead<Real>& head,
              MaeDecoder<Real>& decoder, double w) {
    Graph<Real> g;
    const auto nodes = build_cpt_loss(g, backbone, head, decoder, {&ms}, w);
    return g.scalar(nodes.total);
}

// ---- training ----

template <typename Real>
struct CptState {
    BackboneParams<Real> backbone;
    MlmHead<Real> head;
    MaeDecoder<Real> decoder;
    AdamOptimizer<Real> optimizer;
    CptConfig config;
    int64_t step = 0;

    static CptState init(const BackboneConfig& bc, const CptConfig& cc, uint64_t seed) {
        bc.validate();
        cc.validate();
        CptState s;
        s.backbone = BackboneParams<Real>::random_init(bc, derive_seed(seed, "backbone-init"));
        s.head = MlmHead<Real>::random_init(bc, derive_seed(seed, "mlm-head-init"), cc.tie_mlm_head);
        s.decoder = MaeDecoder<Real>::random_init(bc, derive_seed(seed, "mae-decoder-init"));
        s.optimizer = AdamOptimizer<Real>(cc.learning_rate);
        s.config = cc;
        return s;
    }

    std::vector<TensorSlot<Real>*> registry() {
        auto r = backbone.registry();
        for (auto* p : head.registry()) r.push_back(p);
        for (auto* p : decoder.registry()) r.push_back(p);
        return r;
    }
};

struct CptStepMetrics {
    int64_t step = 0;
    double loss = 0;
    double loss_mlm = 0;
    double loss_mae = 0;
    double grad_norm = 0;
    double lr = 0;
};

// One optimizer step on the mean batch loss. `bins` optionally partitions the
// batch into logical-worker micro-batches executed sequentially; gradients
// are mathematically identical to the single-bin case.
template <typename Real>
CptStepMetrics cpt_train_step(CptState<Real>& state,
                              const std::vector<const MaskedSequence*>& batch,
                              const std::vector<std::vector<int>>* bins = nullptr) {
    if (batch.empty()) throw input_error("empty pre-training batch");
    auto params = state.registry();
    zero_gradients(params);

    std::vector<std::vector<int>> single;
    if (bins == nullptr) {
        single.emplace_back();
        for (size_t i = 0; i < batch.size(); ++i) single.back().push_back(static_cast<int>(i));
        bins = &single;
    }

    const int denom = static_cast<int>(batch.size());
    double loss = 0, loss_mlm = 0, loss_mae = 0;
    for (const auto& bin : *bins) {
        if (bin.empty()) continue;
        std::vector<const MaskedSequence*> part;
        for (int i : bin) part.push_back(batch[static_cast<size_t>(i)]);
        Graph<Real> g;
        const auto nb = bind_backbone(g, state.backbone);
        std::vector<const InterleavedSequence*> corrupted;
        for (const auto* s : part) corrupted.push_back(&s->corrupted);
        const PackedBatch packed = pack_batch(corrupted);
        const int hidden = build_forward(g, packed, nb, state.backbone.config,
                                         AttentionMode::bidirectional);
        std::optional<int> total;
        if (state.config.mlm_on) {
            const int hw = state.head.tied ? nb.token_embedding : g.param(state.head.weight);
            const int hb = g.param(state.head.bias);
            const auto mlm = build_mlm_loss(g, hidden, packed, part, state.head, hw, hb, denom);
            if (!mlm.empty) {
                total = mlm.loss;
                loss_mlm += static_cast<double>(g.scalar(mlm.loss));
            }
        }
        if (state.config.mae_on) {
            const auto dn = bind_mae_decoder(g, state.decoder);
            const auto mae = build_mae_loss(g, hidden, packed, part, dn,
                                            state.backbone.config.n_heads, denom);
            if (!mae.empty) {
                const double v = static_cast<double>(g.scalar(mae.loss));
                loss_mae += v;
                const int scaled = g.scale(mae.loss, static_cast<Real>(state.config.loss_weight));
                total = total ? g.add(*total, scaled) : scaled;
            }
        }
        if (!total) continue;
        const double part_loss = static_cast<double>(g.scalar(*total));
        if (!std::isfinite(part_loss)) {
            for (size_t i = 0; i < part.size(); ++i) {
                const Real one = cpt_loss(*part[i], state.backbone, state.head, state.decoder,
                                          state.config.loss_weight);
                if (!std::isfinite(static_cast<double>(one)))
                    throw numeric_error("non-finite pre-training loss in batch sequence " +
                                        std::to_string(bin[i]));
            }
            throw numeric_error("non-finite pre-training loss");
        }
        loss += part_loss;
        g.backward(*total);
    }

    CptStepMetrics m;
    m.grad_norm = gradient_norm(params);
    if (!std::isfinite(m.grad_norm)) throw numeric_error("non-finite gradient norm");
    state.optimizer.step(params);
    state.step += 1;
    m.step = state.step;
    m.loss = loss;
    m.loss_mlm = loss_mlm;
    m.loss_mae = loss_mae;
    m.lr = state.optimizer.learning_rate();
    return m;
}

}  // namespace xmodal
