#pragma once

#include <memory>
#include <string>
#include <vector>

#include "xmodal/autograd.hpp"
#include "xmodal/rng.hpp"
#include "xmodal/sequence.hpp"

namespace xmodal {

enum class AttentionMode { causal, bidirectional };

inline std::string to_string(AttentionMode m) {
    return m == AttentionMode::causal ? "causal" : "bidirectional";
}
inline AttentionMode attention_mode_from_string(const std::string& s) {
    if (s == "causal") return AttentionMode::causal;
    if (s == "bidirectional") return AttentionMode::bidirectional;
    throw config_error("unknown attention mode: " + s);
}

struct BackboneConfig {
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 4;
    int d_ff = 256;
    int vocab_size = 64;   // includes PAD/MASK/EOS
    int d_patch = 12;
    int max_t = 160;
    AttentionMode attention_mode = AttentionMode::bidirectional;
    int precision_bits = 32;  // 32 or 64

    void validate() const {
        if (d_model <= 0 || n_layers <= 0 || n_heads <= 0 || d_ff <= 0)
            throw config_error("backbone dimensions must be positive");
        if (d_model % n_heads != 0) throw config_error("d_model must be divisible by n_heads");
        if (vocab_size <= special::kFirstFree)
            throw config_error("vocab_size must exceed the reserved special ids");
        if (d_patch <= 0) throw config_error("d_patch must be positive");
        if (max_t < 1) throw config_error("max_t must be >= 1");
        if (precision_bits != 32 && precision_bits != 64)
            throw config_error("precision must be 32 or 64");
    }
};

constexpr double kLayerNormEps = 1e-5;

template <typename Real>
struct TransformerLayerParams {
    TensorSlot<Real> ln1_gamma, ln1_beta;
    TensorSlot<Real> wq, bq, wk, bk, wv, bv, wo, bo;
    TensorSlot<Real> ln2_gamma, ln2_beta;
    TensorSlot<Real> w1, b1, w2, b2;
};

// All trainable backbone tensors. Weight matrices are initialized from a
// Gaussian with std 0.02, biases to zero, layer-norm gains to one.
template <typename Real>
struct BackboneParams {
    BackboneConfig config;
    TensorSlot<Real> token_embedding;  // V x d
    TensorSlot<Real> patch_proj_w;     // D_patch x d
    TensorSlot<Real> patch_proj_b;     // 1 x d
    TensorSlot<Real> positional;       // max_t x d
    std::vector<TransformerLayerParams<Real>> layers;
    TensorSlot<Real> final_ln_gamma, final_ln_beta;

    static BackboneParams random_init(const BackboneConfig& cfg, uint64_t seed) {
        cfg.validate();
        BackboneParams p;
        p.config = cfg;
        Rng rng(seed);
        p.token_embedding = make_weight("backbone.token_embedding", cfg.vocab_size, cfg.d_model, rng);
        p.patch_proj_w = make_weight("backbone.patch_proj.weight", cfg.d_patch, cfg.d_model, rng);
        p.patch_proj_b = make_zeros("backbone.patch_proj.bias", 1, cfg.d_model);
        p.positional = make_weight("backbone.positional", cfg.max_t, cfg.d_model, rng);
        p.layers.resize(static_cast<size_t>(cfg.n_layers));
        for (int l = 0; l < cfg.n_layers; ++l)
            p.layers[static_cast<size_t>(l)] = init_layer(
                "backbone.layers." + std::to_string(l) + ".", cfg.d_model, cfg.d_ff, rng);
        p.final_ln_gamma = make_ones("backbone.final_ln.gamma", 1, cfg.d_model);
        p.final_ln_beta = make_zeros("backbone.final_ln.beta", 1, cfg.d_model);
        return p;
    }

    std::vector<TensorSlot<Real>*> registry() {
        std::vector<TensorSlot<Real>*> r{&token_embedding, &patch_proj_w, &patch_proj_b,
                                         &positional};
        for (auto& L : layers)
            for (TensorSlot<Real>* s : layer_registry(L)) r.push_back(s);
        r.push_back(&final_ln_gamma);
        r.push_back(&final_ln_beta);
        return r;
    }

    void zero_grads() {
        for (auto* s : registry()) s->zero_grad();
    }

    static TransformerLayerParams<Real> init_layer(const std::string& pre, int d_model, int d_ff,
                                                   Rng& rng) {
        TransformerLayerParams<Real> L;
        L.ln1_gamma = make_ones(pre + "ln1.gamma", 1, d_model);
        L.ln1_beta = make_zeros(pre + "ln1.beta", 1, d_model);
        L.wq = make_weight(pre + "attn.wq", d_model, d_model, rng);
        L.bq = make_zeros(pre + "attn.bq", 1, d_model);
        L.wk = make_weight(pre + "attn.wk", d_model, d_model, rng);
        L.bk = make_zeros(pre + "attn.bk", 1, d_model);
        L.wv = make_weight(pre + "attn.wv", d_model, d_model, rng);
        L.bv = make_zeros(pre + "attn.bv", 1, d_model);
        L.wo = make_weight(pre + "attn.wo", d_model, d_model, rng);
        L.bo = make_zeros(pre + "attn.bo", 1, d_model);
        L.ln2_gamma = make_ones(pre + "ln2.gamma", 1, d_model);
        L.ln2_beta = make_zeros(pre + "ln2.beta", 1, d_model);
        L.w1 = make_weight(pre + "ffn.w1", d_model, d_ff, rng);
        L.b1 = make_zeros(pre + "ffn.b1", 1, d_ff);
        L.w2 = make_weight(pre + "ffn.w2", d_ff, d_model, rng);
        L.b2 = make_zeros(pre + "ffn.b2", 1, d_model);
        return L;
    }

    static std::vector<TensorSlot<Real>*> layer_registry(TransformerLayerParams<Real>& L) {
        return {&L.ln1_gamma, &L.ln1_beta, &L.wq, &L.bq, &L.wk, &L.bk, &L.wv, &L.bv,
                &L.wo,        &L.bo,       &L.ln2_gamma, &L.ln2_beta, &L.w1, &L.b1, &L.w2, &L.b2};
    }

    static TensorSlot<Real> make_weight(std::string name, int rows, int cols, Rng& rng) {
        TensorSlot<Real> s;
        s.name = std::move(name);
        s.value.resize(rows, cols);
        for (Eigen::Index i = 0; i < s.value.rows(); ++i)
            for (Eigen::Index j = 0; j < s.value.cols(); ++j)
                s.value(i, j) = static_cast<Real>(rng.gaussian() * 0.02);
        s.grad = Matrix<Real>::Zero(rows, cols);
        return s;
    }
    static TensorSlot<Real> make_zeros(std::string name, int rows, int cols) {
        TensorSlot<Real> s;
        s.name = std::move(name);
        s.init_zero(rows, cols);
        return s;
    }
    static TensorSlot<Real> make_ones(std::string name, int rows, int cols) {
        TensorSlot<Real> s;
        s.name = std::move(name);
        s.value = Matrix<Real>::Ones(rows, cols);
        s.grad = Matrix<Real>::Zero(rows, cols);
        return s;
    }
};

// Row-concatenation of one or more sequences so a whole batch runs through
// the transformer as a single matrix. Attention windows keep each sequence
// local, so this is arithmetic-equivalent to per-sequence processing.
struct PackedBatch {
    int total_rows = 0;
    int d_patch = 0;
    std::vector<std::pair<int, int>> spans;  // per sequence [begin, end)
    std::vector<int> pos_in_seq;             // per packed row
    std::vector<int> text_rows;              // packed rows holding tokens
    std::vector<int> token_ids;              // parallel to text_rows
    std::vector<int> image_rows;             // packed rows holding patches
    std::vector<double> patch_values;        // row-major image_rows x d_patch
};

inline PackedBatch pack_batch(const std::vector<const InterleavedSequence*>& seqs) {
    PackedBatch b;
    for (const auto* s : seqs) {
        if (s->length() < 1) throw input_error("empty sequence in batch");
        const int begin = b.total_rows;
        if (b.d_patch == 0) b.d_patch = s->d_patch();
        for (int i = 0; i < s->length(); ++i) {
            b.pos_in_seq.push_back(i);
            if (s->is_text(i)) {
                b.text_rows.push_back(b.total_rows);
                b.token_ids.push_back(s->token_at(i));
            } else {
                if (s->d_patch() != b.d_patch)
                    throw input_error("patch dimension mismatch across batch");
                b.image_rows.push_back(b.total_rows);
                auto pv = s->patch_at(i);
                b.patch_values.insert(b.patch_values.end(), pv.begin(), pv.end());
            }
            ++b.total_rows;
        }
        b.spans.emplace_back(begin, b.total_rows);
    }
    return b;
}

// Node ids of the backbone parameters within one graph.
template <typename Real>
struct BackboneNodes {
    int token_embedding, patch_w, patch_b, positional;
    struct Layer {
        int ln1_g, ln1_b, wq, bq, wk, bk, wv, bv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;
    };
    std::vector<Layer> layers;
    int final_ln_g, final_ln_b;
};

template <typename Real>
typename BackboneNodes<Real>::Layer bind_layer(Graph<Real>& g, TransformerLayerParams<Real>& L) {
    typename BackboneNodes<Real>::Layer ln;
    ln.ln1_g = g.param(L.ln1_gamma);
    ln.ln1_b = g.param(L.ln1_beta);
    ln.wq = g.param(L.wq);
    ln.bq = g.param(L.bq);
    ln.wk = g.param(L.wk);
    ln.bk = g.param(L.bk);
    ln.wv = g.param(L.wv);
    ln.bv = g.param(L.bv);
    ln.wo = g.param(L.wo);
    ln.bo = g.param(L.bo);
    ln.ln2_g = g.param(L.ln2_gamma);
    ln.ln2_b = g.param(L.ln2_beta);
    ln.w1 = g.param(L.w1);
    ln.b1 = g.param(L.b1);
    ln.w2 = g.param(L.w2);
    ln.b2 = g.param(L.b2);
    return ln;
}

template <typename Real>
BackboneNodes<Real> bind_backbone(Graph<Real>& g, BackboneParams<Real>& p) {
    BackboneNodes<Real> n;
    n.token_embedding = g.param(p.token_embedding);
    n.patch_w = g.param(p.patch_proj_w);
    n.patch_b = g.param(p.patch_proj_b);
    n.positional = g.param(p.positional);
    for (auto& L : p.layers) n.layers.push_back(bind_layer(g, L));
    n.final_ln_g = g.param(p.final_ln_gamma);
    n.final_ln_b = g.param(p.final_ln_beta);
    return n;
}

// Input embedding: token rows from the embedding table, patch rows through
// the linear patch projection, learned positional embedding added to all.
template <typename Real>
int build_embed(Graph<Real>& g, const PackedBatch& b, const BackboneNodes<Real>& nb,
                const BackboneConfig& cfg) {
    for (int id : b.token_ids)
        if (id < 0 || id >= cfg.vocab_size)
            throw input_error("token id " + std::to_string(id) + " out of vocabulary range");
    if (b.d_patch != 0 && b.d_patch != cfg.d_patch && !b.image_rows.empty())
        throw input_error("patch dimension mismatch");
    for (int p : b.pos_in_seq)
        if (p >= cfg.max_t) throw input_error("sequence length exceeds max_t");

    std::vector<int> all_rows(static_cast<size_t>(b.total_rows));
    for (int i = 0; i < b.total_rows; ++i) all_rows[static_cast<size_t>(i)] = i;

    int x = g.gather_rows(nb.positional, b.pos_in_seq);
    if (!b.text_rows.empty()) {
        const int tok = g.gather_rows(nb.token_embedding, b.token_ids);
        x = g.add(x, g.scatter_rows(tok, b.text_rows, b.total_rows));
    }
    if (!b.image_rows.empty()) {
        Matrix<Real> patches(static_cast<Eigen::Index>(b.image_rows.size()), cfg.d_patch);
        for (size_t i = 0; i < b.image_rows.size(); ++i)
            for (int j = 0; j < cfg.d_patch; ++j)
                patches(static_cast<Eigen::Index>(i), j) =
                    static_cast<Real>(b.patch_values[i * static_cast<size_t>(cfg.d_patch) +
                                                     static_cast<size_t>(j)]);
        const int proj =
            g.add_row_broadcast(g.matmul(g.input(std::move(patches)), nb.patch_w), nb.patch_b);
        x = g.add(x, g.scatter_rows(proj, b.image_rows, b.total_rows));
    }
    return x;
}

inline std::shared_ptr<AttentionRanges> make_attention_ranges(const PackedBatch& b,
                                                              AttentionMode mode) {
    auto r = std::make_shared<AttentionRanges>();
    r->begin.resize(static_cast<size_t>(b.total_rows));
    r->end.resize(static_cast<size_t>(b.total_rows));
    for (const auto& [s, e] : b.spans) {
        for (int i = s; i < e; ++i) {
            r->begin[static_cast<size_t>(i)] = s;
            r->end[static_cast<size_t>(i)] = mode == AttentionMode::causal ? i + 1 : e;
        }
    }
    return r;
}

// One pre-norm transformer block: attention sublayer then feed-forward
// sublayer, residual around each.
template <typename Real>
int build_transformer_layer(Graph<Real>& g, int x, const typename BackboneNodes<Real>::Layer& L,
                            std::shared_ptr<const AttentionRanges> ranges, int n_heads) {
    const Real eps = static_cast<Real>(kLayerNormEps);
    const int d = static_cast<int>(g.value(x).cols());
    const int dh = d / n_heads;
    const int ln1 = g.layer_norm(x, L.ln1_g, L.ln1_b, eps);
    const int q = g.add_row_broadcast(g.matmul(ln1, L.wq), L.bq);
    const int k = g.add_row_broadcast(g.matmul(ln1, L.wk), L.bk);
    const int v = g.add_row_broadcast(g.matmul(ln1, L.wv), L.bv);
    std::vector<int> heads;
    for (int h = 0; h < n_heads; ++h) {
        const int qh = g.slice_cols(q, h * dh, dh);
        const int kh = g.slice_cols(k, h * dh, dh);
        const int vh = g.slice_cols(v, h * dh, dh);
        heads.push_back(g.attention(qh, kh, vh, ranges));
    }
    const int att = g.add_row_broadcast(g.matmul(g.concat_cols(heads), L.wo), L.bo);
    x = g.add(x, att);
    const int ln2 = g.layer_norm(x, L.ln2_g, L.ln2_b, eps);
    const int h1 = g.gelu(g.add_row_broadcast(g.matmul(ln2, L.w1), L.b1));
    const int ff = g.add_row_broadcast(g.matmul(h1, L.w2), L.b2);
    return g.add(x, ff);
}

// Pre-norm transformer stack over a packed batch; returns the node holding
// the final hidden states (total_rows x d_model).
template <typename Real>
int build_forward(Graph<Real>& g, const PackedBatch& b, const BackboneNodes<Real>& nb,
                  const BackboneConfig& cfg, AttentionMode mode) {
    int x = build_embed(g, b, nb, cfg);
    const auto ranges = make_attention_ranges(b, mode);
    for (int l = 0; l < cfg.n_layers; ++l) {
        x = build_transformer_layer(g, x, nb.layers[static_cast<size_t>(l)], ranges, cfg.n_heads);
        if (!g.all_finite(x))
            throw numeric_error("non-finite hidden state after layer " + std::to_string(l));
    }
    x = g.layer_norm(x, nb.final_ln_g, nb.final_ln_b, static_cast<Real>(kLayerNormEps));
    if (!g.all_finite(x)) throw numeric_error("non-finite hidden state after final layer norm");
    return x;
}

// Single-sequence hidden states (T x d_model); convenience wrapper that runs
// the graph forward only.
template <typename Real>
Matrix<Real> forward_hidden(const InterleavedSequence& seq, BackboneParams<Real>& params,
                            AttentionMode mode) {
    seq.validate(params.config.vocab_size);
    Graph<Real> g;
    const auto nb = bind_backbone(g, params);
    const auto batch = pack_batch({&seq});
    const int h = build_forward(g, batch, nb, params.config, mode);
    return g.value(h);
}

// Per-position input embeddings for a single sequence (no transformer stack).
template <typename Real>
Matrix<Real> embed_inputs(const InterleavedSequence& seq, BackboneParams<Real>& params) {
    seq.validate(params.config.vocab_size);
    Graph<Real> g;
    const auto nb = bind_backbone(g, params);
    const auto batch = pack_batch({&seq});
    return g.value(build_embed(g, batch, nb, params.config));
}

// Strips trailing PAD tokens from a right-padded batched form. Throws if PAD
// appears anywhere else.
inline InterleavedSequence strip_padding(const InterleavedSequence& padded) {
    int real_len = padded.length();
    while (real_len > 0 && padded.is_text(real_len - 1) &&
           padded.token_at(real_len - 1) == special::kPad)
        --real_len;
    if (real_len == 0) throw input_error("all-padding input");
    InterleavedSequence out(padded.d_patch());
    int i = 0;
    while (i < real_len) {
        if (padded.is_text(i)) {
            if (padded.token_at(i) == special::kPad)
                throw input_error("PAD inside the logical sequence");
            out.append_token(padded.token_at(i));
            ++i;
        } else {
            const int img = padded.image_index_at(i);
            std::vector<double> data;
            int n = 0;
            while (i < real_len && padded.is_image(i) && padded.image_index_at(i) == img) {
                auto pv = padded.patch_at(i);
                data.insert(data.end(), pv.begin(), pv.end());
                ++n;
                ++i;
            }
            out.append_image(data, n);
        }
    }
    return out;
}

// Forward over a right-padded sequence: pad positions are excluded from
// attention entirely and their output rows are zero.
template <typename Real>
Matrix<Real> forward_hidden_padded(const InterleavedSequence& padded,
                                   BackboneParams<Real>& params, AttentionMode mode) {
    const InterleavedSequence real = strip_padding(padded);
    const Matrix<Real> h = forward_hidden(real, params, mode);
    Matrix<Real> out = Matrix<Real>::Zero(padded.length(), params.config.d_model);
    out.topRows(h.rows()) = h;
    return out;
}

}  // namespace xmodal
