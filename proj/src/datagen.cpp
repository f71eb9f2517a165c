#include "xmodal/datagen.hpp"

#include <cstdio>
#include <filesystem>
#include <set>

namespace xmodal {

namespace {

std::string make_id(const char* prefix, int i) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%s-%05d", prefix, i);
    return buf;
}

struct Vocab {
    const SynthSpec& spec;
    int shape_word(int s) const { return special::kFirstFree + s; }
    int color_word(int c) const { return special::kFirstFree + spec.n_shapes + c; }
    int count_word(int n) const {
        return special::kFirstFree + spec.n_shapes + spec.n_colors + n;
    }
    int filler_count() const { return spec.vocab_size - spec.first_filler_word(); }
    int filler_word(Rng& rng) const {
        return spec.first_filler_word() + static_cast<int>(rng.uniform_below(
                                              static_cast<uint64_t>(filler_count())));
    }
};

AttributeTuple tuple_from_index(const SynthSpec& spec, int idx) {
    AttributeTuple t;
    t.shape = idx % spec.n_shapes;
    idx /= spec.n_shapes;
    t.color = idx % spec.n_colors;
    t.count = idx / spec.n_colors;
    return t;
}

// Templated caption grammar: every caption names all three attributes, in a
// template-dependent order with filler words mixed in.
std::vector<int> caption_tokens(const Vocab& v, const AttributeTuple& t, Rng& rng) {
    const int s = v.shape_word(t.shape);
    const int c = v.color_word(t.color);
    const int n = v.count_word(t.count);
    switch (rng.uniform_below(4)) {
        case 0: return {v.filler_word(rng), s, c, n};
        case 1: return {c, s, v.filler_word(rng), n};
        case 2: return {n, v.filler_word(rng), s, c};
        default: return {v.filler_word(rng), n, v.filler_word(rng), c, s};
    }
}

InterleavedSequence text_sequence(int d_patch, const std::vector<int>& tokens) {
    InterleavedSequence seq(d_patch);
    for (int id : tokens) seq.append_token(id);
    return seq;
}

InterleavedSequence image_sequence(const ImageRenderer& r, const AttributeTuple& t) {
    InterleavedSequence seq(r.d_patch());
    seq.append_image(r.render(t), r.n_patches());
    return seq;
}

// A tuple sharing exactly one attribute with t: one attribute kept (chosen at
// random), the other two resampled to different values.
AttributeTuple share_one_attribute(const SynthSpec& spec, const AttributeTuple& t, Rng& rng) {
    auto other = [&rng](int current, int classes) {
        return (current + 1 +
                static_cast<int>(rng.uniform_below(static_cast<uint64_t>(classes - 1)))) %
               classes;
    };
    AttributeTuple n = t;
    switch (rng.uniform_below(3)) {
        case 0:  // keep shape
            n.color = other(t.color, spec.n_colors);
            n.count = other(t.count, spec.n_counts);
            break;
        case 1:  // keep color
            n.shape = other(t.shape, spec.n_shapes);
            n.count = other(t.count, spec.n_counts);
            break;
        default:  // keep count
            n.shape = other(t.shape, spec.n_shapes);
            n.color = other(t.color, spec.n_colors);
            break;
    }
    return n;
}

std::array<int, 3> to_array(const AttributeTuple& t) { return {t.shape, t.color, t.count}; }

}  // namespace

ImageRenderer::ImageRenderer(const SynthSpec& spec, uint64_t seed)
    : grid_(spec.grid_side), d_patch_(spec.d_patch) {
    Rng rng(seed);
    const int np = n_patches();
    mix_.resize(static_cast<size_t>(np) * 3);
    const double inv_sqrt3 = 1.0 / std::sqrt(3.0);
    for (auto& m : mix_) m = rng.gaussian() * inv_sqrt3;
    auto fill_basis = [&](std::vector<double>& basis, int classes) {
        basis.resize(static_cast<size_t>(classes) * static_cast<size_t>(d_patch_));
        for (auto& b : basis) b = rng.gaussian();
    };
    fill_basis(shape_basis_, spec.n_shapes);
    fill_basis(color_basis_, spec.n_colors);
    fill_basis(count_basis_, spec.n_counts);
}

std::vector<double> ImageRenderer::render(const AttributeTuple& t) const {
    const int np = n_patches();
    std::vector<double> out(static_cast<size_t>(np) * static_cast<size_t>(d_patch_));
    const double* us = &shape_basis_[static_cast<size_t>(t.shape) * static_cast<size_t>(d_patch_)];
    const double* uc = &color_basis_[static_cast<size_t>(t.color) * static_cast<size_t>(d_patch_)];
    const double* un = &count_basis_[static_cast<size_t>(t.count) * static_cast<size_t>(d_patch_)];
    for (int p = 0; p < np; ++p) {
        const double a = mix_[static_cast<size_t>(p) * 3];
        const double b = mix_[static_cast<size_t>(p) * 3 + 1];
        const double c = mix_[static_cast<size_t>(p) * 3 + 2];
        for (int j = 0; j < d_patch_; ++j)
            out[static_cast<size_t>(p) * static_cast<size_t>(d_patch_) + static_cast<size_t>(j)] =
                a * us[j] + b * uc[j] + c * un[j];
    }
    return out;
}

InterleavedSequence flatten_for_pretraining(const ContrastiveInstance& z, bool doc_first) {
    const int d_patch = std::max(z.positive.d_patch(), z.query.d_patch());
    InterleavedSequence out(d_patch);
    auto append_all = [&out](const InterleavedSequence& src) {
        int i = 0;
        while (i < src.length()) {
            if (src.is_text(i)) {
                out.append_token(src.token_at(i));
                ++i;
            } else {
                const int img = src.image_index_at(i);
                std::vector<double> data;
                int n = 0;
                while (i < src.length() && src.is_image(i) && src.image_index_at(i) == img) {
                    auto pv = src.patch_at(i);
                    data.insert(data.end(), pv.begin(), pv.end());
                    ++n;
                    ++i;
                }
                out.append_image(data, n);
            }
        }
    };
    if (doc_first) {
        append_all(z.positive);
        append_all(z.query);
    } else {
        append_all(z.query);
        append_all(z.positive);
    }
    return out;
}

GeneratedCorpus generate_corpus(const SynthSpec& spec, const std::string& out_dir) {
    spec.validate();
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    fs::create_directories(out_dir + "/eval");

    const Vocab vocab{spec};
    const ImageRenderer renderer(spec, derive_seed(spec.seed, "render"));
    std::vector<AnswerKeyEntry> key;
    GeneratedCorpus result;

    auto add_key = [&key](const std::string& id, std::vector<std::array<int, 3>> tuples) {
        key.push_back({id, std::move(tuples)});
    };

    // --- caption pairs: text query -> image document ---
    {
        Rng rng(derive_seed(spec.seed, "gen-caption"));
        std::vector<int> perm(static_cast<size_t>(spec.attribute_combinations()));
        for (size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
        rng.shuffle(perm);

        std::vector<ContrastiveInstance> train;
        RetrievalTask eval_task;
        eval_task.name = kTaskCaptionPairs;
        const int total = spec.caption_train + spec.caption_eval;
        for (int i = 0; i < total; ++i) {
            const AttributeTuple t = tuple_from_index(spec, perm[static_cast<size_t>(i)]);
            ContrastiveInstance z;
            z.task_id = kTaskCaptionPairs;
            z.query_id = make_id("capq", i);
            z.positive_id = make_id("capd", i);
            z.query = text_sequence(spec.d_patch, caption_tokens(vocab, t, rng));
            z.positive = image_sequence(renderer, t);
            add_key(z.query_id, {to_array(t)});
            add_key(z.positive_id, {to_array(t)});
            for (int k = 0; k < spec.hard_negatives; ++k) {
                const AttributeTuple nt = share_one_attribute(spec, t, rng);
                z.negative_ids.push_back(make_id("capn", i * std::max(1, spec.hard_negatives) + k));
                z.negatives.push_back(image_sequence(renderer, nt));
                add_key(z.negative_ids.back(), {to_array(nt)});
            }
            if (i < spec.caption_train) {
                train.push_back(std::move(z));
            } else {
                eval_task.queries.emplace_back(z.query_id, z.query);
                eval_task.pool.emplace_back(z.positive_id, z.positive);
                eval_task.judgments[z.query_id] = {z.positive_id};
            }
        }
        const std::string train_path = out_dir + "/caption_pairs.jsonl";
        save_instances_jsonl(train_path, train);
        result.train_files.push_back(train_path);
        const std::string task_path = out_dir + "/eval/caption_pairs.task.jsonl";
        save_task_jsonl(task_path, eval_task);
        result.eval_task_files.push_back(task_path);
    }

    // --- text-only pairs: paraphrase-style caption <-> caption ---
    {
        Rng rng(derive_seed(spec.seed, "gen-text"));
        std::vector<int> perm(static_cast<size_t>(spec.attribute_combinations()));
        for (size_t i = 0; i < perm.size(); ++i) perm[i] = static_cast<int>(i);
        rng.shuffle(perm);

        std::vector<ContrastiveInstance> train;
        RetrievalTask eval_task;
        eval_task.name = kTaskTextPairs;
        const int total = spec.text_train + spec.text_eval;
        for (int i = 0; i < total; ++i) {
            const AttributeTuple t = tuple_from_index(spec, perm[static_cast<size_t>(i)]);
            ContrastiveInstance z;
            z.task_id = kTaskTextPairs;
            z.query_id = make_id("txtq", i);
            z.positive_id = make_id("txtd", i);
            const auto qt = caption_tokens(vocab, t, rng);
            auto pt = caption_tokens(vocab, t, rng);
            for (int tries = 0; pt == qt && tries < 8; ++tries)
                pt = caption_tokens(vocab, t, rng);
            z.query = text_sequence(spec.d_patch, qt);
            z.positive = text_sequence(spec.d_patch, pt);
            add_key(z.query_id, {to_array(t)});
            add_key(z.positive_id, {to_array(t)});
            for (int k = 0; k < spec.hard_negatives; ++k) {
                const AttributeTuple nt = share_one_attribute(spec, t, rng);
                z.negative_ids.push_back(make_id("txtn", i * std::max(1, spec.hard_negatives) + k));
                z.negatives.push_back(text_sequence(spec.d_patch, caption_tokens(vocab, nt, rng)));
                add_key(z.negative_ids.back(), {to_array(nt)});
            }
            if (i < spec.text_train) {
                train.push_back(std::move(z));
            } else {
                eval_task.queries.emplace_back(z.query_id, z.query);
                eval_task.pool.emplace_back(z.positive_id, z.positive);
                eval_task.judgments[z.query_id] = {z.positive_id};
            }
        }
        const std::string train_path = out_dir + "/text_pairs.jsonl";
        save_instances_jsonl(train_path, train);
        result.train_files.push_back(train_path);
        const std::string task_path = out_dir + "/eval/text_pairs.task.jsonl";
        save_task_jsonl(task_path, eval_task);
        result.eval_task_files.push_back(task_path);
    }

    // --- long-form documents: two-image documents, query names both tuples ---
    {
        Rng rng(derive_seed(spec.seed, "gen-longform"));
        std::set<std::pair<int, int>> used;
        const int combos = spec.attribute_combinations();

        std::vector<ContrastiveInstance> train;
        RetrievalTask eval_task;
        eval_task.name = kTaskLongformDocs;
        const int total = spec.longform_train + spec.longform_eval;
        for (int i = 0; i < total; ++i) {
            int i1 = 0, i2 = 0;
            do {
                i1 = static_cast<int>(rng.uniform_below(static_cast<uint64_t>(combos)));
                i2 = static_cast<int>(rng.uniform_below(static_cast<uint64_t>(combos)));
            } while (i1 == i2 ||
                     used.count({std::min(i1, i2), std::max(i1, i2)}) > 0);
            used.insert({std::min(i1, i2), std::max(i1, i2)});
            const AttributeTuple t1 = tuple_from_index(spec, i1);
            const AttributeTuple t2 = tuple_from_index(spec, i2);

            auto make_doc = [&](const AttributeTuple& a, const AttributeTuple& b) {
                InterleavedSequence doc(spec.d_patch);
                doc.append_image(renderer.render(a), renderer.n_patches());
                doc.append_image(renderer.render(b), renderer.n_patches());
                for (int f = 0; f < 3; ++f) doc.append_token(vocab.filler_word(rng));
                return doc;
            };

            ContrastiveInstance z;
            z.task_id = kTaskLongformDocs;
            z.query_id = make_id("lfq", i);
            z.positive_id = make_id("lfd", i);
            auto qt = caption_tokens(vocab, t1, rng);
            const auto q2 = caption_tokens(vocab, t2, rng);
            qt.insert(qt.end(), q2.begin(), q2.end());
            z.query = text_sequence(spec.d_patch, qt);
            z.positive = make_doc(t1, t2);
            add_key(z.query_id, {to_array(t1), to_array(t2)});
            add_key(z.positive_id, {to_array(t1), to_array(t2)});
            for (int k = 0; k < spec.hard_negatives; ++k) {
                // replace one of the two images with a near-miss tuple
                AttributeTuple a = t1, b = t2;
                if (k % 2 == 0)
                    b = share_one_attribute(spec, t2, rng);
                else
                    a = share_one_attribute(spec, t1, rng);
                z.negative_ids.push_back(make_id("lfn", i * std::max(1, spec.hard_negatives) + k));
                z.negatives.push_back(make_doc(a, b));
                add_key(z.negative_ids.back(), {to_array(a), to_array(b)});
            }
            if (i < spec.longform_train) {
                train.push_back(std::move(z));
            } else {
                eval_task.queries.emplace_back(z.query_id, z.query);
                eval_task.pool.emplace_back(z.positive_id, z.positive);
                eval_task.judgments[z.query_id] = {z.positive_id};
            }
        }
        const std::string train_path = out_dir + "/longform_docs.jsonl";
        save_instances_jsonl(train_path, train);
        result.train_files.push_back(train_path);
        const std::string task_path = out_dir + "/eval/longform_docs.task.jsonl";
        save_task_jsonl(task_path, eval_task);
        result.eval_task_files.push_back(task_path);
    }

    result.answer_key_file = out_dir + "/answer_key.jsonl";
    save_answer_key(result.answer_key_file, key);
    return result;
}

}  // namespace xmodal
