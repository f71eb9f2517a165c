#pragma once

#include <string>
#include <vector>

#include "xmodal/dataset.hpp"
#include "xmodal/rng.hpp"

namespace xmodal {

// Task identifiers of the three synthetic data categories.
constexpr const char* kTaskCaptionPairs = "caption_pairs";
constexpr const char* kTaskTextPairs = "text_pairs";
constexpr const char* kTaskLongformDocs = "longform_docs";

// Synthetic corpus specification. Every instance is generated from an
// attribute tuple (shape, color, count); tuples are unique per category, so
// positives are unique and retrieval judgments are unambiguous.
//
// Vocabulary layout: ids 0..2 are PAD/MASK/EOS, then shape words, color
// words, count words, and filler words up to vocab_size.
struct SynthSpec {
    int vocab_size = 64;
    int grid_side = 4;  // an image is grid_side^2 patches
    int d_patch = 12;
    int n_shapes = 10;
    int n_colors = 10;
    int n_counts = 12;
    int caption_train = 1024;
    int caption_eval = 128;
    int text_train = 512;
    int text_eval = 64;
    int longform_train = 256;
    int longform_eval = 32;
    int hard_negatives = 2;
    uint64_t seed = 1;

    int attribute_combinations() const { return n_shapes * n_colors * n_counts; }
    int first_filler_word() const {
        return special::kFirstFree + n_shapes + n_colors + n_counts;
    }

    void validate() const {
        if (grid_side < 1 || d_patch < 1) throw config_error("grid_side/d_patch must be >= 1");
        if (n_shapes < 2 || n_colors < 2 || n_counts < 2)
            throw config_error("each attribute needs at least two classes");
        if (caption_train < 1 || text_train < 1 || longform_train < 1 || caption_eval < 1 ||
            text_eval < 1 || longform_eval < 1)
            throw config_error("corpus sizes must be >= 1");
        if (hard_negatives < 0) throw config_error("hard_negatives must be >= 0");
        if (vocab_size < first_filler_word() + 6)
            throw config_error("vocab_size too small for the attribute words plus fillers");
        const int combos = attribute_combinations();
        if (combos < caption_train + caption_eval)
            throw data_error("attribute space too small for the caption-pair corpus: " +
                             std::to_string(combos) + " combinations < " +
                             std::to_string(caption_train + caption_eval) + " instances");
        if (combos < text_train + text_eval)
            throw data_error("attribute space too small for the text-pair corpus");
    }
};

struct AttributeTuple {
    int shape = 0;
    int color = 0;
    int count = 0;

    bool operator==(const AttributeTuple&) const = default;
    int shared_attributes(const AttributeTuple& o) const {
        return int(shape == o.shape) + int(color == o.color) + int(count == o.count);
    }
};

// Deterministic image renderer: every patch is a fixed per-patch mixture of
// the three attribute basis vectors, so an image is a pure function of its
// tuple and the corpus seed.
class ImageRenderer {
public:
    ImageRenderer(const SynthSpec& spec, uint64_t seed);
    std::vector<double> render(const AttributeTuple& t) const;  // grid^2 x d_patch row-major
    int n_patches() const { return grid_ * grid_; }
    int d_patch() const { return d_patch_; }

private:
    int grid_, d_patch_;
    std::vector<double> mix_;  // n_patches x 3
    std::vector<double> shape_basis_, color_basis_, count_basis_;  // classes x d_patch
};

struct GeneratedCorpus {
    std::vector<std::string> train_files;      // one per category
    std::string answer_key_file;
    std::vector<std::string> eval_task_files;  // one retrieval task per category
};

// Writes the three training-instance files, the answer key, and one held-out
// retrieval task per category under out_dir. Generation is a pure function of
// the spec (byte-identical reruns).
GeneratedCorpus generate_corpus(const SynthSpec& spec, const std::string& out_dir);

// Flattens a contrastive instance into one interleaved sequence for stage-1
// pre-training. With doc_first the query text follows the document, so masked
// text can draw on image context to its left; callers alternate the order so
// both modalities occur at all positions of the pre-training stream.
InterleavedSequence flatten_for_pretraining(const ContrastiveInstance& z, bool doc_first = true);

}  // namespace xmodal
