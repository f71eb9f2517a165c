#pragma once

#include <span>
#include <vector>

#include "xmodal/common.hpp"

namespace xmodal {

// Reserved vocabulary ids. Every model vocabulary starts with these three.
namespace special {
constexpr int kPad = 0;
constexpr int kMask = 1;
constexpr int kEos = 2;
constexpr int kFirstFree = 3;
}  // namespace special

// An ordered mixed sequence of discrete text tokens and continuous image
// patches. Patches belonging to one image occupy a contiguous span and share
// an image index. Patch values are stored as doubles; the backbone casts to
// its working precision on input embedding.
class InterleavedSequence {
public:
    InterleavedSequence() = default;
    explicit InterleavedSequence(int d_patch) : d_patch_(d_patch) {}

    void append_token(int id) {
        tokens_.push_back(id);
        image_index_.push_back(-1);
        patch_row_.push_back(-1);
    }

    // Adds one image as `n_patches` contiguous patch positions. `data` is
    // row-major n_patches x d_patch.
    void append_image(std::span<const double> data, int n_patches) {
        if (d_patch_ <= 0) throw input_error("sequence has no patch dimension");
        if (static_cast<int>(data.size()) != n_patches * d_patch_)
            throw input_error("patch dimension mismatch in append_image");
        const int img = n_images_++;
        for (int p = 0; p < n_patches; ++p) {
            tokens_.push_back(-1);
            image_index_.push_back(img);
            patch_row_.push_back(static_cast<int>(patch_data_.size()) / d_patch_);
            patch_data_.insert(patch_data_.end(), data.begin() + p * d_patch_,
                               data.begin() + (p + 1) * d_patch_);
        }
    }

    int length() const { return static_cast<int>(tokens_.size()); }
    int d_patch() const { return d_patch_; }
    int num_images() const { return n_images_; }

    bool is_text(int i) const { return tokens_[static_cast<size_t>(i)] >= 0; }
    bool is_image(int i) const { return !is_text(i); }

    int token_at(int i) const {
        if (!is_text(i)) throw input_error("position is not a text token");
        return tokens_[static_cast<size_t>(i)];
    }

    int image_index_at(int i) const { return image_index_[static_cast<size_t>(i)]; }

    std::span<const double> patch_at(int i) const {
        const int row = patch_row_[static_cast<size_t>(i)];
        if (row < 0) throw input_error("position is not an image patch");
        return {patch_data_.data() + static_cast<size_t>(row) * d_patch_,
                static_cast<size_t>(d_patch_)};
    }

    void set_token(int i, int id) {
        if (!is_text(i)) throw input_error("cannot write a token at an image position");
        tokens_[static_cast<size_t>(i)] = id;
    }

    void set_patch(int i, std::span<const double> values) {
        const int row = patch_row_[static_cast<size_t>(i)];
        if (row < 0) throw input_error("cannot write a patch at a text position");
        if (static_cast<int>(values.size()) != d_patch_)
            throw input_error("patch dimension mismatch in set_patch");
        std::copy(values.begin(), values.end(),
                  patch_data_.begin() + static_cast<size_t>(row) * d_patch_);
    }

    // Contiguous [begin, end) spans of the images, in order of appearance.
    std::vector<std::pair<int, int>> image_spans() const {
        std::vector<std::pair<int, int>> spans;
        int i = 0;
        const int t = length();
        while (i < t) {
            if (is_image(i)) {
                const int img = image_index_at(i);
                int j = i;
                while (j < t && !is_text(j) && image_index_at(j) == img) ++j;
                spans.emplace_back(i, j);
                i = j;
            } else {
                ++i;
            }
        }
        return spans;
    }

    bool ends_with_eos() const {
        return length() > 0 && is_text(length() - 1) &&
               token_at(length() - 1) == special::kEos;
    }

    // Checks the type invariants: nonempty, token ids in [0, V), patch widths
    // consistent, PAD absent from the logical sequence, image spans contiguous.
    void validate(int vocab_size) const {
        if (length() < 1) throw input_error("sequence must have length >= 1");
        int last_img = -1;
        for (int i = 0; i < length(); ++i) {
            if (is_text(i)) {
                const int id = token_at(i);
                if (id < 0 || id >= vocab_size)
                    throw input_error("token id " + std::to_string(id) +
                                      " out of range [0, " + std::to_string(vocab_size) + ")");
                if (id == special::kPad)
                    throw input_error("PAD inside the logical sequence at position " +
                                      std::to_string(i));
            } else {
                const int img = image_index_at(i);
                if (img < last_img)
                    throw input_error("image spans out of order");
                if (img > last_img && img != last_img + 1)
                    throw input_error("image index gap");
                if (img < last_img)
                    throw input_error("image span not contiguous");
                last_img = img;
            }
        }
        // Contiguity: each image index appears in exactly one run.
        std::vector<int> seen(static_cast<size_t>(n_images_), 0);
        int prev = -1;
        for (int i = 0; i < length(); ++i) {
            if (is_image(i)) {
                const int img = image_index_at(i);
                if (img != prev) {
                    if (seen[static_cast<size_t>(img)]++)
                        throw input_error("image span not contiguous");
                }
                prev = img;
            } else {
                prev = -1;
            }
        }
    }

    bool operator==(const InterleavedSequence& other) const {
        return d_patch_ == other.d_patch_ && tokens_ == other.tokens_ &&
               image_index_ == other.image_index_ && patch_row_ == other.patch_row_ &&
               patch_data_ == other.patch_data_;
    }

private:
    int d_patch_ = 0;
    int n_images_ = 0;
    std::vector<int> tokens_;       // -1 at image positions
    std::vector<int> image_index_;  // -1 at text positions
    std::vector<int> patch_row_;    // row into patch_data_, -1 at text positions
    std::vector<double> patch_data_;
};

}  // namespace xmodal
