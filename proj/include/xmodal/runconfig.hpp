#pragma once

#include <string>

#include "xmodal/backbone.hpp"
#include "xmodal/contrastive.hpp"
#include "xmodal/datagen.hpp"
#include "xmodal/pretrain.hpp"

namespace xmodal {

// Full run configuration. Serialized as flat key-value text with sections:
//
//   [backbone]
//   d_model = 64
//   [cpt]
//   p_mlm = 0.4
//   [cl]
//   tau = 0.03
//   [data]
//   vocab_size = 64
//   [ablation]
//   mlm = true
//   [run]
//   seed = 1
//
// Unknown keys are rejected. CLI flags override file values.
struct RunConfig {
    BackboneConfig backbone;
    CptConfig cpt;
    ClConfig cl;
    SynthSpec data;
    bool text_pairs_on = true;
    bool longform_pairs_on = true;
    uint64_t seed = 1;
    double cost_gamma = 1.0;  // packing cost exponent for stage-1 micro-batches

    static RunConfig from_file(const std::string& path);
    static RunConfig from_text(const std::string& text);

    // key is "section.name", e.g. "cl.tau".
    void set(const std::string& key, const std::string& value);
    std::string to_text() const;

    void validate() const {
        backbone.validate();
        cpt.validate();
        cl.validate();
        data.validate();
        if (backbone.vocab_size != data.vocab_size)
            throw config_error("backbone.vocab_size and data.vocab_size must agree");
        if (backbone.d_patch != data.d_patch)
            throw config_error("backbone.d_patch and data.d_patch must agree");
        if (cost_gamma <= 0.0) throw config_error("cost_gamma must be positive");
    }
};

bool parse_bool(const std::string& v);

}  // namespace xmodal
