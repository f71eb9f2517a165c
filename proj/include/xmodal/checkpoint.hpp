#pragma once

#include <map>
#include <string>
#include <vector>

#include "xmodal/backbone.hpp"

namespace xmodal {

// Checkpoint container. Layout (all integers little-endian):
//
//   bytes 0..3   magic "XMC1"
//   u32          format version (1)
//   u32          header length in bytes
//   header       UTF-8 "key=value\n" lines (model configuration)
//   u32          tensor count
//   per tensor:  u32 name length, name bytes,
//                u32 rows, u32 cols,
//                rows*cols float32 values, row-major
//
// load() preserves header and tensor order, so load -> save reproduces the
// file byte for byte.
struct Checkpoint {
    std::vector<std::pair<std::string, std::string>> header;
    std::vector<std::pair<std::string, Matrix<float>>> tensors;

    void save(const std::string& path) const;
    static Checkpoint load(const std::string& path);

    const Matrix<float>* find(const std::string& name) const;
    std::string header_value(const std::string& key) const;  // throws data_error if absent
    bool has_header(const std::string& key) const;
};

std::vector<std::pair<std::string, std::string>> backbone_config_to_fields(
    const BackboneConfig& cfg);
BackboneConfig backbone_config_from_header(const Checkpoint& ck);

template <typename Real>
void append_tensors(Checkpoint& ck, const std::vector<TensorSlot<Real>*>& params) {
    for (const auto* p : params)
        ck.tensors.emplace_back(p->name, p->value.template cast<float>());
}

// Copies checkpoint tensors into the registry by name. Reports every missing
// tensor and shape mismatch in one error message.
template <typename Real>
void assign_tensors(const Checkpoint& ck, const std::vector<TensorSlot<Real>*>& params) {
    std::string diff;
    for (auto* p : params) {
        const Matrix<float>* t = ck.find(p->name);
        if (t == nullptr) {
            diff += "  missing tensor: " + p->name + "\n";
            continue;
        }
        if (t->rows() != p->value.rows() || t->cols() != p->value.cols()) {
            diff += "  shape mismatch for " + p->name + ": checkpoint " +
                    std::to_string(t->rows()) + "x" + std::to_string(t->cols()) + ", model " +
                    std::to_string(p->value.rows()) + "x" + std::to_string(p->value.cols()) + "\n";
            continue;
        }
        p->value = t->template cast<Real>();
    }
    if (!diff.empty()) throw data_error("checkpoint does not match model:\n" + diff);
}

}  // namespace xmodal
