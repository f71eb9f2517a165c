#pragma once

#include <cmath>
#include <numeric>
#include <vector>

#include "xmodal/sequence.hpp"

namespace xmodal {

// Compute cost of a sequence: cost = T^gamma where T counts text tokens and
// image patches alike. gamma > 1 models superlinear attention cost.
struct CostModel {
    double gamma = 1.0;

    double cost_of_length(int t) const {
        if (t < 1) throw input_error("cost of an empty sequence");
        return std::pow(static_cast<double>(t), gamma);
    }
    double cost(const InterleavedSequence& seq) const { return cost_of_length(seq.length()); }
};

struct PackAssignment {
    int workers = 0;
    std::vector<int> worker_of;        // per sequence
    std::vector<double> worker_cost;   // per worker
    double max_load = 0;
    double min_load = 0;
    bool idle_workers = false;         // flagged when workers > sequences

    std::vector<std::vector<int>> bins() const {
        std::vector<std::vector<int>> b(static_cast<size_t>(workers));
        for (size_t i = 0; i < worker_of.size(); ++i)
            b[static_cast<size_t>(worker_of[i])].push_back(static_cast<int>(i));
        return b;  // per worker, ascending original index
    }
};

// Longest-processing-time greedy: items sorted by cost descending (stable on
// ties), each assigned to the currently least-loaded worker, ties to the
// lowest worker index. Deterministic for identical inputs.
PackAssignment pack(const std::vector<double>& costs, int workers);

PackAssignment pack(const std::vector<const InterleavedSequence*>& seqs, int workers,
                    const CostModel& model);

}  // namespace xmodal
