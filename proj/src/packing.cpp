#include "xmodal/packing.hpp"

#include <algorithm>

#include "xmodal/common.hpp"

namespace xmodal {

PackAssignment pack(const std::vector<double>& costs, int workers) {
    if (workers < 1) throw input_error("pack needs at least one worker");
    for (double c : costs)
        if (!(c > 0.0)) throw input_error("pack requires positive costs");

    PackAssignment a;
    a.workers = workers;
    a.worker_of.assign(costs.size(), -1);
    a.worker_cost.assign(static_cast<size_t>(workers), 0.0);
    a.idle_workers = static_cast<size_t>(workers) > costs.size();
    if (a.idle_workers)
        log_warn("pack: more workers than sequences; some workers stay idle");

    std::vector<int> order(costs.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);
    std::stable_sort(order.begin(), order.end(), [&](int x, int y) {
        return costs[static_cast<size_t>(x)] > costs[static_cast<size_t>(y)];
    });

    for (int i : order) {
        int best = 0;
        for (int w = 1; w < workers; ++w)
            if (a.worker_cost[static_cast<size_t>(w)] < a.worker_cost[static_cast<size_t>(best)])
                best = w;
        a.worker_of[static_cast<size_t>(i)] = best;
        a.worker_cost[static_cast<size_t>(best)] += costs[static_cast<size_t>(i)];
    }
    a.max_load = *std::max_element(a.worker_cost.begin(), a.worker_cost.end());
    a.min_load = *std::min_element(a.worker_cost.begin(), a.worker_cost.end());
    return a;
}

PackAssignment pack(const std::vector<const InterleavedSequence*>& seqs, int workers,
                    const CostModel& model) {
    std::vector<double> costs;
    costs.reserve(seqs.size());
    for (const auto* s : seqs) costs.push_back(model.cost(*s));
    return pack(costs, workers);
}

}  // namespace xmodal
