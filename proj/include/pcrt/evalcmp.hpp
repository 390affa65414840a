// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <map>
#include <string>
#include <vector>

#include "pcrt/metrics.hpp"
#include "pcrt/tracer.hpp"

namespace pcrt {

struct LinkComparison {
    std::string id;
    double pl_true_db = 0, pl_pred_db = 0;
    double ds_true_ns = 0, ds_pred_ns = 0;
    // mean angular error of matched paths per bounce order
    std::map<int, double> ang_err_by_order;
    std::map<int, std::size_t> matched_by_order;
    std::size_t n_true_paths = 0, n_pred_paths = 0;
};

struct EvalSummary {
    double pl_rmse_db = 0.0;
    double ds_rmse_ns = 0.0;
    std::map<int, double> ang_rmse_by_order;
    std::size_t n_links = 0;
};

// Pairs predicted against truth paths (same bounce count, nearest delay
// within the tolerance) and compares condensed parameters.
LinkComparison compare_link(const std::string& id, const ChannelRealization& truth,
                            const ChannelRealization& pred, double delay_tol_s = 2e-9);

EvalSummary summarize(const std::vector<LinkComparison>& links);

// Per-link CSV plus an aggregate summary CSV.
void write_eval_csv(const std::vector<LinkComparison>& links, const EvalSummary& summary,
                    const std::string& per_link_path, const std::string& summary_path);

}  // namespace pcrt
