// SPDX-License-Identifier: Apache-2.0
#include "pcrt/evalcmp.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

namespace pcrt {

LinkComparison compare_link(const std::string& id, const ChannelRealization& truth,
                            const ChannelRealization& pred, double delay_tol_s) {
    LinkComparison cmp;
    cmp.id = id;
    cmp.pl_true_db = path_loss_db(truth);
    cmp.pl_pred_db = path_loss_db(pred);
    cmp.ds_true_ns = rms_delay_spread(truth) * 1e9;
    cmp.ds_pred_ns = rms_delay_spread(pred) * 1e9;
    cmp.n_true_paths = truth.nlos.size() + (truth.los ? 1 : 0);
    cmp.n_pred_paths = pred.nlos.size() + (pred.los ? 1 : 0);

    // greedy delay matching within each bounce order
    std::map<int, std::vector<const TracedPath*>> t_by_order, p_by_order;
    for (const auto& p : truth.nlos) t_by_order[p.bounce_count()].push_back(&p);
    for (const auto& p : pred.nlos) p_by_order[p.bounce_count()].push_back(&p);
    for (auto& [order, t_paths] : t_by_order) {
        auto it = p_by_order.find(order);
        if (it == p_by_order.end()) continue;
        std::vector<bool> used(it->second.size(), false);
        double sum = 0.0;
        std::size_t matched = 0;
        for (const auto* tp : t_paths) {
            double best = delay_tol_s;
            std::size_t best_j = it->second.size();
            for (std::size_t j = 0; j < it->second.size(); ++j) {
                if (used[j]) continue;
                double d = std::fabs(it->second[j]->gain.tau - tp->gain.tau);
                if (d < best) {
                    best = d;
                    best_j = j;
                }
            }
            if (best_j < it->second.size()) {
                used[best_j] = true;
                sum += angular_error_deg(*it->second[best_j], *tp);
                ++matched;
            }
        }
        if (matched) {
            cmp.ang_err_by_order[order] = sum / static_cast<double>(matched);
            cmp.matched_by_order[order] = matched;
        }
    }
    return cmp;
}

EvalSummary summarize(const std::vector<LinkComparison>& links) {
    EvalSummary s;
    s.n_links = links.size();
    if (links.empty()) return s;
    double pl = 0, ds = 0;
    std::map<int, double> ang_sq;
    std::map<int, std::size_t> ang_n;
    for (const auto& l : links) {
        pl += (l.pl_pred_db - l.pl_true_db) * (l.pl_pred_db - l.pl_true_db);
        ds += (l.ds_pred_ns - l.ds_true_ns) * (l.ds_pred_ns - l.ds_true_ns);
        for (const auto& [order, err] : l.ang_err_by_order) {
            ang_sq[order] += err * err;
            ang_n[order] += 1;
        }
    }
    s.pl_rmse_db = std::sqrt(pl / static_cast<double>(links.size()));
    s.ds_rmse_ns = std::sqrt(ds / static_cast<double>(links.size()));
    for (const auto& [order, sq] : ang_sq)
        s.ang_rmse_by_order[order] = std::sqrt(sq / static_cast<double>(ang_n[order]));
    return s;
}

void write_eval_csv(const std::vector<LinkComparison>& links, const EvalSummary& summary,
                    const std::string& per_link_path, const std::string& summary_path) {
    {
        std::ofstream out(per_link_path);
        if (!out) throw InputError("cannot write csv: " + per_link_path);
        out.precision(12);
        out << "link_id,pl_true_db,pl_pred_db,ds_true_ns,ds_pred_ns,n_true_paths,"
               "n_pred_paths,ang_err_order1_deg,ang_err_order2_deg,ang_err_order3_deg\n";
        for (const auto& l : links) {
            out << l.id << "," << l.pl_true_db << "," << l.pl_pred_db << "," << l.ds_true_ns
                << "," << l.ds_pred_ns << "," << l.n_true_paths << "," << l.n_pred_paths;
            for (int order = 1; order <= 3; ++order) {
                auto it = l.ang_err_by_order.find(order);
                out << ",";
                if (it != l.ang_err_by_order.end()) out << it->second;
            }
            out << "\n";
        }
    }
    {
        std::ofstream out(summary_path);
        if (!out) throw InputError("cannot write csv: " + summary_path);
        out.precision(12);
        out << "metric,value\n";
        out << "pl_rmse_db," << summary.pl_rmse_db << "\n";
        out << "ds_rmse_ns," << summary.ds_rmse_ns << "\n";
        for (const auto& [order, rmse] : summary.ang_rmse_by_order)
            out << "ang_rmse_order" << order << "_deg," << rmse << "\n";
        out << "n_links," << summary.n_links << "\n";
    }
}

}  // namespace pcrt
