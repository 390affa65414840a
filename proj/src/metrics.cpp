// SPDX-License-Identifier: Apache-2.0
#include "pcrt/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

namespace pcrt {

Pdp pdp(const ChannelRealization& real, double bin_width) {
    if (bin_width <= 0.0) throw InputError("pdp: bin width must be positive");
    Pdp out;
    out.bin_width = bin_width;
    std::map<long long, double> bins;
    for (const auto* p : real.all_paths()) {
        long long k = static_cast<long long>(std::floor(p->gain.tau / bin_width));
        bins[k] += p->gain.a * p->gain.a;
    }
    for (const auto& [k, power] : bins)
        out.bins.push_back({static_cast<double>(k) * bin_width, power});
    return out;
}

double path_loss_db(const ChannelRealization& real) {
    double total = 0.0;
    for (const auto* p : real.all_paths()) total += p->gain.a * p->gain.a;
    if (total <= 0.0) throw InputError("path_loss: zero total power");
    return -10.0 * std::log10(total);
}

double rms_delay_spread(const ChannelRealization& real) {
    double p_sum = 0.0, t_sum = 0.0, t2_sum = 0.0;
    auto all = real.all_paths();
    if (all.empty()) throw InputError("rms_delay_spread: empty realization");
    for (const auto* p : all) {
        double pw = p->gain.a * p->gain.a;
        p_sum += pw;
        t_sum += pw * p->gain.tau;
        t2_sum += pw * p->gain.tau * p->gain.tau;
    }
    if (p_sum <= 0.0) throw InputError("rms_delay_spread: zero total power");
    double mean = t_sum / p_sum;
    double var = t2_sum / p_sum - mean * mean;
    return std::sqrt(std::max(0.0, var));
}

CondensedParams condensed(const ChannelRealization& real) {
    return {path_loss_db(real), rms_delay_spread(real) * 1e9};
}

double angular_error_deg(const TracedPath& pred, const TracedPath& truth) {
    if (pred.hops.size() != truth.hops.size())
        throw InputError("angular_error: bounce count mismatch");
    if (pred.hops.empty()) return 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.hops.size(); ++i)
        sum += angle_between(pred.hops[i].dir_out, truth.hops[i].dir_out);
    return sum / static_cast<double>(pred.hops.size()) * 180.0 / M_PI;
}

void write_condensed_csv(const std::string& path,
                         const std::vector<std::pair<std::string, CondensedParams>>& rows,
                         const std::vector<std::size_t>& n_paths) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write csv: " + path);
    out.precision(12);
    out << "link_id,pl_db,ds_ns,n_paths\n";
    for (std::size_t i = 0; i < rows.size(); ++i)
        out << rows[i].first << "," << rows[i].second.pl_db << "," << rows[i].second.ds_ns
            << "," << (i < n_paths.size() ? n_paths[i] : 0) << "\n";
}

}  // namespace pcrt
