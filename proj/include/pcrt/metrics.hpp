// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "pcrt/tracer.hpp"

namespace pcrt {

struct Pdp {
    struct Bin {
        double delay = 0.0;   // bin start, seconds
        double power = 0.0;   // linear
    };
    std::vector<Bin> bins;    // strictly increasing delays, empty bins omitted
    double bin_width = 1e-9;
    double total_power() const {
        double s = 0.0;
        for (const auto& b : bins) s += b.power;
        return s;
    }
};

struct CondensedParams {
    double pl_db = 0.0;
    double ds_ns = 0.0;
};

// Power delay profile: sum of a^2 over paths per delay bin.
Pdp pdp(const ChannelRealization& real, double bin_width = 1e-9);

// Path loss: -10*log10(sum of path powers), incoherent.
double path_loss_db(const ChannelRealization& real);

// RMS delay spread in seconds (power-weighted std of tau).
double rms_delay_spread(const ChannelRealization& real);

CondensedParams condensed(const ChannelRealization& real);

// Mean over hops of the angle between outgoing directions, degrees.
// Both paths must have the same bounce count.
double angular_error_deg(const TracedPath& pred, const TracedPath& truth);

// Per-link CSV: link_id, pl_db, ds_ns, n_paths.
void write_condensed_csv(const std::string& path,
                         const std::vector<std::pair<std::string, CondensedParams>>& rows,
                         const std::vector<std::size_t>& n_paths);

}  // namespace pcrt
