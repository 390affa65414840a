// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

namespace pcrt {

struct CriterionResult {
    int id = 0;
    std::string name;
    bool pass = false;
    bool skipped = false;
    std::string detail;   // deterministic: values and thresholds, no timings
    double seconds = 0.0;  // printed, never written to the report file
};

struct AcceptReport {
    std::string level;
    std::uint64_t seed = 0;
    std::vector<CriterionResult> results;
    bool all_pass = true;
};

// Runs the acceptance criteria; "fast" skips the training-based ones
// (direction/amplitude learning, rollout fidelity, ablation, overfit).
// Prints one PASS/FAIL line per criterion as it completes.
AcceptReport run_acceptance(const std::string& level, const std::string& out_dir, int threads,
                            std::uint64_t seed);

// Byte-stable report (no timings or timestamps).
void write_report(const AcceptReport& report, const std::string& path);
std::string render_report(const AcceptReport& report);

}  // namespace pcrt
