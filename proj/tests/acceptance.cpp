// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite runner: one pass/fail line per criterion.
// Usage: acceptance [fast|full] [out_dir]
#include <cstdio>
#include <cstring>
#include <string>

#include "pcrt/accept.hpp"

int main(int argc, char** argv) {
    std::string level = argc > 1 ? argv[1] : "fast";
    std::string out = argc > 2 ? argv[2] : ("accept_" + level);
    if (level != "fast" && level != "full") {
        std::fprintf(stderr, "usage: acceptance [fast|full] [out_dir]\n");
        return 2;
    }
    auto report = pcrt::run_acceptance(level, out, 2, 1);
    pcrt::write_report(report, out + "/report.json");
    return report.all_pass ? 0 : 1;
}
