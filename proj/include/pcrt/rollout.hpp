// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "pcrt/surrogate.hpp"
#include "pcrt/tracer.hpp"

namespace pcrt {

struct RolloutDiag {
    std::size_t rays_launched = 0;
    std::size_t hops_predicted = 0;
    std::size_t rejected_hops = 0;  // predicted direction pointed into the surface
    std::size_t crops_encoded = 0;  // unique interaction anchors encoded
};

// Neural multi-bounce reconstruction: launch directions on the Fibonacci
// sphere, per hop encode the local crop, predict the outgoing direction and
// interaction amplitude, re-intersect geometrically, and test reception.
// The deterministic model supplies the specular-like continuation; the
// non-deterministic model spawns cfg.n_scatter Lambertian-perturbed
// continuations while the diffuse budget lasts. LOS is added geometrically;
// duplicates merge and the power floor applies as in the tracer.
ChannelRealization rollout(const Scene& scene, const SurrogateModel& det,
                           const SurrogateModel& non, const TraceConfig& cfg,
                           RolloutDiag* diag = nullptr);

}  // namespace pcrt
