// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>
#include <vector>

#include "pcrt/cloud.hpp"
#include "pcrt/material.hpp"
#include "pcrt/polarization.hpp"

namespace pcrt {

inline constexpr double kSpeedOfLight = 299792458.0;     // m/s
inline constexpr double kEps0 = 8.8541878128e-12;        // F/m

// ---------------------------------------------------------------------------
// Per-hop convention
//
// A traced path with B interactions has B+1 segments. Every hop's PolAmp is
// a dimensionless *interaction factor* expressed between the canonical
// polarization bases of its incoming and outgoing segment directions
// (polarization_basis of each). Spherical spreading 1/d and the propagation
// phase exp(-j*2*pi*d/lambda) are attached per segment. Chaining the segment
// factors and interaction factors in order reproduces the full transfer
// matrix; adjacent hops share a segment basis, so no extra alignment terms
// appear between them.
// ---------------------------------------------------------------------------

// Complex relative permittivity eta = eps_r - j*sigma/(2*pi*f*eps0)
// (exp(-j*w*t) phasors).
cplx complex_permittivity(const Material& mat, double f_hz);

struct FresnelCoeffs {
    cplx r_perp;  // E perpendicular to the incidence plane
    cplx r_par;   // E parallel to the incidence plane
};

// Fresnel reflection coefficients; cos_theta_i in (0, 1]. Both coefficients
// equal (1 - sqrt(eta)) / (1 + sqrt(eta)) at normal incidence.
FresnelCoeffs fresnel(double cos_theta_i, const Material& mat, double f_hz);

// Specular mapping k_r = k_i - 2 (k_i . n) n. Requires k_i . n < 0.
Vec3 reflect_dir(const Vec3& k_i, const Vec3& n);

// Spreading factor of a spherical wave over distance d (> 0): 1/d.
double spreading_factor(double d);

// Propagation factor of one segment: (1/d) * exp(-j*2*pi*d/lambda).
cplx propagation_factor(double d, double lambda);

// Interaction factor of a specular reflection, canonical segment bases on
// both sides: rotate into the incidence-plane pair, apply
// diag(R*r_perp, R*r_par), rotate out. Singular values <= 1.
PolAmp reflection_interaction(const Vec3& k_i, const Vec3& k_r, const Vec3& n,
                              const Material& mat, double f_hz);

// Full hop per the reflection transfer equation: interaction x propagation
// over the incoming segment of length d.
PolAmp reflection_amplitude(const Hit& hit, const Vec3& k_i, const Vec3& k_r,
                            const Material& mat, double d, double lambda,
                            const PolBasis& prev_out_basis, double f_hz);

// Diffuse (Lambertian) scattering interaction factor.
//   magnitude = S * Gamma * sqrt(f_s(theta_s) * cos(theta_i) * patch_area),
//   f_s = cos(theta_s) / pi,
// polarization split [sqrt(1-K_x), sqrt(K_x)] with zero phases, arranged as
// a rotation-form 2x2 so the factor stays energy-bounded.
PolAmp scatter_interaction(const Vec3& k_i, const Vec3& k_s, const Vec3& n,
                           const Material& mat, double patch_area, double gamma);

PolAmp scatter_amplitude(const Hit& hit, const Vec3& k_i, const Vec3& k_s,
                         const Material& mat, double d, double lambda, double patch_area,
                         double gamma);

// Lambertian scattering pattern, integrates to 1 over the hemisphere.
inline double lambertian_pattern(double cos_theta_s) {
    return cos_theta_s <= 0.0 ? 0.0 : cos_theta_s / M_PI;
}

// True when direction d points into the wedge solid (used to reject
// diffracted rays that would re-enter a face).
bool enters_wedge_material(const EdgeSegment& edge, const Vec3& d);

// Directions on the Keller cone of an edge for incident direction k_i,
// uniformly spaced in cone azimuth, excluding directions that re-enter the
// wedge material.
std::vector<Vec3> keller_cone_dirs(const EdgeSegment& edge, const Vec3& k_i,
                                   std::size_t n_dirs);

// UTD wedge diffraction with the finite-conductivity (Luebbers) heuristic.
// Returns the dimensionless canonical interaction factor D * T * sqrt(L~)
// with L~ = s*s'/(s+s'); segment factors handle 1/d spreading and phase.
PolAmp diffraction_interaction(const EdgeSegment& edge, const Vec3& q,
                               const Vec3& k_i, const Vec3& k_d,
                               const Material& mat0, const Material& matn,
                               double s_prime, double s, double lambda);

// Full diffraction amplitude per the transfer equation, including the cone
// spreading A_d(s, s') = sqrt(s' / (s (s + s'))) and phase over s.
PolAmp diffraction_amplitude(const EdgeSegment& edge, const Vec3& q, const Vec3& k_i,
                             const Vec3& k_d, const Material& mat0, const Material& matn,
                             double s_prime, double s, double lambda);

// Diffraction spreading factor for spherical incidence.
inline double diffraction_spreading(double s_prime, double s) {
    return std::sqrt(s_prime / (s * (s + s_prime)));
}

// One hop handed to chain(). The amp carries everything the hop contributes
// to the transfer matrix (interaction factor and, when the caller assembled
// it that way, the segment propagation factor); d feeds the delay only.
struct ChainHop {
    PolAmp amp;
    double d = 0.0;  // segment length, meters
};

struct PathGain {
    PolAmp T;          // total transfer matrix
    double tau = 0.0;  // seconds
    double a = 0.0;    // linear amplitude; a^2 is the path power gain
};

// Orders the product T = P(d_n) * I_n * ... * I_1 * P(d_1), accumulates
// tau = sum(d)/c, and extracts a = (lambda / 4 pi) * |T w| with the
// vertical launch vector w = [1, 0]^T (isotropic patterns).
PathGain chain(const std::vector<ChainHop>& hops, double lambda);

struct CirTap {
    double tau = 0.0;
    cplx amp;
};

// Baseband CIR taps: per path, a * exp(-j*2*pi*f*tau) at delay tau; taps
// within 1 ps merge by complex addition.
std::vector<CirTap> cir(const std::vector<PathGain>& paths, double f_hz);

// Channel frequency response H(f) = sum_l a_l exp(-j*2*pi*f*tau_l).
std::vector<cplx> cfr(const std::vector<PathGain>& paths, const std::vector<double>& freqs);

}  // namespace pcrt
