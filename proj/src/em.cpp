// SPDX-License-Identifier: Apache-2.0
#include "pcrt/em.hpp"

#include <algorithm>
#include <cmath>

namespace pcrt {

namespace {

// Transverse pair aligned with the incidence plane spanned by k and n:
// e_p perpendicular to the plane, e_q = k x e_p in it. Falls back to the
// canonical basis at normal incidence, where the plane is undefined and the
// two Fresnel coefficients coincide.
PolBasis incidence_plane_basis(const Vec3& k, const Vec3& n) {
    Vec3 perp = cross(k, n);
    double len = norm(perp);
    PolBasis b;
    if (len < 1e-9) return polarization_basis(k);
    b.e_p = perp / len;
    b.e_q = cross(k, b.e_p);
    return b;
}

}  // namespace

cplx complex_permittivity(const Material& mat, double f_hz) {
    return cplx(mat.eps_r, -mat.sigma / (2.0 * M_PI * f_hz * kEps0));
}

FresnelCoeffs fresnel(double cos_theta_i, const Material& mat, double f_hz) {
    if (cos_theta_i <= 0.0 || cos_theta_i > 1.0 + 1e-12)
        throw InputError("non-incident geometry");
    if (f_hz <= 0.0) throw InputError("fresnel: frequency must be positive");
    cos_theta_i = std::min(cos_theta_i, 1.0);
    cplx eta = complex_permittivity(mat, f_hz);
    double sin2 = 1.0 - cos_theta_i * cos_theta_i;
    cplx root = std::sqrt(eta - sin2);
    FresnelCoeffs fc;
    fc.r_perp = (cos_theta_i - root) / (cos_theta_i + root);
    fc.r_par = (root - eta * cos_theta_i) / (root + eta * cos_theta_i);
    return fc;
}

Vec3 reflect_dir(const Vec3& k_i, const Vec3& n) {
    double kn = dot(k_i, n);
    if (kn >= 0.0) throw InputError("ray leaves surface");
    return normalized(k_i - 2.0 * kn * n);
}

double spreading_factor(double d) {
    if (d <= 0.0) throw InputError("spreading factor requires d > 0");
    return 1.0 / d;
}

cplx propagation_factor(double d, double lambda) {
    double phase = -2.0 * M_PI * d / lambda;
    return spreading_factor(d) * cplx(std::cos(phase), std::sin(phase));
}

PolAmp reflection_interaction(const Vec3& k_i, const Vec3& k_r, const Vec3& n,
                              const Material& mat, double f_hz) {
    double cos_i = -dot(k_i, n);
    FresnelCoeffs fc = fresnel(cos_i, mat, f_hz);
    double R = mat.R();
    PolBasis plane_in = incidence_plane_basis(k_i, n);
    PolBasis plane_out;
    plane_out.e_p = plane_in.e_p;  // perpendicular component is shared
    plane_out.e_q = cross(k_r, plane_out.e_p);
    PolAmp into_plane = basis_transform(plane_in, polarization_basis(k_i));
    PolAmp out_of_plane = basis_transform(polarization_basis(k_r), plane_out);
    return out_of_plane * PolAmp::diag(R * fc.r_perp, R * fc.r_par) * into_plane;
}

PolAmp reflection_amplitude(const Hit& hit, const Vec3& k_i, const Vec3& k_r,
                            const Material& mat, double d, double lambda,
                            const PolBasis& prev_out_basis, double f_hz) {
    if (d <= 0.0) throw InputError("reflection_amplitude: d must be positive");
    PolAmp align = basis_transform(polarization_basis(k_i), prev_out_basis);
    PolAmp inter = reflection_interaction(k_i, k_r, hit.normal, mat, f_hz);
    return inter * align * propagation_factor(d, lambda);
}

PolAmp scatter_interaction(const Vec3& k_i, const Vec3& k_s, const Vec3& n,
                           const Material& mat, double patch_area, double gamma) {
    double cos_i = -dot(k_i, n);
    double cos_s = dot(k_s, n);
    if (cos_i <= 0.0) throw InputError("scatter: ray leaves surface");
    if (cos_s < 0.0) throw InputError("scatter into surface");
    if (patch_area <= 0.0) throw InputError("scatter: patch_area must be positive");
    double mag = mat.S * gamma * std::sqrt(lambertian_pattern(cos_s) * cos_i * patch_area);
    double co = std::sqrt(1.0 - mat.K_x);
    double cx = std::sqrt(mat.K_x);
    // Rotation-form co/cross split between the canonical segment bases
    // (random phases fixed to zero); sigma_max equals mag.
    PolAmp split;
    split.m = {cplx(co * mag), cplx(-cx * mag), cplx(cx * mag), cplx(co * mag)};
    return split;
}

PolAmp scatter_amplitude(const Hit& hit, const Vec3& k_i, const Vec3& k_s,
                         const Material& mat, double d, double lambda, double patch_area,
                         double gamma) {
    if (d <= 0.0) throw InputError("scatter_amplitude: d must be positive");
    return scatter_interaction(k_i, k_s, hit.normal, mat, patch_area, gamma) *
           propagation_factor(d, lambda);
}

// ---------------------------------------------------------------------------
// Diffraction
// ---------------------------------------------------------------------------

namespace {

// Fresnel integrals C(u), S(u) via the rational approximations of
// Abramowitz & Stegun 7.3.33-34 (max error ~2e-3; adequate since the
// finite-conductivity wedge model is itself heuristic).
void fresnel_cs(double u, double& C, double& S) {
    double au = std::fabs(u);
    double f = (1.0 + 0.926 * au) / (2.0 + 1.792 * au + 3.104 * au * au);
    double g = 1.0 / (2.0 + 4.142 * au + 3.492 * au * au + 6.67 * au * au * au);
    double arg = 0.5 * M_PI * au * au;
    double c = std::cos(arg), s = std::sin(arg);
    C = 0.5 + f * s - g * c;
    S = 0.5 - f * c - g * s;
    if (u < 0.0) {
        C = -C;
        S = -S;
    }
}

// UTD transition function F(X) = 2j sqrt(X) e^{jX} int_{sqrt(X)}^inf e^{-j t^2} dt.
cplx transition_function(double X) {
    if (X <= 0.0) return cplx(0.0, 0.0);
    double u = std::sqrt(2.0 * X / M_PI);
    double C, S;
    fresnel_cs(u, C, S);
    cplx tail = std::sqrt(M_PI / 2.0) * cplx(0.5 - C, -(0.5 - S));
    cplx j(0.0, 1.0);
    return 2.0 * j * std::sqrt(X) * std::exp(j * X) * tail;
}

double wrap_2pi(double a) {
    a = std::fmod(a, 2.0 * M_PI);
    if (a < 0.0) a += 2.0 * M_PI;
    return a;
}

double circ_dist(double a, double b) {
    double d = std::fabs(wrap_2pi(a) - wrap_2pi(b));
    return std::min(d, 2.0 * M_PI - d);
}

// One cotangent * transition-function pair, with the Kouyoumjian-Pathak
// finite limit substituted near the cotangent poles so shadow/reflection
// boundaries evaluate cleanly.
cplx cot_term(double beta, double sign, double n_wedge, double kL, cplx R) {
    cplx j(0.0, 1.0);
    double arg = (M_PI + sign * beta) / (2.0 * n_wedge);
    double N = std::round((beta + sign * M_PI) / (2.0 * M_PI * n_wedge));
    double s = std::sin(arg);
    if (std::fabs(s) < 1e-6) {
        double eps = M_PI + sign * (beta - 2.0 * M_PI * n_wedge * N);
        double sgn = eps >= 0.0 ? 1.0 : -1.0;
        cplx e4 = std::exp(j * M_PI / 4.0);
        return R * n_wedge * e4 *
               (std::sqrt(2.0 * M_PI * kL) * sgn - 2.0 * kL * eps * e4);
    }
    double c = std::cos((2.0 * M_PI * n_wedge * N - beta) / 2.0);
    double a = 2.0 * c * c;
    return R * (std::cos(arg) / s) * transition_function(kL * a);
}

struct EdgeFrame {
    Vec3 axis;       // unit edge direction (oriented for the azimuth sweep)
    Vec3 u, v;       // u = face-0 tangent; azimuth measured toward v
    double n_wedge;  // exterior angle / pi
};

// Builds the edge-fixed frame: azimuth 0 on face 0, increasing through the
// exterior, reaching n*pi on face n. The sign ambiguities of the face
// tangents and the axis are resolved by requiring the outward normals to sit
// a quarter turn into the exterior.
EdgeFrame make_edge_frame(const EdgeSegment& edge) {
    EdgeFrame best;
    double best_err = 1e300;
    Vec3 e = edge.axis();
    double n_wedge = (2.0 * M_PI - edge.interior_angle) / M_PI;
    Vec3 t0_raw = normalized(cross(edge.face_normal[0], e));
    Vec3 tn_raw = normalized(cross(edge.face_normal[1], e));
    for (double sa : {+1.0, -1.0}) {
        Vec3 axis = e * sa;
        for (double s0 : {+1.0, -1.0}) {
            Vec3 u = t0_raw * s0;
            Vec3 v = cross(axis, u);
            auto az = [&](const Vec3& d) {
                return wrap_2pi(std::atan2(dot(d, v), dot(d, u)));
            };
            for (double sn : {+1.0, -1.0}) {
                Vec3 tn = tn_raw * sn;
                double err = circ_dist(az(edge.face_normal[0]), M_PI / 2.0) +
                             circ_dist(az(tn), n_wedge * M_PI) +
                             circ_dist(az(edge.face_normal[1]), n_wedge * M_PI - M_PI / 2.0);
                if (err < best_err) {
                    best_err = err;
                    best = EdgeFrame{axis, u, v, n_wedge};
                }
            }
        }
    }
    if (best_err > 1e-2) throw InputError("inconsistent wedge face metadata");
    return best;
}

double azimuth_of(const EdgeFrame& f, const Vec3& d) {
    Vec3 p = d - f.axis * dot(d, f.axis);
    return wrap_2pi(std::atan2(dot(p, f.v), dot(p, f.u)));
}

}  // namespace

bool enters_wedge_material(const EdgeSegment& edge, const Vec3& d) {
    bool behind0 = dot(d, edge.face_normal[0]) < 0.0;
    bool behind1 = dot(d, edge.face_normal[1]) < 0.0;
    // Convex material wedge: intersection of the half-spaces; reflex wedge
    // (interior > pi): union.
    return edge.interior_angle <= M_PI ? (behind0 && behind1) : (behind0 || behind1);
}

std::vector<Vec3> keller_cone_dirs(const EdgeSegment& edge, const Vec3& k_i,
                                   std::size_t n_dirs) {
    Vec3 axis = edge.axis();
    double c = dot(k_i, axis);
    double s2 = 1.0 - c * c;
    if (s2 < 1e-18) throw InputError("degenerate cone");
    double s = std::sqrt(s2);
    Vec3 u = normalized(k_i - axis * c);
    Vec3 v = cross(axis, u);
    std::vector<Vec3> out;
    out.reserve(n_dirs);
    for (std::size_t i = 0; i < n_dirs; ++i) {
        double psi = 2.0 * M_PI * static_cast<double>(i) / static_cast<double>(n_dirs);
        Vec3 d = axis * c + (u * std::cos(psi) + v * std::sin(psi)) * s;
        if (enters_wedge_material(edge, d)) continue;
        out.push_back(normalized(d));
    }
    return out;
}

PolAmp diffraction_interaction(const EdgeSegment& edge, const Vec3& q, const Vec3& k_i,
                               const Vec3& k_d, const Material& mat0, const Material& matn,
                               double s_prime, double s, double lambda) {
    (void)q;
    if (s_prime <= 0.0 || s <= 0.0)
        throw InputError("diffraction: segment lengths must be positive");
    EdgeFrame frame = make_edge_frame(edge);
    double cos_b = dot(k_i, frame.axis);
    double sin2_b = 1.0 - cos_b * cos_b;
    if (sin2_b < 1e-18) throw InputError("degenerate cone");
    double sin_b = std::sqrt(sin2_b);

    double phi_p = azimuth_of(frame, -1.0 * k_i);  // toward the source
    double phi = azimuth_of(frame, k_d);           // toward the observer
    double n = frame.n_wedge;
    double k_wave = 2.0 * M_PI / lambda;
    double L = s * s_prime / (s + s_prime) * sin2_b;
    double kL = k_wave * L;

    cplx j(0.0, 1.0);
    cplx front =
        -std::exp(-j * M_PI / 4.0) / (2.0 * n * std::sqrt(2.0 * M_PI * k_wave) * sin_b);

    // Luebbers heuristic: the (phi + phi') terms carry the Fresnel
    // reflection of face 0 at grazing angle phi' and of face n at
    // n*pi - phi. The hard coefficient needs the opposite parallel sign
    // convention (+1 at a perfect conductor).
    auto face_refl = [&](const Material& m, double grazing) {
        double ci = std::clamp(std::sin(std::clamp(grazing, 0.0, M_PI)), 1e-6, 1.0);
        return fresnel(ci, m, kSpeedOfLight / lambda);
    };
    FresnelCoeffs r0 = face_refl(mat0, phi_p);
    FresnelCoeffs rn = face_refl(matn, n * M_PI - phi);

    double bm = phi - phi_p, bp = phi + phi_p;
    cplx common = cot_term(bm, +1.0, n, kL, cplx(1.0)) + cot_term(bm, -1.0, n, kL, cplx(1.0));
    cplx D_soft = front * (common + cot_term(bp, -1.0, n, kL, r0.r_perp) +
                           cot_term(bp, +1.0, n, kL, rn.r_perp));
    cplx D_hard = front * (common + cot_term(bp, -1.0, n, kL, -r0.r_par) +
                           cot_term(bp, +1.0, n, kL, -rn.r_par));

    // Edge-fixed polarization bases: beta (in the plane of edge and ray) and
    // phi (azimuthal). Soft acts on the beta component, hard on phi.
    Vec3 phi_i = normalized(cross(frame.axis, k_i));
    Vec3 beta_i = cross(phi_i, k_i);
    Vec3 phi_d = normalized(cross(frame.axis, k_d));
    Vec3 beta_d = cross(phi_d, k_d);
    PolBasis edge_in{beta_i, phi_i};
    PolBasis edge_out{beta_d, phi_d};

    PolAmp T = PolAmp::diag(-D_soft, -D_hard);
    PolAmp into_edge = basis_transform(edge_in, polarization_basis(k_i));
    PolAmp out_of_edge = basis_transform(polarization_basis(k_d), edge_out);

    double sqrt_l_tilde = std::sqrt(s * s_prime / (s + s_prime));
    return out_of_edge * T * into_edge * sqrt_l_tilde;
}

PolAmp diffraction_amplitude(const EdgeSegment& edge, const Vec3& q, const Vec3& k_i,
                             const Vec3& k_d, const Material& mat0, const Material& matn,
                             double s_prime, double s, double lambda) {
    PolAmp inter =
        diffraction_interaction(edge, q, k_i, k_d, mat0, matn, s_prime, s, lambda);
    // inter carries sqrt(s s'/(s+s')); rescale to the conventional
    // A_d = sqrt(s'/(s(s+s'))) and attach the phase over s.
    double a_d = diffraction_spreading(s_prime, s);
    double l_tilde = std::sqrt(s * s_prime / (s + s_prime));
    double phase = -2.0 * M_PI * s / lambda;
    return inter * ((a_d / l_tilde) * cplx(std::cos(phase), std::sin(phase)));
}

PathGain chain(const std::vector<ChainHop>& hops, double lambda) {
    if (hops.empty()) throw InputError("chain: empty hop list");
    PolAmp T = PolAmp::identity();
    double total_d = 0.0;
    for (const auto& h : hops) {
        T = h.amp * T;  // later hops multiply from the left
        total_d += h.d;
    }
    PathGain g;
    g.T = T;
    g.tau = total_d / kSpeedOfLight;
    std::array<cplx, 2> rx = T.apply({cplx(1.0), cplx(0.0)});
    g.a = lambda / (4.0 * M_PI) * std::sqrt(std::norm(rx[0]) + std::norm(rx[1]));
    return g;
}

std::vector<CirTap> cir(const std::vector<PathGain>& paths, double f_hz) {
    if (f_hz <= 0.0) throw InputError("cir: frequency must be positive");
    std::vector<CirTap> taps;
    for (const auto& p : paths) {
        double phase = -2.0 * M_PI * f_hz * p.tau;
        cplx amp = p.a * cplx(std::cos(phase), std::sin(phase));
        bool merged = false;
        for (auto& t : taps) {
            if (std::fabs(t.tau - p.tau) <= 1e-12) {
                t.amp += amp;
                merged = true;
                break;
            }
        }
        if (!merged) taps.push_back({p.tau, amp});
    }
    std::sort(taps.begin(), taps.end(),
              [](const CirTap& a, const CirTap& b) { return a.tau < b.tau; });
    return taps;
}

std::vector<cplx> cfr(const std::vector<PathGain>& paths, const std::vector<double>& freqs) {
    if (freqs.empty()) throw InputError("cfr: empty frequency grid");
    std::vector<cplx> out;
    out.reserve(freqs.size());
    for (double f : freqs) {
        cplx h(0.0, 0.0);
        for (const auto& p : paths) {
            double phase = -2.0 * M_PI * f * p.tau;
            h += p.a * cplx(std::cos(phase), std::sin(phase));
        }
        out.push_back(h);
    }
    return out;
}

}  // namespace pcrt
