// SPDX-License-Identifier: Apache-2.0
#include "pcrt/polarization.hpp"

#include <cmath>

namespace pcrt {

double PolAmp::sigma_max() const {
    // Singular values of a 2x2: from eigenvalues of M^H M.
    double a = std::norm(m[0]) + std::norm(m[2]);
    double d = std::norm(m[1]) + std::norm(m[3]);
    cplx b = std::conj(m[0]) * m[1] + std::conj(m[2]) * m[3];
    double tr = a + d;
    double disc = std::sqrt(std::max(0.0, (a - d) * (a - d) + 4.0 * std::norm(b)));
    return std::sqrt(std::max(0.0, 0.5 * (tr + disc)));
}

bool PolAmp::finite() const {
    for (const auto& e : m)
        if (!std::isfinite(e.real()) || !std::isfinite(e.imag())) return false;
    return true;
}

PolBasis polarization_basis(const Vec3& k) {
    PolBasis b;
    if (std::fabs(k.z) > 1.0 - 1e-9) {
        b.e_p = Vec3{1, 0, 0};
    } else {
        b.e_p = normalized(cross(Vec3{0, 0, 1}, k));
    }
    b.e_q = cross(k, b.e_p);
    return b;
}

PolAmp basis_transform(const PolBasis& to, const PolBasis& from) {
    PolAmp d;
    d.m[0] = dot(to.e_p, from.e_p);
    d.m[1] = dot(to.e_p, from.e_q);
    d.m[2] = dot(to.e_q, from.e_p);
    d.m[3] = dot(to.e_q, from.e_q);
    return d;
}

}  // namespace pcrt
