// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <complex>

#include "pcrt/vec3.hpp"

namespace pcrt {

using cplx = std::complex<double>;

// 2x2 complex matrix in row-major order; carries the polarimetric transfer
// of one hop (field components in the local transverse bases).
struct PolAmp {
    std::array<cplx, 4> m{};  // [m00 m01; m10 m11]

    static PolAmp identity() {
        PolAmp a;
        a.m = {cplx(1.0), cplx(0.0), cplx(0.0), cplx(1.0)};
        return a;
    }
    static PolAmp zero() { return PolAmp{}; }
    static PolAmp diag(cplx d0, cplx d1) {
        PolAmp a;
        a.m = {d0, cplx(0.0), cplx(0.0), d1};
        return a;
    }

    cplx& operator()(int r, int c) { return m[r * 2 + c]; }
    const cplx& operator()(int r, int c) const { return m[r * 2 + c]; }

    PolAmp operator*(const PolAmp& o) const {
        PolAmp r;
        r.m[0] = m[0] * o.m[0] + m[1] * o.m[2];
        r.m[1] = m[0] * o.m[1] + m[1] * o.m[3];
        r.m[2] = m[2] * o.m[0] + m[3] * o.m[2];
        r.m[3] = m[2] * o.m[1] + m[3] * o.m[3];
        return r;
    }
    PolAmp operator*(cplx s) const {
        PolAmp r;
        for (int i = 0; i < 4; ++i) r.m[i] = m[i] * s;
        return r;
    }

    std::array<cplx, 2> apply(const std::array<cplx, 2>& v) const {
        return {m[0] * v[0] + m[1] * v[1], m[2] * v[0] + m[3] * v[1]};
    }

    double frobenius_sq() const {
        double s = 0.0;
        for (const auto& e : m) s += std::norm(e);
        return s;
    }

    // Largest singular value (2x2 closed form).
    double sigma_max() const;

    bool finite() const;
};

// Orthonormal transverse pair for a propagation direction k; {e_p, e_q, k}
// right-handed.
struct PolBasis {
    Vec3 e_p, e_q;
};

// Deterministic basis for a unit direction: e_p = normalize(z x k), with
// e_p = x_hat at the poles (|k_z| > 1 - 1e-9); e_q = k x e_p.
PolBasis polarization_basis(const Vec3& k);

// Basis change matrix: entry (i, j) = to.e_i . from.e_j. Orthogonal whenever
// both bases are transverse to the same direction.
PolAmp basis_transform(const PolBasis& to, const PolBasis& from);

}  // namespace pcrt
