"""Compiled per-site stencil kernels for the gauge-field operators.

Fields arrive flattened to (components, sites, packed) float64 arrays; the
periodic neighbor of a flat site index is computed arithmetically from the
row-major strides, so no index tables are kept in memory. Structure constants
are passed as their nonzero entries (so(3) has 6 of 27), which is what keeps
the bracket loops cheap. All kernels are serial: results are bitwise
reproducible and the acceptance budgets are sized for one core.
"""

import numpy as np
from numba import njit

__all__ = ["fc_nonzeros", "curvature_into", "div_curvature_into", "cov_deriv_into"]


def fc_nonzeros(fc):
    """Split a structure-constant tensor into parallel nonzero arrays."""
    b, c, a = np.nonzero(fc)
    return (b.astype(np.int64), c.astype(np.int64), a.astype(np.int64),
            np.ascontiguousarray(fc[b, c, a]))


@njit(cache=True)
def curvature_into(gam, strides, N, inv2h, fb, fcidx, fa, fv, pairs, out):
    """F_ij = d_i Gamma_j - d_j Gamma_i + [Gamma_i, Gamma_j] for all i < j."""
    npair = pairs.shape[0]
    S = gam.shape[1]
    kk = gam.shape[2]
    nnz = fv.shape[0]
    for s in range(S):
        for p in range(npair):
            i = pairs[p, 0]
            j = pairs[p, 1]
            ci = (s // strides[i]) % N
            cj = (s // strides[j]) % N
            sip = s + strides[i] * (1 if ci + 1 < N else 1 - N)
            sim = s - strides[i] * (1 if ci > 0 else 1 - N)
            sjp = s + strides[j] * (1 if cj + 1 < N else 1 - N)
            sjm = s - strides[j] * (1 if cj > 0 else 1 - N)
            for a in range(kk):
                out[p, s, a] = ((gam[j, sip, a] - gam[j, sim, a])
                                - (gam[i, sjp, a] - gam[i, sjm, a])) * inv2h
            for q in range(nnz):
                out[p, s, fa[q]] += fv[q] * gam[i, s, fb[q]] * gam[j, s, fcidx[q]]


@njit(cache=True)
def div_curvature_into(gam, F, strides, N, inv2h, fb, fcidx, fa, fv,
                       pidx, psgn, out):
    """(sum_i cov_deriv_i F)_j = sum_i (d_i F_ij + [Gamma_i, F_ij])."""
    n = gam.shape[0]
    S = gam.shape[1]
    kk = gam.shape[2]
    nnz = fv.shape[0]
    for s in range(S):
        for j in range(n):
            for a in range(kk):
                out[j, s, a] = 0.0
            for i in range(n):
                if i == j:
                    continue
                p = pidx[i, j]
                sg = psgn[i, j]
                ci = (s // strides[i]) % N
                sip = s + strides[i] * (1 if ci + 1 < N else 1 - N)
                sim = s - strides[i] * (1 if ci > 0 else 1 - N)
                for a in range(kk):
                    out[j, s, a] += sg * (F[p, sip, a] - F[p, sim, a]) * inv2h
                for q in range(nnz):
                    out[j, s, fa[q]] += fv[q] * gam[i, s, fb[q]] * sg * F[p, s, fcidx[q]]


@njit(cache=True)
def cov_deriv_into(gam, F, direction, strides, N, inv2h, fb, fcidx, fa, fv, out):
    """cov_deriv_i F_pq = d_i F_pq + [Gamma_i, F_pq] for every stored pair."""
    npair = F.shape[0]
    S = F.shape[1]
    kk = F.shape[2]
    nnz = fv.shape[0]
    i = direction
    for s in range(S):
        ci = (s // strides[i]) % N
        sip = s + strides[i] * (1 if ci + 1 < N else 1 - N)
        sim = s - strides[i] * (1 if ci > 0 else 1 - N)
        for p in range(npair):
            for a in range(kk):
                out[p, s, a] = (F[p, sip, a] - F[p, sim, a]) * inv2h
            for q in range(nnz):
                out[p, s, fa[q]] += fv[q] * gam[i, s, fb[q]] * F[p, s, fcidx[q]]
