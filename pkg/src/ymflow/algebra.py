"""Exact kernels for the antisymmetric matrix algebra so(m).

Elements are real antisymmetric m x m matrices; the group acting on them is
SO(m). Everything here is small dense linear algebra with no lattice
dependence: brackets, the invariant inner product, exponentials, adjoint
action, and the packed-coordinate representation used by the field modules.

Conventions:
    bracket(A, B) = AB - BA
    inner(A, B)   = -trace(AB) = sum_ab A_ab B_ab   (on antisymmetric input)
so for the standard so(3) generators inner(e_i, e_i) = 2.
"""

from functools import lru_cache

import numpy as np

__all__ = [
    "bracket", "inner", "expm", "adjoint",
    "so3_basis", "pair_index_list", "pair_basis", "structure_constants",
    "pack", "unpack", "random_algebra", "check_algebra", "check_group",
]

ANTISYM_TOL = 1e-12


def _require_square(a, name="matrix"):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim < 2 or a.shape[-1] != a.shape[-2]:
        raise ValueError("%s must have square trailing dims, got shape %r"
                         % (name, a.shape))
    return a


def check_algebra(a, tol=ANTISYM_TOL):
    """Validate antisymmetry; returns the array, raises ValueError otherwise."""
    a = _require_square(a, "algebra element")
    dev = np.abs(a + np.swapaxes(a, -1, -2)).max() if a.size else 0.0
    if dev > tol:
        raise ValueError("not antisymmetric: |A + A^T| = %.3e > %.1e" % (dev, tol))
    return a


def check_group(g, tol=1e-12):
    """Validate orthogonality and unit determinant of a rotation matrix."""
    g = _require_square(g, "group element")
    m = g.shape[-1]
    eye = np.eye(m)
    dev = np.abs(g @ np.swapaxes(g, -1, -2) - eye).max()
    if dev > tol:
        raise ValueError("not orthogonal: |g g^T - I| = %.3e > %.1e" % (dev, tol))
    ddev = np.abs(np.linalg.det(g) - 1.0).max()
    if ddev > max(tol, 1e-10):
        raise ValueError("determinant deviates from 1 by %.3e" % ddev)
    return g


def bracket(a, b):
    """Commutator AB - BA, batched over leading dims."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[-1] != b.shape[-2] or a.shape[-2] != b.shape[-1]:
        raise ValueError("bracket shape mismatch: %r vs %r" % (a.shape, b.shape))
    return a @ b - b @ a


def inner(a, b):
    """Invariant inner product -tr(AB); reduces the trailing matrix dims."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[-2:] != b.shape[-2:]:
        raise ValueError("inner shape mismatch: %r vs %r" % (a.shape, b.shape))
    # equals elementwise sum for antisymmetric input; written as -tr to keep
    # the definition exact for any argument
    return -np.einsum("...ij,...ji->...", a, b)


def expm(a):
    """Matrix exponential of an algebra element.

    m = 3 uses the closed-form rotation formula; other m use Taylor
    scaling-and-squaring (no Pade), terminating when the term norm drops
    below 1e-14 relative.
    """
    a = check_algebra(a)
    m = a.shape[-1]
    if m == 3:
        return _expm_so3(a)
    return _expm_taylor(a)


def _expm_so3(a):
    # rotation angle is the euclidean norm of the axis vector
    w1 = a[..., 2, 1]
    w2 = a[..., 0, 2]
    w3 = a[..., 1, 0]
    th2 = w1 * w1 + w2 * w2 + w3 * w3
    th = np.sqrt(th2)
    small = th < 1e-4
    with np.errstate(divide="ignore", invalid="ignore"):
        c1 = np.where(small, 1.0 - th2 / 6.0 + th2 * th2 / 120.0, np.sin(th) / th)
        c2 = np.where(small, 0.5 - th2 / 24.0 + th2 * th2 / 720.0,
                      (1.0 - np.cos(th)) / np.where(small, 1.0, th2))
    a2 = a @ a
    out = np.zeros(a.shape, dtype=np.float64)
    out[...] = np.eye(3)
    out += c1[..., None, None] * a + c2[..., None, None] * a2
    return out


def _expm_taylor(a, tol=1e-14):
    norm = np.abs(a).sum(axis=-1).max() if a.size else 0.0
    s = 0
    if norm > 0.5:
        s = int(np.ceil(np.log2(norm / 0.5)))
    t = a / (2.0 ** s)
    m = a.shape[-1]
    out = np.zeros(a.shape, dtype=np.float64)
    out[...] = np.eye(m)
    term = np.zeros_like(out)
    term[...] = np.eye(m)
    for k in range(1, 40):
        term = term @ t / k
        out = out + term
        if np.abs(term).max() <= tol * max(1.0, np.abs(out).max()):
            break
    for _ in range(s):
        out = out @ out
    return out


def adjoint(g, a):
    """Adjoint action g A g^T of a rotation on an algebra element."""
    g = np.asarray(g, dtype=np.float64)
    a = check_algebra(a)
    return g @ a @ np.swapaxes(g, -1, -2)


def so3_basis():
    """Standard generators (e1, e2, e3) with bracket(e1, e2) = e3 cyclically."""
    e1 = np.zeros((3, 3))
    e1[2, 1], e1[1, 2] = 1.0, -1.0
    e2 = np.zeros((3, 3))
    e2[0, 2], e2[2, 0] = 1.0, -1.0
    e3 = np.zeros((3, 3))
    e3[1, 0], e3[0, 1] = 1.0, -1.0
    return e1, e2, e3


@lru_cache(maxsize=None)
def pair_index_list(m):
    """Ordered index pairs (a, b), a < b, indexing the packed coordinates."""
    if m < 2:
        raise ValueError("algebra dimension m must be >= 2, got %d" % m)
    return tuple((a, b) for a in range(m) for b in range(a + 1, m))


@lru_cache(maxsize=None)
def pair_basis(m):
    """Basis matrices B_ab = E_ab - E_ba for the packed representation."""
    pairs = pair_index_list(m)
    basis = np.zeros((len(pairs), m, m))
    for q, (a, b) in enumerate(pairs):
        basis[q, a, b] = 1.0
        basis[q, b, a] = -1.0
    basis.setflags(write=False)
    return basis


@lru_cache(maxsize=None)
def structure_constants(m):
    """f with [B_p, B_q] = sum_r f[p,q,r] B_r in the pair basis."""
    basis = pair_basis(m)
    kk = basis.shape[0]
    f = np.zeros((kk, kk, kk))
    for p in range(kk):
        for q in range(kk):
            f[p, q] = pack(bracket(basis[p], basis[q]))
    f.setflags(write=False)
    return f


def pack(a):
    """Packed coordinates of an antisymmetric matrix: c_q = A[a_q, b_q]."""
    a = np.asarray(a, dtype=np.float64)
    m = a.shape[-1]
    pairs = pair_index_list(m)
    idx_a = [p[0] for p in pairs]
    idx_b = [p[1] for p in pairs]
    return a[..., idx_a, idx_b]


def unpack(c, m):
    """Inverse of pack: antisymmetric matrix from packed coordinates."""
    c = np.asarray(c, dtype=np.float64)
    pairs = pair_index_list(m)
    if c.shape[-1] != len(pairs):
        raise ValueError("packed length %d does not match m=%d (expect %d)"
                         % (c.shape[-1], m, len(pairs)))
    out = np.zeros(c.shape[:-1] + (m, m), dtype=np.float64)
    for q, (a, b) in enumerate(pairs):
        out[..., a, b] = c[..., q]
        out[..., b, a] = -c[..., q]
    return out


def random_algebra(rng, m, shape=(), scale=1.0):
    """Random algebra elements with normal packed coordinates."""
    kk = len(pair_index_list(m))
    c = rng.normal(size=tuple(shape) + (kk,)) * scale
    return unpack(c, m)
