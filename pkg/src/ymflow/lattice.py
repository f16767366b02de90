"""Flat periodic lattice: grid geometry, stencils, quadrature, and field I/O.

The domain is the torus [0, L)^n sampled at N points per axis, spacing
h = L/N, sites at x = i*h. Derivatives are second-order central differences,
interpolation is multilinear with periodic wrap, and integration is the
midpoint rule sum * h^n (spectrally accurate for smooth periodic integrands).
"""

import struct

import numpy as np

__all__ = [
    "Grid", "central_diff", "interp", "integrate", "min_image",
    "write_ymf1", "read_ymf1", "LatticeError",
]

YMF1_MAGIC = b"YMF1"


class LatticeError(ValueError):
    pass


class Grid:
    """Periodic grid geometry: dimensions, spacing, and coordinate helpers."""

    def __init__(self, n=4, N=16, L=1.0):
        if n < 2:
            raise LatticeError("spatial dimension n must be >= 2, got %d" % n)
        if N < 8:
            raise LatticeError("resolution N must be >= 8 per axis, got %d" % N)
        if not (L > 0):
            raise LatticeError("period L must be positive, got %r" % L)
        self.n = int(n)
        self.N = int(N)
        self.L = float(L)
        self.h = self.L / self.N
        self.shape = (self.N,) * self.n
        self.size = self.N ** self.n
        # row-major strides of the flattened site index
        self.strides = np.array([self.N ** (self.n - 1 - d) for d in range(self.n)],
                                dtype=np.int64)

    def __repr__(self):
        return "Grid(n=%d, N=%d, L=%g)" % (self.n, self.N, self.L)

    def same_geometry(self, other):
        return (self.n, self.N, self.L) == (other.n, other.N, other.L)

    def axis_coords(self):
        return np.arange(self.N) * self.h

    def coords(self):
        """Site coordinates, shape (n, N, ..., N)."""
        ax = self.axis_coords()
        return np.stack(np.meshgrid(*([ax] * self.n), indexing="ij"))

    def displacement(self, x0):
        """Nearest-image displacement field x - x0, shape (n, *shape)."""
        x0 = np.asarray(x0, dtype=np.float64)
        if x0.shape != (self.n,):
            raise LatticeError("center has shape %r, expected (%d,)" % (x0.shape, self.n))
        ax = self.axis_coords()
        out = np.empty((self.n,) + self.shape)
        for d in range(self.n):
            dx = min_image(ax - x0[d], self.L)
            sh = [1] * self.n
            sh[d] = self.N
            out[d] = dx.reshape(sh)
        return out

    def radius2(self, x0):
        """Squared nearest-image distance |x - x0|^2 per site, shape *shape."""
        x0 = np.asarray(x0, dtype=np.float64)
        if x0.shape != (self.n,):
            raise LatticeError("center has shape %r, expected (%d,)" % (x0.shape, self.n))
        ax = self.axis_coords()
        out = np.zeros(self.shape)
        for d in range(self.n):
            dx = min_image(ax - x0[d], self.L) ** 2
            sh = [1] * self.n
            sh[d] = self.N
            out = out + dx.reshape(sh)
        return out


def min_image(dx, L):
    """Wrap displacements into the nearest-image interval (-L/2, L/2]."""
    dx = np.asarray(dx, dtype=np.float64)
    return dx - L * np.ceil(dx / L - 0.5)


def central_diff(values, direction, grid):
    """Second-order central difference along a spatial axis.

    `values` carries the n spatial axes first; trailing axes (matrix or
    packed components) ride along.
    """
    if not (0 <= direction < grid.n):
        raise LatticeError("direction %d out of range for n=%d" % (direction, grid.n))
    if values.shape[:grid.n] != grid.shape:
        raise LatticeError("field shape %r does not start with grid shape %r"
                           % (values.shape, grid.shape))
    return (np.roll(values, -1, axis=direction)
            - np.roll(values, 1, axis=direction)) / (2.0 * grid.h)


def integrate(values, grid):
    """Midpoint-rule integral: sum over sites * h^n.

    Non-finite integrand entries raise with the offending site index.
    """
    values = np.asarray(values)
    if values.shape != grid.shape:
        raise LatticeError("integrand shape %r != grid shape %r"
                           % (values.shape, grid.shape))
    total = float(values.sum(dtype=np.float64)) * grid.h ** grid.n
    if not np.isfinite(total):
        bad = np.argwhere(~np.isfinite(values))
        site = tuple(int(i) for i in bad[0]) if len(bad) else None
        raise LatticeError("non-finite integrand at site %r" % (site,))
    return total


def interp(values, x, grid):
    """Multilinear periodic interpolation at points x.

    x has shape (n,) or (Q, n); trailing component axes of `values` are
    interpolated together. Query points that land on grid sites (within a
    1e-9*h snap) reproduce site values exactly.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.shape[1] != grid.n:
        raise LatticeError("query points have %d coords, grid has n=%d"
                           % (x.shape[1], grid.n))
    if values.shape[:grid.n] != grid.shape:
        raise LatticeError("field shape %r does not start with grid shape %r"
                           % (values.shape, grid.shape))
    comp_shape = values.shape[grid.n:]
    flat = values.reshape((grid.size,) + comp_shape)

    u = x / grid.h
    i0 = np.floor(u).astype(np.int64)
    w = u - i0
    # snap to exact sites so aligned sampling is exact
    lo = w < 1e-9
    hi = w > 1.0 - 1e-9
    w[lo] = 0.0
    w[hi] = 0.0
    i0[hi] += 1
    i0 = np.mod(i0, grid.N)

    q = x.shape[0]
    out = np.zeros((q,) + comp_shape)
    for corner in range(1 << grid.n):
        wt = np.ones(q)
        idx = np.zeros(q, dtype=np.int64)
        for d in range(grid.n):
            bit = (corner >> d) & 1
            cd = i0[:, d] + bit
            cd[cd == grid.N] = 0
            idx += cd * grid.strides[d]
            wt = wt * (w[:, d] if bit else (1.0 - w[:, d]))
        nz = wt != 0.0
        if not nz.any():
            continue
        out[nz] += wt[nz].reshape((-1,) + (1,) * len(comp_shape)) * flat[idx[nz]]
    return out[0] if single else out


def write_ymf1(path, grid, m, values):
    """Write a lattice field snapshot.

    Layout: magic 'YMF1'; n, N, m, component count as little-endian int64;
    then float64 little-endian payload, sites row-major, components innermost.
    """
    values = np.ascontiguousarray(values, dtype=np.float64)
    if values.shape[:grid.n] != grid.shape:
        raise LatticeError("field shape %r does not start with grid shape %r"
                           % (values.shape, grid.shape))
    comps = int(np.prod(values.shape[grid.n:], dtype=np.int64)) if values.ndim > grid.n else 1
    with open(path, "wb") as fh:
        fh.write(YMF1_MAGIC)
        fh.write(struct.pack("<qqqq", grid.n, grid.N, m, comps))
        fh.write(values.astype("<f8").tobytes())


def read_ymf1(path, L=1.0):
    """Read a YMF1 snapshot; returns (grid, m, values) with components last.

    The header carries only lattice counts, so the physical period L is
    supplied by the caller (it defaults to the unit torus).
    """
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != YMF1_MAGIC:
            raise LatticeError("bad magic %r in %s" % (magic, path))
        n, N, m, comps = struct.unpack("<qqqq", fh.read(32))
        grid = Grid(n=n, N=N, L=L)
        payload = fh.read()
    expect = grid.size * comps * 8
    if len(payload) != expect:
        raise LatticeError("payload is %d bytes, expected %d" % (len(payload), expect))
    values = np.frombuffer(payload, dtype="<f8").astype(np.float64)
    values = values.reshape(grid.shape + (comps,))
    return grid, int(m), values
