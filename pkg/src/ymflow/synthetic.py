"""Synthetic measures and densities with closed-form scaling behavior.

These constructions carry their invariances exactly, so the dilation and
density laws can be asserted at tight tolerances instead of through
discretization budgets:

  * self_similar_measure builds atoms of |F|^2 = (T-t)^{-2} rho(|x|/sqrt(T-t))
    in similarity coordinates -- geometric time layers and spatial nodes at
    y sqrt(T-t) for a fixed reference cloud y -- so a parabolic dilation by
    kappa with kappa^2 a layer-ratio power maps atom onto atom exactly.
    The exponent -2 is forced by invariance: dilating the density by lambda
    multiplies mass by lambda^{4-2a}, which is scale-free only at a = 2.
  * plane_measure concentrates constant density on an axis-aligned plane;
    slab densities over a d-plane behave like R^{4+d-n}, constant in R
    exactly when d = n-4.
  * random_measure gives reproducible atom clouds for property tests.
"""

import numpy as np

from .blowup import SpacetimeMeasure
from .gauge import radial_splice

__all__ = [
    "bump_profile", "self_similar_density", "self_similar_measure",
    "plane_measure", "random_measure", "DensityStore",
]


def bump_profile(s, inner=0.5, outer=1.0):
    """Smooth radial profile: 1 inside, exp-splice to 0 on [inner, outer]."""
    return radial_splice(np.asarray(s, dtype=np.float64), inner, outer)


def self_similar_density(T, inner=0.5, outer=1.0, amplitude=1.0):
    """|F|^2(x, t) = amplitude (T-t)^{-2} rho(|x|/sqrt(T-t)) as a callable."""
    def density(x, t):
        x = np.atleast_2d(np.asarray(x, dtype=np.float64))
        tau = T - t
        if tau <= 0.0:
            return np.zeros(len(x))
        s = np.sqrt(np.einsum("ak,ak->a", x, x) / tau)
        return amplitude * tau ** -2 * bump_profile(s, inner, outer)
    return density


def _reference_cloud(n, nodes_per_axis, extent):
    """Cell-centered cube grid of side 2*extent with its cell volume."""
    ax = (np.arange(nodes_per_axis) + 0.5) / nodes_per_axis
    ax = extent * (2.0 * ax - 1.0)
    pts = np.stack(np.meshgrid(*[ax] * n, indexing="ij"),
                   axis=-1).reshape(-1, n)
    cell = (2.0 * extent / nodes_per_axis) ** n
    return pts, cell


def self_similar_measure(n=4, T=0.0, tau_min=1.0 / 64.0, tau_max=16.0,
                         layers_per_octave=4, nodes_per_axis=9,
                         inner=0.5, outer=1.0, amplitude=1.0):
    """Exactly self-similar atom measure concentrating at (0, T).

    Time layers sit at tau = T - t on a geometric ladder with
    2^{1/layers_per_octave} spacing; the spatial cloud at each layer is the
    fixed reference cube scaled by sqrt(tau). A parabolic dilation about
    (0, T) by kappa = 2^{k/2} permutes the layers and maps nodes onto nodes,
    so the dilated measure coincides with the original on common windows.
    """
    g = 2.0 ** (1.0 / layers_per_octave)
    count = int(np.floor(np.log(tau_max / tau_min) / np.log(g))) + 1
    taus = tau_min * g ** np.arange(count)
    # layer thickness proportional to tau keeps dt/tau constant across the
    # ladder, preserving exact self-similarity of the weights
    dt_frac = (g - 1.0 / g) / 2.0
    ref, ref_cell = _reference_cloud(n, nodes_per_axis, outer)
    s = np.sqrt(np.einsum("ak,ak->a", ref, ref))
    prof = amplitude * bump_profile(s, inner, outer)
    keep = prof > 0.0
    ref, prof = ref[keep], prof[keep]
    xs, ts, ws, lay = [], [], [], []
    for k, tau in enumerate(taus):
        scale = np.sqrt(tau)
        # w = 1/2 tau^{-2} rho * (scale^n ref_cell) * (dt_frac * tau)
        w = 0.5 * prof * tau ** -2 * scale ** n * ref_cell * (dt_frac * tau)
        xs.append(ref * scale)
        ts.append(np.full(len(prof), T - tau))
        ws.append(w)
        lay.append(np.full(len(prof), k, dtype=np.int64))
    return SpacetimeMeasure(np.concatenate(xs), np.concatenate(ts),
                            np.concatenate(ws), np.concatenate(lay),
                            T - taus, dt_frac * taus, L=None,
                            origin="synthetic:self-similar")


def plane_measure(n, axes, density=1.0, extent=4.0, nodes_per_axis=65,
                  times=(-1.0,), layer_dt=1.0, offset=None):
    """Constant surface density on the axis-aligned plane spanned by `axes`.

    Atoms tile the plane out to `extent` in each spanned direction at every
    listed time; the remaining coordinates sit at `offset` (default 0).
    """
    axes = sorted(axes)
    d = len(axes)
    if d == 0:
        pts = np.zeros((1, n))
        cell = 1.0
    else:
        grid, cell = _reference_cloud(d, nodes_per_axis, extent)
        pts = np.zeros((len(grid), n))
        for j, a in enumerate(axes):
            pts[:, a] = grid[:, j]
    if offset is not None:
        pts = pts + np.asarray(offset, dtype=np.float64)
    times = np.asarray(times, dtype=np.float64)
    xs, ts, ws, lay = [], [], [], []
    for k, t in enumerate(times):
        xs.append(pts)
        ts.append(np.full(len(pts), t))
        ws.append(np.full(len(pts), density * cell * layer_dt))
        lay.append(np.full(len(pts), k, dtype=np.int64))
    return SpacetimeMeasure(np.concatenate(xs), np.concatenate(ts),
                            np.concatenate(ws), np.concatenate(lay),
                            times, np.full(len(times), layer_dt),
                            L=None, origin="synthetic:plane(d=%d)" % d)


def random_measure(rng, count, n, box=1.0, t_span=(0.0, 1.0), layers=8,
                   w_scale=1.0):
    """Reproducible random atom cloud on `layers` uniform time layers."""
    times = np.linspace(t_span[0], t_span[1], layers)
    dt = (t_span[1] - t_span[0]) / max(layers - 1, 1)
    lay = rng.integers(0, layers, size=count)
    xs = rng.uniform(-box, box, size=(count, n))
    ws = w_scale * rng.uniform(0.0, 1.0, size=count)
    return SpacetimeMeasure(xs, times[lay], ws, lay, times,
                            np.full(layers, dt), L=None,
                            origin="synthetic:random")


class DensityStore:
    """Closed-form |F|^2(x, t) exposed through the snapshot-slice interface.

    Wraps a density callable (points, t) -> values so the Gaussian-weighted
    quadratures and the concentration scan can consume an analytic field
    exactly as they consume a stored flow: `grid`, `times`, `time_range`,
    and per-slice `fnorm2_at`.  The density is evaluated at the nearest-image
    displacement from `center`, so profiles written about the origin land at
    an arbitrary torus point.
    """

    def __init__(self, density, grid, t_lo, t_hi, center=None, stamps=None):
        if not t_hi > t_lo:
            raise ValueError("need t_hi > t_lo, got [%g, %g]" % (t_lo, t_hi))
        self.density = density
        self.grid = grid
        self.t_lo = float(t_lo)
        self.t_hi = float(t_hi)
        if center is None:
            center = np.zeros(grid.n)
        self.center = np.asarray(center, dtype=np.float64)
        if stamps is None:
            stamps = np.array([self.t_lo, self.t_hi])
        self.stamps = np.asarray(stamps, dtype=np.float64)
        if (self.stamps.min() < self.t_lo - 1e-12
                or self.stamps.max() > self.t_hi + 1e-12):
            raise ValueError("stamps outside [t_lo, t_hi]")
        self._disp = grid.displacement(self.center)
        self._pts = self._disp.reshape(grid.n, -1).T.copy()

    @property
    def times(self):
        return self.stamps

    def time_range(self):
        return (self.t_lo, self.t_hi)

    def fnorm2_at(self, t):
        lo, hi = self.time_range()
        if t < lo - 1e-12 or t > hi + 1e-12:
            raise ValueError("time %g outside [%g, %g]" % (t, lo, hi))
        return np.asarray(self.density(self._pts, t),
                          dtype=np.float64).reshape(self.grid.shape)
