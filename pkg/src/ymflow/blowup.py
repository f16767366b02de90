"""Parabolic rescaling of connections and of spacetime energy measures.

Two families of exact affine maps:

    point map      P_{z0,lam}(x, t)   = (x0 + lam x, t0 + lam^2 t)
    atom dilation  (x, t, w) -> ((x-x0)/lam, (t-t0)/lam^2, lam^{2-n} w)

so that the dilated measure realizes mu'(A) = lam^{2-n} mu(P_{z0,lam}(A)).
The Euclidean dilation acts on space alone with the weight factor
lam^{4-n}. Measures are finite atom lists, never grid densities: the laws
above then hold with zero discretization error and every scaling identity
is testable at machine precision.

Connections rescale via coefficient matrices,

    Gamma^{lam,z0}_t(x) = lam Gamma_{lam^2 t + t0}(lam x + x0),

which multiplies curvature by lam^2 under the same substitution.
"""

from dataclasses import dataclass, field, replace

import numpy as np

from . import gauge
from .entropy import SpacetimePoint, _as_center
from .lattice import Grid, interp, min_image

__all__ = [
    "BlowupError", "SpacetimeMeasure", "RescaledConnectionView",
    "measure_from_store", "measure_from_density",
    "parabolic_dilate", "euclidean_dilate", "point_map",
    "theta_slice", "theta_slab", "theta_dilation_check",
    "rescale_connection", "curvature_scaling_check",
    "tangent_measure_approx", "parabolic_mass_bound", "tv_distance",
]


class BlowupError(ValueError):
    pass


@dataclass
class SpacetimeMeasure:
    """Finite atom measure sum_a w_a delta_{(x_a, t_a)} with layer metadata.

    Atoms are grouped into time layers (`layer_of` indexes into
    `layer_times` / `layer_dts`); slice densities divide by the layer
    thickness, and the grouping survives dilations exactly because indices
    never touch floating point.
    """
    xs: np.ndarray          # (A, n)
    ts: np.ndarray          # (A,)
    ws: np.ndarray          # (A,)
    layer_of: np.ndarray    # (A,) int
    layer_times: np.ndarray
    layer_dts: np.ndarray
    L: float = None         # spatial period, None for non-periodic coords
    origin: str = "atoms"

    def __post_init__(self):
        self.xs = np.atleast_2d(np.asarray(self.xs, dtype=np.float64))
        self.ts = np.asarray(self.ts, dtype=np.float64)
        self.ws = np.asarray(self.ws, dtype=np.float64)
        self.layer_of = np.asarray(self.layer_of, dtype=np.int64)
        self.layer_times = np.asarray(self.layer_times, dtype=np.float64)
        self.layer_dts = np.asarray(self.layer_dts, dtype=np.float64)
        if not (len(self.xs) == len(self.ts) == len(self.ws)
                == len(self.layer_of)):
            raise BlowupError("atom arrays disagree in length")
        if (self.ws < 0.0).any():
            raise BlowupError("weights must be nonnegative")
        if len(self.ws) and not np.isfinite(self.ws.sum()):
            raise BlowupError("total mass must be finite")

    @property
    def n(self):
        return self.xs.shape[1] if self.xs.size else 0

    def arrays(self):
        return self.xs, self.ts, self.ws

    def total_mass(self):
        return float(self.ws.sum()) if len(self.ws) else 0.0

    def __len__(self):
        return len(self.ws)

    def write_csv(self, path):
        n = self.n
        with open(path, "w") as fh:
            fh.write("# n=%d origin=%s L=%r\n" % (n, self.origin, self.L))
            fh.write(",".join(["x%d" % (i + 1) for i in range(n)]
                              + ["t", "w"]) + "\n")
            for a in range(len(self.ws)):
                row = ["%.17g" % v for v in self.xs[a]]
                row += ["%.17g" % self.ts[a], "%.17g" % self.ws[a]]
                fh.write(",".join(row) + "\n")


def read_measure_csv(path, layer_dt=None):
    with open(path) as fh:
        header = fh.readline().strip()
        fh.readline()
        rows = np.array([[float(v) for v in line.split(",")]
                         for line in fh if line.strip()])
    meta = dict(kv.split("=", 1) for kv in header.lstrip("# ").split())
    n = int(meta["n"])
    L = None if meta.get("L") in (None, "None") else float(meta["L"])
    if rows.size == 0:
        z = np.zeros(0)
        return SpacetimeMeasure(np.zeros((0, n)), z, z, z.astype(int),
                                z, z, L=L, origin=meta.get("origin", "csv"))
    xs, ts, ws = rows[:, :n], rows[:, n], rows[:, n + 1]
    times, inv = np.unique(ts, return_inverse=True)
    if layer_dt is None:
        gaps = np.diff(times)
        layer_dt = float(gaps.min()) if len(gaps) else 1.0
    dts = np.full(len(times), layer_dt)
    return SpacetimeMeasure(xs, ts, ws, inv, times, dts, L=L,
                            origin=meta.get("origin", "csv"))


def _layer_dts_of(times):
    """Trapezoid-style layer thickness for a sorted stamp sequence."""
    times = np.asarray(times, dtype=np.float64)
    if len(times) == 1:
        return np.array([1.0])
    dts = np.empty(len(times))
    dts[1:-1] = 0.5 * (times[2:] - times[:-2])
    dts[0] = 0.5 * (times[1] - times[0])
    dts[-1] = 0.5 * (times[-1] - times[-2])
    return dts


def measure_from_store(store, t1=None, t2=None, threshold=0.0, stride=1):
    """Atoms w = 1/2 |F|^2 h^n Delta_t at snapshot stamps in [t1, t2].

    `stride` coarsens the spatial sampling (weights scale with the coarse
    cell volume so mass is a Riemann sum either way); zero-weight atoms and
    atoms below `threshold` are dropped.
    """
    grid = store.grid
    stamps = [t for t in store.times
              if (t1 is None or t >= t1 - 1e-12)
              and (t2 is None or t <= t2 + 1e-12)]
    if not stamps:
        z = np.zeros(0)
        return SpacetimeMeasure(np.zeros((0, grid.n)), z, z,
                                z.astype(int), z, z, L=grid.L,
                                origin="store:empty")
    stamps = np.asarray(stamps)
    dts = _layer_dts_of(stamps)
    cell = (grid.h * stride) ** grid.n
    sl = (slice(None, None, stride),) * grid.n
    coords = np.stack(np.meshgrid(*[grid.axis_coords()[::stride]] * grid.n,
                                  indexing="ij"), axis=-1).reshape(-1, grid.n)
    xs, ts, ws, lay = [], [], [], []
    for k, t in enumerate(stamps):
        f2 = gauge.fnorm2(gauge.curvature(store.connection_at(t)))[sl]
        w = 0.5 * f2.reshape(-1) * cell * dts[k]
        keep = w > threshold
        if not keep.any():
            continue
        xs.append(coords[keep])
        ts.append(np.full(int(keep.sum()), t))
        ws.append(w[keep])
        lay.append(np.full(int(keep.sum()), k, dtype=np.int64))
    if not xs:
        z = np.zeros(0)
        return SpacetimeMeasure(np.zeros((0, grid.n)), z, z,
                                z.astype(int), stamps, dts, L=grid.L,
                                origin="store:empty")
    return SpacetimeMeasure(np.concatenate(xs), np.concatenate(ts),
                            np.concatenate(ws), np.concatenate(lay),
                            stamps, dts, L=grid.L, origin="store")


def measure_from_density(density, grid, times, L=None, threshold=0.0):
    """Atoms w = 1/2 density(x, t) h^n Delta_t for a callable density."""
    times = np.asarray(times, dtype=np.float64)
    dts = _layer_dts_of(times)
    coords = np.stack(np.meshgrid(*[grid.axis_coords()] * grid.n,
                                  indexing="ij"), axis=-1).reshape(-1, grid.n)
    cell = grid.h ** grid.n
    xs, ts, ws, lay = [], [], [], []
    for k, t in enumerate(times):
        w = 0.5 * np.asarray(density(coords, t)).reshape(-1) * cell * dts[k]
        keep = w > threshold
        if not keep.any():
            continue
        xs.append(coords[keep])
        ts.append(np.full(int(keep.sum()), t))
        ws.append(w[keep])
        lay.append(np.full(int(keep.sum()), k, dtype=np.int64))
    if not xs:
        z = np.zeros(0)
        return SpacetimeMeasure(np.zeros((0, grid.n)), z, z,
                                z.astype(int), times, dts,
                                L=L if L is not None else grid.L,
                                origin="density:empty")
    return SpacetimeMeasure(np.concatenate(xs), np.concatenate(ts),
                            np.concatenate(ws), np.concatenate(lay),
                            times, dts, L=L if L is not None else grid.L,
                            origin="density")


def point_map(z0, lam, z):
    """P_{z0,lam}(z) = (x0 + lam z_x, t0 + lam^2 z_t)."""
    z0, z = _as_center(z0), _as_center(z)
    return SpacetimePoint(z0.x + lam * z.x, z0.t + lam * lam * z.t)


def parabolic_dilate(measure, z0, lam):
    """Pushforward (x,t,w) -> ((x-x0)/lam, (t-t0)/lam^2, lam^{2-n} w)."""
    if lam <= 0.0:
        raise BlowupError("dilation scale must be positive, got %g" % lam)
    z0 = _as_center(z0)
    n = measure.n if len(measure) else len(z0.x)
    fac = lam ** (2 - n)
    return replace(
        measure,
        xs=(measure.xs - z0.x) / lam,
        ts=(measure.ts - z0.t) / lam ** 2,
        ws=measure.ws * fac,
        layer_times=(measure.layer_times - z0.t) / lam ** 2,
        layer_dts=measure.layer_dts / lam ** 2,
        L=None if measure.L is None else measure.L / lam,
        origin=measure.origin + ";P(lam=%g)" % lam)


def euclidean_dilate(measure, x0, lam):
    """Spatial pushforward x -> (x-x0)/lam with weight factor lam^{4-n}."""
    if lam <= 0.0:
        raise BlowupError("dilation scale must be positive, got %g" % lam)
    x0 = np.asarray(x0, dtype=np.float64)
    n = measure.n if len(measure) else len(x0)
    return replace(
        measure,
        xs=(measure.xs - x0) / lam,
        ws=measure.ws * lam ** (4 - n),
        L=None if measure.L is None else measure.L / lam,
        origin=measure.origin + ";D(lam=%g)" % lam)


def _nearest_layer(measure, t):
    if len(measure.layer_times) == 0:
        raise BlowupError("measure has no layers")
    return int(np.argmin(np.abs(measure.layer_times - t)))


def theta_slice(measure, z, r):
    """Slice density r^4 int_{t = z_t - r^2} G_z dmu* (one atom layer).

    The nearest layer to the requested slice time supplies the atoms; its
    thickness converts layer mass back into a time density.
    """
    z = _as_center(z)
    if r <= 0.0:
        raise BlowupError("slice scale must be positive, got %g" % r)
    if len(measure) == 0:
        return 0.0
    k = _nearest_layer(measure, z.t - r * r)
    sel = measure.layer_of == k
    if not sel.any():
        return 0.0
    dx = measure.xs[sel] - z.x
    if measure.L is not None:
        dx = min_image(dx, measure.L)
    r2 = np.einsum("ak,ak->a", dx, dx)
    n = measure.n
    tau = r * r
    g = np.exp(-r2 / (4.0 * tau)) / (4.0 * np.pi * tau) ** (n / 2.0)
    return float(r ** 4 * (g * measure.ws[sel]).sum()
                 / measure.layer_dts[k])


def theta_slab(measure, z, R, phi=None):
    """Slab density R^2 int_{T_R(z)} phi^2 G_z dmu on atom measures."""
    from .entropy import _theta_slab_atoms
    return _theta_slab_atoms(measure, _as_center(z), R, phi, L=measure.L)


def theta_dilation_check(measure, z0, z, lam, r):
    """|Theta(P_{z0,lam} mu, z, r) - Theta(mu, P_{z0,lam}(z), lam r)|."""
    lhs = theta_slice(parabolic_dilate(measure, z0, lam), z, r)
    rhs = theta_slice(measure, point_map(z0, lam, z), lam * r)
    return abs(lhs - rhs)


@dataclass(frozen=True)
class RescaledConnectionView:
    """Lazy view of Gamma^{lam,z0}_t(x) = lam Gamma_{lam^2 t + t0}(lam x + x0).

    Evaluation queries outside the base store's time window are range
    errors, never extrapolations.
    """
    store: object
    z0: SpacetimePoint
    lam: float
    window: tuple = field(init=False)

    def __post_init__(self):
        if self.lam <= 0.0:
            raise BlowupError("rescaling factor must be positive, got %g"
                              % self.lam)
        object.__setattr__(self, "z0", _as_center(self.z0))
        lo, hi = self.store.time_range()
        object.__setattr__(self, "window",
                           ((lo - self.z0.t) / self.lam ** 2,
                            (hi - self.z0.t) / self.lam ** 2))

    def base_time(self, t):
        tb = self.lam ** 2 * t + self.z0.t
        lo, hi = self.store.time_range()
        if tb < lo - 1e-12 or tb > hi + 1e-12:
            raise BlowupError("rescaled time %g maps to %g outside the base "
                              "window [%g, %g]" % (t, tb, lo, hi))
        return tb

    def materialize(self, grid, t):
        """Sample the view on `grid` at rescaled time t as a ConnectionField."""
        base = self.store.connection_at(self.base_time(t))
        bgrid = base.grid
        pts = np.stack(np.meshgrid(*[grid.axis_coords()] * grid.n,
                                   indexing="ij"), axis=-1).reshape(-1, grid.n)
        q = np.mod(self.lam * pts + self.z0.x, bgrid.L)
        vals = np.moveaxis(base.gamma, 0, bgrid.n)   # (*shape, n, K)
        samp = interp(vals, q, bgrid)                # (Q, n, K)
        gam = np.moveaxis(samp.reshape(grid.shape + samp.shape[1:]),
                          grid.n, 0)
        return gauge.ConnectionField(grid, base.m,
                                     np.ascontiguousarray(self.lam * gam))


def rescale_connection(store, z0, lam):
    return RescaledConnectionView(store, z0, lam)


def curvature_scaling_check(store, z0, lam, sample_grid, times):
    """max |F(materialized view) - lam^2 F(base at mapped points)|.

    Zero for grid-aligned lam = 1; O(h^2) interpolation error otherwise.
    """
    view = rescale_connection(store, z0, lam)
    z0 = view.z0
    bgrid = store.grid
    wraps = lam * sample_grid.L / bgrid.L
    if abs(wraps - round(wraps)) > 1e-9 or round(wraps) < 1:
        raise BlowupError(
            "sample grid period %g maps to %g base periods; curvature of a "
            "materialized view is only consistent when lam*L_sample is a "
            "whole multiple of the base period %g"
            % (sample_grid.L, wraps, bgrid.L))
    worst = 0.0
    pts = np.stack(np.meshgrid(*[sample_grid.axis_coords()] * sample_grid.n,
                               indexing="ij"), axis=-1).reshape(-1, sample_grid.n)
    q = np.mod(lam * pts + z0.x, bgrid.L)
    for t in times:
        ff = gauge.curvature(view.materialize(sample_grid, t)).f
        base = store.connection_at(view.base_time(t))
        bf = gauge.curvature(base).f                # (P, *shape, K)
        vals = np.moveaxis(bf, 0, bgrid.n)          # (*shape, P, K)
        samp = interp(vals, q, bgrid)
        ref = np.moveaxis(samp.reshape(sample_grid.shape + samp.shape[1:]),
                          sample_grid.n, 0)
        worst = max(worst, float(np.abs(ff - lam ** 2 * ref).max()))
    return worst


def parabolic_mass_bound(measure, z, r_values):
    """r^{2-n} mu(P_r(z)) over the given scales (P_r = B_r x (t-r^2, t])."""
    z = _as_center(z)
    out = np.zeros(len(r_values))
    if len(measure) == 0:
        return out
    dx = measure.xs - z.x
    if measure.L is not None:
        dx = min_image(dx, measure.L)
    d2 = np.einsum("ak,ak->a", dx, dx)
    n = measure.n
    for i, r in enumerate(r_values):
        sel = (d2 <= r * r) & (measure.ts > z.t - r * r) & (measure.ts <= z.t)
        out[i] = r ** (2 - n) * float(measure.ws[sel].sum())
    return out


def tangent_measure_approx(store, z0, lams, threshold=0.0, stride=1,
                           bound_scales=None):
    """Dilated energy measures P_{z0,lam_i}(mu) approximating tangents.

    For each descending lam the base measure is built on the slab
    [t0 - 4 lam^2, t0) and parabolically dilated, so every output lives on
    the fixed window tau in (0, 4]. Scales whose slab is not covered by
    stored stamps stop the sequence; the prefix is returned together with a
    truncation notice. Each entry reports the uniform-bound diagnostic
    sup_r r^{2-n} mu_i(P_r(0)) over a dyadic grid.
    """
    z0 = _as_center(z0)
    lams = list(lams)
    if any(np.diff(lams) >= 0.0):
        raise BlowupError("scales must be strictly descending")
    lo, hi = store.time_range()
    if bound_scales is None:
        bound_scales = 2.0 ** -np.arange(0, 6)
    origin = SpacetimePoint(np.zeros(store.grid.n), 0.0)
    measures, bounds = [], []
    notice = None
    for lam in lams:
        t1 = z0.t - 4.0 * lam ** 2
        if t1 < lo - 1e-12 or z0.t > hi + 1e-12:
            notice = ("window exhausted at lam=%g: slab [%g, %g] not within "
                      "store range [%g, %g]" % (lam, t1, z0.t, lo, hi))
            break
        base = measure_from_store(store, t1=t1, t2=z0.t,
                                  threshold=threshold, stride=stride)
        dil = parabolic_dilate(base, z0, lam)
        measures.append(dil)
        vals = parabolic_mass_bound(dil, origin, bound_scales)
        bounds.append({"r": list(map(float, bound_scales)),
                       "values": [float(v) for v in vals],
                       "sup": float(vals.max()) if len(vals) else 0.0})
    return {"measures": measures, "bounds": bounds,
            "lams_used": lams[:len(measures)], "notice": notice}


def tv_distance(m1, m2, lo, hi, bins=8):
    """Windowed total-variation distance via a common histogram binning.

    lo/hi bound the (x_1..x_n, t) window; mass outside is ignored.
    """
    lo = np.asarray(lo, dtype=np.float64)
    hi = np.asarray(hi, dtype=np.float64)
    edges = [np.linspace(lo[d], hi[d], bins + 1) for d in range(len(lo))]

    def hist(m):
        if len(m) == 0:
            return np.zeros([bins] * len(lo))
        pts = np.concatenate([m.xs, m.ts[:, None]], axis=1)
        h, _ = np.histogramdd(pts, bins=edges, weights=m.ws)
        return h

    return 0.5 * float(np.abs(hist(m1) - hist(m2)).sum())
