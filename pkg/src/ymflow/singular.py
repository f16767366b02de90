"""Concentration-set machinery: parabolic metric, threshold scan, dimensions.

The scan estimates the curvature-concentration set at finite resolution: a
spacetime center is flagged when the slab entropy Psi stays at or above a
threshold eps0 across every scanned radius.  Because the true set is an
intersection over all radii, the finite radius floor r_min and the lattice
stride are first-class fields of the estimate -- every claim it makes is
stamped with the scales at which it was tested.

Two dimension estimators accompany the scan:

  * parabolic_box_dimension counts occupied parabolic boxes (spatial side r,
    temporal height r^2) over a dyadic ladder of r and fits log N against
    log(1/r).  This is an UPPER box-dimension estimate; it can only
    over-count a Hausdorff-type dimension.
  * stratum_dim reads the dimension of a sampled density landscape: with
    U = {theta >= theta(0) - tol} and V = U restricted to the t = 0 slice,
    the answer is dim V + 2 when U factors as V x (time range) and dim V
    otherwise.  Subspace dimension is decided by singular values above
    tol * sqrt(sample count), so quadrature noise below tol cannot flip it.
    Coordinates are assumed O(1)-normalized; the threshold couples the
    theta tolerance and the geometry scale deliberately, to keep the
    decision rule single-knobbed and deterministic.

The pointwise-control constants of the threshold theorem (delta, C) are
treated as outputs: for unflagged centers the scan measures
sup |F|^2 * (delta R)^4 over the parabolic ball P_{delta R} and reports the
worst case as the empirical constant, rather than asserting any particular
value a priori.
"""

import dataclasses

import numpy as np

from . import entropy
from .entropy import EntropyError, SliceCache, SpacetimePoint, _as_center
from .lattice import min_image

__all__ = [
    "SingularError", "parabolic_dist", "SingularSetEstimate",
    "eps_regularity_scan", "BoxCountReport", "parabolic_box_dimension",
    "DensitySamples", "StratumReport", "stratum_dim",
]


class SingularError(ValueError):
    pass


def parabolic_dist(z1, z2, L=None):
    """max{|x - y|, sqrt|t - s|}, nearest-image spatial part when L is set."""
    z1 = _as_center(z1)
    z2 = _as_center(z2)
    dx = z1.x - z2.x
    if L is not None:
        dx = min_image(dx, L)
    return float(max(np.sqrt(dx @ dx), np.sqrt(abs(z1.t - z2.t))))


@dataclasses.dataclass
class SingularSetEstimate:
    """Finite-resolution concentration-set estimate from a threshold scan.

    `flagged` holds the centers whose slab entropy met the threshold at
    every scanned radius, lexicographically sorted (x coordinates, then t)
    with `min_psi` aligned.  `empirical_c` is the contrapositive audit: the
    worst sup |F|^2 (delta R)^4 over parabolic balls at unflagged centers
    whose entropy fell below the threshold there.
    """

    epsilon0: float
    r_min: float
    r_max: float
    flagged: list
    min_psi: np.ndarray
    empirical_c: float
    delta: float
    spatial_stride: int
    time_stride: int
    n_candidates: int
    n_audited: int

    def __post_init__(self):
        self.min_psi = np.asarray(self.min_psi, dtype=np.float64)
        if len(self.flagged) != len(self.min_psi):
            raise SingularError("flagged/min_psi length mismatch")
        if np.any(self.min_psi < self.epsilon0):
            raise SingularError("flagged point with min Psi %g below "
                                "threshold %g" % (self.min_psi.min(),
                                                  self.epsilon0))
        order = _lex_order(self.flagged)
        self.flagged = [self.flagged[i] for i in order]
        self.min_psi = self.min_psi[order]

    def __len__(self):
        return len(self.flagged)

    def points(self):
        """Flagged centers as an (count, n+1) array of (x..., t) rows."""
        if not self.flagged:
            return np.zeros((0, 0))
        return np.array([np.append(z.x, z.t) for z in self.flagged])

    def write_csv(self, path):
        n = self.flagged[0].x.size if self.flagged else 0
        cols = ["x%d" % d for d in range(n)] + ["t", "min_psi"]
        with open(path, "w") as fh:
            fh.write("# epsilon0=%r r_min=%r r_max=%r delta=%r "
                     "empirical_c=%r candidates=%d\n"
                     % (self.epsilon0, self.r_min, self.r_max, self.delta,
                        self.empirical_c, self.n_candidates))
            fh.write(",".join(cols) + "\n")
            for z, p in zip(self.flagged, self.min_psi):
                row = ["%.17g" % v for v in z.x] + ["%.17g" % z.t,
                                                    "%.17g" % p]
                fh.write(",".join(row) + "\n")


def _lex_order(points):
    if not points:
        return np.zeros(0, dtype=np.intp)
    arr = np.array([np.append(z.x, z.t) for z in points])
    return np.lexsort(tuple(arr[:, k] for k in range(arr.shape[1] - 1, -1, -1)))


def _ball_sup_f2(store, cache, x0, t, rad):
    """sup of |F|^2 over B_rad(x0) x (t - rad^2, t], 0 if the ball is empty."""
    grid = store.grid
    mask = grid.radius2(x0) <= rad * rad * (1.0 + 1e-12)
    if not mask.any():
        return 0.0
    lo, _ = store.time_range()
    stamps = np.asarray(store.times)
    inside = stamps[(stamps > t - rad * rad) & (stamps <= t + 1e-15)]
    slices = sorted(set(np.append(inside, t).tolist()))
    sup = 0.0
    for s in slices:
        if s < lo - 1e-12:
            continue
        sup = max(sup, float(cache.fnorm2(s)[mask].max()))
    return sup


def eps_regularity_scan(store, epsilon0, radii, spatial_stride=1,
                        time_stride=1, delta=0.5, iota=None,
                        nodes_per_octave=8):
    """Threshold scan for curvature concentration over a stride lattice.

    Candidate centers are the grid sites thinned by `spatial_stride` crossed
    with the stored stamps thinned by `time_stride`, keeping only stamps
    whose full slab [t - 4 r_max^2, t - r_min^2] lies in the stored range.
    A center is flagged iff Psi_z(R) >= epsilon0 for EVERY R in `radii`.
    For unflagged centers the contrapositive audit records
    sup_{P_{delta R}(z)} |F|^2 (delta R)^4 at each radius whose entropy fell
    below the threshold, and the maximum over the scan is reported as the
    empirical pointwise-control constant.

    With `iota` set, each center's entropies use a compactly supported
    cutoff at that scale (requires 4 r_max <= iota); by default the weight
    is the bare nearest-image Gaussian.
    """
    grid = store.grid
    radii = np.asarray(radii, dtype=np.float64)
    if radii.size < 1 or np.any(radii <= 0.0):
        raise SingularError("radius grid must be positive and nonempty")
    if epsilon0 <= 0.0:
        raise SingularError("epsilon0 must be positive, got %g" % epsilon0)
    if not 0.0 < delta <= 1.0:
        raise SingularError("delta must lie in (0, 1], got %g" % delta)
    spatial_stride = int(spatial_stride)
    time_stride = int(time_stride)
    if spatial_stride < 1 or time_stride < 1:
        raise SingularError("strides must be >= 1")
    r_min, r_max = float(radii.min()), float(radii.max())
    lo, hi = store.time_range()
    stamps = np.asarray(store.times)[::time_stride]
    times = stamps[stamps - 4.0 * r_max * r_max >= lo - 1e-12]
    if times.size == 0:
        raise SingularError(
            "no evaluable centers: deepest slab %g below stored range start "
            "%g at every candidate stamp" % (4.0 * r_max * r_max, hi - lo))

    ax = grid.axis_coords()[::spatial_stride]
    centers = np.stack(np.meshgrid(*[ax] * grid.n, indexing="ij"),
                       axis=-1).reshape(-1, grid.n)

    cache = SliceCache(store, limit=max(64, 24 * len(radii)))
    flagged, min_psi = [], []
    empirical_c = 0.0
    audited = 0
    for x0 in centers:
        phi = entropy.Cutoff(grid, x0, iota) if iota is not None else None
        for t in times:
            z = SpacetimePoint(x0.copy(), float(t))
            psis = np.array([
                entropy.psi_entropy(store, z, r, phi, cache=cache,
                                    nodes_per_octave=nodes_per_octave)
                for r in radii])
            if psis.min() >= epsilon0:
                flagged.append(z)
                min_psi.append(psis.min())
                continue
            audited += 1
            for r, p in zip(radii, psis):
                if p < epsilon0:
                    dr = float(delta * r)
                    sup = _ball_sup_f2(store, cache, x0, float(t), dr)
                    empirical_c = max(empirical_c, sup * dr ** 4)
    return SingularSetEstimate(
        epsilon0=float(epsilon0), r_min=r_min, r_max=r_max,
        flagged=flagged, min_psi=np.asarray(min_psi),
        empirical_c=empirical_c, delta=float(delta),
        spatial_stride=spatial_stride, time_stride=time_stride,
        n_candidates=len(times) * len(centers), n_audited=audited)


def _points_arrays(points):
    """Normalize a point collection to (xs (P, n), ts (P,))."""
    if isinstance(points, DensitySamples):
        return points.xs, points.ts
    if isinstance(points, tuple) and len(points) == 2:
        xs = np.atleast_2d(np.asarray(points[0], dtype=np.float64))
        ts = np.asarray(points[1], dtype=np.float64).ravel()
        if len(xs) != len(ts):
            raise SingularError("xs/ts length mismatch")
        return xs, ts
    zs = [_as_center(z) for z in points]
    if not zs:
        raise SingularError("need at least one point")
    return (np.array([z.x for z in zs]),
            np.array([z.t for z in zs]))


@dataclasses.dataclass
class BoxCountReport:
    """Least-squares fit of log N(r) against log(1/r) with its residual."""

    slope: float
    residual: float
    radii: np.ndarray
    counts: np.ndarray
    degenerate: bool

    def summary(self):
        return {
            "slope": self.slope,
            "residual": self.residual,
            "radii": self.radii.tolist(),
            "counts": self.counts.tolist(),
            "degenerate": self.degenerate,
        }


def parabolic_box_dimension(points, radii):
    """Upper box-dimension estimate from parabolic box counts.

    Boxes have spatial side r and temporal height r^2, anchored at integer
    multiples; N(r) is the number of occupied boxes.  Returns the
    least-squares slope of log N vs log(1/r) with the RMS fit residual.
    A flat count profile is reported as dimension 0 with the degeneracy
    flag set rather than as a fit.
    """
    xs, ts = _points_arrays(points)
    if len(xs) < 1:
        raise SingularError("need at least one point")
    radii = np.unique(np.asarray(radii, dtype=np.float64))[::-1]
    if radii.size < 2:
        raise SingularError("need at least two distinct radii")
    if np.any(radii <= 0.0):
        raise SingularError("radii must be positive")
    counts = np.empty(radii.size, dtype=np.int64)
    for i, r in enumerate(radii):
        keys = np.concatenate(
            [np.floor(xs / r), np.floor(ts / (r * r))[:, None]],
            axis=1).astype(np.int64)
        counts[i] = len(np.unique(keys, axis=0))
    if np.all(counts == counts[0]):
        return BoxCountReport(0.0, 0.0, radii, counts, True)
    logs = np.log(counts.astype(np.float64))
    xvals = np.log(1.0 / radii)
    slope, intercept = np.polyfit(xvals, logs, 1)
    resid = float(np.sqrt(np.mean((slope * xvals + intercept - logs) ** 2)))
    return BoxCountReport(float(slope), resid, radii, counts, False)


@dataclasses.dataclass
class DensitySamples:
    """Sampled density landscape theta over spacetime points.

    Rows are sample points (xs, ts) with nonnegative finite values.  The
    origin row, when present, is the reference maximum for the stratum
    dimension; `center_value` looks it up.
    """

    xs: np.ndarray
    ts: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.xs = np.atleast_2d(np.asarray(self.xs, dtype=np.float64))
        self.ts = np.asarray(self.ts, dtype=np.float64).ravel()
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if not (len(self.xs) == len(self.ts) == len(self.values)):
            raise SingularError("xs/ts/values length mismatch")
        if not (np.isfinite(self.xs).all() and np.isfinite(self.ts).all()
                and np.isfinite(self.values).all()):
            raise SingularError("samples must be finite")
        if np.any(self.values < 0.0):
            raise SingularError("density values must be >= 0")

    def __len__(self):
        return len(self.values)

    @property
    def n(self):
        return self.xs.shape[1]

    def _origin_index(self):
        x_tol = 1e-12 * max(1.0, float(np.abs(self.xs).max()))
        t_tol = 1e-12 * max(1.0, float(np.abs(self.ts).max()))
        hit = np.flatnonzero(
            (np.abs(self.xs).max(axis=1) <= x_tol)
            & (np.abs(self.ts) <= t_tol))
        return int(hit[0]) if hit.size else -1

    @property
    def center_value(self):
        i = self._origin_index()
        if i < 0:
            raise SingularError("samples do not include the origin z = 0")
        return float(self.values[i])

    def dilated(self, lam):
        """Parabolic dilation about the origin: (x, t) -> (x/lam, t/lam^2).

        Density values ride along unchanged -- the landscape is
        dilation-invariant at its reference point by construction.
        """
        if lam <= 0.0:
            raise SingularError("dilation factor must be positive")
        return DensitySamples(self.xs / lam, self.ts / lam ** 2,
                              self.values.copy())


@dataclasses.dataclass(frozen=True)
class StratumReport:
    """Stratum dimension decision with the fitted spatial subspace basis."""

    dim: int
    dim_v: int
    product: bool
    basis: np.ndarray
    theta0: float
    u_count: int
    v_count: int


def stratum_dim(samples, tol):
    """Dimension of the near-maximal set of a sampled density landscape.

    U is the set of samples within `tol` of the origin value; V is its
    t = 0 slice.  The spatial span of V is fitted through the origin with
    singular values thresholded at tol * sqrt(|V|).  When every sample
    sharing a V spatial location lies in U -- and the samples carry a
    nontrivial time range to witness it -- U factors as V x (time range)
    and the dimension is dim V + 2; otherwise dim V.
    """
    if not isinstance(samples, DensitySamples):
        raise SingularError("expected DensitySamples")
    n = samples.n
    if len(samples) < n + 2:
        raise SingularError("insufficient data: need at least %d samples "
                            "for n=%d, got %d" % (n + 2, n, len(samples)))
    theta0 = samples.center_value
    vmax = float(samples.values.max())
    if vmax > theta0 + 1e-12 * max(1.0, theta0):
        raise SingularError("origin value %g is not maximal (max %g)"
                            % (theta0, vmax))
    u_mask = samples.values >= theta0 - tol
    t_tol = 1e-9 * max(1.0, float(np.abs(samples.ts).max()))
    v_mask = u_mask & (np.abs(samples.ts) <= t_tol)
    v_x = samples.xs[v_mask]
    _, sv, vh = np.linalg.svd(v_x, full_matrices=False)
    thresh = tol * np.sqrt(len(v_x))
    dim_v = int(np.sum(sv > thresh))
    basis = vh[:dim_v].copy()

    x_tol = 1e-9 * max(1.0, float(np.abs(samples.xs).max()))
    in_vx = np.zeros(len(samples), dtype=bool)
    for row in v_x:
        in_vx |= np.abs(samples.xs - row).max(axis=1) <= x_tol
    has_times = np.any(np.abs(samples.ts) > t_tol)
    product = bool(has_times and np.all(u_mask[in_vx]))
    dim = dim_v + 2 if product else dim_v
    return StratumReport(dim=dim, dim_v=dim_v, product=product, basis=basis,
                         theta0=theta0, u_count=int(u_mask.sum()),
                         v_count=int(v_mask.sum()))
