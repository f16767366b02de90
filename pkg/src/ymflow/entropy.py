"""Gaussian-weighted entropy diagnostics for flow trajectories.

Conventions, fixed once here and used by every quadrature below:

    G_z0(x,t)  = exp(-|x-x0|^2 / 4|t-t0|) / (4 pi |t-t0|)^{n/2}
    Phi_z0(R)  = (R^4/2) * int_{t = t0-R^2} |F|^2 phi^2 G dV
    Psi_z0(R)  = (R^2/2) * int_{t0-4R^2}^{t0-R^2} int |F|^2 phi^2 G dV dt
    Theta(mu,z)= lim_{R->0} R^2 int_{T_R(z)} phi^2 G dmu

with |x-x0| the torus min-image distance and |F|^2 the full tensor norm
(4x the sum of squared packed curvature entries). Time slices interpolate
Gamma linearly between snapshots and recompute curvature, so every slice is
the honest curvature of an honest connection.

The soliton defect is measured against the shrinking-soliton equation
D*F = ((x-x0)/(2(t-t0))) hook F for t < t0 (signed time offset -- the
absolute-value variant would vanish on expanders instead, which never sit
on the past side of the center).
"""

import csv
import json
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from . import gauge
from .lattice import Grid, min_image

__all__ = [
    "EntropyError", "SpacetimePoint", "EntropyReport",
    "heat_kernel", "gaussian_field", "Cutoff",
    "phi_entropy", "psi_entropy", "theta_density", "soliton_residual",
    "monotonicity_audit", "phi_psi_equivalence_check", "SliceCache",
]


class EntropyError(ValueError):
    pass


@dataclass(frozen=True)
class SpacetimePoint:
    x: np.ndarray
    t: float

    def __post_init__(self):
        x = np.asarray(self.x, dtype=np.float64)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "t", float(self.t))
        if not (np.isfinite(x).all() and np.isfinite(self.t)):
            raise EntropyError("non-finite spacetime point")


def heat_kernel(z0, z, L, n=None):
    """Backward Gaussian weight of z relative to the center z0."""
    if n is None:
        n = len(np.asarray(z0.x))
    tau = abs(z.t - z0.t)
    if tau == 0.0:
        raise EntropyError("heat kernel is singular at t = t0")
    dx = min_image(np.asarray(z.x, dtype=np.float64) - np.asarray(z0.x), L)
    r2 = float(dx @ dx)
    return float(np.exp(-r2 / (4.0 * tau)) / (4.0 * np.pi * tau) ** (n / 2.0))


def gaussian_field(grid, x0, tau):
    """G as a lattice scalar field at time offset tau from the center."""
    if tau <= 0.0:
        raise EntropyError("need a positive time offset, got %g" % tau)
    r2 = grid.radius2(np.asarray(x0, dtype=np.float64))
    return np.exp(-r2 / (4.0 * tau)) / (4.0 * np.pi * tau) ** (grid.n / 2.0)


def _splice(u):
    """exp(-1/u) extended by 0 at u <= 0."""
    u = np.asarray(u, dtype=np.float64)
    with np.errstate(divide="ignore", over="ignore", under="ignore"):
        return np.where(u > 0.0, np.exp(-1.0 / np.maximum(u, 1e-300)), 0.0)


class Cutoff:
    """Radial bump: 1 on B_{iota/2}(x0), 0 outside B_iota, smooth between.

    The profile on [iota/2, iota] is psi(s) = B(1-s) / (B(1-s) + B(s)) with
    B(u) = exp(-1/u) and s the normalized radius; both the sampled values and
    the analytic gradient (d phi/d r times the unit min-image direction) are
    exposed, the latter because localized energy audits pair (grad phi) hook F
    against the flow velocity and a finite-difference gradient would inject
    its own O(h^2) error into identities that are otherwise exact.
    """

    def __init__(self, grid: Grid, x0, iota):
        if not 0.0 < iota <= grid.L / 4.0:
            raise EntropyError("iota must lie in (0, L/4], got %g (L=%g)"
                               % (iota, grid.L))
        self.grid = grid
        self.x0 = np.asarray(x0, dtype=np.float64)
        if self.x0.shape != (grid.n,):
            raise EntropyError("center must have shape (%d,)" % grid.n)
        self.iota = float(iota)
        dx = grid.displacement(self.x0)
        r = np.sqrt(np.einsum("d...,d...->...", dx, dx))
        self.values = self.profile(r)
        dr = self.dprofile(r)
        with np.errstate(invalid="ignore", divide="ignore"):
            unit = np.where(r > 0.0, dx / np.maximum(r, 1e-300), 0.0)
        self.grad = dr * unit

    def _s(self, r):
        return (np.asarray(r, dtype=np.float64) - self.iota / 2.0) / (self.iota / 2.0)

    def profile(self, r):
        """phi as a function of radius (vectorized)."""
        s = np.clip(self._s(r), 0.0, 1.0)
        bl, br = _splice(1.0 - s), _splice(s)
        return bl / (bl + br)

    def dprofile(self, r):
        """d phi / d r, exactly zero outside the open splice band."""
        r = np.asarray(r, dtype=np.float64)
        s = self._s(r)
        inside = (s > 0.0) & (s < 1.0)
        sc = np.where(inside, s, 0.5)
        bl, br = _splice(1.0 - sc), _splice(sc)
        dbl = -bl / (1.0 - sc) ** 2          # d/ds B(1-s)
        dbr = br / sc ** 2                   # d/ds B(s)
        dpsi = (dbl * br - bl * dbr) / (bl + br) ** 2
        return np.where(inside, dpsi * (2.0 / self.iota), 0.0)


def _as_center(z0):
    if isinstance(z0, SpacetimePoint):
        return z0
    x, t = z0
    return SpacetimePoint(np.asarray(x, dtype=np.float64), float(t))


class SliceCache:
    """Small LRU of per-time lattice scalar fields shared by the quadratures."""

    def __init__(self, store, limit=48):
        self.store = store
        self.limit = int(limit)
        self._f2 = OrderedDict()      # t -> |F|^2 field
        self._defect = OrderedDict()  # (t, center key) -> defect-norm^2 field

    def _get(self, table, key, build):
        if key in table:
            table.move_to_end(key)
            return table[key]
        val = build()
        table[key] = val
        if len(table) > self.limit:
            table.popitem(last=False)
        return val

    def fnorm2(self, t):
        def build():
            if hasattr(self.store, "fnorm2_at"):
                return self.store.fnorm2_at(t)
            c = self.store.connection_at(t)
            return gauge.fnorm2(gauge.curvature(c))
        return self._get(self._f2, t, build)

    def defect2(self, t, z0):
        """|v hook F + dGamma/dt|^2 with v = (x-x0)/(2(t-t0)), as a field."""
        key = (t, z0.x.tobytes(), z0.t)

        def build():
            grid = self.store.grid
            c = self.store.connection_at(t)
            curv = gauge.curvature(c)
            rhs = gauge.flow_rhs(c, curv)
            v = grid.displacement(z0.x) / (2.0 * (t - z0.t))
            d = gauge.contract(v, curv)
            d += rhs
            return 2.0 * np.einsum("d...k,d...k->...", d, d)
        return self._get(self._defect, key, build)


def _check_radius(R, phi):
    if R <= 0.0:
        raise EntropyError("radius must be positive, got %g" % R)
    if phi is not None and 4.0 * R > phi.iota * (1.0 + 1e-12):
        raise EntropyError("radius %g too large for cutoff scale iota=%g "
                           "(need 4R <= iota)" % (R, phi.iota))


def _phi2_field(phi, grid):
    if phi is None:
        return np.ones(grid.shape)
    return phi.values * phi.values


def phi_entropy(store, z0, R, phi, cache=None):
    """Slice entropy (R^4/2) int |F|^2 phi^2 G at time t0 - R^2."""
    z0 = _as_center(z0)
    _check_radius(R, phi)
    grid = store.grid
    t = z0.t - R * R
    lo, hi = store.time_range()
    if t < lo - 1e-12 or t > hi + 1e-12:
        raise EntropyError("slice time %g outside store range [%g, %g]"
                           % (t, lo, hi))
    f2 = cache.fnorm2(t) if cache is not None else \
        gauge.fnorm2(gauge.curvature(store.connection_at(t)))
    g = gaussian_field(grid, z0.x, R * R)
    val = float((f2 * _phi2_field(phi, grid) * g).sum()) * grid.h ** grid.n
    return 0.5 * R ** 4 * val


def _tau_ladder(tau_lo, tau_hi, per_octave):
    """Geometric nodes 2^{k/per_octave} covering [tau_lo, tau_hi] exactly."""
    count = int(np.ceil(np.log2(tau_hi / tau_lo) * per_octave))
    nodes = tau_lo * 2.0 ** (np.arange(count + 1) / per_octave)
    nodes[-1] = tau_hi
    return nodes


def _slab_quad(store, z0, tau_nodes, weight_of_tau, cache, phi):
    """Trapezoid over tau of weight(tau) * int field(tau) phi^2 G dV."""
    grid = store.grid
    lo, hi = store.time_range()
    phi2 = _phi2_field(phi, grid)
    hn = grid.h ** grid.n
    vals = np.empty(len(tau_nodes))
    for i, tau in enumerate(tau_nodes):
        t = z0.t - tau
        if t < lo - 1e-12 or t > hi + 1e-12:
            raise EntropyError("slab time %g outside store range [%g, %g]"
                               % (t, lo, hi))
        f2 = cache.fnorm2(t)
        g = gaussian_field(grid, z0.x, tau)
        vals[i] = weight_of_tau(tau) * float((f2 * phi2 * g).sum()) * hn
    return float(np.trapezoid(vals, tau_nodes))


def psi_entropy(store, z0, R, phi, cache=None, nodes_per_octave=8):
    """Slab entropy (R^2/2) over t in [t0-4R^2, t0-R^2].

    Integrates over >= `nodes_per_octave` interpolated slices per octave of
    the two-octave slab (17 nodes at the default).
    """
    z0 = _as_center(z0)
    _check_radius(R, phi)
    if nodes_per_octave < 4:
        raise EntropyError("insufficient resolution: need >= 4 nodes per "
                           "octave, got %d" % nodes_per_octave)
    if cache is None:
        cache = SliceCache(store)
    nodes = _tau_ladder(R * R, 4.0 * R * R, nodes_per_octave)
    val = _slab_quad(store, z0, nodes, lambda tau: 1.0, cache, phi)
    return 0.5 * R * R * val


def theta_density(measure_like, z, radii, phi, cache=None, L=None):
    """Slab density sequence R_k^2 int_{T_{R_k}} phi^2 G dmu, descending R.

    Works on a SnapshotStore (dmu = 1/2 |F|^2 dV dt, where it coincides with
    psi_entropy) or on an atom SpacetimeMeasure. Returns (sequence, estimate,
    trend) with the smallest-radius value as the estimate.
    """
    z = _as_center(z)
    radii = np.asarray(radii, dtype=np.float64)
    if radii.ndim != 1 or len(radii) < 1:
        raise EntropyError("need at least one radius")
    if np.any(np.diff(radii) >= 0.0):
        raise EntropyError("radii must be strictly descending")
    if hasattr(measure_like, "connection_at"):
        if cache is None:
            cache = SliceCache(measure_like)
        seq = np.array([psi_entropy(measure_like, z, R, phi, cache=cache)
                        for R in radii])
    else:
        seq = np.array([_theta_slab_atoms(measure_like, z, R, phi, L=L)
                        for R in radii])
    trend = np.diff(seq)
    return seq, float(seq[-1]), trend


def _theta_slab_atoms(measure, z, R, phi, L=None):
    xs, ts, ws = measure.arrays()
    if L is None:
        L = measure.L
    tau = z.t - ts
    sel = (tau >= R * R * (1.0 - 1e-12)) & (tau <= 4.0 * R * R * (1.0 + 1e-12))
    if not sel.any():
        return 0.0
    dx = xs[sel] - z.x
    if L is not None:
        dx = min_image(dx, L)
    r2 = np.einsum("ak,ak->a", dx, dx)
    tau = tau[sel]
    g = np.exp(-r2 / (4.0 * tau)) / (4.0 * np.pi * tau) ** (len(z.x) / 2.0)
    if phi is not None:
        p = phi.profile(np.sqrt(r2))
        g = g * p * p
    return float(R * R * (g * ws[sel]).sum())


def soliton_residual(store, z0, R1, R2, phi, cache=None,
                     r_nodes_per_octave=4, t_nodes_per_octave=8):
    """Weighted defect against the shrinking-soliton equation.

        int_{R1}^{R2} r int_{T_r} |t-t0| |defect|^2 phi^2 G dV dt dr,
        defect = ((x-x0)/(2(t-t0))) hook F  +  dGamma/dt

    Nested trapezoid: geometric nodes in r (>= 4 per octave) and in slab
    time (>= 8 per octave), sharing interpolated slices through the cache.
    Zero exactly on a soliton recentered at z0.
    """
    z0 = _as_center(z0)
    if not 0.0 < R1 < R2:
        raise EntropyError("need 0 < R1 < R2, got %g, %g" % (R1, R2))
    _check_radius(R2, phi)
    if cache is None:
        cache = SliceCache(store)
    grid = store.grid
    phi2 = _phi2_field(phi, grid)
    hn = grid.h ** grid.n
    lo, hi = store.time_range()

    def slab_value(r):
        nodes = _tau_ladder(r * r, 4.0 * r * r, t_nodes_per_octave)
        vals = np.empty(len(nodes))
        for i, tau in enumerate(nodes):
            t = z0.t - tau
            if t < lo - 1e-12 or t > hi + 1e-12:
                raise EntropyError("slab time %g outside store range [%g, %g]"
                                   % (t, lo, hi))
            d2 = cache.defect2(t, z0)
            g = gaussian_field(grid, z0.x, tau)
            vals[i] = tau * float((d2 * phi2 * g).sum()) * hn
        return float(np.trapezoid(vals, nodes))

    r_nodes = _tau_ladder(R1, R2, r_nodes_per_octave)
    inner = np.array([r * slab_value(r) for r in r_nodes])
    return float(np.trapezoid(inner, r_nodes))


@dataclass
class EntropyReport:
    center: SpacetimePoint
    radii: np.ndarray
    phi_values: np.ndarray
    psi_values: np.ndarray
    theta_estimate: float
    soliton_residuals: list
    violations: list
    tol: float
    tol_quad: float
    support_strict: bool
    envelope_c: float = field(default=float("nan"))

    def __post_init__(self):
        r = np.asarray(self.radii, dtype=np.float64)
        if np.any(np.diff(r) <= 0.0):
            raise EntropyError("report radii must be strictly ascending")
        for name in ("phi_values", "psi_values"):
            v = np.asarray(getattr(self, name), dtype=np.float64)
            if not np.isfinite(v).all() or (v < 0.0).any():
                raise EntropyError("%s must be finite and >= 0" % name)

    def to_csv(self, path):
        flagged = {j for j, _ in self.violations} | {k for _, k in self.violations}
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["R", "Phi", "Psi", "tol", "violation"])
            for i, r in enumerate(self.radii):
                w.writerow(["%.17g" % r, "%.17g" % self.phi_values[i],
                            "%.17g" % self.psi_values[i], "%.3g" % self.tol,
                            int(i in flagged)])

    def summary(self):
        return {
            "center": {"x": list(map(float, self.center.x)),
                       "t": self.center.t},
            "radii": [float(r) for r in self.radii],
            "theta_estimate": float(self.theta_estimate),
            "soliton_residuals": [float(s) for s in self.soliton_residuals],
            "violations": [[int(j), int(k)] for j, k in self.violations],
            "tol": float(self.tol),
            "tol_quad": float(self.tol_quad),
            "support_strict": bool(self.support_strict),
            "envelope_c": None if np.isnan(self.envelope_c)
            else float(self.envelope_c),
        }

    def to_json(self, path):
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _support_inside(store, x0, radius):
    """True when initial-snapshot curvature support sits inside B_radius(x0).

    The initial snapshot is the right slice to test: under the flow the
    tails spread immediately (heat-kernel-like), so any evolved slice has
    technically global support and the phi == 1 criterion would never hold.
    """
    c0 = store.connection_at(store.time_range()[0])
    f2 = gauge.fnorm2(gauge.curvature(c0))
    peak = float(f2.max())
    if peak == 0.0:
        return True
    outside = store.grid.radius2(np.asarray(x0)) >= radius * radius
    return float(f2[outside].max(initial=0.0)) <= 1e-14 * peak


def quad_tolerance(grid, integrand_sup):
    """Per-call quadrature budget max(1e-8, 5 h^2 ||integrand||_inf L^n)."""
    return max(1e-8, 5.0 * grid.h ** 2 * float(integrand_sup)
               * grid.L ** grid.n)


def monotonicity_audit(store, z0, radii, phi, tol=1e-6, residuals=False,
                       yang_mills_energy=None):
    """Phi/Psi across ascending radii with strict-monotonicity flags.

    When the initial curvature support lies inside B_{iota/2}(x0) (the
    phi == 1 region) every pair R_j < R_k with Phi(R_j) > Phi(R_k) + tol is
    flagged. Otherwise cutoff-derivative terms are live, strictness is not a
    theorem, and the report instead carries the smallest envelope constant C
    with Phi(R_j) <= e^{C(R_k-R_j)} Phi(R_k) + C (R_k-R_j) E0 as a fitted
    diagnostic (E0 = initial energy unless given).
    """
    z0 = _as_center(z0)
    radii = np.asarray(radii, dtype=np.float64)
    if np.any(np.diff(radii) <= 0.0):
        raise EntropyError("radii must be strictly ascending")
    cache = SliceCache(store)
    grid = store.grid
    phis = np.array([phi_entropy(store, z0, R, phi, cache=cache)
                     for R in radii])
    psis = np.array([psi_entropy(store, z0, R, phi, cache=cache)
                     for R in radii])
    theta_est = float(psis[0])

    f2_top = cache.fnorm2(z0.t - radii[-1] ** 2)
    tol_quad = quad_tolerance(grid, (f2_top * _phi2_field(phi, grid)).max()
                              * gaussian_field(grid, z0.x, radii[-1] ** 2).max())

    iota = phi.iota if phi is not None else grid.L / 2.0
    strict = _support_inside(store, z0.x, iota / 2.0)
    violations = []
    envelope_c = float("nan")
    if strict:
        for j in range(len(radii)):
            for k in range(j + 1, len(radii)):
                if phis[j] > phis[k] + tol:
                    violations.append((j, k))
    else:
        if yang_mills_energy is None:
            c0 = store.connection_at(store.time_range()[0])
            yang_mills_energy = gauge.energy(c0)
        worst = 0.0
        for j in range(len(radii)):
            for k in range(j + 1, len(radii)):
                gap = radii[k] - radii[j]
                # smallest C >= 0 with phis[j] <= e^{C gap} phis[k] + C gap E0;
                # monotone in C, solve by bisection on [0, big]
                if phis[j] <= phis[k]:
                    continue
                lo_c, hi_c = 0.0, 1.0
                def ok(cc):
                    return phis[j] <= np.exp(cc * gap) * phis[k] \
                        + cc * gap * yang_mills_energy
                while not ok(hi_c) and hi_c < 1e12:
                    hi_c *= 2.0
                for _ in range(80):
                    mid = 0.5 * (lo_c + hi_c)
                    if ok(mid):
                        hi_c = mid
                    else:
                        lo_c = mid
                worst = max(worst, hi_c)
        envelope_c = worst

    res = []
    if residuals:
        for j in range(len(radii) - 1):
            res.append(soliton_residual(store, z0, radii[j], radii[j + 1],
                                        phi, cache=cache))
    return EntropyReport(center=z0, radii=radii, phi_values=phis,
                         psi_values=psis, theta_estimate=theta_est,
                         soliton_residuals=res, violations=violations,
                         tol=tol, tol_quad=tol_quad, support_strict=strict,
                         envelope_c=envelope_c)


def phi_psi_equivalence_check(store, z0, radii, phi, c_max=64.0, cache=None):
    """Empirical sandwich constants: max Psi(R)/Phi(2R) and Phi(2R)/Psi(2R).

    Values below 1e-300 make the quotients meaningless; such radii are
    dropped and the check reported vacuous if none survive. On nonvanishing
    data both maxima must stay below c_max.
    """
    z0 = _as_center(z0)
    if cache is None:
        cache = SliceCache(store)
    floor = 1e-300
    a_max, b_max, used = 0.0, 0.0, 0
    for R in radii:
        psi_r = psi_entropy(store, z0, R, phi, cache=cache)
        phi_2r = phi_entropy(store, z0, 2.0 * R, phi, cache=cache)
        psi_2r = psi_entropy(store, z0, 2.0 * R, phi, cache=cache)
        if phi_2r < floor or psi_2r < floor:
            continue
        used += 1
        a_max = max(a_max, psi_r / phi_2r)
        b_max = max(b_max, phi_2r / psi_2r)
    if used == 0:
        return {"vacuous": True, "psi_over_phi": float("nan"),
                "phi_over_psi": float("nan"), "radii_used": 0}
    result = {"vacuous": False, "psi_over_phi": a_max,
              "phi_over_psi": b_max, "radii_used": used}
    if not (np.isfinite(a_max) and np.isfinite(b_max)):
        raise EntropyError("sandwich ratio non-finite")
    if max(a_max, b_max) > c_max:
        raise EntropyError("sandwich constant %g exceeds C_max=%g"
                           % (max(a_max, b_max), c_max))
    return result
