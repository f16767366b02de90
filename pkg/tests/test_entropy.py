"""Gaussian-weighted entropies: kernels, cutoffs, scaling identities,
monotonicity, soliton defect quadrature."""
import numpy as np
import pytest

from ymflow import blowup, entropy, flow, gauge
from ymflow.entropy import Cutoff, EntropyError, SliceCache, SpacetimePoint
from ymflow.lattice import Grid


@pytest.fixture(scope="module")
def packet_store():
    """Localized packet whose curvature support (one stencil cell wider
    than Gamma's envelope) stays inside B_{iota/2}: the strict branch of
    the monotonicity audit applies."""
    grid = Grid(2, 24, 2.0)
    gen = np.array([[0.0, -1.0], [1.0, 0.0]])
    conn = gauge.abelian_mode(grid, (1, 0), 0.1, (0.0, 1.0), generator=gen,
                              envelope=(0.05, 0.15), center=(1.0, 1.0))
    return flow.run(conn, t_end=0.08, cadence=0.08 / 16)


class ViewStore:
    """Adapter presenting a RescaledConnectionView as a snapshot store."""

    def __init__(self, view, grid):
        self.view = view
        self.grid = grid

    def time_range(self):
        return self.view.window

    def connection_at(self, t):
        return self.view.materialize(self.grid, t)


def mode_closed_form(store, z0, R):
    """Analytic Phi for the global single-generator mode on the torus.

    |F|^2(x, t) = 4 eps^2 kd^2 sin^2(kx_0) e^{-2 kd^2 t} and the Gaussian
    integral of cos(2kx) contributes e^{-4k^2 R^2}; wrap tails are below
    e^{-(L/2)^2/(4R^2)} and must be kept negligible by the caller.
    """
    grid = store.grid
    k = 2 * np.pi / grid.L
    kd2 = (np.sin(k * grid.h) / grid.h) ** 2
    g0 = store.gamma_at(0.0)
    eps = np.abs(g0).max()
    amp2 = 4.0 * eps ** 2 * kd2 * np.exp(-2.0 * kd2 * (z0.t - R * R))
    spatial = 0.5 * (1.0 - np.cos(2 * k * z0.x[0]) * np.exp(-4.0 * k * k * R * R))
    return 0.5 * R ** 4 * amp2 * spatial


# --- kernels ---------------------------------------------------------------

def test_heat_kernel_matches_field():
    grid = Grid(2, 16, 1.0)
    x0 = np.array([5 * grid.h, 11 * grid.h])
    z0 = SpacetimePoint(x0, 1.0)
    g = entropy.gaussian_field(grid, x0, 0.01)
    site = (8, 10)
    z = SpacetimePoint(np.array(site) * grid.h, 0.99)
    want = entropy.heat_kernel(z0, z, grid.L)
    assert g[site] == pytest.approx(want, rel=1e-12)


def test_heat_kernel_singular_at_center_time():
    z0 = SpacetimePoint(np.array([0.0, 0.0]), 1.0)
    with pytest.raises(EntropyError):
        entropy.heat_kernel(z0, SpacetimePoint(np.array([0.1, 0.1]), 1.0), 1.0)
    with pytest.raises(EntropyError):
        entropy.gaussian_field(Grid(2, 8, 1.0), (0.0, 0.0), 0.0)


def test_gaussian_field_unit_mass_margins():
    # frozen: lattice mass deficit of the min-image Gaussian at L=1, N=32,
    # measured |mass - 1|: 1.1e-15 at sqrt(tau)=L/32, 2.2e-12 at L/20,
    # 2.7e-8 at L/16. The last is genuine wrap truncation, not roundoff:
    # the margin documents it rather than hiding it.
    from ymflow.lattice import integrate
    grid = Grid(2, 32, 1.0)
    x0 = np.array([0.45, 0.45])
    for frac, lo, hi in ((32, 0.0, 1e-12), (20, 1e-13, 1e-11),
                         (16, 1e-9, 1e-7)):
        tau = (grid.L / frac) ** 2
        mass = integrate(entropy.gaussian_field(grid, x0, tau), grid)
        assert lo <= abs(mass - 1.0) <= hi, (frac, mass)


def test_spacetime_point_rejects_nonfinite():
    with pytest.raises(EntropyError):
        SpacetimePoint(np.array([np.nan, 0.0]), 0.0)
    with pytest.raises(EntropyError):
        SpacetimePoint(np.array([0.0, 0.0]), np.inf)


# --- cutoff ----------------------------------------------------------------

def test_cutoff_plateau_and_support():
    grid = Grid(2, 32, 2.0)
    phi = Cutoff(grid, (1.0, 1.0), 0.5)
    r2 = grid.radius2(np.array([1.0, 1.0]))
    assert np.all(phi.values[r2 <= 0.25 ** 2] == 1.0)
    assert np.all(phi.values[r2 >= 0.5 ** 2] == 0.0)
    band = (r2 > 0.25 ** 2) & (r2 < 0.5 ** 2)
    assert np.all((phi.values[band] > 0.0) & (phi.values[band] < 1.0))
    # gradient lives only on the splice band
    gnorm = np.sqrt((phi.grad ** 2).sum(axis=0))
    assert np.abs(gnorm[~band]).max() == 0.0
    assert gnorm[band].max() > 0.0


def test_cutoff_dprofile_matches_finite_difference():
    # frozen: max |analytic - centered FD| = 1.2e-9 at step 1e-6
    grid = Grid(2, 32, 2.0)
    phi = Cutoff(grid, (1.0, 1.0), 0.5)
    r = np.linspace(0.2501, 0.4999, 401)
    e = 1e-6
    fd = (phi.profile(r + e) - phi.profile(r - e)) / (2 * e)
    assert np.abs(phi.dprofile(r) - fd).max() < 1e-8


def test_cutoff_scale_bound():
    grid = Grid(2, 16, 2.0)
    with pytest.raises(EntropyError, match="iota"):
        Cutoff(grid, (1.0, 1.0), 0.6)  # > L/4
    with pytest.raises(EntropyError):
        Cutoff(grid, (1.0, 1.0), 0.0)


# --- slice / slab entropies ------------------------------------------------

def test_phi_entropy_closed_form(mode_store_l2):
    # independent oracle: analytic Gaussian-weighted mode integral; the
    # slice time t0 - R^2 = 0.1875 lands on a stored stamp, so the only
    # deviations are RK4 and midpoint aliasing (both ~1e-10)
    z0 = SpacetimePoint(np.array([0.55, 0.8]), 0.2)
    R = np.sqrt(0.0125)
    got = entropy.phi_entropy(mode_store_l2, z0, R, None)
    want = mode_closed_form(mode_store_l2, z0, R)
    assert got == pytest.approx(want, rel=1e-6)


def test_psi_entropy_converges_to_closed_form(mode_store_l2):
    # analytic tau-antiderivative of the mode slab integral; the ladder
    # trapezoid (nodes/octave) and the linear-in-t store interpolation
    # both contribute, so the budget shrinks as the ladder refines
    grid = mode_store_l2.grid
    k = 2 * np.pi / grid.L
    kd2 = (np.sin(k * grid.h) / grid.h) ** 2
    eps = np.abs(mode_store_l2.gamma_at(0.0)).max()
    z0 = SpacetimePoint(np.array([0.55, 0.8]), 0.2)
    R = np.sqrt(0.0125)

    def anti(tau):
        # integral of e^{2 kd2 tau} (1 - cos(2k z) e^{-4k^2 tau}) / 2 dtau
        a = np.exp(2 * kd2 * tau) / (2 * kd2)
        b = np.cos(2 * k * z0.x[0]) * np.exp((2 * kd2 - 4 * k * k) * tau) \
            / (2 * kd2 - 4 * k * k)
        return 0.5 * (a - b)

    amp2 = 4.0 * eps ** 2 * kd2 * np.exp(-2.0 * kd2 * z0.t)
    want = 0.5 * R * R * amp2 * (anti(4 * R * R) - anti(R * R))
    err8 = abs(entropy.psi_entropy(mode_store_l2, z0, R, None,
                                   nodes_per_octave=8) - want) / want
    err32 = abs(entropy.psi_entropy(mode_store_l2, z0, R, None,
                                    nodes_per_octave=32) - want) / want
    # ladder-trapezoid and store-interpolation errors carry opposite signs
    # here, so refining the ladder need not shrink the total; both stay
    # inside the combined budget
    assert err8 < 1e-3
    assert err32 < 1e-3


def test_phi_scaling_identity_abelian(mode_store_l2):
    # Phi_{z0}(R; Gamma) = Phi_0(1; Gamma^R): the rescaled view on the
    # L/R torus hits base sites exactly (h' = h/R), making the identity
    # an arithmetic reshuffle
    z0 = SpacetimePoint(np.array([1.0, 1.0]), 0.2)
    R = 0.2
    lhs = entropy.phi_entropy(mode_store_l2, z0, R, None)
    view = blowup.rescale_connection(mode_store_l2, z0, R)
    vgrid = Grid(2, mode_store_l2.grid.N, mode_store_l2.grid.L / R)
    vstore = ViewStore(view, vgrid)
    origin = SpacetimePoint(np.zeros(2), 0.0)
    rhs = entropy.phi_entropy(vstore, origin, 1.0, None)
    assert rhs == pytest.approx(lhs, rel=1e-12)


def test_psi_scaling_identity_abelian(mode_store_l2):
    # same identity for the slab entropy: the geometric tau ladder is
    # scale-invariant, so both sides quadrature identical physical slices
    z0 = SpacetimePoint(np.array([1.0, 1.0]), 0.2)
    R = 0.2
    lhs = entropy.psi_entropy(mode_store_l2, z0, R, None)
    view = blowup.rescale_connection(mode_store_l2, z0, R)
    vgrid = Grid(2, mode_store_l2.grid.N, mode_store_l2.grid.L / R)
    vstore = ViewStore(view, vgrid)
    origin = SpacetimePoint(np.zeros(2), 0.0)
    rhs = entropy.psi_entropy(vstore, origin, 1.0, None)
    assert rhs == pytest.approx(lhs, rel=1e-12)


def test_phi_scaling_identity_instanton(instanton_store):
    z0 = SpacetimePoint(np.full(4, 0.5), 0.05)
    R = 0.1
    lhs = entropy.phi_entropy(instanton_store, z0, R, None)
    view = blowup.rescale_connection(instanton_store, z0, R)
    vgrid = Grid(4, instanton_store.grid.N, instanton_store.grid.L / R)
    vstore = ViewStore(view, vgrid)
    origin = SpacetimePoint(np.zeros(4), 0.0)
    rhs = entropy.phi_entropy(vstore, origin, 1.0, None)
    assert lhs > 0.0
    assert rhs == pytest.approx(lhs, rel=1e-12)


def test_entropy_range_and_radius_guards(mode_store, identity_store):
    z0 = SpacetimePoint(np.array([0.5, 0.5]), 0.2)
    with pytest.raises(EntropyError, match="outside"):
        entropy.phi_entropy(mode_store, z0, 0.5, None)  # slice below t=0
    with pytest.raises(EntropyError, match="positive"):
        entropy.phi_entropy(mode_store, z0, -0.1, None)
    with pytest.raises(EntropyError, match="nodes"):
        entropy.psi_entropy(mode_store, z0, 0.1, None, nodes_per_octave=2)
    phi = Cutoff(identity_store.grid, (1.0, 1.0), 0.5)
    big = SpacetimePoint(np.array([1.0, 1.0]), 0.012)
    with pytest.raises(EntropyError, match="4R"):
        entropy.phi_entropy(identity_store, big, 0.2, phi)


def test_slice_cache_shares_fields(mode_store):
    cache = SliceCache(mode_store)
    a = cache.fnorm2(0.1)
    b = cache.fnorm2(0.1)
    assert a is b  # second call is the cached object
    assert len(cache._f2) == 1
    cache2 = SliceCache(mode_store, limit=2)
    for t in (0.01, 0.02, 0.03):
        cache2.fnorm2(t)
    assert len(cache2._f2) == 2  # LRU evicted the oldest


# --- theta ------------------------------------------------------------------

def test_theta_density_on_store_matches_psi(mode_store_l2):
    z0 = SpacetimePoint(np.array([1.0, 1.0]), 0.2)
    radii = np.array([0.2, 0.15, 0.1])
    seq, est, trend = entropy.theta_density(mode_store_l2, z0, radii, None)
    want = [entropy.psi_entropy(mode_store_l2, z0, R, None) for R in radii]
    assert np.allclose(seq, want, rtol=1e-13)
    assert est == pytest.approx(want[-1])
    assert trend.shape == (2,)
    with pytest.raises(EntropyError, match="descending"):
        entropy.theta_density(mode_store_l2, z0, radii[::-1], None)


def test_theta_density_atom_measure_exact():
    # one atom: Theta(R) = R^2 w G(dx, tau) when tau = t_z - t_a falls in
    # [R^2, 4R^2], else 0 -- checked against a hand evaluation
    xs = np.array([[0.3, 0.4]])
    ts = np.array([0.5])
    ws = np.array([2.0])
    mu = blowup.SpacetimeMeasure(xs, ts, ws, np.array([0]),
                                 np.array([0.5]), np.array([0.01]), L=2.0)
    z = SpacetimePoint(np.array([0.35, 0.4]), 0.54)
    R = 0.15
    tau = 0.04
    g = np.exp(-(0.05 ** 2) / (4 * tau)) / (4 * np.pi * tau)
    seq, est, _ = entropy.theta_density(mu, z, np.array([R]), None)
    assert est == pytest.approx(R * R * 2.0 * g, rel=1e-12)
    # tau outside the slab window contributes nothing
    seq2, est2, _ = entropy.theta_density(mu, z, np.array([0.05]), None)
    assert est2 == 0.0


# --- soliton residual -------------------------------------------------------

def independent_soliton_quadrature(store, z0, R1, R2, phi,
                                   r_per_octave=4, t_per_octave=8):
    """Re-derive the nested defect quadrature from raw numpy primitives.

    Same ladder layout as the library (the node geometry is part of the
    contract); everything else -- central differences, interior product,
    Gaussian, trapezoid -- is recomputed without the library kernels.
    """
    grid = store.grid
    hn = grid.h ** grid.n

    def ladder(lo, hi, per_octave):
        count = int(np.ceil(np.log2(hi / lo) * per_octave))
        nodes = lo * 2.0 ** (np.arange(count + 1) / per_octave)
        nodes[-1] = hi
        return nodes

    def curv_f01(gam):
        # n=2 single pair: F_01 = d0 Gamma_1 - d1 Gamma_0 + [G0, G1]
        def d(f, ax):
            return (np.roll(f, -1, axis=ax) - np.roll(f, 1, axis=ax)) / (2 * grid.h)
        from ymflow import algebra
        m0, m1 = algebra.unpack(gam[0], 2), algebra.unpack(gam[1], 2)
        f = d(m0, 1) * 0.0  # placeholder shape
        f = d(m1, 0) - d(m0, 1) + (m0 @ m1 - m1 @ m0)
        return f

    def defect2_at(t):
        gam = store.gamma_at(t)
        from ymflow import algebra
        f01 = curv_f01(gam)

        def d(f, ax):
            return (np.roll(f, -1, axis=ax) - np.roll(f, 1, axis=ax)) / (2 * grid.h)

        m0, m1 = algebra.unpack(gam[0], 2), algebra.unpack(gam[1], 2)
        # rhs_j = sum_i cov_i F_ij; n=2: rhs_0 = cov_1 F_10, rhs_1 = cov_0 F_01
        rhs1 = d(f01, 0) + (m0 @ f01 - f01 @ m0)
        rhs0 = -(d(f01, 1) + (m1 @ f01 - f01 @ m1))
        dx = grid.displacement(z0.x) / (2.0 * (t - z0.t))
        # (v hook F)_1 = v_0 F_01, (v hook F)_0 = -v_1 F_01
        def0 = -dx[1][..., None, None] * f01 + rhs0
        def1 = dx[0][..., None, None] * f01 + rhs1
        # |A|^2 = -tr(A^2) summed over directions
        return (-np.trace(def0 @ def0, axis1=-2, axis2=-1)
                - np.trace(def1 @ def1, axis1=-2, axis2=-1))

    phi2 = np.ones(grid.shape) if phi is None else phi.values ** 2

    def slab(r):
        taus = ladder(r * r, 4 * r * r, t_per_octave)
        vals = []
        for tau in taus:
            t = z0.t - tau
            d2 = defect2_at(t)
            r2f = grid.radius2(z0.x)
            g = np.exp(-r2f / (4 * tau)) / (4 * np.pi * tau) ** (grid.n / 2.0)
            vals.append(tau * float((d2 * phi2 * g).sum()) * hn)
        return float(np.trapezoid(vals, taus))

    rs = ladder(R1, R2, r_per_octave)
    return float(np.trapezoid([r * slab(r) for r in rs], rs))


def test_soliton_residual_matches_independent_quadrature(identity_store):
    # frozen contract: rebuilt-from-scratch quadrature agrees to 1e-6
    grid = identity_store.grid
    phi = Cutoff(grid, (1.0, 1.0), 0.5)
    z0 = SpacetimePoint(np.array([1.0, 1.0]), 0.012)
    got = entropy.soliton_residual(identity_store, z0, 0.02, 0.05, phi)
    want = independent_soliton_quadrature(identity_store, z0, 0.02, 0.05, phi)
    assert got > 0.0
    assert got == pytest.approx(want, rel=1e-6)


def test_soliton_residual_flat_is_zero(grid2):
    store = flow.SnapshotStore(grid2, 3)
    store.append(0.0, gauge.flat_connection(grid2, 3))
    store.append(1.0, gauge.flat_connection(grid2, 3))
    z0 = SpacetimePoint(np.array([1.0, 1.0]), 1.0)
    assert entropy.soliton_residual(store, z0, 0.1, 0.2, None) == 0.0


def test_soliton_residual_rejects_bad_radii(mode_store):
    z0 = SpacetimePoint(np.array([0.5, 0.5]), 0.2)
    with pytest.raises(EntropyError):
        entropy.soliton_residual(mode_store, z0, 0.2, 0.1, None)


# --- monotonicity audit ------------------------------------------------------

def test_monotonicity_strict_no_violations(packet_store):
    grid = packet_store.grid
    phi = Cutoff(grid, (1.0, 1.0), 0.5)
    z0 = SpacetimePoint(np.array([1.0, 1.0]), 0.08)
    radii = np.array([0.0625, 0.09, 0.125])
    rep = entropy.monotonicity_audit(packet_store, z0, radii, phi)
    assert rep.support_strict
    assert rep.violations == []
    assert np.all(np.diff(rep.phi_values) > 0.0)
    assert np.isnan(rep.envelope_c)
    assert rep.theta_estimate == pytest.approx(rep.psi_values[0])


def test_monotonicity_mutation_flags_violation(packet_store):
    # corrupting one late snapshot with the initial (undecayed) field makes
    # Phi at the small radius exceed Phi at the next one by construction:
    # (R_j/R_k)^2 > e^{-2 kappa (t0 - R_k^2)} holds with a factor ~2 margin
    grid = packet_store.grid
    phi = Cutoff(grid, (1.0, 1.0), 0.5)
    z0 = SpacetimePoint(np.array([1.0, 1.0]), 0.08)
    radii = np.array([0.0625, 0.09, 0.125])

    times = packet_store.times
    slice_t = 0.08 - 0.0625 ** 2
    k_bad = int(np.argmin(np.abs(times - slice_t)))
    mutant = flow.SnapshotStore(grid, packet_store.m)
    for i, t in enumerate(times):
        gam = packet_store.gamma_at(0.0) if i == k_bad \
            else packet_store.gamma_at(t)
        mutant.append(t, gauge.ConnectionField(grid, packet_store.m, gam))
    rep = entropy.monotonicity_audit(mutant, z0, radii, phi)
    assert rep.support_strict
    assert len(rep.violations) >= 1


def test_monotonicity_envelope_branch(mode_store):
    # global data: support is the whole torus, strictness does not apply,
    # and the audit reports a fitted envelope constant instead
    z0 = SpacetimePoint(np.array([0.5, 0.5]), 0.2)
    rep = entropy.monotonicity_audit(mode_store, z0,
                                     np.array([0.1, 0.15, 0.2]), None)
    assert not rep.support_strict
    assert rep.violations == []
    assert np.isfinite(rep.envelope_c) and rep.envelope_c >= 0.0


def test_monotonicity_rejects_unsorted_radii(mode_store):
    z0 = SpacetimePoint(np.array([0.5, 0.5]), 0.2)
    with pytest.raises(EntropyError, match="ascending"):
        entropy.monotonicity_audit(mode_store, z0, np.array([0.2, 0.1]), None)


def test_entropy_report_csv_and_json(tmp_path, packet_store):
    grid = packet_store.grid
    phi = Cutoff(grid, (1.0, 1.0), 0.5)
    z0 = SpacetimePoint(np.array([1.0, 1.0]), 0.08)
    rep = entropy.monotonicity_audit(packet_store, z0,
                                     np.array([0.0625, 0.125]), phi,
                                     residuals=True)
    assert len(rep.soliton_residuals) == 1
    csv_path = tmp_path / "report.csv"
    rep.to_csv(csv_path)
    rows = csv_path.read_text().strip().splitlines()
    assert rows[0] == "R,Phi,Psi,tol,violation"
    assert len(rows) == 3
    json_path = tmp_path / "report.json"
    rep.to_json(json_path)
    import json
    data = json.loads(json_path.read_text())
    assert data["support_strict"] is True
    assert data["violations"] == []
    assert data["envelope_c"] is None


# --- equivalence -------------------------------------------------------------

def test_equivalence_check_bounded(mode_store_l2):
    z0 = SpacetimePoint(np.array([1.0, 1.0]), 0.2)
    out = entropy.phi_psi_equivalence_check(mode_store_l2, z0,
                                            np.array([0.05, 0.1]), None)
    assert not out["vacuous"]
    assert out["radii_used"] == 2
    assert 0.0 < out["psi_over_phi"] < 64.0
    assert 0.0 < out["phi_over_psi"] < 64.0


def test_equivalence_check_vacuous_on_flat(grid2):
    store = flow.SnapshotStore(grid2, 3)
    store.append(0.0, gauge.flat_connection(grid2, 3))
    store.append(1.0, gauge.flat_connection(grid2, 3))
    z0 = SpacetimePoint(np.array([1.0, 1.0]), 1.0)
    out = entropy.phi_psi_equivalence_check(store, z0, np.array([0.1]), None)
    assert out["vacuous"] is True
    assert out["radii_used"] == 0


def test_equivalence_check_enforces_cmax(mode_store_l2):
    z0 = SpacetimePoint(np.array([1.0, 1.0]), 0.2)
    with pytest.raises(EntropyError, match="C_max"):
        entropy.phi_psi_equivalence_check(mode_store_l2, z0,
                                          np.array([0.05, 0.1]), None,
                                          c_max=1e-6)


def test_quad_tolerance_floor_and_growth():
    grid = Grid(2, 16, 1.0)
    assert entropy.quad_tolerance(grid, 0.0) == 1e-8
    big = entropy.quad_tolerance(grid, 100.0)
    assert big == pytest.approx(5.0 * grid.h ** 2 * 100.0)
    assert entropy.quad_tolerance(grid, 200.0) == pytest.approx(2 * big)
