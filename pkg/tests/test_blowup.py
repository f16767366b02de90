"""Atom measures, parabolic dilations, density ratios, rescaled views.

Scaling laws on atom measures are exact arithmetic identities (layer
indices never touch floating point), so most budgets here are near machine
precision; the few lattice-discretization budgets are commented where they
appear.
"""
import numpy as np
import pytest

from ymflow import blowup, flow, gauge, synthetic
from ymflow.blowup import (BlowupError, SpacetimeMeasure, curvature_scaling_check,
                           euclidean_dilate, measure_from_store, parabolic_dilate,
                           parabolic_mass_bound, point_map, read_measure_csv,
                           rescale_connection, tangent_measure_approx,
                           theta_dilation_check, theta_slice, tv_distance)
from ymflow.lattice import Grid


@pytest.fixture(scope="module")
def flat_store():
    grid = Grid(2, 8, 1.0)
    conn = gauge.flat_connection(grid, 3)
    store = flow.SnapshotStore(grid, 3)
    store.append(0.0, conn)
    store.append(0.1, conn)
    return store


def small_measure():
    """Two atoms on two layers, n=3, periodic box L=4."""
    xs = np.array([[1.0, 2.0, 3.0], [0.0, 0.0, 1.0]])
    ts = np.array([0.5, 0.4])
    ws = np.array([2.0, 3.0])
    return SpacetimeMeasure(xs, ts, ws, np.array([0, 1]),
                            np.array([0.5, 0.4]), np.array([0.1, 0.1]),
                            L=4.0)


# ---------------------------------------------------------------- point map


def test_point_map_identity():
    z = point_map((np.zeros(3), 0.0), 1.0, (np.array([0.3, -1.0, 2.0]), -0.7))
    assert np.array_equal(z.x, [0.3, -1.0, 2.0]) and z.t == -0.7


def test_point_map_composition():
    # P_{z0,a} o P_{z1,b} = P_{P_{z0,a}(z1), ab}
    z0 = (np.array([1.0, -0.5]), 0.25)
    z1 = (np.array([0.2, 0.4]), -1.0)
    z = (np.array([-0.3, 0.7]), 0.5)
    a, b = 1.5, 0.4
    lhs = point_map(z0, a, point_map(z1, b, z))
    rhs = point_map(point_map(z0, a, z1), a * b, z)
    assert np.allclose(lhs.x, rhs.x, rtol=0, atol=1e-15)
    assert abs(lhs.t - rhs.t) <= 1e-15


# ---------------------------------------------------------------- dilations


def test_parabolic_dilate_transforms_atoms_and_layers():
    mu = small_measure()
    x0, t0, lam = np.array([1.0, 0.0, 0.0]), 0.5, 2.0
    out = parabolic_dilate(mu, (x0, t0), lam)
    assert np.array_equal(out.xs, (mu.xs - x0) / lam)
    assert np.array_equal(out.ts, (mu.ts - t0) / lam ** 2)
    # weight factor lam^{2-n} = 1/2 at n = 3
    assert np.array_equal(out.ws, mu.ws * 0.5)
    assert np.array_equal(out.layer_times, (mu.layer_times - t0) / lam ** 2)
    assert np.array_equal(out.layer_dts, mu.layer_dts / lam ** 2)
    assert out.L == mu.L / lam
    assert np.array_equal(out.layer_of, mu.layer_of)


def test_parabolic_dilate_inverts():
    mu = small_measure()
    z0 = (np.array([1.0, 0.0, 0.0]), 0.5)
    back = parabolic_dilate(parabolic_dilate(mu, z0, 2.0),
                            (np.zeros(3), 0.0), 0.5)
    # centre maps to the origin, so undoing about the origin recovers the
    # translated original; weights return exactly (2^{2-n} * 2^{n-2} = 1)
    assert np.array_equal(back.ws, mu.ws)
    assert np.array_equal(back.xs, mu.xs - z0[0])
    assert np.array_equal(back.ts, mu.ts - z0[1])


def test_euclidean_dilate_weight_factor():
    mu = small_measure()
    out = euclidean_dilate(mu, np.zeros(3), 2.0)
    # lam^{4-n} = 2 at n = 3; time data untouched
    assert np.array_equal(out.ws, mu.ws * 2.0)
    assert np.array_equal(out.ts, mu.ts)
    assert np.array_equal(out.xs, mu.xs / 2.0)
    assert out.L == 2.0


def test_dilations_reject_nonpositive_scale():
    mu = small_measure()
    with pytest.raises(BlowupError, match="positive"):
        parabolic_dilate(mu, (np.zeros(3), 0.0), 0.0)
    with pytest.raises(BlowupError, match="positive"):
        euclidean_dilate(mu, np.zeros(3), -1.0)


def test_measure_validation():
    z3 = np.zeros(3)
    with pytest.raises(BlowupError, match="length"):
        SpacetimeMeasure(np.zeros((2, 3)), np.zeros(1), np.zeros(2),
                         np.zeros(2, dtype=int), z3[:1], z3[:1])
    with pytest.raises(BlowupError, match="nonnegative"):
        SpacetimeMeasure(np.zeros((1, 3)), np.zeros(1), np.array([-1.0]),
                         np.zeros(1, dtype=int), z3[:1], z3[:1])
    with pytest.raises(BlowupError, match="finite"):
        SpacetimeMeasure(np.zeros((1, 3)), np.zeros(1), np.array([np.inf]),
                         np.zeros(1, dtype=int), z3[:1], z3[:1])


# ------------------------------------------------------------ slice density


def test_theta_slice_single_atom_matches_formula():
    # one atom, slice lands on its layer: r^4 w G(dx, r^2) / layer_dt
    xa = np.array([[0.3, 0.1]])
    r, w, dt = 0.4, 2.5, 0.02
    mu = SpacetimeMeasure(xa, np.array([-r * r]), np.array([w]),
                          np.array([0]), np.array([-r * r]), np.array([dt]))
    d2 = 0.3 ** 2 + 0.1 ** 2
    want = r ** 4 * w * np.exp(-d2 / (4 * r * r)) / (4 * np.pi * r * r) / dt
    got = theta_slice(mu, (np.zeros(2), 0.0), r)
    assert got == pytest.approx(want, rel=1e-14)


def test_theta_slice_wraps_periodic_atoms():
    # atom at x = 0.45 on the L = 0.5 circle sits 0.05 away from the origin
    mu = SpacetimeMeasure(np.array([[0.45]]), np.array([-0.04]),
                          np.array([1.0]), np.array([0]),
                          np.array([-0.04]), np.array([1.0]), L=0.5)
    r = 0.2
    want = r ** 4 * np.exp(-0.05 ** 2 / (4 * r * r)) \
        / (4 * np.pi * r * r) ** 0.5
    assert theta_slice(mu, (np.zeros(1), 0.0), r) == pytest.approx(
        want, rel=1e-14)


def test_theta_slice_picks_nearest_layer():
    xs = np.zeros((2, 2))
    mu = SpacetimeMeasure(xs, np.array([-0.16, -0.04]),
                          np.array([1.0, 5.0]), np.array([0, 1]),
                          np.array([-0.16, -0.04]), np.array([1.0, 1.0]))

    def expect(r, w):
        return r ** 4 * w / (4 * np.pi * r * r)

    z = (np.zeros(2), 0.0)
    assert theta_slice(mu, z, 0.4) == pytest.approx(expect(0.4, 1.0))
    assert theta_slice(mu, z, 0.2) == pytest.approx(expect(0.2, 5.0))


def test_theta_slice_guards():
    mu = small_measure()
    with pytest.raises(BlowupError, match="positive"):
        theta_slice(mu, (np.zeros(3), 0.0), 0.0)
    empty = SpacetimeMeasure(np.zeros((0, 2)), np.zeros(0), np.zeros(0),
                             np.zeros(0, dtype=int), np.zeros(0), np.zeros(0))
    assert theta_slice(empty, (np.zeros(2), 0.0), 0.5) == 0.0


def test_theta_dilation_identity_random_atoms(rng):
    # Theta(P_{z0,lam} mu, z, r) = Theta(mu, P_{z0,lam}(z), lam r) holds
    # exactly on atom measures: layers map to layers and the Gaussian
    # kernel scaling cancels the weight factor.  (Measured worst case
    # ~9e-16 over this sweep.)
    mu = synthetic.random_measure(rng, 400, 3, box=1.0,
                                  t_span=(-2.0, 0.0), layers=6)
    worst = 0.0
    for _ in range(20):
        z0 = (rng.uniform(-0.5, 0.5, 3), rng.uniform(-0.2, 0.2))
        z = (rng.uniform(-0.5, 0.5, 3), rng.uniform(-1.5, -0.3))
        lam = rng.uniform(0.3, 2.5)
        r = rng.uniform(0.2, 1.0)
        worst = max(worst, theta_dilation_check(mu, z0, z, lam, r))
    assert worst <= 1e-10


# ----------------------------------------------------------- store measures


def test_store_measure_mass_is_trapezoid_energy(mode_store_l2):
    # w = 1/2 |F|^2 h^n dt and E = 1/4 int |F|^2, so total mass equals the
    # trapezoid rule applied to 2 E(t) over the stamps -- exactly, because
    # the layer thicknesses are the trapezoid half-gaps.
    mu = measure_from_store(mode_store_l2)
    en = np.array([gauge.energy(mode_store_l2.connection_at(t))
                   for t in mode_store_l2.times])
    want = np.trapezoid(2.0 * en, mode_store_l2.times)
    assert mu.total_mass() == pytest.approx(want, rel=1e-12)
    assert mu.L == mode_store_l2.grid.L
    assert len(mu.layer_times) == len(mode_store_l2.times)


def test_store_measure_stride_keeps_mass_for_smooth_modes(mode_store_l2):
    # stride-2 Riemann sum of sin^2 is exact while 2k stays sub-Nyquist on
    # the coarse subgrid
    m1 = measure_from_store(mode_store_l2)
    m2 = measure_from_store(mode_store_l2, stride=2)
    assert len(m2) < len(m1)
    assert m2.total_mass() == pytest.approx(m1.total_mass(), rel=1e-12)


def test_store_measure_threshold_and_window(mode_store_l2):
    mu = measure_from_store(mode_store_l2)
    cut = float(np.median(mu.ws))
    trimmed = measure_from_store(mode_store_l2, threshold=cut)
    assert 0 < len(trimmed) < len(mu)
    assert trimmed.ws.min() > cut
    empty = measure_from_store(mode_store_l2, threshold=1e9)
    assert len(empty) == 0 and empty.total_mass() == 0.0
    win = measure_from_store(mode_store_l2, t1=0.05, t2=0.15)
    assert win.layer_times.min() >= 0.05 - 1e-12
    assert win.layer_times.max() <= 0.15 + 1e-12


def test_flat_store_gives_empty_measure(flat_store):
    mu = measure_from_store(flat_store)
    assert len(mu) == 0
    assert mu.total_mass() == 0.0


# ------------------------------------------------------------- TV distance


def test_tv_distance_windowed():
    def atom(x, t, w):
        return SpacetimeMeasure(np.array([[x]]), np.array([t]),
                                np.array([w]), np.array([0]),
                                np.array([t]), np.array([1.0]))

    lo, hi = (-1.0, -1.0), (1.0, 1.0)
    a = atom(0.3, 0.2, 2.0)
    assert tv_distance(a, a, lo, hi) == 0.0
    b = atom(-0.4, -0.6, 5.0)
    # disjoint bins: half the L1 difference is half the total mass
    assert tv_distance(a, b, lo, hi) == pytest.approx(0.5 * (2.0 + 5.0))
    outside = atom(3.0, 0.0, 7.0)
    assert tv_distance(a, outside, lo, hi) == pytest.approx(0.5 * 2.0)


def test_self_similar_measure_is_dilation_invariant():
    # the geometric time ladder (4 layers/octave) and sqrt(tau)-scaled
    # reference cloud make kappa = 2^{k/2} dilations permute atoms exactly
    mu = synthetic.self_similar_measure(n=2, T=0.0, nodes_per_axis=9)
    lo, hi = (-4.0, -4.0, -2.0), (4.0, 4.0, -0.125)
    origin = (np.zeros(2), 0.0)
    for kappa in (np.sqrt(2.0), 2.0):
        dil = parabolic_dilate(mu, origin, kappa)
        assert tv_distance(mu, dil, lo, hi) <= 1e-12


# --------------------------------------------------------------- mass bound


def test_parabolic_mass_bound_counts_cylinder_atoms():
    # atoms in B_r x (t - r^2, t] about the origin, weighted r^{2-n}
    xs = np.array([[0.3, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0]])
    mu = SpacetimeMeasure(xs, np.array([-0.05, -0.5]), np.array([2.0, 4.0]),
                          np.array([0, 1]), np.array([-0.05, -0.5]),
                          np.array([1.0, 1.0]))
    z = (np.zeros(4), 0.0)
    vals = parabolic_mass_bound(mu, z, [0.2, 0.4, 0.8])
    # r=0.2: first atom outside B_r, second too old      -> 0
    # r=0.4: first atom inside (0.3<=0.4, -0.05>-0.16)   -> r^{-2} * 2
    # r=0.8: both inside (-0.5 > -0.64)                  -> r^{-2} * 6
    assert vals[0] == 0.0
    assert vals[1] == pytest.approx(0.4 ** -2 * 2.0, rel=1e-14)
    assert vals[2] == pytest.approx(0.8 ** -2 * 6.0, rel=1e-14)


def test_plane_measure_bound_matches_area_law():
    # static 2-plane in R^4: mu(P_r) ~ pi r^2, so r^{2-n} mu(P_r) ~ pi for
    # every r reaching the layer.  Cell-counting error at 129 nodes/axis is
    # a fraction of a percent (measured 0.41% at r=2, 0.30% at r=1.6).
    mu = synthetic.plane_measure(4, (0, 1), density=1.0, extent=4.0,
                                 nodes_per_axis=129, times=(-0.5,),
                                 layer_dt=1.0)
    z = (np.zeros(4), 0.0)
    vals = parabolic_mass_bound(mu, z, [2.0, 1.6])
    assert np.all(np.abs(vals - np.pi) <= 0.02 * np.pi)


# ------------------------------------------------------------ rescaled view


def test_rescaled_view_window_and_range(mode_store_l2):
    view = rescale_connection(mode_store_l2, ((0.5, 0.25), 0.1), 0.5)
    assert view.window == pytest.approx((-0.4, 0.4))
    assert view.base_time(-0.2) == pytest.approx(0.05)
    with pytest.raises(BlowupError, match="outside the base"):
        view.base_time(0.5)
    with pytest.raises(BlowupError, match="positive"):
        rescale_connection(mode_store_l2, ((0.5, 0.25), 0.1), 0.0)


def test_rescaled_view_materializes_site_exactly(mode_store_l2):
    # lam * h_sample = h_base, so every query lands on a base site and the
    # materialized field is a bitwise copy of lam * Gamma at mapped sites
    store = mode_store_l2
    g = store.grid
    lam, x0 = 0.5, np.array([0.5, 0.25])
    view = rescale_connection(store, (x0, 0.1), lam)
    vgrid = Grid(2, 32, 4.0)
    mat = view.materialize(vgrid, -0.2)          # base time 0.05, a stamp
    base = store.connection_at(0.05)
    pts = np.stack(np.meshgrid(*[vgrid.axis_coords()] * 2, indexing="ij"),
                   axis=-1).reshape(-1, 2)
    idx = np.rint(np.mod(lam * pts + x0, g.L) / g.h).astype(int) % g.N
    want = lam * np.moveaxis(base.gamma, 0, 2)[idx[:, 0], idx[:, 1]]
    got = np.moveaxis(mat.gamma, 0, 2).reshape(-1, 2, base.gamma.shape[-1])
    assert np.array_equal(got, want)
    assert mat.grid is vgrid


def test_curvature_scaling_exact_on_aligned_grids(mode_store_l2):
    # F(materialized view) = lam^2 F(base at mapped points): exact when
    # queries hit sites...
    sg = Grid(2, 32, 4.0)
    z0 = ((0.5, 0.25), 0.1)
    assert curvature_scaling_check(mode_store_l2, z0, 0.5, sg,
                                   [-0.2, 0.0, 0.2]) <= 1e-12
    # ...and still exact at half-cell offsets for single-mode data, since
    # linear interpolation and the difference stencil act mode-by-mode by
    # constant factors and therefore commute (measured 7e-18)
    h = mode_store_l2.grid.h
    z0_mid = ((0.5 + h / 2, 0.25), 0.1)
    assert curvature_scaling_check(mode_store_l2, z0_mid, 0.5, sg,
                                   [-0.2, 0.0]) <= 1e-12


def test_curvature_scaling_rejects_partial_wraps(mode_store_l2):
    z0 = ((0.5, 0.25), 0.1)
    with pytest.raises(BlowupError, match="whole multiple"):
        curvature_scaling_check(mode_store_l2, z0, 0.5, Grid(2, 16, 1.0),
                                [0.0])
    with pytest.raises(BlowupError, match="whole multiple"):
        curvature_scaling_check(mode_store_l2, z0, 0.5, Grid(2, 24, 3.0),
                                [0.0])


# --------------------------------------------------------- tangent measures


def test_tangent_approx_produces_fixed_window(mode_store_l2):
    res = tangent_measure_approx(mode_store_l2, ((1.0, 1.0), 0.2),
                                 [0.2, 0.1], stride=2)
    assert res["notice"] is None
    assert res["lams_used"] == [0.2, 0.1]
    assert len(res["measures"]) == 2
    for dil in res["measures"]:
        # every dilated measure lives on tau = -t in (0, 4]
        assert dil.layer_times.min() >= -4.0 - 1e-9
        assert dil.layer_times.max() <= 1e-9
    for b in res["bounds"]:
        assert set(b) == {"r", "values", "sup"}
        assert b["sup"] >= 0.0 and np.isfinite(b["sup"])
        assert b["sup"] == pytest.approx(max(b["values"]))


def test_tangent_approx_truncates_when_window_exhausted(mode_store_l2):
    res = tangent_measure_approx(mode_store_l2, ((1.0, 1.0), 0.2),
                                 [0.25, 0.2], stride=4)
    # the first slab [t0 - 4 lam^2, t0] already leaves the store range
    assert res["measures"] == [] and res["lams_used"] == []
    assert "window exhausted" in res["notice"]


def test_tangent_approx_requires_descending_scales(mode_store_l2):
    with pytest.raises(BlowupError, match="descending"):
        tangent_measure_approx(mode_store_l2, ((1.0, 1.0), 0.2), [0.1, 0.2])
    with pytest.raises(BlowupError, match="descending"):
        tangent_measure_approx(mode_store_l2, ((1.0, 1.0), 0.2), [0.1, 0.1])


# ----------------------------------------------------------------- CSV I/O


def test_measure_csv_roundtrip(rng, tmp_path):
    mu = synthetic.random_measure(rng, 50, 3, t_span=(0.0, 1.0), layers=8)
    path = tmp_path / "atoms.csv"
    mu.write_csv(path)
    back = read_measure_csv(path)
    # %.17g round-trips doubles exactly
    assert np.array_equal(back.xs, mu.xs)
    assert np.array_equal(back.ts, mu.ts)
    assert np.array_equal(back.ws, mu.ws)
    assert back.n == 3 and back.L is None
    assert back.origin == mu.origin
    # layer thickness is inferred from the smallest stamp gap
    assert back.layer_dts[0] == pytest.approx(1.0 / 7.0, rel=1e-9)
    forced = read_measure_csv(path, layer_dt=0.25)
    assert np.all(forced.layer_dts == 0.25)


def test_measure_csv_roundtrip_empty(flat_store, tmp_path):
    mu = measure_from_store(flat_store)
    path = tmp_path / "empty.csv"
    mu.write_csv(path)
    back = read_measure_csv(path)
    assert len(back) == 0 and back.total_mass() == 0.0
