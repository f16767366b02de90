"""Gradient-flow laboratory for lattice gauge fields on a periodic torus.

Submodules: algebra (so(m) packed coordinates), lattice (grids, stencils,
quadrature, field files), gauge (connections, curvature, initial data),
flow (RK4 integration, snapshot stores, energy audits), entropy
(Gaussian-weighted slice/slab functionals and monotonicity reports),
blowup (spacetime measures, parabolic dilations, rescaled views),
singular (concentration scans and dimension estimators), synthetic
(closed-form densities and measures for exact checks), cli (subcommands,
configs, manifests).
"""

__version__ = "0.1.0"

__all__ = [
    "algebra", "lattice", "gauge", "flow", "entropy", "blowup",
    "singular", "synthetic", "cli",
]
