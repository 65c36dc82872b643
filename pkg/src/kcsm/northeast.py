"""North-East model on a triangle and the bulk occupation probability ``p_ell``.

A site may flip when both its north and east neighbours are empty. On the
triangle ``{x, y >= 0, x + y <= L}`` sites beyond the hypotenuse count as
empty, so the hypotenuse is unconstrained.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .bootstrap import BootstrapResult, bootstrap_fixpoint
from .graph import Boundary, Family, GraphKind, ModelSpec, SiteGraph, build_graph
from .glauber import SimConfig, TrajectoryStats, simulate

# sample rows processed at once when estimating p_ell
BATCH_CELLS = 1 << 24


def _check_triangle(g: SiteGraph):
    if g.kind is not GraphKind.TRIANGLE:
        raise ValueError("expected a North-East triangle")


def ne_quadrant(g: SiteGraph, x: int, include_x: bool = True) -> np.ndarray:
    """Sites ``z`` of the triangle with ``z >= x`` coordinatewise.

    ``include_x=False`` drops ``x`` itself.
    """
    _check_triangle(g)
    if not 0 <= x < g.n_vertices:
        raise ValueError(f"site {x} is not in the triangle")
    cx, cy = g.coords[x]
    mask = (g.coords[:, 0] >= cx) & (g.coords[:, 1] >= cy)
    if not include_x:
        mask[x] = False
    return np.flatnonzero(mask)


def ne_aux_constraint(g: SiteGraph, eta, x: int, ell: int) -> bool:
    """Whether ``x``, set occupied, empties within ``ell`` NE bootstrap steps.

    Uses an empty exterior. Only the quadrant above ``x`` can influence ``x``.
    """
    _check_triangle(g)
    if ell < 1:
        raise ValueError("ell must be >= 1")
    cur = np.array(eta, dtype=np.uint8)
    cur[x] = 1
    quad = ne_quadrant(g, x)
    east, north = g.child_slots[quad, 0], g.child_slots[quad, 1]
    for _ in range(ell):
        ext = np.append(cur, 0)
        both_empty = (ext[east] == 0) & (ext[north] == 0)
        cur[quad] = cur[quad] & ~both_empty
        if cur[x] == 0:
            return True
    return False


def ne_spec(p: float) -> ModelSpec:
    return ModelSpec(Family.NE, 2, 2, p)


def ne_bootstrap(L: int, eta, boundary: Boundary = Boundary.EMPTY) -> BootstrapResult:
    """NE bootstrap on the side-``L`` triangle, iterated to a fixpoint."""
    g = build_graph(GraphKind.TRIANGLE, L=L)
    return bootstrap_fixpoint(ne_spec(0.5), g, eta, boundary)


def ne_dynamics(L: int, p: float, init, cfg: SimConfig, boundary: Boundary = Boundary.EMPTY) -> TrajectoryStats:
    """NE Glauber dynamics on the side-``L`` triangle.

    The root observable is the origin.
    """
    g = build_graph(GraphKind.TRIANGLE, L=L)
    return simulate(ne_spec(p), g, init, cfg, boundary)


@dataclass
class NEReport:
    ell: int
    p_ell: float
    stderr: float
    delta: float
    condition_value: float
    passes: bool
    samples: int
    seed: int


def ne_probe_occupied(fields: np.ndarray, ell: int) -> np.ndarray:
    """Occupancy of the corner site ``[0, 0]`` after ``ell`` NE bootstrap steps.

    ``fields`` has shape ``(N, n, n)`` with axis 1 the east (x) direction and
    axis 2 the north (y) direction. Sites outside the window are occupied.
    """
    cur = fields.astype(bool)
    n = cur.shape[1]
    for t in range(ell):
        # after t steps only sites with x + y <= ell - t still matter
        m = min(n, ell - t + 1)
        a = cur[:, :m, :m]
        east = np.ones_like(a)
        north = np.ones_like(a)
        east[:, :-1, :] = cur[:, 1:m, :m]
        north[:, :, :-1] = cur[:, :m, 1:m]
        if m < n:
            east[:, -1, :] = cur[:, m, :m]
            north[:, :, -1] = cur[:, :m, m]
        cur[:, :m, :m] = a & (east | north)
    return cur[:, 0, 0]


def estimate_p_ell(p: float, ell: int, lattice_side: int, samples: int, seed: int = 0) -> NEReport:
    """Monte Carlo estimate of the bulk ``p_ell`` of the North-East model.

    The probe sits at the south-west corner of a ``lattice_side`` square of
    fresh Bernoulli(``p``) sites. Sites past the window are occupied, which
    can only raise the estimate. Within ``ell`` steps the probe only sees sites
    with ``x + y <= ell``, so once ``lattice_side > ell`` the estimate is the
    bulk value and only the relevant ``(ell + 1)``-square is sampled.
    """
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"p must lie in [0, 1], got {p}")
    if ell < 0:
        raise ValueError("ell must be >= 0")
    if samples < 2:
        raise ValueError("samples must be >= 2")
    if 2 * ell > lattice_side:
        raise ValueError(f"window too small: ell={ell} exceeds lattice_side/2={lattice_side / 2}")
    n = min(lattice_side, ell + 1)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    batch = max(1, BATCH_CELLS // (n * n))
    hits = 0
    done = 0
    while done < samples:
        m = min(batch, samples - done)
        fields = rng.random((m, n, n)) < p
        hits += int(ne_probe_occupied(fields, ell).sum())
        done += m
    est = hits / samples
    se = math.sqrt(est * (1.0 - est) / (samples - 1))
    delta = est / p if p > 0 else 0.0
    cond = (ell + 1) ** 2 * delta
    return NEReport(ell, est, se, delta, cond, cond < 0.25, samples, seed)
