"""Synchronous bootstrap maps, the root-occupancy event and pivotality.

One bootstrap step empties every site that is already empty or whose
constraint holds, all sites being evaluated on the same input. Outside
neighbours take the value of the given :class:`~kcsm.graph.Boundary`; the
free-leaf rule of the dynamics does not apply here.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import Boundary, ConstraintTable, Family, GraphKind, ModelSpec, SiteGraph, constraint_table


@dataclass
class BootstrapResult:
    final: np.ndarray
    iterations_to_fixpoint: int
    root_occupied_trace: list[bool]


def _step(table: ConstraintTable, eta: np.ndarray) -> np.ndarray:
    return eta & ~table.satisfied(eta)


def bootstrap_step(spec: ModelSpec, g: SiteGraph, eta, boundary: Boundary) -> np.ndarray:
    """Apply the bootstrap map once. Accepts single configurations or batches."""
    eta = np.asarray(eta, dtype=np.uint8)
    return _step(constraint_table(spec, g, boundary), eta)


def bootstrap_iterate(spec: ModelSpec, g: SiteGraph, eta, boundary: Boundary, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Run ``n`` bootstrap steps.

    Returns the configuration after ``n`` steps and the root occupancy after
    ``0..n`` steps, shape ``eta.shape[:-1] + (n + 1,)``.
    """
    table = constraint_table(spec, g, boundary)
    cur = np.asarray(eta, dtype=np.uint8)
    trace = [cur[..., g.root].copy()]
    for _ in range(n):
        cur = _step(table, cur)
        trace.append(cur[..., g.root].copy())
    return cur, np.stack(trace, axis=-1)


def bootstrap_fixpoint(spec: ModelSpec, g: SiteGraph, eta, boundary: Boundary) -> BootstrapResult:
    """Iterate the bootstrap map on a single configuration until it stops changing."""
    table = constraint_table(spec, g, boundary)
    cur = np.asarray(eta, dtype=np.uint8).copy()
    trace = [bool(cur[g.root])]
    iterations = 0
    while True:
        nxt = _step(table, cur)
        if np.array_equal(nxt, cur):
            break
        cur = nxt
        iterations += 1
        trace.append(bool(cur[g.root]))
    return BootstrapResult(cur, iterations, trace)


def stable_occupied(spec: ModelSpec, g: SiteGraph, eta, boundary: Boundary) -> np.ndarray:
    """Mask of sites that stay occupied forever under the bootstrap map."""
    return bootstrap_fixpoint(spec, g, eta, boundary).final.astype(bool)


def event_A(spec: ModelSpec, g: SiteGraph, eta, n: int | None = None) -> np.ndarray | bool:
    """Root still occupied after ``n`` bootstrap steps with a filled exterior.

    ``n`` defaults to the graph depth. Batches return a boolean array.
    """
    n = g.L if n is None else n
    if n < 0:
        raise ValueError("n must be >= 0")
    _, trace = bootstrap_iterate(spec, g, eta, Boundary.FILLED, n)
    out = trace[..., -1].astype(bool)
    return bool(out) if out.ndim == 0 else out


def is_pivotal(spec: ModelSpec, g: SiteGraph, eta, x: int, n: int | None = None) -> bool:
    """Whether flipping ``eta[x]`` changes :func:`event_A`."""
    eta = np.array(eta, dtype=np.uint8)
    up, down = eta.copy(), eta.copy()
    up[..., x] = 1
    down[..., x] = 0
    res = np.asarray(event_A(spec, g, up, n)) != np.asarray(event_A(spec, g, down, n))
    return bool(res) if res.ndim == 0 else res


def aux_constraint(spec: ModelSpec, g: SiteGraph, eta, x: int, ell: int) -> bool:
    """Long-range constraint: can ``x`` be emptied within ``ell`` bootstrap steps?

    ``x`` is first set occupied; the steps use an empty exterior. For trees the
    constraint is identically satisfied when the subtree below ``x`` is
    shallower than ``ell``.
    """
    if ell < 1:
        raise ValueError("ell must be >= 1")
    if spec.family is Family.FA:
        raise ValueError("the long-range constraint is defined for the OFA and NE families only")
    if g.kind is not GraphKind.TRIANGLE and g.subtree_height(x) < ell:
        return True
    cur = np.array(eta, dtype=np.uint8)
    cur[x] = 1
    if g.kind is GraphKind.TRIANGLE:
        sites = np.arange(g.n_vertices)
    else:
        # only the ell levels below x can influence x within ell steps
        sites = g.subtree(x, ell)
    table = constraint_table(spec, g, Boundary.EMPTY)
    for _ in range(ell):
        nxt = _step(table, cur)
        cur[sites] = nxt[sites]
        if cur[x] == 0:
            return True
    return False


class RootEvent:
    """Indicator of :func:`event_A` as a function on configurations.

    For the oriented family on a rooted tree :meth:`gradients` uses the
    closed-form pivotality structure: a site matters only if every ancestor is
    occupied and has exactly ``j - 1`` other children that are empty at the
    relevant bootstrap time. Other families fall back to flipping each site.
    """

    def __init__(self, spec: ModelSpec, g: SiteGraph, n: int | None = None):
        self.spec, self.g = spec, g
        self.n = g.L if n is None else n

    def _fast(self) -> bool:
        return self.spec.family is Family.OFA and self.g.kind is GraphKind.ROOTED

    def __call__(self, eta) -> np.ndarray:
        if self._fast():
            eta = np.asarray(eta, dtype=np.uint8)
            settled, _, _ = self._ofa_settle(np.atleast_2d(eta).T)
            return settled[self.g.root].astype(float).reshape(eta.shape[:-1])
        return np.asarray(event_A(self.spec, self.g, eta, self.n), dtype=float)

    def gradients(self, eta) -> np.ndarray:
        """``f(eta with x=1) - f(eta with x=0)`` for every site, shape ``(N, V)``."""
        eta = np.atleast_2d(np.asarray(eta, dtype=np.uint8))
        if self._fast():
            return self._ofa_gradients(eta)
        out = np.empty(eta.shape, dtype=float)
        for x in range(self.g.n_vertices):
            up, down = eta.copy(), eta.copy()
            up[:, x] = 1
            down[:, x] = 0
            out[:, x] = self(up) - self(down)
        return out

    def _ofa_settle(self, eta_t: np.ndarray):
        """Bottom-up pass: each site's value at the time it reaches the root.

        Works on site-major arrays of shape ``(V, N)`` so that gathering the
        children of a level reads contiguous rows. Frontier sites see a filled
        exterior and never empty, so level ``d`` is final after ``front - d``
        steps.
        """
        g, j = self.g, self.spec.j
        front = min(self.n, g.L)
        levels = [np.flatnonzero(g.depth == d) for d in range(front + 1)]
        settled = np.zeros(eta_t.shape, dtype=np.uint8)
        n_empty = np.zeros(eta_t.shape, dtype=np.uint8)
        settled[levels[front]] = eta_t[levels[front]]
        for d in range(front - 1, -1, -1):
            lv = levels[d]
            kids = g.child_slots[lv]
            n_empty[lv] = g.k - settled[kids].sum(axis=1, dtype=np.uint8)
            settled[lv] = eta_t[lv] & (n_empty[lv] < j)
        return settled, n_empty, levels

    def _ofa_gradients(self, eta: np.ndarray) -> np.ndarray:
        g, j = self.g, self.spec.j
        eta_t = np.ascontiguousarray(eta.T)
        front = min(self.n, g.L)
        settled, n_empty, levels = self._ofa_settle(eta_t)
        piv = np.zeros(eta_t.shape, dtype=bool)
        piv[g.root] = True
        for d in range(front):
            lv = levels[d]
            kids = g.child_slots[lv]
            ok = piv[lv] & (eta_t[lv] == 1)
            # a child is pivotal when the other children supply exactly j - 1 empties
            siblings_empty = n_empty[lv][:, None, :] - (1 - settled[kids])
            piv[kids] = ok[:, None, :] & (siblings_empty == j - 1)
        # flipping x changes its own settled value only if its children allow it to stay
        return (piv & (n_empty < j)).T.astype(float)
