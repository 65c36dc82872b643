"""Finite topologies, spin configurations and local constraints.

Vertices are numbered ``0..V-1``. Trees are numbered breadth-first from the
root (or center); the North-East triangle is numbered by anti-diagonal
``x + y`` and, inside one anti-diagonal, by decreasing ``x``.

A configuration is a ``uint8`` numpy array of length ``V`` (``1`` = occupied,
``0`` = empty). Every routine that takes a configuration also accepts a batch
of shape ``(..., V)``.

Each vertex carries a row of neighbour *slots*. A slot holds a vertex id, or
``OUTSIDE`` for a neighbour lying beyond the finite graph (its value is set by
a :class:`Boundary`), or ``NO_SLOT`` for a neighbour that does not exist at
all (the parent of a rooted tree's root).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ResourceCapError

OUTSIDE = -1
NO_SLOT = -2

DEFAULT_VERTEX_CAP = 2**31


class Family(enum.Enum):
    FA = "fa"
    OFA = "ofa"
    NE = "ne"


class GraphKind(enum.Enum):
    ROOTED = "rooted"
    UNROOTED = "unrooted"
    TRIANGLE = "triangle"


class Boundary(enum.Enum):
    """Value given to neighbours lying outside a finite graph."""

    FILLED = 1
    EMPTY = 0


@dataclass(frozen=True)
class ModelSpec:
    """Constraint family, branching ``k``, facilitating parameter ``j`` and density ``p``.

    ``k`` and ``j`` are ignored for the North-East family.
    """

    family: Family
    k: int = 2
    j: int = 2
    p: float = 0.5

    def __post_init__(self):
        if isinstance(self.family, str):
            object.__setattr__(self, "family", Family(self.family.lower()))
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"density p must lie in [0, 1], got {self.p}")
        if self.family is not Family.NE:
            if self.k < 1:
                raise ValueError(f"k must be >= 1, got {self.k}")
            if not 1 <= self.j <= self.k:
                raise ValueError(f"j must satisfy 1 <= j <= k, got j={self.j}, k={self.k}")

    @property
    def threshold(self) -> int:
        """Number of empty constraint slots needed to unblock a site."""
        return 2 if self.family is Family.NE else self.j

    def with_p(self, p: float) -> "ModelSpec":
        return ModelSpec(self.family, self.k, self.j, p)


@dataclass(frozen=True, eq=False)
class SiteGraph:
    """Immutable finite graph with parent/children structure.

    Attributes
    ----------
    kind, k, L :
        Graph kind, branching and depth (or triangle size: sites satisfy
        ``x, y >= 0`` and ``x + y <= L``).
    parent : ndarray of int, shape (V,)
        Parent id, ``-1`` for the root.
    depth : ndarray of int, shape (V,)
        Graph distance from the root. For the triangle, ``x + y``.
    child_slots : ndarray of int, shape (V, C)
        Children (for the triangle: east then north neighbour), with
        ``OUTSIDE`` / ``NO_SLOT`` markers as described in the module docstring.
    coords : ndarray of int, shape (V, 2) or None
        Lattice coordinates for the triangle.
    """

    kind: GraphKind
    k: int
    L: int
    parent: np.ndarray
    depth: np.ndarray
    child_slots: np.ndarray
    coords: np.ndarray | None = None
    _site_index: dict = field(default_factory=dict, repr=False)

    @property
    def n_vertices(self) -> int:
        return len(self.parent)

    @property
    def root(self) -> int:
        return 0

    def children(self, x: int) -> np.ndarray:
        row = self.child_slots[x]
        return row[row >= 0]

    def neighbors(self, x: int) -> np.ndarray:
        if self.kind is GraphKind.TRIANGLE:
            x0, y0 = self.coords[x]
            cand = [(x0 + 1, y0), (x0, y0 + 1), (x0 - 1, y0), (x0, y0 - 1)]
            return np.array([self._site_index[c] for c in cand if c in self._site_index], dtype=np.int64)
        nb = list(self.children(x))
        if self.parent[x] >= 0:
            nb.insert(0, int(self.parent[x]))
        return np.array(nb, dtype=np.int64)

    def is_leaf(self, x: int) -> bool:
        return not bool(np.any(self.child_slots[x] >= 0))

    @property
    def leaves(self) -> np.ndarray:
        return ~np.any(self.child_slots >= 0, axis=1)

    def site(self, x: int, y: int) -> int:
        """Vertex id of lattice site ``(x, y)`` in a triangle."""
        if self.kind is not GraphKind.TRIANGLE:
            raise TypeError("site() is only defined for triangles")
        return self._site_index[(x, y)]

    def subtree(self, x: int, levels: int | None = None) -> np.ndarray:
        """Vertices of the subtree rooted at ``x`` (at most ``levels`` below ``x``)."""
        out = [x]
        frontier = [x]
        d = 0
        while frontier and (levels is None or d < levels):
            frontier = [int(c) for v in frontier for c in self.children(v)]
            out.extend(frontier)
            d += 1
        return np.array(out, dtype=np.int64)

    def subtree_height(self, x: int) -> int:
        """Depth of the subtree rooted at ``x`` (0 for a leaf)."""
        h = 0
        frontier = [x]
        while True:
            frontier = [int(c) for v in frontier for c in self.children(v)]
            if not frontier:
                return h
            h += 1


def tree_size(k: int, L: int) -> int:
    if k == 1:
        return L + 1
    return (k ** (L + 1) - 1) // (k - 1)


def unrooted_tree_size(k: int, L: int) -> int:
    if L == 0:
        return 1
    return 1 + (k + 1) * tree_size(k, L - 1)


def build_graph(kind, k: int = 2, L: int = 0, cap: int = DEFAULT_VERTEX_CAP) -> SiteGraph:
    """Build a rooted tree, an unrooted tree or a North-East triangle.

    The unrooted tree is a center with ``k + 1`` neighbours, every other
    non-leaf vertex having ``k`` children; leaves sit at distance ``L``.
    """
    kind = GraphKind(kind) if isinstance(kind, str) else kind
    if L < 0:
        raise ValueError(f"L must be >= 0, got {L}")
    if kind is GraphKind.TRIANGLE:
        n = (L + 1) * (L + 2) // 2
    else:
        if k < 1:
            raise ValueError(f"k must be >= 1, got {k}")
        n = tree_size(k, L) if kind is GraphKind.ROOTED else unrooted_tree_size(k, L)
    if n > cap:
        raise ResourceCapError(f"{kind.value} graph with k={k}, L={L} has {n} vertices, cap is {cap}")

    if kind is GraphKind.TRIANGLE:
        return _triangle(L)
    return _tree(kind, k, L, n)


def _tree(kind: GraphKind, k: int, L: int, n: int) -> SiteGraph:
    width = k if kind is GraphKind.ROOTED else k + 1
    parent = np.full(n, -1, dtype=np.int64)
    depth = np.zeros(n, dtype=np.int64)
    slots = np.full((n, width), NO_SLOT, dtype=np.int64)
    nxt = 1
    level = [0]
    for d in range(L):
        new_level = []
        for v in level:
            n_children = width if (kind is GraphKind.UNROOTED and v == 0) else k
            kids = np.arange(nxt, nxt + n_children)
            nxt += n_children
            slots[v, :n_children] = kids
            parent[kids] = v
            depth[kids] = d + 1
            new_level.extend(kids.tolist())
        level = new_level
    # frontier vertices keep k outside children
    for v in level:
        n_children = width if (kind is GraphKind.UNROOTED and v == 0) else k
        slots[v, :n_children] = OUTSIDE
    assert nxt == n
    for arr in (parent, depth, slots):
        arr.setflags(write=False)
    return SiteGraph(kind, k, L, parent, depth, slots)


def _triangle(L: int) -> SiteGraph:
    coords = [(x, s - x) for s in range(L + 1) for x in range(s, -1, -1)]
    index = {c: i for i, c in enumerate(coords)}
    n = len(coords)
    slots = np.full((n, 2), OUTSIDE, dtype=np.int64)
    parent = np.full(n, -1, dtype=np.int64)
    for i, (x, y) in enumerate(coords):
        slots[i, 0] = index.get((x + 1, y), OUTSIDE)
        slots[i, 1] = index.get((x, y + 1), OUTSIDE)
        # parent: the south neighbour, else the west one
        if y > 0:
            parent[i] = index[(x, y - 1)]
        elif x > 0:
            parent[i] = index[(x - 1, y)]
    coords_arr = np.array(coords, dtype=np.int64).reshape(n, 2)
    depth = coords_arr.sum(axis=1)
    for arr in (parent, depth, slots, coords_arr):
        arr.setflags(write=False)
    return SiteGraph(GraphKind.TRIANGLE, 2, L, parent, depth, slots, coords_arr, index)


# --- constraints -----------------------------------------------------------


@dataclass(frozen=True, eq=False)
class ConstraintTable:
    """Precomputed gather indices for vectorised constraint evaluation.

    ``index`` maps every slot to a column of the extended configuration
    ``[eta, boundary_value, 1]``; ``free`` marks sites whose constraint is
    identically satisfied.
    """

    index: np.ndarray
    threshold: int
    free: np.ndarray
    boundary_value: int

    def satisfied(self, eta: np.ndarray) -> np.ndarray:
        eta = np.asarray(eta, dtype=np.uint8)
        V = eta.shape[-1]
        pad = np.empty(eta.shape[:-1] + (V + 2,), dtype=np.uint8)
        pad[..., :V] = eta
        pad[..., V] = self.boundary_value
        pad[..., V + 1] = 1
        empties = (1 - pad[..., self.index]).sum(axis=-1, dtype=np.int64)
        return (empties >= self.threshold) | self.free


def _check_compatible(spec: ModelSpec, g: SiteGraph) -> None:
    fam, kind = spec.family, g.kind
    if fam is Family.NE and kind is not GraphKind.TRIANGLE:
        raise ValueError("the North-East family needs a triangle graph")
    if fam is Family.OFA and kind is not GraphKind.ROOTED:
        raise ValueError("the oriented family needs a rooted tree")
    if fam is Family.FA and kind is GraphKind.TRIANGLE:
        raise ValueError("the FA family needs a tree")
    if fam is not Family.NE and spec.k != g.k:
        raise ValueError(f"model branching k={spec.k} differs from graph branching k={g.k}")


def constraint_slots(spec: ModelSpec, g: SiteGraph) -> np.ndarray:
    """Slot matrix whose empty entries count toward the constraint."""
    _check_compatible(spec, g)
    if spec.family is Family.FA:
        par = np.where(g.parent >= 0, g.parent, NO_SLOT)[:, None]
        return np.hstack([par, g.child_slots])
    return np.asarray(g.child_slots)


def constraint_table(spec: ModelSpec, g: SiteGraph, boundary: Boundary | None = None) -> ConstraintTable:
    """Build the constraint table.

    ``boundary=None`` selects the dynamical convention: tree leaves are
    unconstrained and triangle sites see an empty exterior. An explicit
    boundary drops the free-leaf rule and fills every outside slot with the
    boundary value, which is what the bootstrap maps use.
    """
    slots = constraint_slots(spec, g)
    V = g.n_vertices
    index = np.where(slots >= 0, slots, np.where(slots == OUTSIDE, V, V + 1))
    if boundary is None:
        if g.kind is GraphKind.TRIANGLE:
            free = np.zeros(V, dtype=bool)
            boundary = Boundary.EMPTY
        else:
            free = g.leaves.copy()
            boundary = Boundary.FILLED
    else:
        free = np.zeros(V, dtype=bool)
    return ConstraintTable(index, spec.threshold, free, boundary.value)


def constraint_vector(spec: ModelSpec, g: SiteGraph, eta, boundary: Boundary | None = None) -> np.ndarray:
    """Constraint value at every vertex; shape ``eta.shape``."""
    return constraint_table(spec, g, boundary).satisfied(eta)


def constraint_satisfied(spec: ModelSpec, g: SiteGraph, eta, x: int, boundary: Boundary | None = None) -> bool:
    """Whether site ``x`` may refresh in configuration ``eta``.

    FA counts empty neighbours (parent included), OFA empty children, NE
    requires both the north and the east neighbour empty. With the default
    ``boundary=None`` tree leaves are always free.
    """
    return bool(constraint_vector(spec, g, eta, boundary)[..., x])


# --- configurations --------------------------------------------------------


def sample_config(spec: ModelSpec, g: SiteGraph, rng=None, size=None) -> np.ndarray:
    """Draw configurations from the Bernoulli(p) product measure."""
    rng = np.random.default_rng(rng)
    shape = (g.n_vertices,) if size is None else (size, g.n_vertices) if np.isscalar(size) else tuple(size) + (g.n_vertices,)
    return (rng.random(shape) < spec.p).astype(np.uint8)


def all_configs(V: int) -> np.ndarray:
    """Every configuration on ``V`` sites; row ``s`` holds the bits of ``s``."""
    s = np.arange(2**V, dtype=np.int64)
    return ((s[:, None] >> np.arange(V)) & 1).astype(np.uint8)


def pack_config(eta) -> int:
    """Integer whose bit ``x`` is ``eta[x]``."""
    return int(sum(int(b) << i for i, b in enumerate(np.asarray(eta).ravel())))


def unpack_config(state: int, V: int) -> np.ndarray:
    return np.array([(state >> i) & 1 for i in range(V)], dtype=np.uint8)
