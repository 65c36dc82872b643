"""Independent reference implementations used by the tests."""

import math

import numpy as np
import scipy.linalg


def rate_matrix(spec, g):
    """Unweighted rate matrix built state by state from the model definition.

    Tree leaves are unconstrained; triangle sites see an empty exterior.
    """
    V = g.n_vertices
    n = 2**V
    Q = np.zeros((n, n))
    for s in range(n):
        eta = [(s >> i) & 1 for i in range(V)]
        for x in range(V):
            if g.kind.value == "triangle":
                cx, cy = (int(c) for c in g.coords[x])
                nb = [(cx + 1, cy), (cx, cy + 1)]
                ok = all(eta[g.site(*c)] == 0 if c in g._site_index else True for c in nb)
            else:
                kids = [int(c) for c in g.child_slots[x] if c >= 0]
                if not kids:
                    ok = True
                else:
                    nbrs = kids + ([int(g.parent[x])] if spec.family.value == "fa" and g.parent[x] >= 0 else [])
                    ok = sum(1 - eta[y] for y in nbrs) >= spec.j
            if ok:
                rate = spec.p if eta[x] == 0 else 1 - spec.p
                Q[s, s ^ (1 << x)] += rate
                Q[s, s] -= rate
    return Q


def dense_gap(spec, g):
    """Second smallest eigenvalue of minus the rate matrix, by general dense eigensolve."""
    ev = np.sort(np.real(scipy.linalg.eigvals(-rate_matrix(spec, g))))
    return float(ev[1]), ev


def g_direct(k, j, p, x):
    return p * sum(math.comb(k, i) * x**i * (1 - x) ** (k - i) for i in range(k - j + 1, k + 1))
