"""Finite-volume generators, spectral gaps and Dirichlet forms.

States are integers whose bit ``x`` is the occupation of vertex ``x``. The
generator is written in the basis weighted by the square root of the
Bernoulli(p) weights, where reversibility makes it symmetric: the entry
between a state and its flip at ``x`` is ``c_x * sqrt(p (1 - p))``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import ArpackNoConvergence, LinearOperator, eigsh

from .exceptions import ConvergenceError, ResourceCapError
from .graph import Boundary, ModelSpec, SiteGraph, all_configs, constraint_table
from .threshold import critical_density, eval_g_prime, largest_fixed_point

DEFAULT_MAX_SITES = 24
DENSE_MAX_SITES = 12
DENSE_TOL = 1e-10
ITERATIVE_RTOL = 1e-8


@dataclass
class GeneratorSpectrum:
    num_states: int
    gap: float
    low_eigenvalues: np.ndarray | None
    ergodic: bool
    method: str = "dense"
    residual: float | None = None


@dataclass
class MonteCarlo:
    samples: int
    seed: int | None = None


@dataclass
class DirichletReport:
    variance: float
    dirichlet: float
    ratio: float
    estimator: str
    samples: int | None = None
    stderr_variance: float = 0.0
    stderr_dirichlet: float = 0.0
    stderr_ratio: float = 0.0
    degenerate: bool = False


def _flip_view(v: np.ndarray, x: int) -> np.ndarray:
    """``v[s ^ (1 << x)]`` for every state ``s``, as a strided view."""
    return v.reshape(-1, 2, 1 << x)[:, ::-1, :].reshape(-1)


class Generator(LinearOperator):
    """Symmetrised generator on ``2**V`` states, applied without storing a matrix.

    ``matvec`` applies the (non-positive) generator itself. :meth:`toarray`
    and :meth:`tocsr` materialise it for small ``V``.
    """

    def __init__(self, spec: ModelSpec, g: SiteGraph, boundary: Boundary | None = None, max_sites: int = DEFAULT_MAX_SITES):
        V = g.n_vertices
        if V > max_sites:
            raise ResourceCapError(f"{V} sites give 2**{V} states; the cap is {max_sites} sites")
        n = 1 << V
        super().__init__(dtype=np.float64, shape=(n, n))
        self.spec, self.g, self.boundary = spec, g, boundary
        self.V = V
        p = spec.p
        self.offdiag = math.sqrt(p * (1.0 - p))
        table = constraint_table(spec, g, boundary)
        allowed = np.empty((V, n), dtype=bool)
        chunk = 1 << 16
        for start in range(0, n, chunk):
            s = np.arange(start, min(n, start + chunk), dtype=np.int64)
            eta = ((s[:, None] >> np.arange(V)) & 1).astype(np.uint8)
            allowed[:, start : start + len(s)] = table.satisfied(eta).T
        self.allowed = allowed
        states = np.arange(n, dtype=np.int64)
        diag = np.zeros(n)
        for x in range(V):
            occupied = (states >> x) & 1
            diag -= allowed[x] * np.where(occupied == 1, 1.0 - p, p)
        self.diagonal = diag

    def _matvec(self, v):
        v = np.asarray(v, dtype=np.float64).reshape(-1)
        out = self.diagonal * v
        for x in range(self.V):
            out += self.offdiag * self.allowed[x] * _flip_view(v, x)
        return out

    def _rmatvec(self, v):
        return self._matvec(v)

    def stationary_vector(self) -> np.ndarray:
        """Unit null vector: square roots of the Bernoulli(p) weights."""
        p = self.spec.p
        ones = _popcount(self.shape[0])
        w = np.sqrt(np.power(p, ones) * np.power(1.0 - p, self.V - ones))
        return w / np.linalg.norm(w)

    def tocsr(self) -> sp.csr_matrix:
        n = self.shape[0]
        states = np.arange(n, dtype=np.int64)
        rows, cols, vals = [states], [states], [self.diagonal]
        for x in range(self.V):
            m = self.allowed[x]
            rows.append(states[m])
            cols.append(states[m] ^ (1 << x))
            vals.append(np.full(int(m.sum()), self.offdiag))
        return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))

    def toarray(self) -> np.ndarray:
        return self.tocsr().toarray()


def _popcount(n: int) -> np.ndarray:
    s = np.arange(n, dtype=np.int64)
    out = np.zeros(n, dtype=np.int64)
    while np.any(s):
        out += s & 1
        s >>= 1
    return out


def build_generator(spec: ModelSpec, g: SiteGraph, boundary: Boundary | None = None, max_sites: int = DEFAULT_MAX_SITES) -> Generator:
    """Symmetrised generator of the constrained dynamics on ``g``.

    ``boundary=None`` uses free tree leaves (and an empty exterior for the
    triangle); pass a :class:`~kcsm.graph.Boundary` to constrain leaves by an
    exterior instead.
    """
    return Generator(spec, g, boundary, max_sites)


def _spectrum_from_eigs(evals, n, method, residual=None, n_low=6):
    evals = np.sort(np.asarray(evals, dtype=float))
    zero_tol = 1e-9 * max(1.0, float(np.max(np.abs(evals))))
    n_zero = int(np.sum(evals < zero_tol))
    ergodic = n_zero == 1
    if ergodic:
        gap = float(evals[1])
    else:
        gap = 0.0
    return GeneratorSpectrum(n, gap, evals[:n_low].copy(), ergodic, method, residual)


def exact_gap(
    spec: ModelSpec,
    g: SiteGraph,
    boundary: Boundary | None = None,
    method: str = "auto",
    max_sites: int = DEFAULT_MAX_SITES,
    rtol: float = ITERATIVE_RTOL,
) -> GeneratorSpectrum:
    """Smallest nonzero eigenvalue of minus the generator.

    ``method="auto"`` diagonalises densely up to ``DENSE_MAX_SITES`` sites and
    otherwise runs Lanczos (ARPACK) on the operator with its stationary
    direction shifted out of the way.
    """
    gen = build_generator(spec, g, boundary, max_sites)
    n = gen.shape[0]
    if method == "auto":
        method = "dense" if gen.V <= DENSE_MAX_SITES else "lanczos"
    if method == "dense":
        evals = np.linalg.eigvalsh(-gen.toarray())
        return _spectrum_from_eigs(evals, n, "dense")
    if method != "lanczos":
        raise ValueError(f"unknown method {method!r}")
    return _lanczos_gap(gen, rtol)


def _lanczos_gap(gen: Generator, rtol: float, n_eigs: int = 4) -> GeneratorSpectrum:
    n = gen.shape[0]
    psi = gen.stationary_vector()
    p = gen.spec.p
    # Gershgorin bound on the spectrum of -L
    top = gen.V * (max(p, 1.0 - p) + gen.offdiag) + 1.0

    def mv(v):
        v = np.asarray(v).reshape(-1)
        return -gen.matvec(v) + top * psi * (psi @ v)

    op = LinearOperator((n, n), matvec=mv, dtype=np.float64)
    k = min(n_eigs, n - 2)
    rng = np.random.default_rng(0)
    v0 = rng.standard_normal(n)
    v0 -= psi * (psi @ v0)
    try:
        evals, evecs = eigsh(op, k=k, which="SA", tol=rtol * 1e-2, v0=v0, maxiter=max(1000, 20 * n))
    except ArpackNoConvergence as exc:
        raise ConvergenceError("Lanczos did not converge", residual=None) from exc
    order = np.argsort(evals)
    evals, evecs = evals[order], evecs[:, order]
    resid = max(np.linalg.norm(mv(evecs[:, i]) - evals[i] * evecs[:, i]) for i in range(k))
    scale = max(1.0, abs(evals[0]))
    if resid > rtol * scale * 10:
        raise ConvergenceError(f"Lanczos residual {resid:.3g} above tolerance", residual=resid)
    # the stationary direction was moved to `top`; restore it as eigenvalue 0
    full = np.concatenate([[0.0], evals])
    return _spectrum_from_eigs(full, n, "lanczos", residual=float(resid))


# --- Dirichlet forms -------------------------------------------------------


def _site_gradients(f, eta: np.ndarray) -> np.ndarray:
    grads = getattr(f, "gradients", None)
    if grads is not None:
        return np.asarray(grads(eta), dtype=float)
    out = np.empty(eta.shape, dtype=float)
    for x in range(eta.shape[1]):
        up, down = eta.copy(), eta.copy()
        up[:, x] = 1
        down[:, x] = 0
        out[:, x] = np.asarray(f(up), dtype=float) - np.asarray(f(down), dtype=float)
    return out


def dirichlet_ratio(
    spec: ModelSpec,
    g: SiteGraph,
    f,
    mode="exact",
    boundary: Boundary | None = None,
    max_sites: int = 20,
    chunk: int = 20000,
) -> DirichletReport:
    """Variance, Dirichlet form and their ratio for a test function ``f``.

    ``f`` maps a batch of configurations ``(N, V)`` to ``N`` values. If it has
    a ``gradients`` method (see :class:`~kcsm.bootstrap.RootEvent`) that is
    used for the discrete derivatives. ``mode`` is ``"exact"`` (enumerate all
    configurations) or a :class:`MonteCarlo` instance.

    The Dirichlet form is ``sum_x E[c_x p (1-p) (f(eta^{x,1}) - f(eta^{x,0}))^2]``.
    """
    p = spec.p
    table = constraint_table(spec, g, boundary)
    pq = p * (1.0 - p)
    V = g.n_vertices

    if isinstance(mode, str):
        if mode != "exact":
            raise ValueError(f"unknown mode {mode!r}")
        if V > max_sites:
            raise ResourceCapError(f"exact Dirichlet form limited to {max_sites} sites, graph has {V}")
        eta = all_configs(V)
        ones = eta.sum(axis=1)
        w = np.power(p, ones) * np.power(1.0 - p, V - ones)
        fv = np.asarray(f(eta), dtype=float)
        mean = float(w @ fv)
        var = float(w @ (fv - mean) ** 2)
        grad = _site_gradients(f, eta)
        local = (table.satisfied(eta) * grad**2).sum(axis=1) * pq
        dirichlet = float(w @ local)
        return _report(var, dirichlet, "exact")

    rng = np.random.default_rng(mode.seed)
    n_total = mode.samples
    fvals = np.empty(n_total)
    dvals = np.empty(n_total)
    done = 0
    while done < n_total:
        m = min(chunk, n_total - done)
        eta = (rng.random((m, V)) < p).astype(np.uint8)
        fvals[done : done + m] = np.asarray(f(eta), dtype=float)
        grad = _site_gradients(f, eta)
        dvals[done : done + m] = (table.satisfied(eta) * grad**2).sum(axis=1) * pq
        done += m
    mean_f = fvals.mean()
    sq = (fvals - mean_f) ** 2
    var = float(sq.mean())
    dirichlet = float(dvals.mean())
    se_var = float(sq.std(ddof=1) / math.sqrt(n_total))
    se_d = float(dvals.std(ddof=1) / math.sqrt(n_total))
    rep = _report(var, dirichlet, "montecarlo", n_total, se_var, se_d)
    if not rep.degenerate and dirichlet > 0:
        cov = float(np.cov(dvals, sq)[0, 1]) / n_total
        rel2 = (se_d / dirichlet) ** 2 + (se_var / var) ** 2 - 2 * cov / (dirichlet * var)
        rep.stderr_ratio = rep.ratio * math.sqrt(max(rel2, 0.0))
    return rep


def _report(var, dirichlet, estimator, samples=None, se_var=0.0, se_d=0.0):
    degenerate = var <= 1e-300
    ratio = math.nan if degenerate else dirichlet / var
    return DirichletReport(var, dirichlet, ratio, estimator, samples, se_var, se_d, 0.0, degenerate)


def predicted_decay_rate(k: int, j: int, p: float, p_c: float | None = None) -> float:
    """Per-level decay rate ``-log g'(p_inf)`` of the variational upper bound above ``p_c``."""
    if p_c is None:
        rep = critical_density(k, j)
        p_c, upper = rep.p_c, rep.p_c + rep.bracket_width / 2
    else:
        upper = p_c
    if p <= upper:
        raise ValueError(f"predicted_decay_rate needs p > p_c = {p_c!r}, got p = {p!r}")
    fp = largest_fixed_point(k, j, p)
    d = eval_g_prime(k, j, p, fp.p_inf)
    if d <= 0.0:
        return math.inf
    return -math.log(d)
