import math

import numpy as np
import pytest

from kcsm.bootstrap import RootEvent
from kcsm.exceptions import ResourceCapError
from kcsm.graph import Boundary, ModelSpec, build_graph
from kcsm.spectral import MonteCarlo, build_generator, dirichlet_ratio, exact_gap, predicted_decay_rate
from oracles import dense_gap, rate_matrix


def oracle_rate_matrix(spec, g):
    return rate_matrix(spec, g)


def oracle_gap(spec, g):
    return dense_gap(spec, g)[0]


CASES = [
    (ModelSpec("ofa", 2, 2, 0.3), "rooted", 1),
    (ModelSpec("ofa", 2, 2, 0.3), "rooted", 2),
    (ModelSpec("ofa", 2, 2, 0.7), "rooted", 2),
    (ModelSpec("ofa", 3, 2, 0.6), "rooted", 1),
    (ModelSpec("fa", 2, 2, 0.3), "unrooted", 1),
    (ModelSpec("fa", 2, 2, 0.7), "rooted", 2),
    (ModelSpec("ne", p=0.5), "triangle", 2),
    (ModelSpec("ne", p=0.2), "triangle", 3),
]


@pytest.mark.parametrize("spec,kind,L", CASES)
def test_gap_matches_oracle(spec, kind, L):
    g = build_graph(kind, spec.k, L)
    rep = exact_gap(spec, g)
    assert rep.ergodic
    assert rep.gap == pytest.approx(oracle_gap(spec, g), abs=1e-10)


def test_single_spin():
    g = build_graph("rooted", 2, 0)
    for p in (0.1, 0.5, 0.9):
        rep = exact_gap(ModelSpec("ofa", 2, 2, p), g)
        assert rep.gap == pytest.approx(1.0, abs=1e-12)
        assert np.allclose(rep.low_eigenvalues, [0.0, 1.0])


@pytest.mark.parametrize("spec,kind,L", CASES[:6])
def test_generator_structure(spec, kind, L):
    g = build_graph(kind, spec.k, L)
    gen = build_generator(spec, g)
    A = gen.toarray()
    assert np.max(np.abs(A - A.T)) < 1e-12
    # undo the square-root weighting: rows of the rate matrix sum to zero
    w = gen.stationary_vector()
    Q = A * w[None, :] / w[:, None]
    assert np.max(np.abs(Q.sum(axis=1))) < 1e-12
    assert np.allclose(Q, oracle_rate_matrix(spec, g), atol=1e-12)
    assert np.allclose(A @ w, 0.0, atol=1e-12)
    ev = np.linalg.eigvalsh(-A)
    assert ev.min() > -1e-10 and ev.max() <= g.n_vertices + 1e-10


def test_matvec_matches_matrix(rng):
    spec, g = ModelSpec("fa", 2, 2, 0.4), build_graph("unrooted", 2, 2)
    gen = build_generator(spec, g)
    v = rng.standard_normal(gen.shape[0])
    assert np.allclose(gen.matvec(v), gen.tocsr() @ v)


@pytest.mark.parametrize("p", [0.3, 0.7])
def test_lanczos_agrees_with_dense(p):
    spec, g = ModelSpec("ofa", 2, 2, p), build_graph("rooted", 2, 2)
    dense = exact_gap(spec, g, method="dense")
    lanc = exact_gap(spec, g, method="lanczos")
    assert lanc.method == "lanczos"
    assert lanc.gap == pytest.approx(dense.gap, rel=1e-8)


def test_filled_boundary_breaks_ergodicity():
    # with a filled exterior the all-occupied configuration is absorbing
    spec, g = ModelSpec("ofa", 2, 2, 0.6), build_graph("rooted", 2, 1)
    rep = exact_gap(spec, g, boundary=Boundary.FILLED)
    assert not rep.ergodic and rep.gap == 0.0


def test_state_cap():
    with pytest.raises(ResourceCapError):
        build_generator(ModelSpec("ofa", 2, 2, 0.5), build_graph("rooted", 2, 4), max_sites=20)


def test_gap_monotone_in_j():
    g = build_graph("rooted", 3, 1)
    gaps = [exact_gap(ModelSpec("ofa", 3, j, 0.5), g).gap for j in (1, 2, 3)]
    assert gaps[0] >= gaps[1] - 1e-12 >= gaps[2] - 2e-12
    g = build_graph("rooted", 2, 2)
    assert exact_gap(ModelSpec("ofa", 2, 1, 0.6), g).gap >= exact_gap(ModelSpec("ofa", 2, 2, 0.6), g).gap


def test_dirichlet_constant_flagged():
    spec, g = ModelSpec("ofa", 2, 2, 0.5), build_graph("rooted", 2, 1)
    rep = dirichlet_ratio(spec, g, lambda eta: np.ones(len(eta)))
    assert rep.degenerate and math.isnan(rep.ratio)


def test_dirichlet_single_site_function():
    # f = eta_x for a free leaf: Var = p(1-p), D = p(1-p), ratio 1
    spec, g = ModelSpec("ofa", 2, 2, 0.3), build_graph("rooted", 2, 1)
    rep = dirichlet_ratio(spec, g, lambda eta: eta[:, 1].astype(float))
    assert rep.variance == pytest.approx(0.21)
    assert rep.ratio == pytest.approx(1.0)


@pytest.mark.parametrize("L", [1, 2, 3])
@pytest.mark.parametrize("p", [0.3, 0.7])
def test_variational_principle(L, p):
    spec, g = ModelSpec("ofa", 2, 2, p), build_graph("rooted", 2, L)
    gap = exact_gap(spec, g).gap
    f = RootEvent(spec, g)
    assert dirichlet_ratio(spec, g, f).ratio >= gap - 1e-12
    rng = np.random.default_rng(L)
    table = rng.standard_normal(2**g.n_vertices)
    h = lambda eta: table[(eta.astype(np.int64) << np.arange(eta.shape[1])).sum(axis=1)]
    assert dirichlet_ratio(spec, g, h).ratio >= gap - 1e-12


def test_event_A_only_leaves_contribute():
    spec, g = ModelSpec("ofa", 2, 2, 0.7), build_graph("rooted", 2, 3)
    from kcsm.graph import all_configs, constraint_vector

    eta = all_configs(g.n_vertices)
    grads = RootEvent(spec, g).gradients(eta)
    c = constraint_vector(spec, g, eta)
    assert not np.any((grads != 0) & c & ~g.leaves)


def test_event_A_dirichlet_closed_form():
    # only the free leaves contribute: D = p(1-p) * k^L * P(leaf pivotal)
    p = 0.7
    for L in range(1, 4):
        spec, g = ModelSpec("ofa", 2, 2, p), build_graph("rooted", 2, L)
        from kcsm.threshold import iterate_recursion

        pbar = iterate_recursion(2, 2, p, L)
        # a leaf is pivotal iff each ancestor at height m is occupied and the sibling subtree of height m-1 is empty by then
        piv = np.prod([p * (1 - pbar[m]) for m in range(L)])
        expected = p * (1 - p) * 2**L * piv
        assert dirichlet_ratio(spec, g, RootEvent(spec, g)).dirichlet == pytest.approx(expected, rel=1e-12)


def test_monte_carlo_matches_exact():
    spec, g = ModelSpec("ofa", 2, 2, 0.7), build_graph("rooted", 2, 3)
    f = RootEvent(spec, g)
    ex = dirichlet_ratio(spec, g, f)
    mc = dirichlet_ratio(spec, g, f, MonteCarlo(200000, seed=3))
    assert mc.estimator == "montecarlo" and mc.samples == 200000
    assert abs(mc.ratio - ex.ratio) < 4 * mc.stderr_ratio
    again = dirichlet_ratio(spec, g, f, MonteCarlo(200000, seed=3))
    assert again.ratio == mc.ratio


def test_predicted_decay_rate():
    assert predicted_decay_rate(2, 2, 0.7) == pytest.approx(-math.log(0.6), abs=1e-10)
    rates = [predicted_decay_rate(2, 2, p) for p in (0.55, 0.7, 0.9, 0.99)]
    assert all(0 < r < math.inf for r in rates)
    assert rates[-1] > rates[1]
    with pytest.raises(ValueError, match="p_c"):
        predicted_decay_rate(2, 2, 0.5)
    with pytest.raises(ValueError):
        predicted_decay_rate(2, 2, 0.3)
