"""Continuous-time constrained Glauber dynamics.

The simulation uses a uniformised clock: events arrive at total rate ``V``,
each picks a site uniformly and, if the site's constraint holds, refreshes it
to occupied with probability ``p``. Blocked attempts still consume an event,
which reproduces the generator's rates exactly.

Random numbers come from a Philox counter-based generator, one independent
stream per replica spawned from the run seed, so results are reproducible and
independent of how replicas are scheduled.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numba
import numpy as np

from .exceptions import InsufficientDataError
from .graph import Boundary, ModelSpec, SiteGraph, constraint_table

EQUILIBRIUM = "equilibrium"
CHUNK_EVENTS = 1 << 18


@dataclass(frozen=True)
class SimConfig:
    t_max: float
    burn_in: float = 0.0
    sample_interval: float = 1.0
    replicas: int = 1
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.burn_in < self.t_max:
            raise ValueError("need 0 <= burn_in < t_max")
        if self.sample_interval <= 0:
            raise ValueError("sample_interval must be positive")
        if self.replicas < 1:
            raise ValueError("replicas must be >= 1")

    @property
    def sample_times(self) -> np.ndarray:
        n = int(math.floor((self.t_max - self.burn_in) / self.sample_interval + 1e-9)) + 1
        return self.burn_in + self.sample_interval * np.arange(n)


@dataclass
class TrajectoryStats:
    """Observables sampled on a fixed time grid, one row per replica."""

    times: np.ndarray
    series: dict = field(default_factory=dict)
    events: np.ndarray | None = None
    blocked: np.ndarray | None = None
    flips: np.ndarray | None = None
    final: np.ndarray | None = None
    seed: int = 0

    def time_average(self, observable: str = "density") -> tuple[float, float]:
        """Mean over time and replicas, with the standard error across replicas."""
        per_replica = self.series[observable].mean(axis=1)
        R = len(per_replica)
        se = float(per_replica.std(ddof=1) / math.sqrt(R)) if R > 1 else math.nan
        return float(per_replica.mean()), se


def replica_streams(seed: int, n: int) -> list[np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(n)
    return [np.random.Generator(np.random.Philox(c)) for c in children]


@numba.njit(cache=True, nogil=True)
def _run_events(state, index, threshold, free, bval, p, rand, t, t_end, sample_times, pos, out_root, out_dens, out_state, n_occ, flips, root):
    """Consume pre-drawn uniforms until ``t_end`` or the buffer runs out.

    Returns the new time, the number of uniform triples used, the next sample
    index, the occupation count and the number of blocked attempts.
    """
    V = state.shape[0]
    S = index.shape[1]
    n_samples = sample_times.shape[0]
    blocked = 0
    used = 0
    for e in range(rand.shape[0]):
        t_new = t - math.log(1.0 - rand[e, 0]) / V
        while pos < n_samples and sample_times[pos] < min(t_new, t_end):
            out_root[pos] = state[root]
            out_dens[pos] = n_occ / V
            if out_state.shape[0] > 0:
                code = 0
                for i in range(V):
                    code |= np.int64(state[i]) << i
                out_state[pos] = code
            pos += 1
        used = e + 1
        if t_new >= t_end:
            t = t_end
            break
        t = t_new
        x = int(rand[e, 1] * V)
        if x >= V:
            x = V - 1
        ok = free[x]
        if not ok:
            empties = 0
            for s in range(S):
                i = index[x, s]
                if i < V:
                    empties += 1 - state[i]
                elif i == V:
                    empties += 1 - bval
            ok = empties >= threshold
        if not ok:
            blocked += 1
            continue
        new = 1 if rand[e, 2] < p else 0
        if new != state[x]:
            flips[x] += 1
            n_occ += 1 if new == 1 else -1
            state[x] = new
    return t, used, pos, n_occ, blocked


def _run_replica(table, V, p, root, init, cfg_times, t_max, rng, chunk, record_states=False):
    state = np.array(init, dtype=np.uint8)
    T = len(cfg_times)
    out_root = np.zeros(T, dtype=np.uint8)
    out_dens = np.zeros(T, dtype=np.float64)
    out_state = np.zeros(T if record_states else 0, dtype=np.int64)
    flips = np.zeros(V, dtype=np.int64)
    n_occ = int(state.sum())
    t, pos = 0.0, 0
    events = blocked = 0
    while t < t_max:
        rand = rng.random((chunk, 3))
        t, used, pos, n_occ, b = _run_events(
            state, table.index, table.threshold, table.free, table.boundary_value, p, rand, t, t_max,
            cfg_times, pos, out_root, out_dens, out_state, n_occ, flips, root,
        )
        events += used if t < t_max else used - 1
        blocked += b
    # a sample placed exactly at t_max is read from the final state
    while pos < T:
        out_root[pos] = state[root]
        out_dens[pos] = n_occ / V
        if record_states:
            out_state[pos] = int((state.astype(np.int64) << np.arange(V)).sum())
        pos += 1
    return out_root, out_dens, flips, state, events, blocked, out_state


def default_workers() -> int:
    return int(os.environ.get("KCSM_JOBS", "1"))


def simulate(
    spec: ModelSpec,
    g: SiteGraph,
    init,
    cfg: SimConfig,
    boundary: Boundary | None = None,
    workers: int | None = None,
    chunk: int = CHUNK_EVENTS,
    record_states: bool = False,
) -> TrajectoryStats:
    """Run ``cfg.replicas`` independent trajectories.

    ``init`` is a configuration or ``"equilibrium"`` (a fresh Bernoulli(p)
    draw per replica). ``boundary=None`` gives free tree leaves; pass
    ``Boundary.FILLED`` to freeze the exterior, which lets bootstrap-stable
    clusters exist on a finite tree. ``record_states=True`` adds a ``"state"``
    series of configurations packed into integers (bit ``x`` is site ``x``).
    """
    if record_states and g.n_vertices > 62:
        raise ValueError("record_states needs at most 62 sites")
    table = constraint_table(spec, g, boundary)
    V = g.n_vertices
    times = cfg.sample_times
    rngs = replica_streams(cfg.seed, cfg.replicas)

    def one(r):
        rng = rngs[r]
        if isinstance(init, str):
            if init != EQUILIBRIUM:
                raise ValueError(f"unknown initial condition {init!r}")
            start = (rng.random(V) < spec.p).astype(np.uint8)
        else:
            start = np.asarray(init, dtype=np.uint8)
            if start.shape != (V,):
                raise ValueError(f"initial configuration must have shape ({V},)")
        return _run_replica(table, V, spec.p, g.root, start, times, cfg.t_max, rng, chunk, record_states)

    workers = default_workers() if workers is None else workers
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            results = list(pool.map(one, range(cfg.replicas)))
    else:
        results = [one(r) for r in range(cfg.replicas)]
    root = np.stack([r[0] for r in results])
    dens = np.stack([r[1] for r in results])
    series = {"root": root, "density": dens}
    if record_states:
        series["state"] = np.stack([r[6] for r in results])
    return TrajectoryStats(
        times=times,
        series=series,
        events=np.array([r[4] for r in results]),
        blocked=np.array([r[5] for r in results]),
        flips=np.stack([r[2] for r in results]),
        final=np.stack([r[3] for r in results]),
        seed=cfg.seed,
    )


# --- autocorrelation -------------------------------------------------------


@dataclass
class AutocorrelationResult:
    lags: np.ndarray
    acf: np.ndarray
    stderr: np.ndarray
    rate: float
    rate_stderr: float
    fit_lags: int
    tau_int: float
    tau_int_stderr: float

    @property
    def normalized(self) -> np.ndarray:
        return self.acf / self.acf[0]


def _autocov(x: np.ndarray, max_lag: int, mean: float | None = None) -> np.ndarray:
    """Biased autocovariance of each row, lags ``0..max_lag``."""
    x = x - (x.mean(axis=-1, keepdims=True) if mean is None else mean)
    T = x.shape[-1]
    nfft = 1 << (2 * T - 1).bit_length()
    f = np.fft.rfft(x, nfft)
    ac = np.fft.irfft(f * np.conj(f), nfft)[..., : max_lag + 1]
    return ac / T


def _fit_rate(lags, acf, window):
    if window < 2:
        return math.nan
    slope = np.polyfit(lags[:window], np.log(acf[:window]), 1)[0]
    return -float(slope)


def autocorrelation(
    stats: TrajectoryStats, observable: str = "root", max_lag: float | None = None, mean: float | None = None
) -> AutocorrelationResult:
    """Autocorrelation of an observable, its decay rate and integrated time.

    Lag values are in time units. The decay rate comes from a least-squares
    line through ``log C(t)`` over the leading lags where ``C`` exceeds three
    standard errors; its error is a delete-one-replica jackknife. The
    integrated time uses a self-consistent window ``M >= 6 tau``.

    By default each replica is centred on its own time average. Passing the
    known equilibrium ``mean`` instead keeps replicas stuck away from it (for
    instance a frozen root) visible as a plateau.
    """
    x = np.asarray(stats.series[observable], dtype=float)
    R, T = x.shape
    dt = float(stats.times[1] - stats.times[0]) if T > 1 else 1.0
    span = stats.times[-1] - stats.times[0]
    if max_lag is None:
        max_lag = span / 20.0
    if span + 1e-9 < 20.0 * max_lag:
        raise InsufficientDataError(f"series span {span} is shorter than 20 x max_lag = {20.0 * max_lag}")
    n_lag = int(round(max_lag / dt))
    if n_lag < 2:
        raise InsufficientDataError("max_lag covers fewer than two sample intervals")

    per = _autocov(x, n_lag, mean)
    acf = per.mean(axis=0)
    se = per.std(axis=0, ddof=1) / math.sqrt(R) if R > 1 else np.full(n_lag + 1, math.nan)
    lags = dt * np.arange(n_lag + 1)

    significant = acf > 3.0 * se if R > 1 else acf > 0
    bad = np.flatnonzero(~significant)
    window = int(bad[0]) if bad.size else n_lag + 1
    rate = _fit_rate(lags, acf, window)
    rate_se = math.nan
    if R > 2 and window >= 2:
        jack = []
        for r in range(R):
            sub = (acf * R - per[r]) / (R - 1)
            if np.all(sub[:window] > 0):
                jack.append(_fit_rate(lags, sub, window))
        jack = np.array(jack)
        if len(jack) > 1:
            rate_se = float(math.sqrt((len(jack) - 1) * np.mean((jack - jack.mean()) ** 2)))

    rho = acf / acf[0] if acf[0] > 0 else np.zeros_like(acf)
    tau, M = 0.5, n_lag
    for m in range(1, n_lag + 1):
        tau = 0.5 + float(rho[1 : m + 1].sum())
        if m >= 6.0 * tau:
            M = m
            break
    N = R * T
    tau_se = tau * math.sqrt(2.0 * (2 * M + 1) / N)
    return AutocorrelationResult(lags, acf, se, rate, rate_se, window, tau * dt, tau_se * dt)


# --- freezing probe --------------------------------------------------------


@dataclass
class FrozenProbeResult:
    plateau: float
    stderr: float
    trials: int
    inner: int
    t_eval: float
    frozen_fraction: float


def frozen_probe(
    spec: ModelSpec,
    g: SiteGraph,
    cfg: SimConfig,
    trials: int,
    inner: int = 32,
    boundary: Boundary | None = Boundary.FILLED,
    workers: int | None = None,
) -> FrozenProbeResult:
    """Estimate ``E[(E[eta_root(t) | eta(0)] - p)^2]`` at ``t = cfg.t_max``.

    Each trial draws an equilibrium initial configuration and runs ``inner``
    independent copies from it. The inner conditional mean is squared with
    the unbiased pair estimator ``mean_{a != b} (X_a - p)(X_b - p)``, so
    finite ``inner`` adds no positive bias. The default filled exterior lets
    bootstrap-stable clusters exist, as they do on the infinite tree.

    ``frozen_fraction`` is the share of trials whose root sat in such a
    cluster at time 0.
    """
    from .bootstrap import stable_occupied

    if inner < 2:
        raise ValueError("inner must be >= 2")
    table = constraint_table(spec, g, boundary)
    V = g.n_vertices
    p = spec.p
    streams = replica_streams(cfg.seed, trials)
    t_eval = np.array([cfg.t_max])

    def one(i):
        rng = streams[i]
        start = (rng.random(V) < p).astype(np.uint8)
        frozen = bool(stable_occupied(spec, g, start, boundary)[g.root]) if boundary is not None else False
        inner_rngs = [np.random.Generator(np.random.Philox(s)) for s in np.random.SeedSequence(rng.integers(2**63)).spawn(inner)]
        vals = np.empty(inner)
        for a in range(inner):
            root_series = _run_replica(table, V, p, g.root, start, t_eval, cfg.t_max, inner_rngs[a], 4096)[0]
            vals[a] = root_series[-1]
        dev = vals - p
        pair = (dev.sum() ** 2 - (dev**2).sum()) / (inner * (inner - 1))
        return pair, frozen

    workers = default_workers() if workers is None else workers
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            out = list(pool.map(one, range(trials)))
    else:
        out = [one(i) for i in range(trials)]
    vals = np.array([o[0] for o in out])
    frozen = np.array([o[1] for o in out])
    se = float(vals.std(ddof=1) / math.sqrt(trials)) if trials > 1 else math.nan
    return FrozenProbeResult(float(vals.mean()), se, trials, inner, cfg.t_max, float(frozen.mean()))
