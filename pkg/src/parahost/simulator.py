"""Exact stochastic simulation of the two-type branching process.

The population jumps at the superposition of all particle clocks: with
state (z1, z2) the next event comes after an Exp(z1 b1 + z2 b2) time, the
acting particle is of type i with probability z_i b_i / (z1 b1 + z2 b2), and
its outcome is drawn from the offspring law of that type.

By default encounters without transmission are thinned out (they do not
change the state), so ``b_i = alpha_i + beta_i lam``.  With
``verbose=True`` they are simulated as explicit ``NO_TRANSMISSION`` events
and ``b_i = alpha_i + lam``; both give the same law for Z(t).

Piecewise-constant encounter-rate schedules are supported through
:class:`LambdaSchedule`.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from numba import njit

from parahost.core import Criticality, TwoTypeParams, build_generator, classify, spectrum
from parahost.errors import AllExtinct, InvalidInit, NotSupercritical
from parahost.rng import as_seed, next_uniform, stream_seed

DEFAULT_CAP = 1_000_000

EXTINCT, HORIZON, CAP = 0, 1, 2
STATUS_NAMES = {EXTINCT: "extinct", HORIZON: "horizon", CAP: "cap"}


class EventKind(enum.IntEnum):
    DEATH_1 = 0
    DEATH_2 = 1
    NO_TRANSMISSION = 2
    BIRTH_1_1 = 3
    BIRTH_1_2 = 4
    BIRTH_2_1 = 5
    BIRTH_2_2 = 6

    @property
    def label(self) -> str:
        return _EVENT_LABELS[self]


_EVENT_LABELS = {
    EventKind.DEATH_1: "death1",
    EventKind.DEATH_2: "death2",
    EventKind.NO_TRANSMISSION: "no_transmission",
    EventKind.BIRTH_1_1: "birth1->1",
    EventKind.BIRTH_1_2: "birth1->2",
    EventKind.BIRTH_2_1: "birth2->1",
    EventKind.BIRTH_2_2: "birth2->2",
}


@dataclass(frozen=True)
class PopulationState:
    z1: int
    z2: int

    def __post_init__(self):
        if int(self.z1) != self.z1 or int(self.z2) != self.z2:
            raise InvalidInit("counts must be integers")
        if self.z1 < 0 or self.z2 < 0:
            raise InvalidInit("counts must be non-negative")

    @property
    def total(self) -> int:
        return self.z1 + self.z2

    def as_tuple(self) -> tuple[int, int]:
        return (int(self.z1), int(self.z2))


@dataclass(frozen=True)
class LambdaSchedule:
    """Piecewise-constant encounter rate: ``values[k]`` applies from ``starts[k]``."""

    starts: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.starts) != len(self.values) or not self.starts:
            raise ValueError("starts and values must be non-empty and of equal length")
        if self.starts[0] != 0.0:
            raise ValueError("the first piece must start at t = 0")
        if any(b <= a for a, b in zip(self.starts, self.starts[1:])):
            raise ValueError("piece start times must be strictly increasing")
        if any(v < 0 for v in self.values):
            raise ValueError("encounter rates must be >= 0")


def _piece_tables(params: TwoTypeParams, schedule: Optional[LambdaSchedule], verbose: bool):
    if schedule is None:
        schedule = LambdaSchedule((0.0,), (params.lam,))
    P = len(schedule.values)
    rates = np.empty((P, 2))
    cum = np.empty((P, 2, 4))
    alphas = (params.alpha1, params.alpha2)
    betas = (params.beta1, params.beta2)
    mus = (params.mu1, params.mu2)
    for k, lam in enumerate(schedule.values):
        for i in range(2):
            a, b, m = alphas[i], betas[i], mus[i]
            rate = a + lam if verbose else a + b * lam
            probs = np.array([
                a,
                (1 - b) * lam if verbose else 0.0,
                (1 - m) * b * lam,
                m * b * lam,
            ]) / rate
            c = np.cumsum(probs)
            c[-1] = 1.0
            rates[k, i] = rate
            cum[k, i] = c
    return np.asarray(schedule.starts, dtype=float), rates, cum


@njit(cache=True, nogil=True)
def _run(state, z1, z2, starts, rates, cum, horizon, cap, grid, grid_out, record):
    """Simulate one path.

    Fills ``grid_out[g]`` with the state at ``grid[g]`` (-1 when the path hit
    the cap before that time).  Returns (status, t_stop, z1, z2, n_events,
    event_times, event_states, event_kinds); event arrays are only filled
    when ``record`` is set.
    """
    n_ev = 0
    size = 64 if record else 1
    ev_t = np.empty(size)
    ev_z = np.empty((size, 2), np.int64)
    ev_k = np.empty(size, np.int8)
    P = starts.shape[0]
    G = grid.shape[0]
    t = 0.0
    piece = 0
    g = 0
    status = HORIZON
    while True:
        if z1 + z2 == 0:
            status = EXTINCT
            break
        total = z1 * rates[piece, 0] + z2 * rates[piece, 1]
        e = -math.log(1.0 - next_uniform(state))
        while True:
            end = starts[piece + 1] if piece + 1 < P else math.inf
            dt = e / total
            if t + dt < end:
                t += dt
                break
            e -= total * (end - t)
            t = end
            piece += 1
            total = z1 * rates[piece, 0] + z2 * rates[piece, 1]
        if t >= horizon:
            status = HORIZON
            break
        while g < G and grid[g] < t:
            grid_out[g, 0] = z1
            grid_out[g, 1] = z2
            g += 1
        typ = 0 if next_uniform(state) * total < z1 * rates[piece, 0] else 1
        u = next_uniform(state)
        k = 0
        while k < 3 and u >= cum[piece, typ, k]:
            k += 1
        if k == 0:
            if typ == 0:
                z1 -= 1
            else:
                z2 -= 1
            kind = typ  # DEATH_1 / DEATH_2
        elif k == 1:
            kind = 2
        elif k == 2:
            if typ == 0:
                z1 += 1
                kind = 3
            else:
                z2 += 1
                kind = 6
        else:
            if typ == 0:
                z2 += 1
                kind = 4
            else:
                z1 += 1
                kind = 5
        if record:
            if n_ev == ev_t.shape[0]:
                nt = np.empty(2 * n_ev)
                nz = np.empty((2 * n_ev, 2), np.int64)
                nk = np.empty(2 * n_ev, np.int8)
                nt[:n_ev] = ev_t
                nz[:n_ev] = ev_z
                nk[:n_ev] = ev_k
                ev_t, ev_z, ev_k = nt, nz, nk
            ev_t[n_ev] = t
            ev_z[n_ev, 0] = z1
            ev_z[n_ev, 1] = z2
            ev_k[n_ev] = kind
        n_ev += 1
        if z1 + z2 >= cap:
            status = CAP
            break
    while g < G:
        if status == CAP:
            grid_out[g, 0] = -1
            grid_out[g, 1] = -1
        else:
            grid_out[g, 0] = z1
            grid_out[g, 1] = z2
        g += 1
    return status, t, z1, z2, n_ev, ev_t, ev_z, ev_k


@njit(cache=True, nogil=True)
def _ensemble_chunk(base, r0, r1, z1, z2, starts, rates, cum, horizon, cap, grid,
                    out, status_out, final_out):
    state = np.empty(1, np.uint64)
    for r in range(r0, r1):
        state[0] = stream_seed(base, r)
        res = _run(state, z1, z2, starts, rates, cum, horizon, cap, grid, out[r], False)
        status_out[r] = res[0]
        final_out[r, 0] = res[2]
        final_out[r, 1] = res[3]


def _check_init(init, cap) -> PopulationState:
    if not isinstance(init, PopulationState):
        init = PopulationState(*init)
    if init.total == 0:
        raise InvalidInit("initial state (0, 0) is already extinct")
    if cap <= init.total:
        raise InvalidInit(f"cap ({cap}) must exceed the initial population ({init.total})")
    return init


@dataclass(frozen=True)
class Trajectory:
    """One simulated path: events after time 0 and why the run stopped."""

    params: TwoTypeParams
    init: PopulationState
    times: np.ndarray
    states: np.ndarray
    kinds: np.ndarray
    status: str
    stop_time: float
    horizon: float
    cap: int
    seed: int

    @property
    def extinct(self) -> bool:
        return self.status == "extinct"

    @property
    def hit_cap(self) -> bool:
        return self.status == "cap"

    @property
    def hit_horizon(self) -> bool:
        return self.status == "horizon"

    @property
    def final_state(self) -> PopulationState:
        if len(self.times) == 0:
            return self.init
        z = self.states[-1]
        return PopulationState(int(z[0]), int(z[1]))

    def events(self):
        for t, z, k in zip(self.times, self.states, self.kinds):
            yield float(t), (int(z[0]), int(z[1])), EventKind(int(k))


def simulate(
    params: TwoTypeParams,
    init,
    horizon: float,
    cap: int = DEFAULT_CAP,
    seed: int = 0,
    schedule: Optional[LambdaSchedule] = None,
    verbose: bool = False,
) -> Trajectory:
    """Simulate one trajectory up to extinction, ``horizon`` or ``cap``.

    The stream for ``seed`` is the same as replicate 0 of an ensemble run
    with ``base_seed=seed``.
    """
    init = _check_init(init, cap)
    if not horizon > 0:
        raise ValueError("horizon > 0 required")
    starts, rates, cum = _piece_tables(params, schedule, verbose)
    state = np.array([stream_seed(as_seed(seed), 0)], dtype=np.uint64)
    grid = np.empty(0)
    grid_out = np.empty((0, 2), np.int64)
    status, t, _, _, n, ev_t, ev_z, ev_k = _run(
        state, init.z1, init.z2, starts, rates, cum, float(horizon), int(cap), grid, grid_out, True
    )
    return Trajectory(
        params=params,
        init=init,
        times=ev_t[:n].copy(),
        states=ev_z[:n].copy(),
        kinds=ev_k[:n].copy(),
        status=STATUS_NAMES[status],
        stop_time=min(t, float(horizon)),
        horizon=float(horizon),
        cap=int(cap),
        seed=int(seed),
    )


@dataclass(frozen=True)
class EnsembleRun:
    """Raw replicate output: states on the grid (-1 after a cap hit)."""

    grid: np.ndarray
    states: np.ndarray
    status: np.ndarray
    final: np.ndarray
    base_seed: int


def ensemble_states(
    params: TwoTypeParams,
    init,
    grid: Sequence[float],
    replicates: int,
    base_seed: int,
    cap: int = DEFAULT_CAP,
    schedule: Optional[LambdaSchedule] = None,
    verbose: bool = False,
    workers: int = 1,
) -> EnsembleRun:
    """Run ``replicates`` independent paths and record Z on ``grid``.

    Replicate r uses the stream ``stream_seed(base_seed, r)``; output does
    not depend on ``workers``.
    """
    init = _check_init(init, cap)
    if replicates < 1:
        raise ValueError("replicates >= 1 required")
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size == 0:
        raise ValueError("grid must be a non-empty 1-d sequence")
    if np.any(grid < 0) or np.any(np.diff(grid) <= 0):
        raise ValueError("grid must be non-negative and strictly increasing")
    starts, rates, cum = _piece_tables(params, schedule, verbose)
    horizon = float(grid[-1])
    out = np.empty((replicates, grid.size, 2), np.int64)
    status = np.empty(replicates, np.int8)
    final = np.empty((replicates, 2), np.int64)
    base = as_seed(base_seed)
    if horizon == 0.0:
        out[:] = init.as_tuple()
        status[:] = HORIZON
        final[:] = init.as_tuple()
        return EnsembleRun(grid, out, status, final, int(base_seed))

    def job(bounds):
        r0, r1 = bounds
        _ensemble_chunk(base, r0, r1, init.z1, init.z2, starts, rates, cum,
                        horizon, int(cap), grid, out, status, final)

    n_chunks = max(1, min(replicates, 4 * workers))
    edges = np.linspace(0, replicates, n_chunks + 1).astype(int)
    chunks = [(int(a), int(b)) for a, b in zip(edges[:-1], edges[1:]) if b > a]
    if workers <= 1:
        for c in chunks:
            job(c)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(job, chunks))
    return EnsembleRun(grid, out, status, final, int(base_seed))


@dataclass(frozen=True)
class EnsembleStats:
    """Per-grid-point summaries over replicates.

    ``n`` counts replicates whose state is known at that time (paths that hit
    the population cap earlier are excluded).  ``ratio`` is the mean of
    Z2/Z1 over replicates with Z1 > 0 (NaN if there are none).
    """

    time: np.ndarray
    mean: np.ndarray
    se: np.ndarray
    ratio: np.ndarray
    n_ratio: np.ndarray
    extinct_frac: np.ndarray
    n: np.ndarray
    replicates: int
    base_seed: int


def summarize(run: EnsembleRun) -> EnsembleStats:
    G = run.grid.size
    mean = np.full((G, 2), np.nan)
    se = np.full((G, 2), np.nan)
    ratio = np.full(G, np.nan)
    n_ratio = np.zeros(G, dtype=int)
    ext = np.full(G, np.nan)
    n = np.zeros(G, dtype=int)
    for g in range(G):
        z = run.states[:, g, :]
        z = z[z[:, 0] >= 0].astype(float)
        n[g] = len(z)
        if not len(z):
            continue
        mean[g] = z.mean(axis=0)
        se[g] = z.std(axis=0, ddof=1) / math.sqrt(len(z)) if len(z) > 1 else 0.0
        ext[g] = np.mean((z[:, 0] == 0) & (z[:, 1] == 0))
        alive = z[:, 0] > 0
        n_ratio[g] = int(alive.sum())
        if n_ratio[g]:
            ratio[g] = np.mean(z[alive, 1] / z[alive, 0])
    return EnsembleStats(
        time=run.grid.copy(), mean=mean, se=se, ratio=ratio, n_ratio=n_ratio,
        extinct_frac=ext, n=n, replicates=run.states.shape[0], base_seed=run.base_seed,
    )


def ensemble(
    params: TwoTypeParams,
    init,
    grid: Sequence[float],
    replicates: int,
    base_seed: int,
    cap: int = DEFAULT_CAP,
    schedule: Optional[LambdaSchedule] = None,
    workers: int = 1,
) -> EnsembleStats:
    run = ensemble_states(params, init, grid, replicates, base_seed, cap=cap,
                          schedule=schedule, workers=workers)
    return summarize(run)


@dataclass(frozen=True)
class RatioEstimate:
    estimate: float
    ci_low: float
    ci_high: float
    level: float
    n_survivors: int
    n_capped: int
    replicates: int
    horizon: float
    estimator: str = "mean"

    def covers(self, value: float) -> bool:
        return self.ci_low <= value <= self.ci_high


def _pooled_ratio(z: np.ndarray) -> np.ndarray:
    return z[..., 1].sum(axis=-1) / z[..., 0].sum(axis=-1)


def _mean_ratio(z: np.ndarray) -> np.ndarray:
    return (z[..., 1] / z[..., 0]).mean(axis=-1)


RATIO_ESTIMATORS = {"pooled": _pooled_ratio, "mean": _mean_ratio}


def bootstrap_ci(z: np.ndarray, statistic, level: float, n_boot: int, seed) -> tuple[float, float]:
    """Percentile bootstrap CI of ``statistic`` over the rows of ``z``.

    ``statistic`` maps an array of shape (..., n, k) to shape (...).
    """
    rng = np.random.default_rng(seed)
    n = len(z)
    stats = np.empty(n_boot)
    batch = max(1, 2_000_000 // max(n, 1))
    for i in range(0, n_boot, batch):
        m = min(batch, n_boot - i)
        idx = rng.integers(0, n, size=(m, n))
        stats[i:i + m] = statistic(z[idx])
    alpha = (1 - level) / 2
    lo, hi = np.quantile(stats, [alpha, 1 - alpha])
    return float(lo), float(hi)


def empirical_limiting_ratio(
    params: TwoTypeParams,
    init,
    horizon: float,
    replicates: int,
    base_seed: int,
    cap: int = DEFAULT_CAP,
    level: float = 0.95,
    n_boot: int = 2000,
    workers: int = 1,
    estimator: str = "mean",
) -> RatioEstimate:
    """Type ratio Z2/Z1 at ``horizon`` over replicates alive with Z1 > 0.

    ``estimator="mean"`` averages the per-replicate ratios; survivors that are
    still small at the horizon bias it, and that bias fades more slowly than
    exp(-Delta*horizon).  ``"pooled"`` gives sum(Z2)/sum(Z1), whose only bias
    is the transient of the mean ratio, (init M(h))_2/(init M(h))_1 - R.  Replicates that reach the population cap first count
    with their state at the cap.  The CI is a percentile bootstrap over
    replicates.
    """
    if estimator not in RATIO_ESTIMATORS:
        raise ValueError(f"estimator must be one of {', '.join(RATIO_ESTIMATORS)}")
    if classify(params) is not Criticality.SUPERCRITICAL:
        raise NotSupercritical("empirical limiting ratio needs a supercritical process")
    D = spectrum(build_generator(params)).Delta
    if not math.exp(-D * horizon) < 0.05:
        raise ValueError(
            f"horizon too short: exp(-Delta*horizon) = {math.exp(-D * horizon):.3g} >= 0.05"
        )
    run = ensemble_states(params, init, [horizon], replicates, base_seed, cap=cap, workers=workers)
    z = np.where((run.status == CAP)[:, None], run.final, run.states[:, 0, :])
    keep = z[:, 0] > 0
    if not keep.any():
        raise AllExtinct("no replicate survived to the horizon with Z1 > 0")
    z = z[keep].astype(float)
    stat = RATIO_ESTIMATORS[estimator]
    lo, hi = bootstrap_ci(z, stat, level, n_boot, np.random.SeedSequence([int(base_seed) & 0xFFFFFFFF, 1]))
    estimate = float(stat(z))
    return RatioEstimate(
        estimate=estimate,
        ci_low=lo,
        ci_high=hi,
        level=level,
        n_survivors=int(keep.sum()),
        n_capped=int((run.status == CAP).sum()),
        replicates=replicates,
        horizon=float(horizon),
        estimator=estimator,
    )
