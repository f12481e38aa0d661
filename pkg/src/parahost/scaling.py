"""How the encounter rate scales when the world contracts by a factor eps.

Two hosts move as independent standard Brownian motions in ``eps * S``.
Mean meeting times are estimated by Monte Carlo and compared with:

* 1D, reflecting interval: t*(eps) = eps^2 t*(1).
* 2D, sphere: the cosine of the geodesic distance follows the projected
  diffusion dV = -V/2 dt + sqrt((1 - V^2)/2) dW, whose mean hitting time of
  cos(eta) is v(z) = 4 ln((1 - z)/(1 - cos eta)).
* 3D, reflecting cube: t*(eps) = eps^3 t*(1) at fixed encounter radius.

Reflection is realised by the folding map ``fold``, applied coordinatewise
to free Brownian paths.  Every path owns a numpy Generator spawned from the
run seed, so results do not depend on scheduling.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from numba import njit
from scipy import stats

from parahost.errors import MaxTimeExceeded

DEFAULT_DT = 1e-4
DEFAULT_HORIZON = 1e4
TIMEOUT_WARN_FRACTION = 0.01
DT_FLOOR_3D = 1e-6


def fold(x):
    """Reflect the real line onto [0, 1]: 2-periodic, even, identity on [0, 1]."""
    x = np.asarray(x, dtype=float)
    y = np.mod(x, 2.0)
    out = np.where(y <= 1.0, y, 2.0 - y)
    return float(out) if out.ndim == 0 else out


@njit(cache=True, inline="always")
def _fold(x):
    y = x - 2.0 * math.floor(0.5 * x)
    return y if y <= 1.0 else 2.0 - y


@njit(cache=True)
def _lattice_cell(x):
    # distances from x to the enclosing points of 2Z
    lo = 2.0 * math.floor(0.5 * x)
    return x - lo, lo + 2.0 - x


@njit(cache=True, nogil=True)
def _meet_1d(rng, x0, y0, sd, horizon_steps, bridge):
    """Steps until fold(x0 + W0) == fold(y0 + W1), -1 past the horizon.

    The folded positions coincide exactly when D = u0 - u1 or S = u0 + u1
    lies in 2Z, so the test is a lattice crossing of two free walks.
    """
    d = x0 - y0
    s = x0 + y0
    if _lattice_cell(d)[0] == 0.0 or _lattice_cell(s)[0] == 0.0:
        return 0
    var = 2.0 * sd * sd
    for n in range(1, horizon_steps + 1):
        a = sd * rng.standard_normal()
        b = sd * rng.standard_normal()
        d1 = d + a - b
        s1 = s + a + b
        if math.floor(0.5 * d) != math.floor(0.5 * d1) or math.floor(0.5 * s) != math.floor(0.5 * s1):
            return n
        if bridge:
            lo0, hi0 = _lattice_cell(d)
            lo1, hi1 = _lattice_cell(d1)
            p = math.exp(-2.0 * lo0 * lo1 / var) + math.exp(-2.0 * hi0 * hi1 / var)
            lo0, hi0 = _lattice_cell(s)
            lo1, hi1 = _lattice_cell(s1)
            p += math.exp(-2.0 * lo0 * lo1 / var) + math.exp(-2.0 * hi0 * hi1 / var)
            if rng.random() < p:
                return n
        d = d1
        s = s1
    return -1


@njit(cache=True, nogil=True)
def _hit_projected(rng, z0, r, h, horizon_steps, bridge):
    """Euler-Maruyama steps of the projected diffusion until V >= r."""
    if z0 >= r:
        return 0
    v = z0
    sq = math.sqrt(h)
    for n in range(1, horizon_steps + 1):
        s2 = 0.5 * (1.0 - v * v)
        v1 = v - 0.5 * v * h + math.sqrt(max(s2, 0.0)) * sq * rng.standard_normal()
        if v1 < -1.0:
            v1 = -1.0
        elif v1 > 1.0:
            v1 = 1.0
        if v1 >= r:
            return n
        if bridge and s2 > 0.0:
            if rng.random() < math.exp(-2.0 * (r - v) * (r - v1) / (s2 * h)):
                return n
        v = v1
    return -1


@njit(cache=True, nogil=True)
def _meet_3d(rng, a0, b0, eps, delta, dt, horizon):
    """Time until two folded walkers in [0, eps]^3 are within delta.

    The step adapts to the gap, h = max(dt, ((dist - delta)/10)^2), so far
    from contact the walk takes large exact steps.
    """
    a = a0.copy()
    b = b0.copy()
    t = 0.0
    while True:
        d2 = 0.0
        for i in range(3):
            g = eps * (_fold(a[i] / eps) - _fold(b[i] / eps))
            d2 += g * g
        dist = math.sqrt(d2)
        if dist <= delta:
            return t
        if t >= horizon:
            return -1.0
        gap = 0.1 * (dist - delta)
        h = max(dt, gap * gap)
        sq = math.sqrt(h)
        for i in range(3):
            a[i] += sq * rng.standard_normal()
            b[i] += sq * rng.standard_normal()
        t += h


@dataclass(frozen=True)
class MCEstimate:
    """Mean first-passage time over the paths that finished."""

    mean: float
    se: float
    n: int
    n_timeout: int
    times: np.ndarray = field(repr=False)

    @property
    def timeout_fraction(self) -> float:
        return self.n_timeout / (self.n + self.n_timeout)

    @property
    def biased(self) -> bool:
        return self.timeout_fraction > TIMEOUT_WARN_FRACTION


def _estimate(times: np.ndarray) -> MCEstimate:
    done = times[times >= 0]
    n = len(done)
    if n == 0:
        raise MaxTimeExceeded("no path finished before the horizon")
    se = float(done.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return MCEstimate(float(done.mean()), se, n, int(len(times) - n), done)


def _path_generators(seed: int, paths: int):
    return [np.random.default_rng(s) for s in np.random.SeedSequence(seed).spawn(paths)]


def _map_paths(fn, gens, workers: int) -> np.ndarray:
    out = np.empty(len(gens))
    idx = range(len(gens))

    def job(chunk):
        for i in chunk:
            out[i] = fn(gens[i])

    if workers <= 1:
        job(idx)
    else:
        chunks = [idx[k::workers] for k in range(workers)]
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(job, chunks))
    return out


def _check_unit(name, v):
    if not 0.0 <= v <= 1.0:
        raise ValueError(f"{name} must lie in [0, 1], got {v}")


def meeting_time_1d(
    eps: float,
    x0: float,
    y0: float,
    dt: float = DEFAULT_DT,
    seed: int = 0,
    horizon: float = DEFAULT_HORIZON,
    bridge: bool = False,
) -> float:
    """First time the hosts at eps*x0 and eps*y0 in [0, eps] coincide.

    Meeting is detected at the end of the step in which it happens, which
    delays it by O(sqrt(dt)); ``bridge=True`` also counts crossings inside a
    step using the Brownian-bridge crossing probability.
    """
    t = _meeting_times_1d(eps, x0, y0, dt, [np.random.default_rng(seed)], horizon, bridge, 1)[0]
    if t < 0:
        raise MaxTimeExceeded(f"hosts did not meet before t = {horizon}")
    return float(t)


def _meeting_times_1d(eps, x0, y0, dt, gens, horizon, bridge, workers):
    if not eps > 0 or not dt > 0:
        raise ValueError("eps > 0 and dt > 0 required")
    _check_unit("x0", x0)
    _check_unit("y0", y0)
    sd = math.sqrt(dt) / eps  # unit-world displacement per step
    steps = int(math.ceil(horizon / dt))
    n = _map_paths(lambda g: _meet_1d(g, x0, y0, sd, steps, bridge), gens, workers)
    return np.where(n >= 0, n * dt, -1.0)


def mean_meeting_time_1d(
    eps: float,
    x0: float,
    y0: float,
    paths: int,
    seed: int,
    dt: float = DEFAULT_DT,
    horizon: float = DEFAULT_HORIZON,
    bridge: bool = False,
    workers: int = 1,
) -> MCEstimate:
    t = _meeting_times_1d(eps, x0, y0, dt, _path_generators(seed, paths), horizon, bridge, workers)
    return _estimate(t)


def sphere_hitting_analytic(z: float, eta: float) -> float:
    """v(z) = 4 ln((1 - z)/(1 - cos eta)): mean time to come within eta."""
    if not 0 < eta < math.pi / 2:
        raise ValueError("0 < eta < pi/2 required")
    r = math.cos(eta)
    if not -1 <= z <= r:
        raise ValueError(f"z must lie in [-1, cos(eta)] = [-1, {r}]")
    return 4.0 * math.log((1.0 - z) / (1.0 - r))


def simulate_projected_diffusion(
    z0: float,
    eta: float,
    dt: float = DEFAULT_DT,
    seed: int = 0,
    horizon: float = DEFAULT_HORIZON,
    bridge: bool = True,
) -> float:
    """Hitting time of cos(eta) for one Euler-Maruyama path started at z0."""
    t = _projected_times(z0, eta, dt, [np.random.default_rng(seed)], horizon, bridge, 1.0, 1)[0]
    if t < 0:
        raise MaxTimeExceeded(f"V did not reach cos(eta) before t = {horizon}")
    return float(t)


def _projected_times(z0, eta, dt, gens, horizon, bridge, eps, workers):
    if not 0 < eta < math.pi / 2:
        raise ValueError("0 < eta < pi/2 required")
    r = math.cos(eta)
    if not -1 <= z0 <= r:
        raise ValueError(f"z0 must lie in [-1, cos(eta)] = [-1, {r}]")
    if not dt > 0 or not eps > 0:
        raise ValueError("dt > 0 and eps > 0 required")
    h = dt / eps**2  # time on the unit sphere
    steps = int(math.ceil(horizon / dt))
    n = _map_paths(lambda g: _hit_projected(g, z0, r, h, steps, bridge), gens, workers)
    return np.where(n >= 0, n * dt, -1.0)


def mean_projected_hitting_time(
    z0: float,
    eta: float,
    paths: int,
    seed: int,
    dt: float = DEFAULT_DT,
    horizon: float = DEFAULT_HORIZON,
    bridge: bool = True,
    eps: float = 1.0,
    workers: int = 1,
) -> MCEstimate:
    """Mean hitting time on the sphere of radius eps (eta in unit-sphere radians)."""
    t = _projected_times(z0, eta, dt, _path_generators(seed, paths), horizon, bridge, eps, workers)
    return _estimate(t)


def projected_diffusion_increments(v0: float, dt: float, n: int, seed: int) -> np.ndarray:
    """One Euler-Maruyama step V(dt) - V(0) from V(0) = v0, n independent draws."""
    rng = np.random.default_rng(seed)
    v1 = v0 - 0.5 * v0 * dt + math.sqrt(0.5 * (1 - v0 * v0) * dt) * rng.standard_normal(n)
    return np.clip(v1, -1.0, 1.0) - v0


def meeting_time_3d(
    eps: float,
    delta: float,
    paths: int,
    seed: int,
    dt: float = DT_FLOOR_3D,
    horizon: float = DEFAULT_HORIZON,
    start=((0.25, 0.25, 0.25), (0.75, 0.75, 0.75)),
    workers: int = 1,
) -> MCEstimate:
    """Mean encounter time of two reflected walkers in the cube [0, eps]^3.

    ``start`` gives both initial positions in unit-cube coordinates.  ``dt``
    is the smallest step; it must be small against delta^2.
    """
    if not 0 < delta or not eps > 0 or not dt > 0:
        raise ValueError("eps, delta and dt must be positive")
    a0 = eps * np.asarray(start[0], dtype=float)
    b0 = eps * np.asarray(start[1], dtype=float)
    for p in (a0, b0):
        if p.shape != (3,) or np.any(p < 0) or np.any(p > eps):
            raise ValueError("start positions must lie in the unit cube")
    gens = _path_generators(seed, paths)
    t = _map_paths(lambda g: _meet_3d(g, a0, b0, eps, delta, dt, horizon), gens, workers)
    return _estimate(t)


def rate_scaling_2d(eps: float, delta: float) -> float:
    """Predicted lambda(eps)/lambda(1) on the sphere with encounter radius delta."""
    if not 0 < delta < eps <= 1:
        raise ValueError("0 < delta < eps <= 1 required")
    if eps < 10 * delta:
        raise ValueError("eps >= 10*delta required: the asymptotic form breaks down near eps = delta")
    ld = abs(math.log(delta))
    return eps**-2 * ld / (ld - abs(math.log(eps)))


@dataclass(frozen=True)
class ExponentFit:
    slope: float
    intercept: float
    se: float
    ci_low: float
    ci_high: float
    level: float

    def covers(self, value: float) -> bool:
        return self.ci_low <= value <= self.ci_high


def fit_exponent(eps: Sequence[float], times: Sequence[float], level: float = 0.95) -> ExponentFit:
    """OLS of ln t on ln eps; slope CI from the residual variance (t quantile)."""
    x = np.log(np.asarray(eps, dtype=float))
    y = np.log(np.asarray(times, dtype=float))
    if x.size != y.size:
        raise ValueError("eps and times must have equal length")
    if x.size < 3:
        raise ValueError("at least 3 points required")
    if np.unique(x).size != x.size:
        raise ValueError("eps values must be distinct")
    X = np.column_stack([np.ones_like(x), x])
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = y - X @ coef
    dof = x.size - 2
    s2 = float(resid @ resid) / dof
    se = math.sqrt(s2 / float(((x - x.mean()) ** 2).sum()))
    q = stats.t.ppf(0.5 + level / 2, dof)
    b = float(coef[1])
    return ExponentFit(b, float(coef[0]), se, float(b - q * se), float(b + q * se), level)


@dataclass(frozen=True)
class ScalingConfig:
    """One scaling experiment.

    dimension 1 uses ``x0``, ``y0``; dimension 2 uses ``z0`` and encounter
    radius ``delta`` (geodesic, unit-sphere radians at eps = 1); dimension 3
    uses ``delta`` (Euclidean).  ``dt=None`` picks the per-dimension
    default (the 3D walk adapts its step and ``dt`` is only the floor).
    """

    dimension: int
    epsilons: tuple[float, ...]
    delta: float = 0.05
    x0: float = 0.2
    y0: float = 0.8
    z0: float = 0.0
    dt: Optional[float] = None
    paths: int = 1000
    seed: int = 0
    horizon: float = DEFAULT_HORIZON
    bridge: Optional[bool] = None
    workers: int = 1

    def __post_init__(self):
        if self.dimension not in (1, 2, 3):
            raise ValueError("dimension must be 1, 2 or 3")
        if not self.epsilons or any(not 0 < e <= 1 for e in self.epsilons):
            raise ValueError("epsilons must lie in (0, 1]")
        if self.dt is not None and not self.dt > 0:
            raise ValueError("dt > 0 required")
        if self.paths < 100:
            raise ValueError("paths >= 100 required")
        if self.dimension > 1:
            diam = math.pi if self.dimension == 2 else math.sqrt(3)
            for e in self.epsilons:
                if not 0 < self.delta < e * diam / 4:
                    raise ValueError(
                        f"delta must be positive and below eps*diameter/4 = {e * diam / 4:.4g} at eps = {e}"
                    )


@dataclass(frozen=True)
class ScalingRow:
    eps: float
    estimate: MCEstimate
    analytic: Optional[float]


@dataclass(frozen=True)
class ScalingResult:
    config: ScalingConfig
    rows: tuple[ScalingRow, ...]
    fit: Optional[ExponentFit]
    reference_exponent: float


REFERENCE_EXPONENT = {1: 2.0, 2: 2.0, 3: 3.0}


def run_scaling(cfg: ScalingConfig) -> ScalingResult:
    """Mean meeting time per eps, then the log-log exponent across eps.

    In 2D the exponent is only asymptotically 2 (the log factor of
    ``rate_scaling_2d`` corrects it); the analytic column is
    eps^2 v(z0, delta/eps).
    """
    dt = cfg.dt if cfg.dt is not None else (DT_FLOOR_3D if cfg.dimension == 3 else DEFAULT_DT)
    rows = []
    for k, eps in enumerate(cfg.epsilons):
        seed = cfg.seed + k
        analytic = None
        if cfg.dimension == 1:
            est = mean_meeting_time_1d(eps, cfg.x0, cfg.y0, cfg.paths, seed, dt,
                                       cfg.horizon, bool(cfg.bridge), cfg.workers)
        elif cfg.dimension == 2:
            eta = cfg.delta / eps
            bridge = True if cfg.bridge is None else cfg.bridge
            est = mean_projected_hitting_time(cfg.z0, eta, cfg.paths, seed, dt,
                                              cfg.horizon, bridge, eps, cfg.workers)
            analytic = eps**2 * sphere_hitting_analytic(cfg.z0, eta)
        else:
            est = meeting_time_3d(eps, cfg.delta, cfg.paths, seed, dt, cfg.horizon,
                                  workers=cfg.workers)
        rows.append(ScalingRow(eps, est, analytic))
    fit = None
    if len(rows) >= 3:
        fit = fit_exponent([r.eps for r in rows], [r.estimate.mean for r in rows])
    return ScalingResult(cfg, tuple(rows), fit, REFERENCE_EXPONENT[cfg.dimension])
