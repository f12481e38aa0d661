"""Enclosure-to-enclosure lethality ladder.

Level k runs the two-type process with lethalities ``(r^k a, r^(k+1) a)``
and common ``beta``, ``mu``, ``lam``.  Moving to the next enclosure keeps the
level with probability ``1/(1 + rho_k)`` and climbs one rung with
probability ``rho_k/(1 + rho_k)``, where ``rho_k`` is the limiting type ratio
at level k.  The first level whose Malthusian parameter is negative, k*,
is absorbing: the epidemic cannot sustain itself there.

The transient block T is upper bidiagonal, so every solve below is a
back-substitution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from parahost.core import TwoTypeParams, ladder_generator, ktype_spectrum
from parahost.errors import (
    AlreadySubcritical,
    DegenerateMutation,
    InvalidParameter,
    NeverSubcritical,
)

K_CAP = 1000


@dataclass(frozen=True)
class LadderParams:
    alpha0: float
    r: float
    beta: float
    mu: float
    lam: float

    def __post_init__(self):
        for name in ("alpha0", "r", "beta", "mu", "lam"):
            if not math.isfinite(getattr(self, name)):
                raise InvalidParameter(f"{name} must be finite")
        if self.alpha0 <= 0:
            raise InvalidParameter("alpha0 > 0 required")
        if self.r <= 1:
            raise InvalidParameter("r > 1 required")
        if not 0 <= self.beta <= 1 or not 0 <= self.mu <= 1:
            raise InvalidParameter("beta and mu must lie in [0, 1]")
        if self.lam < 0:
            raise InvalidParameter("lambda >= 0 required")

    def level_alphas(self, k: int) -> tuple[float, float]:
        a = self.alpha0 * self.r**k
        return a, a * self.r


DEFAULT_LADDER = LadderParams(alpha0=0.5, r=2.0, beta=0.5, mu=0.2, lam=6.0)


def sigma_plus_common(alpha1, alpha2, beta, mu, lam):
    """Malthusian parameter when both types share beta and mu."""
    c = (1 - mu) * beta * lam
    m = mu * beta * lam
    if not (math.isfinite(alpha1) and math.isfinite(alpha2)):
        return -math.inf
    return 0.5 * (2 * c - alpha1 - alpha2 + math.sqrt((alpha1 - alpha2) ** 2 + 4 * m * m))


def level_sigma(lp: LadderParams, k: int) -> float:
    a1, a2 = lp.level_alphas(k)
    return sigma_plus_common(a1, a2, lp.beta, lp.mu, lp.lam)


def level_params(lp: LadderParams, k: int) -> TwoTypeParams:
    a1, a2 = lp.level_alphas(k)
    return TwoTypeParams(a1, a2, lp.beta, lp.beta, lp.mu, lp.mu, lp.lam)


def rho_sequence(lp: LadderParams, k_max: int) -> np.ndarray:
    """rho_0 .. rho_{k_max}, each the limiting ratio of its level."""
    m = lp.mu * lp.beta * lp.lam
    if m <= 0:
        raise DegenerateMutation("mu * beta * lambda == 0: the level ratios are undefined")
    k = np.arange(k_max + 1)
    a1 = lp.alpha0 * lp.r**k
    d = a1 * (lp.r - 1)
    # R = (a1 - a2 + sqrt(...)) / 2m, rationalised since a2 > a1
    return 2 * m / (d + np.sqrt(d * d + 4 * m * m))


def find_kstar(lp: LadderParams, k_cap: int = K_CAP, method: str = "bisect") -> int:
    """Smallest level k with sigma_plus < 0 (0 means no epidemic at all).

    sigma_plus decreases along the ladder, so there is a single sign change;
    ``"scan"`` walks the levels, ``"bisect"`` brackets then bisects.
    """
    neg = lambda k: level_sigma(lp, k) < 0  # noqa: E731
    if method == "scan":
        for k in range(k_cap + 1):
            if neg(k):
                return k
        raise NeverSubcritical(f"sigma_plus still >= 0 at level {k_cap}")
    if method != "bisect":
        raise ValueError(f"unknown method {method!r}")
    if neg(0):
        return 0
    lo, hi = 0, 1
    while not neg(hi):
        lo = hi
        if hi >= k_cap:
            raise NeverSubcritical(f"sigma_plus still >= 0 at level {k_cap}")
        hi = min(2 * hi, k_cap)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if neg(mid):
            hi = mid
        else:
            lo = mid
    return hi


@dataclass(frozen=True)
class MultistageChain:
    """Transient levels 0..k*-1 with stay/up probabilities; k* absorbs."""

    kstar: int
    rho: np.ndarray
    stay: np.ndarray
    up: np.ndarray

    @property
    def T(self) -> np.ndarray:
        K = self.kstar
        T = np.diag(self.stay)
        T[np.arange(K - 1), np.arange(1, K)] = self.up[:-1]
        return T

    @property
    def exit(self) -> np.ndarray:
        e = np.zeros(self.kstar)
        e[-1] = self.up[-1]
        return e

    @property
    def Q(self) -> np.ndarray:
        K = self.kstar
        Q = np.zeros((K + 1, K + 1))
        Q[:K, :K] = self.T
        Q[:K, K] = self.exit
        Q[K, K] = 1.0
        return Q


def chain_from_rho(rho) -> MultistageChain:
    rho = np.asarray(rho, dtype=float)
    if rho.ndim != 1 or rho.size == 0:
        raise ValueError("rho must be a non-empty 1-d sequence")
    if np.any(rho <= 0) or not np.all(np.isfinite(rho)):
        raise ValueError("rho entries must be positive and finite")
    stay = 1.0 / (1.0 + rho)
    up = rho / (1.0 + rho)
    return MultistageChain(kstar=rho.size, rho=rho, stay=stay, up=up)


def build_chain(lp: LadderParams, k_cap: int = K_CAP) -> MultistageChain:
    k = find_kstar(lp, k_cap)
    if k == 0:
        raise AlreadySubcritical("level 0 is already subcritical: no epidemic (k* = 0)")
    return chain_from_rho(rho_sequence(lp, k - 1))


def absorption_pmf(chain: MultistageChain, n_max: Optional[int] = None, tail: float = 1e-10) -> np.ndarray:
    """f(1), f(2), ... for the absorption step starting from level 0.

    With ``n_max`` given, exactly that many terms; otherwise terms are added
    until the remaining mass drops below ``tail``.
    """
    if n_max is not None and n_max < 1:
        raise ValueError("n_max >= 1 required")
    if n_max is None and not tail > 0:
        raise ValueError("tail > 0 required")
    v = np.zeros(chain.kstar)
    v[0] = 1.0
    stay, up = chain.stay, chain.up
    out = []
    while True:
        out.append(v[-1] * up[-1])
        nv = v * stay
        nv[1:] += v[:-1] * up[:-1]
        v = nv
        if n_max is not None:
            if len(out) == n_max:
                break
        # mass still in transient states, free of the cancellation in 1 - sum(f)
        elif v.sum() < tail:
            break
    return np.array(out)


def absorption_pgf(chain: MultistageChain, z: float) -> float:
    """f*(z) = z e0 (I - zT)^-1 exit, by back-substitution."""
    if abs(z) > 1:
        raise ValueError("|z| <= 1 required")
    K = chain.kstar
    y = np.empty(K)
    y[K - 1] = chain.up[K - 1] / (1 - z * chain.stay[K - 1])
    for k in range(K - 2, -1, -1):
        y[k] = z * chain.up[k] * y[k + 1] / (1 - z * chain.stay[k])
    return float(z * y[0])


def absorption_pgf_derivative(chain: MultistageChain, z: float = 1.0) -> float:
    """d/dz f*(z) from the dense resolvent (I - zT)^-1."""
    K = chain.kstar
    T = chain.T
    B = np.eye(K) - z * T
    y = np.linalg.solve(B, chain.exit)
    w = np.linalg.solve(B, T @ y)
    return float(y[0] + z * w[0])


def expected_absorption(chain: MultistageChain) -> np.ndarray:
    """E(T | X0 = j) for j = 0..k*-1, from (I - T) e = 1."""
    K = chain.kstar
    e = np.empty(K)
    nxt = 0.0
    for k in range(K - 1, -1, -1):
        # the last level's "up" leaves to k*, where E = 0
        e[k] = (1.0 + chain.up[k] * nxt) / (1.0 - chain.stay[k])
        nxt = e[k]
    return e


@dataclass(frozen=True)
class ChainSample:
    steps: np.ndarray
    seed: int

    @property
    def mean(self) -> float:
        return float(self.steps.mean())

    @property
    def se(self) -> float:
        n = len(self.steps)
        return float(self.steps.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0

    def pmf(self, n_max: int) -> np.ndarray:
        counts = np.bincount(self.steps, minlength=n_max + 1)[1:n_max + 1]
        return counts / len(self.steps)


def simulate_chain(chain: MultistageChain, runs: int, seed: int) -> ChainSample:
    """Step all runs from level 0 until each is absorbed at k*."""
    if runs < 1:
        raise ValueError("runs >= 1 required")
    rng = np.random.default_rng(seed)
    level = np.zeros(runs, dtype=np.int64)
    steps = np.zeros(runs, dtype=np.int64)
    active = np.arange(runs)
    while active.size:
        steps[active] += 1
        climb = rng.random(active.size) < chain.up[level[active]]
        level[active[climb]] += 1
        active = active[level[active] < chain.kstar]
    return ChainSample(steps=steps, seed=int(seed))


def three_type_drift(lp: LadderParams, k_max: int) -> np.ndarray:
    """Mean level step pi_up - pi_down for k = 0..k_max.

    Level k is the three-type ladder (r^(k-1) a, r^k a, r^(k+1) a) and pi its
    long-run type shares.
    """
    out = np.empty(k_max + 1)
    for k in range(k_max + 1):
        gen = ladder_generator(lp.alpha0 * lp.r ** (k - 1), lp.r, lp.beta, lp.mu, lp.lam, 3)
        pi = ktype_spectrum(gen).shares
        out[k] = pi[2] - pi[0]
    return out
