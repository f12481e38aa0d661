"""Analytic engine for the two-type (and K-type) Markov branching model.

Parameters map to a 2x2 generator ``A = [[g1, d1], [d2, g2]]`` with
``g_k = (1 - mu_k) beta_k lam - alpha_k`` and ``d_k = mu_k beta_k lam``.
The mean matrix is ``M(t) = exp(tA)``; its dominant eigenvalue is the
Malthusian parameter and the limiting type ratio ``R`` is read off the
eigenvectors.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field
from typing import NamedTuple, Optional, Sequence

import numpy as np

from parahost.errors import DegenerateMutation, InvalidParameter, ReducibleGenerator

# (j1, j2) offspring vectors, in table order
OUTCOMES: tuple[tuple[int, int], ...] = ((0, 0), (1, 0), (2, 0), (1, 1), (0, 2), (0, 1))

CRITICAL_BAND = 1e-12
MAX_DENSE_TYPES = 16


@dataclass(frozen=True)
class TwoTypeParams:
    """The seven model parameters.

    alpha1, alpha2 : death rates (> 0)
    beta1, beta2   : transmission probabilities in [0, 1]
    mu1, mu2       : mutation probabilities in [0, 1]
    lam            : encounter rate (>= 0)
    """

    alpha1: float
    alpha2: float
    beta1: float
    beta2: float
    mu1: float
    mu2: float
    lam: float

    def __post_init__(self):
        for name in ("alpha1", "alpha2", "beta1", "beta2", "mu1", "mu2", "lam"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise InvalidParameter(f"{name} must be finite, got {v!r}")
        if self.alpha1 <= 0 or self.alpha2 <= 0:
            raise InvalidParameter("alpha1 > 0 and alpha2 > 0 required")
        if self.lam < 0:
            raise InvalidParameter("lambda >= 0 required")
        for name in ("beta1", "beta2", "mu1", "mu2"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise InvalidParameter(f"{name} must lie in [0, 1], got {v}")
        if self.alpha2 <= self.alpha1:
            warnings.warn(
                "alpha2 <= alpha1: type 2 is conventionally the more lethal type",
                stacklevel=3,
            )

    def replace(self, **changes) -> "TwoTypeParams":
        d = self.as_dict()
        d.update(changes)
        return TwoTypeParams(**d)

    def as_dict(self) -> dict:
        return {
            "alpha1": self.alpha1,
            "alpha2": self.alpha2,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "mu1": self.mu1,
            "mu2": self.mu2,
            "lam": self.lam,
        }


REFERENCE_PARAMS = dict(alpha1=0.5, alpha2=1.5, beta1=0.3, beta2=0.6, mu1=0.2, mu2=0.2)


def reference_params(lam: float = 2.0) -> TwoTypeParams:
    """Reference parameter set used throughout (encounter rate varies)."""
    return TwoTypeParams(lam=lam, **REFERENCE_PARAMS)


@dataclass(frozen=True)
class OffspringTable:
    """Offspring law at the end of a particle's life.

    ``q1[k]`` / ``q2[k]`` is the probability that a type-1 / type-2 particle
    is replaced by ``OUTCOMES[k]``; particles of type i live Exp(a_i) with
    ``a_i = alpha_i + lam``.
    """

    q1: np.ndarray
    q2: np.ndarray
    a1: float
    a2: float

    def prob(self, parent: int, outcome: tuple[int, int]) -> float:
        row = self.q1 if parent == 1 else self.q2
        return float(row[OUTCOMES.index(outcome)])

    def mean_offspring(self) -> np.ndarray:
        """2x2 matrix of expected offspring counts per parent type."""
        vec = np.array(OUTCOMES, dtype=float)
        return np.vstack([self.q1 @ vec, self.q2 @ vec])


def build_offspring_table(params: TwoTypeParams) -> OffspringTable:
    p = params
    a1 = p.alpha1 + p.lam
    a2 = p.alpha2 + p.lam
    q1 = np.array([
        p.alpha1 / a1,
        (1 - p.beta1) * p.lam / a1,
        (1 - p.mu1) * p.beta1 * p.lam / a1,
        p.mu1 * p.beta1 * p.lam / a1,
        0.0,
        0.0,
    ])
    q2 = np.array([
        p.alpha2 / a2,
        0.0,
        0.0,
        p.mu2 * p.beta2 * p.lam / a2,
        (1 - p.mu2) * p.beta2 * p.lam / a2,
        (1 - p.beta2) * p.lam / a2,
    ])
    return OffspringTable(q1=q1, q2=q2, a1=a1, a2=a2)


@dataclass(frozen=True)
class Generator:
    gamma1: float
    gamma2: float
    delta1: float
    delta2: float

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.gamma1, self.delta1], [self.delta2, self.gamma2]])


def build_generator(params: TwoTypeParams) -> Generator:
    p = params
    return Generator(
        gamma1=(1 - p.mu1) * p.beta1 * p.lam - p.alpha1,
        gamma2=(1 - p.mu2) * p.beta2 * p.lam - p.alpha2,
        delta1=p.mu1 * p.beta1 * p.lam,
        delta2=p.mu2 * p.beta2 * p.lam,
    )


@dataclass(frozen=True)
class Spectrum:
    """Eigen-data of a 2x2 generator.

    ``u_plus``/``u_minus`` are the slopes u of right eigenvectors (u, 1);
    ``left`` is the positive left eigenvector for ``sigma_plus``, summing
    to 1. Both need delta2 > 0; otherwise ``eigenvectors_available`` is
    False and accessing them raises :class:`DegenerateMutation`.
    """

    sigma_plus: float
    sigma_minus: float
    Delta: float
    _u_plus: Optional[float] = None
    _u_minus: Optional[float] = None
    _left: Optional[tuple[float, float]] = None

    @property
    def eigenvectors_available(self) -> bool:
        return self._u_plus is not None

    def _need(self, value):
        if value is None:
            raise DegenerateMutation("delta2 == 0: eigenvectors are not available")
        return value

    @property
    def u_plus(self) -> float:
        return self._need(self._u_plus)

    @property
    def u_minus(self) -> float:
        return self._need(self._u_minus)

    @property
    def left(self) -> np.ndarray:
        return np.array(self._need(self._left))


def _delta(g: Generator) -> float:
    # hypot avoids cancellation when delta1*delta2 is tiny
    return math.hypot(g.gamma1 - g.gamma2, 2.0 * math.sqrt(g.delta1 * g.delta2))


def spectrum(gen: Generator) -> Spectrum:
    D = _delta(gen)
    s = gen.gamma1 + gen.gamma2
    sp = 0.5 * (s + D)
    sm = 0.5 * (s - D)
    if gen.delta2 <= 0.0:
        return Spectrum(sigma_plus=sp, sigma_minus=sm, Delta=D)
    diff = gen.gamma1 - gen.gamma2
    # Roots of d2 u^2 - diff u - d1 = 0; take the cancellation-free root first
    # and recover the other from u+ u- = -d1/d2.
    if diff >= 0:
        up = (diff + D) / (2 * gen.delta2)
        um = -gen.delta1 / (gen.delta2 * up) if up > 0 else 0.0
    else:
        um = (diff - D) / (2 * gen.delta2)
        up = -gen.delta1 / (gen.delta2 * um)
    R = -um
    left = (1.0 / (1.0 + R), R / (1.0 + R))
    return Spectrum(sigma_plus=sp, sigma_minus=sm, Delta=D, _u_plus=up, _u_minus=um, _left=left)


def mean_matrix(params: TwoTypeParams, t) -> np.ndarray:
    """M(t) with M_ij(t) = E(Z_j(t) | Z(0) = e_i).

    ``t`` may be a scalar or array; the result has shape ``t.shape + (2, 2)``.
    Uses exp(tA) = e^{s- t} (I + (A - s- I) f(t)) with f = expm1(Delta t)/Delta,
    which is the eigen-expansion rewritten without dividing by delta2.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise ValueError("t >= 0 required")
    gen = build_generator(params)
    sp = spectrum(gen)
    D = sp.Delta
    x = gen.gamma1 - gen.gamma2
    dd = gen.delta1 * gen.delta2
    # g1 - s- = (x + D)/2 and g2 - s- = (D - x)/2, rationalised where they cancel
    h1 = 0.5 * (x + D) if x >= 0 else 2 * dd / (D - x)
    h2 = 0.5 * (D - x) if x <= 0 else 2 * dd / (D + x)
    f = np.expm1(D * t) / D if D > 0 else t
    em = np.exp(sp.sigma_minus * t)
    out = np.empty(t.shape + (2, 2))
    out[..., 0, 0] = em * (1 + h1 * f)
    out[..., 0, 1] = em * gen.delta1 * f
    out[..., 1, 0] = em * gen.delta2 * f
    out[..., 1, 1] = em * (1 + h2 * f)
    return out


def expm_series(A: np.ndarray, t: float, tol: float = 1e-16) -> np.ndarray:
    """exp(tA) by truncated Taylor series with scaling and squaring.

    Independent of any eigendecomposition; used as an oracle.
    """
    B = np.asarray(A, dtype=float) * t
    norm = np.abs(B).sum(axis=1).max()
    squarings = max(0, int(math.ceil(math.log2(norm / 0.5)))) if norm > 0.5 else 0
    B = B / (2.0 ** squarings)
    n = B.shape[0]
    total = np.eye(n)
    term = np.eye(n)
    k = 1
    while True:
        term = term @ B / k
        total = total + term
        if np.abs(term).max() < tol * max(1.0, np.abs(total).max()):
            break
        k += 1
    for _ in range(squarings):
        total = total @ total
    return total


def ratio_trajectories(params: TwoTypeParams, t):
    """(R1(t), R2(t)) = (M12/M11, M22/M21); R2(0) is +inf."""
    gen = build_generator(params)
    if gen.delta2 <= 0.0:
        raise DegenerateMutation("ratio trajectories require delta2 > 0")
    M = mean_matrix(params, t)
    m21 = M[..., 1, 0]
    r1 = M[..., 0, 1] / M[..., 0, 0]
    with np.errstate(divide="ignore", invalid="ignore"):
        r2 = np.where(m21 > 0, M[..., 1, 1] / m21, np.inf)
    if np.ndim(r1) == 0:
        return float(r1), float(r2)
    return r1, r2


def limiting_ratio(params: TwoTypeParams) -> float:
    """R = |u-| = (g2 - g1 + Delta) / (2 d2)."""
    gen = build_generator(params)
    if gen.delta2 <= 0.0:
        raise DegenerateMutation(
            "delta2 == 0 (mu2*beta2*lambda = 0): no influx from type 2 into type 1, "
            "the types decouple and R is undefined"
        )
    return _ratio_from_generator(gen)


def _ratio_from_generator(gen: Generator) -> float:
    D = _delta(gen)
    x = gen.gamma2 - gen.gamma1
    if x >= 0:
        return (x + D) / (2 * gen.delta2)
    # rationalised form, no cancellation when x << 0
    return 2 * gen.delta1 / (D - x)


class Sensitivities(NamedTuple):
    d_lambda: float
    d_alpha1: float
    d_alpha2: float


def sensitivities(params: TwoTypeParams) -> Sensitivities:
    """Partial derivatives of R with respect to lambda, alpha1 and alpha2.

    dR/dalpha1 = (1 - (g1 - g2)/Delta) / (2 d2) and dR/dalpha2 = -dR/dalpha1.
    R is invariant under joint scaling of (alpha1, alpha2, lam), so
    lam * dR/dlam = (alpha2 - alpha1) * dR/dalpha1.
    """
    gen = build_generator(params)
    if gen.delta2 <= 0.0:
        raise DegenerateMutation("sensitivities require delta2 > 0")
    D = _delta(gen)
    if D == 0.0:
        raise ZeroDivisionError("Delta == 0: sensitivities are singular")
    d_a1 = (1.0 - (gen.gamma1 - gen.gamma2) / D) / (2 * gen.delta2)
    d_lam = (params.alpha2 - params.alpha1) * (gen.gamma2 - gen.gamma1 + D) / (
        2 * gen.delta2 * D * params.lam
    )
    return Sensitivities(d_lambda=d_lam, d_alpha1=d_a1, d_alpha2=-d_a1)


class Criticality(str, enum.Enum):
    SUPERCRITICAL = "supercritical"
    CRITICAL = "critical"
    SUBCRITICAL = "subcritical"


def classify_sigma(sigma_plus: float, band: float = CRITICAL_BAND) -> Criticality:
    if abs(sigma_plus) < band:
        return Criticality.CRITICAL
    return Criticality.SUPERCRITICAL if sigma_plus > 0 else Criticality.SUBCRITICAL


def classify(params: TwoTypeParams, band: float = CRITICAL_BAND) -> Criticality:
    return classify_sigma(spectrum(build_generator(params)).sigma_plus, band)


# ---------------------------------------------------------------------------
# K-type generalisation
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class KTypeGenerator:
    """Mean-rate matrix of a K-type Markov branching process.

    ``A[i, j] = a_i * (m_ij - [i == j])`` where ``a_i`` is the lifetime rate
    of type i and ``m_ij`` the expected number of type-j offspring.
    """

    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        A = np.asarray(self.matrix, dtype=float)
        if A.ndim != 2 or A.shape[0] != A.shape[1] or A.shape[0] < 2:
            raise InvalidParameter("generator must be K x K with K >= 2")
        off = A - np.diag(np.diag(A))
        if np.any(off < 0):
            raise InvalidParameter("off-diagonal generator entries must be >= 0")
        object.__setattr__(self, "matrix", A)

    @property
    def size(self) -> int:
        return self.matrix.shape[0]


def ktype_generator(
    lifetime_rates: Sequence[float],
    offspring: Sequence[Sequence[tuple[Sequence[int], float]]],
) -> KTypeGenerator:
    """Build a K-type generator from per-type lifetime rates and offspring laws.

    ``offspring[i]`` lists ``(vector, probability)`` pairs for a type-i parent;
    probabilities must sum to 1.
    """
    K = len(lifetime_rates)
    if len(offspring) != K:
        raise InvalidParameter("one offspring law per type required")
    A = np.zeros((K, K))
    for i, (rate, law) in enumerate(zip(lifetime_rates, offspring)):
        if rate < 0:
            raise InvalidParameter("lifetime rates must be >= 0")
        total = 0.0
        mean = np.zeros(K)
        for vec, prob in law:
            vec = np.asarray(vec, dtype=float)
            if vec.shape != (K,) or np.any(vec < 0):
                raise InvalidParameter(f"offspring vectors must be non-negative length-{K}")
            if prob < 0:
                raise InvalidParameter("offspring probabilities must be >= 0")
            total += prob
            mean += prob * vec
        if abs(total - 1.0) > 1e-12:
            raise InvalidParameter(f"offspring law of type {i + 1} sums to {total}, not 1")
        A[i] = rate * (mean - np.eye(K)[i])
    return KTypeGenerator(A)


def ktype_from_two_type(params: TwoTypeParams) -> KTypeGenerator:
    table = build_offspring_table(params)
    laws = [
        [(v, float(q)) for v, q in zip(OUTCOMES, table.q1)],
        [(v, float(q)) for v, q in zip(OUTCOMES, table.q2)],
    ]
    return ktype_generator([table.a1, table.a2], laws)


def ladder_generator(
    base_alpha: float, r: float, beta: float, mu: float, lam: float, n_types: int = 3
) -> KTypeGenerator:
    """Lethality ladder (x, r x, r^2 x, ...) with common beta, mu and lam.

    A transmitted pathogen mutates with probability mu; the mutation mass is
    split evenly between the neighbouring lethality levels, and a boundary
    type sends all of it to its single neighbour.
    """
    if base_alpha <= 0 or r <= 0:
        raise InvalidParameter("base_alpha > 0 and r > 0 required")
    if n_types < 2:
        raise InvalidParameter("n_types >= 2 required")
    rates = []
    laws = []
    for i in range(n_types):
        alpha = base_alpha * r**i
        a = alpha + lam
        e_i = np.eye(n_types, dtype=int)[i]
        law = [
            (np.zeros(n_types, dtype=int), alpha / a),
            (e_i, (1 - beta) * lam / a),
            (2 * e_i, (1 - mu) * beta * lam / a),
        ]
        nbrs = [j for j in (i - 1, i + 1) if 0 <= j < n_types]
        for j in nbrs:
            law.append((e_i + np.eye(n_types, dtype=int)[j], mu * beta * lam / a / len(nbrs)))
        rates.append(a)
        laws.append(law)
    return ktype_generator(rates, laws)


def is_irreducible(gen: KTypeGenerator) -> bool:
    K = gen.size
    adj = (gen.matrix - np.diag(np.diag(gen.matrix))) > 0
    reach = np.eye(K, dtype=bool) | adj
    for _ in range(K):
        nxt = (reach.astype(int) @ reach.astype(int)) > 0
        if np.array_equal(nxt, reach):
            break
        reach = nxt
    return bool(reach.all())


def malthusian_parameter(gen: KTypeGenerator) -> float:
    """Eigenvalue of maximal real part (real for quasi-positive matrices)."""
    return float(np.linalg.eigvals(gen.matrix).real.max())


class KTypeSpectrum(NamedTuple):
    sigma_plus: float
    shares: np.ndarray


def ktype_spectrum(gen: KTypeGenerator) -> KTypeSpectrum:
    """Perron root and normalised left eigenvector (long-run type shares)."""
    if gen.size > MAX_DENSE_TYPES:
        raise InvalidParameter(f"K <= {MAX_DENSE_TYPES} supported (dense solve)")
    if not is_irreducible(gen):
        raise ReducibleGenerator("types do not all communicate; shares are not unique")
    vals, vecs = np.linalg.eig(gen.matrix.T)
    k = int(np.argmax(vals.real))
    v = vecs[:, k].real
    v = v / v.sum()
    return KTypeSpectrum(sigma_plus=float(vals[k].real), shares=v)
