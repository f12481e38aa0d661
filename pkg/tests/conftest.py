import warnings

import numpy as np
import pytest
from hypothesis import HealthCheck, settings, strategies as st

from parahost.core import TwoTypeParams

settings.register_profile(
    "default", max_examples=60, deadline=None, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("default")


@pytest.fixture(autouse=True)
def _quiet_convention_warning():
    with warnings.catch_warnings():
        warnings.filterwarnings("ignore", message="alpha2 <= alpha1")
        yield


rates = st.floats(0.05, 5.0)
probs = st.floats(0.0, 1.0)
open_probs = st.floats(0.02, 0.98)


@st.composite
def two_type_params(draw, coupled=True, ordered=False):
    """Random valid parameters; ``coupled`` keeps both mutation rates positive."""
    a1 = draw(rates)
    a2 = draw(st.floats(a1 * 1.05, a1 + 5.0)) if ordered else draw(rates)
    p = open_probs if coupled else probs
    return TwoTypeParams(
        alpha1=a1,
        alpha2=a2,
        beta1=draw(p),
        beta2=draw(p),
        mu1=draw(p),
        mu2=draw(p),
        lam=draw(st.floats(0.1, 20.0) if coupled else st.floats(0.0, 20.0)),
    )


def random_params(rng: np.random.Generator, n: int, ordered=False):
    out = []
    while len(out) < n:
        a1 = rng.uniform(0.05, 5)
        a2 = a1 + rng.uniform(0.05, 5) if ordered else rng.uniform(0.05, 5)
        b1, b2, m1, m2 = rng.uniform(0.02, 0.98, 4)
        out.append(TwoTypeParams(a1, a2, b1, b2, m1, m2, rng.uniform(0.1, 20)))
    return out
