"""Two-type branching model of pathogen lethality under varying host density."""

from parahost.core import (
    Criticality,
    TwoTypeParams,
    build_generator,
    build_offspring_table,
    classify,
    reference_params,
    limiting_ratio,
    mean_matrix,
    sensitivities,
    spectrum,
)
from parahost.errors import *  # noqa: F401,F403
from parahost.multistage import LadderParams, build_chain, find_kstar
from parahost.simulator import PopulationState, ensemble, empirical_limiting_ratio, simulate

__version__ = "0.1.0"
