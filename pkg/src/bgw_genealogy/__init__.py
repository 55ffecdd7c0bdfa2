"""Ancestral counts and coalescence times of Bienayme-Galton-Watson genealogies."""

from .ancestry import (
    CoalescenceQuery,
    Probability,
    QueryError,
    coffin_mass,
    conditional_tail_given_finite,
    joint_tmrca_popsize,
    merger_ratio,
    prob_finite,
    prob_infinite,
    row_sum_check,
    tau_tail,
    tmrca_full_sample_given_size,
    tmrca_tail,
    transition_prob,
    whole_population_tail,
)
from .mechanism import (
    BAry,
    Generic,
    Geometric,
    LinearFractional,
    Mechanism,
    MechanismError,
    PgfSeries,
    Sibuya,
    iterate,
    parse_mechanism,
    pgf_eval,
)
from .oracle import Mode, estimate, simulate_forest, trace_ancestry
from .tables import DistributionTable

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
