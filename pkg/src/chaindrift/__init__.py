"""chaindrift: deterministic verification of a paradoxical colouring rule.

The package certifies the computational core of the result: the
non-termination probability, the weight-transfer table, the equalisation
process and its global bounds, the positive drift rate of the log-pain
process, and Monte Carlo confirmation of linear drift growth.
"""

from chaindrift.core import (
    BracketError,
    DegreeConfig,
    DomainError,
    GridParams,
    QHat,
    SeriesCoeffs,
    SolverFailure,
    WTable,
    all_configs,
    binom,
    bisect_root,
    build_wtable,
    config_prob,
    end_correction,
    nontermination_map,
    noperm,
    solve_qhat,
    wtilde,
)

__version__ = "0.1.0"

__all__ = [
    "BracketError",
    "DegreeConfig",
    "DomainError",
    "GridParams",
    "QHat",
    "SeriesCoeffs",
    "SolverFailure",
    "WTable",
    "all_configs",
    "binom",
    "bisect_root",
    "build_wtable",
    "config_prob",
    "end_correction",
    "nontermination_map",
    "noperm",
    "solve_qhat",
    "wtilde",
    "__version__",
]
