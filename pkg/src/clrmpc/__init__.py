"""Constraint-tightening robust MPC for linear systems with structured
uncertainty: offline synthesis of tightening certificates, a cheap online
quadratic program, and verification / simulation tooling.

Submodules are imported explicitly (clrmpc.model, clrmpc.synthesis, ...);
only the shared exception types live at package level.
"""

__version__ = "0.1.0"

from .errors import (
    DimensionMismatch,
    EmptyPolytope,
    FingerprintMismatch,
    InfeasibleLmi,
    InitialGuessInfeasible,
    MissingArtifacts,
    ModelFormatError,
    MpcInfeasible,
    NoConvergence,
    NotSymmetric,
    SolverFailure,
    Unstabilizable,
)
