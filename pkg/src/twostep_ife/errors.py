"""Exception hierarchy shared by the estimation modules."""

from __future__ import annotations


class IFEError(Exception):
    """Base class for all package errors."""


class DomainError(IFEError, ValueError):
    """Outcome values outside the support of the likelihood family."""


class NumericError(IFEError, ArithmeticError):
    """Non-finite index, objective or decomposition failure."""


class StallError(IFEError):
    """Backtracking shrank the step sizes below the floor without descent."""


class RankSelectionError(IFEError):
    """The singular values are degenerate, so no rank can be selected."""


class DegeneracyError(IFEError, ValueError):
    """Rank-deficient loadings or factors where full rank is required."""


class InferenceError(IFEError):
    """Bias correction or standard errors cannot be formed (e.g. non-PD W)."""


class TuningError(IFEError):
    """The pilot fit used for tuning-parameter selection failed."""

    def __init__(self, message: str, diagnostic: object | None = None):
        super().__init__(message)
        self.diagnostic = diagnostic


class JackknifeError(IFEError):
    """One or more half-panel re-estimations failed."""

    def __init__(self, message: str, failing: list[str] | None = None):
        super().__init__(message)
        self.failing = failing or []


class PanelFormatError(IFEError, ValueError):
    """Input panel file cannot be parsed or is not a balanced grid."""
