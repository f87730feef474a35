"""Numerical tolerances shared across the package."""

from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    # relative threshold below which singular values count as round-off
    roundoff_rtol: float = 1e-14
    # guard for dense expansion of (R^2)^K tensors
    full_tensor_cap: int = 20
    # maximal sector dimension for the dense oracle
    oracle_cap: int = 4000
    # tolerance-mode truncation sweep direction: "ltr" or "rtl"
    sweep: str = "ltr"


DEFAULTS = Tolerances()
