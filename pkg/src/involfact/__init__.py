"""Exact and asymptotic counts of factorizations into two involutions, under Ewens sampling."""

from .esf import ESFParams, esf_pmf, feller_sample
from .perm_core import CycleType, big_b, invol, invol_hermite, telephone

__all__ = ["CycleType", "ESFParams", "big_b", "esf_pmf", "feller_sample", "invol", "invol_hermite", "telephone"]
__version__ = "0.1.0"
