"""Stability analysis toolkit for smooth functions on R^n.

Classifies functions by the local / infinitesimal / strong stability
hierarchy, certifies critical points of near-quadratic functions via a
contraction iteration, and constructs the normalizing diffeomorphisms that
restore the critical set and critical values of a perturbed function.
"""

from .backend import active_engine
from .expr import DomainError, Expr, JetK, ParseError, differentiate, eval_jet, parse

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "active_engine",
    "parse",
    "differentiate",
    "eval_jet",
    "Expr",
    "JetK",
    "ParseError",
    "DomainError",
]
