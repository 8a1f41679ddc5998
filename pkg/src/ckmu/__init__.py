"""Workbench for the constructive modal mu-calculus.

Parsing and analysis of fixpoint formulas, finite birelational models for
the logics CK / IK / GK, denotational evaluation, evaluation games solved
as parity games, and cyclic labeled sequent proof search with countermodel
extraction.
"""

from ckmu.syntax import Formula, Polarity, WellNamedSentence, analyze, closure, parse, polarity, pretty

__all__ = [
    "Formula",
    "Polarity",
    "WellNamedSentence",
    "analyze",
    "closure",
    "parse",
    "polarity",
    "pretty",
]
