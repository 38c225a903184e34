"""Search-volume calculators and empirical tree measurements.

``v_full`` counts every prefix up to ``l_max`` in a ``b``-ary tree; ``v_eff``
is the same geometric sum with branching shrunk to ``b * (1 - p)``. The two
``eta`` functions are the speed-up lower bound (from a realized pruning rate)
and upper bound (from the quantile parameter).
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction


def _check_rate(name: str, value) -> None:
    if not 0 <= value < 1:
        raise ValueError(f"{name} must lie in [0, 1), got {value}")


def v_full(b: int, l_max: int) -> int:
    if b < 2:
        raise ValueError(f"b must be >= 2, got {b}")
    if l_max < 0:
        raise ValueError(f"l_max must be >= 0, got {l_max}")
    return (b ** (l_max + 1) - 1) // (b - 1)


def v_full_termwise(b: int, l_max: int) -> int:
    return sum(b ** d for d in range(l_max + 1))


def v_eff(b: int, p: float, l_max: int, exact: bool = False):
    """Geometric sum of ``(b(1-p))**d`` for d = 0..l_max.

    Evaluated in exact rational arithmetic; ``exact=True`` returns the
    Fraction, otherwise the nearest float.
    """
    _check_rate("p", p)
    if l_max < 0:
        raise ValueError(f"l_max must be >= 0, got {l_max}")
    r = Fraction(b) * (1 - Fraction(p))
    if r == 1:
        total = Fraction(l_max + 1)
    else:
        total = (r ** (l_max + 1) - 1) / (r - 1)
    return total if exact else float(total)


def v_eff_termwise(b: int, p: float, l_max: int) -> Fraction:
    r = Fraction(b) * (1 - Fraction(p))
    return sum((r ** d for d in range(l_max + 1)), Fraction(0))


def eta_lower(p: float, l_max: int, exact: bool = False):
    _check_rate("p", p)
    value = (1 / (1 - Fraction(p))) ** l_max
    return value if exact else float(value)


def eta_upper(beta: float, l_max: int, exact: bool = False):
    _check_rate("beta", beta)
    value = (1 / (1 - Fraction(beta))) ** l_max
    return value if exact else float(value)


@dataclass(frozen=True)
class TreeMeasurement:
    depth_counts: dict[int, int]
    red_fraction: float
    realized_p: float

    @property
    def total(self) -> int:
        return sum(self.depth_counts.values())


def measure_tree(tree) -> TreeMeasurement:
    """Per-depth node counts and the Red share of non-terminal nodes.

    The realized pruning rate is taken to be that Red share: Red nodes are
    the ones whose width is frozen. Colors are read as left by the last
    recoloring.
    """
    red = tree.red_fraction()
    return TreeMeasurement(tree.depth_histogram(), red, red)


def bounds_table(b: int, l_max: int, p: float, beta: float) -> list[dict]:
    return [{
        "b": b, "l_max": l_max, "p": p, "beta": beta,
        "v_full": v_full(b, l_max),
        "v_eff": v_eff(b, p, l_max),
        "eta_lower": eta_lower(p, l_max),
        "eta_upper": eta_upper(beta, l_max),
    }]
