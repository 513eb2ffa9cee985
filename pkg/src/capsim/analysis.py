"""Closed-form AoI results, optimal RRI and the occupancy machinery behind them.

Occupancy probabilities are evaluated with exact rational arithmetic; the
binomial/power products overflow floats long before the interesting
cancellation regime of the convergence margin (values around 1e-5).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import lru_cache
from typing import Iterable, Mapping, Sequence

import numpy as np


class AnalysisError(ValueError):
    pass


@dataclass(frozen=True)
class StaticAnalysisInput:
    n_subch: int
    rri: int
    t_fix: int

    @property
    def c(self) -> int:
        return self.n_subch * self.rri


@dataclass(frozen=True)
class DynamicAnalysisInput(StaticAnalysisInput):
    x: float = 0.0
    y: float = 0.0
    v0: int = 2

    def __post_init__(self):
        if not math.isclose(self.x, self.y):
            raise AnalysisError(f"dynamic analysis assumes x == y (got x={self.x}, y={self.y})")


# --------------------------------------------------------------------------
# AoI closed forms
# --------------------------------------------------------------------------

def aoi_ideal(rri: float) -> float:
    if rri < 1:
        raise AnalysisError("rri must be >= 1")
    return (rri - 1) / 2


def aoi_static(inp: StaticAnalysisInput) -> float:
    """Converged average AoI for a static population (independent of v)."""
    n, a, t, c = inp.n_subch, inp.rri, inp.t_fix, inp.c
    if c == 1:
        raise AnalysisError("c = 1 leaves no other sub-channel to receive from")
    return (n - 1) * (t + a) / (2 * (c - 1)) + (c - n) * (a - 1) / (2 * (c - 1))


def _static_aoi_real(n_subch: int, rri: float, t_fix: float) -> float:
    c = n_subch * rri
    return (n_subch - 1) * (t_fix + rri) / (2 * (c - 1)) + (c - n_subch) * (rri - 1) / (2 * (c - 1))


@dataclass(frozen=True)
class OptimalRri:
    theoretical: float
    practical: int


def optimal_rri(t_upd: int, n_subch: int, t_ost: int) -> OptimalRri:
    """Theoretical (continuous) and practical (multiple of ``t_ost``) AoI-optimal RRI.

    The continuous optimum balances ``N*a - 1`` against
    ``N(N-1)(T+1) / (N*a - 1)``; the practical value is the feasible RRI
    ``m * t_ost <= t_upd`` with the lowest static AoI (ties go to the shorter RRI).
    """
    if not (t_upd >= t_ost >= 1):
        raise AnalysisError("need t_upd >= t_ost >= 1")
    n = n_subch
    theoretical = (1 + math.sqrt(n * (n - 1) * (t_upd + 1))) / n
    best, best_val = None, math.inf
    for rri in range(t_ost, t_upd + 1, t_ost):
        if rri * n == 1:
            continue
        val = aoi_static(StaticAnalysisInput(n, rri, t_upd))
        if val < best_val - 1e-12:
            best, best_val = rri, val
    if best is None:
        raise AnalysisError("no feasible RRI")
    return OptimalRri(theoretical, best)


def static_surface(n_subch: int, rris: Iterable[int], t_upds: Iterable[int]):
    """Rows ``(rri, t_upd, aoi)`` of the static AoI surface, skipping ``t_upd < rri``."""
    t_upds = list(t_upds)
    for rri in rris:
        for t_upd in t_upds:
            if t_upd >= rri:
                yield rri, t_upd, aoi_static(StaticAnalysisInput(n_subch, rri, t_upd))


# --------------------------------------------------------------------------
# Occupancy distribution (v balls thrown uniformly into c bins)
# --------------------------------------------------------------------------

def _check_cv(c: int, v: int):
    if c < 1 or v < 0:
        raise AnalysisError(f"need c >= 1 and v >= 0, got c={c}, v={v}")


@lru_cache(maxsize=None)
def p_singletons(c: int, v: int) -> tuple[Fraction, ...]:
    """``p[i]`` = P(exactly i sub-channels carry one packet), i = 0..c.

    Recursion: choose the i singleton channels and their occupants, send the
    rest to the other ``c - i`` channels, and require that none of those ends
    up with a single packet.
    """
    _check_cv(c, v)
    p = [Fraction(0)] * (c + 1)
    if v == 0:
        p[0] = Fraction(1)
        return tuple(p)
    for i in range(1, min(c, v) + 1):
        if c - i == 0:
            # all channels are singletons: only possible when v == c
            rest = Fraction(1) if v == i else Fraction(0)
        else:
            rest = p_singletons(c - i, v - i)[0]
        if rest == 0:
            continue
        ways = math.comb(c, i) * math.perm(v, i) * (c - i) ** (v - i)
        p[i] = Fraction(ways, c ** v) * rest
    p[0] = 1 - sum(p[1:])
    return tuple(p)


@lru_cache(maxsize=None)
def p_empties(c: int, v: int) -> tuple[Fraction, ...]:
    """``p[i]`` = P(exactly i sub-channels stay empty), i = 0..c."""
    _check_cv(c, v)
    p = [Fraction(0)] * (c + 1)
    if v == 0:
        p[c] = Fraction(1)
        return tuple(p)
    for i in range(1, c + 1):
        if i == c:
            continue  # (1 - c/c)^v = 0 for v > 0
        if c - i > v:
            continue  # pigeonhole: c - i channels cannot all be hit by v packets
        rest = p_empties(c - i, v)[0]
        if rest == 0:
            continue
        p[i] = Fraction(math.comb(c, i) * (c - i) ** v, c ** v) * rest
    p[0] = 1 - sum(p[1:])
    return tuple(p)


def b_singletons(c: int, v: int) -> Fraction:
    return sum((i * pi for i, pi in enumerate(p_singletons(c, v))), Fraction(0))


def b_empties(c: int, v: int) -> Fraction:
    return sum((i * pi for i, pi in enumerate(p_empties(c, v))), Fraction(0))


@dataclass(frozen=True)
class OccupancyDistribution:
    c: int
    v: int
    p: Mapping[int, tuple[Fraction, ...]]
    b: Mapping[int, Fraction]

    def prob(self, i: int, j: int) -> float:
        return float(self.p[j][i])


def occupancy_distribution(c: int, v: int) -> OccupancyDistribution:
    """Tables for j = 0 (empty) and j = 1 (singleton) channels and their means."""
    _check_cv(c, v)
    p = {0: p_empties(c, v), 1: p_singletons(c, v)}
    b = {0: b_empties(c, v), 1: b_singletons(c, v)}
    return OccupancyDistribution(c, v, p, b)


def _compositions(total: int, parts: int):
    if parts == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(total - first, parts - 1):
            yield (first,) + rest


def enumerate_occupancy(c: int, v: int) -> dict[str, list[Fraction]]:
    """Brute-force distribution of singleton/empty counts over all ``c**v`` assignments.

    Assignments are grouped by occupancy vector and weighted by their
    multinomial multiplicity, which keeps ``c, v <= 8`` cheap.
    """
    _check_cv(c, v)
    singles = [Fraction(0)] * (c + 1)
    empties = [Fraction(0)] * (c + 1)
    total = c ** v
    for counts in _compositions(v, c):
        mult = math.factorial(v)
        for n in counts:
            mult //= math.factorial(n)
        w = Fraction(mult, total)
        singles[sum(1 for n in counts if n == 1)] += w
        empties[sum(1 for n in counts if n == 0)] += w
    return {"singletons": singles, "empties": empties}


# --------------------------------------------------------------------------
# Convergence quantities
# --------------------------------------------------------------------------

def reselect_count(histogram: Mapping[int, float] | Sequence[float]) -> float:
    """Expected number of re-selecting vehicles for a sub-channel multiplicity histogram.

    ``histogram[j]`` is the number of sub-channels carrying ``j`` packets.
    At most three collided channels are assisted per round and each colliding
    vehicle re-selects with probability 0.5.
    """
    items = histogram.items() if isinstance(histogram, Mapping) else enumerate(histogram)
    n_col_ch = 0.0
    n_col_pk = 0.0
    for j, n in items:
        if j >= 2:
            n_col_ch += n
            n_col_pk += j * n
    if n_col_ch <= 0:
        return 0.0
    if n_col_ch >= 3:
        return 3 * n_col_pk / (2 * n_col_ch)
    return 0.5 * n_col_pk


@dataclass(frozen=True)
class ConvergenceMargin:
    c: int
    v: int
    minimum: float
    argmin: tuple[int, int]
    n0_values: np.ndarray = field(repr=False)
    n_rs_values: np.ndarray = field(repr=False)
    table: np.ndarray = field(repr=False)

    @property
    def all_positive(self) -> bool:
        return bool(np.all(self.table > 0))


def convergence_margin(c: int, v: int) -> ConvergenceMargin:
    """Minimum of E[Z] = b_{1, n0, n_rs} over the admissible (n0, n_rs) lattice.

    n0 (free channels left from the previous round) ranges over [2, c-1] and
    n_rs (vehicles re-selecting this round) over [1, ceil(v/2)].
    """
    if not (2 <= v < c):
        raise AnalysisError(f"convergence margin needs 2 <= v < c (got c={c}, v={v})")
    n0_values = np.arange(2, c)
    n_rs_values = np.arange(1, math.ceil(0.5 * v) + 1)
    table = np.empty((len(n0_values), len(n_rs_values)))
    best, arg = None, None
    for a, n0 in enumerate(n0_values):
        for b, n_rs in enumerate(n_rs_values):
            val = b_singletons(int(n0), int(n_rs))
            table[a, b] = float(val)
            if best is None or val < best:
                best, arg = val, (int(n0), int(n_rs))
    return ConvergenceMargin(c, v, float(best), arg, n0_values, n_rs_values, table)


# --------------------------------------------------------------------------
# Dynamic traffic
# --------------------------------------------------------------------------

def _exact(x: float) -> Fraction:
    return Fraction(x).limit_denominator(10 ** 9)


def arrivals_per_rri(x: float, v0: int, rri: int) -> int:
    return math.ceil(_exact(x) * v0 * rri / 1000)


def departures_per_rri(y: float, v0: int, rri: int) -> float:
    return float(_exact(y) * v0 * rri / 1000)


def collision_count_per_rri(inp: DynamicAnalysisInput) -> float:
    """Expected number of collided packets per RRI window under steady churn."""
    a_r = arrivals_per_rri(inp.x, inp.v0, inp.rri)
    if a_r == 0:
        return 0.0
    c, v0 = inp.c, inp.v0
    l_e = _exact(inp.y) * v0 * inp.rri / 1000
    b1 = b_singletons(c, a_r)
    b0 = b_empties(c, a_r)
    stay = (v0 - l_e) / c
    batch_rate = _exact(inp.x) * v0 * inp.rri / (1000 * a_r)
    n_col = (a_r - b1 + b1 * stay + stay * (c - b0)) * batch_rate
    return float(n_col)


def aoi_dynamic(inp: DynamicAnalysisInput) -> float:
    if inp.v0 < 2:
        raise AnalysisError("v0 must be >= 2")
    c, n, a = inp.c, inp.n_subch, inp.rri
    extra = (c - n) * a / ((inp.v0 - 1) * (c - 1)) * collision_count_per_rri(inp)
    return aoi_static(inp) + extra


# --------------------------------------------------------------------------
# Set expectations behind the static derivation
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SetExpectations:
    same_subframe: float          # E|J_i|
    other_subframe: float         # E|J_ibar|
    tx_now: float                 # E|I_t|
    not_tx_now: float             # E|I_tbar|
    other_subframe_tx_now: float  # E|J_ibar,t|
    other_subframe_idle: float    # E|J_ibar,tbar|

    @property
    def partition_gap(self) -> float:
        """``E|J_ibar,t| + E|J_ibar,tbar| - E|J_ibar|`` as printed; zero would mean an exact split."""
        return self.other_subframe_tx_now + self.other_subframe_idle - self.other_subframe


def set_expectations(n_subch: int, rri: int, v: int) -> SetExpectations:
    c = n_subch * rri
    if v < 2 or v > c:
        raise AnalysisError(f"need 2 <= v <= c (got v={v}, c={c})")
    if rri < 2:
        raise AnalysisError("rri must be >= 2")
    if c == 1:
        raise AnalysisError("c must be > 1")
    n, a = n_subch, rri
    other = (c - n) * (v - 1) / (c - 1)
    return SetExpectations(
        same_subframe=(n - 1) * (v - 1) / (c - 1),
        other_subframe=other,
        tx_now=v / a,
        not_tx_now=(a - 1) * v / a,
        other_subframe_tx_now=other / a,
        other_subframe_idle=other * (a - 2) / (a - 1),
    )
