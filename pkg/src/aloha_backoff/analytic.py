"""Global, local and coupling analysis of slotted Aloha with exponential backoff.

Everything here is a pure function of its inputs.  Roots are found by
bracketed bisection so that convergence never depends on a starting guess.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple

from .params import (
    INFINITE,
    Asymptotic,
    DomainError,
    FixedPointError,
    InfeasibleLoadError,
    ModelViolationError,
    SystemParams,
    parse_node_count,
)

ABS_TOL = 1e-12
MAX_ITER = 200
# open bracket (0, 1/r) for the saturation fixed point
ENDPOINT_INSET = 1e-14

LEFT = "left-of-peak"
PEAK = "peak"
RIGHT = "right-of-peak"

BBMD_BINDING = "bbmd-binding"
SATURATION_BINDING = "saturation-binding"


def bisect(f: Callable[[float], float], lo: float, hi: float, tol: float = ABS_TOL,
           max_iter: int = MAX_ITER, what: str = "root") -> float:
    """Bisection on ``[lo, hi]`` to absolute tolerance ``tol``.

    Raises :class:`FixedPointError` if ``f`` has no sign change on the bracket.
    """
    f_lo, f_hi = f(lo), f(hi)
    if f_lo == 0:
        return lo
    if f_hi == 0:
        return hi
    if (f_lo > 0) == (f_hi > 0):
        raise FixedPointError(f"no sign change while solving for {what}", lo, hi)
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if hi - lo <= 2 * tol or mid == lo or mid == hi:
            return mid
        f_mid = f(mid)
        if f_mid == 0:
            return mid
        if (f_mid > 0) == (f_lo > 0):
            lo, f_lo = mid, f_mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


# --------------------------------------------------------------------------
# result types


@dataclass(frozen=True)
class OperatingPoint:
    g: float
    s: float
    p_c: float
    p_t: float | None
    branch: str


class SaturationPoint(NamedTuple):
    g: float
    s: float
    p_c: float


class BBMDPoint(NamedTuple):
    g: float
    s: float


@dataclass(frozen=True)
class ThroughputLimits:
    s_sat: float
    g_sat: float
    p_c_sat: float
    s_bbmd: float
    g_bbmd: float
    s_sbmd: float
    binding: str


def branch_of(g: float, tol: float = 1e-9) -> str:
    if abs(g - 1.0) <= tol:
        return PEAK
    return LEFT if g < 1.0 else RIGHT


# --------------------------------------------------------------------------
# global analysis


def collision_prob_from_rate(g: float) -> float:
    """Asymptotic collision probability 1 - exp(-G)."""
    if g < 0 or math.isnan(g):
        raise DomainError(f"attempt rate must be >= 0, got {g}")
    return -math.expm1(-g)


def collision_prob_from_attempt(p_t: float, n) -> float:
    """Collision probability seen by a node when every other node transmits w.p. ``p_t``.

    With ``n=INFINITE`` the first argument is the aggregate attempt rate
    G = N * p_t and the result is ``1 - exp(-G)``.
    """
    n = parse_node_count(n)
    if n is INFINITE:
        return collision_prob_from_rate(p_t)
    if not 0.0 <= p_t <= 1.0:
        raise DomainError(f"transmission probability must lie in [0, 1], got {p_t}")
    return 1.0 - (1.0 - p_t) ** (n - 1)


def throughput_at(g: float, n) -> float:
    """S = G (1 - G/N)^(N-1), or G exp(-G) for the asymptotic curve."""
    n = parse_node_count(n)
    if g < 0 or math.isnan(g):
        raise DomainError(f"attempt rate must be >= 0, got {g}")
    if n is INFINITE:
        return g * math.exp(-g)
    if g > n:
        raise DomainError(f"attempt rate {g} exceeds node count {n}")
    return g * (1.0 - g / n) ** (n - 1)


def peak_throughput(n) -> float:
    return throughput_at(1.0, n)


def _right_upper(n) -> float:
    if n is not INFINITE:
        return float(n)
    hi = 2.0
    while hi * math.exp(-hi) > 1e-300 and hi < 800:
        hi *= 2
    return hi


def solve_operating_point(s_o: float, n, right_branch: bool = False) -> OperatingPoint:
    """Attempt rate that carries offered load ``s_o``.

    Only the left-branch root is a valid non-saturated operating point; the
    right root is available with ``right_branch=True`` for drawing curves.
    """
    n = parse_node_count(n)
    if not s_o > 0:
        raise DomainError(f"offered load must be > 0, got {s_o}")
    peak = peak_throughput(n)
    if s_o >= peak:
        raise InfeasibleLoadError(f"offered load {s_o} is not below the curve peak {peak:.6f}")
    f = lambda g: throughput_at(g, n) - s_o
    # bisection runs to machine resolution so small loads keep relative accuracy
    if right_branch:
        g = bisect(f, 1.0, _right_upper(n), tol=0.0, what="right-branch attempt rate")
        branch = RIGHT
    else:
        g = bisect(f, 0.0, 1.0, tol=0.0, what="left-branch attempt rate")
        branch = LEFT
    # equals 1 - s_o/g on the curve, without the cancellation at small g
    p_t = None if n is INFINITE else g / n
    p_c = collision_prob_from_rate(g) if n is INFINITE else collision_prob_from_attempt(p_t, n)
    return OperatingPoint(g=g, s=s_o, p_c=p_c, p_t=p_t, branch=branch)


# --------------------------------------------------------------------------
# saturation (coupling of global and local analyses)


def _check_r(r: float) -> None:
    if not r > 1 or not math.isfinite(r):
        raise DomainError(f"backoff factor must be > 1, got {r}")


def _check_r0(r0: float) -> None:
    if not r0 >= 1 or not math.isfinite(r0):
        raise DomainError(f"r0 must be >= 1, got {r0}")


def saturation_asymptotic(r: float) -> SaturationPoint:
    _check_r(r)
    g = math.log(r / (r - 1.0))
    return SaturationPoint(g=g, s=(r - 1.0) / r * g, p_c=1.0 / r)


def implied_attempt_prob(p_c: float, r: float, r0: float) -> float:
    """Per-node transmission probability at saturation for collision probability ``p_c``."""
    return (1.0 - p_c * r) / (r0 * (1.0 - p_c))


def saturation_fixed_point_residual(p_c: float, r: float, r0: float, n: int) -> float:
    """(1 - p_c) - (1 - p_t(p_c))^(N-1); zero at the saturation fixed point."""
    return (1.0 - p_c) - (1.0 - implied_attempt_prob(p_c, r, r0)) ** (n - 1)


def saturation_finite(r: float, r0: float, n: int) -> SaturationPoint:
    """Saturation point for finite N, solved as a fixed point in p_c on (0, 1/r)."""
    _check_r(r)
    _check_r0(r0)
    n = parse_node_count(n)
    if n is INFINITE:
        raise DomainError("saturation_finite needs a finite node count")
    lo, hi = ENDPOINT_INSET, 1.0 / r - ENDPOINT_INSET
    # run to machine resolution: with r0 near 1 and large N the residual is
    # steep enough that a 1e-12 step in p_c leaves a visible residual
    p_c = bisect(lambda p: saturation_fixed_point_residual(p, r, r0, n), lo, hi, tol=0.0,
                 what="saturation collision probability")
    p_t = implied_attempt_prob(p_c, r, r0)
    if not 0.0 < p_t <= 1.0:
        raise ModelViolationError(f"implied transmission probability {p_t} outside (0, 1]")
    s = n * (1.0 - p_c * r) / r0
    return SaturationPoint(g=s / (1.0 - p_c), s=s, p_c=p_c)


def saturation(params: SystemParams) -> SaturationPoint:
    if params.asymptotic:
        return saturation_asymptotic(params.r)
    return saturation_finite(params.r, params.r0, params.n)


# --------------------------------------------------------------------------
# bounded-mean-delay limits


def bbmd_asymptotic(r: float) -> BBMDPoint:
    _check_r(r)
    r2 = r * r
    g = math.log(r2 / (r2 - 1.0))
    return BBMDPoint(g=g, s=(r2 - 1.0) / r2 * g)


def bbmd_finite(r: float, n: int) -> BBMDPoint:
    """Point on the finite-N curve where p_c r^2 = 1."""
    _check_r(r)
    n = parse_node_count(n)
    if n is INFINITE:
        raise DomainError("bbmd_finite needs a finite node count")
    q = 1.0 / (r * r)
    # n * (1 - (1-q)^(1/(n-1))) without cancellation for large n
    g = -n * math.expm1(math.log1p(-q) / (n - 1))
    return BBMDPoint(g=g, s=g * (1.0 - q))


def bbmd(params: SystemParams) -> BBMDPoint:
    if params.asymptotic:
        return bbmd_asymptotic(params.r)
    return bbmd_finite(params.r, params.n)


def sbmd(params: SystemParams) -> ThroughputLimits:
    """Saturation, boundary and safe bounded-mean-delay throughputs.

    For finite N the BBMD point can move to the right of the saturation
    point as r decreases; when it does, the saturation throughput is the
    safe limit even if it exceeds S_BBMD.
    """
    sat = saturation(params)
    bb = bbmd(params)
    if not params.asymptotic and bb.g > sat.g:
        s_sbmd, binding = sat.s, SATURATION_BINDING
    elif bb.s < sat.s:
        s_sbmd, binding = bb.s, BBMD_BINDING
    else:
        s_sbmd, binding = sat.s, SATURATION_BINDING
    return ThroughputLimits(s_sat=sat.s, g_sat=sat.g, p_c_sat=sat.p_c,
                            s_bbmd=bb.s, g_bbmd=bb.g, s_sbmd=s_sbmd, binding=binding)


def sbmd_asymptotic(r: float) -> float:
    return min(bbmd_asymptotic(r).s, saturation_asymptotic(r).s)


OPTIMAL_R_BRACKET = (1.01, 3.0)


def optimal_backoff_asymptotic(tol: float = 1e-6) -> float:
    """Backoff factor maximising the asymptotic SBMD throughput.

    It is where S_BBMD(r) and S_s(r) cross; S_BBMD - S_s is positive below
    the crossing and negative above it.
    """
    diff = lambda r: bbmd_asymptotic(r).s - saturation_asymptotic(r).s
    lo, hi = OPTIMAL_R_BRACKET
    if not (diff(lo) > 0 > diff(hi)):
        raise FixedPointError("S_BBMD - S_s does not change sign as expected", lo, hi)
    return bisect(diff, lo, hi, tol=tol, what="optimal backoff factor")


# --------------------------------------------------------------------------
# starvation threshold


def critical_node_count(r: float, r0: float) -> float:
    """Node count N_s* above which a saturated system is starved."""
    _check_r(r)
    _check_r0(r0)
    c = 1.0 + 1.0 / r - 1.0 / r0
    if not c > 0:
        raise DomainError(f"1 + 1/r - 1/r0 must be positive, got {c}")
    log_c = math.log(c)
    return (math.log(r / (r - 1.0)) - log_c) / (math.log((r + 1.0) / r) - log_c)


def saturated_node_count(p_c: float, r: float, r0: float) -> float:
    """Invert the saturation fixed point: the N that produces collision probability ``p_c``."""
    _check_r(r)
    _check_r0(r0)
    if not 0 < p_c < 1.0 / r:
        raise DomainError(f"p_c must lie in (0, 1/r), got {p_c}")
    return 1.0 + math.log(1.0 - p_c) / math.log(1.0 - implied_attempt_prob(p_c, r, r0))


__all__ = [
    "Asymptotic", "INFINITE", "OperatingPoint", "SaturationPoint", "BBMDPoint", "ThroughputLimits",
    "bisect", "branch_of", "collision_prob_from_rate", "collision_prob_from_attempt", "throughput_at",
    "peak_throughput", "solve_operating_point", "saturation_asymptotic", "saturation_finite",
    "saturation", "implied_attempt_prob", "saturation_fixed_point_residual", "bbmd_asymptotic",
    "bbmd_finite", "bbmd", "sbmd", "sbmd_asymptotic", "optimal_backoff_asymptotic",
    "critical_node_count", "saturated_node_count",
]
