"""Local analysis: HOL service time, and the M/G/1 multiple-vacation queue.

The HOL service time X of a packet that suffers C collisions is a sum of
C + 1 independent geometric gaps with success probabilities 1/(r0 r^j);
C itself is geometric with parameter p_c.  A queue that empties waits for
the next slot boundary, which is a vacation of exactly one slot.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import mpmath

from .analytic import solve_operating_point
from .params import DomainError, SystemParams, UnstableQueueError

NON_SATURATED = "non-saturated"  # p_c r + lambda_o r0 < 1
MEAN_BOUNDED = "mean-bounded"  # p_c r < 1
SECOND_BOUNDED = "second-bounded"  # p_c r^2 < 1
STABLE = "stable"  # lambda_o E[X] < 1
CONVERGENT = "finite-difference-convergent"


class SeriesTruncationWarning(RuntimeWarning):
    """The service-time series hit ``max_terms`` before reaching its tolerance."""


@dataclass(frozen=True)
class Unbounded:
    """A moment or delay that is infinite; ``violated`` names the failed conditions."""

    violated: tuple[str, ...]

    def __bool__(self) -> bool:
        return False

    def __str__(self) -> str:
        return "unbounded(" + ",".join(self.violated) + ")"


def is_unbounded(x) -> bool:
    return isinstance(x, Unbounded)


@dataclass(frozen=True)
class TransformContext:
    p_c: float
    r0: float
    r: float
    truncation_tol: float = 1e-12
    max_terms: int = 10_000

    def __post_init__(self):
        if not 0.0 <= self.p_c < 1.0:
            raise DomainError(f"p_c must lie in [0, 1), got {self.p_c}")
        if not self.r0 >= 1:
            raise DomainError(f"r0 must be >= 1, got {self.r0}")
        if not self.r > 1:
            raise DomainError(f"r must be > 1, got {self.r}")
        if not self.truncation_tol > 0 or self.max_terms < 1:
            raise DomainError("truncation_tol must be > 0 and max_terms >= 1")


@dataclass(frozen=True)
class ServiceMoments:
    mean: float | Unbounded
    second_factorial: float | Unbounded
    second_moment: float | Unbounded
    variance: float | Unbounded
    mean_bounded: bool
    second_bounded: bool


@dataclass(frozen=True)
class DelayEstimate:
    mean_delay: float | Unbounded
    non_saturated: bool
    service_var_bounded: bool
    lambda_per_node: float
    p_c: float = field(default=math.nan)
    g: float = field(default=math.nan)

    @property
    def bounded(self) -> bool:
        return not is_unbounded(self.mean_delay)


# --------------------------------------------------------------------------
# service time


def _pgf_series(z, p_c, r0, r, tol, max_terms, one):
    # X(z) = sum_k (1-p_c) p_c^k prod_{j<=k} z / (z + a_j (1 - z)),  a_j = r0 r^j
    total = 0 * one
    prod = one
    weight = (one - p_c)
    a = r0 * one
    tail = one  # p_c^(k+1) bounds the mass of all terms beyond k
    w = 1 - z
    for k in range(max_terms):
        if isinstance(a, float) and math.isinf(a):
            # factor -> 0 off z = 1, exactly 1 at z = 1; later terms vanish or are in the tail
            if z == 1:
                total += tail
            return total, False
        prod = prod * z / (z + a * w)
        total += weight * prod
        tail = tail * p_c
        if abs(tail) < tol or p_c == 0:
            return total, False
        weight = weight * p_c
        a = a * r
    return total, True


def service_pgf(z, ctx: TransformContext):
    """Probability generating function X(z) of the HOL service time, |z| <= 1.

    Accepts real, complex or mpmath arguments.
    """
    if abs(z) > 1.0 + 1e-15:
        raise DomainError(f"|z| must be <= 1, got {abs(z)}")
    # an mpmath argument keeps the whole sum in mpmath precision
    one = mpmath.mpf(1) if isinstance(z, (mpmath.mpf, mpmath.mpc)) else 1.0
    value, truncated = _pgf_series(z, ctx.p_c * one, ctx.r0 * one, ctx.r * one,
                                   ctx.truncation_tol, ctx.max_terms, one)
    if truncated:
        warnings.warn(f"service PGF truncated at {ctx.max_terms} terms for p_c={ctx.p_c}",
                      SeriesTruncationWarning, stacklevel=2)
    return value


def service_moments(p_c: float, r0: float, r: float) -> ServiceMoments:
    """Closed-form first two moments of the HOL service time."""
    if not 0.0 <= p_c < 1.0:
        raise DomainError(f"p_c must lie in [0, 1), got {p_c}")
    mean_ok = p_c * r < 1.0
    second_ok = p_c * r * r < 1.0
    mean: float | Unbounded = r0 / (1.0 - p_c * r) if mean_ok else Unbounded((MEAN_BOUNDED,))
    if second_ok and mean_ok:
        fact2 = 2.0 * r0 * (p_c * r * r + r0 - 1.0) / ((1.0 - p_c * r * r) * (1.0 - p_c * r))
        second = fact2 + mean
        var = second - mean * mean
    else:
        marker = Unbounded((SECOND_BOUNDED,))
        fact2 = second = var = marker
    return ServiceMoments(mean=mean, second_factorial=fact2, second_moment=second,
                          variance=var, mean_bounded=mean_ok, second_bounded=second_ok)


# --------------------------------------------------------------------------
# queue and delay transforms


def vacation_transform(s: float) -> float:
    """Laplace transform of the one-slot vacation."""
    if s < 0:
        raise DomainError(f"s must be >= 0, got {s}")
    return math.exp(-s)


VACATION_MEAN = 1.0
VACATION_SECOND_MOMENT = 1.0


def _utilisation(lambda_o: float, ctx: TransformContext) -> float:
    if lambda_o < 0:
        raise DomainError(f"arrival rate must be >= 0, got {lambda_o}")
    if lambda_o == 0:
        return 0.0
    mean = service_moments(ctx.p_c, ctx.r0, ctx.r).mean
    if is_unbounded(mean):
        raise UnstableQueueError("mean service time is unbounded (p_c r >= 1)")
    rho = lambda_o * mean
    if rho >= 1.0:
        raise UnstableQueueError(f"utilisation lambda_o E[X] = {rho:.6g} >= 1")
    return rho


def delay_transform(s: float, lambda_o: float, ctx: TransformContext) -> float:
    """Laplace transform D*(s) of the queuing delay (waiting plus service)."""
    if s < 0:
        raise DomainError(f"s must be >= 0, got {s}")
    rho = _utilisation(lambda_o, ctx)
    if s == 0:
        return 1.0
    x = service_pgf(math.exp(-s), ctx)
    # V*(s) - 1 via expm1: the plain difference loses all digits for small s
    return (1.0 - rho) / VACATION_MEAN * x * math.expm1(-s) / (lambda_o - s - lambda_o * x)


def queue_length_pgf(z: float, lambda_o: float, ctx: TransformContext) -> float:
    """PGF Q(z) of the number of packets at the node (HOL included)."""
    if not 0.0 <= z <= 1.0:
        raise DomainError(f"z must lie in [0, 1], got {z}")
    rho = _utilisation(lambda_o, ctx)
    if z == 1.0 or lambda_o == 0:
        return 1.0
    s = lambda_o * (1.0 - z)
    x = service_pgf(math.exp(-s), ctx)
    return (1.0 - rho) / (lambda_o * VACATION_MEAN) * x * math.expm1(-s) / (z - x)


# --------------------------------------------------------------------------
# mean delay


def boundedness_check(p_c: float, r: float, r0: float, lambda_o: float) -> tuple[bool, bool]:
    """(non_saturated, second_bounded) flags for the mean-delay conditions."""
    return p_c * r + lambda_o * r0 < 1.0, p_c * r * r < 1.0


def mean_delay_at(p_c: float, r0: float, r: float, lambda_o: float) -> float | Unbounded:
    """Mean queuing delay for a fixed collision probability."""
    non_sat, second_ok = boundedness_check(p_c, r, r0, lambda_o)
    if not (non_sat and second_ok):
        violated = tuple(name for name, ok in ((NON_SATURATED, non_sat), (SECOND_BOUNDED, second_ok))
                         if not ok)
        return Unbounded(violated)
    a = 1.0 - p_c * r
    b = 1.0 - p_c * r * r
    return (r0 / a
            + lambda_o * r0 * (p_c * r * r + 2.0 * r0 - 1.0) / (2.0 * b * (a - lambda_o * r0))
            + 0.5)


def mean_delay(params: SystemParams) -> DelayEstimate:
    """Mean queuing delay at offered load ``params.s_offered``.

    The collision probability p_c = (G - S_o)/G comes from the left-branch
    operating point of the finite-N S-G curve.
    """
    if params.asymptotic:
        raise DomainError("mean delay needs a finite node count")
    if params.s_offered is None:
        raise DomainError("mean delay needs an offered load")
    op = solve_operating_point(params.s_offered, params.n)
    lam = params.lambda_per_node
    p_c = op.p_c
    non_sat, second_ok = boundedness_check(p_c, params.r, params.r0, lam)
    return DelayEstimate(mean_delay=mean_delay_at(p_c, params.r0, params.r, lam),
                         non_saturated=non_sat, service_var_bounded=second_ok,
                         lambda_per_node=lam, p_c=p_c, g=op.g)


# --------------------------------------------------------------------------
# second moment of delay by one-sided differencing


def _delay_transform_mp(s, lambda_o, ctx: TransformContext, rho, tol):
    z = mpmath.exp(-s)
    x, truncated = _pgf_series(z, mpmath.mpf(ctx.p_c), mpmath.mpf(ctx.r0), mpmath.mpf(ctx.r),
                               tol, 100_000, mpmath.mpf(1))
    if truncated:
        warnings.warn("high-precision service PGF truncated", SeriesTruncationWarning, stacklevel=3)
    lam = mpmath.mpf(lambda_o)
    return (1 - rho) * x * (mpmath.exp(-s) - 1) / (lam - s - lam * x)


DIFF_STEPS = (1e-3, 1e-4, 1e-5)


def delay_second_moment_numeric(lambda_o: float, ctx: TransformContext, steps=DIFF_STEPS,
                                rel_tol: float = 0.10) -> float | Unbounded:
    """Estimate E[D^2] from the delay transform near s = 0.

    The transform has no expansion for s < 0 (the service time is
    heavy-tailed), so differences are one-sided:
    ``2 (D*(h) - 1 + E[D] h) / h^2 -> E[D^2]`` as ``h -> 0``.  Successive
    steps are combined by Richardson extrapolation; if the extrapolated values
    disagree by more than ``rel_tol`` the moment is reported as divergent.
    """
    rho = _utilisation(lambda_o, ctx)
    if ctx.p_c * ctx.r * ctx.r >= 1.0:
        return Unbounded((SECOND_BOUNDED,))
    m1 = mean_delay_at(ctx.p_c, ctx.r0, ctx.r, lambda_o)
    if is_unbounded(m1):
        return m1
    with mpmath.workdps(50):
        m1_mp = mpmath.mpf(m1)
        est = []
        for h in steps:
            hm = mpmath.mpf(h)
            d = _delay_transform_mp(hm, lambda_o, ctx, mpmath.mpf(rho), mpmath.mpf(10) ** -40)
            est.append(float(2 * (d - 1 + m1_mp * hm) / hm ** 2))
    # first-order bias in h; extrapolate each consecutive pair
    extrap = [(est[i + 1] * steps[i] - est[i] * steps[i + 1]) / (steps[i] - steps[i + 1])
              for i in range(len(steps) - 1)]
    if any(not math.isfinite(e) or e <= 0 for e in extrap):
        return Unbounded((CONVERGENT,))
    for a, b in zip(extrap, extrap[1:]):
        if abs(a - b) > rel_tol * abs(b):
            return Unbounded((CONVERGENT,))
    return extrap[-1]
