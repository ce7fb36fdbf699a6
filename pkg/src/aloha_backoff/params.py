"""System parameters, the asymptotic node-count sentinel and the error types."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass


class Asymptotic(enum.Enum):
    """Marker for the N -> infinity regime."""

    INF = "inf"

    def __repr__(self) -> str:
        return "INFINITE"

    def __str__(self) -> str:
        return "inf"


INFINITE = Asymptotic.INF


class AlohaError(Exception):
    """Base class for every error raised by this package."""


class DomainError(AlohaError, ValueError):
    """An argument lies outside the domain of the operation."""


class InfeasibleLoadError(DomainError):
    """The requested offered load is at or above the peak of the S-G curve."""


class UnstableQueueError(DomainError):
    """The local queue has no equilibrium (lambda_o * E[X] >= 1)."""


class ConfigError(DomainError):
    """A simulation configuration violates its invariants."""


class InsufficientReplicationsError(DomainError):
    pass


class FixedPointError(AlohaError, RuntimeError):
    """A bracketed root search found no sign change."""

    def __init__(self, message: str, lo: float, hi: float):
        super().__init__(f"{message} (bracket [{lo!r}, {hi!r}])")
        self.lo = lo
        self.hi = hi


class ModelViolationError(AlohaError, RuntimeError):
    """A solver returned a point that breaks a model constraint."""


def is_infinite(n) -> bool:
    return n is INFINITE


def parse_node_count(value) -> int | Asymptotic:
    """Accept an integer >= 2, the sentinel, or the token ``"inf"``."""
    if value is INFINITE:
        return value
    if isinstance(value, str):
        token = value.strip().lower()
        if token == "inf":
            return INFINITE
        try:
            value = int(token)
        except ValueError:
            raise DomainError(f"node count must be an integer >= 2 or 'inf', got {value!r}") from None
    if isinstance(value, float):
        if math.isinf(value):
            raise DomainError("use the INFINITE sentinel (or 'inf'), not a float infinity")
        if not value.is_integer():
            raise DomainError(f"node count must be an integer, got {value!r}")
        value = int(value)
    if isinstance(value, bool) or not isinstance(value, int):
        raise DomainError(f"node count must be an integer >= 2 or 'inf', got {value!r}")
    if value < 2:
        raise DomainError(f"node count must be >= 2, got {value}")
    return value


@dataclass(frozen=True)
class SystemParams:
    """Tunable protocol and load inputs.

    ``r0`` is the reciprocal of a fresh HOL packet's transmission
    probability, ``r`` the backoff factor, ``n`` the node count (or
    :data:`INFINITE`) and ``s_offered`` the aggregate offered load in
    packets per slot.
    """

    r0: float = 10.0
    r: float = 2.0
    n: int | Asymptotic = INFINITE
    s_offered: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "n", parse_node_count(self.n))
        if not math.isfinite(self.r0) or self.r0 < 1:
            raise DomainError(f"r0 must be >= 1, got {self.r0}")
        if not math.isfinite(self.r) or self.r <= 1:
            raise DomainError(f"r must be > 1, got {self.r}")
        if self.s_offered is not None and not (self.s_offered > 0 and math.isfinite(self.s_offered)):
            raise DomainError(f"offered load must be > 0, got {self.s_offered}")

    @property
    def asymptotic(self) -> bool:
        return self.n is INFINITE

    @property
    def lambda_per_node(self) -> float:
        if self.s_offered is None:
            raise DomainError("offered load is not set")
        if self.asymptotic:
            raise DomainError("per-node arrival rate is zero in the asymptotic regime")
        return self.s_offered / self.n
