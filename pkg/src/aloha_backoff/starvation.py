"""Starvation metrics: length-biased service time, running means, windowed service.

A node is non-starved when the length-biased service time Y, with
Pr[Y = y] = y Pr[X = y] / E[X], has finite mean, which holds exactly when
E[X^2] is finite.  When it is not, per-node averages of X measured over
independent runs do not settle on a common value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import analytic
from .params import DomainError, InsufficientReplicationsError, SystemParams
from .queueing import SECOND_BOUNDED, Unbounded, service_moments
from .simulator import PROXY, REAL, SATURATED, SimConfig, SimStats, replicate

STARVED = "starved"
NON_STARVED = "non-starved"
INDETERMINATE = "indeterminate"

STARVED_SPREAD = 0.10
NON_STARVED_SPREAD = 0.02


def length_biased_mean(samples) -> float:
    """Empirical E[Y] = sum x^2 / sum x."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise DomainError("need at least one service-time sample")
    if np.any(x <= 0):
        raise DomainError("service times must be positive")
    return float(np.dot(x, x) / x.sum())


def length_biased_tail(samples, y_target: float) -> float:
    """Empirical Pr[Y > y_target]; a secondary diagnostic, not the starvation criterion."""
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise DomainError("need at least one service-time sample")
    return float(x[x > y_target].sum() / x.sum())


@dataclass(frozen=True)
class StarvationVerdict:
    analytic_non_starved: bool
    e_y: float | Unbounded
    critical_n: float | None = None
    empirical_spread: float | None = None
    empirical_flag: str | None = None


def analytic_verdict(p_c: float, r: float, r0: float) -> StarvationVerdict:
    m = service_moments(p_c, r0, r)
    if m.second_bounded:
        e_y = m.second_moment / m.mean
    else:
        e_y = Unbounded((SECOND_BOUNDED,))
    try:
        n_star = analytic.critical_node_count(r, r0)
    except DomainError:
        n_star = None
    return StarvationVerdict(analytic_non_starved=m.second_bounded, e_y=e_y, critical_n=n_star)


def saturated_verdict(params: SystemParams) -> StarvationVerdict:
    """Analytic verdict for a saturated system, using the saturation collision probability."""
    sat = analytic.saturation(params)
    return analytic_verdict(sat.p_c, params.r, params.r0)


@dataclass(frozen=True)
class RunningMeanTrace:
    values: np.ndarray
    replication_id: int = 0
    params: SystemParams | None = None

    @property
    def final(self) -> float:
        return float(self.values[-1])


def running_mean_trace(samples, replication_id: int = 0,
                       params: SystemParams | None = None) -> RunningMeanTrace:
    x = np.asarray(samples, dtype=np.float64)
    if x.size == 0:
        raise DomainError("need at least one service-time sample")
    values = np.cumsum(x) / np.arange(1, x.size + 1)
    return RunningMeanTrace(values=values, replication_id=replication_id, params=params)


@dataclass(frozen=True)
class DivergenceScore:
    spread: float
    flag: str


def divergence_score(finals, starved_above: float = STARVED_SPREAD,
                     non_starved_below: float = NON_STARVED_SPREAD) -> DivergenceScore:
    """Coefficient of variation of the final running means across replications."""
    x = np.asarray(finals, dtype=np.float64)
    if x.size < 3:
        raise InsufficientReplicationsError(f"need at least 3 replications, got {x.size}")
    spread = float(x.std(ddof=1) / x.mean())
    if spread > starved_above:
        flag = STARVED
    elif spread < non_starved_below:
        flag = NON_STARVED
    else:
        flag = INDETERMINATE
    return DivergenceScore(spread=spread, flag=flag)


@dataclass
class WindowCounts:
    window_slots: int
    counts: np.ndarray  # shape (n_nodes, n_windows)
    max_zero_streak: np.ndarray = field(init=False)
    horizon: int | None = None

    def __post_init__(self):
        self.max_zero_streak = _zero_streaks(self.counts, self.window_slots, self.horizon)

    @property
    def totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)


def _zero_streaks(counts: np.ndarray, window: int, horizon: int | None) -> np.ndarray:
    n_nodes, n_windows = counts.shape
    lengths = np.full(n_windows, window, dtype=np.int64)
    if horizon is not None and n_windows:
        lengths[-1] = horizon - window * (n_windows - 1)
    out = np.zeros(n_nodes, dtype=np.int64)
    for i in range(n_nodes):
        run = best = 0
        for c, length in zip(counts[i], lengths):
            run = run + length if c == 0 else 0
            best = max(best, run)
        out[i] = best
    return out


def window_counts(node_ids, departure_times, window_slots: int, n_nodes: int, horizon: int,
                  start: float = 0.0) -> WindowCounts:
    """Bin departures of each node into consecutive windows of ``window_slots`` slots.

    A departure at the end of slot t (time t + 1) belongs to the window
    holding slot t.
    """
    if window_slots < 1:
        raise DomainError("window must be at least one slot")
    nodes = np.asarray(node_ids, dtype=np.int64)
    times = np.asarray(departure_times, dtype=np.float64)
    n_windows = -(-horizon // window_slots)
    slot = np.floor(times - start - 1.0).astype(np.int64)
    counts = np.zeros((n_nodes, n_windows), dtype=np.int64)
    if nodes.size:
        np.add.at(counts, (nodes, slot // window_slots), 1)
    return WindowCounts(window_slots=window_slots, counts=counts, horizon=horizon)


def window_counts_from_stats(stats: SimStats) -> WindowCounts:
    cfg = stats.config
    if stats.window_counts is None:
        raise DomainError("simulation was run without window_slots")
    return WindowCounts(window_slots=cfg.window_slots, counts=stats.window_counts,
                        horizon=stats.slots_measured)


def nonsaturated_starvation_region(r: float) -> float:
    """Largest asymptotic offered load that keeps every node non-starved."""
    return analytic.sbmd_asymptotic(r)


# --------------------------------------------------------------------------
# experiments


def saturated_running_means(params: SystemParams, n_p: int, m: int, seed: int, node: int = 0,
                            system: str = REAL, slack: float = 1.3) -> list[RunningMeanTrace]:
    """Running mean of one node's service time in ``m`` saturated replications.

    The horizon is sized so that a node receiving its fair share clears about
    ``slack * n_p`` packets; a starved node may return fewer than ``n_p``.
    """
    sat = analytic.saturation(params)
    n = int(params.n)
    per_node = sat.s / n if system == REAL else 1.0 / service_moments(sat.p_c, params.r0, params.r).mean
    horizon = int(math.ceil(slack * n_p / per_node))
    warmup = min(10_000, horizon // 20)
    cfg = SimConfig(params, SATURATED, system=system, horizon_slots=horizon + warmup,
                    warmup_slots=warmup, seed=seed, p_c=sat.p_c if system == PROXY else None)
    traces = []
    for stats in replicate(cfg, m):
        x = stats.node_service_samples(node if system == REAL else 0)[:n_p]
        if x.size == 0:
            raise DomainError(f"node {node} was never served in replication {stats.config.replication_index}")
        traces.append(running_mean_trace(x, stats.config.replication_index, params))
    return traces


def empirical_verdict(params: SystemParams, n_p: int = 100_000, m: int = 5, seed: int = 0,
                      system: str = REAL, **thresholds) -> tuple[StarvationVerdict, list[RunningMeanTrace]]:
    traces = saturated_running_means(params, n_p, m, seed, system=system)
    score = divergence_score([t.final for t in traces], **thresholds)
    base = saturated_verdict(params)
    verdict = StarvationVerdict(analytic_non_starved=base.analytic_non_starved, e_y=base.e_y,
                                critical_n=base.critical_n, empirical_spread=score.spread,
                                empirical_flag=score.flag)
    return verdict, traces
