"""Slot-synchronous simulation of the real N-node system and the proxy queue.

Per slot of the real system, in order:

1. Poisson arrivals during the slot join the tail of their node's queue;
   a packet reaching an empty queue becomes HOL, eligible from the next slot.
2. Every node whose HOL is eligible transmits with probability
   ``1 / (r0 * r**stage)``.
3. A lone transmitter succeeds; its packet departs at the end of the slot
   and the next-in-line packet becomes HOL at stage 0, eligible next slot.
   With two or more transmitters every involved HOL moves up one stage.

Saturated mode keeps every HOL occupied: a fresh stage-0 packet replaces
each departure and is eligible from the next slot.

The hot loops are compiled with numba and draw from a
:class:`numpy.random.Generator` whose seed sequence is
``SeedSequence(seed, spawn_key=(replication_index,))``, so replications
are independent streams and every run is reproducible.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numba
import numpy as np

from .params import ConfigError, SystemParams

OPEN_LOAD = "open-load"
SATURATED = "saturated"
REAL = "real"
PROXY = "proxy"

IDLE = "idle"
SUCCESS = "success"
COLLISION = "collision"

# transmission-probability lookup table length; deeper stages fall back to pow
_PTABLE = 4096


def stream(seed: int, replication_index: int = 0) -> np.random.Generator:
    """Random stream for one replication: PCG64 over ``SeedSequence(seed, spawn_key=(index,))``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(replication_index),))
    return np.random.Generator(np.random.PCG64(ss))


@dataclass(frozen=True)
class SimConfig:
    """One simulation run.

    ``load_schedule`` optionally replaces the constant offered load with a
    piecewise-constant one: pairs ``(start_slot, system_load)`` sorted by
    start slot, the first starting at 0.  Loads may be zero.
    """

    params: SystemParams
    mode: str = SATURATED
    system: str = REAL
    horizon_slots: int = 1_000_000
    warmup_slots: int | None = None
    seed: int = 0
    replication_index: int = 0
    window_slots: int | None = None
    p_c: float | None = None
    load_schedule: tuple[tuple[int, float], ...] | None = None
    record_trace: bool = False

    def __post_init__(self):
        if self.warmup_slots is None:
            object.__setattr__(self, "warmup_slots", self.horizon_slots // 10)
        if self.mode not in (OPEN_LOAD, SATURATED):
            raise ConfigError(f"mode must be {OPEN_LOAD!r} or {SATURATED!r}, got {self.mode!r}")
        if self.system not in (REAL, PROXY):
            raise ConfigError(f"system must be {REAL!r} or {PROXY!r}, got {self.system!r}")
        if not isinstance(self.horizon_slots, (int, np.integer)) or self.horizon_slots < 1:
            raise ConfigError(f"horizon must be a positive integer, got {self.horizon_slots!r}")
        if not 0 <= self.warmup_slots < self.horizon_slots:
            raise ConfigError(f"warmup {self.warmup_slots} must lie in [0, horizon)")
        if not 0 <= int(self.seed) < 2**64:
            raise ConfigError("seed must be a 64-bit unsigned integer")
        if self.replication_index < 0:
            raise ConfigError("replication index must be >= 0")
        if self.window_slots is not None and self.window_slots < 1:
            raise ConfigError("window must be a positive number of slots")
        if self.system == PROXY:
            if self.p_c is None or not 0.0 <= self.p_c < 1.0:
                raise ConfigError(f"proxy system needs p_c in [0, 1), got {self.p_c}")
        if self.params.asymptotic and (self.system == REAL or self.mode == OPEN_LOAD):
            raise ConfigError("simulation needs a finite node count")
        if self.mode == OPEN_LOAD:
            if self.load_schedule is None and self.params.s_offered is None:
                raise ConfigError("open-load mode needs an offered load")
            if self.load_schedule is not None:
                sched = tuple((int(t), float(s)) for t, s in self.load_schedule)
                if not sched or sched[0][0] != 0:
                    raise ConfigError("load schedule must start at slot 0")
                if any(b[0] <= a[0] for a, b in zip(sched, sched[1:])):
                    raise ConfigError("load schedule start slots must increase")
                if any(not (s >= 0 and math.isfinite(s)) for _, s in sched):
                    raise ConfigError("scheduled loads must be finite and >= 0")
                object.__setattr__(self, "load_schedule", sched)

    @property
    def n_nodes(self) -> int:
        return 1 if self.system == PROXY else int(self.params.n)

    def schedule_arrays(self, per_node: bool) -> tuple[np.ndarray, np.ndarray]:
        if self.mode == SATURATED:
            return np.zeros(1, np.int64), np.zeros(1)
        sched = self.load_schedule or ((0, self.params.s_offered),)
        starts = np.array([t for t, _ in sched], dtype=np.int64)
        rates = np.array([s for _, s in sched], dtype=np.float64)
        if per_node:
            rates = rates / int(self.params.n)
        return starts, rates


@dataclass
class SimStats:
    """Measurements over the post-warmup window of one run."""

    config: SimConfig
    slots_measured: int
    total_attempts: int
    total_collisions: int
    total_departures: int
    total_arrivals: int
    backlog_start: int
    backlog_end: int
    empty_arrivals: int
    per_node_departures: np.ndarray
    service_samples: np.ndarray
    service_nodes: np.ndarray
    delay_samples: np.ndarray
    window_counts: np.ndarray | None = None
    trace: dict[str, np.ndarray] | None = field(default=None, repr=False)

    @property
    def measured_G(self) -> float:
        return self.total_attempts / self.slots_measured

    @property
    def measured_S(self) -> float:
        return self.total_departures / self.slots_measured

    @property
    def measured_pc(self) -> float:
        return self.total_collisions / self.total_attempts if self.total_attempts else 0.0

    def node_service_samples(self, node: int) -> np.ndarray:
        return self.service_samples[self.service_nodes == node]

    def mean_delay(self) -> float:
        return float(self.delay_samples.mean()) if self.delay_samples.size else math.nan

    def summary(self) -> dict[str, float | int]:
        return {
            "slots_measured": self.slots_measured,
            "total_attempts": self.total_attempts,
            "total_collisions": self.total_collisions,
            "total_departures": self.total_departures,
            "total_arrivals": self.total_arrivals,
            "measured_g": self.measured_G,
            "measured_s": self.measured_S,
            "measured_pc": self.measured_pc,
            "mean_service": float(self.service_samples.mean()) if self.service_samples.size else math.nan,
            "mean_delay": self.mean_delay(),
        }


# --------------------------------------------------------------------------
# compiled per-slot rules (shared by the run kernels and step_slot)


@numba.njit(cache=True)
def _tx_prob(stage, ptable, inv_r0, r):
    if stage < ptable.shape[0]:
        return ptable[stage]
    return inv_r0 * r ** (-stage)


@numba.njit(cache=True)
def _enqueue(node, time, t, head, tail, qlen, stage, elig, pkt_arrival, pkt_next, n_pkts):
    """Append a packet arriving at ``time`` (inside slot ``t``); returns its pool index."""
    p = n_pkts
    pkt_arrival[p] = time
    pkt_next[p] = -1
    if qlen[node] == 0:
        head[node] = p
        stage[node] = 0
        elig[node] = t + 1
    else:
        pkt_next[tail[node]] = p
    tail[node] = p
    qlen[node] += 1
    return p


@numba.njit(cache=True)
def _contend(t, u, saturated, head, qlen, stage, elig, pkt_next, ptable, inv_r0, r, tx):
    """Transmission decisions and outcome of slot ``t``.

    ``u[i]`` is node i's uniform draw.  Transmitters are written to ``tx``.
    Returns ``(n_tx, departing_packet, service_slots, final_stage)``; the
    packet index is -1 unless the slot was a success (or saturated mode).
    """
    n = u.shape[0]
    k = 0
    for i in range(n):
        if (saturated or qlen[i] > 0) and elig[i] <= t:
            if u[i] < _tx_prob(stage[i], ptable, inv_r0, r):
                tx[k] = i
                k += 1
    pkt = -1
    service = 0
    final_stage = 0
    if k == 1:
        i = tx[0]
        service = t - elig[i] + 1
        final_stage = stage[i]
        stage[i] = 0
        elig[i] = t + 1
        if not saturated:
            pkt = head[i]
            head[i] = pkt_next[pkt]
            qlen[i] -= 1
    elif k >= 2:
        for j in range(k):
            stage[tx[j]] += 1
    return k, pkt, service, final_stage


@numba.njit(cache=True)
def _grow_f(a):
    b = np.empty(a.shape[0] * 2, a.dtype)
    b[: a.shape[0]] = a
    return b


@numba.njit(cache=True)
def _grow_i(a):
    b = np.empty(a.shape[0] * 2, a.dtype)
    b[: a.shape[0]] = a
    return b


@numba.njit(cache=True)
def _real_kernel(rng, n, r0, r, saturated, sched_start, sched_rate, horizon, warmup,
                 window, record, pool_cap, out_cap):
    inv_r0 = 1.0 / r0
    ptable = np.empty(_PTABLE)
    for s in range(_PTABLE):
        ptable[s] = inv_r0 * r ** (-s)

    head = np.full(n, -1, np.int64)
    tail = np.full(n, -1, np.int64)
    qlen = np.zeros(n, np.int64)
    stage = np.zeros(n, np.int64)
    elig = np.zeros(n, np.int64)
    pkt_arrival = np.empty(pool_cap)
    pkt_next = np.empty(pool_cap, np.int64)
    n_pkts = 0
    u = np.empty(n)
    tx = np.empty(n, np.int64)

    svc = np.empty(out_cap, np.int64)
    svc_node = np.empty(out_cap, np.int64)
    dly = np.empty(out_cap if not saturated else 1)
    tr_arr = np.empty(out_cap if record else 1)
    tr_stage = np.empty(out_cap if record else 1, np.int64)
    n_out = 0
    n_dly = 0

    per_node = np.zeros(n, np.int64)
    n_windows = 0
    if window > 0:
        n_windows = (horizon - warmup + window - 1) // window
    wcounts = np.zeros((n, max(n_windows, 1)), np.int64)

    attempts = 0
    collisions = 0
    departures = 0
    arrivals = 0
    empty_arrivals = 0
    backlog_start = 0

    n_sched = sched_start.shape[0]
    si = 0
    rate = sched_rate[0]
    next_arr = np.inf
    if not saturated and rate > 0:
        next_arr = rng.exponential(1.0 / rate)

    for t in range(horizon):
        measuring = t >= warmup
        if t == warmup and not saturated:
            for i in range(n):
                backlog_start += qlen[i]
        if not saturated:
            if si + 1 < n_sched and sched_start[si + 1] == t:
                si += 1
                rate = sched_rate[si]
                next_arr = t + rng.exponential(1.0 / rate) if rate > 0 else np.inf
            while next_arr < t + 1.0:
                node = rng.integers(0, n)
                if n_pkts == pkt_arrival.shape[0]:
                    pkt_arrival = _grow_f(pkt_arrival)
                    pkt_next = _grow_i(pkt_next)
                if measuring:
                    arrivals += 1
                    if qlen[node] == 0:
                        empty_arrivals += 1
                _enqueue(node, next_arr, t, head, tail, qlen, stage, elig, pkt_arrival, pkt_next, n_pkts)
                n_pkts += 1
                next_arr += rng.exponential(1.0 / rate)
        for i in range(n):
            u[i] = rng.random()
        k, pkt, service, fstage = _contend(t, u, saturated, head, qlen, stage, elig, pkt_next,
                                           ptable, inv_r0, r, tx)
        if not measuring or k == 0:
            continue
        attempts += k
        if k >= 2:
            collisions += k
            continue
        i = tx[0]
        departures += 1
        per_node[i] += 1
        if window > 0:
            wcounts[i, (t - warmup) // window] += 1
        if n_out == svc.shape[0]:
            svc = _grow_i(svc)
            svc_node = _grow_i(svc_node)
            if not saturated:
                dly = _grow_f(dly)
            if record:
                tr_arr = _grow_f(tr_arr)
                tr_stage = _grow_i(tr_stage)
        svc[n_out] = service
        svc_node[n_out] = i
        if saturated:
            arr_time = float(t - service + 1)
        else:
            arr_time = pkt_arrival[pkt]
            dly[n_dly] = t + 1.0 - arr_time
            n_dly += 1
        if record:
            tr_arr[n_out] = arr_time
            tr_stage[n_out] = fstage
        n_out += 1

    backlog_end = 0
    if not saturated:
        for i in range(n):
            backlog_end += qlen[i]
    return (attempts, collisions, departures, arrivals, empty_arrivals, backlog_start, backlog_end,
            per_node, svc[:n_out].copy(), svc_node[:n_out].copy(), dly[:n_dly].copy(),
            wcounts[:, :n_windows].copy(), tr_arr[:n_out].copy(), tr_stage[:n_out].copy())


@numba.njit(cache=True)
def _proxy_kernel(rng, r0, r, p_c, saturated, sched_start, sched_rate, horizon, warmup,
                  window, record, pool_cap, out_cap):
    """Single queue whose attempts collide independently with probability ``p_c``."""
    inv_r0 = 1.0 / r0
    ptable = np.empty(_PTABLE)
    for s in range(_PTABLE):
        ptable[s] = inv_r0 * r ** (-s)
    head = np.full(1, -1, np.int64)
    tail = np.full(1, -1, np.int64)
    qlen = np.zeros(1, np.int64)
    stage = np.zeros(1, np.int64)
    elig = np.zeros(1, np.int64)
    pkt_arrival = np.empty(pool_cap)
    pkt_next = np.empty(pool_cap, np.int64)
    n_pkts = 0

    svc = np.empty(out_cap, np.int64)
    dly = np.empty(out_cap if not saturated else 1)
    tr_arr = np.empty(out_cap if record else 1)
    tr_stage = np.empty(out_cap if record else 1, np.int64)
    n_out = 0
    n_dly = 0
    n_windows = 0
    if window > 0:
        n_windows = (horizon - warmup + window - 1) // window
    wcounts = np.zeros((1, max(n_windows, 1)), np.int64)

    attempts = 0
    collisions = 0
    departures = 0
    arrivals = 0
    empty_arrivals = 0
    backlog_start = 0

    n_sched = sched_start.shape[0]
    si = 0
    rate = sched_rate[0]
    next_arr = np.inf
    if not saturated and rate > 0:
        next_arr = rng.exponential(1.0 / rate)

    for t in range(horizon):
        measuring = t >= warmup
        if t == warmup:
            backlog_start = qlen[0]
        if not saturated:
            if si + 1 < n_sched and sched_start[si + 1] == t:
                si += 1
                rate = sched_rate[si]
                next_arr = t + rng.exponential(1.0 / rate) if rate > 0 else np.inf
            while next_arr < t + 1.0:
                if n_pkts == pkt_arrival.shape[0]:
                    pkt_arrival = _grow_f(pkt_arrival)
                    pkt_next = _grow_i(pkt_next)
                if measuring:
                    arrivals += 1
                    if qlen[0] == 0:
                        empty_arrivals += 1
                _enqueue(0, next_arr, t, head, tail, qlen, stage, elig, pkt_arrival, pkt_next, n_pkts)
                n_pkts += 1
                next_arr += rng.exponential(1.0 / rate)
        if not (saturated or qlen[0] > 0) or elig[0] > t:
            continue
        if rng.random() >= _tx_prob(stage[0], ptable, inv_r0, r):
            continue
        if rng.random() < p_c:
            stage[0] += 1
            if measuring:
                attempts += 1
                collisions += 1
            continue
        service = t - elig[0] + 1
        fstage = stage[0]
        stage[0] = 0
        elig[0] = t + 1
        pkt = -1
        if not saturated:
            pkt = head[0]
            head[0] = pkt_next[pkt]
            qlen[0] -= 1
        if not measuring:
            continue
        attempts += 1
        departures += 1
        if window > 0:
            wcounts[0, (t - warmup) // window] += 1
        if n_out == svc.shape[0]:
            svc = _grow_i(svc)
            if not saturated:
                dly = _grow_f(dly)
            if record:
                tr_arr = _grow_f(tr_arr)
                tr_stage = _grow_i(tr_stage)
        svc[n_out] = service
        if saturated:
            arr_time = float(t - service + 1)
        else:
            arr_time = pkt_arrival[pkt]
            dly[n_dly] = t + 1.0 - arr_time
            n_dly += 1
        if record:
            tr_arr[n_out] = arr_time
            tr_stage[n_out] = fstage
        n_out += 1

    per_node = np.full(1, departures, np.int64)
    return (attempts, collisions, departures, arrivals, empty_arrivals, backlog_start, qlen[0],
            per_node, svc[:n_out].copy(), np.zeros(n_out, np.int64), dly[:n_dly].copy(),
            wcounts[:, :n_windows].copy(), tr_arr[:n_out].copy(), tr_stage[:n_out].copy())


# --------------------------------------------------------------------------
# public runners


def _capacities(config: SimConfig, starts: np.ndarray, rates: np.ndarray) -> tuple[int, int]:
    h = config.horizon_slots
    if config.mode == SATURATED:
        expected = h * (0.4 if config.system == REAL else 1.0)
        return 16, int(expected) + 1024
    n = config.n_nodes
    ends = np.append(starts[1:], h)
    expected = float(np.sum((ends - starts) * rates)) * (n if config.system == REAL else 1)
    cap = int(expected + 6 * math.sqrt(expected + 1)) + 1024
    return cap, cap


def _assemble(config: SimConfig, out) -> SimStats:
    (attempts, collisions, departures, arrivals, empty_arrivals, backlog_start, backlog_end,
     per_node, svc, svc_node, dly, wcounts, tr_arr, tr_stage) = out
    trace = None
    if config.record_trace:
        # saturated "arrival" is the slot the packet became HOL
        departure = tr_arr + svc if config.mode == SATURATED else tr_arr + dly
        trace = {"node_id": svc_node, "arrival_time": tr_arr, "departure_time": departure,
                 "service_slots": svc, "final_stage": tr_stage}
    return SimStats(
        config=config,
        slots_measured=config.horizon_slots - config.warmup_slots,
        total_attempts=int(attempts),
        total_collisions=int(collisions),
        total_departures=int(departures),
        total_arrivals=int(arrivals),
        backlog_start=int(backlog_start),
        backlog_end=int(backlog_end),
        empty_arrivals=int(empty_arrivals),
        per_node_departures=per_node,
        service_samples=svc,
        service_nodes=svc_node,
        delay_samples=dly,
        window_counts=wcounts if config.window_slots else None,
        trace=trace,
    )


def run_real(config: SimConfig) -> SimStats:
    """Simulate the full N-node system."""
    if config.system != REAL:
        raise ConfigError("run_real needs system='real'")
    starts, rates = config.schedule_arrays(per_node=False)
    pool_cap, out_cap = _capacities(config, starts, rates)
    out = _real_kernel(stream(config.seed, config.replication_index), config.n_nodes,
                       float(config.params.r0), float(config.params.r), config.mode == SATURATED,
                       starts, rates, int(config.horizon_slots), int(config.warmup_slots),
                       int(config.window_slots or 0), bool(config.record_trace), pool_cap, out_cap)
    return _assemble(config, out)


def run_proxy(config: SimConfig) -> SimStats:
    """Simulate one queue with a fixed, state-independent collision probability."""
    if config.system != PROXY:
        raise ConfigError("run_proxy needs system='proxy'")
    starts, rates = config.schedule_arrays(per_node=True)
    pool_cap, out_cap = _capacities(config, starts, rates)
    out = _proxy_kernel(stream(config.seed, config.replication_index), float(config.params.r0),
                        float(config.params.r), float(config.p_c), config.mode == SATURATED,
                        starts, rates, int(config.horizon_slots), int(config.warmup_slots),
                        int(config.window_slots or 0), bool(config.record_trace), pool_cap, out_cap)
    return _assemble(config, out)


def run(config: SimConfig) -> SimStats:
    return run_real(config) if config.system == REAL else run_proxy(config)


def replicate(config: SimConfig, m: int, workers: int = 1) -> list[SimStats]:
    """``m`` independent runs with replication indices ``0..m-1``.

    Results are ordered by replication index whatever the execution order.
    """
    if m < 1:
        raise ConfigError(f"replication count must be >= 1, got {m}")
    configs = [replace(config, replication_index=j) for j in range(m)]
    if workers <= 1 or m == 1:
        return [run(c) for c in configs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(run, configs))


# --------------------------------------------------------------------------
# single-slot stepping


@dataclass
class SlotState:
    """Complete state of the real system between slots."""

    params: SystemParams
    saturated: bool = False
    t: int = 0
    head: np.ndarray = None
    tail: np.ndarray = None
    qlen: np.ndarray = None
    stage: np.ndarray = None
    elig: np.ndarray = None
    pkt_arrival: np.ndarray = None
    pkt_next: np.ndarray = None
    n_pkts: int = 0

    def __post_init__(self):
        n = int(self.params.n)
        if self.head is None:
            self.head = np.full(n, -1, np.int64)
            self.tail = np.full(n, -1, np.int64)
            self.qlen = np.zeros(n, np.int64)
            self.stage = np.zeros(n, np.int64)
            self.elig = np.zeros(n, np.int64)
            self.pkt_arrival = np.empty(64)
            self.pkt_next = np.empty(64, np.int64)

    @property
    def n(self) -> int:
        return self.head.shape[0]

    def add_packet(self, node: int, time: float) -> int:
        """Queue a packet arriving at ``time`` during slot ``floor(time)``."""
        if self.n_pkts == self.pkt_arrival.shape[0]:
            self.pkt_arrival = _grow_f(self.pkt_arrival)
            self.pkt_next = _grow_i(self.pkt_next)
        p = _enqueue(node, float(time), int(math.floor(time)), self.head, self.tail, self.qlen,
                     self.stage, self.elig, self.pkt_arrival, self.pkt_next, self.n_pkts)
        self.n_pkts += 1
        return p

    def attempt_prob(self, node: int) -> float:
        return 1.0 / (self.params.r0 * self.params.r ** int(self.stage[node]))

    def queue(self, node: int) -> list[float]:
        out, p = [], self.head[node]
        for _ in range(self.qlen[node]):
            out.append(float(self.pkt_arrival[p]))
            p = self.pkt_next[p]
        return out


@dataclass(frozen=True)
class SlotEvents:
    slot: int
    arrivals: tuple[tuple[int, float], ...]
    transmitters: tuple[int, ...]
    outcome: str
    departure: dict | None


def step_slot(state: SlotState, rng: np.random.Generator | None = None, draws=None,
              arrivals=()) -> SlotEvents:
    """Advance ``state`` by one slot using the same rules as :func:`run_real`.

    ``arrivals`` is a sequence of ``(node, time)`` pairs inside the current
    slot; ``draws`` optionally fixes each node's uniform transmission draw.
    """
    t = state.t
    for node, time in arrivals:
        if not t <= time < t + 1:
            raise ValueError(f"arrival time {time} is outside slot {t}")
        state.add_packet(node, time)
    if draws is None:
        if rng is None:
            raise ValueError("need an rng or explicit draws")
        u = rng.random(state.n)
    else:
        u = np.asarray(draws, dtype=np.float64)
    p = state.params
    inv_r0 = 1.0 / p.r0
    ptable = inv_r0 * float(p.r) ** -np.arange(_PTABLE, dtype=np.float64)
    tx = np.empty(state.n, np.int64)
    k, pkt, service, fstage = _contend(t, u, state.saturated, state.head, state.qlen, state.stage,
                                       state.elig, state.pkt_next, ptable, inv_r0, float(p.r), tx)
    departure = None
    if k == 1:
        node = int(tx[0])
        departure = {"node_id": node, "departure_time": float(t + 1), "service_slots": int(service),
                     "final_stage": int(fstage),
                     "arrival_time": float(state.pkt_arrival[pkt]) if pkt >= 0 else float(t - service + 1)}
    outcome = IDLE if k == 0 else SUCCESS if k == 1 else COLLISION
    state.t = t + 1
    return SlotEvents(slot=t, arrivals=tuple((int(a), float(b)) for a, b in arrivals),
                      transmitters=tuple(int(i) for i in tx[:k]), outcome=outcome, departure=departure)
