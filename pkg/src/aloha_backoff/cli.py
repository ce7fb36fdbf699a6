"""Command-line front end.

Every command writes one primary table (CSV or JSON) to ``--out`` or to
standard output.  Commands that produce several tables write the extra ones
next to ``--out`` with a suffix on the file stem.  Diagnostics go to
standard error; the exit code carries the failure class:

    0  success
    2  invalid or missing argument
    3  offered load at or above the peak of the S-G curve
    4  solver failure
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, analytic, queueing, simulator, starvation
from .params import (
    INFINITE,
    AlohaError,
    DomainError,
    FixedPointError,
    InfeasibleLoadError,
    ModelViolationError,
    SystemParams,
    parse_node_count,
)

log = logging.getLogger("aloha_backoff")

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_INFEASIBLE = 3
EXIT_SOLVER = 4

COMMANDS = ("limits", "sweep-r", "curve", "delay-curve", "simulate", "starvation", "jump")

# command-specific defaults sit between config-file values and GLOBAL_DEFAULTS
GLOBAL_DEFAULTS = {
    "r": 2.0, "r0": 10.0, "n": "inf", "offered-load": None, "slots": 1_000_000, "warmup": None,
    "seed": 0, "reps": 1, "window": None, "format": "csv", "out": None,
    "r-min": 1.05, "r-max": 3.0, "step": 0.005, "s-min": 0.02, "s-max": 0.30, "s-step": 0.02,
    "g-max": 5.0, "points": 501, "system": "real", "mode": "saturated", "p-c": None,
    "trace": None, "samples": 100_000, "node": 0, "workers": 1,
}
COMMAND_DEFAULTS = {
    "delay-curve": {"r": 1.582, "n": "30", "reps": 3},
    "simulate": {"n": "30"},
    "starvation": {"r": 1.582, "n": "15", "reps": 5},
    "jump": {"n": "20", "r-min": 1.04, "r-max": 1.2, "step": 0.02},
}


class UsageError(Exception):
    """Bad command-line or config input; mapped to exit code 2."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


# --------------------------------------------------------------------------
# run specification


@dataclass(frozen=True)
class SimOptions:
    slots: int
    warmup: int | None
    seed: int
    reps: int
    window: int | None
    system: str
    mode: str
    p_c: float | None
    trace: str | None
    samples: int
    node: int
    workers: int = 1


@dataclass(frozen=True)
class Sweep:
    lo: float
    hi: float
    step: float

    def grid(self) -> list[float]:
        count = int(math.floor((self.hi - self.lo) / self.step + 1e-9)) + 1
        return [float(f"{self.lo + k * self.step:.12g}") for k in range(count)]


@dataclass(frozen=True)
class RunSpec:
    command: str
    params: SystemParams
    sim: SimOptions
    sweep: Sweep | None = None
    output: str | None = None
    format: str = "csv"
    g_max: float = 5.0
    points: int = 501
    raw: dict = field(default_factory=dict, compare=False)

    @property
    def seed(self) -> int:
        return self.sim.seed


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="aloha-backoff",
                     description="Slotted Aloha with exponential backoff: delay, throughput and starvation.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", metavar="PATH")
        p.add_argument("--r", type=str)
        p.add_argument("--r0", type=str)
        p.add_argument("--n", type=str, help="node count or 'inf'")
        p.add_argument("--offered-load", type=str)
        p.add_argument("--slots", type=str)
        p.add_argument("--warmup", type=str)
        p.add_argument("--seed", type=str)
        p.add_argument("--reps", type=str)
        p.add_argument("--window", type=str)
        p.add_argument("--format", type=str, choices=("csv", "json"))
        p.add_argument("--out", type=str, metavar="PATH")
        p.add_argument("--workers", type=str, help="processes for independent replications")
        p.add_argument("-v", "--verbose", action="store_true")
        if name in ("sweep-r", "jump"):
            p.add_argument("--r-min", type=str)
            p.add_argument("--r-max", type=str)
            p.add_argument("--step", type=str)
        if name == "delay-curve":
            p.add_argument("--s-min", type=str)
            p.add_argument("--s-max", type=str)
            p.add_argument("--s-step", type=str)
        if name == "curve":
            p.add_argument("--g-max", type=str)
            p.add_argument("--points", type=str)
        if name == "simulate":
            p.add_argument("--system", type=str, choices=("real", "proxy"))
            p.add_argument("--mode", type=str, choices=("saturated", "open-load"))
            p.add_argument("--p-c", type=str)
            p.add_argument("--trace", type=str, metavar="PATH")
        if name == "starvation":
            p.add_argument("--samples", type=str)
            p.add_argument("--node", type=str)
    return parser


def read_config(path: str) -> dict[str, str]:
    """Flat ``key = value`` file with ``#`` comments; keys are long flag names."""
    values = {}
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise UsageError(f"--config: cannot read {path}: {exc.strerror}") from None
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"--config: {path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.lstrip("-").replace("_", "-")
        if key not in GLOBAL_DEFAULTS:
            raise UsageError(f"--config: {path}:{lineno}: unknown key '{key}'")
        values[key] = value
    return values


def _num(values, key, kind=float, lo=None, hi=None, lo_open=False, optional=False):
    raw = values.get(key)
    if raw is None:
        if optional:
            return None
        raise UsageError(f"--{key}: required")
    try:
        x = kind(raw) if not isinstance(raw, kind) else raw
        if kind is float and not math.isfinite(x):
            raise ValueError
    except (TypeError, ValueError):
        raise UsageError(f"--{key}: invalid value {raw!r}") from None
    if lo is not None and (x <= lo if lo_open else x < lo):
        raise UsageError(f"--{key}: must be {'>' if lo_open else '>='} {lo}, got {raw}")
    if hi is not None and x > hi:
        raise UsageError(f"--{key}: must be <= {hi}, got {raw}")
    return x


def parse_run_spec(argv: list[str]) -> RunSpec:
    """Resolve flags over config-file values over defaults and validate them."""
    args = build_parser().parse_args(argv)
    flags = {k.replace("_", "-"): v for k, v in vars(args).items()
             if v is not None and k not in ("command", "config", "verbose")}
    config = read_config(args.config) if args.config else {}
    values = dict(GLOBAL_DEFAULTS)
    values.update(COMMAND_DEFAULTS.get(args.command, {}))
    values.update(config)
    values.update(flags)

    r = _num(values, "r", lo=1, lo_open=True)
    r0 = _num(values, "r0", lo=1)
    try:
        n = parse_node_count(values["n"])
    except DomainError as exc:
        raise UsageError(f"--n: {exc}") from None
    s_off = _num(values, "offered-load", lo=0, lo_open=True, optional=True)
    params = SystemParams(r0=r0, r=r, n=n, s_offered=s_off)

    slots = _num(values, "slots", int, lo=1)
    warmup = _num(values, "warmup", int, lo=0, optional=True)
    if warmup is not None and warmup >= slots:
        raise UsageError(f"--warmup: must be below --slots ({slots}), got {warmup}")
    sim = SimOptions(
        slots=slots, warmup=warmup,
        seed=_num(values, "seed", int, lo=0, hi=2**64 - 1),
        reps=_num(values, "reps", int, lo=1),
        window=_num(values, "window", int, lo=1, optional=True),
        system=values["system"], mode=values["mode"],
        p_c=_num(values, "p-c", lo=0, hi=1, optional=True),
        trace=values.get("trace"),
        samples=_num(values, "samples", int, lo=1),
        node=_num(values, "node", int, lo=0),
        workers=_num(values, "workers", int, lo=1),
    )
    if sim.system not in ("real", "proxy"):
        raise UsageError(f"--system: must be 'real' or 'proxy', got {sim.system!r}")
    if sim.mode not in ("saturated", "open-load"):
        raise UsageError(f"--mode: must be 'saturated' or 'open-load', got {sim.mode!r}")
    if sim.p_c is not None and sim.p_c >= 1:
        raise UsageError(f"--p-c: must be < 1, got {sim.p_c}")
    fmt = values["format"]
    if fmt not in ("csv", "json"):
        raise UsageError(f"--format: must be csv or json, got {fmt!r}")

    sweep = None
    if args.command in ("sweep-r", "jump"):
        sweep = Sweep(_num(values, "r-min", lo=1, lo_open=True), _num(values, "r-max", lo=1, lo_open=True),
                      _num(values, "step", lo=0, lo_open=True))
    elif args.command == "delay-curve":
        sweep = Sweep(_num(values, "s-min", lo=0, lo_open=True), _num(values, "s-max", lo=0, lo_open=True),
                      _num(values, "s-step", lo=0, lo_open=True))
    if sweep is not None and sweep.hi < sweep.lo:
        raise UsageError(f"sweep upper bound {sweep.hi} is below lower bound {sweep.lo}")

    needs_finite = args.command in ("delay-curve", "simulate", "starvation", "jump")
    if needs_finite and n is INFINITE:
        raise UsageError(f"--n: command '{args.command}' needs a finite node count")
    if args.command == "starvation" and sim.node >= n:
        raise UsageError(f"--node: must be below --n ({n}), got {sim.node}")
    if args.command == "simulate":
        if sim.mode == "open-load" and s_off is None:
            raise UsageError("--offered-load: required for open-load simulation")
        if sim.system == "proxy" and sim.p_c is None and s_off is None and sim.mode == "open-load":
            raise UsageError("--p-c: required for the proxy system")

    return RunSpec(command=args.command, params=params, sim=sim, sweep=sweep,
                   output=values.get("out"), format=fmt,
                   g_max=_num(values, "g-max", lo=0, lo_open=True),
                   points=_num(values, "points", int, lo=2),
                   raw={"flags": flags, "config": config, "verbose": args.verbose})


# --------------------------------------------------------------------------
# output


def fmt_value(x) -> str:
    if x is None:
        return ""
    if isinstance(x, queueing.Unbounded):
        return "unbounded"
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return format(float(x), ".12g")
    return str(x)


def _json_value(x):
    s = fmt_value(x)
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        return float(s) if math.isfinite(float(x)) else s
    return None if x is None else s


def _metadata(spec: RunSpec) -> dict:
    d = asdict(spec)
    d.pop("raw", None)
    d["params"]["n"] = str(spec.params.n)
    return {"tool": "aloha-backoff", "version": __version__, "seed": spec.sim.seed, "run_spec": d}


def render_table(rows: list[dict], columns: list[str], fmt: str, spec: RunSpec) -> str:
    if fmt == "json":
        records = [{c: _json_value(row.get(c)) for c in columns} for row in rows]
        return json.dumps({"metadata": _metadata(spec), "columns": columns, "records": records},
                          indent=2) + "\n"
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([fmt_value(row.get(c)) for c in columns])
    return buf.getvalue()


def _side_path(primary: str, suffix: str, fmt: str) -> Path:
    p = Path(primary)
    return p.with_name(f"{p.stem}_{suffix}{p.suffix or '.' + fmt}")


class Emitter:
    def __init__(self, spec: RunSpec, stdout):
        self.spec = spec
        self.stdout = stdout
        self.written: list[Path] = []

    def primary(self, rows, columns):
        text = render_table(rows, columns, self.spec.format, self.spec)
        if self.spec.output:
            path = Path(self.spec.output)
            path.write_text(text, encoding="utf-8")
            self.written.append(path)
        else:
            self.stdout.write(text)

    def side(self, suffix, rows, columns):
        if not self.spec.output:
            log.info("table '%s' not written (no --out)", suffix)
            return
        path = _side_path(self.spec.output, suffix, self.spec.format)
        path.write_text(render_table(rows, columns, self.spec.format, self.spec), encoding="utf-8")
        self.written.append(path)


# --------------------------------------------------------------------------
# commands


def _sim_config(spec: RunSpec, params: SystemParams, mode: str, system: str = "real", **kw):
    return simulator.SimConfig(params=params, mode=mode, system=system, horizon_slots=spec.sim.slots,
                               warmup_slots=spec.sim.warmup, seed=spec.sim.seed, **kw)


def cmd_limits(spec: RunSpec, out: Emitter):
    p = spec.params
    lim = analytic.sbmd(p)
    row = {"r0": p.r0, "r": p.r, "n": str(p.n), **asdict(lim)}
    try:
        row["critical_n"] = analytic.critical_node_count(p.r, p.r0)
    except DomainError:
        row["critical_n"] = None
    out.primary([row], ["r0", "r", "n", "s_sat", "g_sat", "p_c_sat", "s_bbmd", "g_bbmd",
                        "s_sbmd", "binding", "critical_n"])


def cmd_sweep_r(spec: RunSpec, out: Emitter):
    rows = []
    for r in spec.sweep.grid():
        lim = analytic.sbmd(SystemParams(r0=spec.params.r0, r=r, n=spec.params.n))
        rows.append({"r": r, "s_sat": lim.s_sat, "s_bbmd": lim.s_bbmd, "s_sbmd": lim.s_sbmd,
                     "binding": lim.binding})
    out.primary(rows, ["r", "s_sat", "s_bbmd", "s_sbmd", "binding"])


def cmd_curve(spec: RunSpec, out: Emitter):
    p = spec.params
    g_max = spec.g_max if p.asymptotic else min(spec.g_max, float(p.n))
    lim = analytic.sbmd(p)
    rows = [{"g": g, "s": analytic.throughput_at(g, p.n), "point": ""}
            for g in np.linspace(0.0, g_max, spec.points)]
    rows.append({"g": lim.g_sat, "s": lim.s_sat, "point": "saturation"})
    rows.append({"g": lim.g_bbmd, "s": lim.s_bbmd, "point": "bbmd"})
    rows.append({"g": 1.0, "s": analytic.peak_throughput(p.n), "point": "peak"})
    rows.sort(key=lambda row: row["g"])
    out.primary(rows, ["g", "s", "point"])


def cmd_delay_curve(spec: RunSpec, out: Emitter):
    p = spec.params
    rows = []
    for s_o in spec.sweep.grid():
        params = SystemParams(r0=p.r0, r=p.r, n=p.n, s_offered=s_o)
        est = queueing.mean_delay(params)
        reps = simulator.replicate(_sim_config(spec, params, simulator.OPEN_LOAD), spec.sim.reps,
                                  workers=spec.sim.workers)
        d = np.array([s.mean_delay() for s in reps])
        sd = float(d.std(ddof=1)) if d.size > 1 else math.nan
        log.info("S_o=%.4g analytic=%s simulated=%.6g", s_o, fmt_value(est.mean_delay), d.mean())
        rows.append({"s_o": s_o, "p_c": est.p_c, "analytic_mean_delay": est.mean_delay,
                     "sim_mean_delay": float(d.mean()), "sim_sd": sd, "sim_cv": sd / float(d.mean()),
                     "reps": len(reps), "non_saturated": est.non_saturated,
                     "service_var_bounded": est.service_var_bounded})
    out.primary(rows, ["s_o", "p_c", "analytic_mean_delay", "sim_mean_delay", "sim_sd", "sim_cv",
                       "reps", "non_saturated", "service_var_bounded"])


def cmd_simulate(spec: RunSpec, out: Emitter):
    p, o = spec.params, spec.sim
    mode = simulator.OPEN_LOAD if o.mode == "open-load" else simulator.SATURATED
    p_c = o.p_c
    if o.system == "proxy" and p_c is None:
        p_c = (queueing.mean_delay(p).p_c if mode == simulator.OPEN_LOAD
               else analytic.saturation(p).p_c)
    cfg = _sim_config(spec, p, mode, system=o.system, p_c=p_c if o.system == "proxy" else None,
                      window_slots=o.window, record_trace=o.trace is not None)
    runs = simulator.replicate(cfg, o.reps, workers=o.workers)
    columns = ["replication", "slots_measured", "total_attempts", "total_collisions",
               "total_departures", "total_arrivals", "measured_g", "measured_s", "measured_pc",
               "mean_service", "mean_delay"]
    out.primary([{"replication": s.config.replication_index, **s.summary()} for s in runs], columns)
    if o.trace:
        tr = runs[0].trace
        trace_cols = ["node_id", "arrival_time", "departure_time", "service_slots", "final_stage"]
        text = render_table([dict(zip(trace_cols, vals)) for vals in zip(*(tr[c] for c in trace_cols))],
                            trace_cols, "csv", spec)
        Path(o.trace).write_text(text, encoding="utf-8")
    if o.window:
        rows = []
        for s in runs:
            wc = starvation.window_counts_from_stats(s)
            for node in range(wc.counts.shape[0]):
                rows.append({"replication": s.config.replication_index, "node_id": node,
                             "departures": int(wc.totals[node]),
                             "max_zero_streak": int(wc.max_zero_streak[node])})
        out.side("windows", rows, ["replication", "node_id", "departures", "max_zero_streak"])


def _log_points(n: int, per_decade: int = 40) -> np.ndarray:
    pts = np.unique(np.round(np.logspace(0, math.log10(n), per_decade * max(1, int(math.log10(n)) + 1))))
    return pts.astype(np.int64)


def cmd_starvation(spec: RunSpec, out: Emitter):
    p, o = spec.params, spec.sim
    verdict, traces = starvation.empirical_verdict(p, n_p=o.samples, m=o.reps, seed=o.seed)
    finals = [t.final for t in traces]
    out.primary([{
        "r0": p.r0, "r": p.r, "n": str(p.n), "analytic_non_starved": verdict.analytic_non_starved,
        "e_y": verdict.e_y, "critical_n": verdict.critical_n, "reps": len(traces),
        "samples": min(len(t.values) for t in traces), "mean_of_finals": float(np.mean(finals)),
        "spread": verdict.empirical_spread, "flag": verdict.empirical_flag,
    }], ["r0", "r", "n", "analytic_non_starved", "e_y", "critical_n", "reps", "samples",
         "mean_of_finals", "spread", "flag"])
    rows = []
    for t in traces:
        for k in _log_points(len(t.values)):
            rows.append({"replication": t.replication_id, "n_p": int(k), "running_mean": t.values[k - 1]})
    out.side("trace", rows, ["replication", "n_p", "running_mean"])
    if o.window:
        stats = simulator.run_real(_sim_config(spec, p, simulator.SATURATED, window_slots=o.window))
        wc = starvation.window_counts_from_stats(stats)
        out.side("windows", [{"node_id": i, "window_index": w, "departures": int(c)}
                             for i in range(wc.counts.shape[0]) for w, c in enumerate(wc.counts[i])],
                 ["node_id", "window_index", "departures"])
        out.side("streaks", [{"node_id": i, "departures": int(wc.totals[i]),
                              "max_zero_streak": int(wc.max_zero_streak[i])}
                             for i in range(wc.counts.shape[0])],
                 ["node_id", "departures", "max_zero_streak"])


def cmd_jump(spec: RunSpec, out: Emitter):
    p = spec.params
    rows = []
    for r in spec.sweep.grid():
        params = SystemParams(r0=p.r0, r=r, n=p.n)
        sat = analytic.saturation(params)
        s_o = 0.9 * sat.s
        left = analytic.solve_operating_point(s_o, p.n)
        st_sat = simulator.run_real(_sim_config(spec, params, simulator.SATURATED))
        st_open = simulator.run_real(_sim_config(spec, SystemParams(p.r0, r, p.n, s_o), simulator.OPEN_LOAD))
        rows.append({"r": r, "regime": "saturated", "offered_load": None, "measured_g": st_sat.measured_G,
                     "measured_s": st_sat.measured_S, "analytic_g": sat.g, "analytic_s": sat.s})
        rows.append({"r": r, "regime": "open-load", "offered_load": s_o, "measured_g": st_open.measured_G,
                     "measured_s": st_open.measured_S, "analytic_g": left.g, "analytic_s": s_o})
        log.info("r=%g saturated G=%.4f open-load G=%.4f", r, st_sat.measured_G, st_open.measured_G)
    out.primary(rows, ["r", "regime", "offered_load", "measured_g", "measured_s", "analytic_g", "analytic_s"])


HANDLERS = {
    "limits": cmd_limits, "sweep-r": cmd_sweep_r, "curve": cmd_curve, "delay-curve": cmd_delay_curve,
    "simulate": cmd_simulate, "starvation": cmd_starvation, "jump": cmd_jump,
}


def execute(spec: RunSpec, stdout=None, stderr=None) -> int:
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        HANDLERS[spec.command](spec, Emitter(spec, stdout))
    except InfeasibleLoadError as exc:
        print(f"aloha-backoff: infeasible load: {exc}", file=stderr)
        return EXIT_INFEASIBLE
    except (FixedPointError, ModelViolationError) as exc:
        print(f"aloha-backoff: solver failure: {exc}", file=stderr)
        return EXIT_SOLVER
    except (DomainError, AlohaError) as exc:
        print(f"aloha-backoff: error: {exc}", file=stderr)
        return EXIT_USAGE
    return EXIT_OK


def main(argv: list[str] | None = None, stdout=None, stderr=None) -> int:
    stderr = stderr or sys.stderr
    argv = sys.argv[1:] if argv is None else argv
    try:
        spec = parse_run_spec(argv)
    except UsageError as exc:
        print(f"aloha-backoff: error: {exc}", file=stderr)
        return EXIT_USAGE
    except DomainError as exc:
        print(f"aloha-backoff: error: {exc}", file=stderr)
        return EXIT_USAGE
    if spec.raw.get("verbose"):
        logging.basicConfig(level=logging.INFO, stream=stderr, format="%(message)s")
    return execute(spec, stdout, stderr)


if __name__ == "__main__":
    sys.exit(main())
