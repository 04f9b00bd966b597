"""Seeded multi-round experiments, presets, per-round CSV logs and reports."""

from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .protocol import ProtocolState, World, run_round
from .topology import PROTOCOLS, SimConfig, build_topology, make_dataset, timing_params
from .trainer import Arch, TrainingDiverged, evaluate, init_params
from .utils import substream

J_PER_WH = 3600.0

ROUND_COLUMNS = ("protocol", "t", "r", "C_r", "U_r", "X_r", "S_r", "q_r", "theta_hat",
                 "EDC_r", "round_length", "cum_energy_wh", "global_loss", "global_metric")

SUMMARY_COLUMNS = ("preset", "protocol", "C", "dr_mean", "runs", "failed",
                   "best_metric", "best_metric_std", "round_length", "round_length_std",
                   "rounds_to_target", "rounds_to_target_std", "total_time", "total_time_std",
                   "energy_wh", "energy_wh_std", "reached")

PRESETS = {
    # two regions of different reliability; only the selection loop matters here
    "fig2": dict(n=20, m=2, region_sizes=(11, 9), reliability_means=(0.43, 0.57),
                 reliability_std=0.15, C=0.3, t_max=100, tau=5, eta=0.01, hidden=(8,),
                 dataset_size=400, data_mean=20.0, data_std=5.0),
    "task1": dict(n=15, m=3, C=0.3, dr_mean=0.3, t_max=600, tau=5, eta=0.1,
                  hidden=(16, 16), dataset_size=1503, data_mean=100.0, data_std=30.0),
    "task2-small": dict(n=50, m=3, pop_mean=50 / 3, pop_std=5.0, C=0.3, dr_mean=0.3,
                        t_max=200, tau=5, eta=0.1, hidden=(32,), dataset="digits",
                        partition="label-skew", label_affinity=0.75,
                        speed_mean=1.0, speed_std=0.3, bw_mean=1.0, bw_std=0.3,
                        msize_mb=10.0, BPS=6272.0, CPB=400.0),
    "task2": dict(n=500, m=10, pop_mean=50.0, pop_std=15.0, C=0.3, dr_mean=0.3,
                  t_max=400, tau=5, eta=0.1, hidden=(64,), dataset="digits",
                  partition="label-skew", label_affinity=0.75,
                  speed_mean=1.0, speed_std=0.3, bw_mean=1.0, bw_std=0.3,
                  msize_mb=10.0, BPS=6272.0, CPB=400.0),
}


def preset_config(name, **overrides) -> SimConfig:
    if name not in PRESETS:
        raise KeyError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    return SimConfig(**{**PRESETS[name], **overrides})


@dataclass(frozen=True)
class ExperimentSpec:
    config: SimConfig
    stop_rounds: Optional[int] = None  # defaults to config.t_max
    stop_metric: Optional[float] = None
    repeats: int = 1
    out_dir: Optional[Path] = None
    preset: str = ""

    def __post_init__(self):
        if self.stop_rounds is not None and self.stop_metric is not None:
            raise ValueError("give either a round budget or a target metric, not both")
        if self.repeats < 1:
            raise ValueError("repeats must be at least 1")
        if self.stop_rounds is not None and self.stop_rounds < 0:
            raise ValueError("stop_rounds must be nonnegative")

    @property
    def max_rounds(self):
        return self.config.t_max if self.stop_rounds is None else self.stop_rounds


@dataclass
class RunTrace:
    """Per-round global statistics of one run (index 0 is round 1)."""

    loss0: float
    metric0: float
    loss: list = field(default_factory=list)
    metric: list = field(default_factory=list)
    round_length: list = field(default_factory=list)
    energy_wh: list = field(default_factory=list)  # mean per device, this round

    def rounds_to(self, *, metric=None, loss=None):
        """First round whose global model reaches the target, or ``None``."""
        if (metric is None) == (loss is None):
            raise ValueError("give exactly one of metric or loss")
        vals = np.asarray(self.metric if loss is None else self.loss)
        hit = vals >= metric if loss is None else vals <= loss
        idx = np.flatnonzero(hit)
        return int(idx[0]) + 1 if idx.size else None

    def cost_to(self, rounds):
        """Simulated seconds and mean device Wh spent in the first ``rounds`` rounds."""
        return float(sum(self.round_length[:rounds])), float(sum(self.energy_wh[:rounds]))


@dataclass
class RunSummary:
    protocol: str
    seed: int
    rounds_run: int
    best_metric: float
    final_loss: float
    mean_round_length: float
    rounds_to_target: Optional[int]
    total_time: float
    energy_wh: float
    failed: bool = False
    targeted: bool = False
    csv_path: Optional[Path] = None
    trace: Optional[RunTrace] = field(default=None, repr=False)


def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, float) and math.isnan(x):
        return ""
    return repr(float(x))


def _model_arch(config: SimConfig, dataset) -> Arch:
    out = dataset.n_classes if dataset.task == "classification" else 1
    return Arch((dataset.d, *config.hidden, out))


def build_world(config: SimConfig, dataset=None) -> World:
    topo = build_topology(config, dataset)
    return World(config, topo, timing_params(config, topo))


def simulate(world: World, protocol, rounds, stop_metric=None, sink=None):
    """Run one protocol on ``world``; returns the trace and whether training diverged.

    Every protocol starts from the same initial model. ``sink`` receives
    one list of CSV cells per (round, region).
    """
    cfg, topo = world.config, world.topology
    data = topo.dataset
    w0 = init_params(_model_arch(cfg, data), substream(cfg.seed, "init"))
    state = ProtocolState.initial(world, w0)
    ev = evaluate(w0, data)
    trace = RunTrace(ev.loss, ev.metric)
    cum = 0.0
    for t in range(1, rounds + 1):
        try:
            out = run_round(protocol, world, state, t)
        except TrainingDiverged:
            return trace, True
        ev = evaluate(out.global_model, data)
        e_wh = float(out.energy.sum()) / topo.n / J_PER_WH
        cum += e_wh
        trace.loss.append(ev.loss)
        trace.metric.append(ev.metric)
        trace.round_length.append(out.round_length)
        trace.energy_wh.append(e_wh)
        if sink is not None:
            for st in out.regions:
                sink([protocol, t, st.region, st.C_r, len(st.U), len(st.X), len(st.S), st.q_r,
                      st.theta_hat, st.edc, out.round_length, cum, ev.loss, ev.metric])
        if stop_metric is not None and ev.metric >= stop_metric:
            break
    return trace, False


def summarize(protocol, seed, trace: RunTrace, failed, *, target_metric=None, target_loss=None):
    rounds = len(trace.loss)
    best = max([trace.metric0, *trace.metric])
    if target_metric is None and target_loss is None:
        hit = None
        time, wh = trace.cost_to(rounds)
    else:
        hit = trace.rounds_to(metric=target_metric, loss=target_loss)
        time, wh = trace.cost_to(hit if hit is not None else rounds)
    return RunSummary(
        protocol=protocol, seed=seed, rounds_run=rounds, best_metric=float(best),
        final_loss=float(trace.loss[-1] if trace.loss else trace.loss0),
        mean_round_length=float(np.mean(trace.round_length)) if rounds else 0.0,
        rounds_to_target=hit, total_time=time, energy_wh=wh, failed=failed,
        targeted=not (target_metric is None and target_loss is None), trace=trace)


def _write_rows(path, rows):
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(ROUND_COLUMNS)
        for row in rows:
            out.writerow([row[0], *(_fmt(x) for x in row[1:])])


def run_experiment(spec: ExperimentSpec, protocol=None, dataset=None):
    """Run ``spec.repeats`` seeds (``seed``, ``seed + 1``, ...) of one protocol."""
    protocol = protocol or spec.config.protocol
    if protocol not in PROTOCOLS:
        raise ValueError(f"unknown protocol {protocol!r}")
    if dataset is None:
        dataset = make_dataset(spec.config)
    summaries = []
    for i in range(spec.repeats):
        cfg = spec.config.replace(seed=spec.config.seed + i, protocol=protocol)
        rows = []
        trace, failed = simulate(build_world(cfg, dataset), protocol, spec.max_rounds,
                                 spec.stop_metric, rows.append)
        s = summarize(protocol, cfg.seed, trace, failed, target_metric=spec.stop_metric)
        if spec.out_dir is not None:
            Path(spec.out_dir).mkdir(parents=True, exist_ok=True)
            s.csv_path = Path(spec.out_dir) / f"rounds_{spec.preset or 'custom'}_{protocol}_seed{cfg.seed}.csv"
            _write_rows(s.csv_path, rows)
        summaries.append(s)
    return summaries


def compare_protocols(spec: ExperimentSpec, protocols=PROTOCOLS, dataset=None, n_workers=1):
    """Every protocol on the same worlds; ``{protocol: [RunSummary per seed]}``.

    With a round budget (no metric target) each run is also scored against
    the loss FedAvg reaches at the end of its budget, when FedAvg is part of
    the comparison.
    """
    protocols = list(protocols)
    if len(protocols) < 2:
        raise ValueError("compare at least two protocols")
    if dataset is None:
        dataset = make_dataset(spec.config)
    if n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            runs = list(pool.map(lambda p: run_experiment(spec, p, dataset), protocols))
    else:
        runs = [run_experiment(spec, p, dataset) for p in protocols]
    result = dict(zip(protocols, runs))
    if spec.stop_metric is None and "fedavg" in result:
        for i, ref in enumerate(result["fedavg"]):
            target = ref.final_loss
            for p in protocols:
                old = result[p][i]
                new = summarize(p, old.seed, old.trace, old.failed, target_loss=target)
                new.csv_path = old.csv_path
                result[p][i] = new
    return result


def _mean_std(values):
    vals = [v for v in values if v is not None]
    if not vals:
        return float("nan"), float("nan")
    return float(np.mean(vals)), float(np.std(vals))


def summary_rows(results, preset="", config: SimConfig = None):
    """One report row per protocol: mean and std over the runs.

    Time and energy are averaged over the runs that reached the target when
    there is one, over all completed runs otherwise.
    """
    rows = []
    for protocol, runs in results.items():
        ok = [r for r in runs if not r.failed]
        reached = [r for r in ok if r.rounds_to_target is not None]
        to_target = reached if any(r.targeted for r in ok) else ok
        row = [preset, protocol,
               config.C if config else float("nan"), config.dr_mean if config else float("nan"),
               len(runs), len(runs) - len(ok)]
        row.extend(_mean_std(r.best_metric for r in ok))
        row.extend(_mean_std(r.mean_round_length for r in ok))
        row.extend(_mean_std(r.rounds_to_target for r in reached))
        row.extend(_mean_std(r.total_time for r in to_target))
        row.extend(_mean_std(r.energy_wh for r in to_target))
        row.append(len(reached))
        rows.append(row)
    return rows


def emit_report(rows, out_dir, stem="summary"):
    """Write ``<stem>.csv`` and ``<stem>.txt``; returns both paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path, txt_path = out_dir / f"{stem}.csv", out_dir / f"{stem}.txt"
    with open(csv_path, "w", newline="") as fh:
        out = csv.writer(fh, lineterminator="\n")
        out.writerow(SUMMARY_COLUMNS)
        for row in rows:
            out.writerow([row[0], row[1], *(_fmt(x) for x in row[2:])])
    txt_path.write_text(format_report(rows))
    return csv_path, txt_path


def format_report(rows):
    buf = io.StringIO()
    head = (f"{'preset':<12} {'protocol':<9} {'C':>4} {'E[dr]':>5} {'best metric':>17} "
            f"{'round length (s)':>19} {'rounds to target':>17} {'total time (s)':>21} "
            f"{'energy (Wh)':>19} {'reached':>7}")
    buf.write(head + "\n" + "-" * len(head) + "\n")

    def pm(mean, std, width, prec):
        if math.isnan(mean):
            return f"{'n/a':>{width}}"
        return f"{f'{mean:.{prec}f} +- {std:.{prec}f}':>{width}}"

    for row in rows:
        preset, protocol, C, dr, runs, failed = row[:6]
        (bm, bs, rl, rls, rt, rts, tt, tts, en, ens), reached = row[6:16], row[16]
        buf.write(f"{preset:<12} {protocol:<9} {C:>4.2f} {dr:>5.2f} {pm(bm, bs, 17, 4)} "
                  f"{pm(rl, rls, 19, 2)} {pm(rt, rts, 17, 1)} {pm(tt, tts, 21, 1)} "
                  f"{pm(en, ens, 19, 4)} {f'{reached}/{runs - failed}':>7}\n")
    return buf.getvalue()
