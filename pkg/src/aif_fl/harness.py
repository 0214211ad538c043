"""Seeded experiment runs and plot-ready CSV traces.

Output layout of ``run_experiment(spec, out)``::

    out/spec.json         resolved config (all defaults filled)
    out/rounds.csv        one row per (run_seed, round, client)
    out/efe.csv           per-config EFE terms for every aif client and round
    out/summary.csv       per (run_seed, client) cumulative fulfillment
    out/curve.csv         mean cumulative fulfillment per round
    out/histograms.csv    chosen configs at checkpoint rounds
    out/bn_snapshots/     one text BN per client per structure relearn
"""
from __future__ import annotations

import csv
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .agent import CONFIG_GRID, ConfigPoint
from .experiment import ExperimentSpec, write_spec
from .fedsim import Policy, RoundRecord, RunTrace, cumulative_curve, cumulative_fulfillment, find_fixed_optimal, run_simulation

ROUNDS_COLUMNS = [
    "run_seed", "round", "client_id", "policy", "batch_size", "learning_rate", "duration_s",
    "val_accuracy", "time_ok", "perf_ok", "lifelong", "expected_ig", "observed_ig", "relearned",
]
EFE_COLUMNS = ["run_seed", "round", "client_id", "batch_size", "learning_rate", "pragmatic", "info_gain", "efe"]
SUMMARY_COLUMNS = ["run_seed", "client_id", "policy", "cum_time_slo", "cum_perf_slo", "relearn_count"]
CURVE_COLUMNS = ["round", "mean_cum_time", "mean_cum_perf", "mean_cum_both", "n_clients"]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, bool):
        return str(int(x))
    if isinstance(x, float):
        return repr(x)
    return str(x)


def round_row(run_seed: int, r: RoundRecord) -> list[str]:
    return [_fmt(v) for v in (
        run_seed, r.round, r.client_id, r.policy, r.config.batch_size, r.config.learning_rate,
        float(r.duration), float(r.val_accuracy), r.time_ok, r.perf_ok, bool(r.lifelong),
        r.expected_ig, r.observed_ig, bool(r.relearned),
    )]


@dataclass
class RunSummary:
    final: dict[tuple[int, int], tuple[float | None, float | None]] = field(default_factory=dict)
    policies: dict[tuple[int, int], str] = field(default_factory=dict)
    curve: dict[int, tuple[float, float, int]] = field(default_factory=dict)
    relearn_counts: dict[tuple[int, int], int] = field(default_factory=dict)
    histograms: dict[int, Counter] = field(default_factory=dict)

    def mean_final(self, slo: str = "both") -> float:
        vals = []
        for t, p in self.final.values():
            if t is None:
                continue
            vals.append({"time": t, "perf": p, "both": (t + p) / 2}[slo])
        return float(np.mean(vals)) if vals else float("nan")


def checkpoint_rounds(spec: ExperimentSpec) -> list[int]:
    """The round before each quantity drift, plus the final round."""
    points = [start - 1 for start, _ in spec.schedule.breakpoints[1:] if 1 <= start - 1 <= spec.n_rounds]
    points.append(spec.n_rounds)
    return sorted(set(points))


def summarize(traces: Sequence[RunTrace], spec: ExperimentSpec) -> RunSummary:
    summary = RunSummary()
    curves: dict[int, list[tuple[float, float]]] = {}
    checkpoints = set(checkpoint_rounds(spec))
    summary.histograms = {r: Counter() for r in sorted(checkpoints)}
    for trace in traces:
        by_client: dict[int, list[RoundRecord]] = {}
        for r in trace.records:
            by_client.setdefault(r.client_id, []).append(r)
            if r.round in checkpoints:
                summary.histograms[r.round][(r.config.batch_size, r.config.learning_rate)] += 1
        for cid, recs in sorted(by_client.items()):
            key = (trace.run_seed, cid)
            summary.policies[key] = recs[0].policy
            summary.relearn_counts[key] = sum(int(r.relearned) for r in recs)
            if any(r.lifelong for r in recs):
                summary.final[key] = (cumulative_fulfillment(recs, "time"), cumulative_fulfillment(recs, "perf"))
            else:
                summary.final[key] = (None, None)
            ct, cp = cumulative_curve(recs, "time"), cumulative_curve(recs, "perf")
            for t in ct:
                curves.setdefault(t, []).append((ct[t], cp[t]))
    for t in sorted(curves):
        arr = np.array(curves[t])
        summary.curve[t] = (float(arr[:, 0].mean()), float(arr[:, 1].mean()), len(arr))
    return summary


def _write_csv(path: Path, header: list[str], rows: Iterable[list[str]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def write_outputs(traces: Sequence[RunTrace], spec: ExperimentSpec, out_dir) -> RunSummary:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_spec(spec, out / "spec.json")
    _write_csv(out / "rounds.csv", ROUNDS_COLUMNS, (round_row(t.run_seed, r) for t in traces for r in t.records))
    _write_csv(out / "efe.csv", EFE_COLUMNS, (
        [_fmt(v) for v in (t.run_seed, rnd, cid, b.config.batch_size, b.config.learning_rate, b.pragmatic, b.info_gain, b.efe)]
        for t in traces for rnd, cid, b in t.efe
    ))
    snap_dir = out / "bn_snapshots"
    snap_dir.mkdir(exist_ok=True)
    for t in traces:
        for rnd, cid, text in t.snapshots:
            (snap_dir / f"run{t.run_seed}_client{cid}_round{rnd:04d}.txt").write_text(text)

    summary = summarize(traces, spec)
    _write_csv(out / "summary.csv", SUMMARY_COLUMNS, (
        [_fmt(v) for v in (seed, cid, summary.policies[(seed, cid)], *summary.final[(seed, cid)], summary.relearn_counts[(seed, cid)])]
        for seed, cid in sorted(summary.final)
    ))
    _write_csv(out / "curve.csv", CURVE_COLUMNS, (
        [_fmt(v) for v in (t, ct, cp, (ct + cp) / 2, n)] for t, (ct, cp, n) in sorted(summary.curve.items())
    ))
    _write_csv(out / "histograms.csv", ["round", "batch_size", "learning_rate", "count"], (
        [_fmt(v) for v in (r, c.batch_size, c.learning_rate, summary.histograms[r][(c.batch_size, c.learning_rate)])]
        for r in sorted(summary.histograms) for c in CONFIG_GRID
    ))
    return summary


def run_traces(spec: ExperimentSpec, policies: Sequence[Policy] | None = None) -> list[RunTrace]:
    return [run_simulation(spec, seed, policies) for seed in spec.run_seeds]


def run_experiment(spec: ExperimentSpec, out_dir) -> RunSummary:
    return write_outputs(run_traces(spec), spec, out_dir)


def compare_policies(spec: ExperimentSpec, out_dir, horizon: int | None = None, fixed: ConfigPoint | None = None) -> list[dict]:
    """Run aif, random and fixed-optimal on the same seeds; write ``comparison.csv``.

    Every client of a run uses the same policy; streams depend only on the
    run seed and client id, so all three policies see identical data.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    horizon = horizon or min(50, spec.n_rounds)
    if fixed is None:
        fixed = find_fixed_optimal(spec, horizon)
    table: list[dict] = []
    for name, policy in (("aif", Policy("aif")), ("random", Policy("random")), ("fixed", Policy("fixed", fixed))):
        sub = spec.replace(policies=(policy,) * spec.n_clients)
        summary = write_outputs(run_traces(sub), sub, out / name)
        for t, (ct, cp, n) in sorted(summary.curve.items()):
            table.append({"policy": name, "round": t, "mean_cum_time": ct, "mean_cum_perf": cp, "mean_cum_both": (ct + cp) / 2, "n_clients": n})
    _write_csv(out / "comparison.csv", ["policy", *CURVE_COLUMNS], (
        [_fmt(row[k]) for k in ["policy", *CURVE_COLUMNS]] for row in table
    ))
    (out / "fixed_optimal.txt").write_text(f"{fixed.batch_size} {fixed.learning_rate}\n")
    return table
