"""Metrics files: per-(round, client) rows, per-round rows, summary, plot data."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from lightpfl.bound import convergence_bound
from lightpfl.errors import InputError
from lightpfl.protocol import RunHistory

CLIENT_FILE = "clients.csv"
ROUND_FILE = "rounds.csv"
SUMMARY_FILE = "summary.json"
LOSS_PLOT_DATA = "loss_vs_latency.csv"
ACC_PLOT_DATA = "accuracy_vs_latency.csv"
TOA_TARGETS = (0.5, 0.6, 0.7, 0.8, 0.9)

CLIENT_COLUMNS = ["round", "client", "gamma", "k", "r", "l", "bits", "exact_bits", "tau_comm",
                  "tau_comp", "tau_all", "E_comm", "E_comp", "E_all", "flops", "train_loss",
                  "test_acc", "grad_sq", "pruning_penalty"]
ROUND_COLUMNS = ["round", "weighted_loss", "weighted_acc", "latency", "cum_latency", "bits",
                 "cum_bits", "flops", "cum_flops", "energy", "cum_energy", "sparsification_penalty", "plan_source",
                 "solver_iterations", "solver_converged", "objective", "max_violation"]


def _fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def client_rows(history: RunHistory):
    for rec in history.records:
        for c in rec.clients:
            cost = c.cost
            yield [rec.round, c.client, c.gamma, c.k, c.r, c.l, c.bits, c.exact_bits, cost.tau_comm,
                   cost.tau_comp, cost.tau_all, cost.E_comm, cost.E_comp, cost.E_all, cost.flops,
                   c.train_loss, c.test_acc, c.grad_sq, c.pruning_penalty]


def round_rows(history: RunHistory):
    cum = np.zeros(4)
    for rec in history.records:
        bits = sum(c.bits for c in rec.clients)
        flops = sum(c.cost.flops for c in rec.clients)
        energy = sum(c.cost.E_all for c in rec.clients)
        cum += [rec.latency, bits, flops, energy]
        yield [rec.round, rec.weighted_loss, rec.weighted_acc, rec.latency, cum[0], bits, cum[1],
               flops, cum[2], energy, cum[3], rec.sparsification_penalty, rec.plan_source, rec.solver_iterations,
               rec.solver_converged, rec.objective, rec.max_violation]


def _write_csv(path: Path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


@dataclass
class Trace:
    """Per-round aggregates recomputed from the per-client rows."""

    rounds: np.ndarray
    acc: np.ndarray
    loss: np.ndarray
    cum_latency: np.ndarray
    cum_bits: np.ndarray
    cum_flops: np.ndarray
    cum_energy: np.ndarray


def trace_from_client_file(path) -> Trace:
    path = Path(path)
    if path.is_dir():
        path = path / CLIENT_FILE
    if not path.is_file():
        raise InputError(f"metrics file not found: {path}")
    agg: dict[int, list] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            t = int(row["round"])
            a = agg.setdefault(t, [0.0, 0.0, 0.0, 0.0, 0.0, 0.0])
            g = float(row["gamma"])
            a[0] += g * float(row["test_acc"])
            a[1] += g * float(row["train_loss"])
            a[2] = max(a[2], float(row["tau_all"]))
            a[3] += float(row["bits"])
            a[4] += float(row["flops"])
            a[5] += float(row["E_all"])
    ts = sorted(agg)
    arr = np.array([agg[t] for t in ts]).reshape(len(ts), 6)
    return Trace(np.array(ts), arr[:, 0], arr[:, 1], np.cumsum(arr[:, 2]), np.cumsum(arr[:, 3]),
                 np.cumsum(arr[:, 4]), np.cumsum(arr[:, 5]))


def time_to_accuracy(trace: Trace, target: float) -> dict | None:
    """First round whose weighted accuracy reaches ``target``; None if never."""
    hits = np.flatnonzero(trace.acc >= target)
    if hits.size == 0:
        return None
    i = int(hits[0])
    return {"round": int(trace.rounds[i]), "latency": float(trace.cum_latency[i]),
            "bits": float(trace.cum_bits[i]), "flops": float(trace.cum_flops[i]),
            "energy": float(trace.cum_energy[i])}


def summarize(history: RunHistory) -> dict:
    rows = list(round_rows(history))
    last = rows[-1]
    c = history.constants
    out = {
        "mode": history.mode,
        "rounds": history.T,
        "clients": int(history.gamma.size),
        "d": history.spec.d,
        "d_base": history.spec.d_base,
        "gamma": [float(g) for g in history.gamma],
        "constants": {k: float(v) for k, v in c.to_dict().items()},
        "total_latency": float(last[4]),
        "total_bits": float(last[6]),
        "total_flops": float(last[8]),
        "total_energy": float(last[10]),
        "final_weighted_acc": float(last[2]),
        "final_weighted_loss": float(last[1]),
        "fallback_rounds": sum(1 for r in history.records if r.plan_source == "fallback"),
        "mean_grad_sq": history.mean_grad_sq(),
    }
    if history.T > 0 and c.step_condition_holds:
        rs, ks = history.rate_history()
        out["bound_rhs"] = convergence_bound(rs, ks, history.gamma, c, history.initial_losses)
    else:
        out["bound_rhs"] = None
    out["assumption_breaches"] = history.monitor.diagnose()
    tr = _trace_from_history(history)
    out["toa"] = {f"{x:g}": time_to_accuracy(tr, x) for x in TOA_TARGETS}
    return out


def _trace_from_history(history: RunHistory) -> Trace:
    rows = np.array([[r[0], r[2], r[1], r[4], r[6], r[8], r[10]] for r in round_rows(history)])
    return Trace(rows[:, 0].astype(int), rows[:, 1], rows[:, 2], rows[:, 3], rows[:, 4], rows[:, 5],
                 rows[:, 6])


def write_metrics(history: RunHistory, out_dir, *, figures: bool = True) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    _write_csv(out / CLIENT_FILE, CLIENT_COLUMNS, client_rows(history))
    rounds = list(round_rows(history))
    _write_csv(out / ROUND_FILE, ROUND_COLUMNS, rounds)
    _write_csv(out / LOSS_PLOT_DATA, ["cum_latency", "weighted_loss"], [[r[4], r[1]] for r in rounds])
    _write_csv(out / ACC_PLOT_DATA, ["cum_latency", "weighted_acc"], [[r[4], r[2]] for r in rounds])
    summary = summarize(history)
    (out / SUMMARY_FILE).write_text(json.dumps(_clean(summary), indent=2, sort_keys=True) + "\n",
                                    encoding="utf-8")
    if figures:
        from lightpfl.harness.plotting import plot_run

        plot_run(rounds, out, title=history.mode)
    return summary


def _clean(obj):
    if isinstance(obj, dict):
        return {k: _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def compare_runs(paths, target: float) -> list[dict]:
    """Time-to-accuracy rows recomputed from each run's per-client file."""
    table = []
    for p in paths:
        tr = trace_from_client_file(p)
        hit = time_to_accuracy(tr, target)
        table.append({"run": str(p), "target": target, "reached": hit is not None,
                      **(hit or {"round": None, "latency": None, "bits": None, "flops": None,
                                 "energy": None})})
    return table


def format_compare(table) -> str:
    cols = ["run", "target", "round", "latency", "bits", "flops", "energy"]
    lines = [",".join(cols)]
    for row in table:
        if not row["reached"]:
            lines.append(f"{row['run']},{row['target']:g},not reached,,,,")
        else:
            lines.append(",".join([row["run"], f"{row['target']:g}", str(row["round"])]
                                  + [repr(float(row[c])) for c in cols[3:]]))
    return "\n".join(lines) + "\n"
