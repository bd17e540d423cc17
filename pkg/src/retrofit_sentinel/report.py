"""Plot-data emission and figure rendering for simulation traces.

Given labeled traces, writes gnuplot-ready long-format CSV files plus PNG
renderings of the residual and voltage views. Customer voltages are not
stored in traces; they are reconstructed exactly from the recorded states
and the feeder parameters, epoch by epoch so disconnections are honored.
"""

from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .netsys import InterconnectedNetwork
from .distflow import (FeederSpec, build_feeder, customer_voltage_map,
                       line_only_block, reference_vector)
from .simkit import TraceLog

NOMINAL_VOLTAGE = 230.0


def _series_rows(label: str, trace: TraceLog):
    """(label, t, series, value) rows for every finite sample."""
    for kind in ("x", "y", "yhat", "eps"):
        store = getattr(trace, kind)
        if store is None:
            continue
        for i in sorted(store):
            arr = store[i]
            for j in range(arr.shape[1]):
                name = f"{kind}[{i + 1}][{j + 1}]"
                for t, v in zip(trace.t, arr[:, j]):
                    if np.isfinite(v):
                        yield label, t, name, v
    if trace.rho is not None:
        for ci, i in enumerate(trace.subsystems):
            name = f"rho[{i + 1}]"
            for t, v in zip(trace.t, trace.rho[:, ci]):
                if np.isfinite(v):
                    yield label, t, name, v


def voltage_series(trace: TraceLog, spec: FeederSpec,
                   disconnect_mode: str = "subsystem") -> np.ndarray:
    """Customer voltages (K, n) reconstructed from a feeder trace.

    Replays the trace's disconnection events to rebuild the network each
    epoch; entries are NaN where a customer has left the feeder.
    """
    if not set(trace.subsystems) <= set(range(spec.n)):
        raise ValueError("column mismatch: trace subsystems do not fit the "
                         f"{spec.n}-customer feeder")
    subs0, topo, _ = build_feeder(spec)
    blocks = list(subs0)
    active = set(trace.subsystems)
    events = sorted(trace.disconnections)
    bounds = [0] + [trace.row_at(t_ev) for t_ev, _ in events] + [len(trace.t)]
    out = np.full((len(trace.t), spec.n), np.nan)
    for e in range(len(bounds) - 1):
        if e > 0:
            _, removed = events[e - 1]
            if disconnect_mode == "subsystem":
                active -= set(removed)
            else:
                for i in removed:
                    blocks[i] = line_only_block(spec, i)
        lo, hi = bounds[e], bounds[e + 1]
        if lo >= hi or not active:
            continue
        net = InterconnectedNetwork(tuple(blocks), topo, frozenset(active))
        t_x, t_r, order = customer_voltage_map(spec, net)
        r = np.concatenate([reference_vector(spec, k) for k in order])
        state_cols = [i for i in order if blocks[i].n_x > 0]
        if state_cols:
            x = np.column_stack([trace.x[i][lo:hi] for i in state_cols])
        else:
            x = np.zeros((hi - lo, 0))
        finite = np.all(np.isfinite(x), axis=1)
        v2 = x @ t_x.T + (t_r @ r)[None, :]
        for col, k in enumerate(order):
            out[lo:hi, k] = np.where(finite, np.sqrt(np.maximum(v2[:, col], 0.0)),
                                     np.nan)
    return out


def render_report(runs, out_dir, name: str, threshold: float | None = None,
                  feeder: FeederSpec | None = None,
                  disconnect_mode: str = "subsystem") -> list:
    """Write plot data and figures for labeled traces; returns the paths.

    Always emits <name>-series.csv and <name>-events.csv. Adds a residual
    file/figure when any trace carries normalized residuals and a voltage
    file/figure when a feeder spec is supplied.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []

    series_path = out_dir / f"{name}-series.csv"
    with open(series_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "t", "series", "value"])
        for label, trace in runs:
            for row in _series_rows(label, trace):
                writer.writerow([row[0], repr(float(row[1])), row[2],
                                 repr(float(row[3]))])
    written.append(series_path)

    events_path = out_dir / f"{name}-events.csv"
    with open(events_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "t", "event"])
        for label, trace in runs:
            for t_ev, token in trace.events:
                writer.writerow([label, repr(float(t_ev)), token])
    written.append(events_path)

    with_rho = [(label, tr) for label, tr in runs
                if tr.rho is not None and np.any(np.isfinite(tr.rho))]
    if with_rho:
        rho_path = out_dir / f"{name}-residuals.csv"
        with open(rho_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            header = ["label", "t", "subsystem", "rho"]
            if threshold is not None:
                header.append("threshold")
            writer.writerow(header)
            for label, trace in with_rho:
                for ci, i in enumerate(trace.subsystems):
                    for t, v in zip(trace.t, trace.rho[:, ci]):
                        if np.isfinite(v):
                            row = [label, repr(float(t)), i + 1, repr(float(v))]
                            if threshold is not None:
                                row.append(repr(float(threshold)))
                            writer.writerow(row)
        written.append(rho_path)

        fig, ax = plt.subplots(figsize=(8, 4.5))
        for label, trace in with_rho:
            for ci, i in enumerate(trace.subsystems):
                col = trace.rho[:, ci]
                if np.any(np.isfinite(col)):
                    ax.plot(trace.t, col, label=f"{label} rho[{i + 1}]",
                            linewidth=1.0)
        if threshold is not None:
            ax.axhline(threshold, color="black", linestyle="--", linewidth=1.0,
                       label="threshold")
        ax.set_xlabel("t")
        ax.set_ylabel("normalized residual")
        ax.legend(fontsize=7, ncol=2)
        fig.tight_layout()
        png = out_dir / f"{name}-residuals.png"
        fig.savefig(png, dpi=150)
        plt.close(fig)
        written.append(png)

    if feeder is not None:
        volt_path = out_dir / f"{name}-voltages.csv"
        volts = {label: voltage_series(trace, feeder, disconnect_mode)
                 for label, trace in runs}
        with open(volt_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["label", "t", "customer", "voltage"])
            for label, trace in runs:
                v = volts[label]
                for k in range(feeder.n):
                    for t, val in zip(trace.t, v[:, k]):
                        if np.isfinite(val):
                            writer.writerow([label, repr(float(t)), k + 1,
                                             repr(float(val))])
        written.append(volt_path)

        fig, ax = plt.subplots(figsize=(8, 4.5))
        for label, trace in runs:
            v = volts[label]
            for k in range(feeder.n):
                if np.any(np.isfinite(v[:, k])):
                    ax.plot(trace.t, v[:, k], label=f"{label} v[{k + 1}]",
                            linewidth=1.0)
        ax.axhline(NOMINAL_VOLTAGE, color="black", linestyle=":",
                   linewidth=1.0, label="nominal")
        ax.set_xlabel("t")
        ax.set_ylabel("customer voltage (V)")
        ax.legend(fontsize=7, ncol=2)
        fig.tight_layout()
        png = out_dir / f"{name}-voltages.png"
        fig.savefig(png, dpi=150)
        plt.close(fig)
        written.append(png)

    return written
