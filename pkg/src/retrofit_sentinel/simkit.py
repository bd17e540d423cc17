"""Deterministic simulation of plant and detector with timed events.

The engine integrates the coupled plant/detector ODE with fixed-step RK4.
Disconnection events land on grid points; at each one the closed
realizations are reassembled for the reduced topology and surviving states
carry over unchanged. Runs are bit-stable for a fixed seed.

Reference-fabrication attacks feed the plant r + dr while detectors keep
the true r; the other attack ports enter the plant realization as extra
input columns. Residuals are normalized by per-subsystem DC gains of the
hypothesized attack-to-residual channel so a unit step attack drives the
attacked subsystem's normalized residual toward 1.
"""

from __future__ import annotations

import csv
import json
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .lti import COND_LIMIT, StateSpace, dc_gain
from .netsys import (AttackChannel, InterconnectedNetwork,
                     close_interconnection, load_network, port_dimension)
from .detector import (NaiveObserver, RetrofitDetector, build_naive_observer,
                       build_retrofit_detector, canonical_variant,
                       load_detector)

DEFAULT_STEP = 1e-3
DEFAULT_HORIZON = 10.0
DEFAULT_THRESHOLD = 0.95
DIVERGENCE_LIMIT = 1e12
NORMALIZATION_MODES = ("divide", "multiply")
DISCONNECT_MODES = ("subsystem", "dg-only")


@dataclass(frozen=True)
class StepAttack:
    """Step signal a(t) = amplitude * direction * 1{t >= onset}.

    Instances are callable and serve directly as AttackChannel signals,
    which keeps scenario files round-trippable.
    """

    target: int
    amplitude: float
    onset: float
    direction: np.ndarray = None
    port: str = "reference-fabrication"

    def __post_init__(self):
        d = np.asarray([1.0] if self.direction is None else self.direction,
                       dtype=float).ravel()
        object.__setattr__(self, "direction", d)

    def __call__(self, t: float) -> np.ndarray:
        return self.amplitude * self.direction if t >= self.onset \
            else np.zeros_like(self.direction)

    def channel(self) -> AttackChannel:
        return AttackChannel(target=self.target, port=self.port, signal=self,
                             direction=self.direction)


@dataclass
class Scenario:
    """Everything one simulation run needs.

    references maps subsystem index to a constant vector or callable t ->
    vector (missing entries mean zero). disconnections lists (time,
    removed-set) pairs; with auto_disconnect the detector's threshold
    crossings schedule additional removals one grid step later. gamma
    overrides the computed residual normalization.
    """

    network: InterconnectedNetwork
    detector: NaiveObserver | RetrofitDetector | None = None
    references: dict = field(default_factory=dict)
    attacks: tuple = ()
    disconnections: tuple = ()
    auto_disconnect: bool = False
    threshold: float = DEFAULT_THRESHOLD
    horizon: float = DEFAULT_HORIZON
    step: float = DEFAULT_STEP
    seed: int | None = None
    initial_error_scale: float = 0.0
    initial_state: np.ndarray | None = None
    normalization_mode: str = "divide"
    a_ref: float = 1.0
    gamma: np.ndarray | None = None
    disconnect_mode: str = "subsystem"
    dg_replacements: dict = field(default_factory=dict)
    detect_latency_steps: int = 1

    def __post_init__(self):
        if self.step <= 0:
            raise ValueError("step size must be positive")
        if self.horizon < 0:
            raise ValueError("horizon must be nonnegative")
        if not 0 < self.threshold <= 1:
            raise ValueError("threshold must lie in (0, 1]")
        if self.normalization_mode not in NORMALIZATION_MODES:
            raise ValueError(f"normalization mode must be one of {NORMALIZATION_MODES}")
        if self.disconnect_mode not in DISCONNECT_MODES:
            raise ValueError(f"disconnect mode must be one of {DISCONNECT_MODES}")
        if self.normalization_mode == "divide" and self.a_ref == 0:
            raise ValueError("a_ref must be nonzero in divide mode")
        self.attacks = tuple(a.channel() if isinstance(a, StepAttack) else a
                             for a in self.attacks)
        self.disconnections = tuple(
            (float(t), frozenset(int(i) for i in rem))
            for t, rem in self.disconnections)
        for _, rem in self.disconnections:
            if not rem <= self.network.active:
                raise ValueError(f"disconnection set {sorted(rem)} is not "
                                 "contained in the active set")


@dataclass
class TraceLog:
    """Sampled trajectories plus event markers for one run.

    Per-subsystem arrays are keyed by original subsystem index and padded
    with NaN after the subsystem leaves the simulation (or after a
    divergence truncation). Event tokens use 1-based subsystem ids.
    """

    t: np.ndarray
    subsystems: tuple
    x: dict
    y: dict
    yhat: dict | None
    eps: dict | None
    rho: np.ndarray | None
    events: list
    detections: dict
    disconnections: list
    diverged: bool = False
    divergence_time: float | None = None

    def eps_norm(self, row: int) -> float:
        """Euclidean norm of the stacked residual at one sample row."""
        if self.eps is None:
            raise ValueError("trace has no residuals")
        vals = np.concatenate([self.eps[i][row] for i in self.subsystems])
        return float(np.linalg.norm(vals[np.isfinite(vals)]))

    def row_at(self, t: float) -> int:
        step = self.t[1] - self.t[0] if len(self.t) > 1 else 1.0
        k = int(round(t / step))
        if not 0 <= k < len(self.t):
            raise ValueError(f"time {t} outside the trace grid")
        return k

    def _columns(self):
        cols = [("t", None, None)]
        for kind in ("x", "y", "yhat", "eps"):
            store = getattr(self, kind)
            for i in self.subsystems:
                width = 0
                if store is not None and i in store:
                    width = store[i].shape[1]
                elif kind in ("yhat", "eps"):
                    width = self.y[i].shape[1]
                for j in range(width):
                    cols.append((f"{kind}[{i + 1}][{j + 1}]", kind, (i, j)))
        for ci, i in enumerate(self.subsystems):
            cols.append((f"rho[{i + 1}]", "rho", ci))
        cols.append(("events", None, None))
        return cols

    def write_csv(self, path) -> None:
        """One row per sample: t, x[i][j], y[i][j], yhat[i][j], eps[i][j], rho[i], events."""
        cols = self._columns()
        by_row = {}
        for t_ev, token in self.events:
            k = int(round(t_ev / (self.t[1] - self.t[0]))) if len(self.t) > 1 else 0
            by_row.setdefault(k, []).append(token)

        def fmt(v):
            return "" if v is None or not np.isfinite(v) else repr(float(v))

        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([c[0] for c in cols])
            for k, t in enumerate(self.t):
                row = [repr(float(t))]
                for name, kind, key in cols[1:-1]:
                    if kind == "rho":
                        v = None if self.rho is None else self.rho[k, key]
                    else:
                        store = getattr(self, kind)
                        i, j = key
                        v = None if store is None or i not in store \
                            else store[i][k, j]
                    row.append(fmt(v))
                row.append(" ".join(by_row.get(k, [])))
                writer.writerow(row)

    def write_long(self, path, threshold: float | None = None) -> None:
        """Long-format plot data: one (t, series, value) row per finite sample."""
        cols = self._columns()[1:-1]
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            header = ["t", "series", "value"]
            if threshold is not None:
                header.append("threshold")
            writer.writerow(header)
            for name, kind, key in cols:
                if kind == "rho":
                    series = None if self.rho is None else self.rho[:, key]
                else:
                    store = getattr(self, kind)
                    if store is None or key[0] not in store:
                        series = None
                    else:
                        series = store[key[0]][:, key[1]]
                if series is None:
                    continue
                for t, v in zip(self.t, series):
                    if np.isfinite(v):
                        row = [repr(float(t)), name, repr(float(v))]
                        if threshold is not None:
                            row.append(repr(float(threshold)))
                        writer.writerow(row)

    @classmethod
    def read_csv(cls, path) -> "TraceLog":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = list(reader)
        t = np.array([float(r[0]) for r in rows])
        pat = re.compile(r"(x|y|yhat|eps)\[(\d+)\]\[(\d+)\]|rho\[(\d+)\]")
        layout = {}
        rho_cols = {}
        for ci, name in enumerate(header):
            m = pat.fullmatch(name)
            if not m:
                continue
            if m.group(4):
                rho_cols[int(m.group(4)) - 1] = ci
            else:
                kind, i, j = m.group(1), int(m.group(2)) - 1, int(m.group(3)) - 1
                layout.setdefault(kind, {}).setdefault(i, {})[j] = ci

        def parse(v):
            return float(v) if v else float("nan")

        subsystems = tuple(sorted(layout.get("x", layout.get("y", {})).keys()
                                  | set(rho_cols)))
        stores = {}
        for kind in ("x", "y", "yhat", "eps"):
            store = {}
            for i, jmap in layout.get(kind, {}).items():
                arr = np.full((len(rows), len(jmap)), np.nan)
                for j, ci in jmap.items():
                    arr[:, j] = [parse(r[ci]) for r in rows]
                store[i] = arr
            stores[kind] = store or None
        rho = None
        if rho_cols:
            rho = np.full((len(rows), len(subsystems)), np.nan)
            for ci_out, i in enumerate(subsystems):
                if i in rho_cols:
                    rho[:, ci_out] = [parse(r[rho_cols[i]]) for r in rows]
        events = []
        detections = {}
        disconnections = []
        diverged = False
        divergence_time = None
        ev_col = header.index("events")
        for k, r in enumerate(rows):
            for token in r[ev_col].split():
                events.append((t[k], token))
                if token.startswith("detect:"):
                    detections[int(token.split(":")[1]) - 1] = t[k]
                elif token.startswith("disconnect:"):
                    ids = tuple(int(s) - 1 for s in token.split(":")[1].split("+"))
                    disconnections.append((t[k], ids))
                elif token == "divergence":
                    diverged = True
                    divergence_time = t[k]
        return cls(t=t, subsystems=subsystems, x=stores["x"] or {},
                   y=stores["y"] or {}, yhat=stores["yhat"], eps=stores["eps"],
                   rho=rho, events=events, detections=detections,
                   disconnections=disconnections, diverged=diverged,
                   divergence_time=divergence_time)


class _Epoch:
    """Closed realizations plus signal wiring for one topology interval."""

    def __init__(self, blocks, topology, active, variant, gains, references,
                 attacks):
        self.active = tuple(sorted(active))
        block_list = list(blocks)
        plant_net = InterconnectedNetwork(tuple(block_list), topology,
                                          frozenset(active))
        self.plant = close_interconnection(plant_net)
        self.ny = sum(block_list[i].n_y for i in self.active)
        self.nr = sum(block_list[i].n_r for i in self.active)
        self.nxp = self.plant.n_states
        self.variant = variant
        self.det = None
        if variant is not None:
            if variant == "retrofit":
                dnet = build_retrofit_detector(block_list, topology, gains,
                                               frozenset(active)).network
            else:
                dnet = build_naive_observer(block_list, topology, gains,
                                            frozenset(active)).network
            self.det = close_interconnection(dnet)
            y_cols, r_cols = [], []
            for i in self.active:
                sl = self.det.r_slices[i]
                n_y = block_list[i].n_y
                y_cols.extend(range(sl.start, sl.start + n_y))
                r_cols.extend(range(sl.start + n_y, sl.stop))
            self.det_y_cols = np.array(y_cols, dtype=int)
            self.det_r_cols = np.array(r_cols, dtype=int)
        # per-subsystem reference signals, each a callable t -> vector
        self.refs = {}
        for i in self.active:
            n_r = block_list[i].n_r
            ref = references.get(i)
            if ref is None:
                self.refs[i] = (lambda n: (lambda t: np.zeros(n)))(n_r)
            elif callable(ref):
                self.refs[i] = ref
            else:
                vec = np.asarray(ref, dtype=float).ravel()
                if vec.size != n_r:
                    raise ValueError(f"reference for subsystem {i + 1} has "
                                     f"size {vec.size}, expected {n_r}")
                self.refs[i] = (lambda v: (lambda t: v))(vec)
        self.attacks = [ch for ch in attacks if ch.target in set(self.active)]
        for ch in self.attacks:
            want = port_dimension(block_list[ch.target], ch.port)
            got = np.asarray(ch.signal(0.0), dtype=float).ravel().size
            if got != want:
                raise ValueError(f"attack signal at subsystem {ch.target + 1} "
                                 f"port {ch.port!r} has size {got}, expected {want}")

    def inputs_at(self, t: float):
        """(plant input vector, true stacked reference) at time t."""
        u = np.zeros(self.plant.n_inputs)
        r_true = np.zeros(self.nr)
        for i in self.active:
            sl = self.plant.r_slices[i]
            r_true[sl] = self.refs[i](t)
        u[:self.nr] = r_true
        for ch in self.attacks:
            sig = np.asarray(ch.signal(t), dtype=float).ravel()
            if ch.port == "reference-fabrication":
                u[self.plant.r_slices[ch.target]] += sig
            elif ch.port == "state":
                u[self.plant.ax_slices[ch.target]] += sig
            elif ch.port == "interconnection-output":
                u[self.plant.aw_slices[ch.target]] += sig
            else:
                u[self.plant.ay_slices[ch.target]] += sig
        return u, r_true

    def det_input(self, y: np.ndarray, r_true: np.ndarray) -> np.ndarray:
        u = np.zeros(self.det.n_inputs)
        u[self.det_y_cols] = y
        u[self.det_r_cols] = r_true
        return u

    def outputs(self, t: float, z: np.ndarray):
        """(y, yhat, eps) stacked over active subsystems at time t."""
        u, r_true = self.inputs_at(t)
        xp = z[:self.nxp]
        y = self.plant.c[:self.ny] @ xp + self.plant.d[:self.ny] @ u
        if self.det is None:
            return y, None, None
        ud = self.det_input(y, r_true)
        xd = z[self.nxp:]
        yhat = self.det.c[:self.ny] @ xd + self.det.d[:self.ny] @ ud
        return y, yhat, y - yhat

    def derivative(self, t: float, z: np.ndarray) -> np.ndarray:
        u, r_true = self.inputs_at(t)
        xp = z[:self.nxp]
        dxp = self.plant.a @ xp + self.plant.b @ u
        if self.det is None:
            return dxp
        y = self.plant.c[:self.ny] @ xp + self.plant.d[:self.ny] @ u
        ud = self.det_input(y, r_true)
        xd = z[self.nxp:]
        dxd = self.det.a @ xd + self.det.b @ ud
        return np.concatenate([dxp, dxd])

    @property
    def n_states(self) -> int:
        return self.nxp + (self.det.n_states if self.det is not None else 0)


def _rk4_step(f, t, z, h):
    k1 = f(t, z)
    k2 = f(t + h / 2, z + (h / 2) * k1)
    k3 = f(t + h / 2, z + (h / 2) * k2)
    k4 = f(t + h, z + h * k3)
    return z + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)


def _detector_parts(det):
    if det is None:
        return None, None
    variant = canonical_variant(det.variant)
    return variant, list(det.gains)


def compute_normalization(network: InterconnectedNetwork, detector,
                          port: str = "reference-fabrication",
                          directions: dict | None = None) -> np.ndarray:
    """Per-subsystem residual normalization gains, aligned with active order.

    gamma_i is the Euclidean norm of the DC gain from a unit attack at
    subsystem i (on the given port, along the given direction) to that
    subsystem's own residual. A numerically zero DC channel is an error;
    subsystems without that port get the neutral gain 1.
    """
    variant, gains = _detector_parts(detector)
    if variant is None:
        raise ValueError("normalization requires a detector")
    epoch = _Epoch(network.subsystems, network.topology, sorted(network.active),
                   variant, gains, {}, ())
    plant, det = epoch.plant, epoch.det
    ny, nxp = epoch.ny, epoch.nxp
    cp, dp = plant.c[:ny], plant.d[:ny]
    cd = det.c[:ny]
    bdy = det.b[:, epoch.det_y_cols]
    ddy = det.d[:ny][:, epoch.det_y_cols]
    a = np.zeros((nxp + det.n_states, nxp + det.n_states))
    a[:nxp, :nxp] = plant.a
    a[nxp:, :nxp] = bdy @ cp
    a[nxp:, nxp:] = det.a
    eye_y = np.eye(ny)
    gamma = np.full(len(epoch.active), 1.0)
    slices = {"reference-fabrication": plant.r_slices, "state": plant.ax_slices,
              "interconnection-output": plant.aw_slices,
              "measurement": plant.ay_slices}[port]
    for ci, i in enumerate(epoch.active):
        sl = slices[i]
        width = sl.stop - sl.start
        if width == 0:
            continue
        direction = np.zeros(width)
        if directions and i in directions:
            direction[:] = np.asarray(directions[i], dtype=float).ravel()
        else:
            direction[0] = 1.0
        cu = np.zeros(plant.n_inputs)
        cu[sl] = direction
        dy_col = dp @ cu
        b = np.concatenate([plant.b @ cu, bdy @ dy_col]).reshape(-1, 1)
        rows = plant.y_slices[i]
        if rows.stop == rows.start:
            continue
        c = np.hstack([((eye_y - ddy) @ cp)[rows], -cd[rows]])
        d = ((eye_y - ddy) @ dy_col)[rows].reshape(-1, 1)
        g = dc_gain(StateSpace(a, b, c, d))
        val = float(np.linalg.norm(g))
        if val < 1e-12:
            raise ValueError(f"attack-to-residual DC gain at subsystem {i + 1} "
                             "is zero; normalization undefined")
        gamma[ci] = val
    return gamma


def normalize_residual(trace: TraceLog, gamma, a_ref: float = 1.0,
                       mode: str = "divide") -> np.ndarray:
    """Normalized residual series rho_i(t) = |eps_i(t)| / (gamma_i |a_ref|).

    In multiply mode the series is |a_ref| |eps_i(t)| / gamma_i instead.
    """
    if trace.eps is None:
        raise ValueError("trace has no residuals to normalize")
    gamma = np.asarray(gamma, dtype=float).ravel()
    if gamma.size != len(trace.subsystems):
        raise ValueError(f"expected {len(trace.subsystems)} gains, got {gamma.size}")
    if np.any(gamma <= 0):
        raise ValueError("normalization gains must be positive")
    if mode not in NORMALIZATION_MODES:
        raise ValueError(f"mode must be one of {NORMALIZATION_MODES}")
    if mode == "divide" and a_ref == 0:
        raise ValueError("a_ref must be nonzero in divide mode")
    scale = abs(a_ref) if mode == "multiply" else 1.0 / abs(a_ref)
    out = np.full((len(trace.t), len(trace.subsystems)), np.nan)
    for ci, i in enumerate(trace.subsystems):
        eps = trace.eps.get(i)
        if eps is None or eps.shape[1] == 0:
            continue
        out[:, ci] = np.linalg.norm(eps, axis=1) * (scale / gamma[ci])
    return out


def detect(rho: np.ndarray, threshold: float,
           times: np.ndarray | None = None) -> dict:
    """First grid index (or time) with rho strictly above the threshold.

    Returns a map column -> index/time, with None for series that never
    cross. NaN samples never trigger.
    """
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    rho = np.atleast_2d(np.asarray(rho, dtype=float))
    out = {}
    for ci in range(rho.shape[1]):
        hits = np.flatnonzero(rho[:, ci] > threshold)
        if hits.size == 0:
            out[ci] = None
        else:
            out[ci] = float(times[hits[0]]) if times is not None else int(hits[0])
    return out


def simulate(scenario: Scenario) -> TraceLog:
    """Integrate the scenario; honors scenario.auto_disconnect."""
    return _run(scenario, scenario.auto_disconnect)


def run_closed_loop(scenario: Scenario) -> TraceLog:
    """Integrate with detection-triggered disconnection forced on."""
    return _run(scenario, True)


def _run(scenario: Scenario, auto: bool) -> TraceLog:
    net = scenario.network
    h = scenario.step
    n_steps = int(round(scenario.horizon / h))
    times = np.arange(n_steps + 1) * h
    variant, gains = _detector_parts(scenario.detector)
    blocks = list(net.subsystems)
    if gains is None and variant is not None:
        raise ValueError("detector carries no gains")
    active = sorted(net.active)
    active0 = tuple(active)
    rng = np.random.default_rng(scenario.seed)

    pending = {}
    for t0, removed in scenario.disconnections:
        k0 = int(round(t0 / h))
        if 0 <= k0 <= n_steps:
            pending.setdefault(k0, set()).update(removed)

    epoch = _Epoch(blocks, net.topology, active, variant, gains,
                   scenario.references, scenario.attacks)

    # storage keyed by original index, sized by the initial blocks
    x_store = {i: np.full((n_steps + 1, blocks[i].n_x), np.nan) for i in active0}
    y_store = {i: np.full((n_steps + 1, blocks[i].n_y), np.nan) for i in active0}
    yhat_store = None if variant is None else \
        {i: np.full((n_steps + 1, blocks[i].n_y), np.nan) for i in active0}
    eps_store = None if variant is None else \
        {i: np.full((n_steps + 1, blocks[i].n_y), np.nan) for i in active0}
    rho_store = None
    gamma = None
    if variant is not None:
        if scenario.gamma is not None:
            gamma = np.asarray(scenario.gamma, dtype=float).ravel()
            if gamma.size != len(active0):
                raise ValueError(f"expected {len(active0)} normalization gains")
        elif scenario.attacks:
            ch = scenario.attacks[0]
            dirs = {ch.target: ch.direction} if ch.direction is not None else None
            gamma = compute_normalization(net, scenario.detector,
                                          port=ch.port, directions=dirs)
        else:
            gamma = np.ones(len(active0))
        rho_store = np.full((n_steps + 1, len(active0)), np.nan)
    rho_scale = abs(scenario.a_ref) if scenario.normalization_mode == "multiply" \
        else 1.0 / abs(scenario.a_ref)

    # initial state: plant at its attack-free equilibrium unless overridden
    if scenario.initial_state is not None:
        xp = np.asarray(scenario.initial_state, dtype=float).ravel()
        if xp.size != epoch.nxp:
            raise ValueError(f"initial state has size {xp.size}, "
                             f"expected {epoch.nxp}")
    else:
        u0, r0 = epoch.inputs_at(times[0])
        br = epoch.plant.b[:, :epoch.nr] @ r0
        if epoch.nxp and np.linalg.cond(epoch.plant.a) < COND_LIMIT:
            xp = -np.linalg.solve(epoch.plant.a, br)
        else:
            xp = np.zeros(epoch.nxp)
    if variant is None:
        z = xp.copy()
    else:
        det_parts = []
        for i in epoch.active:
            xi = xp[epoch.plant.x_slices[i]]
            delta = scenario.initial_error_scale * rng.standard_normal(xi.size)
            if variant == "retrofit":
                det_parts.append(np.concatenate([xi + delta, np.zeros(xi.size)]))
            else:
                det_parts.append(xi + delta)
        z = np.concatenate([xp] + det_parts) if det_parts else xp.copy()

    events = []
    detections = {}
    disconnections = []
    removed_ever = set()
    diverged = False
    divergence_time = None

    def apply_removal(k, to_remove):
        nonlocal epoch, z, blocks, gains
        live = [i for i in sorted(to_remove)
                if i in epoch.active and i not in removed_ever]
        if not live:
            return
        token = "disconnect:" + "+".join(str(i + 1) for i in live)
        events.append((float(times[k]), token))
        disconnections.append((float(times[k]), tuple(live)))
        removed_ever.update(live)
        old_plant = epoch.plant
        old_det = epoch.det
        old_xp = z[:epoch.nxp]
        old_xd = z[epoch.nxp:]
        if scenario.disconnect_mode == "subsystem":
            new_active = [i for i in epoch.active if i not in live]
        else:
            new_active = list(epoch.active)
            for i in live:
                rep = scenario.dg_replacements.get(i)
                if rep is None:
                    raise ValueError(f"dg-only disconnection of subsystem "
                                     f"{i + 1} needs a replacement block")
                blocks[i] = rep
                if gains is not None:
                    gains[i] = np.zeros((rep.n_x, rep.n_y))
        epoch = _Epoch(blocks, net.topology, new_active, variant, gains,
                       scenario.references, scenario.attacks)
        parts = []
        for i in epoch.active:
            width = epoch.plant.x_slices[i].stop - epoch.plant.x_slices[i].start
            if i in old_plant.x_slices and \
                    old_plant.x_slices[i].stop - old_plant.x_slices[i].start == width:
                parts.append(old_xp[old_plant.x_slices[i]])
            else:
                parts.append(np.zeros(width))
        new_xp = np.concatenate(parts) if parts else np.zeros(0)
        if variant is None:
            z = new_xp
            return
        dparts = []
        for i in epoch.active:
            width = epoch.det.x_slices[i].stop - epoch.det.x_slices[i].start
            if old_det is not None and i in old_det.x_slices and \
                    old_det.x_slices[i].stop - old_det.x_slices[i].start == width:
                dparts.append(old_xd[old_det.x_slices[i]])
            else:
                dparts.append(np.zeros(width))
        z = np.concatenate([new_xp] + dparts) if dparts else new_xp

    k = 0
    with np.errstate(over="ignore", invalid="ignore"):
        while k <= n_steps:
            if k in pending:
                apply_removal(k, pending.pop(k))
            t = times[k]
            y, yhat, eps = epoch.outputs(t, z)
            for i in epoch.active:
                rows = epoch.plant.y_slices[i]
                xsl = epoch.plant.x_slices[i]
                if x_store[i].shape[1] == xsl.stop - xsl.start:
                    x_store[i][k] = z[xsl]
                if y_store[i].shape[1] == rows.stop - rows.start:
                    y_store[i][k] = y[rows]
                    if yhat is not None:
                        yhat_store[i][k] = yhat[rows]
                        eps_store[i][k] = eps[rows]
            if eps is not None:
                for ci, i in enumerate(active0):
                    if i not in epoch.active:
                        continue
                    rows = epoch.plant.y_slices[i]
                    if rows.stop == rows.start:
                        continue
                    rho_store[k, ci] = np.linalg.norm(eps[rows]) * rho_scale / gamma[ci]
                    if rho_store[k, ci] > scenario.threshold and i not in detections:
                        detections[i] = float(t)
                        events.append((float(t), f"detect:{i + 1}"))
                        if auto:
                            k_off = k + max(1, int(scenario.detect_latency_steps))
                            if k_off <= n_steps:
                                pending.setdefault(k_off, set()).add(i)
            if k == n_steps:
                break
            z_next = _rk4_step(epoch.derivative, t, z, h)
            if not np.all(np.isfinite(z_next)) or \
                    (z_next.size and np.max(np.abs(z_next)) > DIVERGENCE_LIMIT):
                diverged = True
                divergence_time = float(times[k + 1])
                events.append((divergence_time, "divergence"))
                break
            z = z_next
            k += 1

    events.sort(key=lambda ev: ev[0])
    return TraceLog(t=times, subsystems=active0, x=x_store, y=y_store,
                    yhat=yhat_store, eps=eps_store, rho=rho_store,
                    events=events, detections=detections,
                    disconnections=disconnections, diverged=diverged,
                    divergence_time=divergence_time)


def save_scenario(scenario: Scenario, path, network_path,
                  detector_path=None) -> None:
    """Write a scenario file referencing already-saved network/detector files.

    Only step attacks are serializable; opaque signal callables are
    rejected.
    """
    attacks = []
    for ch in scenario.attacks:
        if not isinstance(ch.signal, StepAttack):
            raise ValueError("only StepAttack-based channels can be saved")
        sa = ch.signal
        attacks.append({"target": ch.target + 1, "port": ch.port,
                        "amplitude": sa.amplitude, "onset": sa.onset,
                        "direction": sa.direction.tolist()})
    refs = {}
    for i, ref in scenario.references.items():
        if callable(ref):
            raise ValueError("only constant references can be saved")
        refs[str(i + 1)] = np.asarray(ref, dtype=float).ravel().tolist()
    doc = {
        "network": str(network_path),
        "detector": None if detector_path is None else str(detector_path),
        "horizon": scenario.horizon, "step": scenario.step,
        "threshold": scenario.threshold, "seed": scenario.seed,
        "initial_error_scale": scenario.initial_error_scale,
        "references": refs,
        "attacks": attacks,
        "disconnections": [{"time": t, "remove": sorted(i + 1 for i in rem)}
                           for t, rem in scenario.disconnections],
        "auto_disconnect": scenario.auto_disconnect,
        "disconnect_mode": scenario.disconnect_mode,
        "normalization": {"mode": scenario.normalization_mode,
                          "a_ref": scenario.a_ref},
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_scenario(path) -> Scenario:
    """Read a scenario file; network/detector paths resolve relative to it."""
    path = Path(path)
    with open(path) as fh:
        doc = json.load(fh)
    base = path.parent
    net = load_network(base / doc["network"])
    detector = None
    if doc.get("detector"):
        detector = load_detector(base / doc["detector"], net.subsystems,
                                 net.topology, net.active)
    attacks = tuple(
        StepAttack(target=a["target"] - 1, amplitude=a["amplitude"],
                   onset=a["onset"], direction=a.get("direction"),
                   port=a.get("port", "reference-fabrication")).channel()
        for a in doc.get("attacks", ()))
    refs = {int(i) - 1: np.asarray(v, dtype=float)
            for i, v in doc.get("references", {}).items()}
    norm = doc.get("normalization", {})
    return Scenario(
        network=net, detector=detector, references=refs, attacks=attacks,
        disconnections=tuple((d["time"], frozenset(i - 1 for i in d["remove"]))
                             for d in doc.get("disconnections", ())),
        auto_disconnect=doc.get("auto_disconnect", False),
        threshold=doc.get("threshold", DEFAULT_THRESHOLD),
        horizon=doc.get("horizon", DEFAULT_HORIZON),
        step=doc.get("step", DEFAULT_STEP),
        seed=doc.get("seed"),
        initial_error_scale=doc.get("initial_error_scale", 0.0),
        normalization_mode=norm.get("mode", "divide"),
        a_ref=norm.get("a_ref", 1.0),
        disconnect_mode=doc.get("disconnect_mode", "subsystem"),
    )
