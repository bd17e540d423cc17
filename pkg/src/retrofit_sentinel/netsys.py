"""Interconnected subsystem networks: closure, disconnection, resilience.

A network couples subsystem blocks through v_i = sum_j M_ij w_j. Closing the
interconnection eliminates the algebraic loop w = W x + Z v + U r + a_w and
yields one StateSpace whose inputs are the stacked references followed by the
three attack ports, and whose outputs are the stacked measurements followed
by the interconnection outputs. Disconnection forces w_j = 0 for removed
subsystems and deletes their states.
"""

from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from itertools import combinations
from typing import Callable

import numpy as np

from .lti import COND_LIMIT, HURWITZ_MARGIN, StateSpace, as_matrix, eigenvalues

ATTACK_PORTS = ("state", "interconnection-output", "measurement",
                "reference-fabrication")

DIM_NAMES = ("n_x", "n_v", "n_w", "n_r", "n_y")


@dataclass(frozen=True)
class Subsystem:
    """One block of an interconnected network.

    State equation      dx = a x + l v + b r  (+ state attack)
    Coupling output     w  = w_c x + w_z v + w_u r  (+ coupling attack)
    Measurement         y  = y_c x + y_e v + y_d r  (+ measurement attack)

    Zero-dimensional ports are allowed; pass `dims` to disambiguate empty
    matrix literals.
    """

    a: np.ndarray
    l: np.ndarray
    b: np.ndarray
    w_c: np.ndarray
    w_z: np.ndarray
    w_u: np.ndarray
    y_c: np.ndarray
    y_e: np.ndarray
    y_d: np.ndarray
    dims: dict | None = None

    def __post_init__(self):
        want = self.dims
        a = as_matrix(self.a, name="a")
        if a.shape[0] != a.shape[1]:
            raise ValueError("a must be square")
        n_x = a.shape[0]
        n_v = want["n_v"] if want else None
        n_r = want["n_r"] if want else None
        n_w = want["n_w"] if want else None
        n_y = want["n_y"] if want else None
        l = as_matrix(self.l, rows=n_x, cols=n_v, name="l")
        n_v = l.shape[1]
        b = as_matrix(self.b, rows=n_x, cols=n_r, name="b")
        n_r = b.shape[1]
        w_c = as_matrix(self.w_c, rows=n_w, cols=n_x, name="w_c")
        n_w = w_c.shape[0]
        w_z = as_matrix(self.w_z, rows=n_w, cols=n_v, name="w_z")
        w_u = as_matrix(self.w_u, rows=n_w, cols=n_r, name="w_u")
        y_c = as_matrix(self.y_c, rows=n_y, cols=n_x, name="y_c")
        n_y = y_c.shape[0]
        y_e = as_matrix(self.y_e, rows=n_y, cols=n_v, name="y_e")
        y_d = as_matrix(self.y_d, rows=n_y, cols=n_r, name="y_d")
        dims = {"n_x": n_x, "n_v": n_v, "n_w": n_w, "n_r": n_r, "n_y": n_y}
        if want is not None and dict(want) != dims:
            raise ValueError(f"dims {want} inconsistent with matrix shapes {dims}")
        for name, val in (("a", a), ("l", l), ("b", b), ("w_c", w_c),
                          ("w_z", w_z), ("w_u", w_u), ("y_c", y_c),
                          ("y_e", y_e), ("y_d", y_d)):
            object.__setattr__(self, name, val)
        object.__setattr__(self, "dims", dims)

    @property
    def n_x(self) -> int:
        return self.dims["n_x"]

    @property
    def n_v(self) -> int:
        return self.dims["n_v"]

    @property
    def n_w(self) -> int:
        return self.dims["n_w"]

    @property
    def n_r(self) -> int:
        return self.dims["n_r"]

    @property
    def n_y(self) -> int:
        return self.dims["n_y"]


@dataclass(frozen=True)
class Topology:
    """Sparse coupling map: edges[(i, j)] = M_ij feeds w_j into v_i."""

    n: int
    edges: dict

    def __post_init__(self):
        if self.n < 0:
            raise ValueError("subsystem count must be nonnegative")
        clean = {}
        for key, m in self.edges.items():
            i, j = key
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ValueError(f"edge {key} references an unknown subsystem")
            clean[(int(i), int(j))] = np.array(m, dtype=float, ndmin=2)
        object.__setattr__(self, "edges", clean)

    @property
    def neighborhoods(self) -> dict:
        """For each receiver i, the sorted senders j with an edge (i, j)."""
        out = {i: [] for i in range(self.n)}
        for (i, j) in self.edges:
            out[i].append(j)
        return {i: sorted(js) for i, js in out.items()}


@dataclass(frozen=True)
class InterconnectedNetwork:
    """Subsystem list, coupling topology, and the currently active subset."""

    subsystems: tuple
    topology: Topology
    active: frozenset = None

    def __post_init__(self):
        subs = tuple(self.subsystems)
        if self.topology.n != len(subs):
            raise ValueError("topology size does not match subsystem count")
        for (i, j), m in self.topology.edges.items():
            want = (subs[i].n_v, subs[j].n_w)
            if m.shape != want:
                raise ValueError(
                    f"edge ({i}, {j}) matrix has shape {m.shape}, expected {want}")
        active = frozenset(range(len(subs))) if self.active is None \
            else frozenset(int(i) for i in self.active)
        if not active <= set(range(len(subs))):
            raise ValueError("active set references unknown subsystems")
        object.__setattr__(self, "subsystems", subs)
        object.__setattr__(self, "active", active)

    @property
    def n(self) -> int:
        return len(self.subsystems)


@dataclass(frozen=True)
class AttackChannel:
    """Exogenous attack injection at one subsystem port.

    `signal` maps time to a vector of the port's dimension. `direction`
    optionally records the unit direction used when computing normalization
    gains for detection thresholds.
    """

    target: int
    port: str
    signal: Callable[[float], np.ndarray]
    direction: np.ndarray | None = None

    def __post_init__(self):
        if self.port not in ATTACK_PORTS:
            raise ValueError(f"port must be one of {ATTACK_PORTS}")
        if not callable(self.signal):
            raise ValueError("signal must be callable")
        if self.direction is not None:
            object.__setattr__(self, "direction",
                               np.asarray(self.direction, dtype=float).ravel())


def port_dimension(sub: Subsystem, port: str) -> int:
    """Signal dimension of an attack port on one subsystem."""
    return {"state": sub.n_x, "interconnection-output": sub.n_w,
            "measurement": sub.n_y, "reference-fabrication": sub.n_r}[port]


@dataclass(frozen=True)
class ClosedSystem(StateSpace):
    """Closed interconnection with per-subsystem port bookkeeping.

    Inputs are [r, a_x, a_w, a_y] and outputs are [y, w], each stacked over
    the active subsystems in ascending index order. The slice maps are keyed
    by original subsystem index.
    """

    active: tuple = ()
    x_slices: dict = field(default_factory=dict)
    r_slices: dict = field(default_factory=dict)
    ax_slices: dict = field(default_factory=dict)
    aw_slices: dict = field(default_factory=dict)
    ay_slices: dict = field(default_factory=dict)
    y_slices: dict = field(default_factory=dict)
    w_slices: dict = field(default_factory=dict)
    loop_cond: float = 1.0

    @property
    def n_r_total(self) -> int:
        return sum(s.stop - s.start for s in self.r_slices.values())


def _offsets(sizes):
    out = []
    pos = 0
    for s in sizes:
        out.append(slice(pos, pos + s))
        pos += s
    return out, pos


def _stack_blocks(net: InterconnectedNetwork, active):
    subs = [net.subsystems[i] for i in active]
    sx, nx = _offsets([s.n_x for s in subs])
    sv, nv = _offsets([s.n_v for s in subs])
    sw, nw = _offsets([s.n_w for s in subs])
    sr, nr = _offsets([s.n_r for s in subs])
    sy, ny = _offsets([s.n_y for s in subs])
    blk = {
        "a": np.zeros((nx, nx)), "l": np.zeros((nx, nv)), "b": np.zeros((nx, nr)),
        "w_c": np.zeros((nw, nx)), "w_z": np.zeros((nw, nv)), "w_u": np.zeros((nw, nr)),
        "y_c": np.zeros((ny, nx)), "y_e": np.zeros((ny, nv)), "y_d": np.zeros((ny, nr)),
    }
    for k, s in enumerate(subs):
        blk["a"][sx[k], sx[k]] = s.a
        blk["l"][sx[k], sv[k]] = s.l
        blk["b"][sx[k], sr[k]] = s.b
        blk["w_c"][sw[k], sx[k]] = s.w_c
        blk["w_z"][sw[k], sv[k]] = s.w_z
        blk["w_u"][sw[k], sr[k]] = s.w_u
        blk["y_c"][sy[k], sx[k]] = s.y_c
        blk["y_e"][sy[k], sv[k]] = s.y_e
        blk["y_d"][sy[k], sr[k]] = s.y_d
    m = np.zeros((nv, nw))
    pos = {idx: k for k, idx in enumerate(active)}
    for (i, j), mat in net.topology.edges.items():
        if i in pos and j in pos:
            m[sv[pos[i]], sw[pos[j]]] = mat
    slices = {"x": sx, "v": sv, "w": sw, "r": sr, "y": sy}
    return blk, m, slices


def _loop_condition(net: InterconnectedNetwork):
    active = sorted(net.active)
    blk, m, _ = _stack_blocks(net, active)
    loop = np.eye(m.shape[1]) - blk["w_z"] @ m
    if loop.shape[0] == 0:
        return loop, 1.0
    return loop, float(np.linalg.cond(loop))


def check_well_posedness(net: InterconnectedNetwork) -> bool:
    """True iff I - Z M is invertible for the active subsystems."""
    _, cond = _loop_condition(net)
    return cond < COND_LIMIT


def close_interconnection(net: InterconnectedNetwork) -> ClosedSystem:
    """Eliminate the coupling loop and return the closed realization.

    Raises ValueError when the algebraic loop I - Z M is numerically
    singular (ill-posed interconnection).
    """
    active = sorted(net.active)
    blk, m, sl = _stack_blocks(net, active)
    nx = blk["a"].shape[0]
    nw = m.shape[1]
    ny = blk["y_c"].shape[0]
    nr = blk["b"].shape[1]
    loop = np.eye(nw) - blk["w_z"] @ m
    cond = 1.0 if nw == 0 else float(np.linalg.cond(loop))
    if cond > COND_LIMIT:
        raise ValueError(
            f"ill-posed interconnection: cond(I - Z M) = {cond:.3e}")
    lam = np.linalg.inv(loop)
    # w = lw x + lu r + lam a_w
    lw = lam @ blk["w_c"]
    lu = lam @ blk["w_u"]
    mlw = m @ lw
    mlu = m @ lu
    mlam = m @ lam
    a = blk["a"] + blk["l"] @ mlw
    b = np.hstack([
        blk["b"] + blk["l"] @ mlu,
        np.eye(nx),
        blk["l"] @ mlam,
        np.zeros((nx, ny)),
    ])
    c = np.vstack([blk["y_c"] + blk["y_e"] @ mlw, lw])
    d = np.vstack([
        np.hstack([blk["y_d"] + blk["y_e"] @ mlu, np.zeros((ny, nx)),
                   blk["y_e"] @ mlam, np.eye(ny)]),
        np.hstack([lu, np.zeros((nw, nx)), lam, np.zeros((nw, ny))]),
    ])
    def keyed(kind):
        return {idx: sl[kind][k] for k, idx in enumerate(active)}
    r_off = {i: slice(s.start, s.stop) for i, s in keyed("r").items()}
    ax_off = {i: slice(nr + s.start, nr + s.stop) for i, s in keyed("x").items()}
    aw_off = {i: slice(nr + nx + s.start, nr + nx + s.stop)
              for i, s in keyed("w").items()}
    ay_off = {i: slice(nr + nx + nw + s.start, nr + nx + nw + s.stop)
              for i, s in keyed("y").items()}
    w_out = {i: slice(ny + s.start, ny + s.stop) for i, s in keyed("w").items()}
    return ClosedSystem(a, b, c, d,
                        active=tuple(active),
                        x_slices=keyed("x"),
                        r_slices=r_off, ax_slices=ax_off,
                        aw_slices=aw_off, ay_slices=ay_off,
                        y_slices=keyed("y"), w_slices=w_out,
                        loop_cond=cond)


def disconnect(net: InterconnectedNetwork, keep) -> InterconnectedNetwork:
    """Restrict the active set to `keep`, forcing w_j = 0 for the rest."""
    keep = frozenset(int(i) for i in keep)
    if not keep <= net.active:
        raise ValueError(f"keep set {sorted(keep)} is not a subset of the "
                         f"active set {sorted(net.active)}")
    return replace(net, active=keep)


@dataclass(frozen=True)
class ResilienceReport:
    """Per-subset spectral abscissae from exhaustive disconnection checks."""

    margin: float
    abscissae: dict
    well_posed: dict
    passed: bool
    failures: tuple

    @property
    def worst(self):
        """(subset, abscissa) with the largest finite abscissa."""
        finite = {k: v for k, v in self.abscissae.items() if np.isfinite(v)}
        if not finite:
            return (), float("-inf")
        sub = max(finite, key=lambda k: finite[k])
        return sub, finite[sub]


def _thread_count(max_workers: int | None) -> int:
    if max_workers is not None:
        return max(1, int(max_workers))
    raw = os.environ.get("RETROFIT_SENTINEL_THREADS", "")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def verify_disconnection_resilience(net: InterconnectedNetwork,
                                    margin: float = HURWITZ_MARGIN,
                                    cap: int = 16,
                                    early_exit: bool = False,
                                    max_workers: int | None = None) -> ResilienceReport:
    """Close every subset of the active set and test internal stability.

    Enumerates all 2^N subsets (N capped, default 16), including the empty
    and full sets. A subset passes when it is well posed and its spectral
    abscissa is below -margin; ill-posedness is recorded per subset rather
    than raised. `max_workers` defaults to the RETROFIT_SENTINEL_THREADS
    environment variable (1 if unset); with early_exit the enumeration is
    serial and stops at the first failure.
    """
    active = sorted(net.active)
    if len(active) > cap:
        raise ValueError(
            f"{len(active)} active subsystems exceed the enumeration cap {cap}")
    subsets = [sub for k in range(len(active) + 1)
               for sub in combinations(active, k)]

    def check(sub):
        subnet = replace(net, active=frozenset(sub))
        loop, cond = _loop_condition(subnet)
        if cond > COND_LIMIT:
            return sub, float("nan"), False
        closed = close_interconnection(subnet)
        return sub, eigenvalues(closed.a).spectral_abscissa, True

    abscissae = {}
    well_posed = {}
    failures = []
    if early_exit:
        results = map(check, subsets)
    else:
        workers = _thread_count(max_workers)
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                results = list(pool.map(check, subsets))
        else:
            results = [check(sub) for sub in subsets]
    for sub, absc, posed in results:
        abscissae[sub] = absc
        well_posed[sub] = posed
        if not posed or not absc < -margin:
            failures.append(sub)
            if early_exit:
                break
    return ResilienceReport(margin=margin, abscissae=abscissae,
                            well_posed=well_posed,
                            passed=not failures, failures=tuple(failures))


def save_network(net: InterconnectedNetwork, path) -> None:
    """Write a network description file (JSON, 1-based subsystem ids)."""
    subs = []
    for k, s in enumerate(net.subsystems):
        subs.append({
            "id": k + 1,
            "dims": s.dims,
            "a": s.a.tolist(), "l": s.l.tolist(), "b": s.b.tolist(),
            "w_c": s.w_c.tolist(), "w_z": s.w_z.tolist(), "w_u": s.w_u.tolist(),
            "y_c": s.y_c.tolist(), "y_e": s.y_e.tolist(), "y_d": s.y_d.tolist(),
        })
    edges = [{"from": j + 1, "to": i + 1, "matrix": m.tolist()}
             for (i, j), m in sorted(net.topology.edges.items())]
    doc = {"subsystems": subs, "edges": edges,
           "active": sorted(i + 1 for i in net.active)}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_network(path) -> InterconnectedNetwork:
    """Read a network description file written by save_network."""
    with open(path) as fh:
        doc = json.load(fh)
    entries = sorted(doc["subsystems"], key=lambda e: e["id"])
    ids = [e["id"] for e in entries]
    if ids != list(range(1, len(ids) + 1)):
        raise ValueError(f"subsystem ids must be 1..N, got {ids}")
    subs = []
    for e in entries:
        d = e["dims"]
        shapes = {
            "a": (d["n_x"], d["n_x"]), "l": (d["n_x"], d["n_v"]),
            "b": (d["n_x"], d["n_r"]), "w_c": (d["n_w"], d["n_x"]),
            "w_z": (d["n_w"], d["n_v"]), "w_u": (d["n_w"], d["n_r"]),
            "y_c": (d["n_y"], d["n_x"]), "y_e": (d["n_y"], d["n_v"]),
            "y_d": (d["n_y"], d["n_r"]),
        }
        mats = {name: as_matrix(e[name], rows=r, cols=c, name=name)
                for name, (r, c) in shapes.items()}
        subs.append(Subsystem(dims={k: d[k] for k in DIM_NAMES}, **mats))
    edges = {}
    for e in doc.get("edges", []):
        i, j = e["to"] - 1, e["from"] - 1
        edges[(i, j)] = as_matrix(e["matrix"],
                                  rows=subs[i].n_v, cols=subs[j].n_w,
                                  name=f"edge {e['from']}->{e['to']}")
    topo = Topology(len(subs), edges)
    active = doc.get("active")
    active_set = None if active is None else frozenset(i - 1 for i in active)
    return InterconnectedNetwork(tuple(subs), topo, active_set)
