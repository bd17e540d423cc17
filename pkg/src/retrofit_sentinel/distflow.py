"""Radial low-voltage feeder case study under the LinDistFlow model.

Customer k bundles one main-line segment, one service drop with a constant
load, and one droop-controlled inverter (first-order lag on reactive
output). Each customer becomes one subsystem whose coupling inputs are the
upstream squared node voltage and the downstream line power, and whose
coupling outputs are its own squared node voltage and the line power it
draws; chaining them yields the feeder as an interconnected network.

Complex power is carried as real (P, Q) pairs. Line power S'_k flows from
the substation toward the customers and satisfies S'_k = S'_{k+1} - S_k
with S_k the net injection at node k (generation minus consumption).
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .lti import COND_LIMIT
from .netsys import AttackChannel, InterconnectedNetwork, Subsystem, Topology
from .simkit import StepAttack

DEFAULT_CUSTOMERS = 5
# synthetic benchmark defaults, not a standard test feeder
DEFAULTS = {
    "r_line": 0.01, "x_line": 0.005,     # main-line segment impedance (ohm)
    "r_service": 0.02, "x_service": 0.01,  # service-drop impedance (ohm)
    "p_load": -2000.0,                   # active injection (W), negative = load
    "q_const": 500.0,                    # constant reactive consumption (var)
    "tau": 0.5,                          # inverter time constant (s)
    "kappa": 1.0,                        # droop gain (var/V^2)
    "v_ref": 230.0,                      # droop reference voltage (V)
}
DEFAULT_V_SUB = 230.0


def _per_customer(value, n, name):
    arr = np.broadcast_to(np.asarray(value, dtype=float), (n,)).copy()
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


@dataclass(frozen=True)
class FeederSpec:
    """Per-customer feeder parameters; scalars broadcast to all customers."""

    n: int
    r_line: np.ndarray = DEFAULTS["r_line"]
    x_line: np.ndarray = DEFAULTS["x_line"]
    r_service: np.ndarray = DEFAULTS["r_service"]
    x_service: np.ndarray = DEFAULTS["x_service"]
    p_load: np.ndarray = DEFAULTS["p_load"]
    q_const: np.ndarray = DEFAULTS["q_const"]
    tau: np.ndarray = DEFAULTS["tau"]
    kappa: np.ndarray = DEFAULTS["kappa"]
    v_ref: np.ndarray = DEFAULTS["v_ref"]
    v_sub: float = DEFAULT_V_SUB

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("feeder needs at least one customer")
        for name in ("r_line", "x_line", "r_service", "x_service", "p_load",
                     "q_const", "tau", "kappa", "v_ref"):
            object.__setattr__(self, name,
                               _per_customer(getattr(self, name), self.n, name))
        for name in ("r_line", "x_line", "r_service", "x_service"):
            if np.any(getattr(self, name) < 0):
                raise ValueError(f"{name} must be nonnegative")
        if np.any(self.tau <= 0):
            raise ValueError("tau must be positive")
        if np.any(self.kappa <= 0):
            raise ValueError("kappa must be positive")
        if self.v_sub <= 0:
            raise ValueError("substation voltage must be positive")

    def truncate(self, n: int) -> "FeederSpec":
        """Spec for the first n customers only."""
        if not 1 <= n <= self.n:
            raise ValueError("truncation length out of range")
        return FeederSpec(n=n, r_line=self.r_line[:n], x_line=self.x_line[:n],
                          r_service=self.r_service[:n],
                          x_service=self.x_service[:n],
                          p_load=self.p_load[:n], q_const=self.q_const[:n],
                          tau=self.tau[:n], kappa=self.kappa[:n],
                          v_ref=self.v_ref[:n], v_sub=self.v_sub)


def default_feeder(n: int = DEFAULT_CUSTOMERS) -> FeederSpec:
    """Benchmark feeder with the documented repo default parameters."""
    return FeederSpec(n=n)


def _n_r(k: int) -> int:
    # customer 0 carries the substation voltage as an extra reference entry
    return 4 if k == 0 else 3


def _fr(k: int) -> np.ndarray:
    """Injection-from-reference map: S_k = Fx x_k + Fr r_k."""
    fr = np.zeros((2, _n_r(k)))
    fr[0, 1] = 1.0   # active load P_k
    fr[1, 2] = -1.0  # constant reactive consumption q_c,k
    return fr


_FX = np.array([[0.0], [1.0]])  # S_k = (P_k, q_g,k - q_c,k)


def _customer_block(spec: FeederSpec, k: int) -> Subsystem:
    """One customer as a nine-matrix subsystem with scalar state q_g,k.

    Coupling input v_k = (upstream squared node voltage, downstream line
    power); coupling output w_k = (own squared node voltage, own line
    power). Reference r_k = (squared droop reference, P_k, q_c,k) plus the
    squared substation voltage for customer 0.
    """
    rho_line = np.array([spec.r_line[k], spec.x_line[k]])
    rho_serv = np.array([spec.r_service[k], spec.x_service[k]])
    fr = _fr(k)
    n_r = _n_r(k)
    z00 = 0.0 if k == 0 else 1.0

    w_c = np.vstack([2 * rho_line @ _FX, -_FX])
    w_z = np.array([[z00, -2 * rho_line[0], -2 * rho_line[1]],
                    [0.0, 1.0, 0.0],
                    [0.0, 0.0, 1.0]])
    w_u = np.vstack([2 * rho_line @ fr, -fr])
    if k == 0:
        w_u[0, 3] = 1.0

    v2_x = 2 * (rho_line + rho_serv) @ _FX          # (1, 1)
    v2_v = np.array([[z00, -2 * rho_line[0], -2 * rho_line[1]]])
    v2_r = 2 * (rho_line + rho_serv) @ fr
    if k == 0:
        v2_r = v2_r.copy()
        v2_r[3] += 1.0
    v2_r = v2_r.reshape(1, n_r)

    gain = spec.kappa[k] / spec.tau[k]
    e_vref = np.zeros((1, n_r))
    e_vref[0, 0] = 1.0
    a = np.array([[-1.0 / spec.tau[k]]]) - gain * v2_x
    l = -gain * v2_v
    b = gain * (e_vref - v2_r)

    return Subsystem(a=a, l=l, b=b, w_c=w_c, w_z=w_z, w_u=w_u,
                     y_c=np.eye(1), y_e=np.zeros((1, 3)),
                     y_d=np.zeros((1, n_r)))


def line_only_block(spec: FeederSpec, k: int) -> Subsystem:
    """Customer k with the inverter removed: load and line algebra only.

    Stateless and outputless; used as the dg-only disconnection
    replacement so the feeder chain keeps carrying power past the removed
    generator.
    """
    rho_line = np.array([spec.r_line[k], spec.x_line[k]])
    fr = _fr(k)
    n_r = _n_r(k)
    z00 = 0.0 if k == 0 else 1.0
    w_z = np.array([[z00, -2 * rho_line[0], -2 * rho_line[1]],
                    [0.0, 1.0, 0.0],
                    [0.0, 0.0, 1.0]])
    w_u = np.vstack([2 * rho_line @ fr, -fr])
    if k == 0:
        w_u[0, 3] = 1.0
    return Subsystem(a=np.zeros((0, 0)), l=np.zeros((0, 3)),
                     b=np.zeros((0, n_r)), w_c=np.zeros((3, 0)), w_z=w_z,
                     w_u=w_u, y_c=np.zeros((0, 0)), y_e=np.zeros((0, 3)),
                     y_d=np.zeros((0, n_r)))


def build_feeder(spec: FeederSpec):
    """(subsystems, topology, references) for the feeder chain.

    Edge (k, k-1) routes the upstream squared node voltage down the chain;
    edge (k, k+1) routes the downstream line power back up.
    """
    subsystems = tuple(_customer_block(spec, k) for k in range(spec.n))
    m_up = np.zeros((3, 3))
    m_up[0, 0] = 1.0
    m_dn = np.zeros((3, 3))
    m_dn[1, 1] = 1.0
    m_dn[2, 2] = 1.0
    edges = {}
    for k in range(spec.n):
        if k > 0:
            edges[(k, k - 1)] = m_up
        if k + 1 < spec.n:
            edges[(k, k + 1)] = m_dn
    topology = Topology(spec.n, edges)
    references = {k: reference_vector(spec, k) for k in range(spec.n)}
    return subsystems, topology, references


def reference_vector(spec: FeederSpec, k: int) -> np.ndarray:
    ref = [spec.v_ref[k] ** 2, spec.p_load[k], spec.q_const[k]]
    if k == 0:
        ref.append(spec.v_sub ** 2)
    return np.array(ref)


def feeder_network(spec: FeederSpec) -> InterconnectedNetwork:
    subsystems, topology, _ = build_feeder(spec)
    return InterconnectedNetwork(subsystems, topology)


@dataclass(frozen=True)
class PowerFlowState:
    """Equilibrium of the feeder; all LinDistFlow relations hold exactly.

    line_power has one extra terminal row so line_power[n] = 0 expresses
    the open feeder end.
    """

    q_gen: np.ndarray       # (n,) reactive generation
    injection: np.ndarray   # (n, 2) net (P, Q) at each node
    line_power: np.ndarray  # (n+1, 2) power entering node k from upstream
    v_node_sq: np.ndarray   # (n,) squared main-line voltages
    v_cust_sq: np.ndarray   # (n,) squared customer-bus voltages

    @property
    def v_node(self) -> np.ndarray:
        return np.sqrt(self.v_node_sq)

    @property
    def v_cust(self) -> np.ndarray:
        return np.sqrt(self.v_cust_sq)

    def residual(self, spec: FeederSpec) -> float:
        """Worst absolute violation of the three LinDistFlow relations."""
        n = spec.n
        res = [np.abs(self.line_power[n])]
        res.append(np.abs(self.line_power[:n] - (self.line_power[1:] -
                                                 self.injection)))
        up = np.concatenate([[spec.v_sub ** 2], self.v_node_sq[:-1]])
        drop = 2 * (spec.r_line * self.line_power[:n, 0] +
                    spec.x_line * self.line_power[:n, 1])
        res.append(np.abs(self.v_node_sq - (up - drop)))
        lift = 2 * (spec.r_service * self.injection[:, 0] +
                    spec.x_service * self.injection[:, 1])
        res.append(np.abs(self.v_cust_sq - (self.v_node_sq + lift)))
        return float(max(np.max(r) for r in res))


def _flow_from_q(spec: FeederSpec, q_gen: np.ndarray):
    """LinDistFlow solution for a fixed reactive generation profile."""
    n = spec.n
    injection = np.column_stack([spec.p_load, q_gen - spec.q_const])
    line = np.zeros((n + 1, 2))
    for k in range(n - 1, -1, -1):
        line[k] = line[k + 1] - injection[k]
    v_node = np.zeros(n)
    up = spec.v_sub ** 2
    for k in range(n):
        up = up - 2 * (spec.r_line[k] * line[k, 0] + spec.x_line[k] * line[k, 1])
        v_node[k] = up
    v_cust = v_node + 2 * (spec.r_service * injection[:, 0] +
                           spec.x_service * injection[:, 1])
    return injection, line, v_node, v_cust


def solve_steady_state(spec: FeederSpec) -> PowerFlowState:
    """Droop equilibrium: q_g,k = kappa_k (vref_k^2 - v_k^2) jointly with
    the LinDistFlow relations, solved as one linear system."""
    n = spec.n
    _, _, _, v0 = _flow_from_q(spec, np.zeros(n))
    g = np.zeros((n, n))
    for j in range(n):
        e = np.zeros(n)
        e[j] = 1.0
        _, _, _, v_probe = _flow_from_q(spec, e)
        g[:, j] = v_probe - v0
    mat = np.eye(n) + spec.kappa[:, None] * g
    if np.linalg.cond(mat) > COND_LIMIT:
        raise ValueError("degenerate droop/impedance combination: "
                         "equilibrium system is singular")
    q_gen = np.linalg.solve(mat, spec.kappa * (spec.v_ref ** 2 - v0))
    injection, line, v_node, v_cust = _flow_from_q(spec, q_gen)
    return PowerFlowState(q_gen=q_gen, injection=injection, line_power=line,
                          v_node_sq=v_node, v_cust_sq=v_cust)


def make_reference_attack(spec: FeederSpec, k0: int, amplitude: float,
                          onset: float) -> AttackChannel:
    """Step of size `amplitude` on the squared droop reference of customer
    k0 (1-based) from time `onset`; detectors keep the true reference."""
    if not 1 <= k0 <= spec.n:
        raise ValueError(f"customer index {k0} outside 1..{spec.n}")
    direction = np.zeros(_n_r(k0 - 1))
    direction[0] = 1.0
    return StepAttack(target=k0 - 1, amplitude=amplitude, onset=onset,
                      direction=direction,
                      port="reference-fabrication").channel()


def customer_voltage_map(spec: FeederSpec, network: InterconnectedNetwork):
    """(t_x, t_r, order) with v_cust^2 = t_x @ x + t_r @ r on the closed net.

    Rows follow `order` (the sorted active set). Works for networks whose
    blocks were replaced by line_only_block in dg-only mode.
    """
    from .netsys import close_interconnection

    closed = close_interconnection(network)
    order = list(closed.active)
    nr_total = sum(sl.stop - sl.start for sl in closed.r_slices.values())
    t_x = np.zeros((len(order), closed.n_states))
    t_r = np.zeros((len(order), nr_total))
    for row, k in enumerate(order):
        wrow = closed.w_slices[k].start  # squared node voltage output
        t_x[row] = closed.c[wrow]
        t_r[row] = closed.d[wrow, :nr_total]
        rho_serv = np.array([spec.r_service[k], spec.x_service[k]])
        xsl = closed.x_slices[k]
        if xsl.stop > xsl.start:
            t_x[row, xsl.start:xsl.stop] += (2 * rho_serv @ _FX).ravel()
        t_r[row, closed.r_slices[k]] += 2 * rho_serv @ _fr(k)
    return t_x, t_r, order


def save_feeder(spec: FeederSpec, path) -> None:
    doc = {"n": spec.n, "v_sub": spec.v_sub}
    for name in ("r_line", "x_line", "r_service", "x_service", "p_load",
                 "q_const", "tau", "kappa", "v_ref"):
        doc[name] = getattr(spec, name).tolist()
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_feeder(path) -> FeederSpec:
    with open(path) as fh:
        doc = json.load(fh)
    kwargs = {k: v for k, v in doc.items()}
    return FeederSpec(**kwargs)
