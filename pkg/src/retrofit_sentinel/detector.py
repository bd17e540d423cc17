"""Distributed attack detectors over interconnected networks.

Three observer variants share one wiring: each subobserver receives its
subsystem's measurement y_i and reference r_i, exchanges estimated coupling
signals with its neighbors over the plant topology, and emits the predicted
measurement used for the residual eps_i = y_i - yhat_i.

  naive        x^ driven by output injection H (yhat - y); coupling estimate
               w^ computed from x^ directly.
  no-feedback  the naive observer with H = 0 (pure simulation of the plant).
  retrofit     the naive observer augmented with an internal rectifier state
               chi that cancels the injection's effect on the coupling
               estimate: chi' = A chi + mu, mu = H (yhat - y), and w^ carries
               the correction -W chi.

The rectifier makes the transfer from injected corrections to the coupling
estimate vanish identically, so the detector's error network inherits the
plant's disconnection resilience.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .lti import StateSpace, as_matrix, close_output_feedback, design_observer_gain, \
    is_hurwitz, markov_parameters, series
from .netsys import InterconnectedNetwork, Subsystem, Topology

# Structural cancellations are exact in exact arithmetic; the numeric zero
# test scales 1e-10 by (1 + largest input-matrix magnitude).
MARKOV_ZERO_TOL = 1e-10

VARIANTS = ("naive", "no-feedback", "retrofit")
_VARIANT_ALIASES = {"naive": "naive", "no-feedback": "no-feedback",
                    "nofb": "no-feedback", "retrofit": "retrofit"}


def canonical_variant(name: str) -> str:
    try:
        return _VARIANT_ALIASES[name]
    except KeyError:
        raise ValueError(f"unknown detector variant {name!r}; "
                         f"expected one of {sorted(_VARIANT_ALIASES)}") from None


def _check_gains(subsystems, gains):
    subs = list(subsystems)
    if len(gains) != len(subs):
        raise ValueError(f"expected {len(subs)} gains, got {len(gains)}")
    out = []
    for k, (s, h) in enumerate(zip(subs, gains)):
        out.append(as_matrix(h, rows=s.n_x, cols=s.n_y, name=f"gain {k + 1}"))
    return subs, tuple(out)


def _naive_block(s: Subsystem, h: np.ndarray) -> Subsystem:
    """Subobserver block with inputs (y_i, r_i) on the reference port."""
    return Subsystem(
        a=s.a + h @ s.y_c,
        l=s.l + h @ s.y_e,
        b=np.hstack([-h, s.b + h @ s.y_d]),
        w_c=s.w_c,
        w_z=s.w_z,
        w_u=np.hstack([np.zeros((s.n_w, s.n_y)), s.w_u]),
        y_c=s.y_c,
        y_e=s.y_e,
        y_d=np.hstack([np.zeros((s.n_y, s.n_y)), s.y_d]),
    )


def _retrofit_block(s: Subsystem, h: np.ndarray) -> Subsystem:
    """Subobserver block with doubled state (xhat_i, chi_i)."""
    n = s.n_x
    hc = h @ s.y_c
    he = h @ s.y_e
    hd = h @ s.y_d
    a = np.zeros((2 * n, 2 * n))
    a[:n, :n] = s.a + hc
    a[n:, :n] = hc
    a[n:, n:] = s.a
    return Subsystem(
        a=a,
        l=np.vstack([s.l + he, he]),
        b=np.vstack([np.hstack([-h, s.b + hd]), np.hstack([-h, hd])]),
        w_c=np.hstack([s.w_c, -s.w_c]),
        w_z=s.w_z,
        w_u=np.hstack([np.zeros((s.n_w, s.n_y)), s.w_u]),
        y_c=np.hstack([s.y_c, np.zeros((s.n_y, n))]),
        y_e=s.y_e,
        y_d=np.hstack([np.zeros((s.n_y, s.n_y)), s.y_d]),
    )


@dataclass(frozen=True)
class NaiveObserver:
    """Distributed observer network with direct output injection.

    Carries the per-subsystem gains and the assembled subobserver network
    (same topology as the plant). A zero-gain instance is the no-feedback
    variant.
    """

    gains: tuple
    network: InterconnectedNetwork

    @property
    def variant(self) -> str:
        if all(np.all(h == 0) for h in self.gains):
            return "no-feedback"
        return "naive"


@dataclass(frozen=True)
class RetrofitDetector:
    """Disconnection-aware detector: subobservers carry a rectifier state.

    Construction rejects any gain for which A_i + H_i C_i is not Hurwitz,
    since the rectified error dynamics rely on that stability blockwise.
    """

    gains: tuple
    network: InterconnectedNetwork

    variant = "retrofit"


def build_naive_observer(subsystems, topology: Topology, gains,
                         active=None) -> NaiveObserver:
    """Assemble the naive (or, with zero gains, no-feedback) observer network."""
    subs, gains = _check_gains(subsystems, gains)
    blocks = tuple(_naive_block(s, h) for s, h in zip(subs, gains))
    net = InterconnectedNetwork(blocks, topology, active)
    return NaiveObserver(gains=gains, network=net)


def build_retrofit_detector(subsystems, topology: Topology, gains=None,
                            active=None) -> RetrofitDetector:
    """Assemble the retrofit detector; design gains if none are given.

    Omitted gains are synthesized per subsystem from the filter Riccati
    equation with identity weights.
    """
    subs = list(subsystems)
    if gains is None:
        gains = [design_observer_gain(s.a, s.y_c) for s in subs]
    subs, gains = _check_gains(subs, gains)
    for k, (s, h) in enumerate(zip(subs, gains)):
        if s.n_x and not is_hurwitz(s.a + h @ s.y_c, 0.0):
            raise ValueError(
                f"gain for subsystem {k + 1} leaves A + H C non-Hurwitz")
    blocks = tuple(_retrofit_block(s, h) for s, h in zip(subs, gains))
    net = InterconnectedNetwork(blocks, topology, active)
    return RetrofitDetector(gains=gains, network=net)


@dataclass(frozen=True)
class ErrorSystem:
    """Estimation-error block: input phi_i, outputs (omega_i, psi_i).

    phi_i is the coupling-estimate error arriving from the neighbors,
    omega_i the coupling-estimate error this subsystem emits, and psi_i the
    residual. The block is a Subsystem with an empty reference port, so
    error networks close and enumerate exactly like plants.
    """

    block: Subsystem
    variant: str
    gain: np.ndarray

    def phi_to_omega(self) -> StateSpace:
        return StateSpace(self.block.a, self.block.l, self.block.w_c,
                          self.block.w_z)

    def phi_to_psi(self) -> StateSpace:
        return StateSpace(self.block.a, self.block.l, self.block.y_c,
                          self.block.y_e)


def error_dynamics(subsystem: Subsystem, detector_variant: str,
                   gain=None) -> ErrorSystem:
    """Error system of one subobserver; attacks and references cancel out."""
    variant = canonical_variant(detector_variant)
    s = subsystem
    if variant == "no-feedback":
        h = np.zeros((s.n_x, s.n_y))
    else:
        if gain is None:
            raise ValueError(f"variant {variant!r} requires a gain")
        h = as_matrix(gain, rows=s.n_x, cols=s.n_y, name="gain")
    if variant == "retrofit":
        obs = _retrofit_block(s, h)
        n_state = 2 * s.n_x
    else:
        obs = _naive_block(s, h)
        n_state = s.n_x
    block = Subsystem(
        a=obs.a, l=obs.l, b=np.zeros((n_state, 0)),
        w_c=obs.w_c, w_z=obs.w_z, w_u=np.zeros((s.n_w, 0)),
        y_c=obs.y_c, y_e=obs.y_e, y_d=np.zeros((s.n_y, 0)),
    )
    return ErrorSystem(block=block, variant=variant, gain=h)


def error_network(subsystems, topology: Topology, detector_variant: str,
                  gains=None, active=None) -> InterconnectedNetwork:
    """Interconnection of all error blocks over the plant topology.

    Feeding the result to verify_disconnection_resilience answers whether
    estimation errors stay stable for every disconnection pattern.
    """
    variant = canonical_variant(detector_variant)
    subs = list(subsystems)
    if variant == "no-feedback":
        gains = [np.zeros((s.n_x, s.n_y)) for s in subs]
    elif gains is None:
        raise ValueError(f"variant {variant!r} requires gains")
    subs, gains = _check_gains(subs, gains)
    blocks = tuple(error_dynamics(s, variant, h).block
                   for s, h in zip(subs, gains))
    return InterconnectedNetwork(blocks, topology, active)


def rectifier_controller(subsystem: Subsystem, gain) -> StateSpace:
    """Internal rectifier K_i mapping the residual psi to injections (mu, nu).

    chi' = A chi + mu,  mu = H psi,  nu = -W chi.
    """
    s = subsystem
    h = as_matrix(gain, rows=s.n_x, cols=s.n_y, name="gain")
    c = np.vstack([np.zeros((s.n_x, s.n_x)), -s.w_c])
    d = np.vstack([h, np.zeros((s.n_w, s.n_y))])
    return StateSpace(s.a, h, c, d)


def injection_to_coupling(subsystem: Subsystem) -> StateSpace:
    """Open error-block map (mu, nu) -> omega: e' = A e + mu, omega = W e + nu."""
    s = subsystem
    b = np.hstack([np.eye(s.n_x), np.zeros((s.n_x, s.n_w))])
    d = np.hstack([np.zeros((s.n_w, s.n_x)), np.eye(s.n_w)])
    return StateSpace(s.a, b, s.w_c, d)


def injection_to_residual(subsystem: Subsystem) -> StateSpace:
    """Open error-block map (mu, nu) -> psi: e' = A e + mu, psi = C e."""
    s = subsystem
    b = np.hstack([np.eye(s.n_x), np.zeros((s.n_x, s.n_w))])
    return StateSpace(s.a, b, s.y_c, np.zeros((s.n_y, s.n_x + s.n_w)))


@dataclass(frozen=True)
class RetrofitCondition:
    """Outcome of the retrofit-condition check for one subsystem and gain."""

    identity_ok: bool
    q_stable: bool
    subsystem_stable: bool
    max_markov: float


def verify_retrofit_condition(subsystem: Subsystem, gain) -> RetrofitCondition:
    """Check the two halves of the retrofit guarantee for one gain.

    identity_ok: all Markov parameters (2 n_x + 1 of them) of the map from
    the rectifier output back to the coupling estimate vanish, i.e. the
    controller is invisible to the environment. q_stable: the closed
    injection loop is stable, which holds exactly when A + H C is Hurwitz.
    The open block's own stability is reported rather than assumed.
    """
    s = subsystem
    h = as_matrix(gain, rows=s.n_x, cols=s.n_y, name="gain")
    prod = series(injection_to_coupling(s), rectifier_controller(s, h))
    params = markov_parameters(prod, 2 * s.n_x + 1)
    peak = max((float(np.max(np.abs(p))) if p.size else 0.0) for p in params)
    scale = 1.0 + (float(np.max(np.abs(prod.b))) if prod.b.size else 0.0)
    return RetrofitCondition(
        identity_ok=peak <= MARKOV_ZERO_TOL * scale,
        q_stable=bool(s.n_x == 0 or is_hurwitz(s.a + h @ s.y_c, 0.0)),
        subsystem_stable=bool(s.n_x == 0 or is_hurwitz(s.a, 0.0)),
        max_markov=peak,
    )


def youla_parameter(subsystem: Subsystem, gain) -> StateSpace:
    """Closed injection loop K (I - G K)^-1 for the rectifier controller.

    The realization is not minimal: the open block's modes appear but are
    uncontrollable, so the transfer equals that of (A + H C, H, [H C; -W],
    [H; 0]) and is stable exactly when A + H C is Hurwitz.
    """
    s = subsystem
    h = as_matrix(gain, rows=s.n_x, cols=s.n_y, name="gain")
    return close_output_feedback(injection_to_residual(s),
                                 rectifier_controller(s, h))


def save_detector(det, path) -> None:
    """Write the detector description (variant tag plus per-subsystem gains)."""
    doc = {
        "variant": det.variant,
        "gains": [{"id": k + 1, "rows": h.shape[0], "cols": h.shape[1],
                   "h": h.tolist()}
                  for k, h in enumerate(det.gains)],
    }
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1)


def load_detector(path, subsystems, topology: Topology, active=None):
    """Rebuild a detector from its description file and the plant it watches."""
    with open(path) as fh:
        doc = json.load(fh)
    variant = canonical_variant(doc["variant"])
    entries = sorted(doc["gains"], key=lambda e: e["id"])
    gains = [as_matrix(e["h"], rows=e["rows"], cols=e["cols"], name="gain")
             for e in entries]
    if variant == "retrofit":
        return build_retrofit_detector(subsystems, topology, gains, active)
    return build_naive_observer(subsystems, topology, gains, active)
