"""Named ready-to-run scenario bundles over the benchmark feeder.

Each preset builds one or more labeled scenarios:

- fig2: plant-only feeder, customers 3-5 disconnected at t0 = 5.
- fig3: three-subsystem witness where a jointly tuned naive observer is
  stable on the full topology but diverges after a disconnection.
- fig6: step attack on customer 4's droop reference; retrofit vs
  no-feedback detection race.
- fig7: large negative attack with automatic disconnection (defended)
  against the same attack left unanswered (undefended).
- fig8: retrofit detector with a large initial estimation error riding
  through the fig2 disconnection.
"""

from __future__ import annotations

import numpy as np

from .lti import design_observer_gain
from .netsys import InterconnectedNetwork, Subsystem, Topology
from .detector import build_naive_observer, build_retrofit_detector
from .distflow import (FeederSpec, build_feeder, default_feeder,
                       line_only_block, make_reference_attack)
from .simkit import Scenario

PRESET_NAMES = ("fig2", "fig3", "fig6", "fig7", "fig8")
DEFAULT_PRESET_SEED = 2024
# filter design weight tuned so the benchmark observer poles sit near -6
RETROFIT_STATE_WEIGHT = 32.0
WITNESS_GAINS = (0.9, 0.9, -2.0)


def naive_disconnection_witness():
    """(subsystems, topology, gains): naive observers that die on a cut.

    Three scalar subsystems, each internally stable and measuring its own
    state. The gains keep the full three-subsystem naive observer network
    stable, but after removing subsystem 3 the remaining pair's error
    dynamics acquire an eigenvalue at +0.8. The same gains are perfectly
    safe in the retrofit architecture.
    """
    def scalar_block():
        return Subsystem(a=[[-1.0]], l=[[1.0]], b=[[1.0]], w_c=[[1.0]],
                         w_z=[[0.0]], w_u=[[0.0]], y_c=[[1.0]],
                         y_e=[[0.0]], y_d=[[0.0]])

    subsystems = (scalar_block(), scalar_block(), scalar_block())
    edges = {(0, 1): [[0.9]], (1, 0): [[0.9]],
             (0, 2): [[1.5]], (1, 2): [[1.5]],
             (2, 0): [[-1.5]], (2, 1): [[-1.5]]}
    topology = Topology(3, edges)
    gains = tuple(np.array([[g]]) for g in WITNESS_GAINS)
    return subsystems, topology, gains


def retrofit_benchmark_gains(subsystems, state_weight=RETROFIT_STATE_WEIGHT):
    """Filter-design gains for each subsystem with a scalar state weight."""
    return [design_observer_gain(s.a, s.y_c,
                                 state_weight=state_weight * np.eye(s.n_x))
            for s in subsystems]


class Preset:
    """Labeled scenarios plus the feeder spec needed for voltage plots."""

    def __init__(self, name, runs, feeder=None, threshold=None):
        self.name = name
        self.runs = runs            # list of (label, Scenario)
        self.feeder = feeder
        self.threshold = threshold


def _dg_replacements(spec: FeederSpec):
    return {k: line_only_block(spec, k) for k in range(spec.n)}


def build_preset(name: str, disconnect_mode: str | None = None,
                 seed: int | None = None) -> Preset:
    """Construct a named preset; unknown names raise ValueError."""
    if name not in PRESET_NAMES:
        raise ValueError(f"unknown preset {name!r}; choose from {PRESET_NAMES}")
    if seed is None:
        seed = DEFAULT_PRESET_SEED

    if name == "fig3":
        if disconnect_mode not in (None, "subsystem"):
            raise ValueError("fig3 has no dg-only replacement blocks")
        subs, topo, gains = naive_disconnection_witness()
        det = build_naive_observer(subs, topo, gains)
        sc = Scenario(network=InterconnectedNetwork(subs, topo), detector=det,
                      disconnections=((5.0, frozenset({2})),),
                      horizon=50.0, seed=seed, initial_error_scale=1.0)
        return Preset(name, [("fig3", sc)], threshold=sc.threshold)

    spec = default_feeder()
    subs, topo, refs = build_feeder(spec)
    net = InterconnectedNetwork(subs, topo)
    mode = disconnect_mode
    common = {}
    if mode == "dg-only":
        common = {"disconnect_mode": mode,
                  "dg_replacements": _dg_replacements(spec)}

    if name == "fig2":
        sc = Scenario(network=net, references=refs, seed=seed,
                      disconnections=((5.0, frozenset({2, 3, 4})),), **common)
        return Preset(name, [("fig2", sc)], feeder=spec)

    if name == "fig6":
        attack = make_reference_attack(spec, 4, 1.0, 1.0)
        gains = retrofit_benchmark_gains(subs)
        det_rf = build_retrofit_detector(subs, topo, gains)
        det_nf = build_naive_observer(subs, topo,
                                      [np.zeros((s.n_x, s.n_y)) for s in subs])
        runs = []
        for label, det in (("fig6-retrofit", det_rf),
                           ("fig6-no-feedback", det_nf)):
            runs.append((label, Scenario(network=net, detector=det,
                                         references=refs, attacks=(attack,),
                                         seed=seed, **common)))
        return Preset(name, runs, feeder=spec, threshold=runs[0][1].threshold)

    if name == "fig7":
        # dg-only is the physical reading here: the attacked inverter is
        # cut while its household stays on the feeder
        if mode is None:
            mode = "dg-only"
        common = {"disconnect_mode": mode}
        if mode == "dg-only":
            common["dg_replacements"] = _dg_replacements(spec)
        attack = make_reference_attack(spec, 4, -5e4, 1.0)
        gains = retrofit_benchmark_gains(subs)
        det = build_retrofit_detector(subs, topo, gains)
        defended = Scenario(network=net, detector=det, references=refs,
                            attacks=(attack,), auto_disconnect=True,
                            a_ref=5e4, seed=seed, **common)
        undefended = Scenario(network=net, references=refs, attacks=(attack,),
                              seed=seed, **common)
        return Preset(name, [("fig7-defended", defended),
                             ("fig7-undefended", undefended)],
                      feeder=spec, threshold=defended.threshold)

    # fig8
    gains = retrofit_benchmark_gains(subs)
    det = build_retrofit_detector(subs, topo, gains)
    sc = Scenario(network=net, detector=det, references=refs, seed=seed,
                  disconnections=((5.0, frozenset({2, 3, 4})),),
                  initial_error_scale=100.0, **common)
    return Preset(name, [("fig8", sc)], feeder=spec, threshold=sc.threshold)
