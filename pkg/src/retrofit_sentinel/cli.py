"""Command-line entry point: verify, design, simulate, report.

Exit codes: 0 success, 1 verification failure, 2 unreadable or invalid
input. Subset ids, subsystem ids, and customer ids are 1-based in all
printed and written artifacts.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .lti import HURWITZ_MARGIN, design_observer_gain, eigenvalues
from .netsys import load_network, verify_disconnection_resilience
from .detector import (build_naive_observer, build_retrofit_detector,
                       canonical_variant, load_detector, save_detector,
                       verify_retrofit_condition)
from .simkit import TraceLog, load_scenario, simulate
from .distflow import load_feeder
from .presets import PRESET_NAMES, build_preset
from .report import render_report

EXIT_OK = 0
EXIT_FAIL = 1
EXIT_INPUT = 2


@dataclass
class RunConfig:
    """Parsed invocation: subcommand, input paths, output target, overrides."""

    command: str
    network: Path | None = None
    detector: Path | None = None
    scenario: Path | None = None
    feeder: Path | None = None
    preset: str | None = None
    traces: tuple = ()
    out: Path = Path(".")
    name: str | None = None
    seed: int | None = None
    step: float | None = None
    threshold: float | None = None
    margin: float = HURWITZ_MARGIN
    state_weight: float = 1.0
    output_weight: float = 1.0
    variant: str | None = None
    disconnect_mode: str | None = None


def _fmt_subset(subset) -> str:
    return "{" + ",".join(str(i + 1) for i in subset) + "}"


def _load_inputs(loader, *args):
    """Run a loader, mapping any failure to the input-error exit code."""
    try:
        return loader(*args), None
    except (OSError, json.JSONDecodeError, KeyError, TypeError,
            ValueError) as exc:
        return None, f"{exc}"


def cmd_verify(cfg: RunConfig) -> int:
    """Exhaustive subset stability check, plus detector identity checks."""
    if cfg.network is None:
        print("verify requires --network", file=sys.stderr)
        return EXIT_INPUT
    net, err = _load_inputs(load_network, cfg.network)
    if err:
        print(f"cannot read network: {err}", file=sys.stderr)
        return EXIT_INPUT
    detector = None
    if cfg.detector is not None:
        detector, err = _load_inputs(load_detector, cfg.detector,
                                     net.subsystems, net.topology, net.active)
        if err:
            print(f"cannot read detector: {err}", file=sys.stderr)
            return EXIT_INPUT

    report = verify_disconnection_resilience(net, margin=cfg.margin)
    for subset in sorted(report.abscissae, key=lambda s: (len(s), s)):
        absc = report.abscissae[subset]
        posed = report.well_posed[subset]
        ok = posed and absc < -cfg.margin
        print(f"subset {_fmt_subset(subset)}: abscissa {absc:.6e} "
              f"well-posed {'yes' if posed else 'no'} "
              f"{'ok' if ok else 'FAIL'}")
    failed = not report.passed

    if detector is not None:
        for k, (sub, gain) in enumerate(zip(net.subsystems, detector.gains)):
            if k not in net.active:
                continue
            res = verify_retrofit_condition(sub, gain)
            ok = res.identity_ok and res.q_stable
            print(f"subsystem {k + 1}: identity "
                  f"{'ok' if res.identity_ok else 'FAIL'} "
                  f"max-markov {res.max_markov:.3e} "
                  f"gain-stable {'yes' if res.q_stable else 'no'}")
            failed = failed or not ok

    print(("FAIL" if failed else "PASS") +
          f" ({len(report.abscissae)} subsets, margin {cfg.margin:g})")
    return EXIT_FAIL if failed else EXIT_OK


def cmd_design(cfg: RunConfig) -> int:
    """Design per-subsystem observer gains and write a detector file."""
    if cfg.network is None:
        print("design requires --network", file=sys.stderr)
        return EXIT_INPUT
    net, err = _load_inputs(load_network, cfg.network)
    if err:
        print(f"cannot read network: {err}", file=sys.stderr)
        return EXIT_INPUT
    report = verify_disconnection_resilience(net, margin=cfg.margin)
    if not report.passed:
        sub, absc = report.worst
        print(f"network fails disconnection verification "
              f"(subset {_fmt_subset(sub)}, abscissa {absc:.6e})",
              file=sys.stderr)
        return EXIT_FAIL

    gains = []
    for k, sub in enumerate(net.subsystems):
        try:
            h = design_observer_gain(
                sub.a, sub.y_c,
                state_weight=cfg.state_weight * np.eye(sub.n_x),
                output_weight=cfg.output_weight * np.eye(sub.n_y))
        except ValueError as exc:
            print(f"subsystem {k + 1}: {exc}", file=sys.stderr)
            return EXIT_FAIL
        gains.append(h)
        poles = eigenvalues(sub.a + h @ sub.y_c).eigenvalues
        shown = ", ".join(f"{z.real:.6g}{z.imag:+.6g}j" if z.imag else
                          f"{z.real:.6g}" for z in poles)
        print(f"subsystem {k + 1}: observer poles [{shown}]")

    detector = build_retrofit_detector(net.subsystems, net.topology, gains,
                                       net.active)
    out = cfg.out if str(cfg.out) != "." else Path("detector.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_detector(detector, out)
    print(f"wrote {out}")
    return EXIT_OK


def _with_variant(scenario, variant):
    """Rebuild the scenario's detector under a different variant."""
    net = scenario.network
    blocks = net.subsystems
    if variant == "retrofit":
        gains = scenario.detector.gains if scenario.detector else None
        det = build_retrofit_detector(blocks, net.topology, gains, net.active)
    else:
        if variant == "no-feedback" or scenario.detector is None:
            gains = [np.zeros((s.n_x, s.n_y)) for s in blocks]
        else:
            gains = scenario.detector.gains
        det = build_naive_observer(blocks, net.topology, gains, net.active)
    return replace(scenario, detector=det)


def cmd_simulate(cfg: RunConfig) -> int:
    """Run scenario or preset simulations and write trace CSVs."""
    if (cfg.scenario is None) == (cfg.preset is None):
        print("simulate requires exactly one of --scenario or --preset",
              file=sys.stderr)
        return EXIT_INPUT
    try:
        if cfg.preset is not None:
            preset = build_preset(cfg.preset, disconnect_mode=cfg.disconnect_mode,
                                  seed=cfg.seed)
            runs = preset.runs
        else:
            scenario, err = _load_inputs(load_scenario, cfg.scenario)
            if err:
                print(f"cannot read scenario: {err}", file=sys.stderr)
                return EXIT_INPUT
            runs = [(Path(cfg.scenario).stem, scenario)]

        labeled = []
        for label, sc in runs:
            overrides = {}
            if cfg.seed is not None:
                overrides["seed"] = cfg.seed
            if cfg.step is not None:
                overrides["step"] = cfg.step
            if cfg.threshold is not None:
                overrides["threshold"] = cfg.threshold
            if cfg.disconnect_mode is not None and cfg.preset is None:
                overrides["disconnect_mode"] = cfg.disconnect_mode
            if overrides:
                sc = replace(sc, **overrides)
            if cfg.variant is not None:
                want = canonical_variant(cfg.variant)
                if cfg.preset is not None:
                    if sc.detector is None or sc.detector.variant != want:
                        continue
                else:
                    sc = _with_variant(sc, want)
            labeled.append((label, sc))
        if not labeled:
            print("no runs match the requested variant", file=sys.stderr)
            return EXIT_INPUT
    except ValueError as exc:
        print(f"{exc}", file=sys.stderr)
        return EXIT_INPUT

    out_dir = Path(cfg.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    for label, sc in labeled:
        trace = simulate(sc)
        path = out_dir / f"{label}.csv"
        trace.write_csv(path)
        print(f"{label}: wrote {path}")
        if trace.detections:
            found = ", ".join(f"subsystem {i + 1} at t={t:g}"
                              for i, t in sorted(trace.detections.items()))
            print(f"{label}: detections {found}")
        else:
            print(f"{label}: detections none")
        for t_ev, removed in trace.disconnections:
            print(f"{label}: disconnected {_fmt_subset(removed)} at t={t_ev:g}")
        if trace.diverged:
            print(f"{label}: divergence at t={trace.divergence_time:g}")
    return EXIT_OK


def cmd_report(cfg: RunConfig) -> int:
    """Emit plot data and figures from previously written traces."""
    if not cfg.traces:
        print("report requires at least one trace CSV", file=sys.stderr)
        return EXIT_INPUT
    runs = []
    for path in cfg.traces:
        trace, err = _load_inputs(TraceLog.read_csv, path)
        if err:
            print(f"cannot read trace {path}: {err}", file=sys.stderr)
            return EXIT_INPUT
        runs.append((Path(path).stem, trace))

    feeder = None
    threshold = cfg.threshold
    mode = cfg.disconnect_mode or "subsystem"
    name = cfg.name
    if cfg.preset is not None:
        try:
            preset = build_preset(cfg.preset, disconnect_mode=cfg.disconnect_mode)
        except ValueError as exc:
            print(f"{exc}", file=sys.stderr)
            return EXIT_INPUT
        feeder = preset.feeder
        if threshold is None:
            threshold = preset.threshold
        if name is None:
            name = preset.name
        if cfg.preset == "fig7" and cfg.disconnect_mode is None:
            mode = "dg-only"
    if cfg.feeder is not None:
        feeder, err = _load_inputs(load_feeder, cfg.feeder)
        if err:
            print(f"cannot read feeder: {err}", file=sys.stderr)
            return EXIT_INPUT
    try:
        written = render_report(runs, cfg.out, name or "report",
                                threshold=threshold, feeder=feeder,
                                disconnect_mode=mode)
    except ValueError as exc:
        print(f"{exc}", file=sys.stderr)
        return EXIT_INPUT
    for path in written:
        print(f"wrote {path}")
    return EXIT_OK


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="retrofit-sentinel",
        description="Disconnection-aware attack detection toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    pv = sub.add_parser("verify", help="exhaustive subset stability check")
    pv.add_argument("--network", type=Path, required=True)
    pv.add_argument("--detector", type=Path)
    pv.add_argument("--margin", type=float, default=HURWITZ_MARGIN)

    pd = sub.add_parser("design", help="design observer gains")
    pd.add_argument("--network", type=Path, required=True)
    pd.add_argument("--out", type=Path, default=Path("detector.json"))
    pd.add_argument("--margin", type=float, default=HURWITZ_MARGIN)
    pd.add_argument("--state-weight", type=float, default=1.0)
    pd.add_argument("--output-weight", type=float, default=1.0)

    ps = sub.add_parser("simulate", help="run a scenario or preset")
    ps.add_argument("--scenario", type=Path)
    ps.add_argument("--preset", choices=PRESET_NAMES)
    ps.add_argument("--out", type=Path, default=Path("."))
    ps.add_argument("--seed", type=int)
    ps.add_argument("--step", type=float)
    ps.add_argument("--threshold", type=float)
    ps.add_argument("--variant", choices=("naive", "nofb", "retrofit"))
    ps.add_argument("--disconnect-mode", choices=("subsystem", "dg-only"))

    pr = sub.add_parser("report", help="emit plot data from traces")
    pr.add_argument("traces", nargs="*", type=Path)
    pr.add_argument("--preset", choices=PRESET_NAMES)
    pr.add_argument("--feeder", type=Path)
    pr.add_argument("--out", type=Path, default=Path("."))
    pr.add_argument("--name")
    pr.add_argument("--threshold", type=float)
    pr.add_argument("--disconnect-mode", choices=("subsystem", "dg-only"))
    return p


def _config(args: argparse.Namespace) -> RunConfig:
    fields = {f for f in RunConfig.__dataclass_fields__}
    picked = {k: v for k, v in vars(args).items()
              if k in fields and v is not None}
    if "traces" in vars(args) and args.traces is not None:
        picked["traces"] = tuple(args.traces)
    return RunConfig(**picked)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    cfg = _config(args)
    handlers = {"verify": cmd_verify, "design": cmd_design,
                "simulate": cmd_simulate, "report": cmd_report}
    return handlers[cfg.command](cfg)


if __name__ == "__main__":
    sys.exit(main())
