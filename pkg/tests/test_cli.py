"""End-to-end command-line behavior and exit codes."""

import numpy as np
import pytest

from conftest import scalar_riccati_oracle

from retrofit_sentinel.cli import EXIT_FAIL, EXIT_INPUT, EXIT_OK, main
from retrofit_sentinel.detector import (build_naive_observer, load_detector,
                                        save_detector)
from retrofit_sentinel.distflow import default_feeder, feeder_network
from retrofit_sentinel.netsys import (InterconnectedNetwork, Subsystem,
                                      Topology, save_network)
from retrofit_sentinel.simkit import Scenario, StepAttack, save_scenario


def scalar_block(a=-1.0):
    return Subsystem(a=[[a]], l=[[1.0]], b=[[1.0]], w_c=[[1.0]], w_z=[[0.0]],
                     w_u=[[0.0]], y_c=[[1.0]], y_e=[[0.0]], y_d=[[0.0]])


def write_benchmark(tmp_path):
    path = tmp_path / "net.json"
    save_network(feeder_network(default_feeder()), path)
    return path


def write_marginal_pair(tmp_path):
    # symmetric unit coupling of two -1 blocks puts a closed-loop
    # eigenvalue exactly at zero
    net = InterconnectedNetwork(
        (scalar_block(), scalar_block()),
        Topology(2, {(0, 1): [[1.0]], (1, 0): [[1.0]]}))
    path = tmp_path / "marginal.json"
    save_network(net, path)
    return path


def write_latency_scenario(tmp_path):
    net = InterconnectedNetwork((scalar_block(), scalar_block()),
                                Topology(2, {}))
    det = build_naive_observer(net.subsystems, net.topology,
                               [[[-1.0]], [[-1.0]]])
    scn = Scenario(net, detector=det, attacks=(StepAttack(1, 1.0, 0.05),),
                   auto_disconnect=True, threshold=0.5, horizon=0.6,
                   step=1e-3)
    save_network(net, tmp_path / "net.json")
    save_detector(det, tmp_path / "det.json")
    path = tmp_path / "latency.json"
    save_scenario(scn, path, "net.json", "det.json")
    return path


class TestVerify:
    def test_benchmark_passes_with_full_enumeration(self, tmp_path, capsys):
        code = main(["verify", "--network", str(write_benchmark(tmp_path))])
        out = capsys.readouterr().out
        lines = out.strip().splitlines()
        assert code == EXIT_OK
        assert sum(1 for ln in lines if ln.startswith("subset ")) == 32
        assert lines[-1].startswith("PASS")
        assert "32 subsets" in lines[-1]
        assert all(" ok" in ln for ln in lines if ln.startswith("subset "))

    def test_marginal_network_fails_with_zero_abscissa(self, tmp_path, capsys):
        code = main(["verify", "--network",
                     str(write_marginal_pair(tmp_path))])
        out = capsys.readouterr().out
        assert code == EXIT_FAIL
        assert "subset {1,2}: abscissa 0.000000e+00 well-posed yes FAIL" in out
        assert out.strip().splitlines()[-1].startswith("FAIL")

    def test_margin_override_tightens_the_check(self, tmp_path, capsys):
        code = main(["verify", "--network", str(write_benchmark(tmp_path)),
                     "--margin", "3.0"])
        capsys.readouterr()
        assert code == EXIT_FAIL

    def test_malformed_network_is_an_input_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        code = main(["verify", "--network", str(bad)])
        assert code == EXIT_INPUT
        assert "cannot read network" in capsys.readouterr().err

    def test_missing_network_is_an_input_error(self, tmp_path, capsys):
        code = main(["verify", "--network", str(tmp_path / "nope.json")])
        capsys.readouterr()
        assert code == EXIT_INPUT

    def test_detector_identity_lines(self, tmp_path, capsys):
        net_path = write_benchmark(tmp_path)
        det_path = tmp_path / "det.json"
        assert main(["design", "--network", str(net_path),
                     "--out", str(det_path)]) == EXIT_OK
        capsys.readouterr()
        code = main(["verify", "--network", str(net_path),
                     "--detector", str(det_path)])
        out = capsys.readouterr().out
        assert code == EXIT_OK
        for k in range(1, 6):
            assert f"subsystem {k}: identity ok" in out
        assert "gain-stable yes" in out

    def test_destabilizing_gains_fail_verification(self, tmp_path, capsys):
        net_path = write_benchmark(tmp_path)
        net = feeder_network(default_feeder())
        det = build_naive_observer(net.subsystems, net.topology,
                                   [[[5.0]] for _ in range(5)])
        det_path = tmp_path / "hot.json"
        save_detector(det, det_path)
        code = main(["verify", "--network", str(net_path),
                     "--detector", str(det_path)])
        out = capsys.readouterr().out
        assert code == EXIT_FAIL
        assert "gain-stable no" in out


class TestDesign:
    def test_scalar_gain_matches_the_filter_riccati(self, tmp_path, capsys):
        net = InterconnectedNetwork((scalar_block(),), Topology(1, {}))
        net_path = tmp_path / "one.json"
        save_network(net, net_path)
        det_path = tmp_path / "det.json"
        code = main(["design", "--network", str(net_path),
                     "--out", str(det_path)])
        out = capsys.readouterr().out
        assert code == EXIT_OK
        assert "observer poles [-1.41421" in out
        assert f"wrote {det_path}" in out
        det = load_detector(det_path, net.subsystems, net.topology)
        want = -scalar_riccati_oracle(-1.0, 1.0, 1.0, 1.0)
        assert det.gains[0][0, 0] == pytest.approx(want, abs=1e-10)
        assert det.variant == "retrofit"

    def test_weight_flags_shape_the_gain(self, tmp_path, capsys):
        net = InterconnectedNetwork((scalar_block(),), Topology(1, {}))
        net_path = tmp_path / "one.json"
        save_network(net, net_path)
        det_path = tmp_path / "det.json"
        code = main(["design", "--network", str(net_path),
                     "--out", str(det_path), "--state-weight", "4.0"])
        capsys.readouterr()
        assert code == EXIT_OK
        det = load_detector(det_path, net.subsystems, net.topology)
        want = -scalar_riccati_oracle(-1.0, 1.0, 4.0, 1.0)
        assert det.gains[0][0, 0] == pytest.approx(want, abs=1e-10)

    def test_design_refuses_fragile_networks(self, tmp_path, capsys):
        code = main(["design", "--network",
                     str(write_marginal_pair(tmp_path)),
                     "--out", str(tmp_path / "det.json")])
        err = capsys.readouterr().err
        assert code == EXIT_FAIL
        assert "fails disconnection verification" in err
        assert not (tmp_path / "det.json").exists()

    def test_unreadable_network_is_an_input_error(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("[]")
        code = main(["design", "--network", str(bad),
                     "--out", str(tmp_path / "det.json")])
        capsys.readouterr()
        assert code == EXIT_INPUT


class TestSimulate:
    def test_requires_exactly_one_source(self, tmp_path, capsys):
        assert main(["simulate"]) == EXIT_INPUT
        scn = write_latency_scenario(tmp_path)
        assert main(["simulate", "--scenario", str(scn),
                     "--preset", "fig2"]) == EXIT_INPUT
        capsys.readouterr()

    def test_scenario_run_reports_events(self, tmp_path, capsys):
        scn = write_latency_scenario(tmp_path)
        out_dir = tmp_path / "out"
        code = main(["simulate", "--scenario", str(scn),
                     "--out", str(out_dir)])
        out = capsys.readouterr().out
        assert code == EXIT_OK
        assert (out_dir / "latency.csv").exists()
        assert "latency: detections subsystem 2 at t=" in out
        assert "latency: disconnected {2} at t=" in out

    def test_preset_runs_are_byte_stable(self, tmp_path, capsys):
        for sub in ("a", "b"):
            code = main(["simulate", "--preset", "fig8", "--step", "0.02",
                         "--out", str(tmp_path / sub)])
            assert code == EXIT_OK
        capsys.readouterr()
        a = (tmp_path / "a" / "fig8.csv").read_bytes()
        b = (tmp_path / "b" / "fig8.csv").read_bytes()
        assert a == b

    def test_variant_filter_selects_matching_runs(self, tmp_path, capsys):
        out_dir = tmp_path / "out"
        code = main(["simulate", "--preset", "fig6", "--step", "0.05",
                     "--variant", "retrofit", "--out", str(out_dir)])
        capsys.readouterr()
        assert code == EXIT_OK
        assert (out_dir / "fig6-retrofit.csv").exists()
        assert not (out_dir / "fig6-no-feedback.csv").exists()

    def test_variant_without_match_is_an_input_error(self, tmp_path, capsys):
        code = main(["simulate", "--preset", "fig6", "--step", "0.05",
                     "--variant", "naive", "--out", str(tmp_path)])
        err = capsys.readouterr().err
        assert code == EXIT_INPUT
        assert "no runs match" in err

    def test_unknown_preset_is_rejected_by_the_parser(self, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["simulate", "--preset", "fig99"])
        assert exc.value.code == 2

    def test_missing_scenario_is_an_input_error(self, tmp_path, capsys):
        code = main(["simulate", "--scenario", str(tmp_path / "nope.json")])
        capsys.readouterr()
        assert code == EXIT_INPUT


class TestReport:
    def test_detector_preset_emits_all_artifacts(self, tmp_path, capsys):
        sim_dir = tmp_path / "sim"
        assert main(["simulate", "--preset", "fig6", "--step", "0.05",
                     "--out", str(sim_dir)]) == EXIT_OK
        capsys.readouterr()
        rep_dir = tmp_path / "rep"
        code = main(["report", str(sim_dir / "fig6-retrofit.csv"),
                     str(sim_dir / "fig6-no-feedback.csv"),
                     "--preset", "fig6", "--out", str(rep_dir)])
        out = capsys.readouterr().out
        assert code == EXIT_OK
        for suffix in ("series.csv", "events.csv", "residuals.csv",
                       "residuals.png", "voltages.csv", "voltages.png"):
            assert (rep_dir / f"fig6-{suffix}").exists()
        assert out.count("wrote ") == 6
        header = (rep_dir / "fig6-series.csv").read_text().splitlines()[0]
        assert header == "label,t,series,value"

    def test_plant_only_preset_skips_residual_artifacts(self, tmp_path,
                                                        capsys):
        sim_dir = tmp_path / "sim"
        assert main(["simulate", "--preset", "fig2", "--step", "0.05",
                     "--out", str(sim_dir)]) == EXIT_OK
        rep_dir = tmp_path / "rep"
        code = main(["report", str(sim_dir / "fig2.csv"),
                     "--preset", "fig2", "--out", str(rep_dir)])
        capsys.readouterr()
        assert code == EXIT_OK
        assert (rep_dir / "fig2-series.csv").exists()
        assert (rep_dir / "fig2-events.csv").exists()
        assert (rep_dir / "fig2-voltages.csv").exists()
        assert not (rep_dir / "fig2-residuals.csv").exists()
        assert not (rep_dir / "fig2-residuals.png").exists()

    def test_requires_traces(self, capsys):
        assert main(["report"]) == EXIT_INPUT
        assert "at least one trace" in capsys.readouterr().err

    def test_missing_trace_is_an_input_error(self, tmp_path, capsys):
        code = main(["report", str(tmp_path / "nope.csv")])
        err = capsys.readouterr().err
        assert code == EXIT_INPUT
        assert "cannot read trace" in err

    def test_bare_trace_without_feeder_gets_minimal_outputs(self, tmp_path,
                                                            capsys):
        net = InterconnectedNetwork((scalar_block(), scalar_block()),
                                    Topology(2, {}))
        scn = Scenario(net, references={0: [1.0]},
                       disconnections=((0.25, {1}),), horizon=0.5, step=1e-2)
        save_network(net, tmp_path / "net.json")
        save_scenario(scn, tmp_path / "plain.json", "net.json")
        sim_dir = tmp_path / "sim"
        assert main(["simulate", "--scenario", str(tmp_path / "plain.json"),
                     "--out", str(sim_dir)]) == EXIT_OK
        rep_dir = tmp_path / "rep"
        code = main(["report", str(sim_dir / "plain.csv"),
                     "--name", "bare", "--out", str(rep_dir)])
        capsys.readouterr()
        assert code == EXIT_OK
        assert sorted(p.name for p in rep_dir.iterdir()) == \
            ["bare-events.csv", "bare-series.csv"]
        events = (rep_dir / "bare-events.csv").read_text().splitlines()
        assert events[0] == "label,t,event"
        assert events[1] == "plain,0.25,disconnect:2"
