"""Config parsing, process runs at desk scale, verification suite, sweeps, CLI."""

import json
import math

import numpy as np
import pytest
import yaml

import fermiproc.harness as harness
from fermiproc.harness import (ConfigError, DriveConfig, GibbsConfig, KernelConfig,
                               IntegratorConfig, LatticeConfig, OutputConfig,
                               RunConfig, execute_run, load_config, manifest_passed,
                               parse_config, recurrence_window, run_process_I,
                               run_process_II, run_sweep, run_verify, time_grid)
from fermiproc.storage import (format_float, load_operator, read_series_csv,
                               save_operator, write_series_csv)

KERNEL = [[0.6, 0.3], [0.3, -0.5]]


def small_process1_config(tmp_path=None, path="quadratic", L=40):
    lo = L // 2 - 1
    return RunConfig(
        lattice=LatticeConfig(L=L, boundary="dirichlet", local_region=[lo, lo + 1]),
        gibbs=GibbsConfig(beta=1.0, mu=0.0),
        drive=DriveConfig(type="switch_on", amplitude=0.08, tau_r=1.0,
                          kernels=[KernelConfig(1, [lo, lo + 1], KERNEL)]),
        path=path,
        integrator=IntegratorConfig(tol=1e-8),
        output=OutputConfig(grid_step=0.05,
                            directory=str(tmp_path) if tmp_path else None),
        seed=7,
    )


# -- config ------------------------------------------------------------------

def test_parse_config_roundtrip():
    data = {
        "lattice": {"L": 6, "boundary": "periodic", "local_region": [2, 3]},
        "gibbs": {"beta": 1.5, "mu": -0.2},
        "drive": {"type": "switch_on", "amplitude": 0.1, "tau_r": 0.5,
                  "kernels": [{"degree": 1, "sites": [2, 3], "coeffs": KERNEL}]},
        "path": "exact",
        "integrator": {"tol": 1e-9},
        "output": {"grid_step": 0.1, "t_final": 1.0},
        "seed": 3,
    }
    cfg = parse_config(data)
    assert cfg.lattice.L == 6
    assert cfg.drive.kernels[0].sites == [2, 3]
    assert cfg.integrator.dyson_order == 8  # default preserved


def test_unknown_keys_rejected():
    with pytest.raises(ConfigError, match="unknown"):
        parse_config({"lattice": {"L": 4}, "gibbs": {"beta": 1.0}, "bogus": 1})
    with pytest.raises(ConfigError, match="unknown"):
        parse_config({"lattice": {"L": 4, "sites": 3}, "gibbs": {"beta": 1.0}})


def test_required_sections():
    with pytest.raises(ConfigError, match="requires"):
        parse_config({"lattice": {"L": 4}})


def test_path_site_cap():
    with pytest.raises(ConfigError, match="exact path"):
        parse_config({"lattice": {"L": 32}, "gibbs": {"beta": 1.0}, "path": "exact"})


def test_both_path_needs_small_lattice():
    with pytest.raises(ConfigError, match="both"):
        parse_config({"lattice": {"L": 10}, "gibbs": {"beta": 1.0}, "path": "both"})


def test_quadratic_path_rejects_interaction_kernels():
    with pytest.raises(ConfigError, match="degree-1"):
        parse_config({
            "lattice": {"L": 8},
            "gibbs": {"beta": 1.0},
            "path": "quadratic",
            "drive": {"type": "switch_on", "amplitude": 0.1, "tau_r": 1.0,
                      "kernels": [{"degree": 2, "sites": [3, 4],
                                   "coeffs": np.zeros((2, 2, 2, 2)).tolist()}]},
        })


def test_load_config_yaml(tmp_path):
    text = """
lattice:
  L: 5
  boundary: dirichlet
gibbs:
  beta: 1.0
path: exact
output:
  grid_step: 0.2
"""
    p = tmp_path / "cfg.yaml"
    p.write_text(text)
    cfg = load_config(p)
    assert cfg.lattice.L == 5
    assert cfg.output.grid_step == 0.2


def test_recurrence_window():
    assert recurrence_window(200) == pytest.approx(0.8 * 200 / 2.0)


def test_dyson_integrator_matches_direct():
    # the configured interaction-picture integrator reproduces the direct one
    from fermiproc.harness import exact_trajectory, lattice_spec, build_protocol
    from fermiproc.states import GibbsParams
    cfg = RunConfig(
        lattice=LatticeConfig(L=4, local_region=[1, 2]),
        gibbs=GibbsConfig(beta=1.1, mu=0.1),
        drive=DriveConfig(type="switch_on", amplitude=0.05, tau_r=0.4,
                          kernels=[KernelConfig(1, [1, 2], KERNEL)]),
        integrator=IntegratorConfig(tol=1e-10, method="dyson", dyson_order=10),
    )
    spec = lattice_spec(cfg)
    params = GibbsParams(1.1, 0.1)
    protocol = build_protocol(cfg, spec)
    times = time_grid(0.0, 0.8, 0.1)
    t_dyson = exact_trajectory(spec, params, protocol, times, 1e-10,
                               method="dyson", dyson_order=10)
    t_direct = exact_trajectory(spec, params, protocol, times, 1e-10)
    for rd, rx in zip(t_dyson.records, t_direct.records):
        assert abs(rd.S - rx.S) <= 1e-7
        assert abs(rd.U - rx.U) <= 1e-7


def test_integrator_method_validated():
    with pytest.raises(ConfigError, match="method"):
        parse_config({"lattice": {"L": 4}, "gibbs": {"beta": 1.0},
                      "integrator": {"method": "rk4"}})


def test_time_grid_validation():
    with pytest.raises(ConfigError):
        time_grid(0.0, 0.01, 0.5)


# -- process I ----------------------------------------------------------------

def test_process1_small_quadratic(tmp_path):
    cfg = small_process1_config(tmp_path)
    result = run_process_I(cfg)
    m = result.manifest
    assert "process1_decay_ratio" in m["invariants"]
    assert m["invariants"]["entropy_monotone_start"]["passed"]
    assert m["invariants"]["relative_entropy_positive"]["passed"]
    assert (tmp_path / "series.csv").exists()
    assert (tmp_path / "manifest.json").exists()
    # determinism: identical config gives bit-identical CSV
    first = (tmp_path / "series.csv").read_bytes()
    run_process_I(cfg)
    assert (tmp_path / "series.csv").read_bytes() == first


def test_process1_zero_amplitude_flat():
    cfg = small_process1_config()
    cfg.drive.amplitude = 0.0
    result = run_process_I(cfg)
    recs = result.records["quadratic"]
    assert max(r.D_probe for r in recs) <= 1e-9
    assert max(abs(r.Sdot) for r in recs) <= 1e-12


def test_process1_rejects_short_window():
    cfg = small_process1_config(L=10)
    cfg.drive.tau_r = 2.0  # window 0.4*10 = 4 < 3*tau_r = 6
    with pytest.raises(ConfigError, match="enlarge L"):
        run_process_I(cfg)


def test_process1_requires_switch_on():
    cfg = small_process1_config()
    cfg.drive.type = "periodic"
    cfg.drive.period = 1.0
    with pytest.raises(ConfigError, match="switch_on"):
        run_process_I(cfg)


def test_process1_manifest_notes_window():
    cfg = small_process1_config()
    result = run_process_I(cfg)
    assert "recurrence window" in result.manifest["notes"]["recurrence_window"]


# -- process II -----------------------------------------------------------------

def test_process2_small_quadratic():
    cfg = small_process1_config(L=48)
    cfg.drive = DriveConfig(type="periodic", amplitude=0.08, period=1.6,
                            waveform="sin",
                            kernels=[KernelConfig(1, [23, 24], KERNEL)])
    result = run_process_II(cfg)
    m = result.manifest
    d_seq = m["summary"]["cycle_distances"]
    assert len(d_seq) >= 3
    assert "process2_cycle_ratio" in m["invariants"]
    assert "process2_spearman" in m["invariants"]


def test_process2_zero_amplitude():
    cfg = small_process1_config(L=48)
    cfg.drive = DriveConfig(type="periodic", amplitude=0.0, period=1.6,
                            kernels=[KernelConfig(1, [23, 24], KERNEL)])
    result = run_process_II(cfg)
    assert max(result.manifest["summary"]["cycle_distances"]) <= 1e-9
    assert result.manifest["invariants"]["process2_cycle_ratio"]["passed"]
    assert result.manifest["invariants"]["process2_spearman"]["passed"]


def test_process2_rejects_long_period():
    cfg = small_process1_config(L=20)  # window 8
    cfg.drive = DriveConfig(type="periodic", amplitude=0.05, period=3.0,
                            kernels=[KernelConfig(1, [9, 10], KERNEL)])
    with pytest.raises(ConfigError, match="periods"):
        run_process_II(cfg)


def test_process2_phase_decomposition():
    from fermiproc.drive import decompose_period
    rng = np.random.default_rng(5)
    for _ in range(20):
        t = float(rng.uniform(0, 30))
        n, tau = decompose_period(t, 0.0, 1.6)
        assert 0 <= tau < 1.6


# -- both-path oracle ---------------------------------------------------------

def test_both_path_oracle_small(tmp_path):
    cfg = RunConfig(
        lattice=LatticeConfig(L=5, local_region=[1, 2]),
        gibbs=GibbsConfig(beta=1.2, mu=0.1),
        drive=DriveConfig(type="switch_on", amplitude=0.05, tau_r=0.25,
                          kernels=[KernelConfig(1, [1, 2], KERNEL)]),
        path="both",
        integrator=IntegratorConfig(tol=1e-9),
        output=OutputConfig(grid_step=0.05,
                            directory=str(tmp_path)),
        seed=1,
    )
    result = execute_run(cfg)
    assert result.manifest["invariants"]["oracle_equivalence"]["passed"]
    assert (tmp_path / "series_exact.csv").exists()
    assert (tmp_path / "series_quadratic.csv").exists()


# -- verification ----------------------------------------------------------------

@pytest.fixture(scope="module")
def verify_manifest():
    cfg = RunConfig(lattice=LatticeConfig(L=5), gibbs=GibbsConfig(beta=1.1, mu=0.2),
                    path="both", seed=11)
    return run_verify(cfg)


def test_verify_all_pass(verify_manifest):
    failed = [k for k, v in verify_manifest["invariants"].items() if not v["passed"]]
    assert not failed, f"failed invariants: {failed}"
    assert manifest_passed(verify_manifest)


def test_verify_covers_expected_suites(verify_manifest):
    names = set(verify_manifest["invariants"])
    for expected in ("car_relations", "propagator_unitarity", "cocycle_law",
                     "dyson_direct_agreement", "klein_positivity",
                     "entropy_rate_two_route", "first_law_residual",
                     "charge_conservation", "oracle_equivalence", "pauli_bounds",
                     "smallness_homogeneity"):
        assert expected in names


def test_verify_detects_corrupted_propagator(monkeypatch):
    # fault injection: a propagator that violates unitarity must be named
    import fermiproc.propagator as prop

    real_propagate = harness.propagate

    def corrupted(h, s, t, tol=1e-8, expm_method="auto"):
        out = real_propagate(h, s, t, tol, expm_method)
        bad = out.matrix.copy()
        bad[0, 0] += 1e-5
        return prop.Propagator(bad, out.t_start, out.t_end, out.method, out.est_error)

    monkeypatch.setattr(harness, "propagate", corrupted)
    cfg = RunConfig(lattice=LatticeConfig(L=4), gibbs=GibbsConfig(beta=1.0))
    manifest = run_verify(cfg)
    assert not manifest["invariants"]["propagator_unitarity"]["passed"]
    assert not manifest_passed(manifest)


# -- sweeps ----------------------------------------------------------------------

def test_sweep_beta(tmp_path):
    cfg = small_process1_config(tmp_path)
    index = run_sweep(cfg, "beta", [0.5, 1.0, 2.0])
    assert len(index["runs"]) == 3
    for outcome in index["runs"]:
        assert outcome["status"] == "ok"
        assert outcome["summary"]["delta_S_final"] >= -1e-8
    assert (tmp_path / "sweep_index.json").exists()
    assert (tmp_path / "beta_0.5" / "series.csv").exists()


def test_sweep_single_value_matches_single_run(tmp_path):
    cfg = small_process1_config(tmp_path / "sweep")
    index = run_sweep(cfg, "amplitude", [0.08])
    single = run_process_I(small_process1_config(tmp_path / "single"))
    swept = index["runs"][0]["summary"]["deviation_ratio"]
    assert swept == pytest.approx(single.manifest["summary"]["deviation_ratio"], rel=1e-12)


def test_sweep_records_child_failure(tmp_path):
    cfg = small_process1_config(tmp_path)
    cfg.drive.tau_r = 3.0
    # amplitude sweep at tau_r too long for the window: every child fails
    index = run_sweep(cfg, "amplitude", [0.05])
    assert index["runs"][0]["status"] == "error"
    assert "enlarge L" in index["runs"][0]["error"]


def test_sweep_axis_validation(tmp_path):
    cfg = small_process1_config()
    with pytest.raises(ConfigError, match="axis"):
        run_sweep(cfg, "temperature", [1.0])


# -- storage ----------------------------------------------------------------------

def test_operator_checkpoint_roundtrip(tmp_path, rng):
    a = rng.normal(size=(6, 6)) + 1j * rng.normal(size=(6, 6))
    path = tmp_path / "op.bin"
    save_operator(path, a)
    # layout: magic + two little-endian uint64 + interleaved little-endian doubles
    raw = path.read_bytes()
    assert raw[:4] == b"FPOP"
    assert int.from_bytes(raw[4:12], "little") == 6
    back = load_operator(path)
    assert np.array_equal(back, a)


def test_checkpoint_rejects_garbage(tmp_path):
    p = tmp_path / "x.bin"
    p.write_bytes(b"NOPE" + b"\0" * 16)
    with pytest.raises(ValueError, match="checkpoint"):
        load_operator(p)


def test_series_csv_roundtrip(tmp_path):
    from fermiproc.observables import ProcessRecord
    recs = [ProcessRecord(t=0.1 * k, U=1.0 / (k + 1), q=2.0, S=0.5, Sdot=1e-17,
                          relS=0.0, work=-0.25, G=3.3, D_probe=float("nan"))
            for k in range(3)]
    p = write_series_csv(tmp_path / "series.csv", recs)
    back = read_series_csv(p)
    assert len(back) == 3
    assert back[1].U == recs[1].U  # 17 significant digits round-trip doubles
    assert math.isnan(back[0].D_probe)


def test_format_float_17_digits():
    x = 1.0 / 3.0
    assert float(format_float(x)) == x


# -- CLI -------------------------------------------------------------------------

def write_cfg(tmp_path, **overrides):
    data = {
        "lattice": {"L": 40, "local_region": [19, 20]},
        "gibbs": {"beta": 1.0},
        "path": "quadratic",
        "output": {"grid_step": 0.05, "t_final": 2.0},
    }
    data.update(overrides)
    p = tmp_path / "cfg.yaml"
    p.write_text(yaml.safe_dump(data))
    return p


def test_cli_run(tmp_path, capsys):
    from fermiproc.cli import main
    cfg = write_cfg(tmp_path)
    code = main(["run", str(cfg), "--out", str(tmp_path / "out"), "--seed", "3"])
    out = capsys.readouterr().out
    assert code == 0
    assert "[PASS]" in out
    assert (tmp_path / "out" / "series.csv").exists()


def test_cli_config_error_exit_code(tmp_path, capsys):
    from fermiproc.cli import main
    p = tmp_path / "bad.yaml"
    p.write_text("lattice: {L: 99}\ngibbs: {beta: 1.0}\npath: exact\n")
    assert main(["run", str(p)]) == 2
    assert main(["run", str(tmp_path / "missing.yaml")]) == 2


def test_cli_norm(tmp_path, capsys):
    from fermiproc.cli import main
    kfile = tmp_path / "kern.json"
    kfile.write_text(json.dumps({
        "terms": [{"degree": 1, "sites": [0, 1],
                   "coeffs": [[1e-5, 0.0], [0.0, -1e-5]]}],
        "profile_terms": [{"profile": "hermite0", "ndim": 1, "amplitude": 1e-6}],
    }))
    code = main(["norm", str(kfile), "--points", "256"])
    out = capsys.readouterr().out
    assert code == 0
    assert "PASS" in out
    assert "1/(24*pi)" in out


def test_cli_sweep(tmp_path, capsys):
    from fermiproc.cli import main
    cfg = write_cfg(tmp_path)
    code = main(["sweep", str(cfg), "--axis", "beta", "--values", "0.8,1.2",
                 "--out", str(tmp_path / "sw")])
    assert code == 0
    assert (tmp_path / "sw" / "sweep_index.json").exists()


def test_cli_path_override(tmp_path, capsys):
    from fermiproc.cli import main
    cfg = write_cfg(tmp_path, lattice={"L": 5, "local_region": [1, 2]})
    code = main(["run", str(cfg), "--path", "both"])
    assert code == 0
    out = capsys.readouterr().out
    assert "oracle_equivalence" in out


def test_cli_failed_verdict_exit_code(tmp_path, capsys):
    # small-window process I cannot meet the reference decay bound; the run
    # completes, records the failed verdict, and exits 1
    from fermiproc.cli import main
    cfg = write_cfg(tmp_path, drive={
        "type": "switch_on", "amplitude": 0.08, "tau_r": 1.0,
        "kernels": [{"degree": 1, "sites": [19, 20], "coeffs": KERNEL}]},
        output={"grid_step": 0.05})
    assert main(["run", str(cfg)]) == 1
    assert "[FAIL]" in capsys.readouterr().out


def test_cli_verify(tmp_path, capsys):
    from fermiproc.cli import main
    cfg = write_cfg(tmp_path, lattice={"L": 4}, path="exact")
    code = main(["verify", str(cfg)])
    assert code == 0
    assert "[PASS] car_relations" in capsys.readouterr().out
