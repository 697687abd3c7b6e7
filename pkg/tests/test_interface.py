"""Configuration ingestion, scenario presets, snapshot files, and run
orchestration (plain and continuation modes), including the determinism
and manifest round-trip contracts."""

import os

import numpy as np
import pytest

from nschsurf.config import ConfigError, RunConfig, dump_config, load_config
from nschsurf.io import (SnapshotError, read_snapshot, write_snapshot,
                         SNAPSHOT_MAGIC)
from nschsurf.models import HypothesisError
from nschsurf.operators import div_face
from nschsurf.scenarios import ScenarioError, make_scenario
from nschsurf.diagnostics import read_ledger
from nschsurf.runner import run
from nschsurf import cli


def cfg_text(extra="", nx=12, t_final=2e-3, out="out"):
    return f"""
[grid]
nx = {nx}
ny = {nx}
[run]
t_final = {t_final}
[solver]
h = 1e-3
[output]
directory = {out}
{extra}
"""


class TestConfigParsing:
    def test_empty_text_gives_documented_defaults(self):
        c = load_config("")
        assert (c.nx, c.ny, c.lx, c.ly) == (64, 64, 1.0, 1.0)
        assert c.scenario == "spinodal" and c.mode == "nondegenerate"
        assert c.h == 1e-3 and c.threads == 1 and c.seed == 0
        assert c.mobility_phi == "constant" and c.epsilons == ()

    def test_oono_target_outside_interval_rejected(self):
        with pytest.raises(HypothesisError, match=r"H1.*\(-1, 1\)"):
            load_config("[model]\nc = 1.5\n")

    def test_negative_nonlocal_weight_rejected(self):
        with pytest.raises(HypothesisError, match="sigma2"):
            load_config("[model]\nsigma2 = -0.1\n")

    def test_unknown_key_is_hard_error_with_line(self):
        with pytest.raises(ConfigError, match="line 3: unknown key"):
            load_config("\n[model]\nrho_one = 1\n")

    def test_unknown_section_rejected(self):
        with pytest.raises(ConfigError, match=r"unknown section \[physics\]"):
            load_config("[physics]\nrho1 = 1\n")

    def test_key_outside_section_rejected(self):
        with pytest.raises(ConfigError, match="outside any"):
            load_config("nx = 4\n")

    def test_bad_value_names_line_and_key(self):
        with pytest.raises(ConfigError, match="line 2: bad value for grid.nx"):
            load_config("[grid]\nnx = twelve\n")

    def test_manifest_section_ignored(self):
        c = load_config("[grid]\nnx = 8\nny = 8\n"
                        "[manifest]\nstatus = ok\nwall_time_s = 1.0\n")
        assert c.nx == 8

    def test_dump_load_round_trip(self):
        c = load_config(cfg_text("[model]\nrho1 = 3\nsigma1_value = 0.5\n"
                                 "[scenario]\nkind = droplet\n"))
        assert load_config(dump_config(c)) == c

    def test_path_input(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text("[grid]\nnx = 24\nny = 8\n")
        c = load_config(str(p))
        assert (c.nx, c.ny) == (24, 8)

    def test_overrides_apply_in_order(self):
        c = load_config("[solver]\nh = 1e-3\n",
                        overrides=["solver.h=2e-3", "solver.h=4e-3",
                                   "grid.nx=16"])
        assert c.h == 4e-3 and c.nx == 16

    def test_malformed_override_rejected(self):
        with pytest.raises(ConfigError, match="section.key=value"):
            load_config("", overrides=["h=2e-3"])
        with pytest.raises(ConfigError, match="unknown key"):
            load_config("", overrides=["solver.dt=2e-3"])

    def test_enum_fields_validated(self):
        with pytest.raises(ConfigError, match="unknown scenario"):
            load_config("[scenario]\nkind = vortex\n")
        with pytest.raises(ConfigError, match="unknown mode"):
            load_config("[run]\nmode = limit\n")
        with pytest.raises(ConfigError, match="mobility kind"):
            load_config("[model]\nmobility_phi = linear\n")

    def test_droplet_surfactant_window_validated(self):
        with pytest.raises(ConfigError, match="psi_base"):
            load_config("[scenario]\nkind = droplet\npsi_base = 0.6\n"
                        "psi_boost = 0.5\n")

    def test_file_scenario_needs_paths(self):
        with pytest.raises(ConfigError, match="phi_file"):
            load_config("[scenario]\nkind = file\n")


class TestSnapshotFormat:
    def test_round_trip_bitwise(self, tmp_path):
        rng = np.random.default_rng(1)
        arr = rng.standard_normal((7, 5))
        arr[0, 0] = 0.1 + 0.2                 # awkward representations
        arr[1, 1] = np.pi
        p = tmp_path / "f.nsch"
        write_snapshot(p, arr, 2.0, 3.0)
        back, lx, ly = read_snapshot(p)
        assert np.array_equal(back, arr)
        assert (lx, ly) == (2.0, 3.0)

    def test_header_layout(self, tmp_path):
        p = tmp_path / "f.nsch"
        write_snapshot(p, np.zeros((3, 4)), 1.0, 1.0)
        raw = p.read_bytes()
        assert raw[:4] == SNAPSHOT_MAGIC
        assert int.from_bytes(raw[4:8], "little") == 1
        assert int.from_bytes(raw[8:12], "little") == 3
        assert int.from_bytes(raw[12:16], "little") == 4
        assert len(raw) == 32 + 8 * 12

    def test_malformed_files_rejected(self, tmp_path):
        p = tmp_path / "f.nsch"
        write_snapshot(p, np.ones((3, 3)), 1.0, 1.0)
        raw = bytearray(p.read_bytes())
        bad = tmp_path / "bad.nsch"
        bad.write_bytes(b"XXXX" + bytes(raw[4:]))
        with pytest.raises(SnapshotError, match="magic"):
            read_snapshot(bad)
        bad.write_bytes(bytes(raw[:-8]))
        with pytest.raises(SnapshotError, match="payload"):
            read_snapshot(bad)
        bad.write_bytes(bytes(raw[:20]))
        with pytest.raises(SnapshotError, match="truncated"):
            read_snapshot(bad)


class TestScenarios:
    def test_uniform_constants(self):
        c = load_config("[grid]\nnx = 8\nny = 8\n[scenario]\nkind = uniform\n"
                        "phi_mean = 0.2\npsi_mean = 0.4\n")
        st = make_scenario(c)
        assert np.all(st.phi.data == 0.2) and np.all(st.psi.data == 0.4)
        assert np.all(st.u.ux == 0.0) and np.all(st.u.uy == 0.0)

    def test_spinodal_deterministic_per_seed(self):
        c = load_config("[grid]\nnx = 16\nny = 16\n[run]\nseed = 9\n")
        a, b = make_scenario(c), make_scenario(c)
        assert np.array_equal(a.phi.data, b.phi.data)
        c2 = load_config("[grid]\nnx = 16\nny = 16\n[run]\nseed = 10\n")
        assert not np.array_equal(a.phi.data, make_scenario(c2).phi.data)

    def test_spinodal_amplitude_and_uniform_psi(self):
        c = load_config("[grid]\nnx = 16\nny = 16\n[scenario]\n"
                        "amplitude = 0.1\nphi_mean = 0.3\npsi_mean = 0.6\n")
        st = make_scenario(c)
        assert np.max(np.abs(st.phi.data - 0.3)) <= 0.1
        assert np.all(st.psi.data == 0.6)

    def test_droplet_area_fraction_oracle(self):
        # mean = (+1)*A + (-1)*(1-A) with A = pi r^2 / |Omega|
        c = load_config("[grid]\nnx = 128\nny = 128\n[scenario]\n"
                        "kind = droplet\nradius = 0.25\n")
        st = make_scenario(c)
        target = -1.0 + 2.0 * np.pi * 0.25 ** 2
        mean = float(np.mean(st.phi.data))
        assert abs(mean - target) <= 0.02 * abs(target)

    def test_droplet_profile_strictly_interior_and_boosted(self):
        c = load_config("[grid]\nnx = 64\nny = 64\n[scenario]\n"
                        "kind = droplet\npsi_base = 0.1\npsi_boost = 0.5\n")
        st = make_scenario(c)
        phi, psi = st.phi.data, st.psi.data
        assert np.max(np.abs(phi)) < 1.0
        assert 0.0 < np.min(psi) and np.max(psi) < 1.0
        # surfactant peaks where the phase crosses zero
        interface = np.abs(phi) < 0.2
        assert np.min(psi[interface]) > np.max(psi[~interface])

    def test_file_scenario_projects_velocity(self, tmp_path):
        nx = 16
        rng = np.random.default_rng(3)
        for name, shape in (("phi", (nx, nx)), ("psi", (nx, nx)),
                            ("ux", (nx + 1, nx)), ("uy", (nx, nx + 1))):
            data = {"phi": np.clip(0.1 * rng.standard_normal(shape), -0.5, 0.5),
                    "psi": np.full(shape, 0.5),
                    "ux": rng.standard_normal(shape),
                    "uy": rng.standard_normal(shape)}[name]
            write_snapshot(tmp_path / f"{name}.nsch", data, 1.0, 1.0)
        c = load_config(
            f"[grid]\nnx = {nx}\nny = {nx}\n[scenario]\nkind = file\n"
            f"phi_file = {tmp_path}/phi.nsch\npsi_file = {tmp_path}/psi.nsch\n"
            f"ux_file = {tmp_path}/ux.nsch\nuy_file = {tmp_path}/uy.nsch\n")
        st = make_scenario(c)
        div = div_face(st.grid, st.u.ux, st.u.uy)
        assert np.max(np.abs(div)) <= 1e-10
        assert np.max(np.abs(st.u.ux)) > 0.0

    def test_file_scenario_shape_mismatch(self, tmp_path):
        write_snapshot(tmp_path / "phi.nsch", np.zeros((8, 8)), 1.0, 1.0)
        write_snapshot(tmp_path / "psi.nsch", np.full((16, 16), 0.5), 1.0, 1.0)
        c = load_config(
            f"[grid]\nnx = 16\nny = 16\n[scenario]\nkind = file\n"
            f"phi_file = {tmp_path}/phi.nsch\npsi_file = {tmp_path}/psi.nsch\n")
        with pytest.raises(ScenarioError, match="does not match"):
            make_scenario(c)

    def test_out_of_interval_means_rejected(self):
        c = load_config("[grid]\nnx = 8\nny = 8\n[scenario]\nkind = uniform\n"
                        "phi_mean = 0.0\npsi_mean = 0.5\n")
        object.__setattr__(c, "phi_mean", 1.5)
        with pytest.raises((ScenarioError, ValueError)):
            make_scenario(c)


class TestRunner:
    def test_uniform_equilibrium_run(self, tmp_path):
        c = load_config(cfg_text("[scenario]\nkind = uniform\n"
                                 "phi_mean = 0.2\npsi_mean = 0.6\n",
                                 t_final=5e-3, out=tmp_path / "r"))
        res = run(c)
        assert res.exit_code == 0 and res.error == ""
        rows = read_ledger(res.ledgers[0])
        assert len(rows) == 6                 # t=0 plus five steps
        assert rows[0].time == 0.0 and rows[0].h == 0.0
        for row in rows[1:]:
            assert row.inequality_residual <= 1e-8 * (1 + abs(row.e_total))
        assert all(b.e_total <= a.e_total + 1e-12
                   for a, b in zip(rows, rows[1:]))

    def test_snapshots_written_at_stride(self, tmp_path):
        out = tmp_path / "r"
        c = load_config(cfg_text("[scenario]\nkind = uniform\n[output]\n"
                                 "snapshot_stride = 2\n", t_final=4e-3,
                                 out=out))
        run(c)
        names = sorted(f for f in os.listdir(out) if f.startswith("phi"))
        assert names == ["phi_000000.nsch", "phi_000002.nsch",
                         "phi_000004.nsch"]
        arr, lx, ly = read_snapshot(out / "phi_000004.nsch")
        assert arr.shape == (12, 12) and lx == 1.0

    def test_stride_zero_disables_snapshots(self, tmp_path):
        out = tmp_path / "r"
        c = load_config(cfg_text("[scenario]\nkind = uniform\n[output]\n"
                                 "snapshot_stride = 0\n", out=out))
        run(c)
        assert not [f for f in os.listdir(out) if f.endswith(".nsch")]

    def test_bitwise_determinism_across_runs(self, tmp_path):
        texts = [cfg_text("[scenario]\namplitude = 0.2\n[model]\n"
                          "coupling_gamma1 = 1.0\ncoupling_theta_phi = 0.4\n"
                          f"\n[run]\nseed = 7\nt_final = 3e-3\n",
                          out=tmp_path / tag) for tag in ("a", "b")]
        runs = [run(load_config(t)) for t in texts]
        la = open(runs[0].ledgers[0], "rb").read()
        lb = open(runs[1].ledgers[0], "rb").read()
        assert la == lb
        for f in sorted(os.listdir(runs[0].out_dir)):
            if f.endswith(".nsch"):
                assert (open(os.path.join(runs[0].out_dir, f), "rb").read()
                        == open(os.path.join(runs[1].out_dir, f), "rb").read())

    def test_manifest_echo_reloads_equal(self, tmp_path):
        c = load_config(cfg_text("[scenario]\nkind = uniform\n",
                                 out=tmp_path / "r"))
        res = run(c)
        text = open(res.manifest).read()
        assert load_config(text) == c
        assert "status = ok" in text
        assert "numpy_version" in text and "wall_time_s" in text

    def test_failure_recorded_in_manifest(self, tmp_path):
        c = load_config(cfg_text(
            "[scenario]\nkind = file\nphi_file = missing_phi.nsch\n"
            "psi_file = missing_psi.nsch\n", out=tmp_path / "r"))
        res = run(c)
        assert res.exit_code == 1
        assert "cannot load phi" in res.error
        text = open(res.manifest).read()
        assert "status = failed" in text and "error = " in text

    def test_continuation_artifact_contract(self, tmp_path):
        out = tmp_path / "cont"
        c = load_config(cfg_text(
            "[model]\nmobility_phi = polynomial-degenerate\n"
            "mobility_psi = polynomial-degenerate\n"
            "[scenario]\namplitude = 0.2\nphi_mean = 0.1\n"
            "[run]\nmode = continuation\nepsilons = 1e-1, 1e-2, 1e-3\n",
            t_final=2e-3, out=out))
        res = run(c)
        assert res.exit_code == 0
        assert len(res.ledgers) == 3
        for path in res.ledgers:
            assert os.path.exists(path)
            assert len(read_ledger(path)) == 3
        lines = open(res.summary).read().strip().split("\n")
        assert len(lines) == 4 and lines[0].startswith("epsilon,")
        assert "blowup_flags = none" in open(res.manifest).read()


class TestCli:
    def test_success_exit_zero(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text(cfg_text("[scenario]\nkind = uniform\n",
                              out=tmp_path / "r"))
        assert cli.main(["--config", str(p)]) == 0
        assert os.path.exists(tmp_path / "r" / "ledger.csv")

    def test_flag_shorthands_override_file(self, tmp_path):
        p = tmp_path / "run.cfg"
        p.write_text(cfg_text("[scenario]\nkind = uniform\n",
                              out=tmp_path / "ignored"))
        out = tmp_path / "real"
        code = cli.main(["--config", str(p), "--out", str(out),
                         "--seed", "11",
                         "--override", "solver.h=5e-4"])
        assert code == 0
        text = open(out / "manifest.txt").read()
        assert "seed = 11" in text
        assert "h = 0.00050000000000000001" in text

    def test_bad_config_exit_two(self, capsys):
        assert cli.main(["--override", "model.c=1.5"]) == 2
        assert "H1" in capsys.readouterr().err

    def test_malformed_override_exit_two(self, capsys):
        assert cli.main(["--override", "h=1"]) == 2
        assert "section.key" in capsys.readouterr().err

    def test_run_failure_exit_one(self, tmp_path, capsys):
        code = cli.main(["--override", "scenario.kind=file",
                         "--override", "scenario.phi_file=nope.nsch",
                         "--override", "scenario.psi_file=nope.nsch",
                         "--out", str(tmp_path / "r")])
        assert code == 1
        assert "run failed" in capsys.readouterr().err
