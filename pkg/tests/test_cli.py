"""Config parsing, experiment harness, CSV artifacts, exit codes."""

import csv
import os

import numpy as np
import pytest

from fairbeam import cli, model


def _read_csv(path):
    with open(path, newline="") as f:
        rows = list(csv.reader(f))
    return rows[0], rows[1:]


# ---------------------------------------------------------------------------
# config grammar


def test_parse_config_text_basic():
    text = """
    # comment line
    experiment = fig1_power_sweep
    SEED = 3   # trailing comment
    noise=2.5
    """
    out = cli.parse_config_text(text)
    assert out["experiment"] == ("fig1_power_sweep", 3)
    assert out["seed"] == ("3", 4)  # keys fold to lower case
    assert out["noise"] == ("2.5", 5)


def test_parse_config_text_errors():
    with pytest.raises(cli.ConfigError) as ei:
        cli.parse_config_text("experiment fig1")
    assert ei.value.line == 1
    with pytest.raises(cli.ConfigError) as ei:
        cli.parse_config_text("a = 1\na = 2")
    assert ei.value.line == 2 and ei.value.key == "a"
    with pytest.raises(cli.ConfigError) as ei:
        cli.parse_config_text("ok = 1\n = 2")
    assert ei.value.line == 2


def test_parse_grid_forms():
    assert cli._parse_grid("1,2,4", int) == (1, 2, 4)
    assert cli._parse_grid("-10:20:2", float) == tuple(np.arange(-10.0, 21.0, 2.0))
    assert cli._parse_grid("1:2:0.5", float) == (1.0, 1.5, 2.0)
    with pytest.raises(ValueError):
        cli._parse_grid("1:2:0", float)
    with pytest.raises(ValueError):
        cli._parse_grid("3:1:1", float)
    with pytest.raises(ValueError):
        cli._parse_grid("1:2", float)


def test_load_config_precedence(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("experiment = fig1_power_sweep\nseed = 1\n")
    cfg = cli.load_config(str(p), env={})
    assert cfg.seed == 1
    cfg = cli.load_config(str(p), env={"FAIRBEAM_SEED": "2"})
    assert cfg.seed == 2
    cfg = cli.load_config(str(p), env={"FAIRBEAM_SEED": "2"},
                          overrides={"seed": "3"})
    assert cfg.seed == 3


def test_load_config_bad_values(tmp_path):
    p = tmp_path / "run.cfg"
    p.write_text("experiment = fig1_power_sweep\nseed = x\n")
    with pytest.raises(cli.ConfigError) as ei:
        cli.load_config(str(p), env={})
    assert ei.value.key == "seed" and ei.value.line == 2
    with pytest.raises(cli.ConfigError):
        cli.load_config(str(tmp_path / "absent.cfg"), env={})
    p2 = tmp_path / "unknown.cfg"
    p2.write_text("experiment = fig1_power_sweep\nwhatever = 1\n")
    with pytest.raises(cli.ConfigError) as ei:
        cli.load_config(str(p2), env={})
    assert ei.value.key == "whatever"
    with pytest.raises(cli.ConfigError) as ei:
        cli.load_config(None, env={"FAIRBEAM_NOISE": "abc"},
                        overrides={"experiment": "fig1_power_sweep"})
    assert ei.value.key == "noise"


def test_experiment_defaults_resolution():
    base = cli.load_config(None, env={},
                           overrides={"experiment": "fig1_power_sweep"})
    assert base.n_rand == 100 and base.nt == 5 and base.users_per_group == 2
    assert base.power_dbw_grid == tuple(np.arange(-10.0, 21.0, 2.0))

    das = cli.load_config(None, env={},
                          overrides={"experiment": "fig3_4_das_utilization"})
    assert das.n_rand == 0
    assert das.power_dbw_grid == tuple(np.arange(-4.0, 3.0, 1.0))

    ula = cli.load_config(None, env={}, overrides={"experiment": "fig7_8_ula"})
    assert ula.nt == 4 and ula.n_rand == 100

    rob = cli.load_config(None, env={},
                          overrides={"experiment": "fig9_10_robust"})
    assert rob.nt == 3 and rob.users_per_group == 3

    # an explicit setting beats the per-experiment default
    das2 = cli.load_config(None, env={"FAIRBEAM_RANDOMIZATIONS": "7"},
                           overrides={"experiment": "fig3_4_das_utilization"})
    assert das2.n_rand == 7


def test_validate_errors():
    with pytest.raises(cli.ConfigError):
        cli.ExperimentConfig(experiment="nope").validate()
    with pytest.raises(cli.ConfigError):
        cli.ExperimentConfig(experiment="fig1_power_sweep", seed=-1).validate()
    with pytest.raises(cli.ConfigError):
        cli.ExperimentConfig(experiment="fig1_power_sweep", n_rand=-1).validate()
    with pytest.raises(cli.ConfigError):
        cli.ExperimentConfig(experiment="fig1_power_sweep",
                             rho_grid=()).validate()
    with pytest.raises(cli.ConfigError):
        cli.ExperimentConfig(experiment="fig1_power_sweep",
                             power="psc").validate()
    with pytest.raises(cli.ConfigError):
        cli.ExperimentConfig(experiment="fig1_power_sweep",
                             robust_radius=-0.5).validate()
    with pytest.raises(cli.ConfigError) as ei:
        cli.ExperimentConfig(experiment="solve_instance").validate()
    assert ei.value.key == "channel_csv"
    with pytest.raises(cli.ConfigError) as ei:
        cli.ExperimentConfig(experiment="solve_instance",
                             channel_csv="x.csv").validate()
    assert ei.value.key == "groups"


def test_error_line_format():
    line = cli._error_line("config", cli.ConfigError("boom", line=3, key="seed"))
    assert line == "FAIRBEAM-ERROR kind=config line=3 key=seed msg=boom"
    line = cli._error_line("runtime", RuntimeError("oops"))
    assert line == "FAIRBEAM-ERROR kind=runtime msg=oops"


# ---------------------------------------------------------------------------
# harness helpers


def test_point_seed_matches_seed_sequence():
    ref = int(np.random.SeedSequence([5, 2, 9]).generate_state(1)[0])
    assert cli.point_seed(5, 2, 9) == ref
    seen = {cli.point_seed(0, i, j) for i in range(8) for j in range(8)}
    assert len(seen) == 64  # no collisions across a small index block


def test_dbw_to_watts():
    assert cli._dbw_to_watts(0.0) == pytest.approx(1.0)
    assert cli._dbw_to_watts(10.0) == pytest.approx(10.0)
    assert cli._dbw_to_watts(-10.0) == pytest.approx(0.1)


def test_steering_and_beampattern():
    assert np.allclose(cli.steering(4, 0.0), np.ones(4))
    th0 = np.deg2rad(25.0)
    w = model.PrecoderSet(cli.steering(4, th0)[:, None])
    grid = np.deg2rad(np.arange(-90.0, 90.5, 1.0))
    pat = cli.beampattern(w, grid)
    assert pat.shape == (1, len(grid))
    assert abs(np.rad2deg(grid[int(np.argmax(pat[0]))]) - 25.0) <= 1.0
    db = cli.beampattern_db(w, grid)
    assert np.max(db) == pytest.approx(0.0, abs=1e-12)


def test_precoder_rows_roundtrip():
    rng = np.random.default_rng(3)
    w = model.PrecoderSet(rng.standard_normal((4, 2))
                          + 1j * rng.standard_normal((4, 2)))
    rows = list(cli._precoder_rows(w))
    back = cli.parse_precoders(rows, 4, 2)
    assert np.array_equal(back.W, w.W)


def test_parse_groups_spec():
    assert cli._parse_groups_spec("0,1;2,3", 4) == [(0, 1), (2, 3)]
    assert cli._parse_groups_spec("1;0,2", 3) == [(1,), (0, 2)]
    with pytest.raises(cli.ConfigError):
        cli._parse_groups_spec("0,1", 3)  # not covering
    with pytest.raises(cli.ConfigError):
        cli._parse_groups_spec("0,x;1", 2)
    with pytest.raises(cli.ConfigError):
        cli._parse_groups_spec("0,0;1", 2)


def test_ula_instance_geometry():
    inst = cli._ula_instance(3, 2, (0.0, 45.0), 10.0)
    assert inst.nt == 3 and inst.nu == 4
    assert inst.partition.groups == ((0, 1), (2, 3))
    expected = model.gen_ula(3, np.deg2rad([0.0, 10.0, 45.0, 55.0]))
    assert np.allclose(inst.channels.H, expected.H)


# ---------------------------------------------------------------------------
# solve_instance end to end


def _write_scalar_instance(tmp_path, pac="10"):
    ch = model.ChannelSet(np.array([[2.0]]))
    csv_path = tmp_path / "chan.csv"
    csv_path.write_text(model.channel_to_csv(ch))
    cfg_path = tmp_path / "run.cfg"
    cfg_path.write_text(
        "experiment = solve_instance\n"
        "channel_csv = %s\n"
        "groups = 0\n"
        "pac = %s\n" % (csv_path, pac))
    return cfg_path


def test_solve_instance_end_to_end(tmp_path, capsys):
    cfg_path = _write_scalar_instance(tmp_path)
    out1 = tmp_path / "o1"
    rc = cli.main(["--config", str(cfg_path), "--out", str(out1)])
    assert rc == 0
    text = capsys.readouterr()
    assert "experiment: solve_instance" in text.out
    assert "wrote:" in text.out

    _, summary = _read_csv(out1 / "solution_summary.csv")
    vals = dict((k, v) for k, v in summary)
    # budget 10 on a gain-2 scalar channel: SINR 40
    assert float(vals["achieved_t"]) == pytest.approx(40.0, rel=1e-6)
    assert vals["power_mode"] == "pac"
    assert vals["solution_mode"] == "rank1"

    header, rows = _read_csv(out1 / "solution_user_metrics.csv")
    assert header == ["user", "sinr", "sinr_db", "rate_bps_hz"]
    sinr = float(rows[0][1])
    assert float(rows[0][2]) == pytest.approx(10 * np.log10(sinr), rel=1e-12)
    assert float(rows[0][3]) == pytest.approx(np.log2(1 + sinr), rel=1e-12)

    # emitted metrics recompute exactly from emitted precoders
    _, prows = _read_csv(out1 / "solution_precoders.csv")
    w = cli.parse_precoders([[float(c) for c in r] for r in prows], 1, 1)
    inst = model.make_instance(model.ChannelSet(np.array([[2.0]])), [(0,)],
                               pac=[10.0])
    assert model.sinr_all(w, inst)[0] == pytest.approx(sinr, rel=1e-12)

    # byte-identical rerun
    out2 = tmp_path / "o2"
    rc = cli.main(["--config", str(cfg_path), "--out", str(out2), "--quiet"])
    assert rc == 0
    assert capsys.readouterr().out == ""
    for name in ("solution_summary.csv", "solution_user_metrics.csv",
                 "solution_precoders.csv"):
        assert (out1 / name).read_bytes() == (out2 / name).read_bytes()


def test_solve_instance_robust(tmp_path):
    cfg_path = _write_scalar_instance(tmp_path, pac="2")
    cfg = cli.load_config(str(cfg_path), env={},
                          overrides={"out": str(tmp_path / "o")})
    cfg.robust_radius = 0.5
    outcome = cli.run(cfg)
    assert outcome.n_failed == 0
    _, summary = _read_csv(tmp_path / "o" / "solution_summary.csv")
    vals = dict(summary)
    assert float(vals["certified_t"]) == pytest.approx(4.5, rel=1e-3)
    assert float(vals["nominal_t"]) == pytest.approx(8.0, rel=1e-3)


def test_solve_instance_input_errors(tmp_path):
    ch = model.ChannelSet(np.array([[2.0, 1.0]]))
    csv_path = tmp_path / "chan.csv"
    csv_path.write_text(model.channel_to_csv(ch))
    base = {"experiment": "solve_instance",
            "channel_csv": str(csv_path), "groups": "0;1",
            "out": str(tmp_path / "o")}
    cfg = cli.load_config(None, env={}, overrides=dict(base, groups="0"))
    with pytest.raises(cli.ConfigError):  # groups must cover both users
        cli.run(cfg)
    cfg = cli.load_config(None, env={}, overrides=dict(base, pac="1,2,3"))
    with pytest.raises(cli.ConfigError):  # one budget per antenna
        cli.run(cfg)
    bad = tmp_path / "bad.csv"
    bad.write_text("not,a,channel\n")
    cfg = cli.load_config(None, env={},
                          overrides=dict(base, channel_csv=str(bad)))
    with pytest.raises(cli.ConfigError):
        cli.run(cfg)


# ---------------------------------------------------------------------------
# exit codes


def test_main_config_error_exit(tmp_path, capsys):
    rc = cli.main(["--config", str(tmp_path / "absent.cfg")])
    assert rc == 2
    err = capsys.readouterr().err
    assert err.startswith("FAIRBEAM-ERROR kind=config")


def test_main_runtime_error_exit(tmp_path, capsys, monkeypatch):
    def boom(cfg):
        raise RuntimeError("exploded")
    monkeypatch.setitem(cli._RUNNERS, "fig1_power_sweep", boom)
    rc = cli.main(["--experiment", "fig1_power_sweep",
                   "--out", str(tmp_path)])
    assert rc == 1
    err = capsys.readouterr().err
    assert err.startswith("FAIRBEAM-ERROR kind=runtime")
    assert "exploded" in err


# ---------------------------------------------------------------------------
# ULA experiment artifacts


@pytest.fixture(scope="module")
def ula_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("ula")
    cfg = cli.load_config(None, env={},
                          overrides={"experiment": "fig7_8_ula",
                                     "out": str(out)})
    outcome = cli.run(cfg)
    return out, outcome


def test_ula_outputs_complete(ula_run):
    out, outcome = ula_run
    assert outcome.n_failed == 0, outcome.failures
    for name in ("fig7_beampattern_pac.csv", "fig8_beampattern_spc_rescaled.csv",
                 "fig7_8_precoders_pac.csv", "fig7_8_precoders_spc_rescaled.csv"):
        assert (out / name).exists()
    header, rows = _read_csv(out / "fig7_beampattern_pac.csv")
    assert header == ["theta_deg", "gain_g0_db", "gain_g1_db"]
    assert len(rows) == 181  # -90..90 in 1 degree steps


def test_ula_pac_pattern_nulls_other_group(ula_run):
    # group 0 serves 0/10 degrees, group 1 serves 45/55; each pattern must be
    # deeply suppressed at the other group's user angles
    out, _ = ula_run
    _, rows = _read_csv(out / "fig7_beampattern_pac.csv")
    gain = {float(r[0]): (float(r[1]), float(r[2])) for r in rows}
    assert gain[45.0][0] <= -10.0 and gain[55.0][0] <= -10.0
    assert gain[0.0][1] <= -10.0 and gain[10.0][1] <= -10.0
    # normalized curves: peaks at exactly 0 dB somewhere on the grid
    g0 = [float(r[1]) for r in rows]
    g1 = [float(r[2]) for r in rows]
    assert max(g0) == pytest.approx(0.0, abs=1e-9)
    assert max(g1) == pytest.approx(0.0, abs=1e-9)


def test_ula_pattern_recomputes_from_precoders(ula_run):
    out, _ = ula_run
    _, prows = _read_csv(out / "fig7_8_precoders_pac.csv")
    w = cli.parse_precoders([[float(c) for c in r] for r in prows], 4, 2)
    _, rows = _read_csv(out / "fig7_beampattern_pac.csv")
    thetas = np.deg2rad([float(r[0]) for r in rows])
    db = cli.beampattern_db(w, thetas)
    emitted = np.array([[float(r[1]), float(r[2])] for r in rows]).T
    assert np.allclose(db, emitted, atol=1e-9)
