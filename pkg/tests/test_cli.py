import sqlite3

import pytest
import ujson

import config
import database
import ground_state as gs_mod
import main


@pytest.fixture(autouse=True)
def isolated(tmp_path, monkeypatch):
    monkeypatch.setattr(config, "DB_FILE", str(tmp_path / "runs.db"))
    monkeypatch.setattr(config, "LOG_FILE", str(tmp_path / "choquard.log"))


def _write(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(ujson.dumps(doc), encoding="utf-8")
    return str(path)


def _emitted(capsys):
    return ujson.loads(capsys.readouterr().out)


@pytest.fixture
def saved_ground(tmp_path, ground_1d):
    directory = tmp_path / "ground"
    gs_mod.save(ground_1d, str(directory))
    return str(directory)


def _evolve_doc(ground_dir, T):
    return {
        "schema": config.CONFIG_SCHEMA, "seed": 0,
        "model": {"N": 1, "theta": 0.5, "p": 2.0, "gamma": 1.0, "eps": 0.5, "v": [0.5]},
        "grid": {"n": 512, "L": 16.0},
        "potential": {"kind": "harmonic"},
        "flow": {"from": ground_dir},
        "evolve": {"T": T, "n": 256, "L": 4.0, "callback_stride": 5},
        "sweep": {"eps": [0.5]},
    }


def test_check_physical_case(tmp_path, capsys):
    doc = {
        "schema": config.CONFIG_SCHEMA,
        "model": {"N": 3, "theta": 2.0, "p": 2.0, "gamma": 3.0, "eps": 0.5},
        "grid": {"n": 64, "L": 8.0},
        "potential": {"kind": "harmonic"},
    }
    code = main.main(["check", "--config", _write(tmp_path, doc), "--threads", "1"])
    captured = capsys.readouterr()
    record = ujson.loads(captured.out)
    assert code == 0, record
    assert record["ok"] is True
    assert record["command"] == "check"
    names = [row["check"] for row in record["checks"]]
    assert "riesz.gaussian_oracle" in names
    assert all(row["ok"] for row in record["checks"])
    # таблица идёт в stderr, stdout остаётся JSON
    assert "PASS" in captured.err
    assert "FAIL" not in captured.err


def test_check_reports_failed_potential(tmp_path, capsys):
    doc = {
        "schema": config.CONFIG_SCHEMA,
        "model": {"N": 3, "theta": 2.0, "p": 2.0, "gamma": 3.0, "eps": 0.5},
        "potential": {"kind": "zero"},
    }
    assert main.main(["check", "--config", _write(tmp_path, doc), "--threads", "1"]) == 1
    record = _emitted(capsys)
    assert record["ok"] is False
    failed = [row["check"] for row in record["checks"] if not row["ok"]]
    assert failed == ["potential.certify"]
    # снятие (V2) делает V = 0 допустимым
    doc["potential"]["exempt"] = True
    assert main.main(["check", "--config", _write(tmp_path, doc), "--threads", "1"]) == 0


def test_bad_config_exits_with_key_path(tmp_path, capsys):
    doc = {"schema": config.CONFIG_SCHEMA, "model": {"N": 3, "theta": 2.0, "p": 2.0, "eps": 0.5}}
    code = main.main(["check", "--config", _write(tmp_path, doc), "--threads", "1"])
    assert code == 2
    record = _emitted(capsys)
    assert record["ok"] is False
    assert record["key_path"] == "model.gamma"
    assert record["kind"] == "ConfigError"


def test_evolve_zero_time_writes_single_row(tmp_path, capsys, saved_ground):
    out = tmp_path / "out"
    code = main.main(["evolve", "--config", _write(tmp_path, _evolve_doc(saved_ground, 0.0)),
                      "--out", str(out), "--threads", "1"])
    record = _emitted(capsys)
    assert code == 0, record
    assert record["rows"] == 1
    lines = (out / "trajectory.csv").read_text(encoding="utf-8").splitlines()
    assert len(lines) == 2
    assert lines[0].startswith("t,charge,E_total")
    run = database.get_run(_run_ids()[0])
    assert run["status"] == 0


def _run_ids():
    with sqlite3.connect(config.DB_FILE) as conn:
        return [r[0] for r in conn.execute("SELECT run_id FROM runs ORDER BY created")]


def test_single_eps_sweep_matches_evolve(tmp_path, capsys, saved_ground):
    cfg_path = _write(tmp_path, _evolve_doc(saved_ground, 0.02))
    assert main.main(["evolve", "--config", cfg_path, "--out", str(tmp_path / "a"), "--threads", "1"]) == 0
    assert main.main(["sweep", "--config", cfg_path, "--out", str(tmp_path / "b"), "--threads", "1"]) == 0
    capsys.readouterr()
    evolve_csv = (tmp_path / "a" / "trajectory.csv").read_text(encoding="utf-8")
    sweep_csv = (tmp_path / "b" / "trajectory_eps_0.5.csv").read_text(encoding="utf-8")
    assert evolve_csv == sweep_csv
    summary = ujson.loads((tmp_path / "b" / "sweep_summary.json").read_text(encoding="utf-8"))
    members = database.get_sweep_members(summary["sweep_id"])
    assert [m["eps"] for m in members] == [0.5]


def test_ground_state_command(tmp_path, capsys):
    doc = {
        "schema": config.CONFIG_SCHEMA, "seed": 1,
        "model": {"N": 1, "theta": 0.5, "p": 2.0, "gamma": 1.0, "eps": 0.5},
        "grid": {"n": 256, "L": 16.0},
        "flow": {"nu": 1.0, "dtau": 0.1, "tol": 1e-9},
    }
    out = tmp_path / "gs"
    code = main.main(["ground-state", "--config", _write(tmp_path, doc), "--out", str(out), "--threads", "1"])
    record = _emitted(capsys)
    assert code == 0, record
    assert record["J_value"] < 0
    loaded = gs_mod.load(str(out))
    assert loaded.omega == pytest.approx(record["omega"])
    rows = database.get_ground_states()
    assert len(rows) == 1


def test_runtime_error_exits_one(tmp_path, capsys, saved_ground):
    doc = _evolve_doc(saved_ground, 0.0)
    # n=16 не разрешает профиль
    doc["evolve"]["n"] = 16
    code = main.main(["evolve", "--config", _write(tmp_path, doc), "--out", str(tmp_path / "o"), "--threads", "1"])
    record = _emitted(capsys)
    assert code == 1
    assert record["kind"] == "ResolutionError"


def test_ground_state_sigma_passes(tmp_path, capsys):
    doc = {
        "schema": config.CONFIG_SCHEMA, "seed": 1,
        "model": {"N": 1, "theta": 0.5, "p": 2.0, "gamma": 1.0, "eps": 0.5},
        "grid": {"n": 256, "L": 16.0},
        "flow": {"nu": 1.0, "dtau": 0.1, "tol": 1e-9, "sigma_passes": 1},
    }
    code = main.main(["ground-state", "--config", _write(tmp_path, doc), "--out", str(tmp_path / "gs"),
                      "--threads", "1"])
    record = _emitted(capsys)
    assert code == 0, record
    history = record["sigma_history"]
    assert len(history) == 2
    assert history[0]["nu"] == 1.0
    # на основном состоянии σ(ω, E_ω) возвращает тот же уровень
    assert history[1]["nu"] == pytest.approx(1.0, rel=1e-2)
    assert record["nu"] == history[1]["nu"]
    rows = database.get_ground_states()
    assert sorted(r["nu"] for r in rows) == pytest.approx(sorted(h["nu"] for h in history))
    assert sum(1 for r in rows if r["snapshot"]) == 1


def test_negative_sigma_passes_is_config_error(tmp_path, capsys):
    doc = {
        "schema": config.CONFIG_SCHEMA,
        "model": {"N": 1, "theta": 0.5, "p": 2.0, "gamma": 1.0, "eps": 0.5},
        "grid": {"n": 64, "L": 16.0},
        "flow": {"sigma_passes": -1},
    }
    code = main.main(["ground-state", "--config", _write(tmp_path, doc), "--out", str(tmp_path / "gs"),
                      "--threads", "1"])
    assert code == 2
    assert _emitted(capsys)["key_path"] == "flow.sigma_passes"


def test_evolve_in_gce_variables(tmp_path, capsys, saved_ground):
    scaled_doc = _evolve_doc(saved_ground, 0.02)
    gce_doc = _evolve_doc(saved_ground, 0.02)
    gce_doc["initial"] = {"variables": "gce"}
    assert main.main(["evolve", "--config", _write(tmp_path, scaled_doc), "--out", str(tmp_path / "a"),
                      "--threads", "1"]) == 0
    scaled = _emitted(capsys)
    assert main.main(["evolve", "--config", _write(tmp_path, gce_doc, "gce.json"), "--out", str(tmp_path / "b"),
                      "--threads", "1"]) == 0
    gce = _emitted(capsys)
    assert scaled["variables"] == "scaled"
    assert gce["variables"] == "gce"
    # 1D режим: A = ε^{1/2}, заряд исходного уравнения в 1/ε раз больше
    assert gce["charge"] == pytest.approx(scaled["charge"] / 0.5, rel=1e-10)
    assert gce["sup_distance"] == pytest.approx(scaled["sup_distance"], abs=1e-10)
    header = (tmp_path / "b" / "trajectory.csv").read_text(encoding="utf-8").splitlines()[0]
    assert header.startswith("t,charge,E_total")


def test_aborted_sweep_leaves_no_summary(tmp_path, capsys, saved_ground):
    doc = _evolve_doc(saved_ground, 0.02)
    doc["evolve"]["n"] = 16
    doc["sweep"]["eps"] = [0.5, 0.35]
    out = tmp_path / "sweep"
    code = main.main(["sweep", "--config", _write(tmp_path, doc), "--out", str(out), "--threads", "1"])
    record = _emitted(capsys)
    assert code == 1
    assert record["kind"] == "SweepError"
    assert set(record["failed"]) == {"0.5", "0.35"}
    assert not (out / "sweep_summary.json").exists()
    with sqlite3.connect(config.DB_FILE) as conn:
        assert conn.execute("SELECT COUNT(*) FROM sweep_members").fetchone()[0] == 0
