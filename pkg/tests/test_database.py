import pytest

import config
import database
from dynamics import SweepMember


@pytest.fixture(autouse=True)
def temp_db(tmp_path, monkeypatch):
    monkeypatch.setattr(config, "DB_FILE", str(tmp_path / "runs.db"))
    database.init_db()


def test_init_is_idempotent():
    database.init_db()
    assert database.get_ground_states() == []


def test_run_round_trip():
    database.record_run("r1", "check", '{"seed": 0}', 0)
    run = database.get_run("r1")
    assert run["command"] == "check"
    assert run["config"] == {"seed": 0}
    assert run["status"] == 0
    assert database.get_run("missing") is None


def test_ground_state_rows(ground_1d):
    database.record_ground_state("r1", ground_1d, "U.chqf")
    database.record_ground_state("r2", ground_1d)
    rows = database.get_ground_states("r1")
    assert len(rows) == 1
    assert rows[0]["omega"] == ground_1d.omega
    assert rows[0]["snapshot"] == "U.chqf"
    assert len(database.get_ground_states()) == 2


def test_sweep_members_ordered_by_eps():
    for eps in (0.25, 0.5, 0.35):
        database.record_sweep_member("s1", SweepMember(eps=eps, n=64, samples=[], sup_H=eps, sup_distance=eps,
                                                       charge_drift=0.0, energy_drift=0.0, sup_center_gap=0.0,
                                                       dt=1e-3))
    rows = database.get_sweep_members("s1")
    assert [r["eps"] for r in rows] == [0.5, 0.35, 0.25]
