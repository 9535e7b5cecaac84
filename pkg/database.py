# database.py
import sqlite3
import logging
import time

import ujson

import config

logger = logging.getLogger(__name__)


def _connect():
    # Путь читается при каждом вызове, чтобы CHOQUARD_DB можно было переопределить
    return sqlite3.connect(config.DB_FILE, check_same_thread=False)


def init_db():
    """Инициализирует журнал запусков и создаёт таблицы, если их нет."""
    with _connect() as conn:
        cursor = conn.cursor()
        cursor.execute("CREATE TABLE IF NOT EXISTS runs (run_id TEXT PRIMARY KEY, created REAL NOT NULL, command TEXT NOT NULL, config TEXT, status INTEGER)")
        cursor.execute(
            "CREATE TABLE IF NOT EXISTS ground_states (run_id TEXT NOT NULL, created REAL NOT NULL, nu REAL, omega REAL, "
            "J_value REAL, residual_flow REAL, pohozaev_1 REAL, pohozaev_2 REAL, pohozaev_3 REAL, "
            "nehari_residual REAL, snapshot TEXT)"
        )
        cursor.execute(
            "CREATE TABLE IF NOT EXISTS sweep_members (sweep_id TEXT NOT NULL, eps REAL NOT NULL, n INTEGER, sup_H REAL, "
            "sup_distance REAL, charge_drift REAL, energy_drift REAL, PRIMARY KEY (sweep_id, eps))"
        )
        conn.commit()
    logger.info("Журнал запусков инициализирован.")


def record_run(run_id: str, command: str, cfg_text: str | None, status: int):
    with _connect() as conn:
        cursor = conn.cursor()
        cursor.execute("INSERT OR REPLACE INTO runs (run_id, created, command, config, status) VALUES (?, ?, ?, ?, ?)",
                       (run_id, time.time(), command, cfg_text, status))
        conn.commit()


def record_ground_state(run_id: str, gs, snapshot: str | None = None):
    r1, r2, r3 = gs.pohozaev_residuals
    with _connect() as conn:
        cursor = conn.cursor()
        cursor.execute(
            "INSERT INTO ground_states (run_id, created, nu, omega, J_value, residual_flow, pohozaev_1, pohozaev_2, "
            "pohozaev_3, nehari_residual, snapshot) VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?, ?)",
            (run_id, time.time(), gs.nu, gs.omega, gs.J_value, gs.residual_flow, r1, r2, r3,
             gs.nehari_residual, snapshot),
        )
        conn.commit()


def record_sweep_member(sweep_id: str, member):
    with _connect() as conn:
        cursor = conn.cursor()
        cursor.execute(
            "INSERT OR REPLACE INTO sweep_members (sweep_id, eps, n, sup_H, sup_distance, charge_drift, energy_drift) "
            "VALUES (?, ?, ?, ?, ?, ?, ?)",
            (sweep_id, member.eps, member.n, member.sup_H, member.sup_distance,
             member.charge_drift, member.energy_drift),
        )
        conn.commit()


def get_ground_states(run_id: str | None = None) -> list:
    with _connect() as conn:
        conn.row_factory = sqlite3.Row
        cursor = conn.cursor()
        if run_id is None:
            cursor.execute("SELECT * FROM ground_states ORDER BY created")
        else:
            cursor.execute("SELECT * FROM ground_states WHERE run_id = ? ORDER BY created", (run_id,))
        return [dict(row) for row in cursor.fetchall()]


def get_sweep_members(sweep_id: str) -> list:
    """Члены прогона по ε, от большего ε к меньшему."""
    with _connect() as conn:
        conn.row_factory = sqlite3.Row
        cursor = conn.cursor()
        cursor.execute("SELECT * FROM sweep_members WHERE sweep_id = ? ORDER BY eps DESC", (sweep_id,))
        return [dict(row) for row in cursor.fetchall()]


def get_run(run_id: str) -> dict | None:
    with _connect() as conn:
        conn.row_factory = sqlite3.Row
        cursor = conn.cursor()
        cursor.execute("SELECT * FROM runs WHERE run_id = ?", (run_id,))
        row = cursor.fetchone()
        if not row:
            return None
        result = dict(row)
        result["config"] = ujson.loads(result["config"]) if result["config"] else None
        return result
