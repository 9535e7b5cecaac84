# handlers.py
"""Подкоманды: ground-state, evolve, sweep, check. Каждая возвращает код выхода."""

import logging
import os
import sys
import uuid
from dataclasses import dataclass, field as dc_field

import numpy as np
import ujson

import config
import database
import dynamics
import field
import ground_state as gs_mod
import params as params_mod
import potential as potential_mod
import riesz

logger = logging.getLogger(__name__)

# Параметры быстрых проверок cmd_check
CHECK_ORACLE_N = 64
CHECK_ORACLE_L = 8.0
CHECK_ORACLE_TOL = 1e-3
CHECK_PARSEVAL_TOL = 1e-12
CHECK_GRADIENT_N = 16
CHECK_GRADIENT_TOL = 1e-5
CHECK_SAMPLES = 256


@dataclass
class RunContext:
    out_dir: str = config.DEFAULT_OUT_DIR
    seed: int = config.DEFAULT_SEED
    threads: int = 1
    run_id: str = dc_field(default_factory=lambda: uuid.uuid4().hex[:12])
    use_db: bool = True


def emit(record: dict) -> None:
    print(ujson.dumps(record, indent=2))


def _prepare_out(ctx: RunContext) -> str:
    os.makedirs(ctx.out_dir, exist_ok=True)
    return ctx.out_dir


# --- GROUND STATE ---

def cmd_ground_state(cfg: config.ExperimentConfig, ctx: RunContext) -> int:
    """Нормированный градиентный поток + полная сертификация; пишет снимок и метаданные."""
    config.require(cfg, ("model", "grid"))
    model = params_mod.from_config(cfg.section("model"))
    grid = field.grid_from_config(cfg.section("grid"), model.N)
    flow_sec = cfg.sections.get("flow", {})
    flow = gs_mod.flow_from_config(flow_sec, ctx.seed)
    nu = float(flow_sec.get("nu", 1.0))
    passes = int(flow_sec.get("sigma_passes") or 0)
    if passes < 0:
        raise config.ConfigError("число шагов σ не может быть отрицательным", "flow.sigma_passes")
    if passes:
        # Режим σ: каждый проход - отдельное основное состояние на уровне ν_k
        states = gs_mod.self_consistent_sigma(nu, grid, model.p, model.theta, flow, passes=passes)
    else:
        states = [gs_mod.normalized_gradient_flow(nu, grid, model.p, model.theta, flow)]
    gs = states[-1]

    op = riesz.build(grid, model.theta)
    c_min = gs_mod.E_omega(gs.U, gs.omega, op, model.p)
    sigma_value = gs_mod.sigma(model.N, model.theta, model.p, gs.omega, c_min)
    gs.extra["sigma"] = sigma_value
    gs.extra["sigma_defect"] = abs(sigma_value - gs.nu) / gs.nu
    gs.extra["hls_ratio"] = riesz.hls_ratio(op, gs.U, model.p, model.N, model.theta)
    gs.extra["half_width"] = field.half_width(gs.U)

    out = _prepare_out(ctx)
    snap, meta = gs_mod.save(gs, out)
    if ctx.use_db:
        for state in states[:-1]:
            database.record_ground_state(ctx.run_id, state)
        database.record_ground_state(ctx.run_id, gs, snap)
    record = {"ok": True, "command": "ground-state", "snapshot": snap, "meta": meta, **gs.record()}
    if passes:
        record["sigma_history"] = [{"nu": s.nu, "omega": s.omega, "J_value": s.J_value} for s in states]
    emit(record)
    return 0


# --- EVOLVE ---

def cmd_evolve(cfg: config.ExperimentConfig, ctx: RunContext) -> int:
    """Начальные данные, эволюция до T, CSV траектории и снимки."""
    plan = dynamics.plan_from_config(cfg)
    out = _prepare_out(ctx)
    snap_dir = os.path.join(out, "snapshots") if plan.snapshot_stride else None
    member = plan.run(plan.params.eps, snapshot_dir=snap_dir)
    csv_path = os.path.join(out, "trajectory.csv")
    dynamics.write_trajectory_csv(member.samples, csv_path)
    emit({"ok": True, "command": "evolve", "csv": csv_path, "eps": member.eps, "n": member.n,
           "dt": member.dt, "rows": len(member.samples), "sup_H": member.sup_H,
           "sup_distance": member.sup_distance, "charge_drift": member.charge_drift,
           "energy_drift": member.energy_drift, "variables": member.variables,
           "charge": member.samples[0].charge})
    return 0


# --- SWEEP ---

def cmd_sweep(cfg: config.ExperimentConfig, ctx: RunContext) -> int:
    out = _prepare_out(ctx)
    # Прерванный прогон не оставляет ни сводки, ни строк в журнале
    report = dynamics.run_epsilon_sweep(cfg, threads=ctx.threads, snapshot_root=out)
    for m in report.by_eps():
        dynamics.write_trajectory_csv(m.samples, os.path.join(out, f"trajectory_eps_{m.eps:g}.csv"))
        if ctx.use_db:
            database.record_sweep_member(report.sweep_id, m)
    summary_path = os.path.join(out, "sweep_summary.json")
    dynamics.write_sweep_summary(report, summary_path)
    emit({"ok": True, "command": "sweep", "summary": summary_path, **report.summary()})
    return 0


# --- CHECK ---

def _row(name: str, ok: bool, detail: str) -> dict:
    return {"check": name, "ok": bool(ok), "detail": detail}


def _print_table(rows: list[dict]) -> None:
    width = max(len(r["check"]) for r in rows)
    for r in rows:
        mark = "PASS" if r["ok"] else "FAIL"
        print(f"{r['check']:<{width}}  {mark}  {r['detail']}", file=sys.stderr)


def run_checks(cfg: config.ExperimentConfig, seed: int = 0) -> list[dict]:
    """Набор быстрых проверок; каждая строка: (имя, ok, подробности)."""
    rows = []
    model = params_mod.from_config(cfg.section("model"))
    result = params_mod.validate(model)
    rows.append(_row("params.validate", result.ok, "; ".join(result.violations) or "все соотношения выполнены"))

    if cfg.has("potential"):
        pot_sec = cfg.section("potential")
        V = potential_mod.from_config(pot_sec)
        radii = [V.R1 * f for f in (1.25, 2.0, 4.0)]
        extent = float(cfg.section("grid")["L"]) if cfg.has("grid") else 2.0 * V.R1
        cert = potential_mod.certify_assumptions(V, radii, CHECK_SAMPLES, model.N, extent, seed=seed)
        exempt = bool(pot_sec.get("exempt", False))
        ok = cert.v0_ok and cert.v1_ok and (cert.v2_ok or exempt)
        detail = f"V0={cert.v0_ok} V1={cert.v1_ok} V2={cert.v2_ok}" + (" (V2 снято)" if exempt else "")
        rows.append(_row("potential.certify", ok, detail))

    rng = np.random.default_rng(seed)
    small = field.GridSpec(model.N, 16, 4.0)
    f = field.ScalarField(small, rng.normal(size=small.shape) + 1j * rng.normal(size=small.shape))
    defect = field.parseval_defect(f)
    rows.append(_row("field.parseval", defect < CHECK_PARSEVAL_TOL, f"дефект {defect:.2e}"))

    if 0.0 < model.theta < model.N:
        oracle_grid = field.GridSpec(model.N, CHECK_ORACLE_N, CHECK_ORACLE_L)
        err = riesz.gaussian_oracle_error(oracle_grid, model.theta)
        rows.append(_row("riesz.gaussian_oracle", err < CHECK_ORACLE_TOL,
                         f"отн. ошибка {err:.2e} (точное {riesz.gaussian_origin_value(model.N, model.theta):.6f})"))

        g_grid = field.GridSpec(model.N, CHECK_GRADIENT_N, 6.0)
        u = field.gaussian(g_grid, 1.0)
        op = riesz.build(g_grid, model.theta)
        gerr = gs_mod.gradient_check(u, op, model.p, seed=seed)
        rows.append(_row("ground_state.gradient", gerr < CHECK_GRADIENT_TOL, f"отн. ошибка {gerr:.2e}"))
    return rows


def cmd_check(cfg: config.ExperimentConfig, ctx: RunContext) -> int:
    config.require(cfg, ("model",))
    rows = run_checks(cfg, ctx.seed)
    _print_table(rows)
    passed = all(r["ok"] for r in rows)
    if passed:
        logger.info(f"✅ Все проверки пройдены ({len(rows)})")
    else:
        failed = [r["check"] for r in rows if not r["ok"]]
        logger.warning(f"⚠️ Не пройдены проверки: {', '.join(failed)}")
    emit({"ok": passed, "command": "check", "checks": rows})
    return 0 if passed else 1


# Таблица подкоманд для main
COMMANDS = {
    "ground-state": cmd_ground_state,
    "evolve": cmd_evolve,
    "sweep": cmd_sweep,
    "check": cmd_check,
}


def error_record(command: str, exc: BaseException) -> dict:
    record = {"ok": False, "command": command, "error": str(exc), "kind": type(exc).__name__}
    key_path = getattr(exc, "key_path", None)
    if key_path:
        record["key_path"] = key_path
    step = getattr(exc, "step", None)
    if step is not None and step >= 0:
        record["step"] = step
    report = getattr(exc, "report", None)
    if report is not None:
        record["failed"] = {f"{eps:g}": reason for eps, reason in report.failed.items()}
    return record


def exit_code_for(exc: BaseException) -> int:
    return 2 if isinstance(exc, config.ConfigError) else 1
