# dynamics.py
"""
Всё, что измеряется вдоль траектории: классическая траектория сравнения, барицентр и импульс,
сила и невязка H_ε закона Ньютона, центр концентрации, прогоны по ε.
"""

import csv
import logging
import math
import os
import threading
import uuid
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from dataclasses import dataclass, field as dc_field, replace
from typing import Any, Callable, Sequence

import numpy as np
import scipy.fft as sfft
import ujson
from scipy.integrate import cumulative_trapezoid
from scipy.interpolate import CubicSpline

import config
import field
import ground_state as gs_mod
import params as params_mod
import potential as potential_mod
import propagator
import riesz
from field import GridSpec, ScalarField
from params import ModelParams
from potential import PotentialSpec

logger = logging.getLogger(__name__)

AXES = "xyz"


class SweepError(RuntimeError):
    def __init__(self, message: str, report: "SweepReport"):
        super().__init__(message)
        self.report = report


class SweepCancelled(RuntimeError):
    """Член прогона не запускался: другой член уже завершился ошибкой."""


@dataclass
class TrajectorySample:
    t: float
    charge: float
    energy_total: float
    energy_internal: float
    kinetic_dynamical: float
    energy_potential: float
    barycenter: np.ndarray
    momentum: np.ndarray
    force: np.ndarray
    H_eps: np.ndarray
    concentration_center: np.ndarray
    mass_outside: float
    concentrated: bool


@dataclass
class ClassicalTrajectory:
    times: np.ndarray
    q: np.ndarray
    qdot: np.ndarray


@dataclass
class SweepMember:
    eps: float
    n: int
    samples: list[TrajectorySample]
    sup_H: float
    sup_distance: float
    charge_drift: float
    energy_drift: float
    sup_center_gap: float
    dt: float
    variables: str = "scaled"


@dataclass
class SweepReport:
    sweep_id: str
    T: float
    eps: list[float]
    members: list[SweepMember] = dc_field(default_factory=list)
    failed: dict[float, str] = dc_field(default_factory=dict)

    def by_eps(self) -> list[SweepMember]:
        # От большего ε к меньшему
        return sorted(self.members, key=lambda m: -m.eps)

    def strictly_decreasing(self, key: str) -> bool:
        values = [getattr(m, key) for m in self.by_eps()]
        return all(b < a for a, b in zip(values, values[1:]))

    def summary(self) -> dict[str, Any]:
        return {
            "sweep_id": self.sweep_id, "T": self.T, "eps": self.eps,
            "members": [{"eps": m.eps, "n": m.n, "dt": m.dt, "sup_H": m.sup_H,
                         "sup_distance": m.sup_distance, "charge_drift": m.charge_drift,
                         "energy_drift": m.energy_drift, "sup_center_gap": m.sup_center_gap}
                        for m in self.by_eps()],
            "sup_H_decreasing": self.strictly_decreasing("sup_H"),
            "distance_decreasing": self.strictly_decreasing("sup_distance"),
            "failed": {str(k): v for k, v in self.failed.items()},
        }


# --- КЛАССИЧЕСКАЯ ТРАЕКТОРИЯ ---

def classical_trajectory(V: PotentialSpec, v0: Sequence[float], T: float, dt: float) -> ClassicalTrajectory:
    """RK4 для q̈ = −∇V(q), q(0) = 0, q̇(0) = v0."""
    if dt <= 0:
        raise ValueError(f"dt={dt} должно быть положительным")
    steps = max(1, int(round(T / dt))) if T > 0 else 0
    h = T / steps if steps else 0.0
    q = np.zeros(len(v0))
    qd = np.asarray(v0, dtype=float).copy()
    qs, qds = [q.copy()], [qd.copy()]

    def accel(x: np.ndarray) -> np.ndarray:
        return -potential_mod.grad(V, x)

    for _ in range(steps):
        k1q, k1v = qd, accel(q)
        k2q, k2v = qd + 0.5 * h * k1v, accel(q + 0.5 * h * k1q)
        k3q, k3v = qd + 0.5 * h * k2v, accel(q + 0.5 * h * k2q)
        k4q, k4v = qd + h * k3v, accel(q + h * k3q)
        q = q + h / 6.0 * (k1q + 2 * k2q + 2 * k3q + k4q)
        qd = qd + h / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v)
        qs.append(q.copy())
        qds.append(qd.copy())
    return ClassicalTrajectory(times=np.linspace(0.0, T, steps + 1), q=np.array(qs), qdot=np.array(qds))


def compare_trajectories(samples: Sequence[TrajectorySample], classical: ClassicalTrajectory) -> float:
    """max |q_ε(t) − q_cl(t)| по моментам выборок, попадающим в диапазон классической траектории."""
    t0, t1 = classical.times[0], classical.times[-1]
    slack = 1e-12 * max(1.0, abs(t1))
    common = [s for s in samples if t0 - slack <= s.t <= t1 + slack]
    if not common:
        raise ValueError("временные диапазоны траекторий не пересекаются")
    if len(classical.times) == 1:
        ref = lambda t: classical.q[0]  # noqa: E731
    else:
        ref = CubicSpline(classical.times, classical.q, axis=0)
    return max(float(np.linalg.norm(s.barycenter - ref(min(max(s.t, t0), t1)))) for s in common)


# --- ДИАГНОСТИКА ---

def concentration_center(psi: ScalarField, params: ModelParams, R_hat: float) -> np.ndarray:
    """Максимум |ψ|², сглаженной гауссианой ширины R̂ε^β/2; при равенстве берётся меньший индекс."""
    width = 0.5 * R_hat * params.eps ** params.beta
    density = np.abs(psi.values) ** 2
    smooth = sfft.ifftn(sfft.fftn(density, workers=field.workers())
                        * np.exp(-0.5 * width ** 2 * psi.grid.k2), workers=field.workers()).real
    idx = np.unravel_index(int(np.argmax(smooth)), smooth.shape)
    return np.array([psi.grid.axis[i] for i in idx])


def default_R_hat(U: ScalarField) -> float:
    return config.R_HAT_HALF_WIDTHS * field.half_width(U)


def diagnostics(psi: ScalarField, t: float, V: PotentialSpec, params: ModelParams,
                lambda_level: float = config.LAMBDA_LEVEL, riesz_op: riesz.RieszOperator | None = None,
                R_hat: float = 1.0, V_grid: np.ndarray | None = None,
                grad_V: list[np.ndarray] | None = None) -> TrajectorySample:
    grid = psi.grid
    density = np.abs(psi.values) ** 2
    charge = float(field.integrate(density, grid))
    if charge <= 0:
        raise field.FieldError("нулевой заряд: диагностика не определена")
    if V_grid is None or grad_V is None:
        Vf, gf = potential_mod.sample_on_grid(V, grid)
        V_grid, grad_V = Vf.values, [g.values for g in gf]
    op = riesz_op or riesz.build(grid, params.theta)

    q = field.barycenter(psi)
    force = np.array([float(field.integrate(g * density, grid)) / charge for g in grad_V])
    # H_ε = q̈_ε + ∇V(q_ε), где q̈_ε = −<∇V>
    H = np.asarray(potential_mod.grad(V, q), dtype=float) - force
    parts = propagator.energy(psi, V_grid, op, params)
    q_hat = concentration_center(psi, params, R_hat)
    outside = field.mass_outside_ball(psi, q_hat, R_hat * params.eps ** params.beta)
    return TrajectorySample(
        t=float(t), charge=charge, energy_total=parts.total, energy_internal=parts.internal,
        kinetic_dynamical=parts.kinetic_dynamical, energy_potential=parts.potential,
        barycenter=q, momentum=field.momentum_integral(psi, params), force=force, H_eps=H,
        concentration_center=q_hat, mass_outside=outside, concentrated=outside < lambda_level,
    )


def make_diagnose(V: PotentialSpec, params: ModelParams, grid: GridSpec, riesz_op: riesz.RieszOperator,
                  R_hat: float, lambda_level: float = config.LAMBDA_LEVEL) -> Callable[[ScalarField, float], TrajectorySample]:
    """Замыкание для propagator.evolve с закэшированными V и ∇V на сетке."""
    Vf, gf = potential_mod.sample_on_grid(V, grid)
    V_grid, grad_V = Vf.values, [g.values for g in gf]

    def diagnose(psi: ScalarField, t: float) -> TrajectorySample:
        return diagnostics(psi, t, V, params, lambda_level, riesz_op, R_hat, V_grid, grad_V)

    return diagnose


# --- ТОЖДЕСТВА ИМПУЛЬСА ---

def _series(samples: Sequence[TrajectorySample], name: str) -> np.ndarray:
    return np.array([getattr(s, name) for s in samples], dtype=float)


def velocity_consistency(samples: Sequence[TrajectorySample], eps: float) -> float:
    """max |ε^N ∫p_ε/‖ψ‖² − центральная разность q_ε| по внутренним выборкам."""
    if len(samples) < 3:
        raise ValueError("нужно не меньше трёх выборок")
    t = _series(samples, "t")
    q = _series(samples, "barycenter")
    N = q.shape[1]
    velocity = eps ** N * _series(samples, "momentum") / _series(samples, "charge")[:, None]
    fd = (q[2:] - q[:-2]) / (t[2:] - t[:-2])[:, None]
    return float(np.max(np.linalg.norm(velocity[1:-1] - fd, axis=1)))


def acceleration_consistency(samples: Sequence[TrajectorySample]) -> float:
    """max |вторая разность q_ε + <∇V>|; перекрёстная проверка, H_ε считается не так."""
    if len(samples) < 3:
        raise ValueError("нужно не меньше трёх выборок")
    t = _series(samples, "t")
    q = _series(samples, "barycenter")
    force = _series(samples, "force")
    h_prev, h_next = (t[1:-1] - t[:-2])[:, None], (t[2:] - t[1:-1])[:, None]
    acc = 2.0 * ((q[2:] - q[1:-1]) / h_next - (q[1:-1] - q[:-2]) / h_prev) / (h_prev + h_next)
    return float(np.max(np.linalg.norm(acc + force[1:-1], axis=1)))


def momentum_balance(samples: Sequence[TrajectorySample], eps: float) -> float:
    """Проинтегрированное тождество ∂_t∫p_ε = −ε^{−N}∫∇V|ψ|²: максимум невязки по выборкам."""
    if len(samples) < 2:
        raise ValueError("нужно не меньше двух выборок")
    t = _series(samples, "t")
    P = _series(samples, "momentum")
    N = P.shape[1]
    rate = -eps ** (-N) * _series(samples, "charge")[:, None] * _series(samples, "force")
    impulse = cumulative_trapezoid(rate, t, axis=0, initial=0.0)
    return float(np.max(np.linalg.norm(P - P[0] - impulse, axis=1)))


def charge_drift(samples: Sequence[TrajectorySample]) -> float:
    c = _series(samples, "charge")
    return float(np.max(np.abs(c - c[0])) / c[0])


def energy_drift(samples: Sequence[TrajectorySample]) -> float:
    e = _series(samples, "energy_total")
    scale = abs(e[0]) if e[0] != 0 else 1.0
    return float(np.max(np.abs(e - e[0])) / scale)


def gce_samples(samples: Sequence[TrajectorySample], params: ModelParams) -> list[TrajectorySample]:
    """
    Выборки в переменных исходного уравнения: ψ = ψ̂/A. Заряд, энергии и импульс делятся на A²,
    средние по |ψ|² (барицентр, сила, H_ε, центр концентрации) не меняются.
    """
    factor = propagator.gce_amplitude(params) ** -2
    return [replace(s, charge=s.charge * factor, energy_total=s.energy_total * factor,
                    energy_internal=s.energy_internal * factor, kinetic_dynamical=s.kinetic_dynamical * factor,
                    energy_potential=s.energy_potential * factor, momentum=s.momentum * factor)
            for s in samples]


# --- ПРОГОН ОДНОГО ε ---

def grid_for_eps(base: GridSpec, eps: float, eps_ref: float, beta: float) -> GridSpec:
    """n_ε: ближайшая степень двойки, не меньшая n·(ε_ref/ε)^β; L не меняется."""
    target = base.n * (eps_ref / eps) ** beta
    n = 1 << max(3, math.ceil(math.log2(target - 1e-9)))
    return GridSpec(base.dim, n, base.L)


def run_member(U: ScalarField, params: ModelParams, V: PotentialSpec, grid: GridSpec, T: float,
               c_t: float = config.EVOLVE_CT, callback_stride: int = config.EVOLVE_CALLBACK_STRIDE,
               lambda_level: float = config.LAMBDA_LEVEL, R_hat: float | None = None,
               w: ScalarField | None = None, snapshot_stride: int = 0,
               snapshot_dir: str | None = None, variables: str = "scaled") -> SweepMember:
    """
    Начальные данные, эволюция до T и диагностика для одного ε.
    variables="gce": данные строятся для исходного уравнения, эволюция идёт в масштабированных
    переменных, выборки возвращаются в исходных.
    """
    R_hat = R_hat or default_R_hat(U)
    if variables == "gce":
        psi0 = propagator.to_scaled_variables(propagator.gce_initial_data(U, params, grid, w=w), params)
    else:
        psi0 = propagator.build_initial_data(U, params, grid, w=w)
    op = riesz.build(grid, params.theta)
    state = propagator.make_state(psi0, params, V, op, c_t=c_t)
    diagnose = make_diagnose(V, params, grid, op, R_hat, lambda_level)
    samples, final = propagator.evolve(state, T, callback_stride, diagnose,
                                       snapshot_stride=snapshot_stride, snapshot_dir=snapshot_dir)
    if variables == "gce":
        samples = gce_samples(samples, params)
    sup_H = max(float(np.linalg.norm(s.H_eps)) for s in samples)
    classical = classical_trajectory(V, params.velocity, T, final.dt if T > 0 else 1.0)
    member = SweepMember(
        eps=params.eps, n=grid.n, samples=samples, sup_H=sup_H,
        sup_distance=compare_trajectories(samples, classical),
        charge_drift=charge_drift(samples), energy_drift=energy_drift(samples),
        sup_center_gap=max(float(np.linalg.norm(s.barycenter - s.concentration_center)) for s in samples),
        dt=final.dt, variables=variables,
    )
    logger.info(f"✅ ε={params.eps}: sup|H|={member.sup_H:.3e}, расстояние={member.sup_distance:.3e}, "
                f"дрейф заряда={member.charge_drift:.2e}, дрейф энергии={member.energy_drift:.2e}")
    return member


def sweep_eps(section: dict[str, Any], dim: int) -> list[float]:
    eps = sorted((float(e) for e in (section.get("eps") or config.SWEEP_EPS)), reverse=True)
    if dim >= 3 and len(eps) > 2:
        logger.info(f"3D: оставляем два наибольших ε из {eps}")
        eps = eps[:2]
    return eps


def load_or_compute_ground(cfg: config.ExperimentConfig) -> gs_mod.GroundState:
    """Основное состояние из flow.from, если каталог указан, иначе градиентный поток."""
    model = params_mod.from_config(cfg.section("model"))
    flow_sec = cfg.sections.get("flow", {})
    if flow_sec.get("from"):
        logger.info(f"Загрузка основного состояния из {flow_sec['from']}")
        return gs_mod.load(flow_sec["from"])
    grid = field.grid_from_config(cfg.section("grid"), model.N)
    return gs_mod.normalized_gradient_flow(float(flow_sec.get("nu", 1.0)), grid, model.p, model.theta,
                                           gs_mod.flow_from_config(flow_sec, cfg.seed))


@dataclass
class RunPlan:
    """Всё, что нужно для прогона одного ε; общий для evolve и sweep."""
    ground: gs_mod.GroundState
    params: ModelParams
    V: PotentialSpec
    base_grid: GridSpec
    T: float
    c_t: float
    callback_stride: int
    lambda_level: float
    R_hat: float
    perturbation: str
    K: float
    seed: int
    snapshot_stride: int
    variables: str = "scaled"

    def grid(self, eps: float, eps_ref: float | None = None) -> GridSpec:
        return grid_for_eps(self.base_grid, eps, eps_ref or eps, self.params.beta)

    def perturbation_for(self, prm: ModelParams) -> ScalarField | None:
        if self.perturbation == "none":
            return None
        return propagator.random_perturbation(self.ground.U, self.K, prm, seed=self.seed)

    def run(self, eps: float, eps_ref: float | None = None, snapshot_dir: str | None = None) -> SweepMember:
        prm = self.params.with_eps(eps)
        w = self.perturbation_for(prm)
        if w is not None:
            report = propagator.check_admissibility(self.ground.U, w, float(np.linalg.norm(prm.velocity)),
                                                    self.V, prm, self.K)
            if not report.admissible:
                logger.warning(f"⚠️ ε={eps}: начальные данные вне допустимого множества: {report.violations}")
        return run_member(self.ground.U, prm, self.V, self.grid(eps, eps_ref), self.T, c_t=self.c_t,
                          callback_stride=self.callback_stride, lambda_level=self.lambda_level,
                          R_hat=self.R_hat, w=w, snapshot_stride=self.snapshot_stride if snapshot_dir else 0,
                          snapshot_dir=snapshot_dir, variables=self.variables)


def plan_from_config(cfg: config.ExperimentConfig, ground: gs_mod.GroundState | None = None) -> RunPlan:
    config.require(cfg, ("model", "grid", "potential", "evolve"))
    model = params_mod.from_config(cfg.section("model"))
    ground = ground or load_or_compute_ground(cfg)
    profile_grid = ground.U.grid
    evolve_sec = cfg.section("evolve")
    dyn = cfg.sections.get("dynamics", {})
    initial = cfg.sections.get("initial", {})
    out = cfg.sections.get("output", {})
    mode = initial.get("perturbation", "none")
    if mode not in ("none", "random"):
        raise config.ConfigError(f"неизвестный режим возмущения {mode!r}", "initial.perturbation")
    variables = initial.get("variables", "scaled")
    if variables not in ("scaled", "gce"):
        raise config.ConfigError(f"неизвестные переменные {variables!r}", "initial.variables")
    if variables == "gce" and model.m != 1.0:
        raise config.ConfigError("исходное уравнение поддерживается только при m = 1", "initial.variables")
    try:
        base_grid = GridSpec(model.N, int(evolve_sec.get("n") or profile_grid.n),
                             float(evolve_sec.get("L") or profile_grid.L))
    except field.FieldError as e:
        raise config.ConfigError(str(e), "evolve") from e
    return RunPlan(
        ground=ground, params=replace(model, omega=ground.omega),
        V=potential_mod.from_config(cfg.section("potential")), base_grid=base_grid,
        T=float(evolve_sec["T"]), c_t=float(evolve_sec.get("c_t", config.EVOLVE_CT)),
        callback_stride=int(evolve_sec.get("callback_stride", config.EVOLVE_CALLBACK_STRIDE)),
        lambda_level=float(dyn.get("lambda_level", config.LAMBDA_LEVEL)),
        R_hat=float(dyn.get("R_hat") or default_R_hat(ground.U)),
        perturbation=mode, K=float(initial.get("K", 1.0)), seed=cfg.seed,
        snapshot_stride=int(out.get("snapshot_stride") or 0), variables=variables,
    )


def run_epsilon_sweep(cfg: config.ExperimentConfig, ground: gs_mod.GroundState | None = None,
                      threads: int = 1, snapshot_root: str | None = None) -> SweepReport:
    """
    Прогон семейства, отличающегося только ε: одно основное состояние на уровне профиля,
    для каждого ε своя сетка n ∝ ε^{−β}. Первая ошибка останавливает прогон: ещё не начатые члены
    отменяются, SweepError несёт частичный отчёт.
    """
    config.require(cfg, ("sweep",))
    plan = plan_from_config(cfg, ground)
    eps_list = sweep_eps(cfg.section("sweep"), plan.params.N)
    report = SweepReport(sweep_id=uuid.uuid4().hex[:12], T=plan.T, eps=eps_list)
    aborted = threading.Event()

    def member(eps: float) -> SweepMember:
        if aborted.is_set():
            raise SweepCancelled(f"ε={eps}: прогон остановлен после ошибки другого члена")
        snap_dir = os.path.join(snapshot_root, f"eps_{eps:g}") if snapshot_root and plan.snapshot_stride else None
        try:
            return plan.run(eps, eps_ref=eps_list[0], snapshot_dir=snap_dir)
        except Exception:
            aborted.set()
            raise

    logger.info(f"Прогон по ε {eps_list}: T={report.T}, потоков={threads}")
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        futures = {pool.submit(member, eps): eps for eps in eps_list}
        _, pending = wait(futures, return_when=FIRST_EXCEPTION)
        for fut in pending:
            fut.cancel()
    for fut, eps in futures.items():
        if fut.cancelled():
            report.failed[eps] = "отменён"
            continue
        error = fut.exception()
        if error is None:
            report.members.append(fut.result())
        elif isinstance(error, SweepCancelled):
            report.failed[eps] = str(error)
        else:
            logger.error(f"❌ Член прогона ε={eps} завершился ошибкой: {error}")
            report.failed[eps] = str(error)
    if report.failed:
        raise SweepError(f"прогон по ε прерван: не завершено членов {len(report.failed)}", report)
    return report


# --- ВЫВОД ---

def csv_header(dim: int) -> list[str]:
    axes = AXES[:dim]
    cols = ["t", "charge", "E_total", "E_internal", "E_potential"]
    for prefix in ("q", "p", "f", "H", "qhat"):
        cols += [f"{prefix}{a}" for a in axes]
    return cols + ["mass_outside"]


def _fmt(x: float) -> str:
    return "%.17g" % x


def write_trajectory_csv(samples: Sequence[TrajectorySample], path: str) -> None:
    if not samples:
        raise ValueError("нет выборок для записи")
    dim = len(samples[0].barycenter)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(csv_header(dim))
        for s in samples:
            row = [s.t, s.charge, s.energy_total, s.energy_internal, s.energy_potential,
                   *s.barycenter, *s.momentum, *s.force, *s.H_eps, *s.concentration_center, s.mass_outside]
            writer.writerow([_fmt(float(x)) for x in row])


def write_sweep_summary(report: SweepReport, path: str) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write(ujson.dumps(report.summary(), indent=2))
