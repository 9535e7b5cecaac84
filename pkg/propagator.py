# propagator.py
"""
Интегрирование по времени задачи iε∂ψ/∂t = −(ε²/2)Δψ + Vψ − κ(I_θ*|ψ|^p)|ψ|^{p−2}ψ
расщеплением Стрэнга (потенциал – кинетика – потенциал), построение и проверка начальных данных.
"""

import logging
import math
import os
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np
import scipy.fft as sfft

import config
import field
import params as params_mod
import potential as potential_mod
import riesz
from field import GridSpec, ScalarField
from params import ModelParams
from potential import PotentialSpec
from riesz import RieszOperator

logger = logging.getLogger(__name__)

# Запас по правилу фазового разрешения: W меняется вдоль траектории
DT_MARGIN = 0.9
LOG_EVERY_STEPS = 1000


class ResolutionError(ValueError):
    pass


class PropagationError(RuntimeError):
    def __init__(self, message: str, step: int = -1):
        super().__init__(message)
        self.step = step


class BoundaryTouchError(PropagationError):
    pass


@dataclass(frozen=True, eq=False)
class PropagatorState:
    psi: ScalarField
    t: float
    params: ModelParams
    V_grid: np.ndarray
    riesz: RieszOperator
    dt: float
    kappa: float
    c_t: float = config.EVOLVE_CT
    step_index: int = 0
    kinetic_phase: np.ndarray | None = None


@dataclass
class AdmissibilityReport:
    charge_match: float
    w_norm: float
    w_bound: float
    grad_S_sup: float
    potential_moment: float
    K: float
    admissible: bool
    violations: list[str]


@dataclass
class EnergyParts:
    total: float
    internal: float
    kinetic_dynamical: float
    potential: float


# --- НАЧАЛЬНЫЕ ДАННЫЕ ---

def _profile(U) -> ScalarField:
    # Принимаем GroundState или готовое поле
    return U.U if hasattr(U, "U") else U


def _check_resolution(profile: ScalarField, params: ModelParams, grid: GridSpec, min_points: int) -> None:
    half = params.eps ** params.beta * field.half_width(profile)
    if half / grid.h < min_points:
        raise ResolutionError(
            f"профиль не разрешён: полуширина на полувысоте {half:.4g} покрывает {half / grid.h:.2f} "
            f"узлов (< {min_points}) при ε={params.eps}")
    speed = float(np.linalg.norm(params.velocity))
    if speed > 0:
        wavelength = 2.0 * math.pi * params.eps / speed
        if wavelength / grid.h < min_points:
            raise ResolutionError(
                f"фаза x·v/ε не разрешена: длина волны {wavelength:.4g} покрывает "
                f"{wavelength / grid.h:.2f} узлов (< {min_points})")


def _plane_phase(grid: GridSpec, params: ModelParams) -> np.ndarray:
    phase = sum(x * v for x, v in zip(grid.coords, params.velocity)) / params.eps
    return np.exp(1j * phase)


def build_initial_data(U, params: ModelParams, grid: GridSpec | None = None, w: ScalarField | None = None,
                       center=None, min_points: int = config.MIN_POINTS_PER_SCALE) -> ScalarField:
    """ψ₀(x) = ε^{−γ}(U+w)(ε^{−β}(x−q)) e^{i x·v/ε}."""
    profile = _profile(U)
    grid = grid or profile.grid
    if w is not None:
        profile = profile + w
    _check_resolution(profile, params, grid, min_points)
    scaled = field.resample(profile, grid, scale=params.eps ** (-params.beta), center=center)
    values = params.eps ** (-params.gamma) * scaled.values * _plane_phase(grid, params)
    psi0 = ScalarField(grid, values)
    expected = field.l2_norm_sq(profile) * params.eps ** (params.N * params.beta - 2.0 * params.gamma)
    got = field.l2_norm_sq(psi0)
    if abs(got - expected) > 1e-6 * expected:
        raise ResolutionError(f"профиль обрезан коробкой: заряд {got:.10e} вместо {expected:.10e}")
    return psi0


def gce_initial_data(U, params: ModelParams, grid: GridSpec | None = None, w: ScalarField | None = None,
                     min_points: int = config.MIN_POINTS_PER_SCALE) -> ScalarField:
    """Начальные данные исходного уравнения: ε^{(γ−α)/(2(p−1))} (U+w)(ε^{−β}x) e^{i x·v/ε}."""
    profile = _profile(U)
    grid = grid or profile.grid
    if w is not None:
        profile = profile + w
    _check_resolution(profile, params, grid, min_points)
    data_exponent, _, _ = params_mod.gce_coefficients(params)
    scaled = field.resample(profile, grid, scale=params.eps ** (-params.beta))
    return ScalarField(grid, params.eps ** data_exponent * scaled.values * _plane_phase(grid, params))


def gce_amplitude(params: ModelParams) -> float:
    """Множитель ψ̂ = A·ψ между исходным и масштабированным уравнением; только при m = 1."""
    if params.m != 1.0:
        raise params_mod.ParameterError(f"m={params.m}: переход без растяжения по x требует m = 1")
    _, transform, _ = params_mod.gce_coefficients(params)
    return transform


def to_scaled_variables(psi: ScalarField, params: ModelParams) -> ScalarField:
    return psi.scaled(gce_amplitude(params))


def from_scaled_variables(psi_hat: ScalarField, params: ModelParams) -> ScalarField:
    return psi_hat.scaled(1.0 / gce_amplitude(params))


def random_perturbation(U, K: float, params: ModelParams, seed: int = 0) -> ScalarField:
    """
    Гладкое случайное w с ‖w‖_{H¹} = ½Kε^{2(β−1)} и ‖U+w‖² = ‖U‖².
    w = aU + s·g, g ⟂ U; a подбирается из условия на заряд, s находится бисекцией по норме H¹.
    """
    profile = _profile(U)
    grid = profile.grid
    rng = np.random.default_rng(seed)
    spec = rng.normal(size=grid.shape) + 1j * rng.normal(size=grid.shape)
    # Ограничиваем спектр масштабом профиля
    kw = 1.0 / max(field.half_width(profile), grid.h)
    spec *= np.exp(-grid.k2 / (2.0 * kw ** 2))
    g = sfft.ifftn(spec).real
    M = field.l2_norm_sq(profile)
    g -= field.inner(profile, ScalarField(grid, g)) / M * profile.values
    g_field = ScalarField(grid, g)
    g_field = g_field.scaled(1.0 / math.sqrt(field.l2_norm_sq(g_field)))
    target = 0.5 * K * params.eps ** (2.0 * (params.beta - 1.0))

    def build(s: float) -> ScalarField:
        a = math.sqrt(max(1.0 - s * s / M, 0.0)) - 1.0
        return ScalarField(grid, a * profile.values + s * g_field.values)

    lo, hi = 0.0, math.sqrt(M)
    if field.h1_norm(build(hi)) < target:
        raise ResolutionError(f"целевая норма возмущения {target:.3e} недостижима при сохранении заряда")
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if field.h1_norm(build(mid)) < target:
            lo = mid
        else:
            hi = mid
    return build(0.5 * (lo + hi))


def check_admissibility(U, w: ScalarField | None, S0_gradient_sup: float, V: PotentialSpec,
                        params: ModelParams, K: float, charge_tol: float = 1e-8) -> AdmissibilityReport:
    """Четыре условия допустимого множества: заряд, ‖w‖_{H¹} < Kε^{2(β−1)}, ‖∇S₀‖∞ <= K, ∫V u_ε² <= K."""
    profile = _profile(U)
    w = w if w is not None else field.zeros(profile.grid)
    total = profile + w
    sigma_value = field.l2_norm_sq(profile)
    charge_match = abs(field.l2_norm_sq(total) - sigma_value)
    w_norm = field.h1_norm(w)
    w_bound = K * params.eps ** (2.0 * (params.beta - 1.0))
    # ∫V(x) ε^{−2γ}(U+w)²(ε^{−β}x) dx = ε^{Nβ−2γ} ∫V(ε^β y)(U+w)²(y) dy
    y = np.stack(profile.grid.coords, axis=-1) * params.eps ** params.beta
    moment = params.eps ** (params.N * params.beta - 2.0 * params.gamma) * float(
        field.integrate(potential_mod.eval(V, y) * np.abs(total.values) ** 2, profile.grid))

    violations = []
    if charge_match > charge_tol * sigma_value:
        violations.append("‖U+w‖² = σ")
    if not w_norm < w_bound:
        violations.append(f"‖w‖ < Kε^(2(β−1)): {w_norm:.4g} >= {w_bound:.4g}")
    if S0_gradient_sup > K:
        violations.append(f"‖∇S₀‖∞ <= K: {S0_gradient_sup:.4g} > {K}")
    if moment > K:
        violations.append(f"∫V u² <= K: {moment:.4g} > {K}")
    return AdmissibilityReport(charge_match, w_norm, w_bound, S0_gradient_sup, moment, K,
                               not violations, violations)


# --- ЭВОЛЮЦИЯ ---

def _W(op: RieszOperator, psi: np.ndarray, p: float) -> np.ndarray:
    conv, factor = riesz.potential_and_factor(op, psi, p)
    return conv * factor


def max_stable_dt(psi: ScalarField, V_grid: np.ndarray, op: RieszOperator, params: ModelParams,
                  c_t: float = config.EVOLVE_CT) -> float:
    """c_t·ε / max(|V| + κ|W|)."""
    kappa = params_mod.kappa(params)
    bound = float(np.max(np.abs(V_grid) + kappa * np.abs(_W(op, psi.values, params.p))))
    return math.inf if bound == 0 else c_t * params.eps / bound


def make_state(psi0: ScalarField, params: ModelParams, V: PotentialSpec, op: RieszOperator | None = None,
               c_t: float = config.EVOLVE_CT, dt: float | None = None, mode: str = riesz.FREE_SPACE) -> PropagatorState:
    grid = psi0.grid
    op = op or riesz.build(grid, params.theta, mode)
    V_field, _ = potential_mod.sample_on_grid(V, grid)
    V_grid = V_field.values
    rule = max_stable_dt(psi0, V_grid, op, params, c_t)
    if dt is None:
        if not math.isfinite(rule):
            raise ResolutionError("V = 0 и κW = 0: задайте dt явно")
        dt = DT_MARGIN * rule
    elif dt > rule:
        raise ResolutionError(f"dt={dt:.3e} нарушает правило фазового разрешения (<= {rule:.3e})")
    psi = ScalarField(grid, psi0.values.astype(complex))
    return PropagatorState(psi=psi, t=0.0, params=params, V_grid=V_grid, riesz=op, dt=dt,
                           kappa=params_mod.kappa(params), c_t=c_t,
                           kinetic_phase=_kinetic_phase(grid, params.eps, dt))


def _kinetic_phase(grid: GridSpec, eps: float, dt: float) -> np.ndarray:
    return np.exp(-1j * dt * eps * grid.k2 / 2.0)


def strang_step(state: PropagatorState) -> PropagatorState:
    """Полушаг потенциала, полный кинетический шаг в спектре, полушаг потенциала с пересчитанным W."""
    prm, op, dt = state.params, state.riesz, state.dt
    eps, kappa, V = prm.eps, state.kappa, state.V_grid
    psi = state.psi.values
    kin = state.kinetic_phase if state.kinetic_phase is not None else _kinetic_phase(state.psi.grid, eps, dt)

    W = _W(op, psi, prm.p)
    bound = float(np.max(np.abs(V) + kappa * np.abs(W)))
    if bound > 0 and dt > state.c_t * eps / bound:
        raise ResolutionError(f"шаг {state.step_index}: dt={dt:.3e} > c_t·ε/max(|V|+κ|W|)={state.c_t * eps / bound:.3e}")
    psi = psi * np.exp(-0.5j * dt * (V - kappa * W) / eps)
    w = field.workers()
    psi = sfft.ifftn(sfft.fftn(psi, workers=w) * kin, workers=w)
    W = _W(op, psi, prm.p)
    psi = psi * np.exp(-0.5j * dt * (V - kappa * W) / eps)

    if not np.isfinite(psi).all():
        raise PropagationError(f"NaN/Inf в поле на шаге {state.step_index + 1}", step=state.step_index + 1)
    return replace(state, psi=ScalarField(state.psi.grid, psi), t=state.t + dt,
                   step_index=state.step_index + 1, kinetic_phase=kin)


def reverse(state: PropagatorState) -> PropagatorState:
    """Обращение времени: ψ → conj(ψ)."""
    return replace(state, psi=ScalarField(state.psi.grid, np.conj(state.psi.values)))


def energy(psi: ScalarField, V_grid: np.ndarray, op: RieszOperator, params: ModelParams) -> EnergyParts:
    """E_ε = внутренняя J_ε(|ψ|) + кинетическая ½∫|∇S|²u² + потенциальная ∫V|ψ|²."""
    eps, p = params.eps, params.p
    grid = psi.grid
    values = psi.values.astype(complex)
    grads = field.gradient(ScalarField(grid, values))
    rho = np.abs(values) ** 2
    grad_sq = sum(np.abs(g.values) ** 2 for g in grads)
    re_sq = sum(np.real(np.conj(values) * g.values) ** 2 for g in grads)
    # |∇u|² = (Re ψ̄∇ψ)²/|ψ|²; в пренебрежимо малых узлах вклад опускается
    mask = rho > rho.max() * 1e-28
    grad_u_sq = np.divide(re_sq, rho, out=np.zeros_like(rho), where=mask)
    kin_total = 0.5 * eps ** 2 * float(field.integrate(grad_sq, grid))
    kin_internal = 0.5 * eps ** 2 * float(field.integrate(grad_u_sq, grid))
    pot = float(field.integrate(V_grid * rho, grid))
    nonlinear = params_mod.kappa(params) / p * riesz.hartree_energy(op, psi, p)
    total = kin_total + pot - nonlinear
    internal = kin_internal - nonlinear
    return EnergyParts(total=total, internal=internal,
                       kinetic_dynamical=kin_total - kin_internal, potential=pot)


def evolve(state: PropagatorState, T: float, callback_stride: int,
           diagnose: Callable[[ScalarField, float], object],
           snapshot_stride: int = 0, snapshot_dir: str | None = None) -> tuple[list, PropagatorState]:
    """
    Доводит состояние до времени t + T; diagnose вызывается на шаге 0, каждые callback_stride шагов и в конце.
    Возвращает (выборки, конечное состояние).
    """
    if T < 0:
        raise ValueError("T должно быть неотрицательным")
    samples = [_sample(state, diagnose)]
    if T == 0:
        return samples, state
    steps = max(1, math.ceil(T / state.dt - 1e-9))
    dt = T / steps
    if dt != state.dt:
        state = replace(state, dt=dt, kinetic_phase=_kinetic_phase(state.psi.grid, state.params.eps, dt))
    stride = max(1, int(callback_stride))
    logger.info(f"Эволюция: T={T}, шагов={steps}, dt={dt:.3e}, ε={state.params.eps}, n={state.psi.grid.n}")
    for k in range(1, steps + 1):
        state = strang_step(state)
        if k % stride == 0 or k == steps:
            samples.append(_sample(state, diagnose))
        if snapshot_stride and snapshot_dir and k % snapshot_stride == 0:
            os.makedirs(snapshot_dir, exist_ok=True)
            field.save_snapshot(state.psi, os.path.join(snapshot_dir, f"psi_{k:08d}.chqf"))
        if k % LOG_EVERY_STEPS == 0:
            logger.info(f"Шаг {k}/{steps}, t={state.t:.4f}")
    return samples, state


def _sample(state: PropagatorState, diagnose: Callable) -> object:
    frac = field.boundary_touch(state.psi)
    if frac > config.BOUNDARY_ABORT:
        raise BoundaryTouchError(
            f"масса вне L/2 вокруг барицентра {frac:.3e} > {config.BOUNDARY_ABORT} при t={state.t:.4f}",
            step=state.step_index)
    return diagnose(state.psi, state.t)
