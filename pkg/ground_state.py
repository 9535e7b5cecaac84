# ground_state.py
"""
Основные состояния: минимизация J на сфере Σ_ν нормированным градиентным потоком,
извлечение множителя ω, сертификация невязками Похожаева и Нехари,
переходы сфера ↔ многообразие Нехари.
"""

import logging
import math
import os
from dataclasses import dataclass, field as dc_field
from typing import Any

import numpy as np
import scipy.fft as sfft
import ujson

import config
import field
import riesz
from field import GridSpec, ScalarField
from riesz import RieszOperator

logger = logging.getLogger(__name__)

# Допустимый рост J из-за округления при сравнении шагов потока
J_ROUNDOFF = 1e-13
# Сколько раз можно делить dtau пополам, прежде чем признать поток застрявшим
MAX_HALVINGS = 40
# Допустимая потеря массы при растяжении за пределы коробки
RESCALE_MASS_TOL = 1e-10


class FlowError(RuntimeError):
    def __init__(self, message: str, last_residual: float = float("nan")):
        super().__init__(message)
        self.last_residual = last_residual


class RescaleError(ValueError):
    pass


@dataclass
class FlowSettings:
    dtau: float | None = None
    tol: float = config.FLOW_TOL
    max_iters: int = config.FLOW_MAX_ITERS
    seed_profile: ScalarField | None = None
    seed_width: float | None = None
    project_positive: bool = True
    # Случайное смещение/растяжение гауссовой затравки; None означает без возмущения
    rng_seed: int | None = None


@dataclass
class GroundState:
    U: ScalarField
    nu: float
    omega: float
    J_value: float
    residual_flow: float
    pohozaev_residuals: tuple[float, float, float]
    nehari_residual: float
    p: float = 2.0
    theta: float = 2.0
    iterations: int = 0
    stationarity: float = float("nan")
    weinstein: float = float("nan")
    extra: dict[str, Any] = dc_field(default_factory=dict)

    def record(self) -> dict[str, Any]:
        return {
            "nu": self.nu, "omega": self.omega, "J_value": self.J_value,
            "residual_flow": self.residual_flow,
            "pohozaev_residuals": list(self.pohozaev_residuals),
            "nehari_residual": self.nehari_residual,
            "p": self.p, "theta": self.theta, "iterations": self.iterations,
            "stationarity": self.stationarity, "weinstein": self.weinstein,
            "grid": {"dim": self.U.grid.dim, "n": self.U.grid.n, "L": self.U.grid.L},
            **self.extra,
        }


# --- ФУНКЦИОНАЛЫ ---

def _parts(u: ScalarField, op: RieszOperator, p: float) -> tuple[float, float, float]:
    """(‖∇u‖^2, ‖u‖^2, D(u))."""
    return field.grad_norm_sq(u), field.l2_norm_sq(u), riesz.hartree_energy(op, u, p)


def J(u: ScalarField, op: RieszOperator, p: float) -> float:
    """J(u) = ½‖∇u‖² − (1/p) D(u)."""
    return 0.5 * field.grad_norm_sq(u) - riesz.hartree_energy(op, u, p) / p


def grad_J(u: ScalarField, op: RieszOperator, p: float) -> ScalarField:
    """L²-градиент: −Δu − 2 (I_θ*|u|^p)|u|^{p-2}u."""
    lap = field.laplacian(u)
    nl = riesz.nonlocal_term(op, u, p)
    return ScalarField(u.grid, -lap.values - 2.0 * nl.values)


def smooth_direction(grid: GridSpec, rng: np.random.Generator, width: float) -> ScalarField:
    """Случайное гладкое вещественное поле единичной L²-нормы: шум, отфильтрованный гауссианой в спектре."""
    noise = rng.normal(size=grid.shape)
    values = sfft.ifftn(sfft.fftn(noise) * np.exp(-0.5 * width ** 2 * grid.k2)).real
    phi = ScalarField(grid, values)
    return phi.scaled(1.0 / math.sqrt(field.l2_norm_sq(phi)))


def gradient_check(u: ScalarField, op: RieszOperator, p: float, directions: int = 10,
                   seed: int = 0, delta: float = 1e-4) -> float:
    """max по случайным направлениям φ относительной ошибки <grad_J, φ> против центральной разности J."""
    rng = np.random.default_rng(seed)
    g = grad_J(u, op, p)
    worst = 0.0
    for _ in range(directions):
        phi = smooth_direction(u.grid, rng, width=4.0 * u.grid.h)
        plus = ScalarField(u.grid, u.values + delta * phi.values)
        minus = ScalarField(u.grid, u.values - delta * phi.values)
        fd = (J(plus, op, p) - J(minus, op, p)) / (2.0 * delta)
        an = field.inner(g, phi)
        worst = max(worst, abs(fd - an) / max(abs(an), abs(fd), 1e-300))
    return worst


def E_omega(u: ScalarField, omega: float, op: RieszOperator, p: float) -> float:
    G, M, D = _parts(u, op, p)
    return 0.5 * G + omega * M - D / p


def nehari_residual(u: ScalarField, omega: float, op: RieszOperator, p: float) -> float:
    G, M, D = _parts(u, op, p)
    return 0.5 * G + omega * M - D


def extract_omega(U: ScalarField, op: RieszOperator, p: float, eps: float = 1.0, kappa: float = 1.0) -> float:
    """
    ω = (κD(U) − ½ε²‖∇U‖²)/‖U‖²; отрицательное значение сигнализирует, что U не минимизатор.
    При ε, κ ≠ 1 это множитель масштабированного уравнения для U_ε = ε^{−γ}U(ε^{−β}x).
    """
    G, M, D = _parts(U, op, p)
    if M == 0:
        raise ValueError("нулевое поле")
    return (kappa * D - 0.5 * eps ** 2 * G) / M


def pohozaev_residuals(U: ScalarField, omega: float, op: RieszOperator, p: float) -> tuple[float, float, float]:
    """
    Три невязки, нормированные на ‖∇U‖²: тождество Похожаева, линия Нехари
    и энергетическая линия E_ω(U) − 2ω(p−1)‖U‖²/(N+θ−(N−2)p).
    """
    N, theta = U.grid.dim, op.theta
    G, M, D = _parts(U, op, p)
    if G == 0:
        raise ValueError("нулевой градиент: нормировка невязок невозможна")
    r_poh = 0.5 * (N - 2) * G + omega * N * M - (N + theta) / p * D
    r_neh = 0.5 * G + omega * M - D
    energy = 0.5 * G + omega * M - D / p
    r_energy = energy - 2.0 * omega * (p - 1.0) * M / (N + theta - (N - 2) * p)
    return r_poh / G, r_neh / G, r_energy / G


def stationarity_residual(U: ScalarField, omega: float, op: RieszOperator, p: float) -> float:
    """‖J'(U) + 2ωU‖₂ / ‖∇U‖₂, слабая форма ½ΔU + (I_θ*|U|^p)|U|^{p-2}U = ωU."""
    g = grad_J(U, op, p)
    res = ScalarField(U.grid, g.values + 2.0 * omega * U.values)
    return math.sqrt(field.l2_norm_sq(res) / field.grad_norm_sq(U))


def sigma(N: int, theta: float, p: float, omega: float, c_min: float) -> float:
    """σ = (N+θ−(N−2)p)/(2ω(p−1)) · c_min, квадрат L²-нормы любого основного состояния."""
    if c_min <= 0:
        raise ValueError(f"c_min={c_min}: минимум на многообразии Нехари должен быть положительным")
    num = N + theta - (N - 2) * p
    den = 2.0 * omega * (p - 1.0)
    if num <= 0 or den <= 0:
        raise ValueError("знаменатель или числитель σ неположителен: проверьте диапазон p и ω")
    return num / den * c_min


def weinstein_quotient(u: ScalarField, omega: float, op: RieszOperator, p: float) -> float:
    """(‖∇u‖² + ω‖u‖²) / D(u)^{1/p}."""
    G, M, D = _parts(u, op, p)
    if D <= 0:
        raise ValueError("D(u) = 0")
    return (G + omega * M) / D ** (1.0 / p)


def find_negative_dilation(u: ScalarField, op: RieszOperator, p: float) -> tuple[float, float]:
    """
    Ищет τ ∈ (0,1] с J(u_τ) < 0, u_τ(x) = τ^{N/2}u(τx), по явной формуле
    J(u_τ) = τ²/2‖∇u‖² − τ^{Np−θ−N}/p D(u). Делим τ пополам, пока значение не станет отрицательным.
    """
    N = u.grid.dim
    G, _, D = _parts(u, op, p)
    if D <= 0:
        raise ValueError("D(u) = 0: вырожденное поле")
    e = N * p - op.theta - N

    def J_tau(tau: float) -> float:
        return 0.5 * tau ** 2 * G - tau ** e * D / p

    tau = 1.0
    value = J_tau(tau)
    while value >= 0:
        tau *= 0.5
        value = J_tau(tau)
        if tau < 1e-300:
            raise ValueError("не удалось найти отрицательное растяжение")
    return tau, value


# --- ПЕРЕМАСШТАБИРОВАНИЯ ---

def dilate(u: ScalarField, tau: float, a: float) -> ScalarField:
    """x ↦ τ^a u(τx) на той же сетке (спектральная интерполяция)."""
    if tau <= 0:
        raise RescaleError(f"τ={tau} должно быть положительным")
    if tau < 1.0:
        # Точки τx покрывают только [-τL, τL): масса снаружи была бы потеряна
        inside = np.ones(u.grid.shape, dtype=bool)
        for x in u.grid.coords:
            inside &= (x >= -tau * u.grid.L) & (x < tau * u.grid.L)
        total = field.l2_norm_sq(u)
        lost = float(field.integrate(np.abs(u.values[~inside]) ** 2, u.grid)) / total if total else 0.0
        if lost > RESCALE_MASS_TOL:
            raise RescaleError(f"растяжение τ={tau:.4g} выносит долю массы {lost:.2e} за пределы коробки")
    return field.resample(u, u.grid, scale=tau).scaled(tau ** a)


def _conversion_exponent(theta: float, p: float) -> float:
    return (theta + 2.0) / (2.0 * (p - 1.0))


def sphere_to_nehari(U: ScalarField, omega_target: float, op: RieszOperator, p: float) -> ScalarField:
    """w(x) = τ^{(θ+2)/(2(p−1))} U(τx), τ = √(ω_target/ω_U): решение с множителем ω_target."""
    omega_U = extract_omega(U, op, p)
    if omega_U <= 0 or omega_target <= 0:
        raise RescaleError(f"множители должны быть положительны: ω_U={omega_U}, ω_target={omega_target}")
    _warn_if_not_stationary(U, omega_U, op, p)
    tau = math.sqrt(omega_target / omega_U)
    return dilate(U, tau, _conversion_exponent(op.theta, p))


def nehari_to_sphere(w: ScalarField, nu_target: float, op: RieszOperator, p: float) -> ScalarField:
    """Обратный переход: τ = (ν/‖w‖²)^{(p−1)/(θ+2−N(p−1))}."""
    N, theta = w.grid.dim, op.theta
    denom = theta + 2.0 - N * (p - 1.0)
    if denom <= 0:
        raise RescaleError("θ+2−N(p−1) <= 0: p вне допустимого диапазона")
    tau = (nu_target / field.l2_norm_sq(w)) ** ((p - 1.0) / denom)
    return dilate(w, tau, _conversion_exponent(theta, p))


def _warn_if_not_stationary(U: ScalarField, omega: float, op: RieszOperator, p: float) -> None:
    worst = max(abs(r) for r in pohozaev_residuals(U, omega, op, p))
    if worst > 1e-2:
        logger.warning(f"⚠️ Преобразование применено к нестационарному полю: невязка Похожаева {worst:.2e}")


# --- ГРАДИЕНТНЫЙ ПОТОК ---

def seed_field(grid: GridSpec, nu: float, flow: FlowSettings) -> ScalarField:
    if flow.seed_profile is not None:
        seed = ScalarField(grid, np.abs(np.real(flow.seed_profile.values)))
    else:
        width = flow.seed_width or grid.L / 6.0
        center = np.zeros(grid.dim)
        if flow.rng_seed is not None:
            rng = np.random.default_rng(flow.rng_seed)
            center = rng.uniform(-grid.L / 20.0, grid.L / 20.0, size=grid.dim)
            width *= rng.uniform(0.8, 1.2)
        seed = field.gaussian(grid, width, center)
    total = field.l2_norm_sq(seed)
    if total <= 0:
        raise FlowError("затравочный профиль нулевой")
    return seed.scaled(math.sqrt(nu / total))


def normalized_gradient_flow(nu: float, grid: GridSpec, p: float, theta: float,
                             flow: FlowSettings | None = None, mode: str = riesz.FREE_SPACE) -> GroundState:
    """
    Полунеявный нормированный градиентный поток для min J на Σ_ν:
    û* = (û + dτ·N̂(u)) / (1 + dτ(|k|²/2 + μ)), проекция на u >= 0, перенормировка к ‖u‖² = ν.
    μ = (D − ½‖∇u‖²)/ν: текущая оценка множителя; с ним неподвижная точка потока
    удовлетворяет стационарному уравнению точно, а не с ошибкой O(dτ).
    Шаг, увеличивающий J, отбрасывается с уменьшением dτ вдвое.
    """
    if nu <= 0:
        raise ValueError(f"ν={nu} должно быть положительным")
    flow = flow or FlowSettings()
    op = riesz.build(grid, theta, mode)
    dtau = flow.dtau or config.FLOW_DTAU_FACTOR * grid.h ** 2
    dtau_floor = dtau * 0.5 ** MAX_HALVINGS
    workers = field.workers()

    u = seed_field(grid, nu, flow).values
    conv, factor = riesz.potential_and_factor(op, u, p)
    J_cur, mu = _J_from(u, conv, grid, p, nu)
    incr = float("inf")
    it = 0
    logger.info(f"Запуск градиентного потока: ν={nu}, dim={grid.dim}, n={grid.n}, L={grid.L}, dτ={dtau:.3e}")

    while it < flow.max_iters:
        # Отрицательный μ в начале потока ослабил бы знаменатель
        denom = 1.0 + dtau * (0.5 * grid.k2 + max(mu, 0.0))
        rhs = u + dtau * conv * factor * u
        u_new = sfft.ifftn(sfft.fftn(rhs, workers=workers) / denom, workers=workers).real
        if flow.project_positive:
            np.maximum(u_new, 0.0, out=u_new)
        mass = float(field.integrate(u_new * u_new, grid))
        u_new *= math.sqrt(nu / mass)
        conv_new, factor_new = riesz.potential_and_factor(op, u_new, p)
        J_new, mu_new = _J_from(u_new, conv_new, grid, p, nu)

        if J_new > J_cur + J_ROUNDOFF * max(1.0, abs(J_cur)):
            dtau *= 0.5
            if dtau < dtau_floor:
                raise FlowError("шаг dτ исчерпан: J не убывает", last_residual=incr)
            logger.debug(f"Итерация {it}: J выросла ({J_new:.12e} > {J_cur:.12e}), dτ → {dtau:.3e}")
            continue

        it += 1
        incr = float(np.max(np.abs(u_new - u))) / dtau
        u, conv, factor, J_cur, mu = u_new, conv_new, factor_new, J_new, mu_new
        if it % config.FLOW_LOG_EVERY == 0:
            logger.info(f"Итерация {it}: J={J_cur:.10e}, μ={mu:.10e}, приращение={incr:.3e}, dτ={dtau:.3e}")
        if incr < flow.tol:
            break
    else:
        raise FlowError(f"поток не сошёлся за {flow.max_iters} итераций", last_residual=incr)

    return certify(ScalarField(grid, u), op, p, nu=nu, residual_flow=incr, iterations=it)


def _J_from(u: np.ndarray, conv: np.ndarray, grid: GridSpec, p: float, nu: float) -> tuple[float, float]:
    """(J(u), μ(u)) по уже вычисленной свёртке."""
    G = field.grad_norm_sq(ScalarField(grid, u))
    D = float(field.integrate(conv * np.abs(u) ** p, grid))
    return 0.5 * G - D / p, (D - 0.5 * G) / nu


def certify(U: ScalarField, op: RieszOperator, p: float, nu: float | None = None,
            residual_flow: float = 0.0, iterations: int = 0) -> GroundState:
    """Заполняет все сертификационные поля; J >= 0 означает, что U не кандидат в минимизаторы."""
    nu = field.l2_norm_sq(U) if nu is None else nu
    omega = extract_omega(U, op, p)
    J_value = J(U, op, p)
    if J_value >= 0:
        raise FlowError(f"не кандидат в минимизаторы: J={J_value:.3e} >= 0", last_residual=residual_flow)
    residuals = pohozaev_residuals(U, omega, op, p)
    gs = GroundState(
        U=U, nu=nu, omega=omega, J_value=J_value, residual_flow=residual_flow,
        pohozaev_residuals=residuals,
        nehari_residual=nehari_residual(U, omega, op, p),
        p=p, theta=op.theta, iterations=iterations,
        stationarity=stationarity_residual(U, omega, op, p),
        weinstein=weinstein_quotient(U, omega, op, p),
    )
    if omega <= 0:
        logger.warning(f"⚠️ Извлечённый множитель ω={omega:.3e} неположителен")
    logger.info(f"✅ Основное состояние: J={J_value:.10e}, ω={omega:.10e}, "
                f"Похожаев={max(abs(r) for r in residuals):.2e}, итераций={iterations}")
    return gs


def self_consistent_sigma(nu0: float, grid: GridSpec, p: float, theta: float,
                          flow: FlowSettings | None = None, passes: int = 2,
                          mode: str = riesz.FREE_SPACE) -> list[GroundState]:
    """Режим σ: ν_{k+1} = σ(ω_k, E_ω(U_k)); на точном основном состоянии это неподвижная точка."""
    op = riesz.build(grid, theta, mode)
    states = [normalized_gradient_flow(nu0, grid, p, theta, flow, mode)]
    for _ in range(passes):
        prev = states[-1]
        c = E_omega(prev.U, prev.omega, op, p)
        nu_next = sigma(grid.dim, theta, p, prev.omega, c)
        logger.info(f"Шаг σ: ν={prev.nu:.10e} → σ={nu_next:.10e}")
        states.append(normalized_gradient_flow(nu_next, grid, p, theta, flow, mode))
    return states


# --- СОХРАНЕНИЕ ---

def save(gs: GroundState, directory: str, name: str = "ground_state") -> tuple[str, str]:
    os.makedirs(directory, exist_ok=True)
    snap = os.path.join(directory, f"{name}.chqf")
    meta = os.path.join(directory, f"{name}.json")
    field.save_snapshot(gs.U, snap)
    with open(meta, "w", encoding="utf-8") as f:
        f.write(ujson.dumps(gs.record(), indent=2))
    return snap, meta


def load(directory: str, name: str = "ground_state") -> GroundState:
    U = field.load_snapshot(os.path.join(directory, f"{name}.chqf"))
    with open(os.path.join(directory, f"{name}.json"), "r", encoding="utf-8") as f:
        rec = ujson.loads(f.read())
    return GroundState(
        U=U, nu=rec["nu"], omega=rec["omega"], J_value=rec["J_value"],
        residual_flow=rec["residual_flow"], pohozaev_residuals=tuple(rec["pohozaev_residuals"]),
        nehari_residual=rec["nehari_residual"], p=rec.get("p", 2.0), theta=rec.get("theta", 2.0),
        iterations=rec.get("iterations", 0), stationarity=rec.get("stationarity", float("nan")),
        weinstein=rec.get("weinstein", float("nan")),
    )


def flow_from_config(section: dict[str, Any], seed: int | None = None) -> FlowSettings:
    return FlowSettings(
        dtau=section.get("dtau"), tol=float(section.get("tol", config.FLOW_TOL)),
        max_iters=int(section.get("max_iters", config.FLOW_MAX_ITERS)),
        seed_width=section.get("seed_width"),
        project_positive=bool(section.get("project_positive", True)),
        rng_seed=seed,
    )
