# riesz.py
"""
Нелокальное ядро: свёртка с потенциалом Рисса I_θ через БПФ,
энергия Хартри D(u) и нелинейный член (I_θ*|u|^p)|u|^{p-2}u.
"""

import logging
import math
import threading
from dataclasses import dataclass

import numpy as np
import scipy.fft as sfft
from scipy.special import gamma as gamma_fn, gammaincc

import field
from field import GridSpec, ScalarField

logger = logging.getLogger(__name__)

FREE_SPACE = "free_space"
PERIODIC = "periodic"
MODES = (FREE_SPACE, PERIODIC)

# Правило для особой ячейки в нуле
ORIGIN_BALL = "ball"
ORIGIN_LATTICE = "lattice"
ORIGIN_RULES = (ORIGIN_BALL, ORIGIN_LATTICE)

# Кэш операторов: спектр ядра считается один раз на (сетка, θ, режим)
_OPERATOR_CACHE: dict[tuple, "RieszOperator"] = {}
_CACHE_LOCK = threading.Lock()


@dataclass(frozen=True, eq=False)
class RieszOperator:
    grid: GridSpec
    theta: float
    mode: str
    # rfftn-раскладка; в режиме free_space на удвоенной сетке
    kernel_spectrum: np.ndarray
    origin: str = ORIGIN_LATTICE


def riesz_constant(N: int, theta: float) -> float:
    """Γ((N-θ)/2) / (Γ(θ/2) π^{N/2} 2^θ)."""
    return float(gamma_fn((N - theta) / 2.0) / (gamma_fn(theta / 2.0) * math.pi ** (N / 2.0) * 2.0 ** theta))


def kernel(N: int, theta: float, r: np.ndarray) -> np.ndarray:
    return riesz_constant(N, theta) * np.power(r, theta - N)


def origin_cell_average(N: int, theta: float, h: float) -> float:
    """Среднее I_θ по шару объёма h^N: C·N·r0^{θ-N}/θ."""
    ball = math.pi ** (N / 2.0) / float(gamma_fn(N / 2.0 + 1.0))
    r0 = (h ** N / ball) ** (1.0 / N)
    return riesz_constant(N, theta) * N * r0 ** (theta - N) / theta


def lattice_zeta(N: int, s: float, radius: int = 5) -> float:
    """
    Дзета-функция Эпштейна кубической решётки Σ'|j|^{-s}, аналитически продолженная
    (разбиение интеграла тета-функции в точке 1); требуется 0 < s < N.
    """
    r = np.arange(-radius, radius + 1)
    mesh = np.meshgrid(*([r] * N), indexing="ij")
    j2 = sum(m * m for m in mesh).ravel().astype(float)
    x = math.pi * j2[j2 > 0]
    a, b = s / 2.0, (N - s) / 2.0
    terms = (gammaincc(a, x) * gamma_fn(a) * x ** (-a)
             + gammaincc(b, x) * gamma_fn(b) * x ** (-b))
    total = 2.0 / (s - N) - 2.0 / s + float(terms.sum())
    return total * math.pi ** (s / 2.0) / float(gamma_fn(s / 2.0))


def origin_lattice_value(N: int, theta: float, h: float) -> float:
    """Значение в нуле, при котором сумма по решётке точна до O(h^{θ+2}): −C·Z(N−θ)·h^{θ−N}."""
    return -riesz_constant(N, theta) * lattice_zeta(N, N - theta) * h ** (theta - N)


def _free_space_spectrum(grid: GridSpec, theta: float, origin: str) -> np.ndarray:
    n, N, h = grid.n, grid.dim, grid.h
    idx = np.arange(2 * n)
    d = np.where(idx < n, idx, idx - 2 * n) * h
    mesh = np.meshgrid(*([d] * N), indexing="ij")
    r = np.sqrt(sum(x * x for x in mesh))
    values = np.empty_like(r)
    nonzero = r > 0
    values[nonzero] = kernel(N, theta, r[nonzero])
    if origin == ORIGIN_BALL:
        values[~nonzero] = origin_cell_average(N, theta, h)
    else:
        values[~nonzero] = origin_lattice_value(N, theta, h)
    spectrum = sfft.rfftn(values, workers=field.workers()).real * grid.cell_volume
    return clip_negative_spectrum(spectrum)


def clip_negative_spectrum(spectrum: np.ndarray) -> np.ndarray:
    """Обнуляет отрицательные значения спектра ядра на месте; квадратичная форма остаётся неотрицательной."""
    negative = spectrum < 0
    if negative.any():
        logger.warning(f"⚠️ Обрезаны отрицательные значения спектра ядра: {int(negative.sum())} шт., "
                       f"минимум {spectrum[negative].min():.3e}")
        spectrum[negative] = 0.0
    return spectrum


def _periodic_spectrum(grid: GridSpec, theta: float) -> np.ndarray:
    k = grid.wavenumbers
    kr = 2.0 * np.pi * sfft.rfftfreq(grid.n, d=grid.h)
    axes = [k] * (grid.dim - 1) + [kr]
    mesh = np.meshgrid(*axes, indexing="ij")
    k2 = sum(x * x for x in mesh)
    spectrum = np.zeros_like(k2)
    nonzero = k2 > 0
    spectrum[nonzero] = k2[nonzero] ** (-theta / 2.0)
    return spectrum


def build(grid: GridSpec, theta: float, mode: str = FREE_SPACE, origin: str = ORIGIN_LATTICE) -> RieszOperator:
    if not 0.0 < theta < grid.dim:
        raise ValueError(f"θ={theta} вне (0, dim={grid.dim})")
    if mode not in MODES:
        raise ValueError(f"неизвестный режим ядра: {mode}")
    if origin not in ORIGIN_RULES:
        raise ValueError(f"неизвестное правило для ячейки в нуле: {origin}")
    key = (grid, float(theta), mode, origin)
    with _CACHE_LOCK:
        cached = _OPERATOR_CACHE.get(key)
    if cached is not None:
        return cached
    if mode == FREE_SPACE:
        spectrum = _free_space_spectrum(grid, theta, origin)
    else:
        spectrum = _periodic_spectrum(grid, theta)
    op = RieszOperator(grid, float(theta), mode, spectrum, origin)
    with _CACHE_LOCK:
        _OPERATOR_CACHE[key] = op
    logger.info(f"Ядро Рисса построено: dim={grid.dim}, n={grid.n}, θ={theta}, режим={mode}")
    return op


def convolve_values(op: RieszOperator, values: np.ndarray) -> np.ndarray:
    """I_θ * f для вещественного массива на сетке оператора."""
    n, N = op.grid.n, op.grid.dim
    w = field.workers()
    if op.mode == FREE_SPACE:
        shape = (2 * n,) * N
        spec = sfft.rfftn(values, s=shape, workers=w)
        out = sfft.irfftn(spec * op.kernel_spectrum, s=shape, workers=w)
        return out[(slice(0, n),) * N]
    spec = sfft.rfftn(values, workers=w)
    return sfft.irfftn(spec * op.kernel_spectrum, s=op.grid.shape, workers=w)


def convolve(op: RieszOperator, f: ScalarField) -> ScalarField:
    return ScalarField(f.grid, convolve_values(op, np.real(f.values)))


def _power_parts(values: np.ndarray, p: float) -> tuple[np.ndarray, np.ndarray]:
    """(|u|^p, |u|^{p-2}) с продолжением нулём в точках u = 0."""
    mod = np.abs(values)
    mod_p = mod ** p
    factor = np.power(mod, p - 2.0, out=np.zeros_like(mod), where=mod > 0)
    return mod_p, factor


def hartree_energy(op: RieszOperator, u: ScalarField, p: float) -> float:
    """D(u) = ∫(I_θ*|u|^p)|u|^p."""
    g = np.abs(u.values) ** p
    return float(field.integrate(convolve_values(op, g) * g, u.grid))


def potential_and_factor(op: RieszOperator, values: np.ndarray, p: float) -> tuple[np.ndarray, np.ndarray]:
    """Возвращает (I_θ*|u|^p, |u|^{p-2}); вещественный потенциал W = произведение."""
    mod_p, factor = _power_parts(values, p)
    return convolve_values(op, mod_p), factor


def nonlocal_term(op: RieszOperator, u: ScalarField, p: float) -> ScalarField:
    conv, factor = potential_and_factor(op, u.values, p)
    return ScalarField(u.grid, conv * factor * u.values)


def hls_ratio(op: RieszOperator, u: ScalarField, p: float, N: int, theta: float) -> float:
    """D(u) / (‖∇u‖^{Np-θ-N} ‖u‖^{2p-Np+N+θ}); эмпирическое значение, без претензий на точную константу."""
    grad = math.sqrt(field.grad_norm_sq(u))
    norm = math.sqrt(field.l2_norm_sq(u))
    denom = grad ** (N * p - theta - N) * norm ** (2 * p - N * p + N + theta)
    if denom == 0:
        raise ValueError("нулевой знаменатель в отношении HLS")
    return hartree_energy(op, u, p) / denom


def gaussian_origin_value(N: int, theta: float) -> float:
    """(I_θ * e^{-|x|^2})(0) в замкнутой форме: C·|S^{N-1}|·Γ(θ/2)/2."""
    sphere = 2.0 * math.pi ** (N / 2.0) / float(gamma_fn(N / 2.0))
    return riesz_constant(N, theta) * sphere * float(gamma_fn(theta / 2.0)) / 2.0


def gaussian_oracle_error(grid: GridSpec, theta: float, mode: str = FREE_SPACE,
                          origin: str = ORIGIN_LATTICE) -> float:
    """Относительная ошибка (I_θ * e^{-|x|^2})(0) на сетке против замкнутой формы."""
    op = build(grid, theta, mode, origin)
    g = np.exp(-sum(x * x for x in grid.coords))
    center = (grid.n // 2,) * grid.dim
    exact = gaussian_origin_value(grid.dim, theta)
    return abs(float(convolve_values(op, g)[center]) - exact) / exact
