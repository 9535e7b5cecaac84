# field.py
"""
Равномерные периодические сетки, скалярные поля на них и спектральное исчисление.
Коробка [-L, L)^N заменяет R^N; все наблюдаемые считаются в карте коробки.
"""

import logging
import math
import struct
from dataclasses import dataclass
from functools import cached_property
from typing import Any, Sequence

import numpy as np
import scipy.fft as sfft

import config

logger = logging.getLogger(__name__)

# Число потоков для scipy.fft; меняется через set_workers()
_WORKERS = 1

SNAPSHOT_MAGIC = b"CHQF"
SNAPSHOT_VERSION = 1
_HEADER = struct.Struct("<4sIIIdB39x")  # 64 байта
KIND_REAL = 0
KIND_COMPLEX = 1


class FieldError(ValueError):
    pass


def set_workers(n: int) -> None:
    global _WORKERS
    _WORKERS = max(1, int(n))


def workers() -> int:
    return _WORKERS


@dataclass(frozen=True)
class GridSpec:
    """Кубическая изотропная сетка: dim осей по n точек на [-L, L)."""
    dim: int
    n: int
    L: float

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise FieldError(f"dim={self.dim}: поддерживаются только 1, 2, 3")
        if self.n < 8 or self.n & (self.n - 1):
            raise FieldError(f"n={self.n}: требуется степень двойки >= 8")
        if not (self.L > 0 and math.isfinite(self.L)):
            raise FieldError(f"L={self.L}: полуширина должна быть положительной")

    @property
    def h(self) -> float:
        return 2.0 * self.L / self.n

    @property
    def shape(self) -> tuple[int, ...]:
        return (self.n,) * self.dim

    @property
    def cell_volume(self) -> float:
        return self.h ** self.dim

    @cached_property
    def axis(self) -> np.ndarray:
        return -self.L + self.h * np.arange(self.n)

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        # Угловые волновые числа, порядок scipy.fft
        return 2.0 * np.pi * sfft.fftfreq(self.n, d=self.h)

    @cached_property
    def coords(self) -> list[np.ndarray]:
        return list(np.meshgrid(*([self.axis] * self.dim), indexing="ij"))

    @cached_property
    def k_vectors(self) -> list[np.ndarray]:
        return list(np.meshgrid(*([self.wavenumbers] * self.dim), indexing="ij"))

    @cached_property
    def derivative_k(self) -> list[np.ndarray]:
        # Для первых производных мода Найквиста обнуляется, чтобы производная вещественного поля была вещественной
        k = self.wavenumbers.copy()
        k[self.n // 2] = 0.0
        return list(np.meshgrid(*([k] * self.dim), indexing="ij"))

    @cached_property
    def k2(self) -> np.ndarray:
        return sum(k * k for k in self.k_vectors)

    @cached_property
    def radius(self) -> np.ndarray:
        return np.sqrt(sum(x * x for x in self.coords))


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Вещественные или комплексные значения в узлах сетки (row-major)."""
    grid: GridSpec
    values: np.ndarray

    def __post_init__(self):
        if self.values.shape != self.grid.shape:
            raise FieldError(f"форма {self.values.shape} не совпадает с сеткой {self.grid.shape}")
        if not np.isfinite(self.values).all():
            raise FieldError("поле содержит NaN/Inf")

    @property
    def is_real(self) -> bool:
        return not np.iscomplexobj(self.values)

    def with_values(self, values: np.ndarray) -> "ScalarField":
        return ScalarField(self.grid, values)

    def modulus(self) -> "ScalarField":
        return ScalarField(self.grid, np.abs(self.values))

    def __add__(self, other: "ScalarField") -> "ScalarField":
        return ScalarField(self.grid, self.values + other.values)

    def scaled(self, factor: complex | float) -> "ScalarField":
        return ScalarField(self.grid, self.values * factor)


def zeros(grid: GridSpec, complex_: bool = False) -> ScalarField:
    return ScalarField(grid, np.zeros(grid.shape, dtype=complex if complex_ else float))


def gaussian(grid: GridSpec, width: float, center: Sequence[float] | None = None,
             amplitude: float = 1.0) -> ScalarField:
    """exp(-|x-c|^2 / (2 w^2)) в карте коробки."""
    c = np.zeros(grid.dim) if center is None else np.asarray(center, dtype=float)
    r2 = sum((x - ci) ** 2 for x, ci in zip(grid.coords, c))
    return ScalarField(grid, amplitude * np.exp(-r2 / (2.0 * width ** 2)))


# --- СПЕКТРАЛЬНЫЕ ОПЕРАЦИИ ---

def fft(f: ScalarField) -> ScalarField:
    """Унитарное прямое преобразование (norm='ortho')."""
    return ScalarField(f.grid, sfft.fftn(f.values.astype(complex), norm="ortho", workers=_WORKERS))


def ifft(f: ScalarField) -> ScalarField:
    return ScalarField(f.grid, sfft.ifftn(f.values, norm="ortho", workers=_WORKERS))


def _forward(values: np.ndarray) -> np.ndarray:
    return sfft.fftn(values, workers=_WORKERS)


def _backward(values: np.ndarray) -> np.ndarray:
    return sfft.ifftn(values, workers=_WORKERS)


def gradient(f: ScalarField) -> list[ScalarField]:
    spec = _forward(f.values)
    out = []
    for k in f.grid.derivative_k:
        d = _backward(1j * k * spec)
        out.append(ScalarField(f.grid, d.real if f.is_real else d))
    return out


def laplacian(f: ScalarField) -> ScalarField:
    d = _backward(-f.grid.k2 * _forward(f.values))
    return ScalarField(f.grid, d.real if f.is_real else d)


def divergence(components: Sequence[ScalarField]) -> ScalarField:
    grid = components[0].grid
    total = np.zeros(grid.shape, dtype=complex)
    for c, k in zip(components, grid.derivative_k):
        total += 1j * k * _forward(c.values)
    d = _backward(total)
    real = all(c.is_real for c in components)
    return ScalarField(grid, d.real if real else d)


def shift(f: ScalarField, displacement: Sequence[float]) -> ScalarField:
    """f(x - d) с периодическим переносом; на сеточных сдвигах совпадает с циклической перестановкой."""
    phase = sum(k * d for k, d in zip(f.grid.k_vectors, displacement))
    d = _backward(_forward(f.values) * np.exp(-1j * phase))
    return ScalarField(f.grid, d.real if f.is_real else d)


# --- ИНТЕГРАЛЫ И НОРМЫ ---

def integrate(values: np.ndarray, grid: GridSpec) -> float | complex:
    # Сумма Римана: на периодической сетке это формула трапеций
    return values.sum() * grid.cell_volume


def charge(f: ScalarField) -> float:
    """Гиломорфный заряд ∫|f|^2."""
    return float(integrate(np.abs(f.values) ** 2, f.grid))


l2_norm_sq = charge


def grad_norm_sq(f: ScalarField) -> float:
    """‖∇f‖_2^2 через равенство Парсеваля."""
    spec = sfft.fftn(f.values, norm="ortho", workers=_WORKERS)
    kk = sum(k * k for k in f.grid.derivative_k)
    return float((kk * np.abs(spec) ** 2).sum() * f.grid.cell_volume)


def parseval_defect(f: ScalarField) -> float:
    """Относительное расхождение ‖f‖² на сетке и в спектре (norm='ortho')."""
    direct = float((np.abs(f.values) ** 2).sum())
    spectral = float((np.abs(fft(f).values) ** 2).sum())
    return abs(direct - spectral) / direct if direct else 0.0


def h1_norm(f: ScalarField) -> float:
    return math.sqrt(l2_norm_sq(f) + grad_norm_sq(f))


def inner(f: ScalarField, g: ScalarField) -> float:
    return float(np.real(integrate(np.conj(f.values) * g.values, f.grid)))


def periodic_offset(grid: GridSpec, center: Sequence[float]) -> list[np.ndarray]:
    L = grid.L
    return [np.mod(x - c + L, 2.0 * L) - L for x, c in zip(grid.coords, center)]


# --- НАБЛЮДАЕМЫЕ ---

def barycenter(f: ScalarField) -> np.ndarray:
    """q = (1/‖f‖^2) ∫ x |f|^2 dx в координатах карты [-L, L)."""
    density = np.abs(f.values) ** 2
    total = density.sum()
    if total <= 0:
        raise FieldError("барицентр поля с нулевым зарядом не определён")
    return np.array([(x * density).sum() / total for x in f.grid.coords])


def mass_outside_ball(f: ScalarField, center: Sequence[float], radius: float) -> float:
    """Доля заряда вне шара |x - c| <= radius (периодическая метрика)."""
    density = np.abs(f.values) ** 2
    total = density.sum()
    if total <= 0:
        raise FieldError("нулевой заряд")
    if radius <= 0:
        return 1.0
    r2 = sum(d * d for d in periodic_offset(f.grid, center))
    outside = density[r2 > radius * radius].sum()
    return float(min(max(outside / total, 0.0), 1.0))


def boundary_touch(f: ScalarField) -> float:
    """Масса вне шара радиуса L/2 вокруг барицентра; предупреждает при превышении порога."""
    frac = mass_outside_ball(f, barycenter(f), 0.5 * f.grid.L)
    if frac > config.BOUNDARY_WARN:
        logger.warning(f"⚠️ Поле касается границы коробки: доля массы вне L/2 = {frac:.3e}")
    return frac


def momentum_density(psi: ScalarField, eps: float) -> list[ScalarField]:
    """p_ε = ε^{-(N-1)} Im(conj(ψ) ∇ψ)."""
    N = psi.grid.dim
    values = psi.values.astype(complex)
    factor = eps ** (-(N - 1))
    return [ScalarField(psi.grid, factor * np.imag(np.conj(values) * g.values))
            for g in gradient(ScalarField(psi.grid, values))]


def momentum_integral(psi: ScalarField, params: Any) -> np.ndarray:
    """∫ p_ε dx; params: любой объект с атрибутом eps."""
    if psi.is_real:
        return np.zeros(psi.grid.dim)
    return np.array([float(integrate(p.values, psi.grid)) for p in momentum_density(psi, params.eps)])


def continuity_residual(psi_a: ScalarField, psi_b: ScalarField, dt: float, eps: float) -> float:
    """Относительная невязка ε^{-N} ∂_t|ψ|^2 + div p_ε = 0 по двум снимкам на расстоянии dt."""
    N = psi_a.grid.dim
    dens_dt = (np.abs(psi_b.values) ** 2 - np.abs(psi_a.values) ** 2) / dt * eps ** (-N)
    pa = momentum_density(psi_a, eps)
    pb = momentum_density(psi_b, eps)
    mid = [ScalarField(psi_a.grid, 0.5 * (a.values + b.values)) for a, b in zip(pa, pb)]
    res = dens_dt + divergence(mid).values
    scale = math.sqrt(float(integrate(dens_dt ** 2, psi_a.grid)))
    if scale == 0:
        return math.sqrt(float(integrate(res ** 2, psi_a.grid)))
    return math.sqrt(float(integrate(res ** 2, psi_a.grid))) / scale


def half_width(f: ScalarField) -> float:
    """Полуширина на полувысоте |f| вдоль первой оси через максимум."""
    mod = np.abs(f.values)
    idx = np.unravel_index(int(np.argmax(mod)), mod.shape)
    peak = mod[idx]
    if peak <= 0:
        raise FieldError("полуширина нулевого поля не определена")
    line = mod[(slice(None),) + tuple(idx[1:])] if f.grid.dim > 1 else mod
    i0 = idx[0]
    n = f.grid.n
    for step in range(1, n // 2):
        j = (i0 + step) % n
        if line[j] < 0.5 * peak:
            prev = line[(j - 1) % n]
            frac = (prev - 0.5 * peak) / (prev - line[j])
            return (step - 1 + frac) * f.grid.h
    return f.grid.L


# --- ИНТЕРПОЛЯЦИЯ ---

def _axis_matrix(src: GridSpec, targets: np.ndarray) -> np.ndarray:
    """Матрица вычисления тригонометрического интерполянта в точках targets (нули вне карты)."""
    k = src.wavenumbers
    E = np.exp(1j * np.outer(targets + src.L, k)) / src.n
    outside = (targets < -src.L) | (targets >= src.L)
    E[outside, :] = 0.0
    return E


def resample(f: ScalarField, target: GridSpec, scale: float = 1.0,
             center: Sequence[float] | None = None) -> ScalarField:
    """
    g(x) = f(scale * (x - center)) на сетке target спектральной интерполяцией,
    поосевое (отображение разделимо). Точки вне карты источника дают 0.
    """
    if target.dim != f.grid.dim:
        raise FieldError("размерности сеток не совпадают")
    c = np.zeros(target.dim) if center is None else np.asarray(center, dtype=float)
    if target == f.grid and scale == 1.0 and not c.any():
        return ScalarField(target, f.values.copy())
    coeffs = sfft.fftn(f.values.astype(complex), workers=_WORKERS)
    out = coeffs
    for axis in range(target.dim):
        E = _axis_matrix(f.grid, scale * (target.axis - c[axis]))
        out = np.moveaxis(np.tensordot(E, out, axes=([1], [axis])), 0, axis)
    return ScalarField(target, out.real if f.is_real else out)


# --- СНИМКИ ---

def save_snapshot(f: ScalarField, path: str) -> None:
    """Бинарный снимок: 64-байтный заголовок CHQF + row-major f64 (пары re, im для комплексных)."""
    kind = KIND_REAL if f.is_real else KIND_COMPLEX
    header = _HEADER.pack(SNAPSHOT_MAGIC, SNAPSHOT_VERSION, f.grid.dim, f.grid.n, float(f.grid.L), kind)
    if kind == KIND_REAL:
        payload = np.ascontiguousarray(f.values, dtype="<f8").tobytes()
    else:
        payload = np.ascontiguousarray(f.values, dtype="<c16").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def load_snapshot(path: str) -> ScalarField:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise FieldError(f"{path}: файл короче заголовка")
    magic, version, dim, n, L, kind = _HEADER.unpack_from(raw)
    if magic != SNAPSHOT_MAGIC:
        raise FieldError(f"{path}: неверная сигнатура {magic!r}")
    if version != SNAPSHOT_VERSION:
        raise FieldError(f"{path}: неподдерживаемая версия {version}")
    grid = GridSpec(dim, n, L)
    dtype = "<f8" if kind == KIND_REAL else "<c16"
    values = np.frombuffer(raw, dtype=dtype, offset=_HEADER.size)
    if values.size != n ** dim:
        raise FieldError(f"{path}: размер данных {values.size} не равен {n ** dim}")
    return ScalarField(grid, values.reshape(grid.shape).astype(float if kind == KIND_REAL else complex))


def grid_from_config(section: dict[str, Any], default_dim: int) -> GridSpec:
    dim = section.get("dim") or default_dim
    try:
        return GridSpec(int(dim), int(section["n"]), float(section["L"]))
    except FieldError as e:
        raise config.ConfigError(str(e), "grid") from e
