# potential.py
"""Внешние потенциалы V в замкнутой форме, их градиенты и выборочная проверка условий (V0)–(V2)."""

import logging
from dataclasses import dataclass, field as dc_field
from typing import Any, Sequence

import numpy as np

import config
from field import GridSpec, ScalarField

logger = logging.getLogger(__name__)

HARMONIC = "harmonic"
QUARTIC = "quartic_anharmonic"
POWER_LAW = "power_law"
ZERO = "zero"
KINDS = (HARMONIC, QUARTIC, POWER_LAW, ZERO)
CERT_TOL = 1e-9

# Коэффициенты по умолчанию для каждого вида
_DEFAULT_COEFFICIENTS = {
    HARMONIC: {"c": 1.0},
    QUARTIC: {"c": 1.0, "lam": 0.1},
    POWER_LAW: {"c": 1.0, "s": 2.0},
    ZERO: {},
}


@dataclass(frozen=True)
class PotentialSpec:
    kind: str
    coefficients: dict[str, float] = dc_field(default_factory=dict)
    a: float = 2.0
    b: float = 0.75
    R1: float = 4.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"неизвестный вид потенциала: {self.kind}")
        if not self.a > 1.0:
            raise ValueError(f"a={self.a}: требуется a > 1")
        if not 0.0 < self.b < 1.0:
            raise ValueError(f"b={self.b}: требуется b ∈ (0,1)")
        if not self.R1 > 1.0:
            raise ValueError(f"R1={self.R1}: требуется R1 > 1")

    def coef(self, name: str) -> float:
        return float(self.coefficients.get(name, _DEFAULT_COEFFICIENTS[self.kind][name]))


def harmonic(c: float = 1.0, **kw) -> PotentialSpec:
    return PotentialSpec(HARMONIC, {"c": c}, **kw)


def quartic(lam: float = 0.1, c: float = 1.0, **kw) -> PotentialSpec:
    return PotentialSpec(QUARTIC, {"c": c, "lam": lam}, **kw)


def power_law(s: float, c: float = 1.0, **kw) -> PotentialSpec:
    return PotentialSpec(POWER_LAW, {"c": c, "s": s}, **kw)


def zero(**kw) -> PotentialSpec:
    return PotentialSpec(ZERO, {}, **kw)


def _r2(x: np.ndarray) -> np.ndarray:
    return np.sum(x * x, axis=-1)


def eval(V: PotentialSpec, x: Sequence[float] | np.ndarray) -> np.ndarray | float:
    """V(x); x имеет форму (..., N)."""
    x = np.asarray(x, dtype=float)
    r2 = _r2(x)
    if V.kind == ZERO:
        out = np.zeros_like(r2)
    elif V.kind == HARMONIC:
        out = V.coef("c") * r2
    elif V.kind == QUARTIC:
        out = V.coef("c") * r2 + V.coef("lam") * r2 * r2
    else:
        out = V.coef("c") * r2 ** (V.coef("s") / 2.0)
    return float(out) if out.ndim == 0 else out


def grad(V: PotentialSpec, x: Sequence[float] | np.ndarray) -> np.ndarray:
    """∇V(x) той же формы, что x."""
    x = np.asarray(x, dtype=float)
    r2 = _r2(x)[..., None]
    if V.kind == ZERO:
        return np.zeros_like(x)
    if V.kind == HARMONIC:
        return 2.0 * V.coef("c") * x
    if V.kind == QUARTIC:
        return (2.0 * V.coef("c") + 4.0 * V.coef("lam") * r2) * x
    s = V.coef("s")
    # ∇(c r^s) = c s r^{s-2} x, в нуле продолжаем нулём при s > 1
    factor = np.power(r2, s / 2.0 - 1.0, out=np.zeros_like(r2), where=r2 > 0)
    return V.coef("c") * s * factor * x


def sample_on_grid(V: PotentialSpec, grid: GridSpec) -> tuple[ScalarField, list[ScalarField]]:
    x = np.stack(grid.coords, axis=-1)
    values = eval(V, x)
    g = grad(V, x)
    return ScalarField(grid, np.asarray(values)), [ScalarField(grid, g[..., i]) for i in range(grid.dim)]


@dataclass
class CertReport:
    v0_ok: bool
    v1_ok: bool
    v2_ok: bool
    v0_margin: float
    v1_margin: float
    v2_margin: float
    witnesses: dict[str, list[float]] = dc_field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.v0_ok and self.v1_ok and self.v2_ok


def _holds(margin: float) -> bool:
    # Равенство на границе (например 2r = r^{3/2} при r = 4) считается выполнением
    return margin >= -CERT_TOL * max(1.0, abs(margin))


def _shell_points(N: int, r: float, count: int, rng: np.random.Generator) -> np.ndarray:
    # Оси (±r e_i) плюс случайные направления на сфере
    axes = np.concatenate([np.eye(N), -np.eye(N)]) * r
    dirs = rng.normal(size=(count, N))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    return np.concatenate([axes, r * dirs])


def certify_assumptions(V: PotentialSpec, shell_radii: Sequence[float], sample_count: int,
                        N: int, extent: float, seed: int = 0) -> CertReport:
    """
    Выборочная проверка: (V0) V >= 0 в коробке [-extent, extent)^N,
    на каждой сфере |x| = r > R1: (V2) V >= |x|^a и (V1) |∇V| <= V^b.
    Это свидетельство, а не доказательство.
    """
    if any(r <= V.R1 for r in shell_radii):
        raise ValueError(f"радиусы сфер должны превышать R1={V.R1}")
    rng = np.random.default_rng(seed)
    witnesses: dict[str, list[float]] = {}

    box = rng.uniform(-extent, extent, size=(sample_count, N))
    axis_line = np.linspace(-extent, extent, 65)
    axis_pts = np.concatenate([np.outer(axis_line, e) for e in np.eye(N)])
    pts = np.concatenate([box, axis_pts])
    v_box = np.atleast_1d(eval(V, pts))
    v0_margin = float(v_box.min())
    if v0_margin < 0:
        witnesses["V0"] = pts[int(np.argmin(v_box))].tolist()

    v1_margin = np.inf
    v2_margin = np.inf
    w2 = w1 = None
    for r in shell_radii:
        shell = _shell_points(N, float(r), sample_count, rng)
        v = np.atleast_1d(eval(V, shell))
        gnorm = np.linalg.norm(grad(V, shell), axis=-1)
        m2 = v - r ** V.a
        # Для V < 0 правая часть V^b не определена; (V0) тогда уже нарушено
        m1 = np.where(v >= 0, np.maximum(v, 0.0) ** V.b - gnorm, -np.inf)
        i2, i1 = int(np.argmin(m2)), int(np.argmin(m1))
        if m2[i2] < v2_margin:
            v2_margin, w2 = float(m2[i2]), shell[i2]
        if m1[i1] < v1_margin:
            v1_margin, w1 = float(m1[i1]), shell[i1]

    v1_ok, v2_ok = _holds(v1_margin), _holds(v2_margin)
    if not v1_ok:
        witnesses["V1"] = w1.tolist()
    if not v2_ok:
        witnesses["V2"] = w2.tolist()
    report = CertReport(
        v0_ok=v0_margin >= 0.0, v1_ok=v1_ok, v2_ok=v2_ok,
        v0_margin=v0_margin, v1_margin=float(v1_margin), v2_margin=float(v2_margin),
        witnesses=witnesses,
    )
    if not report.ok:
        logger.info(f"Проверка (V0)–(V2): V0={report.v0_ok}, V1={report.v1_ok}, V2={report.v2_ok}")
    return report


def from_config(section: dict[str, Any]) -> PotentialSpec:
    try:
        return PotentialSpec(kind=section["kind"], coefficients=dict(section.get("coefficients") or {}),
                             a=float(section.get("a", 2.0)), b=float(section.get("b", 0.75)),
                             R1=float(section.get("R1", 4.0)))
    except (ValueError, KeyError) as e:
        raise config.ConfigError(str(e), "potential") from e
