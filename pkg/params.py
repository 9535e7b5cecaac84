# params.py
"""
Алгебра параметров: показатели масштабирования, их согласованность
и коэффициенты, которые используют остальные модули.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Any

import config

logger = logging.getLogger(__name__)

TOL = config.RELATION_TOL


class ParameterError(ValueError):
    pass


@dataclass(frozen=True)
class ModelParams:
    """Все скалярные параметры модели. Соотношения проверяет validate(), конструктор их не чинит."""
    N: int
    theta: float
    p: float
    m: float
    omega: float
    eps: float
    alpha: float
    gamma: float
    beta: float
    v: tuple[float, ...] = ()

    @property
    def theory_regime(self) -> bool:
        # Теория сформулирована для N >= 3; N = 1, 2 допустимы для быстрых прогонов
        return self.N >= 3

    @property
    def velocity(self) -> tuple[float, ...]:
        return self.v if self.v else (0.0,) * self.N

    @classmethod
    def from_inputs(cls, N: int, theta: float, p: float, gamma: float, eps: float,
                    omega: float = 1.0, m: float = 1.0, v=None) -> "ModelParams":
        """Основной конструктор: (alpha, beta) выводятся через solve_line."""
        alpha, beta = solve_line(N, theta, gamma)
        vel = tuple(float(c) for c in v) if v is not None else (0.0,) * N
        if len(vel) != N:
            raise ParameterError(f"скорость v имеет {len(vel)} компонент, ожидается N={N}")
        return cls(N=int(N), theta=float(theta), p=float(p), m=float(m), omega=float(omega),
                   eps=float(eps), alpha=alpha, gamma=float(gamma), beta=beta, v=vel)

    def with_eps(self, eps: float) -> "ModelParams":
        return ModelParams(self.N, self.theta, self.p, self.m, self.omega, float(eps),
                           self.alpha, self.gamma, self.beta, self.v)


@dataclass(frozen=True)
class ValidationResult:
    ok: bool
    violations: list[str] = field(default_factory=list)


@dataclass(frozen=True)
class ScalingReport:
    charge_exponent: float
    J_exponent: float
    J_exponent_reduced: float
    kappa_exponent: float
    omega_eps: float


def p_range(N: int, theta: float) -> tuple[float, float]:
    return 1.0 + theta / N, 1.0 + (2.0 + theta) / N


def validate(params: ModelParams) -> ValidationResult:
    """Проверяет все соотношения; нарушения возвращаются как данные, а не исключения."""
    violations = []
    values = [params.theta, params.p, params.m, params.omega, params.eps,
              params.alpha, params.gamma, params.beta, *params.velocity]
    if not all(math.isfinite(x) for x in values):
        return ValidationResult(False, ["все поля должны быть конечны"])

    N, theta, p = params.N, params.theta, params.p
    if N < 1:
        violations.append("N>=1")
    if not 0.0 < theta < N:
        violations.append("0<θ<N")
    lo, hi = p_range(N, theta)
    if not lo < p < hi:
        violations.append(f"p∈(1+θ/N,1+(2+θ)/N): p={p} вне ({lo:.6g}, {hi:.6g})")
    beta_expected = (params.alpha + 2.0 - params.gamma) / (theta + 2.0)
    if not math.isclose(params.beta, beta_expected, rel_tol=TOL, abs_tol=TOL):
        violations.append(f"β=(α+2−γ)/(θ+2): {params.beta} != {beta_expected}")
    if abs(N * params.beta - 2.0 * params.gamma) > TOL:
        violations.append(f"Nβ−2γ=0: остаток {N * params.beta - 2.0 * params.gamma:.3e}")
    if not params.beta > 1.0:
        violations.append("β>1")
    if params.m <= 0:
        violations.append("m>0")
    if params.omega <= 0:
        violations.append("ω>0")
    if params.eps <= 0:
        violations.append("ε>0")
    if len(params.velocity) != N:
        violations.append("dim(v)=N")
    return ValidationResult(not violations, violations)


def solve_line(N: int, theta: float, gamma: float) -> tuple[float, float]:
    """Решает (α, β) из β=(α+2−γ)/(θ+2) и Nβ=2γ; для N=3, θ=2 это прямая 3α+6−11γ=0."""
    if not 0.0 < theta < N:
        raise ParameterError(f"θ={theta} вне (0, N={N})")
    beta = 2.0 * gamma / N
    if not beta > 1.0:
        raise ParameterError(f"β would be ≤ 1 (γ={gamma} <= N/2={N / 2})")
    alpha = beta * (theta + 2.0) - 2.0 + gamma
    return alpha, beta


def omega_eps(params: ModelParams) -> float:
    return params.omega * params.eps ** (2.0 - 2.0 * params.beta)


def kappa_exponent(params: ModelParams) -> float:
    return params.gamma * (2.0 * params.p - 1.0) - params.alpha


def kappa(params: ModelParams) -> float:
    """Коэффициент нелокального члена eps^(γ(2p−1)−α)."""
    return params.eps ** kappa_exponent(params)


def scaling_report(params: ModelParams) -> ScalingReport:
    N, beta, gamma = params.N, params.beta, params.gamma
    return ScalingReport(
        charge_exponent=N * beta - 2.0 * gamma,
        J_exponent=2.0 - 2.0 * gamma + beta * (N - 2),
        J_exponent_reduced=2.0 * (1.0 - beta),
        kappa_exponent=kappa_exponent(params),
        omega_eps=omega_eps(params),
    )


def gce_coefficients(params: ModelParams) -> tuple[float, float, float]:
    """
    Коэффициенты перехода к исходному (немасштабированному) уравнению:
    показатель амплитуды начальных данных, множитель преобразования и растяжение по x.
    """
    p = params.p
    if p == 1.0:
        raise ParameterError("p=1: деление на ноль в показателях")
    if params.m <= 0:
        raise ParameterError("m должна быть положительной")
    data_exponent = (params.gamma - params.alpha) / (2.0 * (p - 1.0))
    transform = (params.m ** (-params.theta / (4.0 * (p - 1.0)))
                 * params.eps ** ((params.alpha - params.gamma * (2.0 * p - 1.0)) / (2.0 * (p - 1.0))))
    space_scale = 1.0 / math.sqrt(params.m)
    return data_exponent, transform, space_scale


def supercriticality(params: ModelParams) -> float:
    """γ(2p−1)−α−N/2: отрицательное значение означает надкритическую степень перед нелинейностью."""
    return kappa_exponent(params) - params.N / 2.0


def physical_case(gamma: float, eps: float, omega: float = 1.0, m: float = 1.0, v=None) -> ModelParams:
    """Физический случай N=3, θ=2, p=2 на прямой 3α+6−11γ=0."""
    return ModelParams.from_inputs(3, 2.0, 2.0, gamma, eps, omega=omega, m=m, v=v)


def from_config(section: dict[str, Any]) -> ModelParams:
    """Строит ModelParams из секции `model`."""
    try:
        return ModelParams.from_inputs(
            N=section["N"], theta=section["theta"], p=section["p"], gamma=section["gamma"],
            eps=section["eps"], omega=section.get("omega", 1.0), m=section.get("m", 1.0),
            v=section.get("v"),
        )
    except ParameterError as e:
        raise config.ConfigError(str(e), "model") from e


def to_config(params: ModelParams) -> dict[str, Any]:
    return {"N": params.N, "theta": params.theta, "p": params.p, "m": params.m,
            "omega": params.omega, "eps": params.eps, "gamma": params.gamma,
            "v": list(params.velocity)}
