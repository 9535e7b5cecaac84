# config.py
import os
from dataclasses import dataclass, field
from typing import Any

import ujson
from dotenv import load_dotenv

# Загружаем переменные из .env файла
load_dotenv()

# --- ОСНОВНЫЕ НАСТРОЙКИ ---
LOG_LEVEL = os.getenv('CHOQUARD_LOG', 'INFO').upper()
LOG_FILE = os.getenv('CHOQUARD_LOG_FILE', 'choquard.log')
THREADS = int(os.getenv('CHOQUARD_THREADS') or (os.cpu_count() or 1))

# --- НАСТРОЙКИ БАЗЫ ДАННЫХ ---
DB_FILE = os.getenv('CHOQUARD_DB', 'choquard_runs.db')

CONFIG_SCHEMA = "choquard-experiment/1"
DEFAULT_OUT_DIR = "runs"
DEFAULT_SEED = 0

# --- ЧИСЛЕННЫЕ ПАРАМЕТРЫ ПО УМОЛЧАНИЮ ---
# Относительная точность всех соотношений между показателями
RELATION_TOL = 1e-12

# Градиентный поток: dtau = FLOW_DTAU_FACTOR * h^2
FLOW_DTAU_FACTOR = 0.1
FLOW_TOL = 1e-8
FLOW_MAX_ITERS = 200_000
FLOW_LOG_EVERY = 500

# Эволюция: dt <= c_t * eps / max(|V| + kappa |W|)
EVOLVE_CT = 0.5
EVOLVE_CALLBACK_STRIDE = 10
MIN_POINTS_PER_SCALE = 8

# Сторож границы: доля массы вне шара радиуса L/2
BOUNDARY_WARN = 1e-6
BOUNDARY_ABORT = 1e-4

# Диагностика концентрации
LAMBDA_LEVEL = 0.01
R_HAT_HALF_WIDTHS = 8.0

# Рабочий диапазон eps для развёртки
SWEEP_EPS = (0.5, 0.35, 0.25)


class ConfigError(ValueError):
    """Ошибка конфигурации эксперимента; key_path указывает на проблемный ключ."""

    def __init__(self, message: str, key_path: str = ""):
        super().__init__(f"{key_path}: {message}" if key_path else message)
        self.key_path = key_path


SECTIONS = ("model", "grid", "potential", "flow", "evolve", "sweep", "dynamics", "initial", "output")

# Обязательные ключи и их типы по секциям
_REQUIRED: dict[str, dict[str, tuple]] = {
    "model": {"N": (int,), "theta": (int, float), "p": (int, float), "gamma": (int, float),
              "eps": (int, float)},
    "grid": {"n": (int,), "L": (int, float)},
    "potential": {"kind": (str,)},
    "flow": {},
    "evolve": {"T": (int, float)},
    "sweep": {"eps": (list,)},
    "dynamics": {},
    "initial": {},
    "output": {},
}

# Необязательные ключи со значениями по умолчанию
_DEFAULTS: dict[str, dict[str, Any]] = {
    "model": {"m": 1.0, "omega": 1.0, "v": None},
    "grid": {"dim": None},
    "potential": {"coefficients": {}, "a": 2.0, "b": 0.75, "R1": 4.0, "exempt": False},
    "flow": {"nu": 1.0, "dtau": None, "tol": FLOW_TOL, "max_iters": FLOW_MAX_ITERS,
             "seed_width": None, "project_positive": True, "from": None, "sigma_passes": 0},
    "evolve": {"c_t": EVOLVE_CT, "callback_stride": EVOLVE_CALLBACK_STRIDE, "n": None, "L": None},
    "sweep": {},
    "dynamics": {"lambda_level": LAMBDA_LEVEL, "R_hat": None},
    "initial": {"perturbation": "none", "K": 1.0, "variables": "scaled"},
    "output": {"directory": DEFAULT_OUT_DIR, "snapshot_stride": 0},
}


@dataclass
class ExperimentConfig:
    """Конфигурация эксперимента: схема, seed и секции."""
    schema: str = CONFIG_SCHEMA
    seed: int = DEFAULT_SEED
    sections: dict[str, dict[str, Any]] = field(default_factory=dict)

    def section(self, name: str) -> dict[str, Any]:
        if name not in self.sections:
            raise ConfigError("секция отсутствует", name)
        return self.sections[name]

    def has(self, name: str) -> bool:
        return name in self.sections


def _check_section(name: str, raw: Any) -> dict[str, Any]:
    if not isinstance(raw, dict):
        raise ConfigError("ожидается объект", name)
    out = dict(_DEFAULTS.get(name, {}))
    for key, types in _REQUIRED.get(name, {}).items():
        if key not in raw:
            raise ConfigError("обязательный ключ отсутствует", f"{name}.{key}")
        value = raw[key]
        if isinstance(value, bool) or not isinstance(value, types):
            raise ConfigError(f"неверный тип {type(value).__name__}", f"{name}.{key}")
    for key, value in raw.items():
        default = out.get(key)
        # bool является подклассом int, поэтому числовые ключи проверяем явно
        numeric_default = isinstance(default, (int, float)) and not isinstance(default, bool)
        if numeric_default and (isinstance(value, bool) or not isinstance(value, (int, float))):
            raise ConfigError(f"неверный тип {type(value).__name__}", f"{name}.{key}")
        out[key] = value
    return out


def parse(text: str) -> ExperimentConfig:
    """Разбирает JSON-конфигурацию, проверяя схему и типы ключей."""
    try:
        raw = ujson.loads(text)
    except ValueError as e:
        raise ConfigError(f"некорректный JSON: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError("корень конфигурации должен быть объектом")
    schema = raw.get("schema")
    if schema != CONFIG_SCHEMA:
        raise ConfigError(f"неизвестная схема {schema!r}, ожидается {CONFIG_SCHEMA!r}", "schema")
    seed = raw.get("seed", DEFAULT_SEED)
    if isinstance(seed, bool) or not isinstance(seed, int):
        raise ConfigError("seed должен быть целым", "seed")
    sections = {}
    for name, value in raw.items():
        if name in ("schema", "seed"):
            continue
        if name not in SECTIONS:
            raise ConfigError("неизвестная секция", name)
        sections[name] = _check_section(name, value)
    return ExperimentConfig(schema=schema, seed=seed, sections=sections)


def dump(cfg: ExperimentConfig) -> str:
    doc = {"schema": cfg.schema, "seed": cfg.seed}
    for name in SECTIONS:
        if name in cfg.sections:
            doc[name] = cfg.sections[name]
    return ujson.dumps(doc, indent=2)


def load(path: str) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return parse(f.read())
    except OSError as e:
        raise ConfigError(f"не удалось прочитать файл: {e}", "config") from e


def require(cfg: ExperimentConfig, names: tuple[str, ...]) -> None:
    """Проверяет, что все секции, нужные подкоманде, присутствуют."""
    for name in names:
        if not cfg.has(name):
            raise ConfigError("секция обязательна для этой команды", name)
