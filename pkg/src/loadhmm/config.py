"""Run configuration: flat ``key = value`` files with command-line overrides."""
import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace
from datetime import date
from pathlib import Path

from .data import FEATURE_KINDS
from .errors import ConfigError
from .learner import ORDERS

LEARN_MODES = ("slice", "all", "none")


@dataclass(frozen=True)
class RunConfig:
    """Settings of one rolling-origin run.

    `entities_subset` holds 1-based column positions. `learn` selects which
    hours feed the learner: ``"slice"`` uses exactly the forecast horizon
    after each prediction time, ``"all"`` every hour between consecutive
    prediction times and ``"none"`` freezes the (warm-started) bank.
    """

    data: str = ""
    K: int = 0
    R: int = 3
    feature_map: str = "temperature-shift"
    feature_smoothing: float = 0.95
    C: int = 48
    L: int = 24
    prediction_hour: int = 11
    lambda_s: float = 0.9
    lambda_r: float = 0.9
    tau: float = 0.1
    sparsify: bool = True
    sparsify_feedback: bool = False
    delay: int = 0
    warmup_days: int = 30
    holidays: str = ""
    output_dir: str = ""
    seed: int = 0
    entities_subset: tuple = ()
    snapshot_in: str = ""
    snapshot_out: str = ""
    update_order: str = "pre-update"
    learn: str = "slice"

    def __post_init__(self):
        validate(self)

    def with_overrides(self, **kw):
        kw = {k: v for k, v in kw.items() if v is not None}
        return replace(self, **kw) if kw else self

    def digest(self):
        """SHA-256 of the settings that influence results (paths to outputs excluded)."""
        d = asdict(self)
        for k in ("output_dir", "snapshot_out"):
            d.pop(k)
        d["entities_subset"] = list(d["entities_subset"])
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


def validate(cfg):
    def need(cond, msg):
        if not cond:
            raise ConfigError(msg)

    need(cfg.K >= 0, "K must be >= 0 (0 infers it from the data)")
    need(cfg.R >= 1, "R must be >= 1")
    need(cfg.feature_map in FEATURE_KINDS, f"feature_map must be one of {FEATURE_KINDS}")
    need(cfg.feature_map != "temperature-shift" or cfg.R == 3, "the temperature-shift map needs R = 3")
    need(0.0 < cfg.feature_smoothing < 1.0, "feature_smoothing must lie in (0, 1)")
    need(cfg.C in (1, 2, 24, 48), "C must be 1, 2, 24 or 48")
    need(1 <= cfg.L <= 24, "L must lie in 1..24")
    need(0 <= cfg.prediction_hour <= 23, "prediction_hour must lie in 0..23")
    for name in ("lambda_s", "lambda_r"):
        need(0.0 < getattr(cfg, name) < 1.0, f"{name} must lie in (0, 1)")
    need(0.0 <= cfg.tau < 1.0, "tau must lie in [0, 1)")
    need(0 <= cfg.delay <= 23, "delay must lie in 0..23")
    need(cfg.warmup_days >= 0, "warmup_days must be >= 0")
    need(all(i >= 1 for i in cfg.entities_subset), "entities_subset positions are 1-based")
    need(len(set(cfg.entities_subset)) == len(cfg.entities_subset), "entities_subset has duplicates")
    need(cfg.update_order in ORDERS, f"update_order must be one of {ORDERS}")
    need(cfg.learn in LEARN_MODES, f"learn must be one of {LEARN_MODES}")


def _parse_bool(text):
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_subset(text):
    """``"1,3"`` -> ``(1, 3)``; an empty string gives ``()``."""
    text = text.strip()
    if not text:
        return ()
    try:
        return tuple(int(p) for p in text.split(","))
    except ValueError:
        raise ConfigError(f"bad entity list {text!r}; expected e.g. 1,3") from None


_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _convert(key, value):
    kind = _TYPES[key]
    if key == "entities_subset":
        return parse_subset(value)
    if kind is bool:
        return _parse_bool(value)
    if kind is int:
        return int(value)
    if kind is float:
        return float(value)
    return value.strip()


def parse_config(text, base_dir=None):
    """Parse ``key = value`` lines (``#`` starts a comment) into a :class:`RunConfig`.

    Relative ``data``, ``holidays``, ``snapshot_in``, ``snapshot_out`` and
    ``output_dir`` paths are resolved against `base_dir` when given.
    """
    values = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected key = value")
        key, value = (p.strip() for p in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in _TYPES:
            raise ConfigError(f"config line {lineno}: unknown key {key!r}")
        try:
            values[key] = _convert(key, value)
        except ValueError as exc:
            raise ConfigError(f"config line {lineno}: {exc}") from None
    if base_dir is not None:
        for key in ("data", "holidays", "snapshot_in", "snapshot_out", "output_dir"):
            if values.get(key) and not Path(values[key]).is_absolute():
                values[key] = str(Path(base_dir) / values[key])
    return RunConfig(**values)


def load_config(path):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config(path.read_text(), base_dir=path.parent)


def read_holidays(path):
    """One ISO date per line; blank lines and ``#`` comments are ignored."""
    if not path:
        return frozenset()
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"holiday file not found: {p}")
    out = set()
    for lineno, raw in enumerate(p.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if line:
            try:
                out.add(date.fromisoformat(line))
            except ValueError:
                raise ConfigError(f"{p} line {lineno}: bad date {line!r}") from None
    return frozenset(out)
