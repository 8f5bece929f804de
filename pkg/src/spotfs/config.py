"""Run configuration and its flat ``key = value`` file format.

Lines are ``key = value``; ``#`` starts a comment.  List-valued keys take
comma-separated values.  ``profile`` and ``taps`` paths are resolved
relative to the config file, and the special key ``include`` merges another
config file first (keys in the including file win).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field, fields
from pathlib import Path

SCHEME_TAGS = ("SP-NI", "SP-I", "EP", "CPA", "perfect-CSI")


class ConfigError(ValueError):
    """Invalid configuration; raised before any trial runs."""


@dataclass(frozen=True)
class RunConfig:
    M: int = 16
    N: int = 16
    delta_f: float = 15e3
    fc: float = 4e9
    frame_sizes: tuple = ()
    profile: str = ""
    taps: str = ""
    normalize_power: bool = True
    schemes: tuple = ("SP-NI", "SP-I")
    split_mode: str = "optimal"
    sigma2_p: tuple = (0.3,)
    snr_db: tuple = (10.0,)
    trials: int = 200
    min_errors: int = 100
    max_trials: int = 20000
    batch: int = 64
    constellation: str = "bpsk"
    damping: tuple = (0.6,)
    epsilon: float = 0.1
    mp_iters: int = 20
    gaussian_exponent: bool = False
    variance_form: str = "per-term"
    spi_tol: float = 1e-6
    spi_max_iter: int = 10
    ep_l_max: int = -1
    ep_k_max: int = -1
    seed: int = 1
    output: str = "results.csv"

    def __post_init__(self):
        if self.trials < 1:
            raise ConfigError("trials must be >= 1")
        if self.max_trials < self.trials:
            raise ConfigError("max_trials must be >= trials")
        if self.min_errors < 0 or self.batch < 1:
            raise ConfigError("min_errors must be >= 0 and batch >= 1")
        if not self.snr_db:
            raise ConfigError("snr_db must be nonempty")
        if not self.schemes:
            raise ConfigError("schemes must be nonempty")
        bad = [s for s in self.schemes if s not in SCHEME_TAGS]
        if bad:
            raise ConfigError(f"unknown scheme(s) {bad}; choose from {SCHEME_TAGS}")
        if self.split_mode not in ("optimal", "fixed"):
            raise ConfigError("split_mode must be 'optimal' or 'fixed'")
        if any(not 0 <= p <= 1 for p in self.sigma2_p):
            raise ConfigError("sigma2_p values must lie in [0, 1]")
        if any(not 0 < d <= 1 for d in self.damping):
            raise ConfigError("damping values must lie in (0, 1]")
        if self.M < 1 or self.N < 1 or any(s < 1 for s in self.frame_sizes):
            raise ConfigError("frame sizes must be positive")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")

    def grids(self):
        from .grid import DdGrid

        sizes = [(s, s) for s in self.frame_sizes] or [(self.M, self.N)]
        return [DdGrid(m, n, self.delta_f, self.fc) for m, n in sizes]

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)


_LIST_FIELDS = {f.name for f in fields(RunConfig) if f.type in ("tuple",)}
_PATH_FIELDS = {"profile", "taps"}


def _convert(name: str, raw: str):
    f = {f.name: f for f in fields(RunConfig)}[name]
    kind = f.type
    try:
        if name in _LIST_FIELDS:
            items = [x.strip() for x in raw.split(",") if x.strip()]
            if name in ("schemes",):
                return tuple(items)
            if name == "frame_sizes":
                return tuple(int(x) for x in items)
            return tuple(float(x) for x in items)
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no", "on", "off"):
                raise ValueError(raw)
            return low in ("true", "1", "yes", "on")
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {name}: {raw!r}") from None


def parse_config_text(text: str, base_dir: Path | None = None, source: str = "<string>") -> dict:
    """Parse ``key = value`` text into a dict of converted values."""
    known = {f.name for f in fields(RunConfig)}
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        key, val = (s.strip() for s in line.split("=", 1))
        if key == "include":
            inc = Path(val)
            if base_dir is not None and not inc.is_absolute():
                inc = base_dir / inc
            out = {**load_config_dict(inc), **out}
            continue
        if key not in known:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
        if key in _PATH_FIELDS and val and base_dir is not None and not Path(val).is_absolute():
            val = str((base_dir / val).resolve())
        out[key] = _convert(key, val)
    return out


def load_config_dict(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config_text(text, path.parent, str(path))


def load_config(path, **overrides) -> RunConfig:
    values = load_config_dict(path)
    values.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig(**values)


def dump_config(cfg: RunConfig) -> str:
    lines = []
    for f in fields(RunConfig):
        v = getattr(cfg, f.name)
        if isinstance(v, tuple):
            v = ", ".join(str(x) for x in v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
