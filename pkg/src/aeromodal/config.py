"""Pipeline configuration and its flat ``section.key = value`` file format."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

from .signal_ingest import ParseError

MEASUREMENT_KINDS = ("uniform_random", "gaussian_random", "single_pixel")
_KIND_ALIASES = {"uniform": "uniform_random", "gaussian": "gaussian_random", "pixel": "single_pixel"}


def canonical_kind(kind: str) -> str:
    """Full measurement kind name; accepts the short forms ``uniform``, ``gaussian``, ``pixel``."""
    kind = _KIND_ALIASES.get(kind, kind)
    if kind not in MEASUREMENT_KINDS:
        raise ValueError(f"unknown measurement kind {kind!r}; expected one of {MEASUREMENT_KINDS}")
    return kind


@dataclass
class IngestionConfig:
    window_length: int = 2200
    maneuver_count: int = 5
    demean: bool = False
    align: str = "onset"
    preroll: float = 0.05


@dataclass
class RpcaSection:
    enabled: bool = True
    lam: float = 1.0
    mu0: float | None = None
    rho: float = 1.5
    tol: float = 1e-7
    max_iter: int = 500


@dataclass
class TruncationConfig:
    method: str = "max"  # gavish_donoho | energy | fixed | max
    energy: float = 0.999
    rank: int | None = None
    eta: float | None = None


@dataclass
class DelayConfig:
    mode: str = "fixed"  # fixed | sweep
    d: int = 300
    candidates: tuple[int, ...] = (50, 100, 200, 300, 400)


@dataclass
class DmdSection:
    second_level: str = "match"
    second_level_energy: float = 1 - 1e-8
    second_level_rank: int | None = None
    amplitudes: str = "optimal"


@dataclass
class LoopSection:
    threshold: float = 0.2
    max_outer: int = 5
    stall: float = 0.005


@dataclass
class SparsityConfig:
    n_gammas: int = 200
    gamma: float | None = None
    rho: float = 1.0
    eps_abs: float = 1e-6
    eps_rel: float = 1e-4
    max_iter: int = 10000


@dataclass
class CompressedConfig:
    kind: str | None = None  # uniform_random | gaussian_random | single_pixel
    p: int | None = None
    seed: int = 0
    rpca: str = "off"  # off | compressed | full
    full_rank: bool = True  # keep every first-level component of the compressed data
    # embedded-level rule for compressed data; 180 candidates is what the
    # all-sensor chain yields on the standard benchmark
    second_level: str = "fixed"
    second_level_rank: int = 180


@dataclass
class PipelineConfig:
    ingestion: IngestionConfig = field(default_factory=IngestionConfig)
    rpca: RpcaSection = field(default_factory=RpcaSection)
    truncation: TruncationConfig = field(default_factory=TruncationConfig)
    delay: DelayConfig = field(default_factory=DelayConfig)
    dmd: DmdSection = field(default_factory=DmdSection)
    loop: LoopSection = field(default_factory=LoopSection)
    sparsity: SparsityConfig = field(default_factory=SparsityConfig)
    compressed: CompressedConfig = field(default_factory=CompressedConfig)

    def validate(self) -> "PipelineConfig":
        if self.truncation.method not in ("gavish_donoho", "energy", "fixed", "max"):
            raise ValueError(f"unknown truncation method {self.truncation.method!r}")
        if self.truncation.method == "fixed" and not self.truncation.rank:
            raise ValueError("truncation.method = fixed needs truncation.rank")
        if self.delay.mode not in ("fixed", "sweep"):
            raise ValueError(f"unknown delay mode {self.delay.mode!r}")
        if self.ingestion.align not in ("preroll", "onset"):
            raise ValueError(f"unknown alignment {self.ingestion.align!r}")
        if self.compressed.kind is not None:
            self.compressed.kind = canonical_kind(self.compressed.kind)
        if self.compressed.rpca not in ("off", "compressed", "full"):
            raise ValueError(f"unknown compressed.rpca mode {self.compressed.rpca!r}")
        if self.sparsity.n_gammas < 2:
            raise ValueError("sparsity.n_gammas must be >= 2")
        return self

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, default=list)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _coerce(text: str, current):
    low = text.strip().lower()
    if low in ("none", "null", ""):
        return None
    if isinstance(current, bool):
        if low in ("true", "yes", "1", "on"):
            return True
        if low in ("false", "no", "0", "off"):
            return False
        raise ValueError(f"not a boolean: {text!r}")
    if isinstance(current, tuple):
        return tuple(int(v) for v in text.split(",") if v.strip())
    if isinstance(current, int):
        return int(text)
    if isinstance(current, float):
        return float(text)
    # untyped (None default): numbers stay numbers
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text.strip()


def apply_overrides(cfg: PipelineConfig, pairs) -> PipelineConfig:
    """Apply ``(key, value)`` pairs where key is ``section.field``."""
    sections = {f.name for f in fields(cfg)}
    for key, value in pairs:
        sec, _, name = key.partition(".")
        if sec not in sections or not name:
            raise KeyError(f"unknown config key {key!r}")
        section = getattr(cfg, sec)
        names = {f.name for f in fields(section)}
        if name not in names:
            raise KeyError(f"unknown config key {key!r}")
        setattr(section, name, _coerce(str(value), getattr(section, name)))
    return cfg


def parse_config(text: str) -> PipelineConfig:
    cfg = PipelineConfig()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError("expected 'section.key = value'", line=lineno)
        key, value = (s.strip() for s in line.split("=", 1))
        try:
            apply_overrides(cfg, [(key, value)])
        except (KeyError, ValueError) as exc:
            raise ParseError(str(exc), line=lineno) from exc
    try:
        return cfg.validate()
    except ValueError as exc:
        raise ParseError(str(exc)) from exc


def load_config(path) -> PipelineConfig:
    with open(path) as fh:
        return parse_config(fh.read())


def dump_config(cfg: PipelineConfig) -> str:
    lines = []
    for sec in fields(cfg):
        section = getattr(cfg, sec.name)
        for f in fields(section):
            v = getattr(section, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{sec.name}.{f.name} = {v}")
    return "\n".join(lines) + "\n"
