"""Mode report containers shared by the pipeline, the benchmark and the CLI."""

from __future__ import annotations

from dataclasses import dataclass, field


@dataclass
class ModeEntry:
    scaled_freq: float
    damping_ratio: float
    growth_rate: float = 0.0
    amplitude: float = 0.0
    is_static: bool = False
    flags: list[str] = field(default_factory=list)


@dataclass
class ModeReport:
    """Identified modes of one test point, sorted by ascending scaled frequency."""

    test_point_id: str
    modes: list[ModeEntry] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.modes = sorted(self.modes, key=lambda m: m.scaled_freq)

    @property
    def frequencies(self) -> list[float]:
        return [m.scaled_freq for m in self.modes]

    def dynamic_modes(self) -> list[ModeEntry]:
        return [m for m in self.modes if not m.is_static]
