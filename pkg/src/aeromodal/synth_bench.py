"""Synthetic flutter-like datasets with known modal content, plus report scoring."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .report import ModeEntry, ModeReport
from .signal_ingest import ChannelRecord, TestPointDataset

# frequency / damping columns of the first flight test point
STANDARD_FREQS = (0.0075, 0.0095, 0.0116, 0.0164, 0.0172, 0.0183, 0.0197, 0.0249, 0.0258, 0.027)
STANDARD_DAMPING = (0.09, 0.06, 0.03, 0.04, 0.04, 0.03, 0.02, 0.03, 0.02, 0.02)


@dataclass
class ModeSpec:
    scaled_freq: float
    damping_ratio: float
    amplitude: float = 1.0
    spatial_weights: np.ndarray | None = None  # None: drawn from the spec seed

    def __post_init__(self):
        if self.scaled_freq < 0:
            raise ValueError("scaled_freq must be non-negative")
        if not 0 <= self.damping_ratio < 1:
            raise ValueError("damping_ratio must lie in [0, 1)")
        if self.spatial_weights is not None:
            self.spatial_weights = np.asarray(self.spatial_weights, dtype=float)
            if not np.any(self.spatial_weights):
                raise ValueError("spatial weights are all zero")


@dataclass
class BenchmarkSpec:
    modes: list[ModeSpec]
    n_channels: int = 87
    n_maneuvers: int = 5
    samples_per_maneuver: int = 2200
    noise_snr_db: float = float("inf")
    outlier_fraction: float = 0.0
    outlier_scale: float = 10.0
    seed: int = 0
    dt: float = 1.0
    gap: int = 400
    partial_maneuver: bool = True
    n_defective: int = 0
    amplitude_jitter: float = 0.2
    test_point_id: str = "SYN"

    def __post_init__(self):
        if not self.modes:
            raise ValueError("need at least one mode")
        if min(self.n_channels, self.n_maneuvers, self.samples_per_maneuver) < 1:
            raise ValueError("counts must be >= 1")
        if not 0 <= self.outlier_fraction < 1:
            raise ValueError("outlier_fraction must lie in [0, 1)")
        for m in self.modes:
            if m.spatial_weights is not None and len(m.spatial_weights) != self.n_channels:
                raise ValueError("spatial_weights length must equal n_channels")

    @property
    def onsets(self) -> list[int]:
        slot = self.samples_per_maneuver + self.gap
        return [self.gap + j * slot for j in range(self.n_maneuvers + int(self.partial_maneuver))]

    @property
    def record_length(self) -> int:
        slot = self.samples_per_maneuver + self.gap
        n = self.gap + self.n_maneuvers * slot
        if self.partial_maneuver:
            n += self.samples_per_maneuver // 2
        return n


def standard_benchmark(seed: int = 0, **overrides) -> BenchmarkSpec:
    """Ten modes at the first test point's frequencies, 10 dB SNR, 0.5% outliers at 10x."""
    modes = [ModeSpec(f, z) for f, z in zip(STANDARD_FREQS, STANDARD_DAMPING)]
    kw = dict(noise_snr_db=10.0, outlier_fraction=0.005, outlier_scale=10.0, seed=seed)
    kw.update(overrides)
    return BenchmarkSpec(modes, **kw)


def continuous_exponent(scaled_freq: float, damping_ratio: float, dt: float = 1.0) -> complex:
    """``omega = -zeta*w_n + i*w_d`` with ``w_d = pi * scaled_freq / dt``."""
    wd = np.pi * scaled_freq / dt
    wn = wd / np.sqrt(1.0 - damping_ratio**2)
    return complex(-damping_ratio * wn, wd)


def clean_responses(spec: BenchmarkSpec) -> tuple[np.ndarray, list[int]]:
    """Noise-free record ``(n_channels, record_length)`` and the excitation onsets."""
    rng = np.random.default_rng(spec.seed)
    n_modes = len(spec.modes)
    weights = np.empty((spec.n_channels, n_modes))
    for k, mode in enumerate(spec.modes):
        w = mode.spatial_weights if mode.spatial_weights is not None else rng.standard_normal(spec.n_channels)
        weights[:, k] = w

    record = np.zeros((spec.n_channels, spec.record_length))
    onsets = spec.onsets
    for j, onset in enumerate(onsets):
        length = min(spec.samples_per_maneuver, spec.record_length - onset)
        t = np.arange(length) * spec.dt
        phases = rng.uniform(0, 2 * np.pi, size=(spec.n_channels, n_modes))
        gains = 1.0 + spec.amplitude_jitter * rng.uniform(-1, 1, size=n_modes)
        for k, mode in enumerate(spec.modes):
            om = continuous_exponent(mode.scaled_freq, mode.damping_ratio, spec.dt)
            decay = np.exp(om.real * t)
            wave = np.cos(om.imag * t[None, :] + phases[:, k : k + 1])
            record[:, onset : onset + length] += (weights[:, k] * mode.amplitude * gains[k])[:, None] * decay * wave
    return record, onsets


def generate(spec: BenchmarkSpec) -> tuple[TestPointDataset, ModeReport]:
    """Build a dataset and its exact modal table.

    Noise and outliers are drawn from a stream independent of the clean signal,
    so ``outlier_fraction=0`` with infinite SNR reproduces the analytic record.
    """
    clean, onsets = clean_responses(spec)
    data = clean.copy()
    noise_rng = np.random.default_rng([spec.seed, 1])

    active = np.zeros(spec.record_length, dtype=bool)
    for onset in onsets:
        active[onset : onset + spec.samples_per_maneuver] = True
    p_signal = np.mean(clean[:, active] ** 2, axis=1)

    if np.isfinite(spec.noise_snr_db):
        if np.any(p_signal == 0):
            raise ValueError("finite SNR requested for a channel with zero signal")
        sigma = np.sqrt(p_signal / 10 ** (spec.noise_snr_db / 10))
        data += sigma[:, None] * noise_rng.standard_normal(data.shape)

    if spec.outlier_fraction > 0:
        rms = np.sqrt(p_signal)
        hit = noise_rng.random(data.shape) < spec.outlier_fraction
        signs = noise_rng.choice([-1.0, 1.0], size=data.shape)
        data = np.where(hit, spec.outlier_scale * rms[:, None] * signs, data)

    channels = [ChannelRecord(str(i), data[i], True) for i in range(spec.n_channels)]
    bad_rng = np.random.default_rng([spec.seed, 2])
    for i in range(spec.n_defective):
        samples = np.full(spec.record_length, np.nan)
        samples[: spec.record_length // 2] = bad_rng.standard_normal(spec.record_length // 2)
        channels.append(ChannelRecord(str(spec.n_channels + i), samples, False))

    dataset = TestPointDataset(spec.test_point_id, channels, spec.dt)
    truth = ModeReport(
        spec.test_point_id,
        [ModeEntry(m.scaled_freq, m.damping_ratio,
                   continuous_exponent(m.scaled_freq, m.damping_ratio, spec.dt).real, m.amplitude)
         for m in spec.modes],
        {"onsets": onsets, "seed": spec.seed},
    )
    return dataset, truth


def truth_json(truth: ModeReport) -> str:
    modes = [{"scaled_freq": m.scaled_freq, "damping_ratio": m.damping_ratio, "amplitude": m.amplitude}
             for m in truth.modes]
    return json.dumps({"test_point_id": truth.test_point_id, "modes": modes,
                       "onsets": truth.provenance.get("onsets", [])}, indent=2)


@dataclass
class MatchRow:
    true_freq: float | None
    est_freq: float | None
    true_damping: float | None
    est_damping: float | None
    freq_error_pct: float | None = None
    damping_error_pct: float | None = None
    flag: str = ""


@dataclass
class MatchTable:
    rows: list[MatchRow] = field(default_factory=list)

    @property
    def matched(self) -> list[MatchRow]:
        return [r for r in self.rows if r.true_freq is not None and r.est_freq is not None]

    @property
    def missed(self) -> list[MatchRow]:
        return [r for r in self.rows if r.est_freq is None]

    @property
    def spurious(self) -> list[MatchRow]:
        return [r for r in self.rows if r.true_freq is None]

    def as_dicts(self) -> list[dict]:
        return [asdict(r) for r in self.rows]


def _pct(est: float, ref: float) -> float:
    if ref == 0:
        return 0.0 if est == 0 else float("inf")
    return abs(est - ref) / abs(ref) * 100.0


def score(report: ModeReport, truth: ModeReport, freq_tol: float = 0.015, damp_tol: float | None = None) -> MatchTable:
    """Greedy nearest-frequency matching of estimates to truths.

    ``freq_tol`` is relative to the true frequency. Pairs are taken in order of
    increasing distance, each mode used at most once. ``damp_tol`` (relative)
    optionally rejects pairs whose damping disagrees more than that.
    """
    est = [m for m in report.modes if not m.is_static]
    ref = list(truth.modes)
    candidates = []
    for i, t in enumerate(ref):
        for j, e in enumerate(est):
            dist = abs(e.scaled_freq - t.scaled_freq)
            if dist <= freq_tol * t.scaled_freq:
                if damp_tol is not None and abs(e.damping_ratio - t.damping_ratio) > damp_tol * t.damping_ratio:
                    continue
                candidates.append((dist, i, j))
    used_t, used_e, pairs = set(), set(), {}
    for dist, i, j in sorted(candidates):
        if i in used_t or j in used_e:
            continue
        used_t.add(i)
        used_e.add(j)
        pairs[i] = j

    rows = []
    for i, t in enumerate(ref):
        if i in pairs:
            e = est[pairs[i]]
            rows.append(MatchRow(t.scaled_freq, e.scaled_freq, t.damping_ratio, e.damping_ratio,
                                 _pct(e.scaled_freq, t.scaled_freq), _pct(e.damping_ratio, t.damping_ratio)))
        else:
            rows.append(MatchRow(t.scaled_freq, None, t.damping_ratio, None, flag="missed"))
    for j, e in enumerate(est):
        if j not in used_e:
            rows.append(MatchRow(None, e.scaled_freq, None, e.damping_ratio, flag="unmatched"))
    rows.sort(key=lambda r: r.true_freq if r.true_freq is not None else r.est_freq)
    return MatchTable(rows)
