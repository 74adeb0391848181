"""Channel loading, SNR estimation, maneuver detection and snapshot stacking."""

from __future__ import annotations

import csv
import io
import os
import struct
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import find_peaks

BIN_MAGIC = b"AMCH"
_BIN_HEADER = struct.Struct("<4sIId")


class ParseError(ValueError):
    """Input file does not follow the declared channel format."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DetectionError(RuntimeError):
    """Not enough separable maneuver peaks were found."""

    def __init__(self, message: str, peaks: list[int]):
        self.peaks = peaks
        super().__init__(f"{message}; peaks found at {peaks}")


@dataclass
class ChannelRecord:
    channel_id: str
    samples: np.ndarray
    valid: bool = True


@dataclass
class TestPointDataset:
    __test__ = False  # keep pytest from collecting this class

    test_point_id: str
    channels: list[ChannelRecord]
    dt: float = 1.0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        lengths = {len(c.samples) for c in self.channels}
        if len(lengths) > 1:
            raise ValueError("all channels must share the same sample count")
        if not any(c.valid for c in self.channels):
            raise ValueError("dataset has no valid channel")

    @property
    def n_samples(self) -> int:
        return len(self.channels[0].samples)

    @property
    def valid_channels(self) -> list[ChannelRecord]:
        return [c for c in self.channels if c.valid]

    @property
    def excluded(self) -> list[str]:
        return [c.channel_id for c in self.channels if not c.valid]

    def valid_matrix(self) -> np.ndarray:
        """Valid channels as rows of a ``(n_valid, n_samples)`` array."""
        return np.vstack([c.samples for c in self.valid_channels])


@dataclass(frozen=True)
class ManeuverWindow:
    index: int
    start: int
    length: int

    @property
    def stop(self) -> int:
        return self.start + self.length


@dataclass
class SnapshotMatrix:
    values: np.ndarray
    row_labels: list[tuple[str, int]]
    dt: float = 1.0
    meta: dict = field(default_factory=dict)

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def n_maneuvers(self) -> int:
        return len({m for _, m in self.row_labels})


def _make_dataset(test_point_id, ids, columns, dt) -> TestPointDataset:
    channels = []
    for cid, col in zip(ids, columns):
        col = np.asarray(col, dtype=float)
        channels.append(ChannelRecord(cid, col, bool(np.all(np.isfinite(col)))))
    if not any(c.valid for c in channels):
        raise ParseError("no valid channel in input")
    return TestPointDataset(test_point_id, channels, dt)


def _to_float(cell: str) -> float:
    try:
        return float(cell)
    except ValueError:
        return float("nan")


def _parse_csv(text: str, test_point_id: str) -> TestPointDataset:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise ParseError("empty input", line=1) from None
    header = [h.strip() for h in header]
    if len(header) < 2 or header[0] != "time":
        raise ParseError("header must start with 'time' followed by channel columns", line=1)
    ids = []
    for name in header[1:]:
        if not name.startswith("ch_") or len(name) == 3:
            raise ParseError(f"bad channel column name {name!r}", line=1)
        ids.append(name[3:])
    if len(set(ids)) != len(ids):
        raise ParseError("duplicate channel ids in header", line=1)

    times, rows = [], []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ParseError(f"expected {len(header)} fields, got {len(row)}", line=lineno)
        t = _to_float(row[0])
        if not np.isfinite(t):
            raise ParseError(f"non-numeric time value {row[0]!r}", line=lineno)
        times.append(t)
        rows.append([_to_float(c) for c in row[1:]])
    if not rows:
        raise ParseError("no sample rows", line=2)

    data = np.array(rows, dtype=float)
    dt = 1.0
    if len(times) > 1:
        steps = np.diff(times)
        if np.all(steps > 0):
            dt = float(np.median(steps))
    return _make_dataset(test_point_id, ids, data.T, dt)


def _parse_bin(blob: bytes, test_point_id: str) -> TestPointDataset:
    if len(blob) < _BIN_HEADER.size:
        raise ParseError("truncated binary header")
    magic, n_ch, n_s, dt = _BIN_HEADER.unpack_from(blob)
    if magic != BIN_MAGIC:
        raise ParseError(f"bad magic {magic!r}")
    if n_ch < 1 or n_s < 1:
        raise ParseError("binary header declares an empty dataset")
    expected = _BIN_HEADER.size + 8 * n_ch * n_s
    if len(blob) != expected:
        raise ParseError(f"binary payload has {len(blob)} bytes, header implies {expected}")
    if not dt > 0:
        raise ParseError("binary header dt must be positive")
    data = np.frombuffer(blob, dtype="<f8", offset=_BIN_HEADER.size).reshape(n_ch, n_s)
    return _make_dataset(test_point_id, [str(i) for i in range(n_ch)], data.copy(), dt)


def load_channels(source, fmt: str = "channels-csv", test_point_id: str | None = None) -> TestPointDataset:
    """Read a multi-channel record.

    ``source`` may be a path, raw bytes or a binary/text stream. Channels with
    any non-finite or non-numeric entry are kept and flagged ``valid=False``.
    """
    if isinstance(source, (str, os.PathLike)):
        path = os.fspath(source)
        with open(path, "rb") as fh:
            blob = fh.read()
        test_point_id = test_point_id or os.path.splitext(os.path.basename(path))[0]
    elif isinstance(source, (bytes, bytearray)):
        blob = bytes(source)
    else:
        blob = source.read()
        if isinstance(blob, str):
            blob = blob.encode()
    test_point_id = test_point_id or "TP"

    if fmt == "channels-csv":
        return _parse_csv(blob.decode("utf-8"), test_point_id)
    if fmt == "channels-bin":
        return _parse_bin(blob, test_point_id)
    raise ValueError(f"unknown format {fmt!r}")


def save_channels(dataset: TestPointDataset, sink, fmt: str = "channels-csv") -> None:
    """Write ``dataset`` in one of the two channel formats (inverse of :func:`load_channels`)."""
    if fmt == "channels-csv":
        out = io.StringIO()
        out.write(",".join(["time"] + [f"ch_{c.channel_id}" for c in dataset.channels]) + "\n")
        cols = np.vstack([c.samples for c in dataset.channels]).T
        for i, row in enumerate(cols):
            out.write(repr(i * dataset.dt) + "," + ",".join(repr(float(v)) for v in row) + "\n")
        payload = out.getvalue().encode()
    elif fmt == "channels-bin":
        cols = np.vstack([c.samples for c in dataset.channels]).astype("<f8")
        header = _BIN_HEADER.pack(BIN_MAGIC, cols.shape[0], cols.shape[1], float(dataset.dt))
        payload = header + cols.tobytes(order="C")
    else:
        raise ValueError(f"unknown format {fmt!r}")

    if isinstance(sink, (str, os.PathLike)):
        with open(sink, "wb") as fh:
            fh.write(payload)
    else:
        sink.write(payload)


def compute_snr(record: ChannelRecord) -> float:
    """SNR in dB with noise power estimated from the first difference.

    For white noise ``var(diff) = 2 * var(noise)``; smooth signal content
    barely contributes to the difference. Returns ``-inf`` when no signal
    power is left after removing the noise estimate.
    """
    if not record.valid:
        raise ValueError(f"channel {record.channel_id} is flagged defective")
    x = np.asarray(record.samples, dtype=float)
    if len(x) < 16:
        raise ValueError("need at least 16 samples for an SNR estimate")
    p_noise = np.var(np.diff(x)) / 2.0
    p_signal = max(np.var(x) - p_noise, 0.0)
    if p_signal == 0.0:
        return float("-inf")
    if p_noise == 0.0:
        return float("inf")
    return float(10.0 * np.log10(p_signal / p_noise))


def _moving_average(x: np.ndarray, width: int) -> np.ndarray:
    kernel = np.ones(width)
    return np.convolve(x, kernel, mode="same") / np.convolve(np.ones_like(x), kernel, mode="same")


def channel_envelope(dataset: TestPointDataset) -> np.ndarray:
    """RMS across valid channels at every sample."""
    return np.sqrt(np.mean(dataset.valid_matrix() ** 2, axis=0))


def detect_maneuvers(
    dataset: TestPointDataset,
    count: int,
    window_length: int,
    align: str = "preroll",
    preroll: float = 0.05,
    smooth: int = 51,
) -> list[ManeuverWindow]:
    """Find the ``count`` strongest excitations and return their windows in time order.

    ``align="preroll"`` starts each window ``preroll * window_length`` samples
    before the smoothed envelope peak. ``align="onset"`` instead walks forward
    from that point to the first sample where the median absolute amplitude
    across channels reaches half of its local peak, which lands on the
    excitation front.
    Peaks whose window would run past the end of the record are skipped.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    if align not in ("preroll", "onset"):
        raise ValueError(f"unknown alignment {align!r}")
    n = dataset.n_samples
    if count * window_length > n:
        raise ValueError(f"{count} windows of {window_length} samples do not fit in {n} samples")

    raw = channel_envelope(dataset)
    env = _moving_average(raw, smooth)
    span = env.max() - np.median(env)
    if span <= 0:
        raise DetectionError("record envelope is flat", [])
    peaks, _ = find_peaks(env, distance=window_length, prominence=0.1 * span)
    lead = int(round(preroll * window_length))

    feasible = [int(p) for p in peaks if p - lead + window_length <= n]
    if len(feasible) < count:
        raise DetectionError(f"needed {count} separable peaks, found {len(feasible)}", [int(p) for p in peaks])
    strongest = sorted(feasible, key=lambda p: (-env[p], p))[:count]

    if align == "onset":
        # median across channels ignores isolated outlier spikes
        robust = np.median(np.abs(dataset.valid_matrix()), axis=0)
    windows = []
    prev_stop = 0
    for i, p in enumerate(sorted(strongest), start=1):
        start = max(p - lead, 0)
        if align == "onset":
            hi = min(p + smooth, n)
            front = robust[start:hi]
            start += int(np.argmax(front >= 0.5 * front.max()))
        start = min(max(start, prev_stop), n - window_length)
        windows.append(ManeuverWindow(i, start, window_length))
        prev_stop = start + window_length
    return windows


def build_snapshot_matrix(
    dataset: TestPointDataset,
    windows: list[ManeuverWindow],
    window_length: int = 2200,
    demean: bool = False,
) -> SnapshotMatrix:
    """Stack maneuver segments channel-major: all maneuvers of a channel, then the next channel."""
    n = dataset.n_samples
    for w in windows:
        if w.start < 0 or w.start + window_length > n:
            raise IndexError(f"maneuver {w.index} [{w.start}, {w.start + window_length}) exceeds record of {n}")
    rows, labels = [], []
    for ch in dataset.valid_channels:
        for w in windows:
            rows.append(ch.samples[w.start : w.start + window_length])
            labels.append((ch.channel_id, w.index))
    values = np.array(rows, dtype=float)
    if demean:
        values = values - values.mean(axis=1, keepdims=True)
    return SnapshotMatrix(values, labels, dataset.dt, {"windows": [(w.index, w.start) for w in windows]})
