"""Measurement matrices, compressed-data DMD and sparse mode recovery."""

from __future__ import annotations

import io
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla

from .chain import ChainOutput, analyze
from .config import MEASUREMENT_KINDS as KINDS
from .config import PipelineConfig, canonical_kind
from .signal_ingest import ChannelRecord, ParseError, SnapshotMatrix, TestPointDataset

@dataclass
class MeasurementMatrix:
    kind: str
    entries: np.ndarray  # (p, n)
    seed: int

    @property
    def p(self) -> int:
        return self.entries.shape[0]

    @property
    def n(self) -> int:
        return self.entries.shape[1]


def make_measurement(kind: str, p: int, n: int, seed: int = 0, sort: bool = False) -> MeasurementMatrix:
    """Draw a ``p x n`` measurement matrix.

    ``single_pixel`` picks ``p`` distinct sensors uniformly without
    replacement (rows of the identity, in draw order unless ``sort``).
    """
    kind = canonical_kind(kind)
    if n < 1 or not 1 <= p <= n:
        raise ValueError(f"need 1 <= p <= n, got p={p}, n={n}")
    rng = np.random.default_rng(seed)
    if kind == "gaussian_random":
        C = rng.standard_normal((p, n)) / np.sqrt(n)
    elif kind == "uniform_random":
        C = rng.uniform(-1.0, 1.0, size=(p, n)) / np.sqrt(n)
    else:
        rows = rng.choice(n, size=p, replace=False)
        if sort:
            rows = np.sort(rows)
        C = np.zeros((p, n))
        C[np.arange(p), rows] = 1.0
    return MeasurementMatrix(kind, C, int(seed))


def save_measurement(C: MeasurementMatrix, sink) -> None:
    """CSV with a one-line ``kind,p,n,seed`` header followed by the matrix rows."""
    out = io.StringIO()
    out.write(f"# kind={C.kind},p={C.p},n={C.n},seed={C.seed}\n")
    np.savetxt(out, C.entries, delimiter=",", fmt="%.17g")
    if isinstance(sink, (str, os.PathLike)):
        with open(sink, "w") as fh:
            fh.write(out.getvalue())
    else:
        sink.write(out.getvalue())


def load_measurement(source) -> MeasurementMatrix:
    if isinstance(source, (str, os.PathLike)):
        with open(source) as fh:
            text = fh.read()
    else:
        text = source.read()
    head, _, body = text.partition("\n")
    if not head.startswith("# "):
        raise ParseError("missing measurement header", line=1)
    try:
        meta = dict(item.split("=", 1) for item in head[2:].split(","))
        kind, p, n, seed = meta["kind"], int(meta["p"]), int(meta["n"]), int(meta["seed"])
    except (KeyError, ValueError) as exc:
        raise ParseError(f"bad measurement header: {exc}", line=1) from exc
    entries = np.loadtxt(io.StringIO(body), delimiter=",", ndmin=2)
    if entries.shape != (p, n):
        raise ParseError(f"header says {p}x{n}, body is {entries.shape[0]}x{entries.shape[1]}")
    return MeasurementMatrix(canonical_kind(kind), entries, seed)


def compress(data, C: MeasurementMatrix):
    """Apply ``C`` at sensor level.

    A :class:`TestPointDataset` yields a dataset of ``p`` pseudo-channels
    (maneuver detection then proceeds as usual). A channel-major
    :class:`SnapshotMatrix` is compressed block by block, giving
    ``p * n_maneuvers`` rows in the same stacking order.
    """
    if isinstance(data, TestPointDataset):
        X = data.valid_matrix()
        if X.shape[0] != C.n:
            raise ValueError(f"measurement expects {C.n} sensors, dataset has {X.shape[0]} valid channels")
        Y = C.entries @ X
        channels = [ChannelRecord(f"y{i}", Y[i], True) for i in range(C.p)]
        return TestPointDataset(data.test_point_id, channels, data.dt)

    if not isinstance(data, SnapshotMatrix):
        raise TypeError("compress expects a TestPointDataset or SnapshotMatrix")
    n_man = data.n_maneuvers
    rows, T = data.values.shape
    if rows != C.n * n_man:
        raise ValueError(f"measurement expects {C.n} sensors x {n_man} maneuvers, matrix has {rows} rows")
    blocks = data.values.reshape(C.n, n_man, T)
    Y = np.einsum("pc,cmt->pmt", C.entries, blocks).reshape(C.p * n_man, T)
    maneuvers = [m for _, m in data.row_labels[:n_man]]
    labels = [(f"y{i}", m) for i in range(C.p) for m in maneuvers]
    meta = dict(data.meta, measurement={"kind": C.kind, "p": C.p, "n": C.n, "seed": C.seed})
    return SnapshotMatrix(Y, labels, data.dt, meta)


@dataclass
class CsDmdResult:
    eigenvalues: np.ndarray
    compressed_modes: np.ndarray  # (p * n_maneuvers, r)
    amplitudes: np.ndarray
    measurement: MeasurementMatrix | None
    chain: ChainOutput | None = None


def cs_dmd(Y: SnapshotMatrix, cfg: PipelineConfig | None = None, measurement: MeasurementMatrix | None = None) -> CsDmdResult:
    """Run the full chain (RPCA included) on compressed data."""
    cfg = cfg or PipelineConfig()
    if Y.values.size == 0:
        raise ValueError("compressed matrix is empty")
    out = analyze(Y.values, cfg, Y.dt)
    return CsDmdResult(out.dmd.eigenvalues, out.dmd.modes, out.dmd.amplitudes, measurement, out)


@dataclass
class SparseBasis:
    Psi: np.ndarray
    label: str

    def __post_init__(self):
        norms = np.linalg.norm(self.Psi, axis=0)
        if not np.allclose(norms, 1.0, atol=1e-10):
            raise ValueError("basis columns must have unit norm")

    @classmethod
    def identity(cls, n: int) -> "SparseBasis":
        return cls(np.eye(n), "identity")

    @classmethod
    def fourier(cls, n: int) -> "SparseBasis":
        return cls(sla.dft(n, scale="sqrtn").conj().T, "fourier")

    @classmethod
    def dct(cls, n: int) -> "SparseBasis":
        from scipy.fft import idct

        return cls(idct(np.eye(n), norm="ortho", axis=0), "dct")


def rip_diagnostic(C: MeasurementMatrix, Psi: SparseBasis, k: int, trials: int = 200, seed: int = 0) -> float:
    """Monte Carlo lower bound on the restricted isometry constant of ``C Psi``."""
    if k == 0:
        return 0.0
    if k > C.p:
        raise ValueError("k must not exceed the number of measurements")
    if trials < 1:
        raise ValueError("trials must be >= 1")
    A = C.entries @ Psi.Psi
    n = A.shape[1]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(trials):
        S = np.zeros(n)
        S[rng.choice(n, size=k, replace=False)] = rng.standard_normal(k)
        S /= np.linalg.norm(S)
        worst = max(worst, abs(np.linalg.norm(A @ S) ** 2 - 1.0))
    return float(worst)


@dataclass
class OmpResult:
    x: np.ndarray
    support: np.ndarray
    residual: float


def omp(A, y, k: int | None = None, tol: float | None = None) -> OmpResult:
    """Orthogonal matching pursuit for real or complex ``y``.

    Stops after ``k`` atoms or once the residual norm is at most ``tol``.
    """
    A = np.asarray(A)
    y = np.asarray(y)
    p, n = A.shape
    if k is None and tol is None:
        raise ValueError("give a sparsity k or a residual tolerance")
    k = min(p, n) if k is None else k
    if k > p:
        raise ValueError(f"sparsity {k} exceeds the {p} measurements")
    norms = np.linalg.norm(A, axis=0)
    if np.any(norms == 0):
        raise ValueError(f"dictionary column {int(np.flatnonzero(norms == 0)[0])} is zero and cannot be normalised")
    An = A / norms
    dtype = np.result_type(A, y, float)
    x = np.zeros(n, dtype=dtype)
    r = y.astype(dtype)
    support: list[int] = []
    coef = np.zeros(0, dtype=dtype)
    tol = -1.0 if tol is None else tol
    while len(support) < k and np.linalg.norm(r) > tol:
        corr = np.abs(An.conj().T @ r)
        corr[support] = -1.0
        support.append(int(np.argmax(corr)))
        coef = np.linalg.lstsq(A[:, support], y, rcond=None)[0]
        r = y - A[:, support] @ coef
    x[support] = coef
    return OmpResult(x, np.array(sorted(support), dtype=int), float(np.linalg.norm(r)))


@dataclass
class FullModes:
    modes: np.ndarray  # (n * blocks, r)
    failed: np.ndarray  # per-mode flags
    residuals: np.ndarray = field(default_factory=lambda: np.zeros(0))


def reconstruct_full_modes(result, C: MeasurementMatrix, Psi: SparseBasis, k: int, rtol: float = 1e-6) -> FullModes:
    """Recover full-state modes from compressed ones by OMP in the basis ``Psi``.

    ``result`` is a :class:`CsDmdResult` or a bare mode matrix. Modes with
    ``p * n_blocks`` rows are solved block by block. A mode fails when the
    problem is underdetermined beyond its sparsity (``k > p``), when OMP
    raises, or when the relative residual exceeds ``rtol``.
    """
    Phi_Y = result.compressed_modes if isinstance(result, CsDmdResult) else np.asarray(result)
    if Phi_Y.ndim == 1:
        Phi_Y = Phi_Y[:, None]
    rows, r = Phi_Y.shape
    if rows % C.p:
        raise ValueError(f"{rows} mode rows are not a multiple of p={C.p}")
    blocks = rows // C.p
    A = C.entries @ Psi.Psi
    n = C.n
    out = np.zeros((n * blocks, r), dtype=complex)
    failed = np.zeros(r, dtype=bool)
    resid = np.zeros(r)
    # rows of Phi_Y are (sensor, block) in channel-major order
    for j in range(r):
        if k > C.p:
            failed[j] = True
            resid[j] = np.nan
            continue
        phi = Phi_Y[:, j].reshape(C.p, blocks)
        full = np.zeros((n, blocks), dtype=complex)
        worst = 0.0
        try:
            for b in range(blocks):
                y = phi[:, b]
                res = omp(A, y, k=k)
                full[:, b] = Psi.Psi @ res.x
                scale = np.linalg.norm(y)
                worst = max(worst, res.residual / scale if scale > 0 else 0.0)
        except (ValueError, np.linalg.LinAlgError):
            failed[j] = True
            resid[j] = np.nan
            continue
        resid[j] = worst
        failed[j] = worst > rtol
        out[:, j] = full.reshape(-1)
    return FullModes(out, failed, resid)
