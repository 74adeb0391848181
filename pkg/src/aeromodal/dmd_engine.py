"""Time-delay embedded exact DMD.

Chain: optimal hard-threshold rank truncation, projection on the retained POD
modes, block-Hankel embedding, exact DMD on the embedded matrix, lifting of the
modes back to the full state, and reconstruction.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np
import scipy.linalg as sla
from scipy import integrate, optimize

from .mode_select import build_amplitude_problem, optimal_amplitudes

log = logging.getLogger(__name__)

# eigenvalues below this magnitude have no usable logarithm
MIN_EIG_MAGNITUDE = 1e-12
STATIC_FREQ = 1e-4


# ---------------------------------------------------------------------------
# optimal hard threshold


def lambda_beta(beta: float) -> float:
    """Hard-threshold coefficient for known noise level, ``4/sqrt(3)`` for square matrices."""
    return math.sqrt(2 * (beta + 1) + 8 * beta / ((beta + 1) + math.sqrt(beta**2 + 14 * beta + 1)))


def _mp_bounds(beta: float) -> tuple[float, float]:
    return (1 - math.sqrt(beta)) ** 2, (1 + math.sqrt(beta)) ** 2


def mp_cdf(x: float, beta: float) -> float:
    """CDF of the Marcenko-Pastur law with ratio ``beta`` and unit variance."""
    lo, hi = _mp_bounds(beta)
    if x <= lo:
        return 0.0
    if x >= hi:
        return 1.0
    dens = lambda t: math.sqrt(max((hi - t) * (t - lo), 0.0)) / (2 * math.pi * beta * t)
    val, _ = integrate.quad(dens, lo, x, epsabs=1e-13, epsrel=1e-12, limit=200)
    return val


@lru_cache(maxsize=256)
def mp_median(beta: float) -> float:
    if not 0 < beta <= 1:
        raise ValueError("beta must lie in (0, 1]")
    lo, hi = _mp_bounds(beta)
    return optimize.brentq(lambda x: mp_cdf(x, beta) - 0.5, lo, hi, xtol=1e-12, rtol=1e-14)


def omega_beta(beta: float) -> float:
    """Threshold coefficient relative to the median singular value.

    The median singular value of a noise matrix is the square root of the
    Marcenko-Pastur median, hence the square root here.
    """
    return lambda_beta(beta) / math.sqrt(mp_median(beta))


@dataclass(frozen=True)
class TruncationDecision:
    rank: int
    threshold: float
    beta: float
    eta: float | None
    energy_captured: float
    method: str = "gavish_donoho"


def _energy(sv: np.ndarray, rank: int) -> float:
    e = sv**2
    return float(e[:rank].sum() / e.sum())


def optimal_hard_threshold(singular_values, n: int, m: int, eta: float | None = None) -> TruncationDecision:
    sv = np.asarray(singular_values, dtype=float)
    if n < 1 or m < 1:
        raise ValueError("matrix dimensions must be positive")
    if sv.size == 0 or not np.any(sv > 0):
        raise ValueError("degenerate all-zero spectrum")
    if np.any(np.diff(sv) > 0) or np.any(sv < 0):
        raise ValueError("singular values must be non-negative and sorted descending")
    beta = min(n, m) / max(n, m)
    if eta is not None:
        tau = lambda_beta(beta) * math.sqrt(max(n, m)) * eta
    else:
        tau = omega_beta(beta) * float(np.median(sv))
    rank = max(int(np.count_nonzero(sv > tau)), 1)
    return TruncationDecision(rank, tau, beta, eta, _energy(sv, rank), "gavish_donoho")


def energy_rank(singular_values, fraction: float) -> int:
    """Smallest rank whose cumulative ``sigma^2`` share reaches ``fraction``."""
    e = np.asarray(singular_values, dtype=float) ** 2
    cum = np.cumsum(e) / e.sum()
    return int(min(np.searchsorted(cum, fraction * (1 - 1e-15)) + 1, len(e)))


def choose_rank(singular_values, n: int, m: int, method: str = "gavish_donoho", energy: float = 0.999,
                fixed_rank: int | None = None, eta: float | None = None) -> TruncationDecision:
    """First-level truncation.

    ``max`` keeps whichever of the hard threshold and the energy criterion
    retains more modes.
    """
    sv = np.asarray(singular_values, dtype=float)
    gd = optimal_hard_threshold(sv, n, m, eta)
    if method == "gavish_donoho":
        return gd
    if method == "fixed":
        if fixed_rank is None or not 1 <= fixed_rank <= len(sv):
            raise ValueError(f"fixed rank must lie in [1, {len(sv)}]")
        rank = fixed_rank
    elif method == "energy":
        rank = energy_rank(sv, energy)
    elif method == "max":
        rank = max(gd.rank, energy_rank(sv, energy))
    else:
        raise ValueError(f"unknown truncation method {method!r}")
    return replace(gd, rank=rank, energy_captured=_energy(sv, rank), method=method)


# ---------------------------------------------------------------------------
# SVD helpers


def thin_svd(A: np.ndarray, gram_above: int = 600) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Thin SVD; large matrices go through the Gram matrix of their short side.

    The Gram route squares the condition number, so only components with
    ``s > 1e-7 * s_max`` are returned on that path.
    """
    a, b = A.shape
    if min(a, b) <= gram_above:
        try:
            return np.linalg.svd(A, full_matrices=False)
        except np.linalg.LinAlgError as exc:
            raise FloatingPointError(f"SVD failed: {exc}") from exc
    tall = a >= b
    G = A.T @ A if tall else A @ A.T
    w, V = sla.eigh(G)
    w, V = w[::-1], V[:, ::-1]
    keep = w > (1e-7 * math.sqrt(max(w[0], 0.0))) ** 2
    s = np.sqrt(w[keep])
    V = V[:, keep]
    if tall:
        U = (A @ V) / s
        return U, s, V.T
    Vt = (V.T @ A) / s[:, None]
    return V, s, Vt


def pod_project(X, rank: int, svd=None) -> tuple[np.ndarray, np.ndarray]:
    """Project ``X`` on its leading ``rank`` left singular vectors: ``(U_r^T X, U_r)``."""
    X = np.asarray(X, dtype=float)
    if not 1 <= rank <= min(X.shape):
        raise ValueError(f"rank {rank} outside [1, {min(X.shape)}]")
    U, s, Vt = svd if svd is not None else thin_svd(X)
    Ur = U[:, :rank]
    return s[:rank, None] * Vt[:rank], Ur


def hankel_embed(Xt, d: int) -> np.ndarray:
    """Block-Hankel matrix: block row ``j`` holds columns ``j .. j+m-d`` of ``Xt``."""
    Xt = np.asarray(Xt)
    if Xt.ndim == 1:
        Xt = Xt[None, :]
    r, m = Xt.shape
    if d < 1:
        raise ValueError("delay order must be >= 1")
    if d >= m:
        raise ValueError(f"delay order {d} must be smaller than the {m} snapshots")
    cols = m - d + 1
    return np.concatenate([Xt[:, j : j + cols] for j in range(d)], axis=0)


# ---------------------------------------------------------------------------
# exact DMD


def exact_dmd(H, second_level_energy: float = 1 - 1e-8, rank: int | str | None = None):
    """Exact DMD of the snapshot pairs ``(H[:, :-1], H[:, 1:])``.

    ``rank`` is an integer, ``"gavish_donoho"`` (hard threshold on the
    spectrum of ``H[:, :-1]``) or None for the energy rule.
    Returns ``(modes, eigenvalues, U1)`` with the modes in the coordinates of ``H``.
    """
    H = np.asarray(H, dtype=float)
    if H.ndim != 2 or H.shape[1] < 2:
        raise ValueError("need at least two snapshots")
    H1, H2 = H[:, :-1], H[:, 1:]
    U, s, Vt = thin_svd(H1)
    if s.size == 0 or s[0] == 0:
        raise ValueError("degenerate snapshot matrix: zero rank")
    if rank == "gavish_donoho":
        k = optimal_hard_threshold(s, *H1.shape).rank
    else:
        k = rank if rank is not None else energy_rank(s, second_level_energy)
    k = max(1, min(k, len(s)))
    U1, s1, V1 = U[:, :k], s[:k], Vt[:k].T
    B = (H2 @ V1) / s1
    A_tilde = U1.T @ B
    lam, W = np.linalg.eig(A_tilde)
    modes = B @ W
    return modes, lam, U1


def _diagonal_window_sums(K: np.ndarray, d: int) -> np.ndarray:
    """``S[a, b] = sum_{j<d} K[a+j, b+j]`` for ``a, b < m-d+1``."""
    m = K.shape[0]
    C = np.zeros((m + 1, m + 1))
    for i in range(m - 1, -1, -1):
        C[i, :m] = K[i] + C[i + 1, 1 : m + 1]
    M = m - d + 1
    return C[:M, :M] - C[d : d + M, d : d + M]


def hankel_dmd_gram(Xt, d: int, rank: int | str):
    """Exact DMD of ``hankel_embed(Xt, d)`` without forming the Hankel matrix.

    Both Gram products of the shifted snapshot sets are sums of ``d`` diagonal
    shifts of ``Xt^T Xt``. ``rank="gavish_donoho"`` thresholds the full
    embedded spectrum. Returns ``(modes, eigenvalues)`` with the modes
    restricted to the current-time block (the first ``Xt.shape[0]`` rows).
    """
    Xt = np.asarray(Xt, dtype=float)
    r, m = Xt.shape
    if d >= m:
        raise ValueError(f"delay order {d} must be smaller than the {m} snapshots")
    S = _diagonal_window_sums(Xt.T @ Xt, d)
    N = m - d
    G11, G12 = S[:N, :N], S[:N, 1 : N + 1]
    if rank == "gavish_donoho":
        w, V1 = sla.eigh(G11)
        w, V1 = w[::-1], V1[:, ::-1]
        # G11 has at most r*d nonzero eigenvalues; the rest are structural zeros
        sv = np.sqrt(np.clip(w[: min(r * d, N)], 0.0, None))
        k = optimal_hard_threshold(sv, r * d, N).rank
        w, V1 = w[:k], V1[:, :k]
    else:
        k = max(1, min(rank, N))
        w, V1 = sla.eigh(G11, subset_by_index=[N - k, N - 1])
        w, V1 = w[::-1], V1[:, ::-1]
    good = w > (1e-7 * math.sqrt(max(w[0], 0.0))) ** 2
    if not np.any(good):
        raise ValueError("degenerate snapshot matrix: zero rank")
    s1, V1 = np.sqrt(w[good]), V1[:, good]
    A_tilde = (V1.T @ G12 @ V1) / np.outer(s1, s1)
    lam, W = np.linalg.eig(A_tilde)
    modes = (Xt[:, 1 : N + 1] @ V1 / s1) @ W
    return modes, lam


def lift_modes(reduced_modes, U_first, d: int) -> np.ndarray:
    """Keep the current-time block of delay-embedded modes and map it to the full state."""
    reduced_modes = np.asarray(reduced_modes)
    U_first = np.asarray(U_first)
    r = U_first.shape[1]
    if reduced_modes.shape[0] != r * d:
        raise ValueError(f"modes have {reduced_modes.shape[0]} rows, expected {r} x {d}")
    return U_first @ reduced_modes[:r]


def amplitudes_pinv(modes, x1) -> np.ndarray:
    """Minimum-norm least-squares amplitudes ``Phi^+ x1``."""
    modes = np.asarray(modes)
    x1 = np.asarray(x1)
    if modes.shape[0] != x1.shape[0]:
        raise ValueError("state dimension mismatch")
    return np.linalg.lstsq(modes, x1.astype(complex), rcond=None)[0]


@dataclass
class DmdResult:
    eigenvalues: np.ndarray
    omega: np.ndarray
    modes: np.ndarray
    amplitudes: np.ndarray
    rank: int
    delay: int
    dt: float = 1.0
    basis: np.ndarray | None = None  # first-level POD basis, modes = basis @ reduced
    truncation: TruncationDecision | None = None
    projected: np.ndarray | None = None  # POD coordinates of the data the chain was fitted on

    @property
    def reduced_modes(self) -> np.ndarray:
        if self.basis is None:
            return self.modes
        return self.basis.T @ self.modes

    def subset(self, idx, amplitudes=None) -> "DmdResult":
        idx = np.asarray(idx, dtype=int)
        amps = self.amplitudes[idx] if amplitudes is None else np.asarray(amplitudes)[idx]
        return replace(self, eigenvalues=self.eigenvalues[idx], omega=self.omega[idx],
                       modes=self.modes[:, idx], amplitudes=amps)


@dataclass
class ReconstructionReport:
    rel_rms: float
    iterations: int
    history: list[float]
    converged: bool = False


def continuous_exponents(eigenvalues, dt: float = 1.0) -> np.ndarray:
    return np.log(np.asarray(eigenvalues, dtype=complex)) / dt


def reconstruct(result: DmdResult, n_steps: int, reference=None):
    """``X[:, t] = Re(Phi diag(exp(omega t dt)) b)`` for ``t = 0 .. n_steps-1``.

    Returns ``(X_rec, rel_rms)``; ``rel_rms`` is None without a reference.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    t = np.arange(n_steps) * result.dt
    dyn = np.exp(np.outer(result.omega, t)) * result.amplitudes[:, None]
    if result.basis is not None:
        X_rec = result.basis @ np.real(result.reduced_modes @ dyn)
    else:
        X_rec = np.real(result.modes @ dyn)
    rel = None
    if reference is not None:
        reference = np.asarray(reference)
        rel = float(np.linalg.norm(reference - X_rec) / np.linalg.norm(reference))
    return X_rec, rel


@dataclass(frozen=True)
class DmdConfig:
    """Chain settings.

    ``second_level`` picks the embedded-space truncation: ``match`` keeps as
    many components as the first level, ``energy`` the smallest rank holding
    ``second_level_energy``, ``fixed`` exactly ``second_level_rank`` and
    ``gavish_donoho`` applies the hard threshold to the embedded spectrum.
    """

    truncation: str = "max"
    energy: float = 0.999
    fixed_rank: int | None = None
    eta: float | None = None
    delay: int = 300
    second_level: str = "match"
    second_level_energy: float = 1 - 1e-8
    second_level_rank: int | None = None
    amplitudes: str = "optimal"  # or "first_snapshot"
    gram_above: int = 4_000_000

    def __post_init__(self):
        if self.delay < 1:
            raise ValueError("delay must be >= 1")
        if not 0 < self.second_level_energy <= 1:
            raise ValueError("second_level_energy must lie in (0, 1]")
        if self.second_level not in ("match", "energy", "fixed", "gavish_donoho"):
            raise ValueError(f"unknown second-level rule {self.second_level!r}")
        if self.second_level == "fixed" and not self.second_level_rank:
            raise ValueError("second_level='fixed' needs second_level_rank")
        if self.amplitudes not in ("optimal", "first_snapshot"):
            raise ValueError(f"unknown amplitude rule {self.amplitudes!r}")


def _embedded_dmd(Xt: np.ndarray, cfg: DmdConfig):
    r, m = Xt.shape
    d = cfg.delay
    if d >= m:
        raise ValueError(f"delay order {d} must be smaller than the {m} snapshots")
    fixed = {"match": r, "fixed": cfg.second_level_rank,
             "gavish_donoho": "gavish_donoho"}.get(cfg.second_level)
    if fixed is not None and r * d * (m - d) > cfg.gram_above:
        return hankel_dmd_gram(Xt, d, fixed)
    H = hankel_embed(Xt, d)
    modes, lam, _ = exact_dmd(H, cfg.second_level_energy, fixed)
    return modes[:r], lam


def dmd_chain(X, cfg: DmdConfig | None = None, dt: float = 1.0) -> DmdResult:
    """Truncate, project, embed, run exact DMD and fit amplitudes on the full record."""
    cfg = cfg or DmdConfig()
    X = np.asarray(X, dtype=float)
    n, m = X.shape
    svd = thin_svd(X)
    sv = svd[1]
    trunc = choose_rank(sv, n, m, cfg.truncation, cfg.energy, cfg.fixed_rank, cfg.eta)
    rank = min(trunc.rank, len(sv))
    Xt, Ur = pod_project(X, rank, svd)
    reduced, lam = _embedded_dmd(Xt, cfg)

    keep = np.abs(lam) >= MIN_EIG_MAGNITUDE
    lam, reduced = lam[keep], reduced[:, keep]
    omega = continuous_exponents(lam, dt)

    if cfg.amplitudes == "optimal":
        b = optimal_amplitudes(build_amplitude_problem(Xt, reduced, lam))
    else:
        b = amplitudes_pinv(reduced, Xt[:, 0])
    return DmdResult(lam, omega, Ur @ reduced, b, rank, cfg.delay, dt, Ur, trunc, Xt)


def sweep_delay(X, candidates, cfg: DmdConfig | None = None, dt: float = 1.0, reference=None):
    """Reconstruction error of the chain for each delay order.

    Returns ``(curve, recommended)`` where ``curve`` is a list of ``(d, rel_rms)``
    and ``recommended`` the smallest ``d`` within 1% absolute of the minimum.
    """
    cfg = cfg or DmdConfig()
    X = np.asarray(X, dtype=float)
    reference = X if reference is None else reference
    curve = []
    for d in candidates:
        if d >= X.shape[1]:
            raise ValueError(f"delay {d} not smaller than {X.shape[1]} snapshots")
        res = dmd_chain(X, replace(cfg, delay=int(d)), dt)
        _, err = reconstruct(res, X.shape[1], reference)
        curve.append((int(d), err))
    best = min(e for _, e in curve)
    recommended = min(d for d, e in curve if e <= best + 0.01)
    return curve, recommended


@dataclass(frozen=True)
class LoopConfig:
    threshold: float = 0.2
    max_outer: int = 5
    stall: float = 0.005

    def __post_init__(self):
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must lie in (0, 1)")
        if self.max_outer < 1:
            raise ValueError("max_outer must be >= 1")


def iterate_until_converged(X, cfg: DmdConfig | None = None, loop: LoopConfig | None = None, dt: float = 1.0,
                            reference=None) -> tuple[DmdResult, ReconstructionReport]:
    """Re-run the chain on its own reconstruction until the error against
    ``reference`` (default ``X``) drops below the threshold.

    An outer iteration that fails to improve by ``loop.stall`` stops the loop;
    one that makes the error worse is discarded, so the history never increases.
    """
    cfg = cfg or DmdConfig()
    loop = loop or LoopConfig()
    X = np.asarray(X, dtype=float)
    reference = X if reference is None else np.asarray(reference)
    m = X.shape[1]

    result = dmd_chain(X, cfg, dt)
    X_rec, err = reconstruct(result, m, reference)
    history = [err]
    iterations = 1
    while err > loop.threshold and iterations < loop.max_outer:
        iterations += 1
        cand = dmd_chain(X_rec, cfg, dt)
        cand_rec, cand_err = reconstruct(cand, m, reference)
        if cand_err > err:
            break
        improvement = err - cand_err
        result, X_rec, err = cand, cand_rec, cand_err
        history.append(err)
        if improvement < loop.stall:
            break
    return result, ReconstructionReport(err, iterations, history, err <= loop.threshold)


@dataclass
class ModalParameter:
    index: int
    scaled_freq: float
    damping_ratio: float
    growth_rate: float
    is_static: bool


def extract_modal_parameters(result: DmdResult, indices=None) -> list[ModalParameter]:
    """One entry per conjugate pair (the member with ``Im(omega) >= 0``)."""
    omega = np.asarray(result.omega, dtype=complex)
    idx = range(len(omega)) if indices is None else indices
    out = []
    for k in idx:
        w = omega[k]
        if w.imag < 0:
            # keep the negative member only when its partner is absent
            if np.any(np.abs(omega[list(idx)] - np.conj(w)) <= 1e-8 * max(abs(w), 1.0)):
                continue
        mag = abs(w)
        freq = abs(w.imag) * result.dt / math.pi
        zeta = -w.real / mag if mag > 0 else 0.0
        out.append(ModalParameter(int(k), freq, float(zeta), float(w.real), freq < STATIC_FREQ))
    return sorted(out, key=lambda p: p.scaled_freq)
