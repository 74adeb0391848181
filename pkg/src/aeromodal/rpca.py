"""Robust PCA by Principal Component Pursuit, solved with the inexact ALM method.

The data matrix is split as ``X = L + S`` with ``L`` low rank and ``S`` sparse by
minimising ``||L||_* + lambda0 * ||S||_1`` subject to ``L + S = X``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RpcaConfig:
    """Knobs of the inexact ALM solver.

    ``mu0=None`` seeds the penalty with ``1.25 / sigma_1(X)``.
    """

    lam: float = 1.0
    mu0: float | None = None
    rho: float = 1.5
    tol: float = 1e-7
    max_iter: int = 500

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lam must be positive")
        if self.mu0 is not None and self.mu0 <= 0:
            raise ValueError("mu0 must be positive")
        if self.rho < 1:
            raise ValueError("rho must be >= 1")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")

    def lambda0(self, shape: tuple[int, int]) -> float:
        return self.lam / np.sqrt(max(shape))


@dataclass
class RpcaResult:
    low_rank: np.ndarray
    sparse: np.ndarray
    iterations: int
    converged: bool
    final_residual: float
    objective: list[float] = field(default_factory=list)


def soft_threshold(M, tau: float) -> np.ndarray:
    """Entrywise shrinkage ``sign(m) * max(|m| - tau, 0)``."""
    if tau < 0:
        raise ValueError("tau must be non-negative")
    M = np.asarray(M, dtype=float)
    return np.sign(M) * np.maximum(np.abs(M) - tau, 0.0)


def singular_value_threshold(M, tau: float) -> np.ndarray:
    """Proximal operator of ``tau * ||.||_*``: shrink the singular values of ``M``."""
    if tau < 0:
        raise ValueError("tau must be non-negative")
    M = np.asarray(M, dtype=float)
    try:
        U, s, Vt = np.linalg.svd(M, full_matrices=False)
    except np.linalg.LinAlgError as exc:
        raise FloatingPointError(f"SVD failed inside singular value thresholding: {exc}") from exc
    s = np.maximum(s - tau, 0.0)
    k = int(np.count_nonzero(s))
    return (U[:, :k] * s[:k]) @ Vt[:k]


def _svt_rank(M: np.ndarray, tau: float) -> tuple[np.ndarray, float]:
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    s = np.maximum(s - tau, 0.0)
    k = int(np.count_nonzero(s))
    return (U[:, :k] * s[:k]) @ Vt[:k], float(s.sum())


def rpca_ialm(X, cfg: RpcaConfig | None = None, track_objective: bool = False) -> RpcaResult:
    """Decompose ``X`` into low-rank plus sparse parts.

    Non-convergence is not an error: the partial result comes back with
    ``converged=False``.
    """
    cfg = cfg or RpcaConfig()
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be a 2-D matrix")
    if not np.all(np.isfinite(X)):
        raise ValueError("X contains non-finite entries")

    norm_x = np.linalg.norm(X)
    if norm_x == 0.0:
        zeros = np.zeros_like(X)
        return RpcaResult(zeros, zeros.copy(), 1, True, 0.0)

    lam0 = cfg.lambda0(X.shape)
    sigma1 = np.linalg.norm(X, 2)
    mu = cfg.mu0 if cfg.mu0 is not None else 1.25 / sigma1
    # dual initialisation of Lin, Chen & Ma
    Y = X / max(sigma1, np.abs(X).max() / lam0)
    S = np.zeros_like(X)
    L = np.zeros_like(X)

    objective = []
    residual = np.inf
    it = 0
    for it in range(1, cfg.max_iter + 1):
        L, nuclear = _svt_rank(X - S + Y / mu, 1.0 / mu)
        S = soft_threshold(X - L + Y / mu, lam0 / mu)
        R = X - L - S
        Y += mu * R
        mu *= cfg.rho
        residual = np.linalg.norm(R) / norm_x
        if track_objective:
            objective.append(nuclear + lam0 * np.abs(S).sum())
        if residual <= cfg.tol:
            break

    converged = residual <= cfg.tol
    if not converged:
        log.warning("RPCA stopped after %d iterations, residual %.3e", it, residual)
    return RpcaResult(L, S, it, converged, float(residual), objective)
