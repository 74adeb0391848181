"""Optimal and sparsity-promoting DMD amplitudes.

The reconstruction error ``J(b) = ||X - Phi diag(b) V||_F^2`` is written as the
quadratic form ``b* P b - q* b - b* q + s``; ADMM minimises ``J(b) + gamma*||b||_1``
over a log-spaced gamma grid and the grid point where the scaled
cardinality and loss curves cross is picked as the sparse model.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

log = logging.getLogger(__name__)


class CalibrationError(RuntimeError):
    """Could not find gamma endpoints with the requested cardinalities."""


@dataclass
class AmplitudeProblem:
    P: np.ndarray
    q: np.ndarray
    s: float
    eigenvalues: np.ndarray
    n_time: int

    @property
    def r(self) -> int:
        return len(self.q)

    def cost(self, b) -> float:
        b = np.asarray(b, dtype=complex)
        return float(np.real(b.conj() @ self.P @ b - 2 * np.real(self.q.conj() @ b)) + self.s)

    def loss_percent(self, b) -> float:
        if self.s == 0:
            return 0.0
        return float(100.0 * np.sqrt(max(self.cost(b), 0.0) / self.s))


@dataclass
class AdmmConfig:
    rho: float = 1.0
    eps_abs: float = 1e-6
    eps_rel: float = 1e-4
    max_iter: int = 10000


@dataclass
class SparsitySweep:
    gammas: np.ndarray
    amplitudes: np.ndarray  # (n_gammas, r), polished
    cardinality: np.ndarray
    performance_loss: np.ndarray
    selected_index: int
    converged: np.ndarray
    problem: AmplitudeProblem | None = None


@dataclass
class SelectedModes:
    indices: np.ndarray
    amplitudes: np.ndarray  # full length r, zero off the support
    gamma: float
    loss: float


def build_vandermonde(eigenvalues, n_time: int) -> np.ndarray:
    """``V[k, t] = lambda_k ** t`` for ``t = 0 .. n_time-1``."""
    if n_time < 1:
        raise ValueError("n_time must be >= 1")
    lam = np.asarray(eigenvalues, dtype=complex)
    return lam[:, None] ** np.arange(n_time)[None, :]


def build_amplitude_problem(X, modes, eigenvalues, n_time: int | None = None) -> AmplitudeProblem:
    X = np.asarray(X)
    modes = np.asarray(modes, dtype=complex)
    lam = np.asarray(eigenvalues, dtype=complex)
    n_time = X.shape[1] if n_time is None else n_time
    if modes.shape[0] != X.shape[0] or modes.shape[1] != len(lam) or X.shape[1] != n_time:
        raise ValueError(
            f"shape mismatch: X {X.shape}, modes {modes.shape}, {len(lam)} eigenvalues, n_time {n_time}"
        )
    V = build_vandermonde(lam, n_time)
    G = modes.conj().T @ modes
    P = G * np.conj(V @ V.conj().T)
    P = 0.5 * (P + P.conj().T)
    q = np.conj(np.einsum("kt,tk->k", V, X.conj().T @ modes))
    s = float(np.linalg.norm(X) ** 2)
    return AmplitudeProblem(P, q, s, lam, n_time)


def direct_cost(X, modes, eigenvalues, b) -> float:
    """``||X - Phi diag(b) V||_F^2`` evaluated without the quadratic form."""
    V = build_vandermonde(eigenvalues, np.asarray(X).shape[1])
    return float(np.linalg.norm(X - (np.asarray(modes) * np.asarray(b)) @ V) ** 2)


def _ridge(P: np.ndarray) -> float:
    return 1e-12 * float(np.real(np.trace(P))) / len(P)


def optimal_amplitudes(problem: AmplitudeProblem) -> np.ndarray:
    """Stationary point ``P b = q`` of the reconstruction error.

    A tiny ridge ``1e-12 * trace(P)/r`` is added only when ``P`` is not
    numerically positive definite.
    """
    P, q = problem.P, problem.q
    try:
        c = sla.cho_factor(P)
        b = sla.cho_solve(c, q)
        if np.all(np.isfinite(b)):
            return b
    except np.linalg.LinAlgError:
        pass
    log.warning("amplitude matrix P is singular, using ridge-regularised solve")
    return np.linalg.solve(P + _ridge(P) * np.eye(len(P)), q)


def polish(problem: AmplitudeProblem, support) -> np.ndarray:
    """Minimise J with the amplitudes off ``support`` pinned to zero."""
    idx = np.flatnonzero(np.asarray(support, dtype=bool))
    b = np.zeros(problem.r, dtype=complex)
    if idx.size == 0:
        return b
    sub = AmplitudeProblem(problem.P[np.ix_(idx, idx)], problem.q[idx], problem.s, problem.eigenvalues[idx],
                           problem.n_time)
    b[idx] = optimal_amplitudes(sub)
    return b


def _complex_shrink(v: np.ndarray, kappa) -> np.ndarray:
    mag = np.abs(v)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(mag > kappa, 1.0 - kappa / mag, 0.0)
    return scale * v


def _admm_batch(problem: AmplitudeProblem, gammas: np.ndarray, cfg: AdmmConfig):
    """Run ADMM independently for every gamma, vectorised over columns.

    The problem is divided by ``c = trace(P)/r`` so that the penalty ``rho``
    is meaningful regardless of the data scale; this leaves the minimiser
    unchanged because gamma is divided by the same factor.
    """
    r = problem.r
    c = float(np.real(np.trace(problem.P))) / r
    if c <= 0:
        c = 1.0
    P = problem.P / c
    q = (problem.q / c)[:, None]
    kappa = (np.asarray(gammas, dtype=float) / c / cfg.rho)[None, :]
    rho = cfg.rho

    # x-update system (P + rho/2 I) x = q + rho/2 (z - u)
    evals, evecs = np.linalg.eigh(P)
    inv_diag = 1.0 / (evals + rho / 2)
    solve = lambda rhs: evecs @ (inv_diag[:, None] * (evecs.conj().T @ rhs))

    k = len(gammas)
    z = np.zeros((r, k), dtype=complex)
    u = np.zeros((r, k), dtype=complex)
    active = np.ones(k, dtype=bool)
    iters = np.zeros(k, dtype=int)
    sqrt_r = np.sqrt(r)
    for it in range(1, cfg.max_iter + 1):
        cols = np.flatnonzero(active)
        if cols.size == 0:
            break
        zc, uc = z[:, cols], u[:, cols]
        x = solve(q + (rho / 2) * (zc - uc))
        z_new = _complex_shrink(x + uc, kappa[:, cols])
        u_new = uc + x - z_new
        primal = np.linalg.norm(x - z_new, axis=0)
        dual = rho * np.linalg.norm(z_new - zc, axis=0)
        eps_p = sqrt_r * cfg.eps_abs + cfg.eps_rel * np.maximum(np.linalg.norm(x, axis=0), np.linalg.norm(z_new, axis=0))
        eps_d = sqrt_r * cfg.eps_abs + cfg.eps_rel * np.linalg.norm(rho * u_new, axis=0)
        z[:, cols] = z_new
        u[:, cols] = u_new
        iters[cols] = it
        done = (primal <= eps_p) & (dual <= eps_d)
        active[cols[done]] = False
    return z, ~active, iters


def _support(z: np.ndarray) -> np.ndarray:
    return np.abs(z) > 0


def admm_sparsify(problem: AmplitudeProblem, gamma: float, cfg: AdmmConfig | None = None):
    """Sparse amplitudes for one gamma.

    Returns ``(b, loss_percent, converged)`` where ``b`` is polished on the
    ADMM support.
    """
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    cfg = cfg or AdmmConfig()
    if gamma == 0:
        b = optimal_amplitudes(problem)
        return b, problem.loss_percent(b), True
    z, conv, _ = _admm_batch(problem, np.array([gamma]), cfg)
    b = polish(problem, _support(z[:, 0]))
    return b, problem.loss_percent(b), bool(conv[0])


def _cardinality(problem: AmplitudeProblem, gamma: float, cfg: AdmmConfig) -> int:
    z, _, _ = _admm_batch(problem, np.array([gamma]), cfg)
    return int(np.count_nonzero(_support(z[:, 0])))


def calibrate_span(problem: AmplitudeProblem, cfg: AdmmConfig | None = None, max_probes: int = 40):
    """Find ``(gamma_min, gamma_max)`` with ``card(gamma_min) = r`` and ``card(gamma_max) <= 2``.

    ``gamma >= 2 max|q_i|`` always gives the all-zero solution; halving from
    there stops at the smallest probed value still giving at most two
    amplitudes. The lower end starts from a scale estimate built from the
    optimal amplitudes and is halved until every amplitude survives.
    """
    cfg = cfg or AdmmConfig()
    r = problem.r
    probes = 0
    g_hi = 2.0 * float(np.abs(problem.q).max())
    if g_hi == 0:
        raise CalibrationError("q is zero: the data has no projection on the modes")
    # shrink the upper end while the solution stays within two amplitudes
    while probes < max_probes // 2:
        probes += 1
        trial = g_hi / 2
        if _cardinality(problem, trial, cfg) > 2:
            break
        g_hi = trial

    b_opt = optimal_amplitudes(problem)
    c = float(np.real(np.trace(problem.P))) / r
    g_lo = min(g_hi / 2, 0.5 * c * float(np.abs(b_opt).min()))
    g_lo = max(g_lo, g_hi * 1e-14)
    card = -1
    while probes < max_probes:
        probes += 1
        card = _cardinality(problem, g_lo, cfg)
        if card == r:
            return g_lo, g_hi
        g_lo /= 2
    raise CalibrationError(f"calibration stopped after {probes} probes: gamma range [{g_lo:.3e}, {g_hi:.3e}], "
                           f"cardinality at lower end {card} of {r}")


def gamma_sweep(problem: AmplitudeProblem, n_gammas: int = 200, span: tuple[float, float] | None = None,
                cfg: AdmmConfig | None = None) -> SparsitySweep:
    if n_gammas < 2:
        raise ValueError("n_gammas must be >= 2")
    cfg = cfg or AdmmConfig()
    lo, hi = span if span is not None else calibrate_span(problem, cfg)
    gammas = np.logspace(np.log10(lo), np.log10(hi), n_gammas)
    z, conv, _ = _admm_batch(problem, gammas, cfg)
    amps = np.zeros((n_gammas, problem.r), dtype=complex)
    card = np.zeros(n_gammas, dtype=int)
    loss = np.zeros(n_gammas)
    for i in range(n_gammas):
        sup = _support(z[:, i])
        amps[i] = polish(problem, sup)
        card[i] = int(sup.sum())
        loss[i] = problem.loss_percent(amps[i])
    sweep = SparsitySweep(gammas, amps, card, loss, -1, conv, problem)
    sweep.selected_index = crossing_index(card, loss)
    return sweep


def _normalise(v: np.ndarray, flat_tol: float = 0.0) -> np.ndarray:
    """Min-max scale a curve to [0, 1]; a curve spanning ``flat_tol`` or less maps to zeros."""
    v = np.asarray(v, dtype=float)
    span = v.max() - v.min()
    if span <= flat_tol:
        return np.zeros_like(v)
    return (v - v.min()) / span


def crossing_index(cardinality, loss, flat_loss: float = 1e-6, exact_loss: float = 1e-2,
                   cliff: float = 1.0) -> int:
    """Grid index of the crossing of the scaled cardinality and loss curves.

    Both curves are min-max scaled over the sweep. Cardinality falls and loss
    rises with gamma, so the curves cross between the last point where scaled
    cardinality is still on or above scaled loss and the next one; that last
    point (the denser end) is returned. A loss curve spanning at most
    ``flat_loss`` percent counts as flat, which selects the largest gamma.
    Without a crossing the closest approach wins, ties toward larger gamma.

    Exact fits are handled first. When the sparsest model within
    ``exact_loss`` percent is followed by a jump of at least ``cliff``
    percent, the pool holds no surplus modes to trade off and that model is
    returned. Noisy pools instead creep up from zero loss and skip this.
    """
    card = np.asarray(cardinality, dtype=float)
    loss = np.asarray(loss, dtype=float)
    exact = np.flatnonzero(loss <= exact_loss)
    if exact.size:
        last = int(exact[-1])
        sparser = np.flatnonzero(card[last + 1 :] < card[last])
        if sparser.size == 0 or loss[last + 1 + sparser[0]] >= cliff:
            return last
    gap = _normalise(card) - _normalise(loss, flat_loss)
    above = np.flatnonzero(gap >= 0)
    if above.size:
        return int(above[-1])
    return int(np.flatnonzero(np.abs(gap) == np.abs(gap).min())[-1])


def conjugate_partners(eigenvalues, tol: float = 1e-8) -> np.ndarray:
    """``partner[k]`` is the index of the conjugate of eigenvalue ``k`` (itself when real)."""
    lam = np.asarray(eigenvalues, dtype=complex)
    partner = np.arange(len(lam))
    taken = set()
    scale = np.maximum(np.abs(lam), 1.0)
    for k in range(len(lam)):
        if k in taken:
            continue
        if abs(lam[k].imag) <= tol * scale[k]:
            taken.add(k)
            continue
        dist = np.abs(lam - lam[k].conj())
        dist[k] = np.inf
        dist[list(taken)] = np.inf
        j = int(np.argmin(dist))
        if dist[j] <= 1e-6 * scale[k]:
            partner[k], partner[j] = j, k
            taken.update((k, j))
    return partner


def select_optimal_gamma(sweep: SparsitySweep, gamma: float | None = None) -> SelectedModes:
    """Pick the sparse model at the curve crossing (or at an explicit ``gamma``)."""
    if len(sweep.gammas) == 0:
        raise ValueError("empty sweep")
    problem = sweep.problem
    if gamma is not None:
        b, loss, _ = admm_sparsify(problem, gamma)
        support = np.abs(b) > 0
    else:
        i = sweep.selected_index
        gamma = float(sweep.gammas[i])
        support = np.abs(sweep.amplitudes[i]) > 0
    partner = conjugate_partners(problem.eigenvalues)
    support = support | support[partner]
    b = polish(problem, support)
    return SelectedModes(np.flatnonzero(support), b, float(gamma), problem.loss_percent(b))
