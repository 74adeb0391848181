"""The stage chain shared by the all-sensor and limited-sensor pipelines.

RPCA -> truncate -> POD project -> delay embed -> DMD -> converge loop ->
gamma sweep -> select -> modal parameters.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .config import PipelineConfig
from .dmd_engine import (
    DmdConfig,
    DmdResult,
    LoopConfig,
    ReconstructionReport,
    extract_modal_parameters,
    iterate_until_converged,
    sweep_delay,
    thin_svd,
)
from .mode_select import (
    AdmmConfig,
    SelectedModes,
    SparsitySweep,
    build_amplitude_problem,
    gamma_sweep,
    select_optimal_gamma,
)
from .report import ModeEntry
from .rpca import RpcaConfig, RpcaResult, rpca_ialm


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it and ``diagnostics`` keeps what was computed so far."""

    def __init__(self, stage: str, cause: Exception, diagnostics: dict | None = None):
        self.stage = stage
        self.cause = cause
        self.diagnostics = diagnostics or {}
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")


@dataclass
class ChainOutput:
    modes: list[ModeEntry]
    dmd: DmdResult
    selection: SelectedModes
    sweep: SparsitySweep | None
    loop: ReconstructionReport
    rpca: RpcaResult | None
    delay: int
    diagnostics: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)


def dmd_config(cfg: PipelineConfig, delay: int | None = None) -> DmdConfig:
    t, d = cfg.truncation, cfg.dmd
    return DmdConfig(
        truncation=t.method, energy=t.energy, fixed_rank=t.rank, eta=t.eta,
        delay=cfg.delay.d if delay is None else delay,
        second_level=d.second_level, second_level_energy=d.second_level_energy,
        second_level_rank=d.second_level_rank, amplitudes=d.amplitudes,
    )


def rpca_config(cfg: PipelineConfig) -> RpcaConfig:
    r = cfg.rpca
    return RpcaConfig(lam=r.lam, mu0=r.mu0, rho=r.rho, tol=r.tol, max_iter=r.max_iter)


def _entries(dmd: DmdResult, selection: SelectedModes) -> list[ModeEntry]:
    entries = []
    reduced = dmd.reduced_modes
    for p in extract_modal_parameters(dmd, selection.indices):
        amp = float(abs(selection.amplitudes[p.index]) * np.linalg.norm(reduced[:, p.index]))
        flags = []
        if p.is_static:
            flags.append("static")
        if p.growth_rate > 0:
            flags.append("growing")
        entries.append(ModeEntry(p.scaled_freq, p.damping_ratio, p.growth_rate, amp, p.is_static, flags))
    return entries


def canonical_row_order(X: np.ndarray) -> np.ndarray:
    """Lexicographic row order, so any row permutation of ``X`` maps to the same matrix."""
    return np.lexsort(X.T[::-1])


def analyze(X, cfg: PipelineConfig, dt: float = 1.0) -> ChainOutput:
    """Run the chain on a stacked snapshot matrix ``X``.

    Rows are processed in :func:`canonical_row_order` and mapped back at the
    end, which makes the result exactly invariant to reordering the rows.
    Failures are re-raised as :class:`StageError` carrying the diagnostics
    collected before the failing stage.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.size == 0:
        raise StageError("ingest", ValueError("snapshot matrix must be a nonempty 2-D array"))
    order = canonical_row_order(X)
    inverse = np.argsort(order)
    X = X[order]
    diag: dict = {}
    timings: dict = {}
    stage = "rpca"

    def tick(name, t0):
        timings[name] = time.perf_counter() - t0

    try:
        t0 = time.perf_counter()
        rp = None
        data = X
        if cfg.rpca.enabled:
            rp = rpca_ialm(X, rpca_config(cfg))
            data = rp.low_rank
            diag["rpca"] = {"iterations": rp.iterations, "converged": rp.converged,
                            "residual": rp.final_residual}
        tick("rpca", t0)

        stage = "truncate"
        t0 = time.perf_counter()
        diag["singular_values"] = thin_svd(data)[1].tolist()
        tick("truncate", t0)

        delay = cfg.delay.d
        if cfg.delay.mode == "sweep":
            stage = "delay_sweep"
            t0 = time.perf_counter()
            curve, delay = sweep_delay(data, cfg.delay.candidates, dmd_config(cfg), dt, reference=X)
            diag["delay_curve"] = curve
            tick("delay_sweep", t0)

        stage = "dmd"
        t0 = time.perf_counter()
        loop = LoopConfig(cfg.loop.threshold, cfg.loop.max_outer, cfg.loop.stall)
        dmd, rec = iterate_until_converged(data, dmd_config(cfg, delay), loop, dt, reference=X)
        diag["rank"] = dmd.rank
        diag["n_eigenvalues"] = len(dmd.eigenvalues)
        diag["reconstruction_history"] = rec.history
        diag["loop_converged"] = rec.converged
        tick("dmd", t0)

        stage = "sparsity"
        t0 = time.perf_counter()
        problem = build_amplitude_problem(dmd.projected, dmd.reduced_modes, dmd.eigenvalues)
        s = cfg.sparsity
        admm = AdmmConfig(s.rho, s.eps_abs, s.eps_rel, s.max_iter)
        sweep = gamma_sweep(problem, s.n_gammas, cfg=admm)
        diag["gamma_curve"] = {"gamma": sweep.gammas.tolist(), "cardinality": sweep.cardinality.tolist(),
                               "loss_percent": sweep.performance_loss.tolist()}
        selection = select_optimal_gamma(sweep, s.gamma)
        diag["gamma"] = selection.gamma
        diag["n_selected"] = int(len(selection.indices))
        diag["selected_loss_percent"] = selection.loss
        tick("sparsity", t0)

        stage = "extract"
        t0 = time.perf_counter()
        modes = _entries(dmd, selection)
        tick("extract", t0)
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - every failure is re-tagged with its stage
        diag["timings"] = timings
        raise StageError(stage, exc, diag) from exc

    dmd.modes = dmd.modes[inverse]
    dmd.basis = dmd.basis[inverse]
    if rp is not None:
        rp.low_rank, rp.sparse = rp.low_rank[inverse], rp.sparse[inverse]
    return ChainOutput(modes, dmd, selection, sweep, rec, rp, delay, diag, timings)
