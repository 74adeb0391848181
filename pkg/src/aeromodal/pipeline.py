"""End-to-end pipelines, report comparison and report serialization."""

from __future__ import annotations

import copy
import csv
import io
import json
import os
import time

import numpy as np

from .chain import ChainOutput, StageError, analyze, rpca_config
from .compressed_sensing import compress, make_measurement
from .rpca import rpca_ialm
from .config import PipelineConfig
from .report import ModeEntry, ModeReport
from .signal_ingest import SnapshotMatrix, TestPointDataset, build_snapshot_matrix, detect_maneuvers
from .synth_bench import MatchTable, score

SCHEMA_VERSION = 1
CSV_COLUMNS = ("scaled_freq", "damping_ratio", "growth_rate", "amplitude", "is_static", "flags")


def snapshot(dataset: TestPointDataset, cfg: PipelineConfig) -> SnapshotMatrix:
    ing = cfg.ingestion
    try:
        windows = detect_maneuvers(dataset, ing.maneuver_count, ing.window_length, ing.align, ing.preroll)
        return build_snapshot_matrix(dataset, windows, ing.window_length, ing.demean)
    except Exception as exc:  # noqa: BLE001
        raise StageError("ingest", exc) from exc


def _report(test_point_id: str, out: ChainOutput, cfg: PipelineConfig, seed: int, started: float,
            extra: dict | None = None) -> ModeReport:
    prov = {
        "config_hash": cfg.digest(),
        "seed": int(seed),
        "rank": int(out.dmd.rank),
        "delay": int(out.delay),
        "gamma": float(out.selection.gamma),
        "n_selected": int(len(out.selection.indices)),
        "loss_percent": float(out.selection.loss),
        "reconstruction_error": float(out.loop.rel_rms),
        "runtime_seconds": time.perf_counter() - started,
        "timings": dict(out.timings),
    }
    if out.rpca is not None:
        prov["rpca_converged"] = bool(out.rpca.converged)
    prov.update(extra or {})
    return ModeReport(test_point_id, out.modes, prov)


def run_full(dataset: TestPointDataset, cfg: PipelineConfig | None = None, seed: int = 0):
    """All-sensor pipeline. Returns ``(ModeReport, diagnostics)``."""
    cfg = (cfg or PipelineConfig()).validate()
    started = time.perf_counter()
    t0 = time.perf_counter()
    snap = snapshot(dataset, cfg)
    ingest_time = time.perf_counter() - t0
    out = analyze(snap.values, cfg, snap.dt)
    out.timings = {"ingest": ingest_time, **out.timings}
    extra = {"windows": snap.meta.get("windows", []), "excluded_channels": dataset.excluded}
    report = _report(dataset.test_point_id, out, cfg, seed, started, extra)
    return report, {**out.diagnostics, "chain": out}


def limited_chain_config(cfg: PipelineConfig, n_rows: int) -> PipelineConfig:
    """Chain settings for compressed data.

    RPCA runs on the compressed rows only when ``compressed.rpca = compressed``.
    With ``compressed.full_rank`` the first level keeps all ``n_rows``
    components and the rank reduction is left to the delay-embedded level,
    whose rule is ``compressed.second_level`` (with
    ``compressed.second_level_rank`` for the fixed rule).
    """
    cs = cfg.compressed
    out = copy.deepcopy(cfg)
    out.rpca.enabled = cfg.rpca.enabled and cs.rpca == "compressed"
    if cs.full_rank:
        out.truncation.method = "fixed"
        out.truncation.rank = n_rows
    out.dmd.second_level = cs.second_level
    out.dmd.second_level_rank = cs.second_level_rank
    return out


def run_limited(dataset: TestPointDataset, cfg: PipelineConfig, seed: int | None = None):
    """Limited-sensor pipeline: measure, compress per sensor, then the same chain."""
    cfg = cfg.validate()
    cs = cfg.compressed
    if cs.kind is None or cs.p is None:
        raise ValueError("run_limited needs compressed.kind and compressed.p")
    seed = cs.seed if seed is None else seed
    started = time.perf_counter()
    t0 = time.perf_counter()
    snap = snapshot(dataset, cfg)
    n_valid = len(dataset.valid_channels)
    pre = {}
    try:
        C = make_measurement(cs.kind, cs.p, n_valid, seed)
        if cs.rpca == "full" and cfg.rpca.enabled:
            t1 = time.perf_counter()
            rp = rpca_ialm(snap.values, rpca_config(cfg))
            pre["rpca_full"] = time.perf_counter() - t1
            snap = SnapshotMatrix(rp.low_rank, snap.row_labels, snap.dt, snap.meta)
        Y = compress(snap, C)
    except Exception as exc:  # noqa: BLE001
        raise StageError("compress", exc) from exc
    ingest_time = time.perf_counter() - t0 - sum(pre.values())
    out = analyze(Y.values, limited_chain_config(cfg, min(Y.shape)), Y.dt)
    out.timings = {"ingest": ingest_time, **pre, **out.timings}
    extra = {"windows": snap.meta.get("windows", []), "excluded_channels": dataset.excluded,
             "measurement": {"kind": C.kind, "p": C.p, "n": C.n, "seed": C.seed}}
    report = _report(dataset.test_point_id, out, cfg, seed, started, extra)
    return report, {**out.diagnostics, "chain": out, "measurement": C}


def compare_reports(a: ModeReport, b: ModeReport, freq_tol: float = 0.015) -> MatchTable:
    """Match ``b``'s modes against reference ``a``; extras in ``b`` are flagged ``unmatched``."""
    return score(b, a, freq_tol=freq_tol)


# ---------------------------------------------------------------------------
# serialization

def _num(v: float) -> float:
    return float(f"{v:.12g}")


def report_to_dict(report: ModeReport, include_timings: bool = False) -> dict:
    prov = {k: v for k, v in report.provenance.items()
            if include_timings or k not in ("timings", "runtime_seconds")}
    return {
        "schema_version": SCHEMA_VERSION,
        "test_point_id": report.test_point_id,
        "modes": [
            {"scaled_freq": _num(m.scaled_freq), "damping_ratio": _num(m.damping_ratio),
             "growth_rate": _num(m.growth_rate), "amplitude": _num(m.amplitude),
             "is_static": bool(m.is_static), "flags": list(m.flags)}
            for m in report.modes
        ],
        "provenance": _jsonable(prov),
    }


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _num(float(obj))
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def report_from_dict(d: dict) -> ModeReport:
    version = d.get("schema_version")
    if version != SCHEMA_VERSION:
        raise ValueError(f"unsupported report schema version {version!r}")
    modes = [ModeEntry(m["scaled_freq"], m["damping_ratio"], m.get("growth_rate", 0.0), m.get("amplitude", 0.0),
                       bool(m.get("is_static", False)), list(m.get("flags", []))) for m in d["modes"]]
    return ModeReport(d["test_point_id"], modes, d.get("provenance", {}))


def _csv_text(report: ModeReport) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for m in report.modes:
        w.writerow([f"{m.scaled_freq:.12g}", f"{m.damping_ratio:.12g}", f"{m.growth_rate:.12g}",
                    f"{m.amplitude:.12g}", int(m.is_static), ";".join(m.flags)])
    return out.getvalue()


def report_from_csv(text: str, test_point_id: str = "TP") -> ModeReport:
    rows = list(csv.reader(io.StringIO(text)))
    if not rows or tuple(rows[0]) != CSV_COLUMNS:
        raise ValueError("csv report header does not match the fixed column order")
    modes = [ModeEntry(float(r[0]), float(r[1]), float(r[2]), float(r[3]), r[4] == "1",
                       [f for f in r[5].split(";") if f]) for r in rows[1:] if r]
    return ModeReport(test_point_id, modes)


def _table_text(report: ModeReport) -> str:
    lines = [f"test point {report.test_point_id}: {len(report.modes)} modes",
             f"{'#':>3}  {'freq (2f dt)':>12}  {'damping':>9}  {'amplitude':>11}  flags"]
    for i, m in enumerate(report.modes, start=1):
        lines.append(f"{i:>3}  {m.scaled_freq:>12.6f}  {m.damping_ratio:>9.5f}  {m.amplitude:>11.4g}  "
                     f"{','.join(m.flags)}")
    timings = report.provenance.get("timings")
    if timings:
        lines.append("stage timings: " + ", ".join(f"{k} {v:.2f}s" for k, v in timings.items()))
    return "\n".join(lines) + "\n"


def format_report(report: ModeReport, fmt: str = "json", include_timings: bool = False) -> str:
    if fmt == "json":
        return json.dumps(report_to_dict(report, include_timings), indent=2, sort_keys=True) + "\n"
    if fmt == "csv":
        return _csv_text(report)
    if fmt == "table":
        return _table_text(report)
    raise ValueError(f"unknown report format {fmt!r}")


def emit_report(report: ModeReport, fmt: str, sink, include_timings: bool = False) -> None:
    """Write a report. JSON leaves out wall-clock fields unless asked, so it is reproducible byte for byte."""
    text = format_report(report, fmt, include_timings)
    if isinstance(sink, (str, os.PathLike)):
        try:
            with open(sink, "w") as fh:
                fh.write(text)
        except OSError as exc:
            raise OSError(f"cannot write report to {os.fspath(sink)}: {exc.strerror}") from exc
    else:
        sink.write(text)


def comparison_csv(table: MatchTable) -> str:
    out = io.StringIO()
    cols = ("true_freq", "est_freq", "true_damping", "est_damping", "freq_error_pct", "damping_error_pct", "flag")
    w = csv.writer(out, lineterminator="\n")
    w.writerow(cols)
    for row in table.as_dicts():
        w.writerow(["" if row[c] is None else (f"{row[c]:.6g}" if isinstance(row[c], float) else row[c])
                    for c in cols])
    return out.getvalue()
