"""Command line entry point: ``aeromodal run|synth|sweep-d|compare``.

Exit codes: 0 success, 2 parse error, 3 numerical failure, 4 non-convergence
(partial output is still written).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np

from . import pipeline
from .chain import StageError, dmd_config
from .config import PipelineConfig, apply_overrides, dump_config, load_config
from .dmd_engine import sweep_delay
from .mode_select import CalibrationError
from .signal_ingest import DetectionError, ParseError, load_channels, save_channels
from .synth_bench import BenchmarkSpec, ModeSpec, generate, standard_benchmark, truth_json

EXIT_OK, EXIT_PARSE, EXIT_NUMERIC, EXIT_NONCONVERGED = 0, 2, 3, 4
log = logging.getLogger("aeromodal")


def _fmt_for(path: str) -> str:
    return "channels-bin" if path.endswith(".bin") else "channels-csv"


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _write_diagnostics(out_dir: str, diag: dict) -> None:
    if "singular_values" in diag:
        _write_csv(os.path.join(out_dir, "singular_values.csv"), ["index", "sigma"],
                   [(i + 1, f"{v:.12g}") for i, v in enumerate(diag["singular_values"])])
    if "gamma_curve" in diag:
        g = diag["gamma_curve"]
        _write_csv(os.path.join(out_dir, "gamma_curve.csv"), ["gamma", "cardinality", "loss_percent"],
                   [(f"{a:.12g}", c, f"{l:.12g}") for a, c, l in zip(g["gamma"], g["cardinality"], g["loss_percent"])])
    if "reconstruction_history" in diag:
        _write_csv(os.path.join(out_dir, "reconstruction_history.csv"), ["iteration", "rel_rms"],
                   [(i + 1, f"{v:.12g}") for i, v in enumerate(diag["reconstruction_history"])])
    if "delay_curve" in diag:
        _write_csv(os.path.join(out_dir, "delay_curve.csv"), ["d", "rel_rms"],
                   [(d, f"{e:.12g}") for d, e in diag["delay_curve"]])


def cmd_run(args) -> int:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    overrides = list(args.set or [])
    if args.limited:
        overrides += [("compressed.kind", args.kind), ("compressed.p", str(args.p)),
                      ("compressed.seed", str(args.seed))]
    try:
        apply_overrides(cfg, [tuple(o.split("=", 1)) if isinstance(o, str) else o for o in overrides])
        cfg.validate()
    except (KeyError, ValueError) as exc:
        raise ParseError(str(exc)) from exc
    dataset = load_channels(args.input, _fmt_for(args.input))
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "config.txt"), "w") as fh:
        fh.write(dump_config(cfg))

    try:
        if args.limited:
            report, diag = pipeline.run_limited(dataset, cfg, args.seed)
        else:
            report, diag = pipeline.run_full(dataset, cfg, args.seed)
    except StageError as exc:
        _write_diagnostics(args.out, exc.diagnostics)
        with open(os.path.join(args.out, "error.txt"), "w") as fh:
            fh.write(str(exc) + "\n")
        print(f"aeromodal: {exc}", file=sys.stderr)
        if isinstance(exc.cause, CalibrationError):
            return EXIT_NONCONVERGED
        return EXIT_NUMERIC

    ext = {"json": "json", "csv": "csv", "table": "txt"}[args.format]
    pipeline.emit_report(report, args.format, os.path.join(args.out, f"report.{ext}"))
    with open(os.path.join(args.out, "timings.json"), "w") as fh:
        json.dump({"runtime_seconds": report.provenance["runtime_seconds"],
                   "stages": report.provenance["timings"]}, fh, indent=2)
    _write_diagnostics(args.out, diag)
    sys.stdout.write(pipeline.format_report(report, "table"))

    rp = diag.get("rpca")
    if rp is not None and not rp["converged"]:
        print("aeromodal: RPCA hit its iteration cap; report written from the last iterate", file=sys.stderr)
        return EXIT_NONCONVERGED
    return EXIT_OK


def _read_synth_spec(path: str) -> BenchmarkSpec:
    """Flat ``key = value`` file; ``freqs``/``damping`` are comma lists, absent means the standard ten modes."""
    values = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ParseError("expected 'key = value'", line=lineno)
            k, v = (s.strip() for s in line.split("=", 1))
            values[k] = (v, lineno)
    kw = {}
    casts = {"seed": int, "n_channels": int, "n_maneuvers": int, "samples_per_maneuver": int, "gap": int,
             "n_defective": int, "noise_snr_db": float, "outlier_fraction": float, "outlier_scale": float,
             "dt": float, "amplitude_jitter": float, "test_point_id": str,
             "partial_maneuver": lambda s: s.lower() in ("1", "true", "yes")}
    freqs = damping = None
    for k, (v, lineno) in values.items():
        try:
            if k == "freqs":
                freqs = [float(x) for x in v.split(",")]
            elif k == "damping":
                damping = [float(x) for x in v.split(",")]
            elif k in casts:
                kw[k] = casts[k](v)
            else:
                raise ValueError(f"unknown key {k!r}")
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno) from exc
    try:
        if freqs is None and damping is None:
            return standard_benchmark(**kw)
        if freqs is None or damping is None or len(freqs) != len(damping):
            raise ParseError("freqs and damping must be given together with equal lengths")
        return BenchmarkSpec([ModeSpec(f, z) for f, z in zip(freqs, damping)], **kw)
    except (TypeError, ValueError) as exc:
        raise ParseError(str(exc)) from exc


def cmd_synth(args) -> int:
    spec = _read_synth_spec(args.spec)
    dataset, truth = generate(spec)
    os.makedirs(args.out, exist_ok=True)
    fmt = "channels-bin" if args.binary else "channels-csv"
    name = "channels.bin" if args.binary else "channels.csv"
    save_channels(dataset, os.path.join(args.out, name), fmt)
    with open(os.path.join(args.out, "truth.json"), "w") as fh:
        fh.write(truth_json(truth))
    print(f"wrote {os.path.join(args.out, name)} ({len(dataset.channels)} channels x {dataset.n_samples} samples)")
    return EXIT_OK


def cmd_sweep_d(args) -> int:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    try:
        candidates = [int(c) for c in args.candidates.split(",") if c.strip()]
    except ValueError as exc:
        raise ParseError(f"bad candidate list: {exc}") from exc
    dataset = load_channels(args.input, _fmt_for(args.input))
    snap = pipeline.snapshot(dataset, cfg)
    X = snap.values
    data = X
    if cfg.rpca.enabled:
        from .chain import rpca_config
        from .rpca import rpca_ialm

        data = rpca_ialm(X, rpca_config(cfg)).low_rank
    curve, best = sweep_delay(data, candidates, dmd_config(cfg), snap.dt, reference=X)
    print("d,rel_rms")
    for d, e in curve:
        print(f"{d},{e:.6g}")
    print(f"recommended d = {best}")
    if args.out:
        os.makedirs(args.out, exist_ok=True)
        _write_csv(os.path.join(args.out, "delay_curve.csv"), ["d", "rel_rms"], [(d, f"{e:.12g}") for d, e in curve])
    return EXIT_OK


def _load_report(path: str):
    with open(path) as fh:
        text = fh.read()
    try:
        if path.endswith(".csv"):
            return pipeline.report_from_csv(text, os.path.splitext(os.path.basename(path))[0])
        return pipeline.report_from_dict(json.loads(text))
    except (ValueError, KeyError, IndexError) as exc:
        raise ParseError(f"{path}: {exc}") from exc


def cmd_compare(args) -> int:
    a, b = _load_report(args.a), _load_report(args.b)
    table = pipeline.compare_reports(a, b, args.freq_tol)
    text = pipeline.comparison_csv(table)
    sys.stdout.write(text)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="aeromodal", description="Modal identification from multi-maneuver records.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="identify modes in a channel file")
    run.add_argument("--input", required=True)
    run.add_argument("--config")
    run.add_argument("--out", required=True)
    run.add_argument("--format", choices=("json", "csv", "table"), default="json")
    run.add_argument("--limited", action="store_true", help="compress to p measurements first")
    run.add_argument("--kind", default="gaussian")
    run.add_argument("--p", type=int, default=5)
    run.add_argument("--seed", type=int, default=0)
    run.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE", help="override a config entry")
    run.set_defaults(func=cmd_run)

    synth = sub.add_parser("synth", help="write a synthetic benchmark record and its truth table")
    synth.add_argument("--spec", required=True)
    synth.add_argument("--out", required=True)
    synth.add_argument("--binary", action="store_true")
    synth.set_defaults(func=cmd_synth)

    sw = sub.add_parser("sweep-d", help="reconstruction error against delay order")
    sw.add_argument("--input", required=True)
    sw.add_argument("--candidates", default="50,100,200,300,400")
    sw.add_argument("--config")
    sw.add_argument("--out")
    sw.set_defaults(func=cmd_sweep_d)

    cmp_ = sub.add_parser("compare", help="match two reports mode by mode")
    cmp_.add_argument("--a", required=True, help="reference report")
    cmp_.add_argument("--b", required=True)
    cmp_.add_argument("--freq-tol", type=float, default=0.015)
    cmp_.add_argument("--out")
    cmp_.set_defaults(func=cmd_compare)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"aeromodal: parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (OSError, FileNotFoundError) as exc:
        print(f"aeromodal: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except StageError as exc:
        print(f"aeromodal: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED if isinstance(exc.cause, CalibrationError) else EXIT_NUMERIC
    except (DetectionError, FloatingPointError, np.linalg.LinAlgError, ValueError) as exc:
        print(f"aeromodal: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
