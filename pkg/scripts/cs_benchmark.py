"""Limited-sensor pipeline on the standard benchmark for each measurement kind and sensor count.

    python3 scripts/cs_benchmark.py --seeds 0 1 --p 20 10 5 --kinds gaussian single_pixel
"""

import argparse
import copy
import time

from aeromodal.config import PipelineConfig, apply_overrides, canonical_kind, load_config
from aeromodal.pipeline import run_limited
from aeromodal.synth_bench import generate, score, standard_benchmark


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    ap.add_argument("--p", type=int, nargs="+", default=[20, 15, 10, 5])
    ap.add_argument("--kinds", nargs="+", default=["gaussian_random", "uniform_random", "single_pixel"])
    ap.add_argument("--config", help="pipeline config file (section.key = value)")
    args = ap.parse_args()

    base = load_config(args.config) if args.config else PipelineConfig()
    print("seed,kind,p,matched,spurious,max_freq_err_pct,max_damp_err_pct,seconds")
    for seed in args.seeds:
        dataset, truth = generate(standard_benchmark(seed))
        for kind in map(canonical_kind, args.kinds):
            for p in args.p:
                cfg = apply_overrides(copy.deepcopy(base), [("compressed.kind", kind), ("compressed.p", str(p)),
                                                      ("compressed.seed", str(seed))])
                t0 = time.perf_counter()
                report, _ = run_limited(dataset, cfg)
                secs = time.perf_counter() - t0
                table = score(report, truth)
                fe = max((r.freq_error_pct for r in table.matched), default=float("nan"))
                de = max((r.damping_error_pct for r in table.matched), default=float("nan"))
                print(f"{seed},{kind},{p},{len(table.matched)},{len(table.spurious)},{fe:.3f},{de:.2f},{secs:.1f}",
                      flush=True)


if __name__ == "__main__":
    main()
