"""Run the preset convergence sweeps and write one report directory per sweep.

    python scripts/run_sweeps.py --out results --seeds 50 --parallel 4
"""
import argparse
import dataclasses
import time

from esrf_limit.harness import emit_report, run_sweep
from esrf_limit.presets import covariance_sweep, limit_sweep, nonlinear_sweep, oscillator_model, \
    oscillator_sweep, scalar_model

SWEEPS = {
    "cov-scalar": lambda: covariance_sweep(scalar_model()),
    "cov-oscillator": lambda: covariance_sweep(oscillator_model()),
    "scalar-limit": limit_sweep,
    "oscillator": oscillator_sweep,
    "tanh-limit": nonlinear_sweep,
}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", default="results")
    ap.add_argument("--seeds", type=int, default=None, help="override the preset seed count")
    ap.add_argument("--parallel", type=int, default=1)
    ap.add_argument("--only", nargs="*", choices=list(SWEEPS), default=list(SWEEPS))
    args = ap.parse_args()
    for name in args.only:
        cfg = SWEEPS[name]()
        if args.seeds is not None:
            cfg = dataclasses.replace(cfg, num_seeds=args.seeds)
        t0 = time.perf_counter()
        rep = run_sweep(cfg, parallel=args.parallel)
        print(f"== {name} ({time.perf_counter() - t0:.0f}s)")
        for line in rep.summary_lines():
            print(line)
        emit_report(rep, f"{args.out}/{name}")


if __name__ == "__main__":
    main()
