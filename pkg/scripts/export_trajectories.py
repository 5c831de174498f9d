"""Dump one seed's filter, Kalman-Bucy and limit trajectories to CSV for plotting."""
import argparse
from pathlib import Path

from esrf_limit.filters import EsrfVariant, run_filter
from esrf_limit.harness import SweepConfig, initial_ensemble
from esrf_limit.kalman import integrate_kalman_bucy
from esrf_limit.limit import integrate_limit
from esrf_limit.model import simulate_reference
from esrf_limit.presets import DEFAULT_H, MODELS


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--model", choices=list(MODELS), default="scalar")
    ap.add_argument("--variant", default="eakf")
    ap.add_argument("--h", type=float, default=2.0 ** -6)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default="trajectories")
    args = ap.parse_args()

    model = MODELS[args.model]()
    cfg = SweepConfig(model, (EsrfVariant(args.variant),), DEFAULT_H, num_seeds=1, error_kinds=("ensemble",))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    path = simulate_reference(model, cfg.fine_grid, args.seed, (args.h,))
    init = initial_ensemble(cfg, args.seed)
    tr = run_filter(EsrfVariant(args.variant), model, path, args.h, init, rng=args.seed)
    tr.write_diagnostics_csv(out / f"{args.variant}_diagnostics.csv")
    integrate_limit(model, path, init).write_snapshots_csv(out / "limit_snapshots.csv", args.h)
    if model.is_linear:
        kb = integrate_kalman_bucy(model, path, init.mean, init.covariance)
        kb.to_csv(out / "kalman_bucy.csv", every=path.fine_grid.refinement_of(args.h))
    print(f"wrote {sorted(p.name for p in out.iterdir())}")


if __name__ == "__main__":
    main()
