"""Run the smoothing experiment from a JSON config and print the rate table."""
import argparse
import time

from bmsdp.harness.experiments import ExperimentConfig, run_smoothing_experiment


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("config", help="experiment JSON, e.g. configs/desk_smoothing.json")
    ap.add_argument("--out", default="results/smoothing.csv")
    ap.add_argument("--base", default=None, help="instance JSON to perturb (skips selection)")
    ap.add_argument("--workers", type=int, default=None)
    args = ap.parse_args()

    cfg = ExperimentConfig.from_json(args.config)
    cfg.out = args.out
    if args.base:
        cfg.base_instance = args.base
    if args.workers is not None:
        cfg.workers = args.workers
    t0 = time.perf_counter()
    res = run_smoothing_experiment(cfg)
    print(res.to_csv(), end="")
    print(f"# selected candidate {res.meta.get('selected_candidate')}, "
          f"{time.perf_counter() - t0:.1f} s, written to {args.out}")


if __name__ == "__main__":
    main()
