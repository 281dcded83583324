"""Run the phase-transition experiment from a JSON config and print the rate table."""
import argparse
import time

from bmsdp.harness.experiments import ExperimentConfig, run_phase_transition


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("config", help="experiment JSON, e.g. configs/desk_phase_transition.json")
    ap.add_argument("--out", default="results/phase_transition.csv")
    ap.add_argument("--workers", type=int, default=None)
    ap.add_argument("--trials", type=int, default=None)
    args = ap.parse_args()

    cfg = ExperimentConfig.from_json(args.config)
    cfg.out = args.out
    if args.workers is not None:
        cfg.workers = args.workers
    if args.trials is not None:
        cfg.trials = args.trials
    t0 = time.perf_counter()
    res = run_phase_transition(cfg)
    print(res.to_csv(), end="")
    print(f"# {time.perf_counter() - t0:.1f} s, written to {args.out}")


if __name__ == "__main__":
    main()
