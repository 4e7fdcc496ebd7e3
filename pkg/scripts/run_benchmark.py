"""Run the multi-seed synthetic benchmark and print per-seed WIS improvements.

Usage: python3 scripts/run_benchmark.py [--seeds 0 1 2 3 4] [--out bench.json]
"""

import argparse
import json
import logging
import time
from dataclasses import replace

from vasorl.benchmark import BenchmarkConfig, ordering_summary, run_benchmark


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seeds", type=int, nargs="+", default=list(BenchmarkConfig.seeds))
    ap.add_argument("--epochs", type=int, default=BenchmarkConfig.epochs)
    ap.add_argument("--n-train", type=int, default=BenchmarkConfig.n_train)
    ap.add_argument("--n-test", type=int, default=BenchmarkConfig.n_test)
    ap.add_argument("--out", help="write per-seed results as JSON")
    ap.add_argument("-v", "--verbose", action="store_true")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    cfg = replace(BenchmarkConfig(), seeds=tuple(args.seeds), epochs=args.epochs, n_train=args.n_train,
                  n_test=args.n_test)
    t0 = time.perf_counter()
    results = run_benchmark(cfg)
    total = time.perf_counter() - t0
    rows = []
    for r in results:
        imp = {name: rep.improvement for name, rep in r.reports.items()}
        rows.append({"seed": r.seed, "seconds": r.seconds, "improvement": imp})
        print(f"seed {r.seed}: " + "  ".join(f"{k}={v:+.3f}" for k, v in imp.items()) + f"  ({r.seconds:.0f}s)")
    summary = ordering_summary(results)
    print(f"BD > Mixed in {summary['bd_over_mixed']}/{summary['n_seeds']} seeds; "
          f"LSTM >= BD in {summary['lstm_over_bd']}/{summary['n_seeds']} seeds; total {total:.0f}s")
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump({"seeds": rows, "summary": summary, "seconds": total}, fh, indent=2, sort_keys=True)


if __name__ == "__main__":
    main()
