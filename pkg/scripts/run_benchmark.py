"""Benchmark the built-in agent on the bundled suite and print per-route scores.

    python scripts/run_benchmark.py --seeds 3 --out runs/bench
    python scripts/run_benchmark.py --policy novice --bank runs/bank.jsonl

Runs offline unless --backend-config points at a chat-completion endpoint.
"""

import argparse
import logging
import sys
import time
from pathlib import Path

from dualdrive.decision import PolicyConfig
from dualdrive.harness import AgentConfig, load_suite, run_benchmark
from dualdrive.harness.cli import load_backends
from dualdrive.memory import MemoryBank


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--policy", choices=("default", "novice"), default="default")
    p.add_argument("--k", type=int, default=3)
    p.add_argument("--bank", help="memory bank JSONL used for few-shot retrieval")
    p.add_argument("--backend-config", help="TOML/JSON with [heuristic] and/or [analytic] sections")
    p.add_argument("--no-reflection", action="store_true")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="runs/benchmark")
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")

    heuristic, analytic = load_backends(args.backend_config)
    agent = AgentConfig(
        k=args.k,
        policy=PolicyConfig.novice() if args.policy == "novice" else PolicyConfig(),
        heuristic_backend=heuristic, analytic_backend=analytic,
        reflection=not args.no_reflection,
    )
    bank = MemoryBank.load(args.bank) if args.bank else None
    suite = load_suite()

    t0 = time.perf_counter()
    report = run_benchmark(suite, range(args.seeds), agent, bank, run_dir=args.out, workers=args.workers)
    wall = time.perf_counter() - t0

    print(f"{'route':<14}{'seed':>5}{'RC':>8}{'IS':>8}{'DS':>8}  events")
    for r in report.results():
        events = ",".join(e.kind for e in r.events) or "-"
        print(f"{r.route_id:<14}{r.seed:>5}{r.rc:>8.3f}{r.is_:>8.3f}{r.ds:>8.3f}  {events}")
    agg = report.aggregate()
    print(f"\nmean DS {agg['ds_mean']:.3f} +/- {agg['ds_std']:.3f} over {len(report.rows)} routes "
          f"({wall:.1f} s); reports in {Path(args.out).resolve()}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
