"""Few-shot and memory-size sweeps with the novice policy on the bundled suite.

Builds the fixture bank (analytic experience plus one reflection round),
then sweeps k in {0,1,2,3} and bank size in {0, 10%, 100%}.  Each sweep
writes report.csv / summary.csv under --out/<kind>/ and a table to stdout.

    python scripts/run_ablations.py --out runs/ablations
    python scripts/run_ablations.py --only few_shot --seeds 5
"""

import argparse
import logging
import sys
import time
from pathlib import Path

from dualdrive.decision import PolicyConfig
from dualdrive.harness import AgentConfig, fixture_bank, load_suite, run_ablation

SWEEPS = {
    "few_shot": [0, 1, 2, 3],
    "memory_size": [0, 0.1, 1.0],
    "reflection_rounds": [0, 1, 2],
}


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--policy", choices=("default", "novice"), default="novice")
    p.add_argument("--only", choices=sorted(SWEEPS), action="append",
                   help="run just this sweep (repeatable); default few_shot and memory_size")
    p.add_argument("--bank-out", help="also save the fixture bank here")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", default="runs/ablations")
    args = p.parse_args(argv)
    logging.basicConfig(level=logging.WARNING)

    policy = PolicyConfig.novice() if args.policy == "novice" else PolicyConfig()
    agent = AgentConfig(policy=policy, write_traces=False)
    suite, seeds = load_suite(), range(args.seeds)
    kinds = args.only or ["few_shot", "memory_size"]

    t0 = time.perf_counter()
    bank = fixture_bank(suite, seeds, agent, workers=args.workers)
    print(f"fixture bank: {len(bank)} samples ({time.perf_counter() - t0:.1f} s)")
    if args.bank_out:
        bank.persist(args.bank_out)

    for kind in kinds:
        t0 = time.perf_counter()
        report = run_ablation(kind, SWEEPS[kind], suite, seeds, agent, bank,
                              run_dir=Path(args.out) / kind, workers=args.workers)
        print(f"\n{kind} ({time.perf_counter() - t0:.1f} s)")
        print(f"  {'cell':<10}{'DS':>8}{'+/-':>8}{'RC':>8}{'IS':>8}")
        for _, cell in report.cells():
            a = report.aggregate(cell)
            print(f"  {cell:<10}{a['ds_mean']:>8.3f}{a['ds_std']:>8.3f}{a['rc_mean']:>8.3f}{a['is_mean']:>8.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
