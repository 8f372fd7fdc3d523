"""Command line entry point: ``dualdrive <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from collections import Counter
from pathlib import Path

from dualdrive.clients import BackendConfig
from dualdrive.decision import PolicyConfig
from dualdrive.harness.ablation import (
    ABLATIONS, accumulate_experience, fixture_bank, integrate_failures, load_suite,
    run_ablation, run_benchmark, run_routes,
)
from dualdrive.harness.metrics import (
    BenchmarkReport, ReportRow, config_fingerprint, summary_csv,
)
from dualdrive.harness.runner import AgentConfig, run_route, write_config, write_outcome
from dualdrive.memory import MemoryBank, compress_caption, embed
from dualdrive.sim.scenario import parse_scenario

log = logging.getLogger("dualdrive")


def load_backends(path):
    if not path:
        return None, None
    p = Path(path)
    data = json.loads(p.read_text()) if p.suffix == ".json" else None
    sections = {}
    for name in ("heuristic", "analytic"):
        if data is not None:
            if name in data:
                sections[name] = BackendConfig.from_dict(data[name])
        else:
            try:
                sections[name] = BackendConfig.from_file(p, name)
            except KeyError:
                pass
    return sections.get("heuristic"), sections.get("analytic")


def _agent(args, **kw) -> AgentConfig:
    heuristic, analytic = load_backends(args.backend_config)
    policy = PolicyConfig.novice() if args.policy == "novice" else PolicyConfig()
    return AgentConfig(k=args.k, policy=policy, heuristic_backend=heuristic,
                       analytic_backend=analytic, deterministic=args.mode == "deterministic",
                       write_traces=not args.no_traces, **kw)


def _seeds(args) -> list[int]:
    return list(range(args.seed, args.seed + args.seeds))


def _bank(args, required: bool = False) -> MemoryBank | None:
    if args.bank and Path(args.bank).exists():
        return MemoryBank.load(args.bank)
    if required:
        sys.exit(f"bank file {args.bank!r} not found")
    return None


def _run_dir(args, command: str, config) -> Path:
    if args.run_dir:
        return Path(args.run_dir)
    return Path("runs") / f"{command}-{config_fingerprint(config)}"


def _print_summary(report: BenchmarkReport) -> None:
    sys.stdout.write(summary_csv(report))


# -- commands --------------------------------------------------------------

def cmd_run(args) -> int:
    path = Path(args.scenario)
    if not path.exists():
        matches = [s for s in load_suite(args.scenario_dir) if s["id"] == args.scenario]
        if not matches:
            sys.exit(f"no scenario {args.scenario!r}")
        spec = matches[0]
    else:
        spec = parse_scenario(path)
    agent = _agent(args)
    bank = _bank(args)
    outcome = run_route(spec, agent, args.seed, bank)
    config = {"command": "run", "scenario": spec["id"], "seed": args.seed, "agent": agent,
              "bank_size": 0 if bank is None else len(bank)}
    run_dir = _run_dir(args, "run", config)
    write_config(run_dir, config, config_fingerprint(config))
    write_outcome(run_dir, outcome, traces=agent.write_traces)
    report = BenchmarkReport([ReportRow("run", "base", outcome.result)])
    report.write_csv(run_dir / "report.csv")
    r = outcome.result
    print(f"{r.route_id} seed={r.seed} status={r.status} RC={r.rc:.4f} IS={r.is_:.4f} "
          f"DS={r.ds:.4f} events={[e.kind for e in r.events]}")
    print(f"results in {run_dir}")
    return 0


def cmd_benchmark(args) -> int:
    specs = load_suite(args.scenario_dir)
    agent = _agent(args)
    bank = _bank(args)
    config = {"command": "benchmark", "scenarios": [s["id"] for s in specs],
              "seeds": _seeds(args), "agent": agent}
    run_dir = _run_dir(args, "benchmark", config)
    report = run_benchmark(specs, _seeds(args), agent, bank, run_dir, args.workers)
    _print_summary(report)
    print(f"results in {run_dir}")
    return 0


def _grid(kind: str, text: str | None):
    if text is None:
        return {"few_shot": [0, 1, 2, 3], "memory_size": [0, 0.1, 1.0],
                "reflection_rounds": [0, 1, 2], "memory_transfer": None}[kind]
    out = []
    for tok in text.split(","):
        tok = tok.strip()
        if kind == "memory_transfer":
            out.append(tok)
        elif "." in tok:
            out.append(float(tok))
        else:
            out.append(int(tok))
    return out


def cmd_ablate(args) -> int:
    specs = load_suite(args.scenario_dir)
    agent = _agent(args)
    seeds = _seeds(args)
    bank = _bank(args)
    if bank is None and args.kind in ("few_shot", "memory_size"):
        log.info("no bank given; building the fixture bank on the suite")
        bank = fixture_bank(specs, seeds, agent, args.workers)
    grid = _grid(args.kind, args.grid)
    if grid is None:
        grid = ["none"] + sorted({s["town"] for s in specs})
    config = {"command": "ablate", "kind": args.kind, "grid": grid,
              "scenarios": [s["id"] for s in specs], "seeds": seeds, "agent": agent,
              "target_town": args.target_town}
    run_dir = _run_dir(args, f"ablate-{args.kind}", config)
    report = run_ablation(args.kind, grid, specs, seeds, agent, bank, run_dir, args.workers,
                          target_town=args.target_town)
    _print_summary(report)
    print(f"results in {run_dir}")
    return 0


def cmd_accumulate(args) -> int:
    specs = load_suite(args.scenario_dir)
    agent = _agent(args)
    bank = accumulate_experience(specs, seeds=_seeds(args), agent=agent, workers=args.workers)
    out = Path(args.bank or "bank.jsonl")
    bank.persist(out)
    print(f"{len(bank)} samples from {len(specs)} scenarios written to {out}")
    return 0


def cmd_reflect_replay(args) -> int:
    specs = load_suite(args.scenario_dir)
    agent = _agent(args, reflection=True)
    seeds = _seeds(args)
    bank = _bank(args) or MemoryBank()
    config = {"command": "reflect-replay", "scenarios": [s["id"] for s in specs],
              "seeds": seeds, "agent": agent, "bank_size": len(bank)}
    run_dir = _run_dir(args, "reflect-replay", config)
    before = run_routes(specs, seeds, agent, bank.snapshot(), args.workers)
    added = integrate_failures(bank, before, args.threshold)
    failing = [(s, seed) for s, seed, o in before if o is not None and o.result.ds < args.threshold]
    rows = []
    for spec, seed, o in before:
        if o is not None:
            write_outcome(run_dir, o, "before", agent.write_traces)
            rows.append(ReportRow("reflect_replay", "before", o.result))
    for spec, seed in failing:
        o = run_route(spec, agent, seed, bank)
        write_outcome(run_dir, o, "after", agent.write_traces)
        rows.append(ReportRow("reflect_replay", "after", o.result))
    report = BenchmarkReport(rows, config_fingerprint(config))
    write_config(run_dir, config, report.fingerprint)
    report.write_csv(run_dir / "report.csv")
    report.write_summary_csv(run_dir / "summary.csv")
    if args.bank:
        bank.persist(args.bank)
    print(f"{len(failing)} failing routes, {added} corrected samples integrated")
    _print_summary(report)
    print(f"results in {run_dir}")
    return 0


def cmd_memory_inspect(args) -> int:
    bank = _bank(args, required=True)
    print(f"bank: {args.bank}")
    print(f"encoder: {bank.encoder_id} (dim {bank.dim})")
    print(f"samples: {len(bank)}")
    for name, counter in (("provenance", Counter(s.provenance for s in bank.samples)),
                          ("decision", Counter(s.decision.value for s in bank.samples)),
                          ("source", Counter(s.source.split(":")[0] for s in bank.samples))):
        print(f"{name}: " + ", ".join(f"{k}={v}" for k, v in sorted(counter.items())))
    if args.query is not None:
        hits = bank.query(embed(args.query, bank.encoder), args.top)
        for h in hits:
            s = h.sample
            print(f"#{h.index} sim={h.score:.4f} {s.decision.value:<4} v={s.description.ego_speed:.2f} "
                  f"{compress_caption(s.description)}")
    elif args.show:
        for i, s in enumerate(bank.samples[:args.show]):
            print(f"#{i} {s.provenance:<10} {s.decision.value:<4} {compress_caption(s.description)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    g = common.add_argument_group("global options")
    g.add_argument("--scenario-dir", help="directory of scenario TOML files (default: bundled suite)")
    g.add_argument("--bank", help="memory bank file (JSONL)")
    g.add_argument("--backend-config", help="TOML/JSON with [heuristic] and/or [analytic] backends")
    g.add_argument("--seed", type=int, default=0, help="first seed")
    g.add_argument("--seeds", type=int, default=3, help="number of consecutive seeds")
    g.add_argument("--mode", choices=("deterministic", "wall-clock"), default="deterministic")
    g.add_argument("--run-dir", help="output directory (default: runs/<command>-<fingerprint>)")
    g.add_argument("--workers", type=int, default=1)
    g.add_argument("--k", type=int, default=3, help="few-shot exemplars per decision")
    g.add_argument("--policy", choices=("default", "novice"), default="default",
                   help="built-in heuristic policy profile")
    g.add_argument("--no-traces", action="store_true", help="skip per-tick control traces")
    g.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="dualdrive", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("run", parents=[common], help="drive one scenario")
    s.add_argument("scenario", help="scenario id from the suite or a TOML path")
    s.set_defaults(func=cmd_run)

    s = sub.add_parser("benchmark", parents=[common], help="all scenarios x seeds")
    s.set_defaults(func=cmd_benchmark)

    s = sub.add_parser("ablate", parents=[common], help="run an ablation sweep")
    s.add_argument("kind", choices=ABLATIONS)
    s.add_argument("--grid", help="comma-separated cell values")
    s.add_argument("--target-town", help="memory_transfer: town whose routes are driven")
    s.set_defaults(func=cmd_ablate)

    s = sub.add_parser("accumulate", parents=[common], help="collect analytic experience into --bank")
    s.set_defaults(func=cmd_accumulate)

    s = sub.add_parser("reflect-replay", parents=[common],
                       help="reflect on failing routes, update the bank, rerun them")
    s.add_argument("--threshold", type=float, default=0.5, help="DS below which a route is replayed")
    s.set_defaults(func=cmd_reflect_replay)

    s = sub.add_parser("memory", help="memory bank utilities")
    msub = s.add_subparsers(dest="memory_command", required=True)
    m = msub.add_parser("inspect", parents=[common], help="summarise a bank")
    m.add_argument("--query", help="caption to retrieve against, e.g. 'vehicle|ego_lane|5-10m|toward'")
    m.add_argument("--top", type=int, default=5)
    m.add_argument("--show", type=int, default=0, help="list the first N samples")
    m.set_defaults(func=cmd_memory_inspect)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
