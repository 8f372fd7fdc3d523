"""Benchmarks, experience accumulation and ablation sweeps."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from importlib import resources
from pathlib import Path

from dualdrive.harness.metrics import (
    BenchmarkReport, ReportRow, config_fingerprint, failed_result,
)
from dualdrive.harness.runner import AgentConfig, RouteOutcome, run_route, write_config, write_outcome
from dualdrive.memory import MemoryBank
from dualdrive.reflection import integrate
from dualdrive.sim.scenario import parse_scenario

log = logging.getLogger(__name__)

ABLATIONS = ("few_shot", "memory_size", "reflection_rounds", "memory_transfer")
REPLAY_THRESHOLD = 0.5


def bundled_scenario_dir() -> Path:
    return Path(str(resources.files("dualdrive").joinpath("scenarios")))


def load_suite(scenario_dir=None, towns=None) -> list[dict]:
    """Parsed scenarios from a directory, ordered by id."""
    root = Path(scenario_dir) if scenario_dir else bundled_scenario_dir()
    specs = [parse_scenario(p) for p in sorted(root.glob("*.toml"))]
    if towns is not None:
        specs = [s for s in specs if s["town"] in set(towns)]
    return sorted(specs, key=lambda s: s["id"])


def _run_one(job) -> RouteOutcome | None:
    spec, seed, agent, bank = job
    try:
        return run_route(spec, agent, seed, bank)
    except Exception:   # a broken cell must not take the sweep down
        log.exception("route %s seed %d failed", spec.get("id"), seed)
        return None


def run_routes(specs, seeds, agent: AgentConfig, bank: MemoryBank | None = None,
               workers: int = 1) -> list[tuple[dict, int, RouteOutcome | None]]:
    jobs = [(spec, seed, agent, bank) for spec in specs for seed in seeds]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_run_one, jobs))
    else:
        outcomes = [_run_one(j) for j in jobs]
    return [(j[0], j[1], o) for j, o in zip(jobs, outcomes)]


def _rows(experiment: str, cell: str, runs, run_dir: Path | None, traces: bool) -> list[ReportRow]:
    rows = []
    for spec, seed, outcome in runs:
        if outcome is None:
            rows.append(ReportRow(experiment, cell, failed_result(spec["id"], seed, spec["town"])))
            continue
        if run_dir is not None:
            write_outcome(run_dir, outcome, cell, traces)
        rows.append(ReportRow(experiment, cell, outcome.result))
    return rows


def _finish(report: BenchmarkReport, run_dir: Path | None, config: dict) -> BenchmarkReport:
    report.fingerprint = config_fingerprint(config)
    if run_dir is not None:
        write_config(run_dir, config, report.fingerprint)
        report.write_csv(run_dir / "report.csv")
        report.write_summary_csv(run_dir / "summary.csv")
    return report


def _config(experiment, specs, seeds, agent, bank, **extra) -> dict:
    return {"experiment": experiment, "scenarios": [s["id"] for s in specs],
            "seeds": list(seeds), "agent": agent,
            "bank_size": 0 if bank is None else len(bank), **extra}


def run_benchmark(specs, seeds=(0, 1, 2), agent: AgentConfig | None = None,
                  bank: MemoryBank | None = None, run_dir=None, workers: int = 1,
                  experiment: str = "benchmark", cell: str = "base") -> BenchmarkReport:
    agent = agent or AgentConfig()
    run_dir = Path(run_dir) if run_dir else None
    runs = run_routes(specs, seeds, agent, bank, workers)
    report = BenchmarkReport(_rows(experiment, cell, runs, run_dir, agent.write_traces))
    return _finish(report, run_dir, _config(experiment, specs, seeds, agent, bank))


def accumulate_experience(specs, analytic_backend=None, seeds=(0,), agent: AgentConfig | None = None,
                          min_ds: float = REPLAY_THRESHOLD, bank: MemoryBank | None = None,
                          workers: int = 1) -> MemoryBank:
    """Drive in analytic mode and keep every 1 Hz (D, R, S) from routes scoring at least ``min_ds``."""
    agent = agent or AgentConfig()
    agent = agent.with_(mode="analytic", reflection=False,
                        analytic_backend=analytic_backend or agent.analytic_backend)
    bank = bank if bank is not None else MemoryBank(dedup=False)
    for spec, seed, outcome in run_routes(specs, seeds, agent, None, workers):
        if outcome is None:
            continue
        if outcome.result.ds < min_ds:
            log.info("withholding %d samples from %s seed %d (DS %.3f)", len(outcome.samples),
                     spec["id"], seed, outcome.result.ds)
            continue
        for s in outcome.samples:
            bank.insert(s)
    return bank


def integrate_failures(bank: MemoryBank, runs, threshold: float = REPLAY_THRESHOLD) -> int:
    """Fold reflections from routes scoring below ``threshold`` into ``bank``, in run order."""
    added = 0
    for _, _, outcome in runs:
        if outcome is None or outcome.result.ds >= threshold:
            continue
        for refl in outcome.reflections:
            added += integrate(bank, refl)
    return added


def reflection_bank(specs, seeds, agent: AgentConfig, bank: MemoryBank | None = None,
                    workers: int = 1) -> MemoryBank:
    """One reflection round: run, then integrate corrections from failing routes."""
    bank = bank.snapshot() if bank is not None else MemoryBank()
    runs = run_routes(specs, seeds, agent.with_(reflection=True), bank, workers)
    integrate_failures(bank, runs)
    return bank


def fixture_bank(specs, seeds=(0, 1, 2), agent: AgentConfig | None = None,
                 workers: int = 1) -> MemoryBank:
    """Analytic experience on the suite plus one round of reflection corrections."""
    agent = agent or AgentConfig()
    bank = accumulate_experience(specs, seeds=seeds, agent=agent, workers=workers)
    return reflection_bank(specs, seeds, agent, bank, workers)


def _sizes(grid, m: int) -> list[int]:
    out = []
    for g in grid:
        if isinstance(g, float) and 0.0 <= g <= 1.0:
            out.append(int(round(g * m)))
        else:
            out.append(min(int(g), m))
    return out


def run_ablation(kind: str, grid, specs, seeds=(0, 1, 2), agent: AgentConfig | None = None,
                 bank: MemoryBank | None = None, run_dir=None, workers: int = 1,
                 target_town: str | None = None, source_specs=None) -> BenchmarkReport:
    """Sweep one factor; one report row per (cell, route, seed).

    ``few_shot``: grid of k values.  ``memory_size``: bank sizes, either
    counts or fractions of the bank, built by even subsampling.
    ``reflection_rounds``: round indices; every round reruns all routes
    after folding in the reflections of routes that scored below 0.5.
    ``memory_transfer``: source towns (or ``"none"``); each cell drives the
    ``target_town`` routes with experience accumulated on the source town.
    """
    if kind not in ABLATIONS:
        raise ValueError(f"unknown ablation {kind!r}; expected one of {ABLATIONS}")
    grid = list(grid)
    if not grid:
        raise ValueError("ablation grid must not be empty")
    agent = agent or AgentConfig()
    run_dir = Path(run_dir) if run_dir else None
    rows: list[ReportRow] = []
    extra = {"kind": kind, "grid": grid}

    def cell(name, cell_specs, cell_agent, cell_bank):
        runs = run_routes(cell_specs, seeds, cell_agent, cell_bank, workers)
        rows.extend(_rows(kind, name, runs, run_dir, cell_agent.write_traces))
        return runs

    if kind == "few_shot":
        for k in grid:
            cell(f"k={int(k)}", specs, agent.with_(k=int(k)), bank)
    elif kind == "memory_size":
        full = bank if bank is not None else MemoryBank()
        for n in _sizes(grid, len(full)):
            cell(f"m={n}", specs, agent, full.subsample(n))
    elif kind == "reflection_rounds":
        work = bank.snapshot() if bank is not None else MemoryBank()
        last = max(int(g) for g in grid)
        for r in range(last + 1):
            runs = run_routes(specs, seeds, agent.with_(reflection=True), work.snapshot(), workers)
            if r in {int(g) for g in grid}:
                rows.extend(_rows(kind, f"round={r}", runs, run_dir, agent.write_traces))
            if r < last:
                integrate_failures(work, runs)
    else:
        sources = source_specs if source_specs is not None else specs
        towns = sorted({s["town"] for s in specs})
        target = target_town or towns[0]
        targets = [s for s in specs if s["town"] == target]
        extra["target_town"] = target
        for src in grid:
            if src == "none":
                src_bank = None
            else:
                src_bank = accumulate_experience([s for s in sources if s["town"] == src],
                                                 seeds=seeds, agent=agent, workers=workers)
            cell(f"bank={src}", targets, agent, src_bank)

    report = BenchmarkReport(rows)
    return _finish(report, run_dir, _config(kind, specs, seeds, agent, bank, **extra))
