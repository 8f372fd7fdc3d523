"""Route runner, metrics, ablations and the command line interface."""

from dualdrive.harness.ablation import (
    ABLATIONS, accumulate_experience, fixture_bank, load_suite, reflection_bank, run_ablation,
    run_benchmark,
)
from dualdrive.harness.metrics import (
    DEFAULT_PENALTIES, BenchmarkReport, RouteResult, compute_is, config_fingerprint,
)
from dualdrive.harness.runner import AgentConfig, RouteOutcome, run_route
