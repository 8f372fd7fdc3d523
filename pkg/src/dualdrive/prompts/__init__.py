"""Prompt templates shipped as editable text assets.

Templates use ``$name`` placeholders.  The fragments ``task_definition``,
``meta_actions``, ``traffic_rules`` and ``output_format`` are themselves
assets and can be overridden per call or by pointing ``prompt_dir`` at a
directory holding replacement files.
"""

from __future__ import annotations

from importlib import resources
from pathlib import Path
from string import Template

FRAGMENTS = ("task_definition", "meta_actions", "traffic_rules", "output_format")


def load_asset(name: str, prompt_dir: str | Path | None = None) -> str:
    if prompt_dir is not None:
        candidate = Path(prompt_dir) / f"{name}.txt"
        if candidate.exists():
            return candidate.read_text().strip()
    return resources.files(__name__).joinpath(f"{name}.txt").read_text().strip()


def render_prompt(name: str, prompt_dir: str | Path | None = None, **overrides: str) -> str:
    values = {f: load_asset(f, prompt_dir) for f in FRAGMENTS}
    values.update(overrides)
    return Template(load_asset(name, prompt_dir)).substitute(values)
