from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

try:
    from hypothesis import settings

    settings.register_profile("suite", deadline=None, max_examples=60)
    settings.load_profile("suite")
except ImportError:
    pass

from tugpricer.cli import main as cli_main


@pytest.fixture(scope="session")
def run_cli():
    """Invoke the CLI in-process; returns (exit_code, out_dir)."""

    def runner(command: str, config: dict, out_dir: Path, *extra: str) -> int:
        out_dir.mkdir(parents=True, exist_ok=True)
        cfg_path = out_dir / "config.json"
        cfg_path.write_text(json.dumps(config, indent=2))
        argv = [command, "--config", str(cfg_path), "--out", str(out_dir), *extra]
        return cli_main(argv)

    return runner


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(20240811)
