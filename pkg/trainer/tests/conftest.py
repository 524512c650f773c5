import json
import subprocess
import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))


def generate_scenes(directory, count: int, base_seed: int,
                    duration_s: float = 1.0, num_taps: int = 96) -> None:
    """Produce a scene corpus through the inference package's CLI."""
    config = {
        "output_dir": str(directory),
        "scenes": {"count": count, "base_seed": base_seed,
                   "duration_s": duration_s, "ir": {"num_taps": num_taps}},
        "controllers": [{"type": "ea_nlms"}],
    }
    config_path = directory.parent / f"gen_{directory.name}.json"
    config_path.write_text(json.dumps(config))
    result = subprocess.run(
        [sys.executable, "-m", "aecctl.cli", "generate", str(config_path)],
        capture_output=True, text=True)
    if result.returncode != 0:
        raise RuntimeError(f"scene generation failed: {result.stderr}")


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """A 6-scene corpus shared across tests."""
    root = tmp_path_factory.mktemp("corpus")
    generate_scenes(root / "scenes_out", count=6, base_seed=500,
                    duration_s=1.0)
    return root / "scenes_out" / "scenes"


def pytest_terminal_summary(terminalreporter):
    """Echo the acceptance pass/fail lines after the run."""
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.write_line("")
        terminalreporter.write_line("acceptance criteria:")
        for line in RESULTS:
            terminalreporter.write_line("  " + line)
