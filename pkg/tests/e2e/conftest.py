import os
import subprocess
import sys
import pytest

from src.synth import write_synthetic_tree

ROOT = os.path.join(os.path.dirname(__file__), "..", "..")


def run_cli(*args: str, workers: int = 1) -> subprocess.CompletedProcess:
    """Run the poseload CLI as a separate process from the project root."""
    return subprocess.run(
        [sys.executable, "-m", "src.main", "--workers", str(workers), *args],
        cwd=ROOT,
        capture_output=True,
        text=True,
        timeout=600,
    )


@pytest.fixture(scope="session")
def synthetic_tree(tmp_path_factory):
    """Two participants, twelve seconds per recording, with event logs."""
    root = tmp_path_factory.mktemp("synthetic")
    write_synthetic_tree(str(root), n_participants=2, duration_s=12, seed=7)
    return root
