import subprocess
import sys

import pytest


def run_opdyn(*argv):
    """Drive the simulator package through its CLI only."""
    proc = subprocess.run(
        [sys.executable, "-m", "opdyn.cli", *argv],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0, proc.stderr
    return proc.stdout


@pytest.fixture(scope="session")
def small_export(tmp_path_factory):
    """A small simulated dataset exported to CSV plus its split manifest."""
    root = tmp_path_factory.mktemp("small")
    ds = root / "ds"
    csv = root / "export.csv"
    split = root / "split.json"
    run_opdyn(
        "sweep", str(ds), "--regime", "linear", "--betas", "0.2,0.5,0.8",
        "--qs", "0.1,0.4,0.7", "--reps", "10", "--n", "50",
        "--timesteps", "30", "--master-seed", "12",
    )
    run_opdyn(
        "export-csv", str(ds), str(csv),
        "--split-manifest", str(split), "--split-seed", "3",
    )
    return {"csv": csv, "split": split, "betas": (0.2, 0.5, 0.8), "qs": (0.1, 0.4, 0.7)}
