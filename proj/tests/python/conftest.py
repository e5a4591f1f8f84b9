import os
import shutil
import subprocess
from pathlib import Path

import numpy as np
import pytest

import waterformer

ROOT = Path(__file__).resolve().parents[2]


def _find_cli():
    candidates = [
        os.environ.get("WATERFORMER_CLI"),
        ROOT / "build" / "waterformer",
        Path(waterformer.__file__).parent / "waterformer",
        shutil.which("waterformer"),
    ]
    for c in candidates:
        if c and Path(c).is_file() and os.access(c, os.X_OK):
            return str(c)
    pytest.skip("waterformer CLI binary not found; set WATERFORMER_CLI")


@pytest.fixture(scope="session")
def cli():
    exe = _find_cli()

    def run(*args, check=None):
        proc = subprocess.run([exe, *map(str, args)], capture_output=True, text=True, timeout=300)
        if check is not None:
            assert proc.returncode == check, proc.stdout + proc.stderr
        return proc

    return run


@pytest.fixture
def rng():
    return np.random.default_rng(0)
