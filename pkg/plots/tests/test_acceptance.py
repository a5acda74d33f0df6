"""Secondary acceptance: each plot kind renders from real experiment CSVs.

The experiments are produced through the primary package's public CLI (its
external interface); nothing is imported from it. The fixed-point and coupled
contraction runs use the shipped acceptance configs verbatim; the scaling
sweep uses a reduced sweep with the identical file schema to stay fast.
"""

import json
import shutil
import subprocess
import sys
from pathlib import Path

import pytest

from mfplot.cli import main

REPO = Path(__file__).parents[2]
POC_FAST = {
    "kind": "poc",
    "seed": 20260810,
    "energy": {
        "family": "two-body",
        "V": {"name": "quadratic", "params": {"a": 2.0}},
        "W": {"name": "cosine", "params": {"eps": 0.1, "freq": 1.0}},
        "declared_lambda": 3.9,
        "declared_d2m_bound": 0.1,
        "declared_dm_lip": 4.1,
        "drift_zero_sup": 0.1,
    },
    "n_list": [8, 16, 32],
    "dt": 2e-3,
    "T": 0.5,
    "replicas": 2,
    "init": {"mean_a": 1.0, "sd_a": 1.0},
    "n_ref": 512,
    "reference": "particle",
}


def mflang(*args) -> None:
    exe = shutil.which("mflang")
    cmd = [exe, *args] if exe else [sys.executable, "-m", "mflang.cli", *args]
    proc = subprocess.run(cmd, capture_output=True, text=True)
    assert proc.returncode in (0, 2), proc.stderr


@pytest.fixture(scope="module")
def experiment_outputs(tmp_path_factory):
    root = tmp_path_factory.mktemp("reports")
    mflang("fixed-point", "--config", str(REPO / "configs" / "fixed_point_lq.json"),
           "--out", str(root / "fp"))
    mflang("contraction", "--config", str(REPO / "configs" / "overdamped_contraction.json"),
           "--out", str(root / "contraction"))
    cfg = root / "poc_fast.json"
    cfg.write_text(json.dumps(POC_FAST))
    mflang("poc", "--config", str(cfg), "--out", str(root / "poc"))
    return root


def test_decay_from_contraction_run(experiment_outputs, capsys):
    out = experiment_outputs / "figs" / "decay.png"
    code = main(["decay",
                 "--in", str(experiment_outputs / "contraction" / "trace.csv"),
                 "--summary", str(experiment_outputs / "contraction" / "summary.json"),
                 "--out", str(out)])
    assert code == 0
    summary = json.loads((experiment_outputs / "contraction" / "summary.json").read_text())
    printed = capsys.readouterr().out
    assert f"annotation fitted_rate = {summary['fitted_rate']!r}" in printed
    assert out.exists() and out.with_suffix(".svg").exists()
    print("ACCEPTANCE 9a [PASS]: decay figure rendered from the coupling-contraction CSVs")


def test_scaling_from_poc_run(experiment_outputs, capsys):
    out = experiment_outputs / "figs" / "scaling.png"
    code = main(["scaling",
                 "--in", str(experiment_outputs / "poc" / "poc.csv"),
                 "--summary", str(experiment_outputs / "poc" / "summary.json"),
                 "--out", str(out)])
    assert code == 0
    summary = json.loads((experiment_outputs / "poc" / "summary.json").read_text())
    printed = capsys.readouterr().out
    assert f"annotation fitted_scaling_slope = {summary['fitted_scaling_slope']!r}" in printed
    assert out.with_suffix(".svg").exists()
    print("ACCEPTANCE 9b [PASS]: scaling figure rendered from the PoC sweep CSVs")


def test_picard_from_fixed_point_run(experiment_outputs, capsys):
    out = experiment_outputs / "figs" / "picard.png"
    code = main(["picard",
                 "--in", str(experiment_outputs / "fp" / "picard.csv"),
                 "--summary", str(experiment_outputs / "fp" / "summary.json"),
                 "--out", str(out)])
    assert code == 0
    assert out.exists() and out.with_suffix(".svg").exists()
    print("ACCEPTANCE 9c [PASS]: fixed-point figure rendered from the Picard history CSV")
