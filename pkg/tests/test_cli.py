import json
from pathlib import Path

import pandas as pd
import pytest

from app.cli.main import main
from app.services.simlab import LOG3, gen_proxy_example_1

CONFIG = """
[data]
path = proxy.csv
treatment = a
outcome = {outcome}
covariates = X

[model]
model = effect-diff
gamma_grid = 0.5:2:0.5

[inference]
folds = 2
seed = 13
"""


def _workspace(tmp_path: Path, outcome: str = "y", n: int = 20_000) -> Path:
    data = gen_proxy_example_1(n, seed=1).dataset
    frame = pd.DataFrame({"X": data.covariates[:, 0], "a": data.treatment.astype(int), "y": data.outcome})
    frame.to_csv(tmp_path / "proxy.csv", index=False)
    config = tmp_path / "run.ini"
    config.write_text(CONFIG.format(outcome=outcome), encoding="utf-8")
    return config


def test_analyze_writes_artifacts(tmp_path: Path) -> None:
    config = _workspace(tmp_path)
    out = tmp_path / "out"
    assert main(["analyze", "--config", str(config), "--out", str(out)]) == 0

    table = pd.read_csv(out / "confounder_table.csv")
    assert table.loc[0, "estimate"] == pytest.approx(LOG3 / 3, abs=0.1)
    assert table.loc[1, "variable"] == "X"
    assert table.loc[1, "estimate"] == pytest.approx(2 / 3 - LOG3 / 3, abs=0.1)
    assert set(table["seed"]) == {13}

    curve = pd.read_csv(out / "bound_curve.csv")
    assert list(curve["gamma"]) == [0.5, 1.0, 1.5, 2.0]
    assert (curve["band_lower"] <= curve["lower"]).all()
    assert (curve["upper"] <= curve["band_upper"]).all()

    robustness = json.loads((out / "robustness.json").read_text())
    assert robustness["status"] == "ok"
    assert robustness["method"] == "closed-form"
    manifest = json.loads((out / "manifest.json").read_text())
    assert "bound_curve.csv" in manifest["files"]
    assert manifest["config_hash"] == robustness["config_hash"]


def test_reruns_are_byte_identical(tmp_path: Path) -> None:
    config = _workspace(tmp_path, n=2000)
    first, second = tmp_path / "first", tmp_path / "second"
    assert main(["analyze", "--config", str(config), "--out", str(first)]) == 0
    assert main(["analyze", "--config", str(config), "--out", str(second), "--threads", "2"]) == 0
    for name in ("confounder_table.csv", "bound_curve.csv", "robustness.json", "measured.json", "manifest.json"):
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_missing_outcome_column_exits_with_configuration_error(tmp_path: Path) -> None:
    config = _workspace(tmp_path, outcome="income", n=200)
    out = tmp_path / "out"
    assert main(["analyze", "--config", str(config), "--out", str(out)]) == 2
    record = json.loads((out / "error.json").read_text())
    assert record["error"] == "ConfigurationError"
    assert "income" in record["message"]
    assert record["details"]["columns"] == ["income"]


def test_robustness_command(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    config = _workspace(tmp_path, n=4000)
    out = tmp_path / "out"
    assert main(["robustness", "--config", str(config), "--out", str(out)]) == 0
    assert "method=closed-form" in capsys.readouterr().out
    assert json.loads((out / "robustness.json").read_text())["gamma0"] > 0


def test_simulate_unknown_experiment(tmp_path: Path) -> None:
    assert main(["simulate", "coverage-everything", "--out", str(tmp_path)]) == 2


def test_simulate_regime_map(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    assert main(["simulate", "regime-map", "--set", "rho_steps=5", "--seed", "2", "--out", str(tmp_path)]) == 0
    assert "regime-map: PASS" in capsys.readouterr().out
    summary = json.loads((tmp_path / "regime-map" / "summary.json").read_text())
    assert summary["params"]["rho_steps"] == 5
    assert summary["seed"] == 2
    replicates = pd.read_csv(tmp_path / "regime-map" / "replicates.csv")
    assert len(replicates) == 5 * 11


def test_bad_override_syntax(tmp_path: Path) -> None:
    assert main(["simulate", "regime-map", "--set", "rho_steps", "--out", str(tmp_path)]) == 2
