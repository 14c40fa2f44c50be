"""Command line surface: every subcommand end to end on the tiny configuration."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Dict, List

import pandas as pd
import pytest
from conftest import tiny_doc

from ifusion import cli
from ifusion.event_store import EventStore
from ifusion.tool import load_plan


def _run(capsys: pytest.CaptureFixture[str], argv: List[str]) -> Dict[str, Any]:
    assert cli.main(["--log-level", "ERROR", *argv]) == 0
    return json.loads(capsys.readouterr().out)


def _error(capsys: pytest.CaptureFixture[str], argv: List[str]) -> Dict[str, Any]:
    assert cli.main(["--log-level", "ERROR", *argv]) == 1
    lines = [x for x in capsys.readouterr().err.splitlines() if x.startswith('{"error"')]
    assert lines, "no JSON error object on stderr"
    return json.loads(lines[-1])["error"]


def _write_config(path: Path, run_dir: Path) -> Path:
    path.write_text(json.dumps(tiny_doc(run_dir)), encoding="utf-8")
    return path


@pytest.fixture(scope="module")
def trained(tmp_path_factory: pytest.TempPathFactory) -> Path:
    root = tmp_path_factory.mktemp("cli")
    cfg = _write_config(root / "cfg.json", root / "run")
    assert cli.main(["--log-level", "ERROR", "train", "--config", str(cfg)]) == 0
    return root / "run"


class TestSimulate:
    def test_writes_reproducible_plan(
        self, tmp_path: Path, capsys: pytest.CaptureFixture[str]
    ) -> None:
        argv = ["simulate", "--n", "50", "--drop-rate", "0.5", "--seed", "7"]
        first = _run(capsys, [*argv, "--out", str(tmp_path / "a.json")])
        _run(capsys, [*argv, "--out", str(tmp_path / "b.json")])
        assert first["n"] == 50 and first["seed"] == 7
        assert (tmp_path / "a.json").read_text() == (tmp_path / "b.json").read_text()
        plan = load_plan(tmp_path / "a.json")
        assert plan.n == 50 and plan.drop_rate == 0.5
        assert first["inter_dropped_samples"] == int(plan.inter_drop.any(axis=1).sum())
        saved = json.loads((tmp_path / "config.json").read_text(encoding="utf-8"))
        assert saved["training"]["seed"] == 7
        assert first["config_hash"]

    def test_out_of_range_drop_rate(self, capsys: pytest.CaptureFixture[str]) -> None:
        err = _error(capsys, ["simulate", "--n", "5", "--drop-rate", "1.5"])
        assert err["code"] == "OUT_OF_RANGE"

    def test_archives_feed_training(
        self, tmp_path: Path, capsys: pytest.CaptureFixture[str]
    ) -> None:
        cfg = _write_config(tmp_path / "cfg.json", tmp_path / "unused")
        archives = tmp_path / "features"
        resp = _run(
            capsys,
            ["simulate", "--config", str(cfg), "--n", "4", "--archive-out", str(archives)],
        )
        assert resp["archive_dir"] == str(archives)
        for split in ("train", "valid", "test"):
            assert (archives / split).is_dir()
        saved = json.loads((archives / "config.json").read_text(encoding="utf-8"))
        assert saved["data"]["synthetic"]["n_train"] == 24

        trained = _run(
            capsys,
            [
                "train",
                "--config",
                str(cfg),
                "--set",
                "data.source=archive",
                "--set",
                f"data.archive_dir={archives}",
                "--set",
                "training.epochs=2",
                "--out",
                str(tmp_path / "run"),
            ],
        )
        assert trained["epochs_run"] == 2
        assert Path(trained["best_checkpoint"]).exists()


class TestTrain:
    def test_outputs(self, trained: Path) -> None:
        for name in ("best.pt", "last.pt", "config.json", "train_log.jsonl"):
            assert (trained / name).exists(), name

    def test_response_and_run_record(
        self, tmp_path: Path, capsys: pytest.CaptureFixture[str]
    ) -> None:
        cfg = _write_config(tmp_path / "cfg.json", tmp_path / "ignored")
        db = tmp_path / "runs.db"
        resp = _run(
            capsys,
            ["train", "--config", str(cfg), "--out", str(tmp_path / "run"), "--db", str(db)],
        )
        assert resp["output_dir"] == str(tmp_path / "run")
        assert resp["epochs_run"] == 3
        with EventStore(db) as store:
            (run,) = store.list_runs()
        assert run["run_id"] == resp["run_id"] and run["status"] == "COMPLETED"

    def test_invalid_override(self, tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
        cfg = _write_config(tmp_path / "cfg.json", tmp_path / "run")
        err = _error(capsys, ["train", "--config", str(cfg), "--set", "model.heads=3"])
        assert err["code"] == "OUT_OF_RANGE"
        assert err["details"]["path"] == "model.heads"


class TestEvaluate:
    def test_drop_rate(
        self, trained: Path, tmp_path: Path, capsys: pytest.CaptureFixture[str]
    ) -> None:
        ckpt = str(trained / "best.pt")
        out = tmp_path / "eval"
        resp = _run(
            capsys,
            ["eval", "--checkpoint", ckpt, "--drop-rate", "0.5", "--out", str(out)],
        )
        assert resp["drop_rate"] == 0.5
        assert set(resp["metrics"]) >= {"mae", "acc7", "acc5", "acc2_nonzero", "f1_nonzero"}
        for name in ("metrics.csv", "predictions.csv", "scatter_l.csv", "config.json"):
            assert (out / name).exists(), name
        assert len(pd.read_csv(out / "predictions.csv")) == 12

        again = _run(
            capsys,
            ["eval", "--checkpoint", ckpt, "--drop-rate", "0.5", "--out", str(out)],
        )
        assert again["metrics"] == resp["metrics"]

    def test_mode(self, trained: Path, tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
        ckpt = str(trained / "best.pt")
        resp = _run(capsys, ["eval", "--checkpoint", ckpt, "--mode", "5", "--out", str(tmp_path)])
        assert resp["mode"] == 5
        assert resp["integrity"]["a"]["r2"] is None

    def test_drop_rate_and_mode_are_exclusive(self, trained: Path) -> None:
        ckpt = str(trained / "best.pt")
        with pytest.raises(SystemExit):
            cli.main(["eval", "--checkpoint", ckpt, "--mode", "1", "--drop-rate", "0.1"])

    def test_missing_checkpoint(self, tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
        err = _error(capsys, ["eval", "--checkpoint", str(tmp_path / "none.pt")])
        assert err["code"] == "CHECKPOINT_MISSING"

    def test_sweep(self, trained: Path, tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
        ckpt = str(trained / "best.pt")
        resp = _run(capsys, ["sweep", "--checkpoint", ckpt, "--out", str(tmp_path)])
        rates = [row["drop_rate"] for row in resp["sweep"]]
        assert rates == [round(0.1 * i, 1) for i in range(11)]
        assert [row["mode"] for row in resp["modes"]] == [0, 1, 2, 3, 4, 5]
        assert len(pd.read_csv(tmp_path / "sweep.csv")) == 11
        assert len(pd.read_csv(tmp_path / "modes.csv")) == 6
        assert not (tmp_path / "sweep.png").exists()

    def test_estimate(
        self, trained: Path, tmp_path: Path, capsys: pytest.CaptureFixture[str]
    ) -> None:
        ckpt = str(trained / "best.pt")
        out = tmp_path / "scatter.csv"
        resp = _run(
            capsys,
            ["estimate", "--checkpoint", ckpt, "--drop-rate", "0.7", "--out", str(out)],
        )
        assert resp["drop_rate"] == 0.7
        rows = pd.read_csv(out)
        assert len(rows) == 3 * 12
        assert sorted(rows["modality"].unique()) == ["a", "l", "v"]
        assert (tmp_path / "scatter_stats.csv").exists()
        saved = json.loads((tmp_path / "config.json").read_text(encoding="utf-8"))
        assert saved["model"]["hidden"] == 8


class TestReport:
    def test_cases_and_reference(self, tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
        pd.DataFrame(
            {"id": ["u1", "u2"], "prediction": [0.1102, 0.5], "label": [0.0, 0.4]}
        ).to_csv(tmp_path / "ours.csv", index=False)
        pd.DataFrame({"id": ["u1", "u2"], "prediction": [-1.0060, 0.4]}).to_csv(
            tmp_path / "base.csv", index=False
        )
        metrics = {"drop_rate": 0.5, "mae": 1.2, "acc7": 0.3, "acc5": 0.33}
        metrics.update(acc2_nonzero=0.7, f1_nonzero=0.7)
        pd.DataFrame([metrics]).to_csv(tmp_path / "metrics.csv", index=False)

        resp = _run(
            capsys,
            [
                "report",
                "--predictions",
                str(tmp_path / "ours.csv"),
                "--baseline",
                str(tmp_path / "base.csv"),
                "--metrics",
                str(tmp_path / "metrics.csv"),
                "--out",
                str(tmp_path / "rep"),
            ],
        )
        assert resp["cases"] == ["u1"]
        assert resp["metrics"]["n"] == 2
        assert [r["metric"] for r in resp["reference"]][0] == "mae"
        assert (tmp_path / "rep" / "cases.csv").exists()
        assert (tmp_path / "rep" / "reference.csv").exists()
        saved = json.loads((tmp_path / "rep" / "config.json").read_text(encoding="utf-8"))
        assert saved["own_tol"] == 0.25 and saved["base_tol"] == 1.0

    def test_baseline_without_predictions(
        self, tmp_path: Path, capsys: pytest.CaptureFixture[str]
    ) -> None:
        pd.DataFrame({"id": ["u1"], "prediction": [0.0], "label": [0.0]}).to_csv(
            tmp_path / "ours.csv", index=False
        )
        pd.DataFrame({"id": ["u1"]}).to_csv(tmp_path / "base.csv", index=False)
        err = _error(
            capsys,
            [
                "report",
                "--predictions",
                str(tmp_path / "ours.csv"),
                "--baseline",
                str(tmp_path / "base.csv"),
                "--out",
                str(tmp_path),
            ],
        )
        assert err["details"]["missing"] == ["prediction"]
        assert err["code"] == "MISSING_COLUMNS"
        assert not (tmp_path / "config.json").exists()

    def test_predictions_without_label(
        self, tmp_path: Path, capsys: pytest.CaptureFixture[str]
    ) -> None:
        pd.DataFrame({"id": ["u1", "u2"], "prediction": [0.3, -0.2]}).to_csv(
            tmp_path / "ours.csv", index=False
        )
        err = _error(
            capsys,
            ["report", "--predictions", str(tmp_path / "ours.csv"), "--out", str(tmp_path)],
        )
        assert err["code"] == "MISSING_COLUMNS"
        assert err["details"]["table"] == "predictions"
        assert err["details"]["missing"] == ["label"]

    def test_missing_predictions_file(
        self, tmp_path: Path, capsys: pytest.CaptureFixture[str]
    ) -> None:
        err = _error(
            capsys,
            ["report", "--predictions", str(tmp_path / "nope.csv"), "--out", str(tmp_path)],
        )
        assert err["code"] == "FILE_NOT_FOUND"
        assert err["details"]["path"] == str(tmp_path / "nope.csv")

    def test_empty_metrics_file(
        self, tmp_path: Path, capsys: pytest.CaptureFixture[str]
    ) -> None:
        pd.DataFrame({"id": ["u1"], "prediction": [0.0], "label": [1.0]}).to_csv(
            tmp_path / "ours.csv", index=False
        )
        (tmp_path / "metrics.csv").write_text("", encoding="utf-8")
        err = _error(
            capsys,
            [
                "report",
                "--predictions",
                str(tmp_path / "ours.csv"),
                "--metrics",
                str(tmp_path / "metrics.csv"),
                "--out",
                str(tmp_path / "rep"),
            ],
        )
        assert err["code"] == "TABLE_INVALID"


class TestPipeline:
    def test_two_runs_are_identical(
        self, tmp_path: Path, capsys: pytest.CaptureFixture[str]
    ) -> None:
        """simulate, train and eval twice with seed 1112: same plan, curves and CSVs."""
        outputs = []
        for name in ("first", "second"):
            root = tmp_path / name
            cfg = _write_config(tmp_path / f"{name}.json", root / "run")
            plan = str(root / "plan.json")
            _run(capsys, ["simulate", "--n", "64", "--seed", "1112", "--out", plan])
            _run(capsys, ["train", "--config", str(cfg), "--seed", "1112"])
            ckpt = str(root / "run" / "best.pt")
            eval_dir = str(root / "eval")
            _run(capsys, ["eval", "--checkpoint", ckpt, "--seed", "1112", "--out", eval_dir])
            outputs.append(root)

        a, b = outputs
        assert (a / "plan.json").read_bytes() == (b / "plan.json").read_bytes()
        for name in ("metrics.csv", "predictions.csv", "scatter_stats.csv"):
            assert (a / "eval" / name).read_bytes() == (b / "eval" / name).read_bytes(), name
        curve_a = [json.loads(x) for x in (a / "run" / "train_log.jsonl").read_text().splitlines()]
        curve_b = [json.loads(x) for x in (b / "run" / "train_log.jsonl").read_text().splitlines()]
        assert len(curve_a) == len(curve_b) == 3
        for row_a, row_b in zip(curve_a, curve_b):
            assert row_a.keys() == row_b.keys()
            for key in row_a:
                assert row_a[key] == pytest.approx(row_b[key], rel=1e-6)
