"""Run configuration: defaults, schema validation, overrides and hashing."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from ifusion.config import apply_overrides, load_config, parse_config
from ifusion.exceptions import ConfigError


class TestDefaults:
    """An empty document yields the documented defaults."""

    def test_empty_document(self) -> None:
        cfg = parse_config({})
        assert cfg.training.seed == 1112
        assert cfg.training.batch_size == 64
        assert cfg.training.epochs == 150
        assert cfg.training.stage1_epochs == 40
        assert cfg.training.lr == 1e-4
        assert cfg.training.weight_decay == 1e-4
        assert (cfg.training.alpha, cfg.training.beta, cfg.training.sigma) == (0.9, 0.4, 1.0)
        assert (
            cfg.training.lambda_mse_global,
            cfg.training.lambda_mi_global,
            cfg.training.lambda_mse_semantic,
            cfg.training.lambda_mi_semantic,
        ) == (0.5, 0.4, 0.3, 0.2)
        assert cfg.model.seq_len == 8
        assert cfg.model.fusion_layers == cfg.model.dominant_depth + 1

    def test_synthetic_seed_follows_training_seed(self) -> None:
        cfg = parse_config({"training": {"seed": 7}})
        assert cfg.data.synthetic.seed == 7

    def test_none_is_defaults(self) -> None:
        assert parse_config(None).config_hash == parse_config({}).config_hash


class TestValidation:
    """Schema and cross-field errors carry a code and the failing path."""

    def test_unknown_key(self) -> None:
        with pytest.raises(ConfigError) as exc:
            parse_config({"training": {"learning_rate": 1e-3}})
        assert exc.value.error_code == "UNKNOWN_KEY"
        assert exc.value.details["path"] == "training"

    def test_out_of_range(self) -> None:
        with pytest.raises(ConfigError) as exc:
            parse_config({"missingness": {"drop_rate": 1.5}})
        assert exc.value.error_code == "OUT_OF_RANGE"
        assert exc.value.details["path"] == "missingness.drop_rate"

    def test_enum_is_out_of_range(self) -> None:
        with pytest.raises(ConfigError) as exc:
            parse_config({"model": {"similarity": "cosine"}})
        assert exc.value.error_code == "OUT_OF_RANGE"

    def test_wrong_type_is_invalid(self) -> None:
        with pytest.raises(ConfigError) as exc:
            parse_config({"training": {"batch_size": "big"}})
        assert exc.value.error_code == "CONFIG_INVALID"

    def test_stage1_longer_than_training(self) -> None:
        with pytest.raises(ConfigError) as exc:
            parse_config({"training": {"epochs": 5, "stage1_epochs": 6}})
        assert exc.value.details["path"] == "training.stage1_epochs"

    def test_heads_must_divide_hidden(self) -> None:
        with pytest.raises(ConfigError) as exc:
            parse_config({"model": {"hidden": 10, "heads": 4}})
        assert exc.value.error_code == "OUT_OF_RANGE"
        assert exc.value.details["path"] == "model.heads"

    def test_fusion_layers_follow_dominant_depth(self) -> None:
        with pytest.raises(ConfigError) as exc:
            parse_config({"model": {"dominant_depth": 2, "fusion_layers": 2}})
        assert exc.value.details["path"] == "model.fusion_layers"

    def test_archive_needs_directory(self) -> None:
        with pytest.raises(ConfigError) as exc:
            parse_config({"data": {"source": "archive"}})
        assert exc.value.error_code == "MISSING_DATA_SOURCE"

    def test_non_object_document(self) -> None:
        with pytest.raises(ConfigError):
            parse_config([1, 2])  # type: ignore[arg-type]


class TestOverrides:
    """Dotted overrides are JSON literals with a string fallback."""

    def test_numeric_and_string_values(self) -> None:
        doc = apply_overrides({}, ["training.lr=2e-4", "output_dir=runs/x", "model.fusion=average"])
        assert doc == {
            "training": {"lr": 2e-4},
            "output_dir": "runs/x",
            "model": {"fusion": "average"},
        }

    def test_original_untouched(self) -> None:
        original = {"training": {"lr": 1e-3}}
        apply_overrides(original, ["training.lr=5"])
        assert original == {"training": {"lr": 1e-3}}

    def test_missing_equals(self) -> None:
        with pytest.raises(ConfigError):
            apply_overrides({}, ["training.lr"])

    def test_descend_into_scalar(self) -> None:
        with pytest.raises(ConfigError):
            apply_overrides({"output_dir": "x"}, ["output_dir.sub=1"])

    def test_overrides_validated(self) -> None:
        with pytest.raises(ConfigError) as exc:
            load_config(None, ["training.batch_size=0"])
        assert exc.value.error_code == "OUT_OF_RANGE"


class TestFilesAndHash:
    """Config files round-trip through dump and keep their hash."""

    def test_dump_then_load_keeps_hash(self, tmp_path: Path) -> None:
        cfg = load_config(None, ["training.epochs=3", "training.stage1_epochs=1"])
        path = tmp_path / "config.json"
        cfg.dump(path)
        assert load_config(path).config_hash == cfg.config_hash

    def test_hash_changes_with_content(self) -> None:
        assert parse_config({}).config_hash != parse_config({"training": {"seed": 1}}).config_hash

    def test_missing_file(self, tmp_path: Path) -> None:
        with pytest.raises(ConfigError):
            load_config(tmp_path / "absent.json")

    def test_invalid_json(self, tmp_path: Path) -> None:
        path = tmp_path / "bad.json"
        path.write_text("{not json", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_config(path)

    def test_to_dict_is_json(self) -> None:
        doc = parse_config({"training": {"scatter_epochs": [3, 1]}}).to_dict()
        assert json.loads(json.dumps(doc))["training"]["scatter_epochs"] == [1, 3]
        assert parse_config(doc).to_dict() == doc
