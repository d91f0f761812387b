import json

import pytest

from mbf_amen import parser
from mbf_amen.exceptions import ConfigError, ConfigParseError
from mbf_amen.pipeline import PipelineConfig


def write(path, data):
    path.write_text(json.dumps(data) if not isinstance(data, str) else data)
    return path


class TestParsedToConfig:
    def test_empty_gives_defaults(self):
        config = parser.parsed_to_config({}, "desk")
        assert config == PipelineConfig()
        assert config.epochs == 20 and config.image_size == 32

    def test_paper_profile(self):
        config = parser.parsed_to_config({}, "paper")
        assert (config.epochs, config.image_size, config.batch_size) == (100, 256, 32)

    def test_unknown_profile(self):
        with pytest.raises(ConfigError):
            parser.parsed_to_config({}, "laptop")

    def test_scales_zero(self):
        with pytest.raises(ConfigError) as e:
            parser.parsed_to_config({"scales": 0})
        assert e.value.field == "scales"

    def test_unknown_key(self):
        with pytest.raises(ConfigError) as e:
            parser.parsed_to_config({"scale": 3})
        assert e.value.field == "scale"

    @pytest.mark.parametrize(
        "backbone",
        [
            "no-such-preset",
            {"layers": [], "hiden": [16]},
            {"layers": [{"kind": "dropout"}]},
            {"layers": [{"kind": "maxpool", "kernel": 2}] * 6},
            {"hidden": [0]},
        ],
    )
    def test_bad_backbone(self, backbone):
        with pytest.raises(ConfigError) as e:
            parser.parsed_to_config({"backbone": backbone})
        assert e.value.field == "backbone"

    def test_custom_backbone_accepted(self):
        config = parser.parsed_to_config(
            {"backbone": {"layers": [{"kind": "maxpool", "kernel": 2}], "hidden": [4]}}
        )
        assert config.backbone["hidden"] == [4]

    def test_round_trip(self):
        config = parser.parsed_to_config({"lambda": 0.001, "scales": 3})
        again = parser.parsed_to_config(json.loads(parser.config_to_json(config)))
        assert again == config

    def test_default_config_is_complete(self):
        d = parser.default_config()
        assert set(d) == set(PipelineConfig().to_dict())
        assert d["lambda"] == 1e-3


class TestFiles:
    def test_json(self, tmp_path):
        path = write(tmp_path / "c.json", {"scales": 2, "lambda": [0, 0.01]})
        config = parser.parse_config(path)
        assert config.lambdas == [0.0, 0.01]

    def test_toml(self, tmp_path):
        path = write(tmp_path / "c.toml", 'scales = 2\nlambda = 0.01\nbackbone = "desk-wide"\n')
        config = parser.parse_config(path)
        assert (config.scales, config.lambda_, config.backbone) == (2, 0.01, "desk-wide")

    def test_malformed_json_names_the_position(self, tmp_path):
        path = write(tmp_path / "c.json", '{\n  "scales": 2,\n  "lambda": \n}')
        with pytest.raises(ConfigParseError) as e:
            parser.parse_config(path)
        assert e.value.line == 4
        assert e.value.column == 1
        assert "c.json:4:1" in str(e.value)

    def test_malformed_toml(self, tmp_path):
        path = write(tmp_path / "c.toml", "scales = 2\nlambda = = 1\n")
        with pytest.raises(ConfigParseError) as e:
            parser.parse_config(path)
        assert e.value.line == 2

    def test_top_level_must_be_an_object(self, tmp_path):
        with pytest.raises(ConfigParseError):
            parser.parse_config(write(tmp_path / "c.json", "[1, 2]"))

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            parser.parse_config(tmp_path / "nope.json")

    def test_include_with_environment_variable(self, tmp_path, monkeypatch):
        (tmp_path / "base").mkdir()
        write(tmp_path / "base" / "common.json", {"scales": 2, "epochs": 7, "seed": 3})
        monkeypatch.setenv("AMEN_BASE", "base")
        path = write(tmp_path / "c.json", {"include": "${AMEN_BASE}/common.json", "seed": 9})
        config = parser.parse_config(path)
        assert (config.scales, config.epochs, config.seed) == (2, 7, 9)

    def test_include_cycle(self, tmp_path):
        write(tmp_path / "a.json", {"include": "b.json"})
        write(tmp_path / "b.json", {"include": "a.json"})
        with pytest.raises(ConfigError):
            parser.parse_config(tmp_path / "a.json")

    def test_overrides(self, tmp_path):
        path = write(tmp_path / "c.json", {"seed": 1, "lambda": 0.01})
        config = parser.parse_config(path, overrides={"seed": 4, "scales": None, "lambda": 1e-4})
        assert (config.seed, config.scales, config.lambda_) == (4, 3, 1e-4)
        with pytest.raises(ConfigError):
            parser.parse_config(path, overrides={"sed": 4})


def test_merge_config():
    merged = parser.merge_config(
        {"a": 1, "backbone": {"layers": [], "hidden": [8]}},
        {"a": 2, "backbone": {"hidden": [4]}},
    )
    assert merged == {"a": 2, "backbone": {"layers": [], "hidden": [4]}}
