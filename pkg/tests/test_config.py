from pathlib import Path

import pytest

from intentfuse.config import OUTPUT_ENV, ConfigError, RunConfig, format_config, load_config, parse_config


def test_defaults_are_valid_without_paths():
    cfg = parse_config("")
    assert cfg.problems(check_paths=False) == []
    assert cfg.train_config().peak_lr == 2e-5
    assert cfg.text.d_model == 64 and cfg.vision.d_model == 48


def test_values_are_typed():
    cfg = parse_config("seed = 5\ntrain.peak_lr = 3e-3\naugment.hflip = false\nimage.mean = 0.5, 0.5, 0.5\ntrain.warmup_steps = none\n")
    assert cfg.seed == 5 and cfg.train.peak_lr == 3e-3
    assert cfg.augment.hflip is False and cfg.image.mean == (0.5, 0.5, 0.5)
    assert cfg.train.warmup_steps is None


def test_all_syntax_errors_reported_together():
    text = "seed = x\nbogus = 1\nwarp.speed = 9\ntext.depth = 2\nno equals sign\nseed = 2\n"
    with pytest.raises(ConfigError) as exc:
        parse_config(text)
    joined = "\n".join(exc.value.problems)
    for fragment in ("line 1", "unknown key bogus", "unknown section warp", "unknown key text.depth", "line 5", "duplicate key seed"):
        assert fragment in joined
    assert len(exc.value.problems) == 6


def test_semantic_errors_listed_exhaustively(tmp_path):
    (tmp_path / "c.cfg").write_text("dataset = nope.tsv\nfusion.strategy = hybrid\nimage.std = 0.2, 0, 0.2\ntext.n_heads = 3\n")
    with pytest.raises(ConfigError) as exc:
        load_config(tmp_path / "c.cfg")
    joined = "\n".join(exc.value.problems)
    assert "early, intermediate, late" in joined
    assert "image.std" in joined
    assert "text:" in joined
    assert "no such file" in joined


def test_paths_resolve_against_config_dir(tmp_path, monkeypatch):
    (tmp_path / "d.tsv").write_text("")
    (tmp_path / "c.cfg").write_text("dataset = d.tsv\noutput_dir = out\n")
    monkeypatch.delenv(OUTPUT_ENV, raising=False)
    cfg = load_config(tmp_path / "c.cfg")
    assert cfg.dataset_path == tmp_path / "d.tsv"
    assert cfg.output_path == tmp_path / "out"
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "elsewhere"))
    assert cfg.output_path == tmp_path / "elsewhere"


def test_overrides_win():
    assert parse_config("seed = 1\n", overrides={"seed": "9"}).seed == 9


def test_format_config_round_trips():
    cfg = parse_config("seed = 3\nfusion.strategy = late\nimage.std = 0.5, 0.5, 0.5\n")
    again = parse_config(format_config(cfg))
    assert format_config(again) == format_config(cfg)
    assert again.fusion.strategy == "late"


def test_shipped_configs_parse():
    root = Path(__file__).resolve().parent.parent / "configs"
    for path in root.glob("*.cfg"):
        load_config(path, check_paths=False)


def test_model_config_builder():
    cfg = RunConfig()
    m = cfg.model_config(100, "text")
    assert m.vision is None and m.fusion is None and m.text.vocab_size == 100
    assert cfg.model_config(100, "both", "late").fusion.strategy == "late"
