import dataclasses

import pytest

from castreg.coarse import CoarseConfig
from castreg.config import PipelineConfig, load_config, parse_config_text, save_config
from castreg.fine import FineConfig


def test_defaults_round_trip(tmp_path):
    cfg = PipelineConfig()
    path = tmp_path / "cfg.txt"
    save_config(path, cfg)
    assert load_config(path) == cfg


def test_parse_overrides_and_comments():
    cfg = parse_config_text(
        """
        # coarse settings
        voxel_size = 0.5   # meters
        n_blocks = 4
        use_icp = false
        include_timings = on
        """
    )
    assert cfg.voxel_size == 0.5
    assert cfg.n_blocks == 4
    assert cfg.use_icp is False
    assert cfg.include_timings is True
    # untouched fields keep their defaults
    assert cfg.n_heads == PipelineConfig().n_heads


def test_parse_with_base():
    base = PipelineConfig(seed=9)
    cfg = parse_config_text("voxel_size = 0.4\n", base=base)
    assert cfg.seed == 9
    assert cfg.voxel_size == 0.4


def test_parse_errors():
    with pytest.raises(ValueError, match="unknown config key"):
        parse_config_text("not_a_key = 1\n")
    with pytest.raises(ValueError, match="line 1"):
        parse_config_text("voxel_size 0.5\n")
    with pytest.raises(ValueError, match="invalid boolean"):
        parse_config_text("use_icp = maybe\n")
    with pytest.raises(ValueError):
        parse_config_text("n_blocks = 2.5\n")


def test_sub_config_projection():
    cfg = PipelineConfig(sigma_c=0.9, r_k=1.1, k_seeds=6)
    coarse = cfg.coarse()
    assert isinstance(coarse, CoarseConfig)
    assert coarse.sigma_c == 0.9
    assert coarse.sampling.k_seeds == 6
    fine = cfg.fine()
    assert isinstance(fine, FineConfig)
    assert fine.r_k == 1.1


def test_modified_round_trip(tmp_path):
    cfg = dataclasses.replace(PipelineConfig(), voxel_size=0.42, workers=3,
                              confidence_bypass=False)
    path = tmp_path / "cfg.txt"
    save_config(path, cfg)
    assert load_config(path) == cfg
