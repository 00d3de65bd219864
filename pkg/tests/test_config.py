import json

import pytest

from spmvgen.config import Config, config_from_dict, load_config, with_overrides


def test_defaults():
    cfg = config_from_dict({})
    assert cfg.out == "design_out" and cfg.precision == "f64" and cfg.workers == 1


def test_flat_keys_are_routed(tmp_path):
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"seed": 3, "out": "elsewhere", "sa": {"t0": 0.5},
                             "coarse_grids": {"threads_per_block": [64]}}))
    cfg = load_config(p)
    assert cfg.search.seed == 3 and cfg.out == "elsewhere"
    assert cfg.search.sa.t0 == 0.5
    assert cfg.search.coarse_grids["threads_per_block"] == [64]


@pytest.mark.parametrize("d", [
    {"colour": "blue"},
    {"sa": {"t0": 1.0, "beta": 2}},
    {"precision": "f16"},
    {"sa": {"alpha": 1.5}},
])
def test_rejected(d):
    with pytest.raises(ValueError):
        config_from_dict(d)


def test_overrides_skip_none():
    cfg = with_overrides(Config(), seed=None, wall_clock_budget=5.0, out="x")
    assert cfg.search.seed == 0 and cfg.search.wall_clock_budget == 5.0 and cfg.out == "x"


@pytest.mark.parametrize("kw", [{"nonsense": 1}, {"precision": "f8"}])
def test_bad_overrides(kw):
    with pytest.raises(ValueError):
        with_overrides(Config(), **kw)
