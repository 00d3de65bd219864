import json

import numpy as np
import pytest

from spmvgen.cli import main
from spmvgen.matio import write_matrix_market
from spmvgen.synthetic import canonical_matrix, uniform_rows

FAST = {"max_structures": 3, "max_grid_points": 8}


@pytest.fixture
def mtx(tmp_path):
    p = tmp_path / "a.mtx"
    write_matrix_market(canonical_matrix(), p)
    return p


@pytest.fixture
def cfg(tmp_path):
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(FAST))
    return p


def design(mtx, cfg, out, *extra):
    return main(["design", str(mtx), "--config", str(cfg), "--seed", "7",
                 "--budget-seconds", "30", "--out", str(out), *extra])


def test_design_then_run(tmp_path, mtx, cfg):
    out = tmp_path / "d"
    assert design(mtx, cfg, out, "--dump-metadata", "--emit-kernel",
                  str(tmp_path / "k.cu")) == 0
    for name in ("best.graph.json", "best.plan.json", "best.kernel.txt", "search.log.csv",
                 "metadata.txt", "best.format/manifest.json"):
        assert (out / name).is_file(), name
    assert (tmp_path / "k.cu").read_text() == (out / "best.kernel.txt").read_text()
    assert main(["run", str(out / "best.graph.json"), str(mtx)]) == 0


def test_seeded_design_is_byte_identical(tmp_path, mtx, cfg):
    a, b = tmp_path / "a", tmp_path / "b"
    assert design(mtx, cfg, a) == 0 and design(mtx, cfg, b) == 0
    for name in ("best.graph.json", "best.plan.json", "best.kernel.txt", "search.log.csv"):
        assert (a / name).read_bytes() == (b / name).read_bytes()


def test_missing_matrix(tmp_path, cfg):
    assert design(tmp_path / "nope.mtx", cfg, tmp_path / "d") == 1


def test_bad_config_key(tmp_path, mtx):
    p = tmp_path / "bad.json"
    p.write_text('{"colour": 1}')
    assert design(mtx, p, tmp_path / "d") == 1


def test_run_on_other_matrix_is_a_mismatch(tmp_path, mtx, cfg):
    out = tmp_path / "d"
    assert design(mtx, cfg, out) == 0
    other = tmp_path / "b.mtx"
    write_matrix_market(uniform_rows(np.random.default_rng(0), n=10, row_len=2), other)
    assert main(["run", str(out / "best.graph.json"), str(other)]) == 3


def test_run_with_wrong_x_length(tmp_path, mtx, cfg):
    out = tmp_path / "d"
    assert design(mtx, cfg, out) == 0
    x = tmp_path / "x.txt"
    x.write_text("1\n2\n")
    assert main(["run", str(out / "best.graph.json"), str(mtx), "--x", str(x)]) == 1


def test_verify_zero_cases():
    assert main(["verify", "--n", "0"]) == 0


def test_verify_small_fuzz(tmp_path):
    assert main(["verify", "--n", "10", "--repro-dir", str(tmp_path / "r")]) == 0


def test_injected_fault_is_caught(tmp_path):
    rep = tmp_path / "r"
    assert main(["verify", "--n", "5", "--inject-fault", "--repro-dir", str(rep)]) == 4
    case = rep / "case_0"
    assert {p.name for p in case.iterdir()} >= {"failure.json", "graph.json", "matrix.mtx",
                                               "x.txt"}
