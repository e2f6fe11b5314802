import json
import shutil
import subprocess
import sys
from importlib import resources

import pytest

from ltccp import __version__
from ltccp.cli import STAGES, main

FIXTURES = resources.files("ltccp") / "fixtures"
CONFIG = str(FIXTURES / "synthetic200.toml")


def run(workdir, *stage_args):
    return main([*stage_args, "--config", CONFIG, "--workdir", str(workdir)])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    wd = tmp_path_factory.mktemp("run")
    assert run(wd, "run") == 0
    return wd


def test_full_pipeline_report_shape(pipeline):
    rep = json.loads((pipeline / "report.json").read_text())
    cells = {(r["model"], r["t"]) for r in rep["rows"]}
    assert cells == {(m, t) for m in ("LR", "CART", "LT-CCP") for t in range(1, 6)}
    assert rep["absent_models"] == ["RPP", "SVR"]
    table = (pipeline / "comparison_table.csv").read_text().splitlines()
    assert table[0].startswith("model,t1_MAPE,t1_ACC") and len(table) == 6
    dist = (pipeline / "distribution.csv").read_text().splitlines()
    assert len(dist) == 31


def test_bundled_corpus_matches_generator(pipeline):
    bundled = (FIXTURES / "synthetic200.jsonl.gz").read_bytes()
    assert (pipeline / "corpus.jsonl.gz").read_bytes() == bundled


def test_manifests_carry_config_and_version(pipeline):
    for stage in STAGES:
        man = json.loads((pipeline / f"manifest.{stage}.json").read_text())
        assert man["version"] == __version__ and man["stage"] == stage
        assert man["config"]["seed"] == 11 and man["config"]["synth"]["num_papers"] == 200
        assert man["outputs"]


@pytest.mark.parametrize("stage", STAGES)
def test_stage_rerun_is_byte_identical(pipeline, tmp_path, stage):
    wd = tmp_path / "copy"
    shutil.copytree(pipeline, wd)
    man = json.loads((pipeline / f"manifest.{stage}.json").read_text())
    inputs_before = {n: (wd / n).read_bytes() for n in man["inputs"]}
    assert run(wd, stage) == 0
    for name in [*man["outputs"], f"manifest.{stage}.json"]:
        assert (wd / name).read_bytes() == (pipeline / name).read_bytes(), name
    for name, blob in inputs_before.items():
        assert (wd / name).read_bytes() == blob  # inputs untouched


def _error(capsys):
    return json.loads(capsys.readouterr().err.strip().splitlines()[-1])


def test_eval_id_mismatch_exit_code(pipeline, tmp_path, capsys):
    wd = tmp_path / "copy"
    shutil.copytree(pipeline, wd)
    lines = (wd / "predictions.jsonl").read_text().splitlines()
    dropped = json.loads(lines[0])["paper_id"]
    kept = [ln for ln in lines if json.loads(ln)["paper_id"] != dropped]
    (wd / "predictions.jsonl").write_text("\n".join(kept) + "\n")
    assert run(wd, "eval") == 8
    assert _error(capsys)["error"] == "test_set_mismatch"


def test_error_exit_codes_are_distinct(pipeline, tmp_path, capsys):
    codes = {}
    codes["missing"] = main(["eval", "--workdir", str(tmp_path / "empty")])
    bad = tmp_path / "bad"
    bad.mkdir()
    (bad / "corpus.jsonl.gz").write_text("not gzip")
    codes["schema"] = main(["ingest", "--workdir", str(bad)])
    codes["dimension"] = run(pipeline, "predict", "--horizon", "4")
    cfg = tmp_path / "c.toml"
    cfg.write_text("[train]\nepochz = 3\n")
    codes["config"] = main(["train", "--config", str(cfg), "--workdir", str(tmp_path)])
    capsys.readouterr()
    assert codes == {"missing": 3, "schema": 4, "dimension": 5, "config": 2}


def test_flag_overrides(tmp_path, capsys):
    assert main(["show-config", "--seed", "4", "--epochs", "7", "--epsilon", "0.5",
                 "--train-years", "4", "--horizon", "3"]) == 0
    cfg = json.loads(capsys.readouterr().out)
    assert cfg["seed"] == 4 and cfg["train"]["epochs"] == 7 and cfg["eval"]["epsilon"] == 0.5
    assert cfg["data"]["train_years"] == 4 and cfg["eval"]["horizons"] == [1, 2, 3]


def test_console_script_version():
    out = subprocess.run([sys.executable, "-m", "ltccp.cli", "--version"],
                         capture_output=True, text=True, check=True)
    assert out.stdout.strip() == f"ltccp {__version__}"
