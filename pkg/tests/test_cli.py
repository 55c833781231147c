import json

import pytest

from dtcmr.harness.cli import EXIT_INVALID, EXIT_OK, main

from .conftest import SMALL_COHORT


@pytest.fixture(scope="module")
def cohort(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "cfg.json"
    cfg.write_text(json.dumps(SMALL_COHORT))
    assert main(["phantom", "generate", "--config", str(cfg), "--out", str(root / "c"),
                 "--n", "4", "--seed", "2"]) == EXIT_OK
    return root / "c"


def test_generate_layout(cohort):
    assert (cohort / "cohort.json").exists()
    sub = cohort / "sub-000"
    assert {p.name for p in sub.iterdir()} >= {"dwi.dtcf", "truth.dtcf", "manifest.json"}


def test_repetitions_byte_identical(cohort, tmp_path):
    args = ["study", "repetitions", "--cohort", str(cohort), "--budgets", "1BH",
            "--schemes", "F,R"]
    assert main(args + ["--out", str(tmp_path / "a.csv")]) == EXIT_OK
    assert main(args + ["--out", str(tmp_path / "b.csv")]) == EXIT_OK
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()
    assert (tmp_path / "a_ks.csv").read_bytes() == (tmp_path / "b_ks.csv").read_bytes()


def test_render_svg(cohort, tmp_path):
    out = tmp_path / "m.svg"
    assert main(["report", "render", "--maps", str(cohort / "sub-001"), "--out", str(out)]) == 0
    text = out.read_text()
    assert text.startswith("<?xml") and "<svg" in text
    assert "HA (deg)" in text and "sub-001" in text
    again = tmp_path / "n.svg"
    main(["report", "render", "--maps", str(cohort / "sub-001"), "--out", str(again)])
    assert again.read_text().replace("n.svg", "m.svg") == text


def test_render_truth_container(cohort, tmp_path):
    out = tmp_path / "t.svg"
    assert main(["report", "render", "--maps", str(cohort / "sub-000" / "truth.dtcf"),
                 "--out", str(out)]) == EXIT_OK


def test_invalid_inputs_exit_2(tmp_path, capsys):
    assert main(["study", "repetitions", "--cohort", str(tmp_path / "none"),
                 "--out", str(tmp_path / "x.csv")]) == EXIT_INVALID
    assert "error" in capsys.readouterr().err
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["phantom", "generate", "--config", str(bad), "--out", str(tmp_path / "c"),
                 "--n", "1"]) == EXIT_INVALID
    assert main(["report", "render", "--maps", str(tmp_path), "--out",
                 str(tmp_path / "x.svg")]) == EXIT_INVALID


def test_denoise_invalid_ladder(cohort, tmp_path):
    assert main(["study", "denoise", "--cohort", str(cohort), "--ladder", "NOPE",
                 "--out", str(tmp_path / "d.csv")]) == EXIT_INVALID


def test_bad_train_config(cohort, tmp_path):
    cfg = tmp_path / "t.json"
    cfg.write_text(json.dumps({"no_such_field": 1}))
    assert main(["study", "denoise", "--cohort", str(cohort), "--ladder", "WGUF",
                 "--train-config", str(cfg), "--out", str(tmp_path / "d.csv")]) == EXIT_INVALID


def test_check_gradients(capsys):
    assert main(["check", "gradients"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "FAIL" not in out and out.count("PASS") >= 7
