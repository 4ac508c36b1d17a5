import json
import math

import numpy as np
import pytest

from probnet.cli import main
from probnet.model import model_to_dict
from probnet.netspec import fixture_path

from .helpers import random_model

S3 = str(fixture_path("paass_s3"))


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture
def marginal_spec(tmp_path):
    p = tmp_path / "marginal.pnet"
    p.write_text("var x1;\nrule P(x1) = 0.8 n=20;\n")
    return p


@pytest.fixture
def model_file(tmp_path):
    p = tmp_path / "model.json"
    p.write_text(json.dumps(model_to_dict(random_model(np.random.default_rng(1), 6, 8))))
    return p


def test_validate(capsys, tmp_path):
    code, out, _ = run(capsys, "validate", S3)
    assert code == 0
    assert "variables: 5 (1 hidden)" in out
    bad = tmp_path / "bad.pnet"
    bad.write_text("var A;\nrule P(A) = 1.3 n=10;\nfoo;\n")
    code, out, err = run(capsys, "validate", bad)
    assert code == 1
    assert "2:13: PN003" in err and "3:1: PN001" in err
    assert out == ""


def test_missing_file_is_a_diagnostic(capsys, tmp_path):
    code, _, err = run(capsys, "validate", tmp_path / "nope.pnet")
    assert code == 1 and "error" in err


def test_fit_is_reproducible(capsys, tmp_path):
    outs = []
    for name in ("a", "b"):
        code, _, _ = run(capsys, "fit", S3, "--seed", 7, "--m-step", "pseudo",
                         "--max-iterations", 40, "--replication", 2, "--out", tmp_path / name)
        # 40 iterations is too few for stationarity
        assert code == 2
        outs.append(tmp_path / name)
    files = sorted(p.name for p in outs[0].iterdir())
    assert files == ["evidence.csv", "lambda_trace.csv", "loglik_trace.csv", "manifest.json",
                     "model.json", "report.json"]
    for f in files:
        if f != "manifest.json":
            assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes()
    manifest = json.loads((outs[0] / "manifest.json").read_text())
    assert manifest["seed"] == 7 and manifest["config"]["m_step"] == "pseudo-likelihood"
    assert manifest["inputs"][0]["sha256"]


def test_manifest_reproduces_the_run(capsys, tmp_path):
    run(capsys, "fit", S3, "--seed", 3, "--max-iterations", 20, "--out", tmp_path / "a")
    manifest = json.loads((tmp_path / "a" / "manifest.json").read_text())
    argv = [a if a != str(tmp_path / "a") else str(tmp_path / "b") for a in manifest["argv"]]
    main(argv)
    capsys.readouterr()
    assert (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()


def test_seed_is_recorded_when_omitted(capsys, tmp_path):
    run(capsys, "fit", S3, "--max-iterations", 3, "--out", tmp_path)
    manifest = json.loads((tmp_path / "manifest.json").read_text())
    assert isinstance(manifest["seed"], int)


def test_fit_exact(capsys, marginal_spec, tmp_path):
    code, out, _ = run(capsys, "fit-exact", marginal_spec, "--out", tmp_path / "o")
    assert code == 0
    res = json.loads(out)
    assert res["model"]["lambda"][0] == pytest.approx(math.log(4), abs=1e-6)
    assert res["max_residual"] < 1e-6
    saved = json.loads((tmp_path / "o" / "model.json").read_text())
    assert saved["lambda"][0] == pytest.approx(1.3863, abs=1e-4)


def test_fit_exact_flags_inconsistent_rules(capsys, tmp_path):
    p = tmp_path / "bad.pnet"
    p.write_text("var a;\nrule P(a) = 0.9 n=10;\nrule P(!a) = 0.9 n=10;\n")
    code, out, _ = run(capsys, "fit-exact", p, "--max-iter", 300)
    assert code == 2
    assert json.loads(out)["consistent"] is False


def test_sample_and_table(capsys, model_file, tmp_path):
    code, out, _ = run(capsys, "sample", model_file, "--n", 50, "--seed", 1, "--chains", 4,
                       "--clamp", "x1=1")
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "x1,x2,x3,x4,x5,x6" and len(lines) == 51
    assert all(l.startswith("1,") for l in lines[1:])
    _, again, _ = run(capsys, "sample", model_file, "--n", 50, "--seed", 1, "--chains", 4,
                      "--clamp", "x1=1")
    assert again == out
    code, _, _ = run(capsys, "sample", model_file, "--clamp", "x9=1")
    assert code == 1
    code, out, _ = run(capsys, "table", model_file)
    rows = out.splitlines()
    assert code == 0 and len(rows) == 65
    assert sum(float(r.split(",")[-1]) for r in rows[1:]) == pytest.approx(1.0)


def test_query_exact_and_mc_agree(capsys, model_file):
    code, out, _ = run(capsys, "query", model_file, "x2 and !x3", "--given", "x1")
    assert code == 0
    exact = json.loads(out)["probability"]
    code, out, _ = run(capsys, "query", model_file, "x2 and !x3", "--given", "x1", "--mc",
                       "--samples", 40000, "--seed", 2)
    mc = json.loads(out)
    assert mc["method"] == "mc"
    # a little slack for the correlation between thinned draws
    assert abs(mc["probability"] - exact) < 3 * mc["stderr"] * 1.5


def test_query_errors(capsys, model_file):
    code, _, _ = run(capsys, "query", model_file, "x2 and")
    assert code == 1
    code, _, _ = run(capsys, "query", model_file, "x2", "--given", "x1 and !x1")
    assert code == 2


def test_capacity_error_exit_code(capsys, tmp_path, monkeypatch):
    p = tmp_path / "m.json"
    p.write_text(json.dumps(model_to_dict(random_model(np.random.default_rng(0), 5, 3))))
    monkeypatch.setenv("PROBNET_ENUM_LIMIT", "4")
    code, _, err = run(capsys, "table", p)
    assert code == 2 and "PROBNET_ENUM_LIMIT" in err


def test_compare_rules_only(capsys, tmp_path):
    p = tmp_path / "rules.pnet"
    p.write_text("var a b;\nrule P(a) = 0.7 n=10;\nrule P(b | a) = 0.2 n=10;\n")
    code, out, _ = run(capsys, "compare", p, "--seed", 0, "--out", tmp_path / "o")
    assert code == 0
    res = json.loads((tmp_path / "o" / "compare.json").read_text())
    assert [r["rule"] for r in res["rules"]] == ["P(a)", "P(b | a)"]
    for r in res["rules"]:
        assert r["hard_discrepancy"] < 1e-4
        assert math.isfinite(r["soft_discrepancy"])
    assert (tmp_path / "o" / "soft_distribution.csv").exists()
    assert "P(b | a)" in out


def test_compare_on_worked_example(capsys, tmp_path):
    code, out, _ = run(capsys, "compare", S3, "--seed", 1, "--max-iterations", 150,
                       "--replication", 2, "--out", tmp_path)
    assert code in (0, 2)
    res = json.loads((tmp_path / "compare.json").read_text())
    assert [r["rule"] for r in res["rules"]] == ["P(x1)", "P(x4 | x1 and x2)"]
    assert all(r["hard_discrepancy"] < 1e-4 for r in res["rules"])
    assert 0.0 <= res["total_variation"] <= 1.0
    for name in ("soft_distribution.csv", "hard_distribution.csv", "manifest.json"):
        assert (tmp_path / name).exists()


def test_gradcheck(capsys):
    code, out, _ = run(capsys, "gradcheck", S3, "--instances", 3)
    assert code == 0
    assert "pseudo-likelihood max relative error" in out


def test_workers_do_not_change_results(capsys, tmp_path):
    for w in (1, 3):
        run(capsys, "--workers", w, "fit", S3, "--seed", 2, "--max-iterations", 10,
            "--replication", 40, "--out", tmp_path / str(w))
    assert (tmp_path / "1" / "report.json").read_text() == (tmp_path / "3" / "report.json").read_text()
