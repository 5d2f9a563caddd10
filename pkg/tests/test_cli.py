import csv
import json

import numpy as np
import pytest

from crossdecode.cli import RunConfig, load_report, main
from crossdecode.errors import ConfigError

SPEC = {"n_random": 2, "n_both": 3, "n_subdatasets": 4, "scale": 1.0, "seed": 1}


@pytest.fixture
def spec_file(tmp_path):
    p = tmp_path / "spec.json"
    p.write_text(json.dumps(SPEC))
    return p


def _test_args(spec_file, out, *extra):
    return ["test", "--spec", str(spec_file), "--seeds", "1", "--lag", "2", "--out", str(out), *extra]


def test_simulate_and_test(tmp_path, spec_file):
    assert main(["simulate", "--spec", str(spec_file), "--out", str(tmp_path / "sim")]) == 0
    assert (tmp_path / "sim" / "session.csv").exists()
    manifest = json.loads((tmp_path / "sim" / "manifest.json").read_text())
    assert len(manifest["neurons"]) == 5
    out = tmp_path / "run"
    code = main(["test", "--data", str(tmp_path / "sim" / "session.csv"), "--seeds", "1", "--lag", "2",
                 "--no-matching", "--no-stratification", "--no-vif", "--alt-tests", "t2,mmd", "--out", str(out)])
    assert code == 0
    rep = load_report(out / "report.json")
    div = rep["divergence"]["poisson"]
    for key in ("p_value", "p_fixed_vif", "p_est_vif", "p_no_vif", "p_no_matching", "p_no_stratification"):
        assert 0 <= div[key] <= 1
    assert set(rep["alt_tests"]) == {"t2", "mmd"}
    for name in ("accuracies.csv", "tuning_curves.csv", "autocov.csv"):
        with (out / name).open() as fh:
            assert len(list(csv.reader(fh))) > 1
    assert not list(tmp_path.glob(".partial-*"))


def test_determinism(tmp_path, spec_file):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(_test_args(spec_file, a)) == 0
    assert main(_test_args(spec_file, b)) == 0
    assert (a / "report.json").read_bytes() == (b / "report.json").read_bytes()


def test_invalid_decoder(tmp_path, spec_file, capsys):
    assert main(_test_args(spec_file, tmp_path / "x", "--decoders", "knn")) == 1
    assert "knn" in capsys.readouterr().err
    assert not (tmp_path / "x").exists()


def test_unknown_flag_and_missing_file(tmp_path):
    assert main(["test", "--bogus"]) == 1
    assert main(["test", "--data", str(tmp_path / "none.csv"), "--out", str(tmp_path / "o")]) == 1


def test_infeasible_exit_code(tmp_path):
    p = tmp_path / "spec.json"
    p.write_text(json.dumps({**SPEC, "n_subdatasets": 1}))
    out = tmp_path / "o"
    assert main(_test_args(p, out)) == 2
    assert not out.exists()
    assert not list(tmp_path.glob(".partial-*"))


def test_config_file_and_unknown_keys(tmp_path, spec_file):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"simulate": SPEC, "seeds": 1, "lag": 2}))
    assert main(["test", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 0
    cfg.write_text(json.dumps({"simulate": SPEC, "seedz": 1}))
    assert main(["test", "--config", str(cfg), "--out", str(tmp_path / "o2")]) == 1
    with pytest.raises(ConfigError):
        RunConfig(data="a.csv", simulate=SPEC)


def test_load_report_version(tmp_path):
    p = tmp_path / "r.json"
    p.write_text(json.dumps({"schema_version": 99}))
    with pytest.raises(ValueError, match="schema"):
        load_report(p)


def test_vif_subcommand(tmp_path, capsys):
    p = tmp_path / "e.csv"
    p.write_text("error\n" + "\n".join(str(v) for v in np.tile([0, 1], 30)) + "\n")
    assert main(["vif", "--in", str(p), "--out", str(tmp_path / "g.csv"), "--max-lag", "5"]) == 0
    assert json.loads(capsys.readouterr().out)["k_hat"] == 1
    with (tmp_path / "g.csv").open() as fh:
        assert len(list(csv.reader(fh))) == 7
    p.write_text("error\n0\n2\n1\n0\n")
    assert main(["vif", "--in", str(p), "--out", str(tmp_path / "g.csv")]) == 1


def test_label_subcommand(tmp_path):
    p = tmp_path / "traj.csv"
    loc = np.r_[np.linspace(0, 200, 400), np.linspace(200, 0, 400)]
    with p.open("w") as fh:
        fh.write("t,location\n")
        for i, v in enumerate(loc):
            fh.write(f"{i},{v}\n")
    out = tmp_path / "lab.csv"
    assert main(["label-direction", "--in", str(p), "--out", str(out), "--sg-window", "51"]) == 0
    with out.open() as fh:
        rows = list(csv.DictReader(fh))
    dirs = [r["direction"] for r in rows]
    assert dirs[10] == "F" and dirs[-10] == "B"
    bad = tmp_path / "bad.csv"
    bad.write_text("t,pos\n0,1\n")
    assert main(["label-direction", "--in", str(bad), "--out", str(out)]) == 1


def test_alt_subcommand(tmp_path, spec_file):
    main(["simulate", "--spec", str(spec_file), "--out", str(tmp_path / "sim")])
    out = tmp_path / "alt.json"
    assert main(["alt-test", "--data", str(tmp_path / "sim" / "session.csv"), "--test", "ks",
                 "--stratify", "location", "--out", str(out)]) == 0
    d = json.loads(out.read_text())
    assert d["n_tests"] == 3 * 5 and 0 <= d["corrected_p"] <= 1
    assert main(["alt-test", "--data", str(tmp_path / "sim" / "session.csv"), "--test", "anova",
                 "--out", str(out)]) == 1


def test_bad_session_file(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("t,context,subdataset,location,direction,n0\n0,task,0,7,F,1\n")
    assert main(["alt-test", "--data", str(p), "--test", "t2", "--out", str(tmp_path / "o.json")]) == 1


def test_sweep_subcommand(tmp_path):
    out = tmp_path / "sw.csv"
    pv = tmp_path / "pv.csv"
    assert main(["sweep-type1", "--n-both", "2", "--scales", "0.5", "--seeds", "1", "--tests", "t2,ks",
                 "--out", str(out), "--pvalues-out", str(pv)]) == 0
    with out.open() as fh:
        rows = list(csv.DictReader(fh))
    assert [r["test"] for r in rows] == ["t2", "ks"]
    assert pv.exists()
    assert main(["sweep-type1", "--tests", "nope", "--out", str(out)]) == 1
