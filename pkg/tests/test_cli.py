import csv
import json
import os

import numpy as np
import pytest

from torusdiff import cli
from torusdiff.simulate import read_csv

DATA = os.path.join(os.path.dirname(__file__), "..", "data")
WN1 = os.path.join(DATA, "wn1d.json")
WN2 = os.path.join(DATA, "wn2d.json")
SAMPLE = os.path.join(DATA, "wn1d_sample.csv")


def run(*argv):
    return cli.main([str(a) for a in argv])


def test_simulate_rows_and_reproducibility(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run("simulate", "--model", WN1, "--t-end", 10, "--dt", 0.001, "--seed", 7, "--out", a) == 0
    assert run("simulate", "--model", WN1, "--t-end", 10, "--dt", 0.001, "--seed", 7, "--out", b) == 0
    assert read_csv(a).n_obs == 10001
    assert a.read_bytes() == b.read_bytes()
    meta = json.loads((tmp_path / "a.meta.json").read_text())
    assert meta["seed"] == 7 and meta["rows"] == 10001 and "version" in meta


def test_simulate_missing_model(tmp_path, capsys):
    code = run("simulate", "--model", tmp_path / "nope.json", "--t-end", 1, "--outdir", tmp_path)
    assert code == 2
    assert "nope.json" in capsys.readouterr().err


def test_no_silent_overwrite(tmp_path, capsys):
    out = tmp_path / "x.csv"
    assert run("simulate", "--model", WN1, "--t-end", 0.1, "--out", out) == 0
    assert run("simulate", "--model", WN1, "--t-end", 0.1, "--out", out) == 2
    assert "overwrite" in capsys.readouterr().err
    assert run("simulate", "--model", WN1, "--t-end", 0.1, "--out", out, "--force") == 0


def test_outdir_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTDIR_ENV, str(tmp_path / "env"))
    assert run("simulate", "--model", WN1, "--t-end", 0.1, "--seed", 3) == 0
    assert (tmp_path / "env" / "simulate_seed3.csv").exists()


def test_inline_model_and_theta0(tmp_path):
    model = open(os.path.join(DATA, "vm1d.json")).read()
    out = tmp_path / "v.csv"
    assert run("simulate", "--model", model, "--t-end", 0.5, "--theta0", 1.0, "--out", out) == 0
    assert read_csv(out).points[0, 0] == 1.0
    assert run("simulate", "--model", model, "--t-end", 0.5, "--theta0", "1,2", "--out", out, "--force") == 2


def test_fit_wou_on_sample(tmp_path):
    out = tmp_path / "fit.json"
    assert run("fit", "--traj", SAMPLE, "--family", "wn", "--likelihood", "wou", "--fix", "sigma=1",
               "--out", out) == 0
    res = json.loads(out.read_text())
    assert res["converged"] is True
    assert res["likelihood_kind"] == "WOU"
    assert res["meta"]["config"]["optimizer"]["max_evals"] == 2000
    assert "wall_time" not in res


def test_fit_is_byte_reproducible(tmp_path):
    out = tmp_path / "a.json"
    runs = []
    for _ in range(2):
        assert run("fit", "--traj", SAMPLE, "--family", "wn", "--likelihood", "E", "--fix", "sigma=1",
                   "--out", out, "--force") == 0
        runs.append(out.read_bytes())
    assert runs[0] == runs[1]


def test_fit_unknown_likelihood(tmp_path, capsys):
    code = run("fit", "--traj", SAMPLE, "--family", "wn", "--likelihood", "magic", "--outdir", tmp_path)
    assert code == 2
    assert "magic" in capsys.readouterr().err


def test_fit_mixture_pde_workflow(tmp_path):
    from torusdiff import models, simulate as sim
    m = models.model_from_json(open(os.path.join(DATA, "mivm1d.json")).read())
    traj = tmp_path / "mix.csv"
    sim.write_csv(sim.subsample(sim.euler_maruyama(m, 0.0, 30.0, 1e-3, seed=3), 100), traj)
    out = tmp_path / "fit.json"
    code = run("fit", "--traj", traj, "--family", "mivm", "--likelihood", "pde", "--fix", "weights=smle",
               "--Mx", 100, "--max-evals", 300, "--out", out)
    assert code in (0, 3)
    res = json.loads(out.read_text())
    assert set(res["fixed"]) == {"weights"}
    assert res["params"]["weights"] == res["start"]["weights"]


def test_tpd_command(tmp_path):
    out = tmp_path / "t.csv"
    assert run("tpd", "--model", WN1, "--kind", "wou", "--delta", 0.5, "--theta0", 0.0, "--Mx", 200, "--out", out) == 0
    arr = np.loadtxt(out, delimiter=",", skiprows=1)
    assert arr.shape == (200, 2)
    assert np.sum(arr[:, 1]) * 2 * np.pi / 200 == pytest.approx(1.0, abs=1e-6)
    assert run("tpd", "--model", WN1, "--kind", "PDE", "--delta", 0.5, "--theta0", 0.0, "--Mx", 200,
               "--out", out, "--force") == 0


def test_pde_command_2d(tmp_path):
    out = tmp_path / "p.csv"
    assert run("pde", "--model", WN2, "--Mx", 40, "--My", 40, "--t", 0.25, "--theta0", "0,0",
               "--sigma0", 0.3, "--out", out) == 0
    rows = list(csv.reader(open(out)))
    assert rows[0] == ["t", "x", "y", "u"]
    assert len(rows) == 1 + 2 * 40 * 40  # initial and final snapshots
    assert {r[0] for r in rows[1:]} == {"0", "0.25"}
    meta = json.loads((tmp_path / "p.meta.json").read_text())
    assert meta["grid"] == [40, 40] and meta["mass_drift"] < 1e-9


def test_kl_shape(tmp_path):
    out = tmp_path / "kl.csv"
    assert run("kl", "--model", WN1, "--methods", "S,E,SO,WOU", "--t", "0.01:2:50", "--Mx", 80,
               "--sources", 3, "--mt-per-time", 60, "--label", "wn1d", "--out", out) == 0
    rows = list(csv.reader(open(out)))
    assert rows[0] == ["model", "t", "method", "value"]
    assert len(rows) == 1 + 4 * 50
    assert {r[2] for r in rows[1:]} == {"S", "E", "SO", "WOU"}


def test_re_layout(tmp_path):
    out = tmp_path / "re.csv"
    assert run("re", "--scenario", "wn1d_a05_s1", "--deltas", "0.05,0.2,0.5,1.0", "--J", 2, "--n", 20,
               "--max-evals", 200, "--threads", 1, "--out", out) == 0
    lay = list(csv.reader(open(tmp_path / "re_table.csv")))
    assert lay[0] == ["scenario", "delta", "E", "SO", "WOU"]
    assert [r[1] for r in lay[1:]] == ["0.05", "0.2", "0.5", "1"]
    meta = json.loads((tmp_path / "re.meta.json").read_text())
    assert meta["J"] == 2 and meta["seed"] == 0
    assert run("re", "--scenario", "bogus", "--deltas", "1", "--out", out, "--force") == 2
    assert run("re", "--scenario", "wn1d_a05_s1", "--deltas", "1", "--J", 1, "--out", out, "--force") == 2


def test_np_command(tmp_path):
    out = tmp_path / "np.csv"
    assert run("np", "--traj", SAMPLE, "--model", WN1, "--points", 50, "--out", out) == 0
    rows = list(csv.reader(open(out)))
    assert rows[0] == ["theta1", "drift1", "parametric1", "diff1"]
    assert len(rows) == 51
    meta = json.loads((tmp_path / "np.meta.json").read_text())
    assert set(meta["bandwidths"]) == {"drift", "diff"}


def test_rerun_reproduces(tmp_path):
    out = tmp_path / "s.csv"
    assert run("simulate", "--model", WN1, "--t-end", 1, "--seed", 5, "--out", out) == 0
    first = out.read_bytes()
    assert run("rerun", tmp_path / "s.meta.json") == 2  # refuses to overwrite
    assert run("rerun", tmp_path / "s.meta.json", "--force") == 0
    assert out.read_bytes() == first
    assert run("rerun", tmp_path / "missing.meta.json") == 2


def test_usage_errors():
    assert run("simulate") == 2
    assert run("--version") == 0
