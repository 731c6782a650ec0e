import json

import numpy as np
import pytest

from deepdof.cli import ExperimentConfig, TeacherSpec, main, run_bias_variance_sweep, run_rate_sweep
from deepdof.cli.experiments import log_log_slope
from deepdof.cli.provenance import config_hash, provenance, read_csv, task_seed, write_csv
from deepdof.netcore import FiniteNetwork, NormBudget
from deepdof.teacher import Dataset, TeacherNetwork, generate_dataset


# configuration

def test_config_round_trip(tmp_path):
    cfg = ExperimentConfig(n_grid=[100, 200, 400, 800], seeds=6, train={"max_epochs": 10})
    p = tmp_path / "cfg.json"
    cfg.save(p)
    back = ExperimentConfig.load(p)
    assert back.to_dict() == cfg.to_dict()
    assert isinstance(back.teacher, TeacherSpec)


def test_config_validation(tmp_path):
    with pytest.raises(ValueError):
        ExperimentConfig(n_grid=[100, 100, 200])
    with pytest.raises(ValueError):
        ExperimentConfig(regimes=["medium"])
    with pytest.raises(ValueError):
        ExperimentConfig(sigma=-1)
    with pytest.raises(ValueError):
        ExperimentConfig(train={"step_size": -1})
    with pytest.raises(TypeError):
        ExperimentConfig(train={"momentum": 0.9})
    with pytest.raises(FileNotFoundError):
        ExperimentConfig(teacher={"file": str(tmp_path / "missing.json")})
    with pytest.raises(ValueError):
        ExperimentConfig.from_dict({"n_grid": [1, 2], "colour": "red"})


def test_teacher_spec_loads_file(tmp_path):
    t = TeacherSpec(L=2, resolutions=[8], decay_s=None).build()
    t.save(tmp_path / "t.json")
    assert TeacherSpec(file=str(tmp_path / "t.json")).build() == t


# seeds and provenance

def test_task_seeds_are_order_free_and_distinct():
    a = [task_seed(7, 4, i, j) for i in range(5) for j in range(5)]
    b = [task_seed(7, 4, i, j) for i in range(5) for j in range(5)]
    assert a == b and len(set(a)) == 25
    assert task_seed(7, 4, 1) != task_seed(8, 4, 1)


def test_provenance_header(tmp_path):
    prov = provenance("x", {"a": 1}, 3)
    assert set(prov) == {"command", "config_hash", "seed", "version"}
    assert prov["config_hash"] == config_hash({"a": 1}) != config_hash({"a": 2})
    p = write_csv(tmp_path / "o.csv", ("u", "v"), [(1, np.float64(0.1)), (2, [1, 2])], prov)
    first = p.read_text().splitlines()[0]
    assert first.startswith("# provenance: ") and json.loads(first[14:]) == prov
    assert read_csv(p) == [{"u": "1", "v": "0.1"}, {"u": "2", "v": "1 2"}]


def test_log_log_slope():
    n = np.array([10, 100, 1000])
    s, se = log_log_slope(n, 3 * n ** -0.5)
    assert s == pytest.approx(-0.5) and se == pytest.approx(0.0, abs=1e-12)


# sweeps

def _small_cfg(**kw):
    base = dict(teacher={"L": 2, "resolutions": [16], "d_x": 2, "budget": {"R": 1.0, "R_b": 0.5},
                         "decay_s": None, "seed": 0},
                n_grid=[64, 128, 256, 512], seeds=5, sigma=0.0, n_fit=512, n_eval=2000,
                train={"max_epochs": 20})
    base.update(kw)
    return ExperimentConfig(**base)


def test_rate_sweep_noiseless_negative_control():
    res = run_rate_sweep(_small_cfg())
    for regime in ("tight", "loose"):
        s = res.summary[regime]
        assert s["n"] == [64, 128, 256, 512]
        assert max(s["median_err2"]) < 1e-3
        assert s["slope"] is not None and s["predicted_exponent"] < 0
    assert all(c["error"] == "" for c in res.cells)
    assert set(res.regime_comparison) == {"n", "tight", "loose", "tight_not_worse"}


def test_short_grid_gives_no_slope(caplog):
    res = run_rate_sweep(_small_cfg(n_grid=[64, 128], seeds=1, regimes=["tight"]))
    assert res.summary["tight"]["slope"] is None
    assert "fewer than 3" in res.summary["tight"]["flag"]
    assert "expects at least 4" in caplog.text


def test_rate_sweep_is_reproducible():
    cfg = _small_cfg(n_grid=[64, 128, 256], seeds=2, sigma=0.5, regimes=["tight"])
    a, b = run_rate_sweep(cfg), run_rate_sweep(cfg)
    assert a.to_dict() == b.to_dict()


def test_failed_cells_are_recorded(monkeypatch):
    import deepdof.cli.experiments as ex
    real = ex.train

    def flaky(data, *args, **kw):
        if data.n == 128:
            raise RuntimeError("boom")
        return real(data, *args, **kw)

    monkeypatch.setattr(ex, "train", flaky)
    res = run_rate_sweep(_small_cfg(regimes=["tight"], seeds=5))
    bad = [c for c in res.cells if c["error"]]
    assert len(bad) == 5 and all("boom" in c["error"] for c in bad)
    assert res.summary["tight"]["n"] == [64, 256, 512]
    assert res.summary["tight"]["slope"] is not None


@pytest.fixture(scope="module")
def bv_rows():
    cfg = ExperimentConfig(teacher={"L": 2, "resolutions": [128], "d_x": 4, "decay_s": 0.5, "seed": 0},
                           seeds=3, sigma=1.0, n_fit=1024, n_eval=2000, n_bv=128,
                           m_grid=[1, 2, 4, 8, 16, 32, 64, 128, 256],
                           train={"max_epochs": 300, "step_size": 0.1})
    rows, _ = run_bias_variance_sweep(cfg)
    return [dict(zip(("m", "lam", "bias", "excess", "var", "d1", "d2", "ok"), r)) for r in rows]


def test_bias_dominates_at_minimal_width(bv_rows):
    assert bv_rows[0]["m"] == 1 and bv_rows[0]["bias"] > bv_rows[0]["var"]


def test_bound_columns_move_in_opposite_directions(bv_rows):
    d1 = [r["d1"] for r in bv_rows]
    d2 = [r["d2"] for r in bv_rows]
    assert all(a > b for a, b in zip(d1, d1[1:]))
    assert all(a < b for a, b in zip(d2, d2[1:]))


@pytest.fixture(scope="module")
def bv_rows_small_n():
    # few samples and widths far beyond them, trained long enough to fit the noise
    cfg = ExperimentConfig(teacher={"L": 2, "resolutions": [128], "d_x": 4, "decay_s": 0.5, "seed": 0},
                           seeds=3, sigma=1.0, n_fit=1024, n_eval=2000, n_bv=64,
                           m_grid=[1, 4, 16, 64, 256, 1024],
                           train={"max_epochs": 2000, "step_size": 0.1})
    rows, _ = run_bias_variance_sweep(cfg)
    return [dict(zip(("m", "lam", "bias", "excess", "var", "d1", "d2", "ok"), r)) for r in rows]


def test_every_bias_variance_cell_succeeds(bv_rows, bv_rows_small_n):
    assert all(r["ok"] == 3 for r in bv_rows + bv_rows_small_n)


def test_excess_risk_rises_at_large_width_small_n(bv_rows_small_n):
    excess = [r["excess"] for r in bv_rows_small_n]
    assert excess[-1] > min(excess)


# command line

def test_cli_end_to_end(tmp_path):
    out = str(tmp_path)
    assert main(["gen-teacher", "--L", "2", "--resolutions", "64", "--decay-s", "0.5", "--seed", "1",
                 "--out", out]) == 0
    tfile = tmp_path / "teacher.json"
    t = TeacherNetwork.from_dict(json.loads(tfile.read_text()))
    assert t.L == 2 and t.resolutions == (4, 64, 1)

    assert main(["dof-curve", "--teacher", str(tfile), "--xsample", "512", "--out", out]) == 0
    rows = read_csv(tmp_path / "dof_curve.csv")
    assert {"layer", "lambda", "dof", "dof_from_decay"} == set(rows[0])
    dofs = [float(r["dof"]) for r in rows]
    assert all(a < b for a, b in zip(dofs, dofs[1:]))

    assert main(["plan", "--teacher", str(tfile), "--n", "1000", "--xsample", "512", "--out", out]) == 0
    plan = json.loads((tmp_path / "plan.json").read_text())
    assert set(plan) == {"provenance", "tight", "loose"}

    assert main(["discretize", "--teacher", str(tfile), "--lambda", "0.05", "--xsample", "512", "--out", out]) == 0
    rep = json.loads((tmp_path / "discretize_report.json").read_text())
    assert rep["in_class"] and rep["l2_error"] >= 0 and rep["delta1_bound"] > 0
    fstar = FiniteNetwork.from_dict(json.loads((tmp_path / "fstar.json").read_text()))

    generate_dataset(t, 100, 0.2, seed=0).save(tmp_path / "data.csv")
    (tmp_path / "budget.json").write_text(json.dumps(t.budget.to_dict()))
    assert main(["train", "--data", str(tmp_path / "data.csv"), "--budget", str(tmp_path / "budget.json"),
                 "--fstar", str(tmp_path / "fstar.json"), "--init", "fstar", "--epochs", "10", "--out", out]) == 0
    hist = [float(r["risk"]) for r in read_csv(tmp_path / "history.csv")]
    assert all(b <= a for a, b in zip(hist, hist[1:]))
    fhat = FiniteNetwork.from_dict(json.loads((tmp_path / "fhat.json").read_text()))
    assert fhat.widths == fstar.widths and fhat.in_class(t.budget)

    assert main(["bounds-report", "--arch", json.dumps({"widths": list(fstar.widths)}),
                 "--budget", json.dumps(t.budget.to_dict()), "--lambdas", "0.05", "--n", "100",
                 "--out", out]) == 0
    br = json.loads((tmp_path / "bound_report.json").read_text())
    assert br["delta1"] == pytest.approx(rep["delta1_bound"])
    assert len(read_csv(tmp_path / "covering.csv")) == 4


def test_cli_sweeps_and_reproducibility(tmp_path):
    cfg = _small_cfg(n_grid=[64, 128, 256, 512], seeds=1, m_grid=[1, 4], n_bv=64, sigma=0.3)
    cfg.save(tmp_path / "cfg.json")
    for d in ("a", "b"):
        assert main(["rate-sweep", "--config", str(tmp_path / "cfg.json"), "--out", str(tmp_path / d)]) == 0
        assert main(["bv-sweep", "--config", str(tmp_path / "cfg.json"), "--out", str(tmp_path / d)]) == 0
    for name in ("rate_cells.csv", "rate_summary.json", "bias_variance.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    summ = json.loads((tmp_path / "a" / "rate_summary.json").read_text())
    assert summ["provenance"]["config_hash"] == config_hash(cfg.to_dict())


def test_cli_threads_do_not_change_results(tmp_path):
    cfg = _small_cfg(n_grid=[64, 128, 256], seeds=2, sigma=0.3, regimes=["tight"])
    cfg.save(tmp_path / "cfg.json")
    main(["rate-sweep", "--config", str(tmp_path / "cfg.json"), "--out", str(tmp_path / "a")])
    main(["rate-sweep", "--config", str(tmp_path / "cfg.json"), "--out", str(tmp_path / "b"), "--threads", "2"])
    assert (tmp_path / "a" / "rate_cells.csv").read_bytes() == (tmp_path / "b" / "rate_cells.csv").read_bytes()


def test_cli_reports_bad_input(tmp_path, capsys):
    assert main(["dof-curve", "--teacher", str(tmp_path / "nope.json")]) == 2
    with pytest.raises(SystemExit):
        main(["no-such-command"])
