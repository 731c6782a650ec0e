import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from deepdof.netcore import Activation, NormBudget, sup_norm_bound
from deepdof.spectrum import feature_spectrum, fit_decay
from deepdof.teacher import (Dataset, InputLaw, TeacherNetwork, eval_teacher, generate_dataset,
                             sample_teacher)

ACTS = [Activation("relu"), Activation("leaky_relu", 0.2), Activation("sigmoid"), Activation("tanh"),
        Activation("elu", 0.5)]


def _row_norms_by_loop(t, ell):
    h, Q = t.h[ell - 1], t.Q[ell - 1]
    return [math.sqrt(sum(h[i, j] ** 2 * Q[j] for j in range(Q.size))) for i in range(h.shape[0])]


@given(st.integers(0, 2 ** 31), st.integers(1, 4), st.sampled_from(ACTS))
def test_generic_teacher_respects_budget(seed, L, act):
    rng = np.random.default_rng(seed)
    b = NormBudget(R=rng.uniform(0.1, 4), R_b=rng.uniform(0, 2))
    t = sample_teacher(L, [int(rng.integers(1, 30)) for _ in range(L - 1)], 3, b, act, seed=seed)
    assert t.check() == []
    for ell in range(1, L + 1):
        assert max(_row_norms_by_loop(t, ell)) <= b.R * (1 + 1e-12)
        assert np.abs(t.b[ell - 1]).max() <= b.R_b
        assert np.all(t.Q[ell - 1] >= 0) and t.Q[ell - 1].sum() == pytest.approx(1.0)


def test_zero_budget_gives_constant_teacher(rng):
    t = sample_teacher(3, [7, 5], 2, NormBudget(R=0.0, R_b=0.4), Activation("tanh"), seed=1)
    assert all(np.all(h == 0) for h in t.h)
    ys = t(rng.uniform(-1, 1, (50, 2)))
    assert np.all(ys == ys[0])


def test_fixed_seed_is_byte_identical():
    args = (3, [16, 8], 4, NormBudget(R=2.0), Activation("tanh"))
    a, b = sample_teacher(*args, seed=9), sample_teacher(*args, seed=9)
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
    c = sample_teacher(*args, seed=10)
    assert a != c


def test_sample_teacher_validation():
    with pytest.raises(ValueError):
        sample_teacher(0, [], 2, NormBudget(), Activation())
    with pytest.raises(ValueError):
        sample_teacher(3, [4], 2, NormBudget(), Activation())
    with pytest.raises(ValueError):
        sample_teacher(2, [4], 2, NormBudget(), Activation(), decay_s=1.5)


def test_zero_teacher_outputs_zero(rng):
    t = sample_teacher(2, [5], 3, NormBudget(R=0.0, R_b=0.0), Activation("tanh"), seed=0)
    assert np.all(t(rng.uniform(-1, 1, (20, 3))) == 0.0)


def test_single_layer_is_weighted_affine_map(rng):
    t = sample_teacher(1, [], 3, NormBudget(R=2.0, R_b=1.0), Activation("tanh"), seed=4)
    x = rng.uniform(-1, 1, 3)
    expect = sum(t.h[0][0, j] * x[j] * t.Q[0][j] for j in range(3)) + t.b[0][0]
    assert t(x[None])[0] == pytest.approx(expect, rel=1e-14)


def test_layer_output_shapes(rng):
    t = sample_teacher(3, [11, 6], 2, NormBudget(), Activation("elu"), seed=0)
    y, outs = eval_teacher(t, rng.uniform(-1, 1, (4, 2)))
    assert [o.shape[1] for o in outs] == [11, 6, 1]
    assert y.shape == (4,)
    with pytest.raises(ValueError):
        t(np.zeros((1, 3)))


@pytest.mark.parametrize("act", ACTS, ids=lambda a: a.kind)
def test_teacher_output_within_sup_bound(act, rng):
    b = NormBudget(R=1.5, R_b=0.7, D_x=1.3)
    t = sample_teacher(3, [20, 20], 3, b, act, seed=2)
    xs = rng.uniform(-b.D_x, b.D_x, (10_000, 3))
    assert np.abs(t(xs)).max() <= sup_norm_bound(b, 3, act)[0]


def test_teacher_json_round_trip(tmp_path):
    t = sample_teacher(3, [9, 4], 2, NormBudget(R=2.0, R_b=0.5), Activation("leaky_relu", 0.3), seed=5,
                       input_law=InputLaw("truncated_gaussian", 0.5))
    p = tmp_path / "t.json"
    t.save(p)
    back = TeacherNetwork.load(p)
    assert back == t
    assert all(np.array_equal(a, b) for a, b in zip(back.h, t.h))


def test_teacher_rejects_bad_measure():
    with pytest.raises(ValueError):
        TeacherNetwork((np.zeros((1, 2)),), (np.zeros(1),), (np.array([0.7, 0.7]),), Activation(), NormBudget())


# decay-controlled teachers

@pytest.fixture(scope="module")
def decay_teacher():
    b = NormBudget(R=32.0, R_b=8.0, D_x=1.0)
    return sample_teacher(3, [256, 256], 4, b, Activation("tanh"), seed=0, decay_s=0.5, n_ref=2048)


def test_decay_teacher_respects_budget(decay_teacher):
    assert decay_teacher.check() == []


def test_decay_teacher_reaches_target_exponent(decay_teacher):
    xs = decay_teacher.sample_x(2048, np.random.default_rng(1))
    for ell in (2, 3):
        fit = fit_decay(feature_spectrum(decay_teacher, ell, xs))
        assert abs(fit.s - 0.5) <= 0.1


def test_input_law_stays_in_support(rng):
    for law in (InputLaw(), InputLaw("truncated_gaussian", 2.0)):
        xs = law.sample(5000, 3, 0.8, rng)
        assert np.abs(xs).max() <= 0.8
    with pytest.raises(ValueError):
        InputLaw("cauchy")


# datasets

def test_noiseless_data_reproduces_teacher():
    t = sample_teacher(2, [8], 3, NormBudget(), Activation("tanh"), seed=0)
    d = generate_dataset(t, 100, 0.0, seed=1)
    assert np.array_equal(d.ys, t(d.xs))
    assert np.abs(d.xs).max() <= t.budget.D_x


def test_noise_law():
    t = sample_teacher(2, [8], 3, NormBudget(), Activation("tanh"), seed=0)
    sigma, n = 0.7, 100_000
    d = generate_dataset(t, n, sigma, seed=3)
    r = d.ys - t(d.xs)
    assert abs(r.mean()) <= 4 * sigma / math.sqrt(n)
    assert r.var() == pytest.approx(sigma ** 2, rel=0.05)


def test_dataset_validation():
    t = sample_teacher(1, [], 2, NormBudget(), Activation(), seed=0)
    with pytest.raises(ValueError):
        generate_dataset(t, 0, 0.1)
    with pytest.raises(ValueError):
        generate_dataset(t, 5, -1.0)


def test_dataset_csv_round_trip(tmp_path):
    t = sample_teacher(2, [8], 3, NormBudget(), Activation("tanh"), seed=0)
    d = generate_dataset(t, 25, 0.2, seed=7)
    side = d.save(tmp_path / "d.csv")
    meta = json.loads(side.read_text())
    assert meta["n"] == 25 and meta["sigma"] == 0.2 and meta["seed"] == 7
    header = (tmp_path / "d.csv").read_text().splitlines()[0]
    assert header == "x_1,x_2,x_3,y"
    back = Dataset.load(tmp_path / "d.csv")
    assert np.array_equal(back.xs, d.xs) and np.array_equal(back.ys, d.ys)
    assert back.sigma == 0.2


def test_monte_carlo_norm_is_stable():
    t = sample_teacher(2, [32], 3, NormBudget(R=2.0), Activation("tanh"), seed=0)
    rng = np.random.default_rng(0)
    a = t(t.sample_x(4000, rng)) ** 2
    b = np.concatenate([a, t(t.sample_x(4000, rng)) ** 2])
    se = b.std(ddof=1) / math.sqrt(b.size)
    assert abs(a.mean() - b.mean()) < 3 * se
