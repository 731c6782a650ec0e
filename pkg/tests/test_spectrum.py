import numpy as np
import pytest
from hypothesis import given, strategies as st

from deepdof.netcore import Activation, NormBudget
from deepdof.spectrum import (LayerSpectrum, dof, dof_from_decay, feature_spectrum, fit_decay, layer_gram,
                              spectrum_of, with_fit)
from deepdof.teacher import sample_teacher

from oracles import jacobi_eigenvalues, ref_dof


@pytest.fixture(scope="module")
def teacher():
    return sample_teacher(3, [40, 30], 3, NormBudget(R=3.0, R_b=1.0), Activation("tanh"), seed=3)


# gram matrices

def test_zero_relu_teacher_has_zero_gram(rng):
    t = sample_teacher(3, [6, 5], 2, NormBudget(R=0.0, R_b=0.0), Activation("relu"), seed=0)
    assert np.all(layer_gram(t, 2, rng.uniform(-1, 1, (10, 2))) == 0)


def test_gram_is_psd_and_cauchy_schwarz(teacher, rng):
    xs = rng.uniform(-1, 1, (60, 3))
    for ell in (2, 3):
        K = layer_gram(teacher, ell, xs)
        d = np.diag(K)
        assert np.all(d >= 0)
        assert np.all(np.abs(K) <= np.sqrt(np.outer(d, d)) * (1 + 1e-12) + 1e-15)
        mu = np.linalg.eigvalsh(K)
        assert mu.min() >= -1e-8 * mu.max()


def test_duplicate_inputs_give_rank_one_gram(teacher, rng):
    x = rng.uniform(-1, 1, (1, 3))
    K = layer_gram(teacher, 2, np.vstack([x, x]))
    mu = spectrum_of(K).mu
    assert mu[0] > 0 and mu[1] == pytest.approx(0.0, abs=1e-14 * mu[0])


def test_gram_rejects_bad_layer(teacher, rng):
    with pytest.raises(ValueError):
        layer_gram(teacher, 1, rng.uniform(-1, 1, (4, 3)))
    with pytest.raises(ValueError):
        layer_gram(teacher, 4, rng.uniform(-1, 1, (4, 3)))


def test_feature_spectrum_matches_gram_route(teacher, rng):
    xs = rng.uniform(-1, 1, (50, 3))
    for ell in (2, 3):
        a = spectrum_of(layer_gram(teacher, ell, xs), 50, ell).mu
        b = feature_spectrum(teacher, ell, xs).mu
        np.testing.assert_allclose(a, b, atol=1e-12 * a[0])


def test_trace_is_preserved(teacher, rng):
    xs = rng.uniform(-1, 1, (40, 3))
    K = layer_gram(teacher, 3, xs)
    assert spectrum_of(K, 40).trace == pytest.approx(np.trace(K) / 40, rel=1e-10)


# spectra

def test_spectrum_examples():
    np.testing.assert_allclose(spectrum_of(2 * np.eye(2), 2).mu, [1.0, 1.0])
    np.testing.assert_allclose(spectrum_of([[1, 0.5], [0.5, 1]], 2).mu, [0.75, 0.25])


def test_spectrum_rejects_asymmetric_and_indefinite():
    with pytest.raises(ValueError):
        spectrum_of([[1.0, 0.2], [0.0, 1.0]])
    with pytest.raises(ValueError):
        spectrum_of([[1.0, 0.0], [0.0, -1.0]])


def test_layer_spectrum_validation():
    with pytest.raises(ValueError):
        LayerSpectrum(np.array([0.1, 0.5]), 2)
    with pytest.raises(ValueError):
        LayerSpectrum(np.array([0.5, -0.1]), 2)


@given(st.integers(0, 2 ** 31), st.integers(1, 8))
def test_spectrum_matches_jacobi_oracle(seed, n):
    rng = np.random.default_rng(seed)
    A = rng.normal(size=(n, n))
    K = A @ A.T
    mu = spectrum_of(K, n).mu
    ref = [max(v, 0.0) / n for v in jacobi_eigenvalues(K.tolist())]
    np.testing.assert_allclose(mu, ref, rtol=1e-8, atol=1e-8 * max(ref[0], 1e-300))


# degree of freedom

def test_dof_examples():
    assert dof(LayerSpectrum(np.array([1.0, 1.0]), 2), 1.0) == 1.0
    assert dof(np.array([0.75, 0.25]), 0.25) == pytest.approx(1.25)
    mu = np.array([2.0, 1.0, 0.5])
    lam = 1e6 * mu[0]
    assert dof(mu, lam) <= mu.sum() / lam


def test_dof_rejects_nonpositive_lambda():
    with pytest.raises(ValueError):
        dof(np.array([1.0]), 0.0)


@given(st.lists(st.floats(0, 10), min_size=1, max_size=30).filter(lambda v: max(v) > 1e-6),
       st.floats(1e-6, 1e3))
def test_dof_bounds_and_oracle(vals, lam):
    mu = np.sort(np.array(vals))[::-1]
    N = dof(mu, lam)
    assert N == pytest.approx(ref_dof(mu.tolist(), lam), rel=1e-12)
    rank = int(np.count_nonzero(mu > 0))
    assert N <= min(rank, mu.sum() / lam) * (1 + 1e-12)


@given(st.lists(st.floats(1e-6, 10), min_size=1, max_size=30))
def test_dof_strictly_decreasing(vals):
    mu = np.sort(np.array(vals))[::-1]
    grid = np.geomspace(1e-4, 1e2, 40)
    vals = [dof(mu, lam) for lam in grid]
    assert all(a > b for a, b in zip(vals, vals[1:]))


# decay fits

def test_fit_exact_power_laws():
    j = np.arange(1, 65, dtype=float)
    f = fit_decay(LayerSpectrum(j ** -2.0, 64))
    assert (f.a, f.s) == (pytest.approx(1.0, rel=1e-10), pytest.approx(0.5, rel=1e-10))
    f = fit_decay(LayerSpectrum(3 * j ** -4.0, 64))
    assert (f.a, f.s) == (pytest.approx(3.0, rel=1e-10), pytest.approx(0.25, rel=1e-10))
    assert f.in_range


def test_fit_reports_out_of_range_exponent(caplog):
    j = np.arange(1, 33, dtype=float)
    f = fit_decay(LayerSpectrum(j ** -0.5, 32))
    assert f.s == pytest.approx(2.0) and not f.in_range
    assert "outside" in caplog.text


def test_fit_needs_enough_points():
    with pytest.raises(ValueError):
        fit_decay(LayerSpectrum(np.array([1.0, 0.5, 0.1, 0, 0, 0, 0, 0, 0]), 9))
    with pytest.raises(ValueError):
        fit_decay(LayerSpectrum(np.zeros(10), 10))


def test_with_fit_attaches_decay():
    j = np.arange(1, 20, dtype=float)
    sp = with_fit(LayerSpectrum(j ** -2.0, 19))
    assert sp.fitted.s == pytest.approx(0.5)


def test_dof_from_decay_examples():
    assert dof_from_decay(1.0, 0.5, 0.01) == pytest.approx(10.0)
    assert dof_from_decay(2.5, 0.3, 2.5) == 1.0
    with pytest.raises(ValueError):
        dof_from_decay(1.0, 1.0, 0.1)


# decay-controlled teacher

@pytest.fixture(scope="module")
def decay_spectra():
    t = sample_teacher(3, [256, 256], 4, NormBudget(R=32.0, R_b=8.0), Activation("tanh"), seed=1,
                       decay_s=0.5, n_ref=2048)
    xs_a = t.sample_x(2048, np.random.default_rng(10))
    xs_b = t.sample_x(2048, np.random.default_rng(11))
    return [(feature_spectrum(t, ell, xs_a), feature_spectrum(t, ell, xs_b)) for ell in (2, 3)]


def test_power_law_dof_within_factor_three(decay_spectra):
    for sp, _ in decay_spectra:
        fit = fit_decay(sp)
        for lam in np.geomspace(sp.mu[19], sp.mu[1], 8):
            ratio = dof_from_decay(fit.a, fit.s, lam) / dof(sp, lam)
            assert 1 / 3 <= ratio <= 3


def test_dof_stable_across_disjoint_samples(decay_spectra):
    for a, b in decay_spectra:
        for lam in np.geomspace(a.mu[9], a.mu[0], 6):
            assert abs(dof(a, lam) - dof(b, lam)) < 0.25 * dof(a, lam)
