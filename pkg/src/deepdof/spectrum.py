"""Layer kernels, their empirical spectra, degrees of freedom and power-law decay fits."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

logger = logging.getLogger(__name__)

EIG_FLOOR = 1e-12
MIN_FIT_POINTS = 8


@dataclass(frozen=True)
class DecayFit:
    a: float
    s: float
    n_points: int
    in_range: bool

    def __iter__(self):
        return iter((self.a, self.s))


@dataclass(frozen=True, eq=False)
class LayerSpectrum:
    """Empirical eigenvalues of a layer's integral operator, largest first."""

    mu: np.ndarray
    n_x: int
    layer: int = 2
    fitted: DecayFit | None = None

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float).reshape(-1)
        if mu.size and np.any(np.diff(mu) > 1e-12 * max(mu[0], 1e-300)):
            raise ValueError("eigenvalues must be sorted in nonincreasing order")
        if np.any(mu < 0):
            raise ValueError("eigenvalues must be nonnegative")
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)

    @property
    def trace(self) -> float:
        return float(self.mu.sum())

    @property
    def rank(self) -> int:
        if self.mu.size == 0 or self.mu[0] <= 0:
            return 0
        return int(np.count_nonzero(self.mu > EIG_FLOOR * self.mu[0]))


def layer_gram(t, ell: int, xs) -> np.ndarray:
    """Gram matrix ``K_ij = sum_tau eta(F_{l-1}(x_i, tau)) eta(F_{l-1}(x_j, tau)) Q_l(tau)``."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    if xs.shape[0] < 2:
        raise ValueError("need at least two inputs")
    phi = t.features(ell, xs)
    a = phi * np.sqrt(t.Q[ell - 1])
    K = a @ a.T
    return 0.5 * (K + K.T)


def spectrum_of(K, n_x: int | None = None, layer: int = 2, sym_tol: float = 1e-8) -> LayerSpectrum:
    """Eigenvalues of ``K / n_x``, descending; tiny negatives from round-off are zeroed."""
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {K.shape}")
    n_x = K.shape[0] if n_x is None else int(n_x)
    scale = max(np.abs(K).max(), 1e-300)
    if np.abs(K - K.T).max() > sym_tol * scale:
        raise ValueError("matrix is not symmetric")
    mu = linalg.eigvalsh(0.5 * (K + K.T))[::-1] / n_x
    top = max(mu[0], 0.0) if mu.size else 0.0
    if mu.size and mu[-1] < -1e-8 * max(top, 1e-300) - 1e-10:
        raise ValueError(f"matrix is not positive semidefinite (min eigenvalue {mu[-1]:.3e})")
    mu = np.maximum(mu, 0.0)
    return LayerSpectrum(mu, n_x, layer)


def feature_spectrum(t, ell: int, xs) -> LayerSpectrum:
    """Same spectrum as ``spectrum_of(layer_gram(...))`` via the node-side ``M_l x M_l`` matrix.

    Cheaper when ``n_x > M_l``; the nonzero eigenvalues coincide.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    n_x = xs.shape[0]
    mu = node_spectrum(t.features(ell, xs), t.Q[ell - 1])
    if mu.size > n_x:
        mu = mu[:n_x]
    elif mu.size < n_x:
        mu = np.concatenate([mu, np.zeros(n_x - mu.size)])
    return LayerSpectrum(mu, n_x, ell)


def dof(spec, lam: float) -> float:
    """Degree of freedom ``sum_j mu_j / (mu_j + lam)``."""
    if not lam > 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    mu = spec.mu if isinstance(spec, LayerSpectrum) else np.asarray(spec, dtype=float)
    return float(np.sum(mu / (mu + lam)))


def _loglog_fit(mu: np.ndarray, floor: float = EIG_FLOOR, max_index: int | None = None):
    """``(a, s, n_points)`` from a least-squares line through ``(log j, log mu_j)``."""
    if mu.size == 0 or mu[0] <= 0:
        raise ValueError("spectrum is identically zero; nothing to fit")
    keep = np.flatnonzero(mu > floor * mu[0])
    if max_index is not None:
        keep = keep[keep < max_index]
    if keep.size < MIN_FIT_POINTS:
        raise ValueError(f"only {keep.size} eigenvalues above {floor:g} * mu_1; need {MIN_FIT_POINTS}")
    slope, intercept = np.polyfit(np.log(keep + 1.0), np.log(mu[keep]), 1)
    if slope >= 0:
        raise ValueError(f"spectrum does not decay (fitted log-log slope {slope:.3g})")
    return math.exp(intercept), -1.0 / slope, int(keep.size)


def fit_decay(spec: LayerSpectrum, floor: float = EIG_FLOOR, max_index: int | None = None) -> DecayFit:
    """Least-squares fit of ``log mu_j = log a - (1/s) log j``.

    Uses every eigenvalue above ``floor * mu_1`` (optionally only the first
    ``max_index``).  An ``s`` outside (0, 1) is returned as is with
    ``in_range=False`` and a warning.
    """
    a, s, k = _loglog_fit(spec.mu, floor, max_index)
    ok = 0.0 < s < 1.0
    if not ok:
        logger.warning("fitted decay exponent s=%.4g lies outside (0, 1)", s)
    return DecayFit(float(a), float(s), k, ok)


def node_spectrum(phi: np.ndarray, Q: np.ndarray) -> np.ndarray:
    """Descending eigenvalues of ``A^T A`` with ``A = phi sqrt(Q) / sqrt(n)``; phi is ``(n, M)``."""
    a = phi * np.sqrt(Q / phi.shape[0])
    C = a.T @ a
    return np.maximum(linalg.eigvalsh(0.5 * (C + C.T))[::-1], 0.0)


def dof_from_decay(a: float, s: float, lam: float) -> float:
    """Power-law estimate ``(lam / a) ** (-s)`` of the degree of freedom."""
    if not (a > 0 and lam > 0):
        raise ValueError("a and lambda must be positive")
    if not 0 < s < 1:
        raise ValueError(f"s must lie in (0, 1), got {s}")
    return (lam / a) ** (-s)


def with_fit(spec: LayerSpectrum, **kw) -> LayerSpectrum:
    return LayerSpectrum(spec.mu, spec.n_x, spec.layer, fit_decay(spec, **kw))
