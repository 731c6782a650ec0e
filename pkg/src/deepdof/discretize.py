"""Leverage-score node sampling and the layer-by-layer construction of a finite approximant.

Every hidden layer of the teacher is replaced by ``m_l`` nodes drawn from the
lambda-ridge leverage distribution of its kernel.  Rows of the next layer
are then refitted on the sampled features by ridge regression, giving a
member of the finite class whose distance to the teacher in L2(P_X) is
controlled by ``sum_l sqrt(lambda_l)`` terms.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, optimize

from .netcore import FiniteNetwork
from .spectrum import dof as _dof, feature_spectrum

logger = logging.getLogger(__name__)


def min_width(N: float, delta: float, log_factor: float = 32.0) -> int:
    """Smallest width ``ceil(5 N log(log_factor * N / delta))``, at least 1.

    ``log_factor=32`` suits the full construction; the weight-moment
    guarantee of a single node-sampling step needs only ``16``.
    """
    if not N > 0:
        raise ValueError(f"N must be positive, got {N}")
    if not 0 < delta < 0.5:
        raise ValueError(f"delta must lie in (0, 1/2), got {delta}")
    val = 5.0 * N * math.log(log_factor * N / delta)
    return max(1, math.ceil(val))


@dataclass(frozen=True, eq=False)
class SampledNodes:
    layer: int
    indices: np.ndarray
    weights: np.ndarray
    lam: float
    dof: float = float("nan")
    fallback: bool = False

    @property
    def m(self) -> int:
        return int(self.indices.size)

    def weight_moment(self) -> float:
        """``(1/m) sum_j w_j^2``."""
        return float(np.mean(self.weights ** 2))

    def weight_bound_ok(self, delta: float) -> bool:
        return self.weight_moment() <= 1.0 / (1.0 - 2.0 * delta)


def leverage_distribution(phi: np.ndarray, Q: np.ndarray, lam: float):
    """Sampling law ``q(v) ∝ Q(v) <phi_v, (Sigma + lam)^{-1} phi_v>`` and the empirical dof.

    ``phi`` holds node features column-wise over an ``n_x`` input sample.
    Computed through the node-side matrix ``A^T A`` with ``A = phi sqrt(Q) / sqrt(n_x)``.
    """
    n_x = phi.shape[0]
    A = phi * np.sqrt(Q / n_x)
    mu, U = linalg.eigh(A.T @ A)
    mu = np.maximum(mu, 0.0)
    p = (U ** 2) @ (mu / (mu + lam))
    p = np.maximum(p, 0.0)
    total = float(p.sum())
    return p, total


def sample_nodes(t, ell: int, lam: float, m: int, xs, seed=None, mode: str = "iid") -> SampledNodes:
    """Draw ``m`` nodes of layer ``ell`` with importance weights ``sqrt(Q(v)/q(v))``.

    ``mode="exhaustive"`` takes every node once (requires ``m == M_l``) with
    weights ``sqrt(m Q(v))``, which equal 1 for a uniform grid.  If the layer
    carries no leverage at all (identically zero features), nodes are drawn
    uniformly with unit weights and ``fallback`` is set.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    if not lam > 0:
        raise ValueError("lambda must be positive")
    if not 2 <= ell <= t.L:
        raise ValueError(f"layer {ell} out of range 2..{t.L}")
    Q = t.Q[ell - 1]
    M = Q.size
    rng = np.random.default_rng(seed)
    phi = t.features(ell, xs)
    p, total = leverage_distribution(phi, Q, lam)
    if mode == "exhaustive":
        if m != M:
            raise ValueError(f"exhaustive mode needs m == M_l = {M}, got {m}")
        idx = np.arange(M)
        return SampledNodes(ell, idx, np.sqrt(m * Q), lam, total)
    if mode != "iid":
        raise ValueError(f"unknown sampling mode {mode!r}")
    if not total > 1e-300 or not np.isfinite(total):
        logger.warning("layer %d has zero total leverage; falling back to uniform sampling", ell)
        idx = rng.integers(0, M, size=m)
        return SampledNodes(ell, idx, np.ones(m), lam, 0.0, fallback=True)
    q = p / total
    idx = rng.choice(M, size=m, replace=True, p=q)
    w = np.sqrt(Q[idx] / q[idx])
    return SampledNodes(ell, idx, w, lam, total)


@dataclass
class BetaFit:
    beta: np.ndarray
    error: np.ndarray
    norm_sq: np.ndarray
    rescaled: np.ndarray
    error_unscaled: np.ndarray


def _sampled_design(t, ell: int, nodes: SampledNodes, xs) -> np.ndarray:
    return t.features(ell, xs)[:, nodes.indices] * nodes.weights


def ridge_rows(Z: np.ndarray, targets: np.ndarray, lam: float, R: float, c1: float = 4.0) -> BetaFit:
    """Ridge fits of every target column on design ``Z``, with the coefficient-ball cap.

    Minimises ``(1/n)||t - Z beta||^2 + lam * m * ||beta||^2`` per column and
    rescales any solution with ``||beta||^2 > c1 R^2 / m`` onto that ball.
    """
    n, m = Z.shape
    T = targets.reshape(n, -1)
    G = Z.T @ Z / n
    G[np.diag_indices_from(G)] += lam * m
    B = linalg.solve(G, Z.T @ T / n, assume_a="pos")
    err0 = np.mean((T - Z @ B) ** 2, axis=0)
    nsq = np.sum(B ** 2, axis=0)
    cap = c1 * R ** 2 / m
    over = nsq > cap * (1 + 1e-12)
    if over.any():
        B[:, over] *= np.sqrt(cap / nsq[over])
        logger.info("rescaled %d of %d coefficient vectors onto the ball", int(over.sum()), over.size)
    err = np.mean((T - Z @ B) ** 2, axis=0)
    return BetaFit(B, err, nsq, over, err0)


def fit_beta(target_values, nodes: SampledNodes, t, ell: int, lam: float, R: float, xs,
             c1: float = 4.0) -> BetaFit:
    """Fit ``target(x) ≈ sum_j beta_j w_j eta(F_{l-1}(x, v_j))`` on the sample ``xs``.

    ``target_values`` may be a vector or an ``(n_x, r)`` matrix of targets.
    """
    Z = _sampled_design(t, ell, nodes, xs)
    fit = ridge_rows(Z, np.asarray(target_values, dtype=float), lam, R, c1)
    if np.ndim(target_values) == 1:
        return BetaFit(fit.beta[:, 0], fit.error[0], fit.norm_sq[0], fit.rescaled[0], fit.error_unscaled[0])
    return fit


def teacher_row_targets(t, ell: int, rows, xs) -> np.ndarray:
    """Values of ``x -> sum_w h_l(tau, w) eta(F_{l-1}(x, w)) Q_l(w)`` for each ``tau`` in ``rows``."""
    phi = t.features(ell, xs)
    return phi @ (t.h[ell - 1][np.asarray(rows)] * t.Q[ell - 1]).T


@dataclass
class Construction:
    net: FiniteNetwork
    nodes: list
    widths: tuple
    lambdas: tuple
    dofs: list
    row_errors: list
    beta_rescales: int
    row_rescales: int
    weight_moments: list = field(default_factory=list)

    def report(self) -> dict:
        return {
            "widths": list(self.widths),
            "lambdas": list(self.lambdas),
            "dof": self.dofs,
            "weight_moment": self.weight_moments,
            "row_error_max": [float(np.max(e)) for e in self.row_errors],
            "row_error_mean": [float(np.mean(e)) for e in self.row_errors],
            "beta_rescale_events": self.beta_rescales,
            "row_rescale_events": self.row_rescales,
        }


def build_fstar(t, lambdas, widths, delta: float, xs, seed=None) -> Construction:
    """Assemble the finite approximant layer by layer.

    ``lambdas`` and ``widths`` hold one entry per hidden grid (layers 2..L).
    First-layer rows copy the teacher on the sampled layer-2 nodes; each later
    layer refits teacher rows on the sampled features of its input layer.
    """
    L = t.L
    lambdas = tuple(float(v) for v in lambdas)
    widths = tuple(int(v) for v in widths)
    if len(lambdas) != L - 1 or len(widths) != L - 1:
        raise ValueError(f"need {L - 1} lambdas and widths for an L={L} teacher")
    if any(m < 1 for m in widths):
        raise ValueError("widths must be positive")
    budget = t.budget
    xs = np.asarray(xs, dtype=float)
    seeds = np.random.SeedSequence(seed).spawn(max(L - 1, 1))

    nodes = [sample_nodes(t, ell, lambdas[ell - 2], widths[ell - 2], xs, seeds[ell - 2])
             for ell in range(2, L + 1)]
    dofs = [n.dof for n in nodes]

    Ws, bs, errors = [], [], []
    beta_rescales = 0
    # first layer: exact copy on sampled layer-2 nodes, or the output row for L = 1
    rows1 = nodes[0].indices if L >= 2 else np.array([0])
    Ws.append(t.h[0][rows1] * t.Q[0])
    bs.append(t.b[0][rows1].copy())
    errors.append(np.zeros(rows1.size))
    for ell in range(2, L + 1):
        nd = nodes[ell - 2]
        rows = nodes[ell - 1].indices if ell < L else np.array([0])
        T = teacher_row_targets(t, ell, rows, xs)
        Z = _sampled_design(t, ell, nd, xs)
        fit = ridge_rows(Z, T, lambdas[ell - 2], budget.R, budget.c1)
        beta_rescales += int(fit.rescaled.sum())
        Ws.append(fit.beta.T * nd.weights)
        bs.append(t.b[ell - 1][rows].copy())
        errors.append(fit.error)

    row_rescales = 0
    for k, W in enumerate(Ws):
        l1 = np.abs(W).sum(axis=1)
        over = l1 > budget.R_bar
        if over.any():
            row_rescales += int(over.sum())
            W[over] *= (budget.R_bar / l1[over])[:, None]
            logger.info("layer %d: rescaled %d rows onto the l1 ball", k + 1, int(over.sum()))
    net = FiniteNetwork(tuple(Ws), tuple(bs), t.activation)
    return Construction(net, nodes, widths, lambdas, dofs, errors, beta_rescales, row_rescales,
                        [n.weight_moment() for n in nodes])


def construct_fstar(t, lambdas, widths, delta: float, xs, seed=None) -> FiniteNetwork:
    return build_fstar(t, lambdas, widths, delta, xs, seed).net


def auto_widths(t, lambdas, delta: float, xs, log_factor: float = 32.0) -> list:
    """``min_width(dof_l(lambda_l), delta)`` per hidden layer from empirical spectra."""
    out = []
    for ell, lam in zip(range(2, t.L + 1), lambdas):
        N = _dof(feature_spectrum(t, ell, xs), lam)
        out.append(min_width(N, delta, log_factor) if N > 0 else 1)
    return out


def l2_px_error(f, t, xs) -> tuple:
    """Monte-Carlo ``||f - f^o||_{L2(P_X)}`` and its standard error (delta method)."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    if xs.shape[0] == 0:
        raise ValueError("empty input sample")
    sq = (f(xs) - t(xs)) ** 2
    mse = float(sq.mean())
    rms = math.sqrt(mse)
    se_mse = float(sq.std(ddof=1) / math.sqrt(sq.size)) if sq.size > 1 else float("inf")
    se = se_mse / (2 * rms) if rms > 0 else 0.0
    return rms, se


def smallest_lambda(spec, m: int, delta: float, log_factor: float = 32.0) -> float:
    """Smallest ``lambda`` with ``min_width(dof(spec, lambda), delta) <= m``.

    Solved by root finding on ``5 N log(log_factor N / delta) = m`` in ``log lambda``.
    When every ``lambda`` down to ``1e-12 mu_1`` qualifies, that floor is returned.
    """
    if m < 1:
        raise ValueError("m must be at least 1")
    mu = spec.mu if hasattr(spec, "mu") else np.asarray(spec, dtype=float)
    if mu.size == 0 or mu[0] <= 0:
        raise ValueError("spectrum is identically zero")

    def excess(z):
        N = _dof(mu, math.exp(z))
        if N <= 0:
            return -float(m)
        return 5.0 * N * math.log(log_factor * N / delta) - m

    lo, hi = math.log(1e-12 * mu[0]), math.log(1e12 * mu[0])
    if excess(lo) <= 0:
        return math.exp(lo)
    z = optimize.brentq(excess, lo, hi, xtol=1e-12, rtol=1e-14)
    # step to the feasible side of the root
    while excess(z) > 0:
        z += 1e-10 * max(1.0, abs(z))
    return math.exp(z)
