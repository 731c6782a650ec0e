"""Empirical risk minimisation over the norm-constrained class by projected gradient descent."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass

import numpy as np

from .netcore import Activation, FiniteNetwork, NormBudget, random_network

logger = logging.getLogger(__name__)

INITS = ("fstar_warmstart", "random_in_F")
FEASIBILITY_ATOL = 1e-12
DIVERGENCE_FACTOR = 1e3
MAX_HALVINGS = 40


class TrainingDiverged(RuntimeError):
    """Raised when the risk exceeds ``DIVERGENCE_FACTOR`` times its initial value."""


@dataclass
class TrainConfig:
    max_epochs: int = 2000
    step_size: float = 1e-2
    step_decay: float = 1.0
    batch: int | None = None
    init: str = "fstar_warmstart"
    tol: float = 1e-9
    seed: int | None = None

    def __post_init__(self):
        if self.max_epochs < 0:
            raise ValueError("max_epochs must be nonnegative")
        if not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if not 0 < self.step_decay <= 1:
            raise ValueError("step_decay must lie in (0, 1]")
        if not self.tol > 0:
            raise ValueError("tol must be positive")
        if self.batch is not None and self.batch < 1:
            raise ValueError("batch must be positive or None for full batch")
        if self.init not in INITS:
            raise ValueError(f"init must be one of {INITS}, got {self.init!r}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass
class TrainResult:
    net: FiniteNetwork
    history: list
    epochs: int
    stopped: str

    def __iter__(self):
        return iter((self.net, self.history))


def empirical_risk(f: FiniteNetwork, data) -> float:
    """Mean squared residual ``(1/n) sum (y_i - f(x_i))^2``."""
    if data.n == 0:
        raise ValueError("empty dataset")
    r = data.ys - f(data.xs)
    return float(np.mean(r ** 2))


def l1_ball_project(row, radius: float) -> np.ndarray:
    """Euclidean projection onto ``{w : ||w||_1 <= radius}`` by sort-based thresholding."""
    if not radius > 0:
        raise ValueError("radius must be positive")
    v = np.asarray(row, dtype=float)
    return project_rows(v.reshape(1, -1), radius).reshape(v.shape)


def project_rows(W: np.ndarray, radius: float) -> np.ndarray:
    """Row-wise ``l1_ball_project``; rows already inside the ball are returned unchanged."""
    W = np.array(W, dtype=float)
    absW = np.abs(W)
    over = absW.sum(axis=1) > radius
    if not over.any():
        return W
    A = absW[over]
    u = -np.sort(-A, axis=1)
    css = np.cumsum(u, axis=1)
    k = np.arange(1, A.shape[1] + 1)
    cond = u - (css - radius) / k > 0
    rho = A.shape[1] - np.argmax(cond[:, ::-1], axis=1)          # last index where cond holds
    theta = (css[np.arange(A.shape[0]), rho - 1] - radius) / rho
    P = np.maximum(A - theta[:, None], 0.0)
    # round-off can leave the l1 norm an ulp above the radius; pull such rows inside
    s = P.sum(axis=1)
    high = s > radius
    P[high] *= (radius / s[high] * (1.0 - 4 * np.finfo(float).eps))[:, None]
    W[over] = np.sign(W[over]) * P
    return W


def _forward(weights, biases, activation: Activation, xs: np.ndarray, ys: np.ndarray):
    pre, post = [], [xs]
    h = xs
    L = len(weights)
    for k, (W, b) in enumerate(zip(weights, biases)):
        a = h @ W.T + b
        pre.append(a)
        if k < L - 1:
            h = activation(a)
            post.append(h)
    resid = pre[-1][:, 0] - ys
    return float(np.mean(resid ** 2)), (pre, post, resid)


def _backward(weights, activation: Activation, cache):
    pre, post, resid = cache
    L = len(weights)
    delta = (2.0 / resid.size) * resid[:, None]
    gW, gb = [None] * L, [None] * L
    for k in range(L - 1, -1, -1):
        gW[k] = delta.T @ post[k]
        gb[k] = delta.sum(axis=0)
        if k:
            delta = (delta @ weights[k]) * activation.derivative(pre[k - 1], post[k])
    return gW, gb


def risk_and_grad(weights, biases, activation: Activation, xs: np.ndarray, ys: np.ndarray):
    """Empirical risk and its gradients with respect to every weight matrix and bias vector."""
    risk, cache = _forward(weights, biases, activation, xs, ys)
    gW, gb = _backward(weights, activation, cache)
    return risk, gW, gb


def _project(weights, biases, budget: NormBudget):
    Ws = [project_rows(W, budget.R_bar) for W in weights]
    bs = [np.clip(b, -budget.R_b, budget.R_b) for b in biases]
    return Ws, bs


def _assert_feasible(weights, biases, budget: NormBudget, epoch: int) -> None:
    for k, (W, b) in enumerate(zip(weights, biases)):
        wn = np.abs(W).sum(axis=1).max()
        bn = np.abs(b).max()
        if wn > budget.R_bar + FEASIBILITY_ATOL or bn > budget.R_b:
            raise AssertionError(f"epoch {epoch}: layer {k + 1} left the class "
                                 f"(row l1 {wn:.17g} vs {budget.R_bar:.17g}, bias {bn:.17g} vs {budget.R_b:.17g})")


def train(data, widths, activation: Activation, budget: NormBudget, cfg: TrainConfig | None = None,
          init_net: FiniteNetwork | None = None) -> TrainResult:
    """Projected gradient descent on the empirical risk over the class.

    ``widths`` is the full architecture ``(d_x, m_2, ..., m_L, 1)``.  After every
    step each weight row is projected onto the l1 ball of radius ``R_bar`` and
    biases are clamped to ``[-R_b, R_b]``.  Full-batch steps use backtracking
    (the step is halved until the risk does not increase), so the history is
    nonincreasing.  ``init="fstar_warmstart"`` needs ``init_net``.
    """
    cfg = cfg or TrainConfig()
    widths = [int(m) for m in widths]
    if widths[0] != data.d_x:
        raise ValueError(f"input width {widths[0]} does not match the data dimension {data.d_x}")
    if widths[-1] != 1:
        raise ValueError("output width must be 1")
    rng = np.random.default_rng(cfg.seed)
    if cfg.init == "fstar_warmstart":
        if init_net is None:
            raise ValueError("fstar_warmstart needs an initial network")
        if list(init_net.widths) != widths:
            raise ValueError(f"initial network widths {init_net.widths} differ from {widths}")
        start = init_net
    else:
        start = random_network(widths, budget, activation, rng)
    Ws, bs = _project([W.copy() for W in start.weights], [b.copy() for b in start.biases], budget)
    xs, ys = np.asarray(data.xs, dtype=float), np.asarray(data.ys, dtype=float)
    n = xs.shape[0]

    risk, cache = _forward(Ws, bs, activation, xs, ys)
    initial = max(risk, np.finfo(float).tiny)
    history = [risk]
    step = cfg.step_size
    stopped = "max_epochs"
    epoch = 0
    for epoch in range(1, cfg.max_epochs + 1):
        if cfg.batch is None or cfg.batch >= n:
            gW, gb = _backward(Ws, activation, cache)
            for _ in range(MAX_HALVINGS):
                cW, cb = _project([W - step * g for W, g in zip(Ws, gW)],
                                  [b - step * g for b, g in zip(bs, gb)], budget)
                new, cache = _forward(cW, cb, activation, xs, ys)
                if new <= risk:
                    break
                step *= 0.5
            else:
                stopped = "no_descent"
                epoch -= 1
                break
        else:
            perm = rng.permutation(n)
            cW, cb = Ws, bs
            for lo in range(0, n, cfg.batch):
                idx = perm[lo:lo + cfg.batch]
                _, gW, gb = risk_and_grad(cW, cb, activation, xs[idx], ys[idx])
                cW, cb = _project([W - step * g for W, g in zip(cW, gW)],
                                  [b - step * g for b, g in zip(cb, gb)], budget)
            new, cache = _forward(cW, cb, activation, xs, ys)
        if not np.isfinite(new) or new > DIVERGENCE_FACTOR * initial:
            raise TrainingDiverged(f"epoch {epoch}: risk {new:.4g} exceeds {DIVERGENCE_FACTOR:g} x initial "
                                   f"risk {initial:.4g} (step {step:.3g})")
        _assert_feasible(cW, cb, budget, epoch)
        improvement = risk - new
        Ws, bs, risk = cW, cb, new
        history.append(risk)
        step *= cfg.step_decay
        if risk == 0.0 or abs(improvement) <= cfg.tol * max(history[-2], np.finfo(float).tiny):
            stopped = "tol"
            break
    logger.debug("trained %d epochs, stopped by %s, risk %.4g -> %.4g", epoch, stopped, history[0], history[-1])
    net = FiniteNetwork(tuple(Ws), tuple(bs), activation)
    return TrainResult(net, history, epoch, stopped)
