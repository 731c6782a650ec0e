"""Activations, the norm-constrained finite network class, and its sup-norm constants.

A finite network of depth ``L`` is the chain

    a1 = W1 x + b1,   a_l = W_l eta(a_{l-1}) + b_l,   f(x) = a_L,

with ``||W_l||_inf`` (max row l1-norm) bounded by ``R_bar`` and
``||b_l||_max`` bounded by ``R_b``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ACTIVATION_KINDS = ("relu", "leaky_relu", "sigmoid", "tanh", "elu")

NORM_RTOL = 1e-9


@dataclass(frozen=True)
class Activation:
    """A 1-Lipschitz activation.

    ``param`` is the negative-side slope for ``leaky_relu`` (in (0, 1)) and
    the saturation scale alpha for ``elu`` (in (0, 1]); it is ignored otherwise.
    """

    kind: str = "tanh"
    param: float | None = None

    def __post_init__(self):
        if self.kind not in ACTIVATION_KINDS:
            raise ValueError(f"unknown activation {self.kind!r}; expected one of {ACTIVATION_KINDS}")
        if self.kind == "leaky_relu":
            slope = 0.01 if self.param is None else float(self.param)
            if not 0.0 < slope < 1.0:
                raise ValueError(f"leaky_relu slope must lie in (0, 1), got {slope}")
            object.__setattr__(self, "param", slope)
        elif self.kind == "elu":
            alpha = 1.0 if self.param is None else float(self.param)
            # alpha > 1 has slope alpha near 0-, which breaks 1-Lipschitz
            if not 0.0 < alpha <= 1.0:
                raise ValueError(f"elu alpha must lie in (0, 1], got {alpha}")
            object.__setattr__(self, "param", alpha)
        else:
            object.__setattr__(self, "param", None)

    def __call__(self, z):
        z = np.asarray(z, dtype=float)
        if self.kind == "relu":
            return np.maximum(z, 0.0)
        if self.kind == "leaky_relu":
            return np.where(z > 0, z, self.param * z)
        if self.kind == "sigmoid":
            # split to avoid overflow in exp for large |z|
            out = np.empty_like(z)
            pos = z >= 0
            out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
            ez = np.exp(z[~pos])
            out[~pos] = ez / (1.0 + ez)
            return out
        if self.kind == "tanh":
            return np.tanh(z)
        return np.where(z > 0, z, self.param * np.expm1(np.minimum(z, 0.0)))

    def derivative(self, z, out=None):
        """Derivative of the activation; at a kink the left derivative is used.

        ``out`` may pass the already computed ``self(z)`` to skip re-evaluation.
        """
        z = np.asarray(z, dtype=float)
        if self.kind == "relu":
            return (z > 0).astype(float)
        if self.kind == "leaky_relu":
            return np.where(z > 0, 1.0, self.param)
        y = self(z) if out is None else out
        if self.kind == "sigmoid":
            return y * (1.0 - y)
        if self.kind == "tanh":
            return 1.0 - y * y
        # for z <= 0, alpha * exp(z) = y + alpha
        return np.where(z > 0, 1.0, y + self.param)

    @property
    def c_eta(self) -> float:
        """Value of the activation at zero."""
        return 0.5 if self.kind == "sigmoid" else 0.0

    @property
    def scale_invariant(self) -> bool:
        return self.kind in ("relu", "leaky_relu")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "param": self.param}

    @classmethod
    def from_dict(cls, d: dict) -> "Activation":
        return cls(d["kind"], d.get("param"))


@dataclass(frozen=True)
class NormBudget:
    """Norm caps shared by the teacher and the finite class.

    ``R`` caps the L2(Q) norm of teacher weight rows, ``R_b`` every bias,
    ``D_x`` the input sup-norm.  ``delta`` is the failure probability of the
    node-sampling step and fixes ``c_delta = 1/(1 - delta)``.
    """

    R: float = 1.0
    R_b: float = 1.0
    D_x: float = 1.0
    delta: float = 0.1
    c0: float = 4.0
    c1: float = 4.0

    def __post_init__(self):
        if self.R < 0 or self.R_b < 0 or self.D_x < 0:
            raise ValueError("R, R_b and D_x must be nonnegative")
        if not 0.0 < self.delta < 0.5:
            raise ValueError(f"delta must lie in (0, 1/2), got {self.delta}")

    @property
    def c_delta(self) -> float:
        return 1.0 / (1.0 - self.delta)

    @property
    def c_hat(self) -> float:
        return self.c1 * self.c_delta

    @property
    def R_bar(self) -> float:
        return math.sqrt(self.c_hat) * self.R

    def to_dict(self) -> dict:
        return {"R": self.R, "R_b": self.R_b, "D_x": self.D_x, "delta": self.delta,
                "c0": self.c0, "c1": self.c1}

    @classmethod
    def from_dict(cls, d: dict) -> "NormBudget":
        keys = ("R", "R_b", "D_x", "delta", "c0", "c1")
        return cls(**{k: float(d[k]) for k in keys if k in d})


@dataclass(frozen=True, eq=False)
class FiniteNetwork:
    """Finite deep network ``(W_L eta(.) + b_L) o ... o (W_1 x + b_1)``.

    ``weights[l]`` has shape ``(m_{l+2}, m_{l+1})`` in zero-based layer
    numbering; the last layer has a single output.
    """

    weights: tuple
    biases: tuple
    activation: Activation = field(default_factory=Activation)

    def __post_init__(self):
        ws = tuple(np.array(w, dtype=float, copy=True) for w in self.weights)
        bs = tuple(np.array(b, dtype=float, copy=True).reshape(-1) for b in self.biases)
        if len(ws) == 0 or len(ws) != len(bs):
            raise ValueError("need one bias vector per weight matrix and at least one layer")
        for k, (w, b) in enumerate(zip(ws, bs)):
            if w.ndim != 2 or w.shape[0] != b.shape[0]:
                raise ValueError(f"layer {k + 1}: W shape {w.shape} incompatible with b shape {b.shape}")
            if k > 0 and w.shape[1] != ws[k - 1].shape[0]:
                raise ValueError(f"layer {k + 1}: expects {w.shape[1]} inputs, previous layer gives {ws[k - 1].shape[0]}")
        if ws[-1].shape[0] != 1:
            raise ValueError("the output layer must have a single unit")
        for a in ws + bs:
            a.setflags(write=False)
        object.__setattr__(self, "weights", ws)
        object.__setattr__(self, "biases", bs)

    @property
    def L(self) -> int:
        return len(self.weights)

    @property
    def widths(self) -> tuple:
        """``(m_1, ..., m_{L+1})`` with ``m_1 = d_x`` and ``m_{L+1} = 1``."""
        return (self.weights[0].shape[1],) + tuple(w.shape[0] for w in self.weights)

    @property
    def d_x(self) -> int:
        return self.weights[0].shape[1]

    def forward(self, x) -> list:
        """Pre-activations ``a_1(x), ..., a_L(x)``; batched over leading rows of ``x``."""
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.d_x:
            raise ValueError(f"input dimension {x.shape[-1]} does not match d_x={self.d_x}")
        pre = [x @ self.weights[0].T + self.biases[0]]
        for w, b in zip(self.weights[1:], self.biases[1:]):
            pre.append(self.activation(pre[-1]) @ w.T + b)
        return pre

    def __call__(self, x):
        return self.forward(x)[-1][..., 0]

    def weight_norms(self) -> np.ndarray:
        """``||W_l||_inf`` for every layer."""
        return np.array([np.abs(w).sum(axis=1).max() for w in self.weights])

    def bias_norms(self) -> np.ndarray:
        return np.array([np.abs(b).max() if b.size else 0.0 for b in self.biases])

    def norm_violations(self, budget: NormBudget, rtol: float = NORM_RTOL) -> list:
        """Layers (1-based) breaking the class constraints, as ``(layer, which, value, cap)``."""
        out = []
        for k, v in enumerate(self.weight_norms()):
            if v > budget.R_bar * (1.0 + rtol):
                out.append((k + 1, "W", float(v), budget.R_bar))
        for k, v in enumerate(self.bias_norms()):
            if v > budget.R_b * (1.0 + rtol):
                out.append((k + 1, "b", float(v), budget.R_b))
        return out

    def in_class(self, budget: NormBudget, rtol: float = NORM_RTOL) -> bool:
        return not self.norm_violations(budget, rtol)

    def with_params(self, weights, biases) -> "FiniteNetwork":
        return FiniteNetwork(tuple(weights), tuple(biases), self.activation)

    def to_dict(self) -> dict:
        return {
            "L": self.L,
            "widths": list(self.widths),
            "activation": self.activation.to_dict(),
            "layers": [{"W": w.tolist(), "b": b.tolist()} for w, b in zip(self.weights, self.biases)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FiniteNetwork":
        layers = d["layers"]
        net = cls(tuple(np.array(l["W"], dtype=float).reshape(len(l["b"]), -1) for l in layers),
                  tuple(np.array(l["b"], dtype=float) for l in layers),
                  Activation.from_dict(d["activation"]))
        if "widths" in d and list(net.widths) != list(d["widths"]):
            raise ValueError(f"declared widths {d['widths']} do not match layers {net.widths}")
        return net

    def dumps(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def loads(cls, s: str) -> "FiniteNetwork":
        return cls.from_dict(json.loads(s))

    def __eq__(self, other):
        if not isinstance(other, FiniteNetwork):
            return NotImplemented
        return (self.activation == other.activation and self.widths == other.widths
                and all(np.array_equal(a, b) for a, b in zip(self.weights, other.weights))
                and all(np.array_equal(a, b) for a, b in zip(self.biases, other.biases)))

    __hash__ = None


def eval_net(net: FiniteNetwork, x):
    """Network output at ``x`` together with all pre-activations."""
    pre = net.forward(x)
    return pre[-1][..., 0], pre


def zero_network(widths: Sequence[int], activation: Activation | None = None) -> FiniteNetwork:
    widths = list(widths)
    return FiniteNetwork(tuple(np.zeros((widths[k + 1], widths[k])) for k in range(len(widths) - 1)),
                         tuple(np.zeros(widths[k + 1]) for k in range(len(widths) - 1)),
                         activation or Activation())


def random_network(widths: Sequence[int], budget: NormBudget, activation: Activation,
                   rng: np.random.Generator, fill: float = 1.0) -> FiniteNetwork:
    """A random member of the class: rows scaled to l1-norm ``fill * R_bar``."""
    widths = list(widths)
    ws, bs = [], []
    for k in range(len(widths) - 1):
        w = rng.standard_normal((widths[k + 1], widths[k]))
        l1 = np.abs(w).sum(axis=1, keepdims=True)
        scale = fill * budget.R_bar * rng.uniform(0.0, 1.0, size=(widths[k + 1], 1)) ** (1.0 / 4)
        ws.append(w / np.where(l1 > 0, l1, 1.0) * scale)
        bs.append(rng.uniform(-budget.R_b, budget.R_b, size=widths[k + 1]))
    return FiniteNetwork(tuple(ws), tuple(bs), activation)


def clip_inputs(xs, D_x: float) -> np.ndarray:
    """Clip inputs to the support cube ``[-D_x, D_x]^d``."""
    return np.clip(np.asarray(xs, dtype=float), -D_x, D_x)


def _layered_sum(radius: float, D_x: float, offset: float, L: int) -> float:
    return radius ** L * D_x + sum(radius ** (L - l) * offset for l in range(1, L + 1))


def sup_norm_bound(budget: NormBudget, L: int, activation: Activation) -> tuple:
    """Sup-norm caps for the teacher and for every member of the class.

    Returns ``(bound_fo, R_hat_inf)`` with
    ``bound_fo = R^L D_x + sum_l R^{L-l}(R_b + c_eta)`` and the same
    expression in ``R_bar`` for ``R_hat_inf``.
    """
    if L < 1:
        raise ValueError("L must be at least 1")
    off = budget.R_b + activation.c_eta
    return (_layered_sum(budget.R, budget.D_x, off, L),
            _layered_sum(budget.R_bar, budget.D_x, off, L))


def lip_diff_constant(budget: NormBudget, L: int, activation: Activation) -> float:
    """Parameter-to-function Lipschitz constant ``G_hat``.

    ``L R_bar^{L-1} [D_x + L (c_eta + R_b)] + sum_{l=1}^{L} R_bar^{L-l}``;
    parameters within ``eps`` (row-l1 / max norm) give functions within
    ``eps * G_hat`` in sup-norm.
    """
    if L < 1:
        raise ValueError("L must be at least 1")
    rb = budget.R_bar
    return (L * rb ** (L - 1) * (budget.D_x + L * (activation.c_eta + budget.R_b))
            + sum(rb ** (L - l) for l in range(1, L + 1)))


def empirical_sup_distance(f: FiniteNetwork, g: FiniteNetwork, xs) -> float:
    """``max_i |f(x_i) - g(x_i)|``, a lower estimate of the sup-norm distance."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    if xs.shape[0] == 0 or xs.size == 0:
        raise ValueError("empty input sample")
    if f.widths != g.widths:
        raise ValueError(f"architectures differ: {f.widths} vs {g.widths}")
    return float(np.max(np.abs(f(xs) - g(xs))))


def sample_inputs(n: int, d_x: int, D_x: float, rng: np.random.Generator) -> np.ndarray:
    """Uniform draws from the support cube."""
    return rng.uniform(-D_x, D_x, size=(n, d_x))
