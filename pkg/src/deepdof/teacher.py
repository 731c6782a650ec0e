"""Finite-resolution teacher networks in integral form, and regression data.

Layer ``l`` of the teacher maps node values on a grid ``T_l`` of size ``M_l``
to node values on ``T_{l+1}``::

    F_1(x, tau) = sum_j h_1(tau, j) x_j Q_1(j) + b_1(tau)
    F_l(x, tau) = sum_w h_l(tau, w) eta(F_{l-1}(x, w)) Q_l(w) + b_l(tau)

with ``T_1 = {1..d_x}`` and ``T_{L+1} = {1}``.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import logging

import numpy as np
from scipy import linalg, optimize

from .netcore import Activation, NormBudget, clip_inputs, sup_norm_bound
from .spectrum import _loglog_fit, node_spectrum

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class InputLaw:
    """Input distribution on ``[-D_x, D_x]^d``: uniform, or a Gaussian truncated to the cube."""

    kind: str = "uniform"
    scale: float = 1.0

    def __post_init__(self):
        if self.kind not in ("uniform", "truncated_gaussian"):
            raise ValueError(f"unknown input law {self.kind!r}")

    def sample(self, n: int, d_x: int, D_x: float, rng: np.random.Generator) -> np.ndarray:
        if self.kind == "uniform":
            return rng.uniform(-D_x, D_x, size=(n, d_x))
        out = rng.normal(0.0, self.scale, size=(n, d_x))
        bad = np.abs(out) > D_x
        while bad.any():
            out[bad] = rng.normal(0.0, self.scale, size=int(bad.sum()))
            bad = np.abs(out) > D_x
        return out

    def to_dict(self) -> dict:
        return {"kind": self.kind, "scale": self.scale}

    @classmethod
    def from_dict(cls, d: dict) -> "InputLaw":
        return cls(d.get("kind", "uniform"), float(d.get("scale", 1.0)))


@dataclass(frozen=True, eq=False)
class TeacherNetwork:
    h: tuple
    b: tuple
    Q: tuple
    activation: Activation
    budget: NormBudget
    input_law: InputLaw = field(default_factory=InputLaw)
    decay_s: float | None = None

    def __post_init__(self):
        h = tuple(np.array(a, dtype=float) for a in self.h)
        b = tuple(np.array(a, dtype=float).reshape(-1) for a in self.b)
        Q = tuple(np.array(a, dtype=float).reshape(-1) for a in self.Q)
        if not (len(h) == len(b) == len(Q) >= 1):
            raise ValueError("h, b and Q need one entry per layer")
        for k in range(len(h)):
            if h[k].shape != (b[k].size, Q[k].size):
                raise ValueError(f"layer {k + 1}: h shape {h[k].shape} vs b {b[k].size}, Q {Q[k].size}")
            if k and Q[k].size != h[k - 1].shape[0]:
                raise ValueError(f"layer {k + 1}: node grid size mismatch")
            if np.any(Q[k] < 0) or not math.isclose(Q[k].sum(), 1.0, rel_tol=1e-9):
                raise ValueError(f"layer {k + 1}: Q must be a probability vector")
        if h[-1].shape[0] != 1:
            raise ValueError("the output grid must be a singleton")
        for a in h + b + Q:
            a.setflags(write=False)
        object.__setattr__(self, "h", h)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "Q", Q)

    @property
    def L(self) -> int:
        return len(self.h)

    @property
    def d_x(self) -> int:
        return self.h[0].shape[1]

    @property
    def resolutions(self) -> tuple:
        """``(M_1, ..., M_{L+1})`` with ``M_1 = d_x`` and ``M_{L+1} = 1``."""
        return (self.d_x,) + tuple(a.shape[0] for a in self.h)

    def row_norms(self, ell: int) -> np.ndarray:
        """L2(Q_l) norms of the weight rows of layer ``ell`` (1-based)."""
        h, Q = self.h[ell - 1], self.Q[ell - 1]
        return np.sqrt((h ** 2) @ Q)

    def check(self, rtol: float = 1e-9) -> list:
        """Rows or biases exceeding the budget, as ``(layer, which, index, value)``."""
        out = []
        R, Rb = self.budget.R, self.budget.R_b
        for ell in range(1, self.L + 1):
            rn = self.row_norms(ell)
            for i in np.flatnonzero(rn > R * (1 + rtol) + 1e-300):
                out.append((ell, "h", int(i), float(rn[i])))
            bb = np.abs(self.b[ell - 1])
            for i in np.flatnonzero(bb > Rb * (1 + rtol) + 1e-300):
                out.append((ell, "b", int(i), float(bb[i])))
        return out

    def layer_outputs(self, xs) -> list:
        """``[F_1(x, .), ..., F_L(x, .)]`` for a batch of inputs."""
        xs = np.asarray(xs, dtype=float)
        if xs.shape[-1] != self.d_x:
            raise ValueError(f"input dimension {xs.shape[-1]} does not match d_x={self.d_x}")
        out = [(xs * self.Q[0]) @ self.h[0].T + self.b[0]]
        for h, b, Q in zip(self.h[1:], self.b[1:], self.Q[1:]):
            out.append((self.activation(out[-1]) * Q) @ h.T + b)
        return out

    def features(self, ell: int, xs) -> np.ndarray:
        """Node features ``eta(F_{l-1}(x, v))`` of layer ``ell`` (2 <= ell <= L), shape ``(n, M_l)``."""
        if not 2 <= ell <= self.L:
            raise ValueError(f"layer {ell} has no kernel; need 2 <= ell <= {self.L}")
        return self.activation(self.layer_outputs(xs)[ell - 2])

    def __call__(self, xs):
        return self.layer_outputs(xs)[-1][..., 0]

    def sample_x(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return self.input_law.sample(n, self.d_x, self.budget.D_x, rng)

    def output_bound(self) -> float:
        return sup_norm_bound(self.budget, self.L, self.activation)[0]

    def to_dict(self) -> dict:
        return {
            "L": self.L,
            "resolutions": list(self.resolutions),
            "activation": self.activation.to_dict(),
            "budget": self.budget.to_dict(),
            "input_law": self.input_law.to_dict(),
            "decay_s": self.decay_s,
            "layers": [{"h": h.tolist(), "b": b.tolist(), "Q": Q.tolist()}
                       for h, b, Q in zip(self.h, self.b, self.Q)],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TeacherNetwork":
        layers = d["layers"]
        return cls(tuple(np.array(l["h"], dtype=float).reshape(len(l["b"]), len(l["Q"])) for l in layers),
                   tuple(np.array(l["b"], dtype=float) for l in layers),
                   tuple(np.array(l["Q"], dtype=float) for l in layers),
                   Activation.from_dict(d["activation"]),
                   NormBudget.from_dict(d["budget"]),
                   InputLaw.from_dict(d.get("input_law", {})),
                   d.get("decay_s"))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "TeacherNetwork":
        return cls.from_dict(json.loads(Path(path).read_text()))

    def __eq__(self, other):
        if not isinstance(other, TeacherNetwork):
            return NotImplemented
        return (self.to_dict() == other.to_dict())

    __hash__ = None


def eval_teacher(t: TeacherNetwork, x):
    """Teacher output and node values of every layer at ``x``."""
    outs = t.layer_outputs(x)
    return outs[-1][..., 0], outs


def _cap_rows(h: np.ndarray, Q: np.ndarray, R: float) -> np.ndarray:
    norms = np.sqrt((h ** 2) @ Q)
    scale = np.where(norms > R, R / np.where(norms > 0, norms, 1.0), 1.0)
    return h * scale[:, None]


def sample_teacher(L: int, resolutions: Sequence[int], d_x: int, budget: NormBudget,
                   activation: Activation, seed=None, decay_s: float | None = None,
                   input_law: InputLaw | None = None, profile_exponent: float = 0.6,
                   n_ref: int = 4096) -> TeacherNetwork:
    """Random teacher satisfying the weight-row and bias caps.

    ``resolutions`` lists the hidden grid sizes ``M_2..M_L`` (``L - 1`` entries).
    Every ``Q_l`` is uniform.

    Without ``decay_s`` the rows of ``h_l`` are Gaussian, rows whose L2(Q_l)
    norm exceeds ``R`` are rescaled onto the sphere of radius ``R`` and biases
    are uniform on ``[-R_b, R_b]``.

    With ``decay_s`` the teacher is built so that every layer kernel has a
    fitted eigen-decay exponent close to ``decay_s``:

    * first-layer rows are ridge functions ``r u.x / D_x + r c`` with random
      unit directions ``u`` and offsets ``c``, sharing one slope ``r``;
    * rows of later layers are drawn in the principal coordinates of their
      input features (measured on ``n_ref`` reference inputs), coordinate
      ``j`` carrying magnitude ``j**(-profile_exponent / 2)`` with a random sign;
      hidden biases centre each unit on its reference mean;
    * the first-layer slope and the scale of each hidden-to-hidden matrix are
      tuned by root finding until the fitted exponent of the next kernel
      matches ``decay_s``.  When the budget caps the scale first, the
      reachable exponent is kept and a warning is logged.

    The realised exponents should be measured with ``spectrum.fit_decay``.
    """
    if L < 1:
        raise ValueError("L must be at least 1")
    resolutions = list(resolutions)
    if len(resolutions) != L - 1:
        raise ValueError(f"expected {L - 1} hidden resolutions, got {len(resolutions)}")
    if any(M < 1 for M in resolutions):
        raise ValueError("resolutions must be positive")
    input_law = input_law or InputLaw()
    if decay_s is not None:
        if not 0 < decay_s < 1:
            raise ValueError(f"decay_s must lie in (0, 1), got {decay_s}")
        if L >= 2:
            return _decay_controlled_teacher(L, resolutions, d_x, budget, activation, seed, decay_s,
                                             input_law, profile_exponent, n_ref)
    rng = np.random.default_rng(seed)
    sizes = [d_x] + resolutions + [1]
    hs, bs, Qs = [], [], []
    for ell in range(1, L + 1):
        m_in, m_out = sizes[ell - 1], sizes[ell]
        Q = np.full(m_in, 1.0 / m_in)
        h = rng.standard_normal((m_out, m_in)) * budget.R
        hs.append(_cap_rows(h, Q, budget.R))
        bs.append(rng.uniform(-budget.R_b, budget.R_b, size=m_out))
        Qs.append(Q)
    return TeacherNetwork(tuple(hs), tuple(bs), tuple(Qs), activation, budget, input_law, decay_s)


def _fitted_s(phi: np.ndarray, Q: np.ndarray) -> float:
    try:
        return _loglog_fit(node_spectrum(phi, Q))[1]
    except ValueError:
        return 0.0


def _tune_log_scale(s_of, target: float, lo: float, hi: float, what: str) -> float:
    """Log-scale in ``[lo, hi]`` whose fitted exponent equals ``target``, or the nearer end."""
    s_lo, s_hi = s_of(lo), s_of(hi)
    if s_hi <= target:
        if s_hi < target - 0.02:
            logger.warning("%s: exponent %.3f at the budget cap is below the target %.3f", what, s_hi, target)
        return hi
    if s_lo >= target:
        return lo
    return optimize.brentq(lambda z: s_of(z) - target, lo, hi, xtol=1e-3)


def _principal_rows(phi: np.ndarray, Q: np.ndarray, n_rows: int, exponent: float,
                    rng: np.random.Generator) -> np.ndarray:
    """Unit-L2(Q) rows whose coordinate ``j`` along the ``j``-th principal direction is ``±j^(-exponent/2)``."""
    M = Q.size
    a = phi * np.sqrt(Q / phi.shape[0])
    _, U = linalg.eigh(a.T @ a)
    psi = U[:, ::-1] / np.sqrt(Q)[:, None]          # orthonormal in L2(Q)
    mag = np.arange(1, M + 1, dtype=float) ** (-exponent / 2.0)
    mag /= np.linalg.norm(mag)
    coef = rng.choice([-1.0, 1.0], size=(n_rows, M)) * mag
    return coef @ psi.T


def _decay_controlled_teacher(L, resolutions, d_x, budget, activation, seed, decay_s,
                              input_law, profile_exponent, n_ref) -> TeacherNetwork:
    rng = np.random.default_rng(seed)
    eta = activation
    R, R_b, D_x = budget.R, budget.R_b, budget.D_x
    xs = input_law.sample(n_ref, d_x, D_x, rng)
    sizes = [d_x] + resolutions + [1]

    M = sizes[1]
    u = rng.standard_normal((M, d_x))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    offset = rng.uniform(-1.0, 1.0, size=M)
    proj = xs @ u.T / D_x
    Q2 = np.full(M, 1.0 / M)
    r_cap = R * D_x / math.sqrt(d_x)            # keeps ||h_1 row||_{L2(Q_1)} <= R

    def first(z):
        r = math.exp(z)
        return eta(r * proj + np.clip(r * offset, -R_b, R_b))

    z = _tune_log_scale(lambda z: _fitted_s(first(z), Q2), decay_s,
                        math.log(min(0.25, r_cap)), math.log(r_cap), "layer 2")
    r = math.exp(z)
    hs = [d_x * r * u / D_x]
    bs = [np.clip(r * offset, -R_b, R_b)]
    Qs = [np.full(d_x, 1.0 / d_x)]
    phi = first(z)

    for ell in range(2, L + 1):
        Q = np.full(sizes[ell - 1], 1.0 / sizes[ell - 1])
        n_out = sizes[ell]
        H = _principal_rows(phi, Q, n_out, profile_exponent, rng) * rng.uniform(0.5, 1.0, size=(n_out, 1))
        P = (phi * Q) @ H.T
        if ell < L:
            off = rng.uniform(-1.0, 1.0, size=n_out)
            centre = P.mean(axis=0)
            Qn = np.full(n_out, 1.0 / n_out)

            def hidden(z):
                k = math.exp(z)
                return eta(k * P + np.clip(off - k * centre, -R_b, R_b))

            z = _tune_log_scale(lambda z: _fitted_s(hidden(z), Qn), decay_s,
                                math.log(1e-2 * R), math.log(R), f"layer {ell + 1}")
            k = math.exp(z)
            b = np.clip(off - k * centre, -R_b, R_b)
            phi = hidden(z)
        else:
            k = R
            b = rng.uniform(-1.0, 1.0, size=n_out) * min(1.0, R_b)
        hs.append(k * H)
        bs.append(b)
        Qs.append(Q)
    return TeacherNetwork(tuple(hs), tuple(bs), tuple(Qs), activation, budget, input_law, decay_s)


@dataclass
class Dataset:
    xs: np.ndarray
    ys: np.ndarray
    sigma: float = 0.0
    seed: object = None
    input_law: InputLaw = field(default_factory=InputLaw)

    @property
    def n(self) -> int:
        return self.ys.shape[0]

    @property
    def d_x(self) -> int:
        return self.xs.shape[1]

    def save(self, csv_path, provenance: dict | None = None) -> Path:
        """Write ``x_1..x_d,y`` CSV and a JSON sidecar next to it; returns the sidecar path."""
        csv_path = Path(csv_path)
        with csv_path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"x_{k + 1}" for k in range(self.d_x)] + ["y"])
            for x, y in zip(self.xs, self.ys):
                w.writerow([repr(float(v)) for v in x] + [repr(float(y))])
        side = {"n": self.n, "sigma": self.sigma, "seed": self.seed, "input_law": self.input_law.to_dict()}
        if provenance is not None:
            side["provenance"] = provenance
        sidecar = csv_path.with_suffix(".json")
        sidecar.write_text(json.dumps(side, indent=2))
        return sidecar

    @classmethod
    def load(cls, csv_path) -> "Dataset":
        csv_path = Path(csv_path)
        rows = [r for r in csv.reader(l for l in csv_path.open() if not l.startswith("#"))]
        header, body = rows[0], np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
        if header[-1] != "y":
            raise ValueError(f"{csv_path}: last column must be 'y'")
        meta = {}
        sidecar = csv_path.with_suffix(".json")
        if sidecar.exists():
            meta = json.loads(sidecar.read_text())
        return cls(body[:, :-1], body[:, -1], float(meta.get("sigma", 0.0)), meta.get("seed"),
                   InputLaw.from_dict(meta.get("input_law", {})))


def generate_dataset(t: TeacherNetwork, n: int, sigma: float, seed=None) -> Dataset:
    """``n`` pairs ``(x_i, f(x_i) + sigma * xi_i)`` with ``x_i`` from the teacher's input law."""
    if n < 1:
        raise ValueError("n must be at least 1")
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    rng = np.random.default_rng(seed)
    xs = clip_inputs(t.sample_x(n, rng), t.budget.D_x)
    noise = rng.standard_normal(n)
    ys = t(xs) + sigma * noise
    return Dataset(xs, ys, float(sigma), seed if isinstance(seed, (int, type(None))) else None, t.input_law)
