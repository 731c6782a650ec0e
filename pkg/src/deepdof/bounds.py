"""Closed-form generalization-bound quantities and the bias-variance width planner.

Width tuples passed to these functions always list the full architecture
``(m_1, ..., m_{L+1})`` with ``m_1 = d_x`` and ``m_{L+1} = 1``.  Lambda tuples
list ``lambda_2, ..., lambda_L``.  Logarithms are natural.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

from .discretize import min_width
from .netcore import Activation, NormBudget, lip_diff_constant, sup_norm_bound
from .spectrum import dof_from_decay

REGIMES = ("tight", "loose")


def log_plus(x: float) -> float:
    """``max(1, log x)``."""
    return 1.0 if x <= math.e else math.log(x)


def _check_regime(regime: str) -> None:
    if regime not in REGIMES:
        raise ValueError(f"regime must be one of {REGIMES}, got {regime!r}")


def _check_lambdas(L: int, lambdas) -> list:
    lambdas = [float(v) for v in lambdas]
    if len(lambdas) != L - 1:
        raise ValueError(f"need {L - 1} lambdas for L={L}, got {len(lambdas)}")
    if any(not v > 0 for v in lambdas):
        raise ValueError("lambdas must be positive")
    return lambdas


def _check_widths(L: int, widths) -> list:
    widths = [int(m) for m in widths]
    if len(widths) != L + 1:
        raise ValueError(f"need L+1={L + 1} widths (m_1..m_(L+1)), got {len(widths)}")
    if any(m < 1 for m in widths):
        raise ValueError("widths must be positive")
    return widths


def _delta1_terms(budget: NormBudget, L: int, lambdas, factors) -> float:
    lambdas = _check_lambdas(L, lambdas)
    total = 0.0
    for ell, lam, fac in zip(range(2, L + 1), lambdas, factors):
        total += 2.0 * math.sqrt(fac * budget.c_hat ** (L - ell)) * budget.R ** (L - ell + 1) * math.sqrt(lam)
    return total


def delta1(budget: NormBudget, L: int, lambdas: Sequence[float]) -> float:
    """Approximation term ``sum_l 2 sqrt(c_hat^(L-l)) R^(L-l+1) sqrt(lambda_l)``."""
    return _delta1_terms(budget, L, lambdas, [1.0] * (L - 1))


def delta1_loose(budget: NormBudget, L: int, lambdas: Sequence[float], widths: Sequence[int]) -> float:
    """``delta1`` with each summand multiplied by ``sqrt(m_(l+1))``."""
    widths = _check_widths(L, widths)
    # summand l uses m_(l+1) = widths[l] (0-based), which is 1 for l = L
    return _delta1_terms(budget, L, lambdas, [float(widths[ell]) for ell in range(2, L + 1)])


def delta2(budget: NormBudget, L: int, widths: Sequence[int], n: int, sigma: float,
           g_hat: float, r_hat_inf: float) -> float:
    """Estimation term ``sqrt(S/n * log_+(1 + sqrt(n) G max(R_bar, R_b) / (min(sigma, R_inf) sqrt(S))))``.

    ``S = sum_l m_(l+1) m_l``.
    """
    widths = _check_widths(L, widths)
    if n < 1:
        raise ValueError("n must be at least 1")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    S = sum(widths[k + 1] * widths[k] for k in range(L))
    arg = 1.0 + math.sqrt(n) * g_hat * max(budget.R_bar, budget.R_b) / (min(sigma, r_hat_inf) * math.sqrt(S))
    return math.sqrt(S / n * log_plus(arg))


def covering_log(budget: NormBudget, L: int, widths: Sequence[int], g_hat: float, eps: float) -> float:
    """Log covering number ``log(1 + 2 G max(R_bar, R_b) / eps) * sum_l (m_(l+1) + 1) m_l``."""
    widths = _check_widths(L, widths)
    if not eps > 0:
        raise ValueError("eps must be positive")
    P = sum((widths[k + 1] + 1) * widths[k] for k in range(L))
    return math.log1p(2.0 * g_hat * max(budget.R_bar, budget.R_b) / eps) * P


def thm2_rhs(delta1: float, delta2: float, sigma: float, r_hat_inf: float, n: int, r: float,
             r_tilde: float = 2.0, appendix: bool = False) -> float:
    """Excess-risk bound with the universal constant set to 1.

    ``r_tilde * d1^2 + (sigma^2 + R^2) d2^2 + (sigma^2 + R^2)/n (log_+(sqrt(n)/min(1, sigma/R)) + r)``
    with ``R = r_hat_inf`` and ``r_tilde`` in (1, 2].  ``appendix=True`` uses
    ``(1 + r_tilde) d1^2`` with ``r_tilde`` in (0, 1] instead.
    """
    if not r > 0:
        raise ValueError("r must be positive")
    if n < 1:
        raise ValueError("n must be at least 1")
    if appendix:
        if not 0 < r_tilde <= 1:
            raise ValueError("appendix variant needs r_tilde in (0, 1]")
        first = (1.0 + r_tilde) * delta1 ** 2
    else:
        if not 1 < r_tilde <= 2:
            raise ValueError("r_tilde must lie in (1, 2]")
        first = r_tilde * delta1 ** 2
    var = sigma ** 2 + r_hat_inf ** 2
    ratio = sigma / r_hat_inf if r_hat_inf > 0 else math.inf
    tail = log_plus(math.sqrt(n) / min(1.0, ratio)) + r
    return first + var * delta2 ** 2 + var / n * tail


def failure_probabilities(n: int, delta1: float, r_tilde: float, r: float) -> dict:
    """Probability expressions attached to the excess-risk bound (reported, not asserted).

    ``statement`` is ``exp(-n d1^2 (r_tilde - 1)^2 / 11)``, ``appendix`` is
    ``exp(-3 n d1^2 r_tilde^2 / 32)``; both come with the ``exp(-r)`` term.
    """
    return {
        "statement": math.exp(-n * delta1 ** 2 * (r_tilde - 1.0) ** 2 / 11.0),
        "appendix": math.exp(-3.0 * n * delta1 ** 2 * r_tilde ** 2 / 32.0),
        "exp_minus_r": math.exp(-r),
    }


def optimal_lambda(regime: str, a: float, s: float, n: float) -> float:
    """Bias-variance balancing ``lambda``: tight ``a^(2s/(1+2s)) n^(-1/(1+2s))``, loose ``a^(s/(1+s)) n^(-1/(1+s))``."""
    _check_regime(regime)
    if not a > 0:
        raise ValueError("a must be positive")
    if not 0 < s < 1:
        raise ValueError(f"s must lie in (0, 1), got {s}")
    if n < 1:
        raise ValueError("n must be at least 1")
    if regime == "tight":
        return a ** (2 * s / (1 + 2 * s)) * n ** (-1.0 / (1 + 2 * s))
    return a ** (s / (1 + s)) * n ** (-1.0 / (1 + s))


def rate_exponent(regime: str, s: float) -> float:
    """Exponent of ``n`` in the squared-error rate: tight ``-1/(1+2s)``, loose ``-(1-s)/(1+s)``.

    Works on any numeric type; ``Fraction`` input gives an exact result.
    """
    _check_regime(regime)
    if not 0 < s < 1:
        raise ValueError(f"s must lie in (0, 1), got {s}")
    # integer literals keep exact types such as Fraction exact
    if regime == "tight":
        return -1 / (1 + 2 * s)
    return -(1 - s) / (1 + s)


@dataclass
class WidthPlan:
    regime: str
    lambdas: list
    widths: list
    predicted_rate_exponent: float
    a: list
    s: list
    n: int
    delta: float

    def to_dict(self) -> dict:
        return asdict(self)


def plan_widths(decays, n: int, delta: float, regime: str) -> WidthPlan:
    """Per-layer ``lambda_l`` and ``m_l`` for ``n`` samples.

    ``decays`` holds one ``(a, s)`` pair per hidden layer.  Widths are the larger
    of ``min_width(dof_from_decay(a, s, lambda), delta)`` and the regime's own
    width ``ceil(sqrt(n lambda))`` (tight) or ``ceil(n lambda)`` (loose).
    The predicted exponent is the slowest over layers.
    """
    _check_regime(regime)
    if n < 2:
        raise ValueError("n must be at least 2")
    decays = [(float(a), float(s)) for a, s in decays]
    if not decays:
        raise ValueError("need at least one hidden layer")
    lambdas, widths = [], []
    for a, s in decays:
        lam = optimal_lambda(regime, a, s, n)
        consistency = math.sqrt(n * lam) if regime == "tight" else n * lam
        # guard against ceil(4.000000000001) from round-off in n * lam
        m_reg = math.ceil(consistency - 1e-9 * max(1.0, consistency))
        m = max(min_width(dof_from_decay(a, s, lam), delta), m_reg, 1)
        lambdas.append(lam)
        widths.append(m)
    pred = max(rate_exponent(regime, s) for _, s in decays)
    return WidthPlan(regime, lambdas, widths, pred, [a for a, _ in decays], [s for _, s in decays], int(n), float(delta))


@dataclass
class BoundReport:
    delta1: float
    delta1_loose: float
    delta2: float
    g_hat: float
    r_hat_inf: float
    covering_log: list
    thm2_rhs: float
    n: int
    sigma: float
    widths: list
    lambdas: list
    budget: dict
    r: float = 1.0
    r_tilde: float = 2.0
    appendix: bool = False
    probabilities: dict = field(default_factory=dict)
    universal_constant: str = "C = 1 (bound holds up to a universal constant)"

    def to_dict(self) -> dict:
        return asdict(self)


def bound_report(budget: NormBudget, widths: Sequence[int], lambdas: Sequence[float], n: int,
                 sigma: float, activation: Activation, eps_grid: Sequence[float] = (1.0, 0.1, 0.01),
                 r: float = 1.0, r_tilde: float = 2.0, appendix: bool = False) -> BoundReport:
    """Every bound quantity for one architecture and sample size."""
    widths = [int(m) for m in widths]
    L = len(widths) - 1
    g_hat = lip_diff_constant(budget, L, activation)
    r_inf = sup_norm_bound(budget, L, activation)[1]
    d1 = delta1(budget, L, lambdas)
    d1l = delta1_loose(budget, L, lambdas, widths)
    d2 = delta2(budget, L, widths, n, sigma, g_hat, r_inf)
    cov = [(float(e), covering_log(budget, L, widths, g_hat, e)) for e in eps_grid]
    rhs = thm2_rhs(d1, d2, sigma, r_inf, n, r, r_tilde, appendix)
    probs = failure_probabilities(n, d1, r_tilde, r)
    return BoundReport(d1, d1l, d2, g_hat, r_inf, cov, rhs, int(n), float(sigma), widths,
                       [float(v) for v in lambdas], budget.to_dict(), r, r_tilde, appendix, probs)
